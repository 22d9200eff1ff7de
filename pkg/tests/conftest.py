import numpy as np
import pytest

from trajgnn.data import SyntheticSceneSpec, generate_scene
from trajgnn.geometry import build_sample, segment_tracks


def synth_samples(n_scenes=4, kind="intersection", t_h=5, t_f=4, dims=4,
                  stride=20, seed0=0, n_neighbors=1, max_per_scene=None,
                  speed_range=None, duration_s=10.0):
    """Samples produced by the real generate -> window -> build pipeline."""
    samples = []
    for i in range(n_scenes):
        spec = SyntheticSceneSpec(
            kind=kind, seed=seed0 + i, case_id=i, n_neighbors=n_neighbors,
            speed_range=speed_range, duration_s=duration_s,
        )
        scene = generate_scene(spec)
        windows = segment_tracks(scene.tracks, t_h, t_f, stride)
        if max_per_scene is not None:
            windows = windows[:max_per_scene]
        for w in windows:
            samples.append(build_sample(
                scene.tracks, w, scene.drivable, t_h, t_f, dims, scene_id=i
            ))
    return samples


@pytest.fixture(scope="session")
def small_dataset():
    return synth_samples(n_scenes=4, t_h=5, t_f=4, max_per_scene=3)
