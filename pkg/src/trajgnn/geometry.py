"""Target-centric coordinate transforms, map cropping and windowing.

All trajectories run at 10 Hz (100 ms frames). A prediction sample is
expressed in the *target frame*: origin at the target vehicle's current
position, x-axis along its current heading. Velocities are rotated into
that frame together with positions so a rigidly moved scene produces an
identical sample.

State arrays use the fixed column order (x, y, vx, vy, psi).

Preprocessed samples persist as one directory per split: a plain-text
``manifest.txt`` plus one binary record per sample. Record layout
(little-endian):

    magic   b"TGS1"
    u32     scene_id, target_id, start_frame
    u16     n_vehicles, t_h, t_f, dims
    f32[3]  target pose (x, y, psi) in world coordinates
    f32     histories  [n_vehicles, t_h, dims], target first, C order
    f32     future     [t_f, 2]
    u8      raster     [160, 160] row-major, value*255

"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError, ShapeError

FRAME_DT = 0.1  # seconds between frames (10 Hz)
RASTER_SIZE = 160
RASTER_RES = 0.25  # meters per pixel -> 40 m x 40 m crop
RASTER_HALF_EXTENT = RASTER_SIZE * RASTER_RES / 2.0
NEIGHBOR_RADIUS = 20.0  # meters, inclusive

STATE_FIELDS = ("x", "y", "vx", "vy", "psi")

_RECORD_MAGIC = b"TGS1"


def wrap_angle(a):
    """Wrap radians into (-pi, pi]."""
    a = np.asarray(a, dtype=np.float64)
    wrapped = -((-a + np.pi) % (2.0 * np.pi) - np.pi)
    return wrapped if wrapped.ndim else float(wrapped)


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    vx: float
    vy: float
    psi: float

    def __post_init__(self):
        vals = (self.x, self.y, self.vx, self.vy, self.psi)
        if not all(np.isfinite(vals)):
            raise ContractError(f"non-finite vehicle state {vals}")
        if not -np.pi < self.psi <= np.pi + 1e-12:
            raise ContractError(f"psi {self.psi} outside (-pi, pi]")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.vx, self.vy, self.psi])


@dataclass
class TrackSegment:
    """One vehicle's state sequence at 10 Hz starting at ``first_frame``."""

    vehicle_id: int
    first_frame: int
    states: np.ndarray  # [T, 5]

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 2 or self.states.shape[1] != 5 or len(self.states) < 1:
            raise ShapeError(f"track states must be [T,5], got {self.states.shape}")
        if not np.all(np.isfinite(self.states)):
            raise ContractError(f"track {self.vehicle_id} has non-finite states")

    @property
    def last_frame(self) -> int:
        return self.first_frame + len(self.states) - 1

    def covers(self, start: int, stop: int) -> bool:
        """True when every frame in [start, stop] is recorded."""
        return self.first_frame <= start and stop <= self.last_frame

    def window(self, start: int, stop: int) -> np.ndarray:
        i = start - self.first_frame
        return self.states[i : i + (stop - start) + 1]

    def state_at(self, frame: int) -> np.ndarray:
        return self.states[frame - self.first_frame]


@dataclass
class MapRaster:
    """160x160 grayscale crop centered on the target, heading-aligned.

    Cell (row, col) is centered at target-frame coordinates
    x = (col+0.5)*res - 20 (forward) and y = 20 - (row+0.5)*res (left),
    i.e. the target looks toward increasing columns.
    """

    grid: np.ndarray
    center: tuple[float, float]
    orientation: float
    meters_per_pixel: float = RASTER_RES

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.grid.shape != (RASTER_SIZE, RASTER_SIZE):
            raise ShapeError(f"raster must be 160x160, got {self.grid.shape}")
        if self.grid.min() < 0.0 or self.grid.max() > 1.0:
            raise ContractError("raster values must lie in [0,1]")


@dataclass
class Sample:
    """Model input/target pair, already in the target frame.

    ``histories`` is [N, T_h, dims] with the target at index 0 and its
    final position pinned at the origin; ``future`` is the target's
    ground-truth [T_f, 2]. ``pose`` keeps the world-frame anchor so
    predictions can be mapped back.
    """

    histories: np.ndarray
    raster: MapRaster
    future: np.ndarray
    scene_id: int
    pose: tuple[float, float, float] = (0.0, 0.0, 0.0)
    target_id: int = 0
    start_frame: int = 0

    def __post_init__(self):
        self.histories = np.asarray(self.histories, dtype=np.float64)
        self.future = np.asarray(self.future, dtype=np.float64)
        if self.histories.ndim != 3 or self.histories.shape[0] < 1:
            raise ShapeError(f"histories must be [N,T_h,dims], got {self.histories.shape}")
        if self.future.ndim != 2 or self.future.shape[1] != 2:
            raise ShapeError(f"future must be [T_f,2], got {self.future.shape}")
        if not (np.all(np.isfinite(self.histories)) and np.all(np.isfinite(self.future))):
            raise ContractError("sample contains non-finite values")
        last = self.histories[0, -1]
        if np.abs(last[:2]).max() > 1e-6:
            raise ContractError(f"target's last position {last[:2]} is not the origin")
        if self.dims == 5 and abs(wrap_angle(last[4])) > 1e-6:
            raise ContractError(f"target's last yaw {last[4]} is not zero")

    @property
    def n_vehicles(self) -> int:
        return self.histories.shape[0]

    @property
    def t_h(self) -> int:
        return self.histories.shape[1]

    @property
    def t_f(self) -> int:
        return self.future.shape[0]

    @property
    def dims(self) -> int:
        return self.histories.shape[2]


# -- frame transforms ---------------------------------------------------------


def _rotation(psi: float) -> np.ndarray:
    c, s = np.cos(psi), np.sin(psi)
    return np.array([[c, -s], [s, c]])


def to_target_frame(states: np.ndarray, pose) -> np.ndarray:
    """Express world-frame states relative to pose (x0, y0, psi0).

    Positions are translated then rotated by -psi0; velocity vectors are
    rotated; yaw angles are shifted and re-wrapped. Works on [..., d]
    arrays with d in {2, 4, 5}.
    """
    x0, y0, psi0 = pose
    states = np.asarray(states, dtype=np.float64)
    d = states.shape[-1]
    if d not in (2, 4, 5):
        raise ShapeError(f"state arrays need 2, 4 or 5 columns, got {d}")
    rot = _rotation(-psi0)
    out = states.copy()
    out[..., :2] = (states[..., :2] - (x0, y0)) @ rot.T
    if d >= 4:
        out[..., 2:4] = states[..., 2:4] @ rot.T
    if d == 5:
        out[..., 4] = wrap_angle(states[..., 4] - psi0)
    return out


def from_target_frame(states: np.ndarray, pose) -> np.ndarray:
    """Inverse of :func:`to_target_frame`."""
    x0, y0, psi0 = pose
    states = np.asarray(states, dtype=np.float64)
    d = states.shape[-1]
    if d not in (2, 4, 5):
        raise ShapeError(f"state arrays need 2, 4 or 5 columns, got {d}")
    rot = _rotation(psi0)
    out = states.copy()
    out[..., :2] = states[..., :2] @ rot.T + (x0, y0)
    if d >= 4:
        out[..., 2:4] = states[..., 2:4] @ rot.T
    if d == 5:
        out[..., 4] = wrap_angle(states[..., 4] + psi0)
    return out


def slice_state(states: np.ndarray, dims: int) -> np.ndarray:
    """Keep (x,y) / (x,y,vx,vy) / all five state fields."""
    if dims not in (2, 4, 5):
        raise ContractError(f"dims must be 2, 4 or 5, got {dims}")
    return np.asarray(states)[..., :dims]


# -- map sources and cropping ---------------------------------------------------


@dataclass
class WorldRaster:
    """Axis-aligned world-frame grid; row 0 at the minimum y edge.

    ``grid[row, col]`` covers x in [x0+col*res, +res) and y likewise.
    """

    grid: np.ndarray
    origin: tuple[float, float]
    resolution: float

    def sample(self, points: np.ndarray) -> np.ndarray:
        """Nearest-cell lookup; points outside the extent read 0."""
        pts = np.asarray(points, dtype=np.float64)
        cols = np.floor((pts[..., 0] - self.origin[0]) / self.resolution).astype(int)
        rows = np.floor((pts[..., 1] - self.origin[1]) / self.resolution).astype(int)
        h, w = self.grid.shape
        inside = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
        out = np.zeros(pts.shape[:-1])
        out[inside] = self.grid[rows[inside], cols[inside]]
        return out


def raster_cell_centers() -> np.ndarray:
    """Target-frame centers of all raster cells, shape [160, 160, 2]."""
    idx = (np.arange(RASTER_SIZE) + 0.5) * RASTER_RES
    xf = idx - RASTER_HALF_EXTENT           # per column
    yf = RASTER_HALF_EXTENT - idx           # per row
    gx = np.broadcast_to(xf[None, :], (RASTER_SIZE, RASTER_SIZE))
    gy = np.broadcast_to(yf[:, None], (RASTER_SIZE, RASTER_SIZE))
    return np.stack([gx, gy], axis=-1)


def crop_map(source, pose) -> MapRaster:
    """Sample a 40 m heading-aligned square around the target pose.

    ``source`` is anything with ``sample(points[...,2]) -> values`` —
    a WorldRaster or an analytic map. Out-of-extent cells read 0.
    """
    x0, y0, psi0 = pose
    centers = raster_cell_centers().reshape(-1, 2)
    world = centers @ _rotation(psi0).T + (x0, y0)
    values = np.clip(source.sample(world), 0.0, 1.0)
    return MapRaster(
        grid=values.reshape(RASTER_SIZE, RASTER_SIZE),
        center=(float(x0), float(y0)),
        orientation=float(psi0),
    )


# -- windowing ----------------------------------------------------------------


@dataclass(frozen=True)
class Window:
    """A candidate sample: target track id and the window's first frame."""

    target_id: int
    start_frame: int


def segment_tracks(tracks, t_h: int, t_f: int, stride: int) -> list[Window]:
    """Sliding windows of t_h+t_f frames over each candidate target track.

    A window is kept only when the target covers it fully; stepping is
    per-track, anchored at the track's first frame.
    """
    if min(t_h, t_f, stride) < 1:
        raise ContractError("t_h, t_f and stride must all be >= 1")
    span = t_h + t_f
    windows = []
    for track in sorted(tracks, key=lambda t: t.vehicle_id):
        start = track.first_frame
        while start + span - 1 <= track.last_frame:
            windows.append(Window(track.vehicle_id, start))
            start += stride
    return windows


def select_neighbors(tracks, target_id: int, frame: int) -> list[int]:
    """Vehicle ids within 20 m (inclusive) of the target at ``frame``.

    The target itself is excluded; order is ascending id.
    """
    by_id = {t.vehicle_id: t for t in tracks}
    target = by_id.get(target_id)
    if target is None or not target.covers(frame, frame):
        raise ContractError(f"target {target_id} absent at frame {frame}")
    pos = target.state_at(frame)[:2]
    out = []
    for vid in sorted(by_id):
        if vid == target_id:
            continue
        t = by_id[vid]
        if not t.covers(frame, frame):
            continue
        if np.hypot(*(t.state_at(frame)[:2] - pos)) <= NEIGHBOR_RADIUS:
            out.append(vid)
    return out


def build_sample(tracks, window: Window, map_source, t_h: int, t_f: int,
                 dims: int, scene_id: int = 0) -> Sample:
    """Assemble one target-frame Sample for a window.

    Neighbors are vehicles within 20 m at the current frame that carry a
    full t_h history inside the window; those without are dropped.
    """
    by_id = {t.vehicle_id: t for t in tracks}
    target = by_id[window.target_id]
    now = window.start_frame + t_h - 1
    pose = tuple(target.state_at(now)[[0, 1, 4]])

    hists = [target.window(window.start_frame, now)]
    for vid in select_neighbors(tracks, window.target_id, now):
        nbr = by_id[vid]
        if nbr.covers(window.start_frame, now):
            hists.append(nbr.window(window.start_frame, now))
    histories = to_target_frame(np.stack(hists), pose)

    future_world = target.window(now + 1, now + t_f)[:, :2]
    future = to_target_frame(future_world, pose)

    return Sample(
        histories=slice_state(histories, dims),
        raster=crop_map(map_source, pose),
        future=future,
        scene_id=scene_id,
        pose=(float(pose[0]), float(pose[1]), float(pose[2])),
        target_id=window.target_id,
        start_frame=window.start_frame,
    )


def adapt_sample(sample: Sample, t_h: int, t_f: int, dims: int) -> Sample:
    """Shrink a sample to a smaller horizon/state slice.

    Takes the history suffix (same current time), the future prefix and
    the leading state columns. The neighbor set stays as preprocessed,
    so adapting is only exactly equivalent to re-preprocessing when all
    neighbors cover the longer history too.
    """
    if t_h > sample.t_h or t_f > sample.t_f or dims > sample.dims:
        raise ContractError(
            f"cannot grow sample: have (t_h={sample.t_h}, t_f={sample.t_f}, "
            f"dims={sample.dims}), asked ({t_h}, {t_f}, {dims})"
        )
    if (t_h, t_f, dims) == (sample.t_h, sample.t_f, sample.dims):
        return sample
    return Sample(
        histories=sample.histories[:, sample.t_h - t_h :, :dims],
        raster=sample.raster,
        future=sample.future[:t_f],
        scene_id=sample.scene_id,
        pose=sample.pose,
        target_id=sample.target_id,
        start_frame=sample.start_frame,
    )


def adapt_samples(samples, t_h: int, t_f: int, dims: int) -> list[Sample]:
    return [adapt_sample(s, t_h, t_f, dims) for s in samples]


# -- sample persistence -----------------------------------------------------------


def save_samples(directory, samples) -> Path:
    """Write records plus manifest.txt; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, s in enumerate(samples):
        name = f"sample_{i:06d}.bin"
        with open(directory / name, "wb") as fh:
            fh.write(_RECORD_MAGIC)
            fh.write(struct.pack("<III", s.scene_id, s.target_id, s.start_frame))
            fh.write(struct.pack("<HHHH", s.n_vehicles, s.t_h, s.t_f, s.dims))
            fh.write(np.asarray(s.pose, dtype="<f4").tobytes())
            fh.write(s.histories.astype("<f4").tobytes())
            fh.write(s.future.astype("<f4").tobytes())
            fh.write(np.round(s.raster.grid * 255).astype(np.uint8).tobytes())
        lines.append(f"{name} {s.scene_id} {s.target_id} {s.start_frame}")
    manifest = directory / "manifest.txt"
    header = f"count={len(lines)}"
    manifest.write_text("\n".join([header] + lines) + "\n")
    return manifest


def load_samples(directory) -> list[Sample]:
    """Read every sample listed by the directory's manifest."""
    directory = Path(directory)
    manifest = directory / "manifest.txt"
    if not manifest.exists():
        raise ParseError(f"no manifest.txt in {directory}")
    lines = manifest.read_text().strip().splitlines()
    if not lines or not lines[0].startswith("count="):
        raise ParseError(f"malformed manifest header in {manifest}")
    samples = []
    for line in lines[1:]:
        name = line.split()[0]
        samples.append(_read_record(directory / name))
    return samples


def _read_record(path: Path) -> Sample:
    raw = Path(path).read_bytes()
    if raw[:4] != _RECORD_MAGIC:
        raise ParseError(f"{path} is not a sample record")
    scene_id, target_id, start_frame = struct.unpack_from("<III", raw, 4)
    n_veh, t_h, t_f, dims = struct.unpack_from("<HHHH", raw, 16)
    off = 24
    pose = np.frombuffer(raw, "<f4", 3, off)
    off += 12
    n_hist = n_veh * t_h * dims
    histories = np.frombuffer(raw, "<f4", n_hist, off).reshape(n_veh, t_h, dims)
    off += 4 * n_hist
    future = np.frombuffer(raw, "<f4", t_f * 2, off).reshape(t_f, 2)
    off += 8 * t_f
    grid = np.frombuffer(raw, np.uint8, RASTER_SIZE * RASTER_SIZE, off)
    grid = grid.reshape(RASTER_SIZE, RASTER_SIZE) / 255.0
    pose_t = (float(pose[0]), float(pose[1]), float(pose[2]))
    return Sample(
        histories=histories,
        raster=MapRaster(grid=grid, center=pose_t[:2], orientation=pose_t[2]),
        future=future,
        scene_id=scene_id,
        pose=pose_t,
        target_id=target_id,
        start_frame=start_frame,
    )
