"""Track-file ingestion, synthetic scenario generation and dataset splits.

Track files are comma-separated with a header row naming at least the
required fields of :class:`TrackFileRow` (extra columns are ignored).
One file may hold several cases; each (case_id, track_id) pair is one
vehicle track sampled every 100 ms.

The synthetic generator stands in for recorded drone data at desk
scale: straight roads, yield-or-go intersection crossings, and
constant-curvature arcs, each with an analytic drivable-area map that
can be rasterized to an 8-bit binary portable-graymap (plus a small
JSON sidecar carrying the world origin and resolution).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError, SchemaError
from .geometry import FRAME_DT, TrackSegment, WorldRaster, wrap_angle

REQUIRED_COLUMNS = (
    "case_id", "track_id", "frame_id", "timestamp_ms", "agent_type",
    "x", "y", "vx", "vy", "psi_rad", "length", "width",
)

_INT_COLUMNS = {"case_id", "track_id", "frame_id", "timestamp_ms"}


@dataclass
class TrackFileRow:
    case_id: int
    track_id: int
    frame_id: int
    timestamp_ms: int
    agent_type: str
    x: float
    y: float
    vx: float
    vy: float
    psi_rad: float
    length: float
    width: float


def parse_track_file(path) -> list[TrackFileRow]:
    """Typed rows from a comma-separated track file.

    Raises SchemaError when a required column is missing and ParseError
    (with the 1-based line number) on non-numeric or NaN cells.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        header_line = fh.readline()
        if not header_line:
            raise SchemaError(f"{path} is empty")
        header = [h.strip() for h in header_line.rstrip("\n").split(",")]
        for col in REQUIRED_COLUMNS:
            if col not in header:
                raise SchemaError(f"{path} is missing required column {col!r}")
        index = {col: header.index(col) for col in REQUIRED_COLUMNS}
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            vals = {}
            for col in REQUIRED_COLUMNS:
                cell = cells[index[col]].strip()
                if col == "agent_type":
                    vals[col] = cell
                    continue
                try:
                    num = int(cell) if col in _INT_COLUMNS else float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}:{lineno}: column {col!r} has non-numeric "
                        f"value {cell!r}"
                    ) from None
                if col not in _INT_COLUMNS and math.isnan(num):
                    raise ParseError(f"{path}:{lineno}: column {col!r} is NaN")
                vals[col] = num
            rows.append(TrackFileRow(**vals))
    return rows


def write_track_file(path, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(REQUIRED_COLUMNS) + "\n")
        for r in rows:
            fh.write(
                f"{r.case_id},{r.track_id},{r.frame_id},{r.timestamp_ms},"
                f"{r.agent_type},{r.x!r},{r.y!r},{r.vx!r},{r.vy!r},"
                f"{r.psi_rad!r},{r.length!r},{r.width!r}\n"
            )


def tracks_from_rows(rows) -> dict[int, list[TrackSegment]]:
    """Group rows into 10 Hz TrackSegments, keyed by case id."""
    grouped: dict[tuple[int, int], list[TrackFileRow]] = {}
    for r in rows:
        grouped.setdefault((r.case_id, r.track_id), []).append(r)
    cases: dict[int, list[TrackSegment]] = {}
    for (case_id, track_id), rs in sorted(grouped.items()):
        rs.sort(key=lambda r: r.frame_id)
        frames = [r.frame_id for r in rs]
        stamps = [r.timestamp_ms for r in rs]
        for a, b, ta, tb in zip(frames, frames[1:], stamps, stamps[1:]):
            if b - a != 1 or tb - ta != 100:
                raise ContractError(
                    f"track {track_id} in case {case_id} is not contiguous "
                    f"at frame {a}->{b} ({ta}->{tb} ms)"
                )
        states = np.array([[r.x, r.y, r.vx, r.vy, r.psi_rad] for r in rs])
        cases.setdefault(case_id, []).append(
            TrackSegment(track_id, frames[0], states)
        )
    return cases


def rows_from_tracks(case_id: int, tracks) -> list[TrackFileRow]:
    rows = []
    for t in sorted(tracks, key=lambda t: t.vehicle_id):
        for i, s in enumerate(t.states):
            frame = t.first_frame + i
            rows.append(TrackFileRow(
                case_id=case_id, track_id=t.vehicle_id, frame_id=frame,
                timestamp_ms=frame * 100, agent_type="car",
                x=float(s[0]), y=float(s[1]), vx=float(s[2]), vy=float(s[3]),
                psi_rad=float(s[4]), length=4.5, width=1.8,
            ))
    return rows


# -- analytic drivable-area maps -----------------------------------------------


@dataclass
class DrivableMap:
    """Union of oriented road bands and annular rings; samples to {0,1}.

    A band is (cx, cy, theta, half_len, half_width); an annulus is
    (cx, cy, r_inner, r_outer).
    """

    bands: list[tuple[float, float, float, float, float]] = field(default_factory=list)
    annuli: list[tuple[float, float, float, float]] = field(default_factory=list)

    def sample(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        hit = np.zeros(pts.shape[:-1], dtype=bool)
        for cx, cy, theta, half_len, half_w in self.bands:
            rel = pts - (cx, cy)
            lon = rel[..., 0] * np.cos(theta) + rel[..., 1] * np.sin(theta)
            lat = -rel[..., 0] * np.sin(theta) + rel[..., 1] * np.cos(theta)
            hit |= (np.abs(lon) <= half_len) & (np.abs(lat) <= half_w)
        for cx, cy, r_in, r_out in self.annuli:
            r = np.hypot(pts[..., 0] - cx, pts[..., 1] - cy)
            hit |= (r >= r_in) & (r <= r_out)
        return hit.astype(np.float64)

    def transformed(self, rotation: float, translation=(0.0, 0.0)) -> "DrivableMap":
        """The map after rotating the whole world, for invariance checks."""
        c, s = np.cos(rotation), np.sin(rotation)
        tx, ty = translation

        def rot(x, y):
            return c * x - s * y + tx, s * x + c * y + ty

        bands = [
            (*rot(cx, cy), wrap_angle(theta + rotation), hl, hw)
            for cx, cy, theta, hl, hw in self.bands
        ]
        annuli = [(*rot(cx, cy), r_in, r_out) for cx, cy, r_in, r_out in self.annuli]
        return DrivableMap(bands=bands, annuli=annuli)

    def rasterize(self, bounds, resolution: float = 0.25) -> WorldRaster:
        """Sample cell centers over bounds = (xmin, ymin, xmax, ymax)."""
        xmin, ymin, xmax, ymax = bounds
        w = int(np.ceil((xmax - xmin) / resolution))
        h = int(np.ceil((ymax - ymin) / resolution))
        xs = xmin + (np.arange(w) + 0.5) * resolution
        ys = ymin + (np.arange(h) + 0.5) * resolution
        gx, gy = np.meshgrid(xs, ys)
        grid = self.sample(np.stack([gx, gy], axis=-1))
        return WorldRaster(grid=grid, origin=(xmin, ymin), resolution=resolution)


# -- PGM I/O -----------------------------------------------------------------------


def write_pgm(path, raster: WorldRaster) -> None:
    """Binary P5 graymap (rows written north-up) plus a JSON sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid = np.clip(np.round(raster.grid * 255), 0, 255).astype(np.uint8)
    h, w = grid.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(grid[::-1].tobytes())  # row 0 of the file is the max-y edge
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps({
        "origin_x": raster.origin[0],
        "origin_y": raster.origin[1],
        "resolution": raster.resolution,
    }))


def read_pgm(path) -> WorldRaster:
    path = Path(path)
    raw = path.read_bytes()
    if not raw.startswith(b"P5"):
        raise ParseError(f"{path} is not a binary P5 graymap")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    grid = np.frombuffer(raw, np.uint8, w * h, pos).reshape(h, w)[::-1]
    sidecar = path.with_suffix(".json")
    if not sidecar.exists():
        raise SchemaError(f"map sidecar {sidecar} not found")
    meta = json.loads(sidecar.read_text())
    return WorldRaster(
        grid=grid.astype(np.float64) / maxval,
        origin=(meta["origin_x"], meta["origin_y"]),
        resolution=meta["resolution"],
    )


# -- synthetic scenes ----------------------------------------------------------------


SCENARIO_KINDS = ("straight", "intersection", "roundabout-arc")


@dataclass
class SyntheticSceneSpec:
    kind: str = "intersection"
    n_neighbors: int = 1
    noise: float = 0.0
    seed: int = 0
    duration_s: float = 10.0
    case_id: int = 0
    speed_range: tuple[float, float] | None = None  # None: per-kind default

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ContractError(f"unknown scenario kind {self.kind!r}")
        if self.n_neighbors < 0:
            raise ContractError("n_neighbors must be >= 0")
        if self.speed_range is not None:
            lo, hi = self.speed_range
            if not 0 < lo <= hi:
                raise ContractError(f"bad speed range {self.speed_range}")

    def speeds(self, default_lo: float, default_hi: float) -> tuple[float, float]:
        return self.speed_range if self.speed_range else (default_lo, default_hi)


@dataclass
class Scene:
    case_id: int
    tracks: list[TrackSegment]
    drivable: DrivableMap
    bounds: tuple[float, float, float, float]

    def world_raster(self, resolution: float = 0.25) -> WorldRaster:
        return self.drivable.rasterize(self.bounds, resolution)


def _track_from_positions(vid: int, pos: np.ndarray, noise: float,
                          rng: np.random.Generator) -> TrackSegment:
    """States with velocities as forward position differences.

    The last frame repeats the previous velocity; yaw follows the
    velocity direction while speed exceeds 0.1 m/s.
    """
    if noise > 0:
        pos = pos + rng.normal(scale=noise, size=pos.shape)
    vel = np.empty_like(pos)
    vel[:-1] = (pos[1:] - pos[:-1]) / FRAME_DT
    vel[-1] = vel[-2]
    speed = np.hypot(vel[:, 0], vel[:, 1])
    psi = np.zeros(len(pos))
    current = 0.0
    for i in range(len(pos)):
        if speed[i] > 0.1:
            current = np.arctan2(vel[i, 1], vel[i, 0])
        psi[i] = current
    states = np.column_stack([pos, vel, psi])
    return TrackSegment(vid, 0, states)


def _ramp_speeds(n: int, v: float, brake_at: float, brake_dur: float,
                 wait_dur: float, accel_dur: float) -> np.ndarray:
    """Per-frame speed for a yield-then-go profile (constant before braking)."""
    t = np.arange(n) * FRAME_DT
    speeds = np.full(n, v)
    t0 = brake_at
    t1 = t0 + brake_dur
    t2 = t1 + wait_dur
    t3 = t2 + accel_dur
    braking = (t >= t0) & (t < t1)
    speeds[braking] = v * (1 - (t[braking] - t0) / brake_dur)
    speeds[(t >= t1) & (t < t2)] = 0.0
    accel = (t >= t2) & (t < t3)
    speeds[accel] = v * (t[accel] - t2) / accel_dur
    return speeds


def _integrate(start: np.ndarray, direction: np.ndarray,
               speeds: np.ndarray) -> np.ndarray:
    s = np.concatenate([[0.0], np.cumsum(speeds[:-1]) * FRAME_DT])
    return start + np.outer(s, direction)


def generate_scene(spec: SyntheticSceneSpec) -> Scene:
    """Deterministic synthetic scene: tracks plus an analytic road map."""
    rng = np.random.default_rng(np.random.PCG64(spec.seed))
    n = int(round(spec.duration_s / FRAME_DT))
    builders = {
        "straight": _straight_scene,
        "intersection": _intersection_scene,
        "roundabout-arc": _roundabout_scene,
    }
    tracks, drivable = builders[spec.kind](spec, rng, n)
    xy = np.concatenate([t.states[:, :2] for t in tracks])
    margin = 30.0
    bounds = (
        float(xy[:, 0].min() - margin), float(xy[:, 1].min() - margin),
        float(xy[:, 0].max() + margin), float(xy[:, 1].max() + margin),
    )
    return Scene(spec.case_id, tracks, drivable, bounds)


def _straight_scene(spec, rng, n):
    theta = rng.uniform(-np.pi, np.pi)
    u = np.array([np.cos(theta), np.sin(theta)])
    left = np.array([-u[1], u[0]])
    anchor = rng.uniform(-15, 15, size=2)
    v = rng.uniform(*spec.speeds(3.0, 9.0))
    tracks = [_track_from_positions(
        1, _integrate(anchor, u, np.full(n, v)), spec.noise, rng
    )]
    for k in range(spec.n_neighbors):
        lane = rng.choice([-3.5, 3.5])
        gap = rng.uniform(-15, 15)
        vn = rng.uniform(*spec.speeds(3.0, 9.0))
        start = anchor + lane * left + gap * u
        tracks.append(_track_from_positions(
            2 + k, _integrate(start, u, np.full(n, vn)), spec.noise, rng
        ))
    length = 9.0 * spec.duration_s + 60.0
    road = DrivableMap(bands=[(
        float(anchor[0] + u[0] * length / 4), float(anchor[1] + u[1] * length / 4),
        float(theta), length / 2, 7.0,
    )])
    return tracks, road


def _intersection_scene(spec, rng, n):
    """Yield-or-go crossing: the target brakes only when the crossing
    vehicle will occupy the conflict point around the target's arrival,
    and pulls away once the crosser has cleared it."""
    theta = rng.uniform(-np.pi, np.pi)
    u = np.array([np.cos(theta), np.sin(theta)])
    w = np.array([-u[1], u[0]])  # crossing road direction
    center = rng.uniform(-10, 10, size=2)
    v_t = rng.uniform(*spec.speeds(4.0, 8.0))
    duration = n * FRAME_DT
    t_dec = duration * rng.uniform(0.22, 0.35)
    # target starts so it is 6 m short of the center at decision time
    start_t = center - u * (6.0 + v_t * t_dec)
    yields = bool(rng.random() < 0.5)
    v_n = rng.uniform(*spec.speeds(4.0, 8.0))
    if yields:
        # conflicting arrival: close enough to sit inside the 20 m
        # neighbor radius while the target decides
        t_cross = t_dec + rng.uniform(0.6, 1.6)
    else:
        t_cross = t_dec - rng.uniform(2.5, 4.0)
    if yields:
        brake_dur = 1.0
        t_clear = t_cross + 5.0 / v_n  # crosser 5 m past the conflict point
        wait = max(0.0, t_clear - (t_dec + brake_dur))
        speeds = _ramp_speeds(
            n, v_t, brake_at=t_dec, brake_dur=brake_dur,
            wait_dur=wait, accel_dur=1.5,
        )
    else:
        speeds = np.full(n, v_t)
    tracks = [_track_from_positions(1, _integrate(start_t, u, speeds), spec.noise, rng)]
    sign = rng.choice([-1.0, 1.0])
    start_n = center - sign * w * (v_n * t_cross)
    tracks.append(_track_from_positions(
        2, _integrate(start_n, sign * w, np.full(n, v_n)), spec.noise, rng
    ))
    for k in range(max(0, spec.n_neighbors - 1)):
        gap = rng.uniform(14.0, 22.0)
        vk = rng.uniform(3.0, 6.0)
        tracks.append(_track_from_positions(
            3 + k, _integrate(start_t - u * gap, u, np.full(n, vk)),
            spec.noise, rng,
        ))
    arm = 9.0 * spec.duration_s + 60.0
    road = DrivableMap(bands=[
        (float(center[0]), float(center[1]), float(theta), arm / 2, 5.0),
        (float(center[0]), float(center[1]), float(wrap_angle(theta + np.pi / 2)),
         arm / 2, 5.0),
    ])
    return tracks, road


def _roundabout_scene(spec, rng, n):
    center = rng.uniform(-10, 10, size=2)
    radius = rng.uniform(15.0, 25.0)
    v = rng.uniform(*spec.speeds(4.0, 8.0))
    omega = v / radius
    phase = rng.uniform(-np.pi, np.pi)
    t = np.arange(n) * FRAME_DT
    tracks = []

    def arc(vid, r, ph, direction=1.0):
        ang = ph + direction * omega * t
        pos = center + r * np.column_stack([np.cos(ang), np.sin(ang)])
        return _track_from_positions(vid, pos, spec.noise, rng)

    tracks.append(arc(1, radius, phase))
    for k in range(spec.n_neighbors):
        dr = rng.choice([-3.5, 0.0, 3.5])
        dphi = rng.uniform(0.25, 0.9) * rng.choice([-1.0, 1.0])
        tracks.append(arc(2 + k, radius + dr, phase + dphi))
    road = DrivableMap(annuli=[(
        float(center[0]), float(center[1]), radius - 6.0, radius + 6.0
    )])
    return tracks, road


# -- splits ------------------------------------------------------------------------


def split_dataset(samples, ratio: float, seed: int = 0):
    """Scene-disjoint (train, val) partition; both sides non-empty."""
    if not 0.0 < ratio < 1.0:
        raise ContractError(f"split ratio must be in (0,1), got {ratio}")
    scene_ids = sorted({s.scene_id for s in samples})
    if len(scene_ids) < 2:
        raise ContractError(
            f"need at least 2 scenes to split, got {len(scene_ids)}"
        )
    rng = np.random.default_rng(np.random.PCG64(seed))
    order = [scene_ids[i] for i in rng.permutation(len(scene_ids))]
    n_train = int(round(ratio * len(order)))
    n_train = min(max(n_train, 1), len(order) - 1)
    train_ids = set(order[:n_train])
    train = [s for s in samples if s.scene_id in train_ids]
    val = [s for s in samples if s.scene_id not in train_ids]
    return train, val
