"""Synthetic data generation: powder beds, process conditions, sintering.

Powder beds come from a ballistic "rain" of circular particles: each disk
falls straight down at a random x until it touches the floor or existing
solid, with no rolling or settling afterwards. Process conditions (laser
power, scan speed) are sampled by Latin Hypercube over the machine's
operating ranges. Ground-truth evolution comes from a deterministic
sintering transform with depth-limited, condition-monotone kinetics: a
weighted box-blur relaxation whose reach and iteration count grow with
power and shrink with speed. It is a stand-in for a physics solver, built
so that its condition response is qualitatively right and exactly
reproducible.

Datasets live on disk as PGM pairs with a two-line text sidecar:
`pair_000042_in.pgm`, `pair_000042_out.pgm`, `pair_000042_cond.txt`
(lines `power=<decimal>` and `speed=<decimal>`).
"""

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter

from .pgm import read_pgm, write_pgm
from .seeding import substream

POWER_RANGE = (25.0, 40.0)   # W
SPEED_RANGE = (0.5, 2.5)     # m/s

__all__ = [
    "POWER_RANGE",
    "SPEED_RANGE",
    "Condition",
    "SamplePair",
    "PowderBedSpec",
    "OracleParams",
    "lhs_sample",
    "sample_conditions",
    "rain_deposit",
    "surface_row",
    "bed_to_track",
    "sinter_oracle",
    "generate_track",
    "write_pairs",
    "load_pairs",
]


@dataclass(frozen=True)
class Condition:
    """Laser power (W) and scanning speed (m/s) with min-max normalization."""
    power: float
    speed: float

    def __post_init__(self):
        if not POWER_RANGE[0] <= self.power <= POWER_RANGE[1]:
            raise ValueError(f"power {self.power} outside {POWER_RANGE}")
        if not SPEED_RANGE[0] <= self.speed <= SPEED_RANGE[1]:
            raise ValueError(f"speed {self.speed} outside {SPEED_RANGE}")

    @property
    def power_norm(self) -> float:
        return (self.power - POWER_RANGE[0]) / (POWER_RANGE[1] - POWER_RANGE[0])

    @property
    def speed_norm(self) -> float:
        return (self.speed - SPEED_RANGE[0]) / (SPEED_RANGE[1] - SPEED_RANGE[0])

    def norm(self) -> np.ndarray:
        return np.array([self.power_norm, self.speed_norm], dtype=np.float32)


@dataclass(frozen=True)
class SamplePair:
    """One training/testing unit: initial patch, condition, evolved patch."""
    initial: np.ndarray
    cond: Condition
    evolved: np.ndarray


@dataclass(frozen=True)
class PowderBedSpec:
    track_length_px: int = 700
    height_px: int = 128
    mean_diameter_px: float = 12.5   # 25 um at 2 um/px
    std_diameter_px: float = 0.25    # 0.5 um at 2 um/px
    target_fill_height_px: int = 100
    seed: int = 0


@dataclass(frozen=True)
class OracleParams:
    d_min_px: int = 16
    d_max_px: int = 112
    alpha: float = 0.8
    k_base: int = 2
    k_range: int = 6

    def __post_init__(self):
        if not 0 < self.d_min_px < self.d_max_px <= 128:
            raise ValueError("need 0 < d_min < d_max <= 128")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0,1]")


# ---------------------------------------------------------------------------
# condition sampling

def lhs_sample(n: int, ranges, seed: int) -> np.ndarray:
    """Latin Hypercube sample: n points, one per stratum on every axis.

    Each axis is split into n equal strata; a seeded permutation assigns
    strata to points and the position inside each stratum is uniform.
    Returns an [n, len(ranges)] array.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    rng = substream(seed, "lhs")
    out = np.empty((n, len(ranges)), dtype=np.float64)
    for axis, (lo, hi) in enumerate(ranges):
        strata = rng.permutation(n)
        jitter = rng.random(n)
        out[:, axis] = lo + (strata + jitter) / n * (hi - lo)
    return out

def sample_conditions(n: int, seed: int) -> list[Condition]:
    pts = lhs_sample(n, [POWER_RANGE, SPEED_RANGE], seed)
    return [Condition(power=float(p), speed=float(s)) for p, s in pts]


# ---------------------------------------------------------------------------
# powder bed deposition

def _truncated_normal(rng, mean, std, bound=3.0):
    while True:
        x = rng.normal(mean, std)
        if abs(x - mean) <= bound * std:
            return x


def rain_deposit(spec: PowderBedSpec) -> np.ndarray:
    """Drop disks until every column is filled to the target height.

    Returns a [height_px, track_length_px] field of {0,1} with row 0 at
    the top. Each disk falls straight down at a random x and freezes at
    its first touch of the floor or existing solid (touch = one-pixel
    adjacency, so side contacts stick too and the packing stays porous).
    Same seed, same bed, bit for bit.
    """
    h, length = spec.height_px, spec.track_length_px
    if spec.mean_diameter_px + 3.0 * spec.std_diameter_px > length:
        raise ValueError("disk wider than track")
    field = np.zeros((h, length), dtype=np.float32)
    if spec.target_fill_height_px <= 0:
        return field
    if spec.target_fill_height_px > h:
        raise ValueError(f"target fill {spec.target_fill_height_px} exceeds height {h}")

    rng = substream(spec.seed, "rain")
    tops = np.full(length, h, dtype=np.int64)  # topmost solid row per column (h = empty)
    while tops.max() > h - spec.target_fill_height_px:
        r = _truncated_normal(rng, spec.mean_diameter_px, spec.std_diameter_px) / 2.0
        xc = rng.uniform(0.0, length)
        lo = max(0, math.ceil(xc - r))
        hi = min(length - 1, math.floor(xc + r))
        if lo > hi:
            continue
        cols = np.arange(lo, hi + 1)
        contact = np.floor(np.sqrt(np.maximum(r * r - (cols - xc) ** 2, 0.0))).astype(np.int64)
        yc = int(np.min(tops[cols] - 1 - contact))
        # grains touch at points; rasterize the interior slightly inside the
        # contact radius so inter-grain pore channels survive pixelization
        ri = r - GRAIN_RASTER_INSET_PX
        inner = np.floor(np.sqrt(np.maximum(ri * ri - (cols - xc) ** 2, 0.0))).astype(np.int64)
        inside = np.abs(cols - xc) <= ri
        for j, dy, ok in zip(cols, inner, inside):
            if not ok:
                continue
            top = max(0, yc - dy)
            bottom = min(h - 1, yc + dy)
            if bottom < top:
                continue
            field[top:bottom + 1, j] = 1.0
            if top < tops[j]:
                tops[j] = top
    return field


def surface_row(field: np.ndarray, threshold: float = 0.5) -> int:
    """Index of the highest row containing solid; 0 for an empty field."""
    rows = np.nonzero((field >= threshold).any(axis=1))[0]
    return int(rows[0]) if rows.size else 0


def bed_to_track(bed: np.ndarray, window: int = 128) -> np.ndarray:
    """Anchor the bed surface at row 0 and pad solid substrate below.

    Crop and inference windows start at the bed surface and reach `window`
    rows down; a raw bed is shallower than that, so the rows beneath the
    deposition floor are backfilled as dense base material.
    """
    s = surface_row(bed)
    below = bed[s:]
    pad = window - below.shape[0]
    if pad < 0:
        return below[:window].copy()
    substrate = np.ones((pad, bed.shape[1]), dtype=bed.dtype)
    return np.vstack([below, substrate])


# ---------------------------------------------------------------------------
# synthetic sintering

def sinter_oracle(field: np.ndarray, cond: Condition,
                  params: OracleParams = OracleParams()) -> np.ndarray:
    """Deterministic ground-truth sintering transform.

    Drive eta = (power_norm + (1 - speed_norm)) / 2 sets the affected depth
    D and the iteration count K; each iteration relaxes the field toward
    its 3x3 box blur with per-row weight max(0, 1 - y/D), y measured down
    from the bed surface. Rows at depth >= D never change; the result is
    re-thresholded to {0,1}.
    """
    if field.ndim != 2:
        raise ValueError(f"field must be 2-D, got {field.shape}")
    if not np.isin(field, (0.0, 1.0)).all():
        raise ValueError("oracle input must be a binary field")
    eta = 0.5 * (cond.power_norm + (1.0 - cond.speed_norm))
    depth = params.d_min_px + int(round(eta * (params.d_max_px - params.d_min_px)))
    iters = params.k_base + int(round(eta * params.k_range))

    s = surface_row(field)
    y = np.maximum(np.arange(field.shape[0]) - s, 0)
    w = np.maximum(0.0, 1.0 - y / depth)[:, None].astype(np.float32)

    f = field.astype(np.float32, copy=True)
    aw = params.alpha * w
    for _ in range(iters):
        f = (1.0 - aw) * f + aw * uniform_filter(f, size=3, mode="nearest")
    return (f >= 0.5).astype(np.float32)


def generate_track(cond: Condition, seed: int,
                   spec: PowderBedSpec = PowderBedSpec(),
                   params: OracleParams = OracleParams(),
                   window: int = 128):
    """Deposit one powder bed and sinter it; returns (track_in, track_out).

    Both tracks are surface-anchored (bed top at row 0, substrate below)
    so downstream cropping and inference windows align with the bed top.
    """
    bed = rain_deposit(replace(spec, seed=seed))
    track_in = bed_to_track(bed, window=window)
    track_out = sinter_oracle(track_in, cond, params)
    return track_in, track_out


# ---------------------------------------------------------------------------
# on-disk datasets

def _pair_paths(directory: Path, index: int):
    stem = f"pair_{index:06d}"
    return (directory / f"{stem}_in.pgm",
            directory / f"{stem}_out.pgm",
            directory / f"{stem}_cond.txt")


def write_pairs(directory, pairs, start_index: int = 0) -> int:
    """Write pairs as PGM + condition sidecars; returns the next free index."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = start_index
    for pair in pairs:
        p_in, p_out, p_cond = _pair_paths(directory, index)
        write_pgm(p_in, pair.initial)
        write_pgm(p_out, pair.evolved)
        p_cond.write_text(f"power={pair.cond.power!r}\nspeed={pair.cond.speed!r}\n")
        index += 1
    return index


def load_pairs(directory) -> list[SamplePair]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory {directory} does not exist")
    pairs = []
    for p_cond in sorted(directory.glob("pair_*_cond.txt")):
        index = int(p_cond.name.split("_")[1])
        p_in, p_out, _ = _pair_paths(directory, index)
        fields = {}
        for line in p_cond.read_text().splitlines():
            key, _, value = line.partition("=")
            fields[key.strip()] = float(value)
        cond = Condition(power=fields["power"], speed=fields["speed"])
        pairs.append(SamplePair(initial=read_pgm(p_in), cond=cond, evolved=read_pgm(p_out)))
    if not pairs:
        raise FileNotFoundError(f"no pairs found in {directory}")
    return pairs
