"""Track cropping, sliding-window inference, and layerwise component builds.

Training patches are cut from long tracks with a dense 10-px stride
(118-px overlap between neighbors); inference tiles the track without
overlap, right-aligning the final window when the length is not a
multiple of the window and letting it overwrite the overlapped strip.
Both windows start at the powder-bed surface row and reach one full
window height down into the material.

`simulate_component` grows a masked component layer by layer: each layer
band is filled by depositing consecutive mini powder beds (independent
segments, which leaves the characteristic seam pores where they abut),
then the trained model sinters the layer through a window that includes
the already-built material below it.
"""

import math
import time
from dataclasses import dataclass

import numpy as np

from .data import Condition, PowderBedSpec, SamplePair, rain_deposit, surface_row
from .model import ModelWeights, forward
from .seeding import substream

__all__ = [
    "CropPlan",
    "ComponentSpec",
    "crop_track",
    "tile_offsets",
    "infer_track",
    "mean_sinter_depth",
    "layer_count",
    "simulate_component",
]


@dataclass(frozen=True)
class CropPlan:
    window: int = 128
    stride: int = 10

    def offsets(self, length: int) -> list[int]:
        if length < self.window:
            raise ValueError(f"track length {length} shorter than window {self.window}")
        return list(range(0, length - self.window + 1, self.stride))

    def patch_count(self, length: int) -> int:
        return (length - self.window) // self.stride + 1


def crop_track(track_in: np.ndarray, track_out: np.ndarray, cond: Condition,
               plan: CropPlan = CropPlan()) -> list[SamplePair]:
    """Cut aligned input/evolved patches along the track at every offset."""
    if track_in.shape != track_out.shape:
        raise ValueError(f"track shapes differ: {track_in.shape} vs {track_out.shape}")
    h, length = track_in.shape
    anchor = surface_row(track_in)
    if h - anchor < plan.window:
        raise ValueError(f"only {h - anchor} rows below the bed surface, need {plan.window}")
    rows = slice(anchor, anchor + plan.window)
    pairs = []
    for off in plan.offsets(length):
        cols = slice(off, off + plan.window)
        pairs.append(SamplePair(initial=track_in[rows, cols].copy(),
                                cond=cond,
                                evolved=track_out[rows, cols].copy()))
    return pairs


def tile_offsets(length: int, window: int = 128) -> list[int]:
    """Non-overlapped tiling offsets; the last tile is right-aligned."""
    if length < window:
        raise ValueError(f"track length {length} shorter than window {window}")
    offs = list(range(0, length - window + 1, window))
    if offs[-1] != length - window:
        offs.append(length - window)
    return offs


def infer_track(weights: ModelWeights, track_in: np.ndarray, cond: Condition,
                window: int = 128) -> np.ndarray:
    """Sinter a whole track by tiling the model over it (last writer wins)."""
    h, length = track_in.shape
    anchor = surface_row(track_in)
    if h - anchor < window:
        raise ValueError(f"only {h - anchor} rows below the bed surface, need {window}")
    out = track_in.astype(np.float32).copy()
    rows = slice(anchor, anchor + window)
    for off in tile_offsets(length, window):
        patch = track_in[rows, off:off + window]
        pred, _ = forward(weights, patch, cond.norm(), "infer")
        out[rows, off:off + window] = pred
    return out


def mean_sinter_depth(track_in: np.ndarray, track_out: np.ndarray,
                      threshold: float = 0.5) -> float:
    """Mean over columns of the deepest changed row, in px below the surface."""
    if track_in.shape != track_out.shape:
        raise ValueError("track shapes differ")
    anchor = surface_row(track_in)
    changed = (track_in[anchor:] >= threshold) != (track_out[anchor:] >= threshold)
    depth = np.arange(1, changed.shape[0] + 1)[:, None] * changed
    return float(depth.max(axis=0).mean())


# ---------------------------------------------------------------------------
# full-component simulation

@dataclass(frozen=True)
class ComponentSpec:
    mask: np.ndarray            # nonzero = inside the part silhouette
    layer_height_px: int = 70
    segment_length_px: int = 700


def layer_count(mask_height: int, layer_height: int) -> int:
    """Layers needed to build the given height (last layer may be partial)."""
    return math.ceil(mask_height / layer_height)


def _column_runs(flags: np.ndarray):
    """Contiguous runs of True as (start, stop) half-open pairs."""
    runs = []
    start = None
    for j, v in enumerate(flags):
        if v and start is None:
            start = j
        elif not v and start is not None:
            runs.append((start, j))
            start = None
    if start is not None:
        runs.append((start, len(flags)))
    return runs


def simulate_component(weights: ModelWeights, spec: ComponentSpec, cond: Condition,
                       seed: int, window: int = 128,
                       bed: PowderBedSpec = PowderBedSpec()):
    """Build and sinter a component bottom-up, layer by layer.

    Returns (component, stats). The component raster matches the mask
    shape with values in {0,1}; nothing is ever written outside the mask.
    stats reports layers, inference frame count, wall time, and frames/s.
    """
    mask = np.asarray(spec.mask) > 0
    hc, wc = mask.shape
    if wc < window:
        raise ValueError(f"mask width {wc} narrower than inference window {window}")
    if spec.layer_height_px < 1:
        raise ValueError("layer height must be positive")

    comp = np.zeros((hc, wc), dtype=np.float32)
    frames = 0
    t0 = time.perf_counter()
    n_layers = layer_count(hc, spec.layer_height_px)

    for k in range(n_layers):
        band_bot = hc - k * spec.layer_height_px            # exclusive
        band_top = max(0, hc - (k + 1) * spec.layer_height_px)
        band_mask = mask[band_top:band_bot]
        in_cols = band_mask.any(axis=0)
        if not in_cols.any():
            continue

        # deposit consecutive mini powder beds across each in-mask column run
        for c0, c1 in _column_runs(in_cols):
            for seg0 in range(c0, c1, spec.segment_length_px):
                seg1 = min(seg0 + spec.segment_length_px, c1)
                seg_seed = int(substream(seed, f"layer{k}/seg{seg0}").integers(2 ** 31))
                seg_bed = rain_deposit(PowderBedSpec(
                    track_length_px=seg1 - seg0,
                    height_px=bed.height_px,
                    mean_diameter_px=bed.mean_diameter_px,
                    std_diameter_px=bed.std_diameter_px,
                    target_fill_height_px=band_bot - band_top,
                    seed=seg_seed,
                ))
                rows_comp = slice(max(0, band_bot - seg_bed.shape[0]), band_bot)
                rows_bed = slice(seg_bed.shape[0] - (rows_comp.stop - rows_comp.start),
                                 seg_bed.shape[0])
                region = comp[rows_comp, seg0:seg1]
                solid = (seg_bed[rows_bed] > 0) & mask[rows_comp, seg0:seg1]
                region[solid] = 1.0

        # sinter the layer through a window that sees the build below it
        top = surface_row(comp)
        ctx_rows = comp[top:min(hc, top + window)]
        pad = window - ctx_rows.shape[0]
        if pad > 0:
            ctx_rows = np.vstack([ctx_rows, np.ones((pad, wc), dtype=np.float32)])
        sintered = infer_track(weights, ctx_rows, cond, window=window)
        frames += len(tile_offsets(wc, window))

        n_back = min(hc, top + window) - top
        write_mask = mask[top:top + n_back]
        comp[top:top + n_back][write_mask] = (sintered[:n_back] >= 0.5).astype(np.float32)[write_mask]

    wall = time.perf_counter() - t0
    stats = {
        "layers": n_layers,
        "frames": frames,
        "wall_time_s": wall,
        "frames_per_second": frames / wall if wall > 0 else float("inf"),
    }
    return comp, stats
