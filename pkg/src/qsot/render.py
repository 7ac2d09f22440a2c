"""Raster partitions (binary PPM) and cost-histogram CSV export."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .otcore import CostSpec, Rect, cost_matrix
from .plan import PlanStats, TransportPlan, VoronoiWeights
from .tiebreak import choice_prob_matrix, precompute_masks

BLACK = (0, 0, 0)
ROW_BLOCK = 64

# 24 mutually distinct colors; the first ten follow the usual categorical order
DEFAULT_COLORS = (
    (31, 119, 180), (255, 127, 14), (44, 160, 44), (214, 39, 40), (148, 103, 189),
    (140, 86, 75), (227, 119, 194), (127, 127, 127), (188, 189, 34), (23, 190, 207),
    (174, 199, 232), (255, 187, 120), (152, 223, 138), (255, 152, 150), (197, 176, 213),
    (196, 156, 148), (247, 182, 210), (199, 199, 199), (219, 219, 141), (158, 218, 229),
    (0, 0, 128), (128, 0, 0), (0, 128, 0), (128, 128, 0),
)


@dataclass(frozen=True)
class Palette:
    colors: tuple[tuple[int, int, int], ...]
    background: tuple[int, int, int] = (255, 255, 255)

    def __post_init__(self):
        cols = tuple(tuple(int(v) for v in c) for c in self.colors)
        for c in cols + (tuple(self.background),):
            if len(c) != 3 or not all(0 <= v <= 255 for v in c):
                raise ValueError(f"colors must be RGB8 triples, got {c}")
        if len(set(cols)) != len(cols):
            raise ValueError("palette colors must be distinct")
        object.__setattr__(self, "colors", cols)
        object.__setattr__(self, "background", tuple(int(v) for v in self.background))

    @classmethod
    def default(cls, K: int) -> "Palette":
        if K > len(DEFAULT_COLORS):
            raise ValueError(f"no default palette for K={K}")
        return cls(DEFAULT_COLORS[:K])

    def array(self) -> np.ndarray:
        return np.array(self.colors, dtype=float)


@dataclass(frozen=True)
class RasterImage:
    width: int
    height: int
    pixels: np.ndarray = field(repr=False)  # (height, width, 3) uint8

    def __post_init__(self):
        if self.pixels.shape != (self.height, self.width, 3) or self.pixels.dtype != np.uint8:
            raise ValueError("pixels must be a (height, width, 3) uint8 array")

    def __eq__(self, other):
        if not isinstance(other, RasterImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    def to_bytes(self) -> bytes:
        return np.ascontiguousarray(self.pixels).tobytes()


def worker_count() -> int:
    """Worker cap from ``QSOT_THREADS`` (0 or unset means one per CPU)."""
    raw = os.environ.get("QSOT_THREADS", "0").strip() or "0"
    n = int(raw)
    if n < 0:
        raise ValueError("QSOT_THREADS must be >= 0")
    return n if n > 0 else (os.cpu_count() or 1)


def pixel_centers(domain: Rect, resolution: tuple[int, int], rows: slice | None = None) -> np.ndarray:
    """Centers of pixel rows ``rows`` as an ``(nrows * w, 2)`` array; row 0 is the top."""
    w, h = resolution
    rows = rows or slice(0, h)
    i = np.arange(rows.start, rows.stop)
    j = np.arange(w)
    xs = domain.xmin + (j + 0.5) * (domain.width / w)
    ys = domain.ymax - (i + 0.5) * (domain.height / h)
    X, Y = np.meshgrid(xs, ys)
    return np.column_stack([X.ravel(), Y.ravel()])


def pixel_masks(plan: TransportPlan, domain: Rect, resolution: tuple[int, int]) -> np.ndarray:
    """Choice-set bitmask at each pixel center, shape ``(h, w)``."""
    w, h = resolution
    C = cost_matrix(plan.cost, pixel_centers(domain, resolution))
    return precompute_masks(C, plan.t, plan.psi).reshape(h, w)


def _check_resolution(resolution) -> tuple[int, int]:
    w, h = (int(v) for v in resolution)
    if w < 1 or h < 1:
        raise ValueError("resolution must be positive")
    return w, h


def _rasterize(domain: Rect, resolution, block_fn) -> np.ndarray:
    w, h = resolution
    out = np.empty((h, w, 3), dtype=np.uint8)
    blocks = [slice(s, min(s + ROW_BLOCK, h)) for s in range(0, h, ROW_BLOCK)]

    def work(rows: slice):
        pts = pixel_centers(domain, resolution, rows)
        out[rows] = block_fn(pts).reshape(rows.stop - rows.start, w, 3)

    workers = min(worker_count(), len(blocks))
    if workers <= 1:
        for rows in blocks:
            work(rows)
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(work, blocks))
    return out


def _to_rgb8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def facility_pixel(domain: Rect, resolution, xy) -> tuple[int, int]:
    """``(row, col)`` of the pixel containing point ``xy``, clamped to the image."""
    w, h = resolution
    col = int(np.floor((xy[0] - domain.xmin) / domain.width * w))
    row = int(np.floor((domain.ymax - xy[1]) / domain.height * h))
    return min(max(row, 0), h - 1), min(max(col, 0), w - 1)


def marker_mask(cost: CostSpec, domain: Rect, resolution) -> np.ndarray:
    """Pixels covered by the 3x3 facility markers."""
    w, h = resolution
    mask = np.zeros((h, w), dtype=bool)
    for xy in cost.facilities:
        r, c = facility_pixel(domain, resolution, xy)
        mask[max(r - 1, 0) : r + 2, max(c - 1, 0) : c + 2] = True
    return mask


def _level_set(plan: TransportPlan, domain: Rect, resolution) -> np.ndarray:
    w, h = resolution
    inside = cost_matrix(plan.cost, pixel_centers(domain, resolution)).reshape(h, w, -1) <= plan.t
    edge = np.zeros((h, w), dtype=bool)
    edge[:, 1:] |= np.any(inside[:, 1:] != inside[:, :-1], axis=2)
    edge[1:, :] |= np.any(inside[1:] != inside[:-1], axis=2)
    return edge


def render_quantile_partition(plan: TransportPlan, domain: Rect, resolution, palette: Palette,
                              overlay: bool = False) -> RasterImage:
    """Each pixel is the choice-probability blend of the facility colors.

    With ``overlay`` the boundaries ``c(x, k) = t`` are drawn in black.
    """
    resolution = _check_resolution(resolution)
    if len(palette.colors) != plan.K:
        raise ValueError(f"palette has {len(palette.colors)} colors for K={plan.K}")
    cols = palette.array()

    def block(pts):
        masks = precompute_masks(cost_matrix(plan.cost, pts), plan.t, plan.psi)
        return _to_rgb8(choice_prob_matrix(plan.theta, masks) @ cols)

    px = _rasterize(domain, resolution, block)
    if overlay:
        px[_level_set(plan, domain, resolution)] = BLACK
    px[marker_mask(plan.cost, domain, resolution)] = BLACK
    return RasterImage(resolution[0], resolution[1], px)


def render_baseline_partition(weights: VoronoiWeights, cost: CostSpec, domain: Rect, resolution,
                              palette: Palette) -> RasterImage:
    resolution = _check_resolution(resolution)
    if len(palette.colors) != cost.K:
        raise ValueError(f"palette has {len(palette.colors)} colors for K={cost.K}")
    cols = np.array(palette.colors, dtype=np.uint8)
    g = np.asarray(weights.g, dtype=float)

    def block(pts):
        return cols[np.argmin(cost_matrix(cost, pts) - g[None, :], axis=1)]

    px = _rasterize(domain, resolution, block)
    px[marker_mask(cost, domain, resolution)] = BLACK
    return RasterImage(resolution[0], resolution[1], px)


def ppm_bytes(image: RasterImage) -> bytes:
    return b"P6\n%d %d\n255\n" % (image.width, image.height) + image.to_bytes()


def write_ppm(image: RasterImage, path) -> None:
    Path(path).write_bytes(ppm_bytes(image))


def read_ppm(path) -> RasterImage:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P6" or parts[2] != b"255":
        raise ValueError(f"{path}: not a binary PPM written by this package")
    w, h = (int(v) for v in parts[1].split())
    px = np.frombuffer(parts[3], dtype=np.uint8)
    if px.size != w * h * 3:
        raise ValueError(f"{path}: payload has {px.size} bytes, expected {w * h * 3}")
    return RasterImage(w, h, px.reshape(h, w, 3).copy())


def export_histogram(stats: PlanStats, path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["bin_lo", "bin_hi", "count"])
        edges = stats.bin_edges
        for i, c in enumerate(stats.counts):
            out.writerow([repr(float(edges[i])), repr(float(edges[i + 1])), int(c)])
