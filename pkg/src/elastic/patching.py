"""Estimating a score over an oversized grid from native-size denoiser calls.

Three fusion strategies:

* implicit context: partition the target into inner tiles strictly smaller
  than the native size, score each tile inside a native-size window centered
  on it (clamped to the image), and write back only the inner region.  No
  averaging, K_y * K_x calls.
* explicit overlap: slide native windows by a stride and average scores
  where windows intersect (the classic panorama approach).
* no overlap: native tiles scored independently (the naive baseline).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .grid import Rect, check_rect_within
from .validation import check_grid, ensure_finite, require


class PatchTile(NamedTuple):
    inner: Rect            # region written back, in target coordinates
    window: Rect           # native-size denoiser input, in target coordinates
    inner_in_window: Rect  # the inner region, in window coordinates


@dataclass(frozen=True, eq=False)
class PatchLayout:
    """A tiling of a target grid into inner rects plus context windows.

    Inner rects partition the target exactly; every window has native size
    and lies inside the target.
    """

    target_h: int
    target_w: int
    native_h: int
    native_w: int
    tiles: tuple[PatchTile, ...]

    def __post_init__(self):
        require(len(self.tiles) >= 1, "layout needs at least one tile")
        coverage = np.zeros((self.target_h, self.target_w), dtype=np.int64)
        for tile in self.tiles:
            check_rect_within(tile.inner, self.target_h, self.target_w, "inner")
            check_rect_within(tile.window, self.target_h, self.target_w, "window")
            require(
                (tile.window.h, tile.window.w) == (self.native_h, self.native_w),
                f"window {tile.window} must have native size {self.native_h}x{self.native_w}",
            )
            require(tile.window.contains(tile.inner), f"window {tile.window} must contain inner {tile.inner}")
            expected = Rect(
                tile.inner.y0 - tile.window.y0,
                tile.inner.x0 - tile.window.x0,
                tile.inner.h,
                tile.inner.w,
            )
            require(tile.inner_in_window == expected, "inner_in_window is inconsistent with inner and window")
            coverage[tile.inner.slices] += 1
        require(bool((coverage == 1).all()), "inner rects must partition the target exactly")

    @property
    def n_tiles(self) -> int:
        return len(self.tiles)

    def inner_cuts(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        """Interior tile-boundary lines per axis (y cuts, x cuts)."""
        ys = sorted({t.inner.y0 for t in self.tiles if t.inner.y0 > 0})
        xs = sorted({t.inner.x0 for t in self.tiles if t.inner.x0 > 0})
        return tuple(ys), tuple(xs)


def split_axis(length: int, parts: int) -> list[int]:
    """Split a length into near-equal integer parts, larger parts first."""
    require(1 <= parts <= length, f"cannot split length {length} into {parts} parts")
    base, rem = divmod(length, parts)
    return [base + 1] * rem + [base] * (parts - rem)


def _implicit_axis(target: int, native: int) -> list[tuple[int, int, int]]:
    """Per-axis (inner_start, inner_size, window_start) triples."""
    require(target >= native, f"target {target} must be at least native {native}")
    parts = 1 if target == native else 2 * math.ceil(target / native) - 1
    cells = []
    y = 0
    for size in split_axis(target, parts):
        start = y + (size - native) // 2
        start = min(max(start, 0), target - native)
        cells.append((y, size, start))
        y += size
    return cells


def plan_implicit(target_h: int, target_w: int, native_h: int, native_w: int) -> PatchLayout:
    """Context-overlap tiling: per axis 2*ceil(target/native) - 1 inner tiles
    (1 when target equals native), each with a centered, clamped window."""
    rows = _implicit_axis(target_h, native_h)
    cols = _implicit_axis(target_w, native_w)
    tiles = []
    for iy, ih, wy in rows:
        for ix, iw, wx in cols:
            inner = Rect(iy, ix, ih, iw)
            window = Rect(wy, wx, native_h, native_w)
            tiles.append(PatchTile(inner, window, Rect(iy - wy, ix - wx, ih, iw)))
    return PatchLayout(target_h, target_w, native_h, native_w, tuple(tiles))


def _strided_starts(target: int, native: int, stride: int) -> list[int]:
    count = math.ceil((target - native) / stride) + 1
    return [min(i * stride, target - native) for i in range(count)]


def plan_explicit(target_h: int, target_w: int, native_h: int, native_w: int, stride: int) -> tuple[Rect, ...]:
    """Native-size windows stepping by `stride`, the last clamped to the edge."""
    require(target_h >= native_h and target_w >= native_w, "target must be at least native size")
    require(1 <= stride <= max(native_h, native_w), f"stride must be in [1, native size], got {stride}")
    ys = _strided_starts(target_h, native_h, stride)
    xs = _strided_starts(target_w, native_w, stride)
    return tuple(Rect(y, x, native_h, native_w) for y in ys for x in xs)


def layout_no_overlap(target_h: int, target_w: int, native_h: int, native_w: int) -> PatchLayout:
    """Naive native-size tiling; the last tile per axis is clamped inward, so
    its inner cell shrinks to the uncovered remainder."""
    require(target_h >= native_h and target_w >= native_w, "target must be at least native size")

    def axis(target: int, native: int) -> list[tuple[int, int, int]]:
        starts = _strided_starts(target, native, native)
        cells = []
        for i, s in enumerate(starts):
            inner_start = i * native
            inner_end = min((i + 1) * native, target)
            cells.append((inner_start, inner_end - inner_start, s))
        return cells

    tiles = []
    for iy, ih, wy in axis(target_h, native_h):
        for ix, iw, wx in axis(target_w, native_w):
            inner = Rect(iy, ix, ih, iw)
            window = Rect(wy, wx, native_h, native_w)
            tiles.append(PatchTile(inner, window, Rect(iy - wy, ix - wx, ih, iw)))
    return PatchLayout(target_h, target_w, native_h, native_w, tuple(tiles))


DenoiseFn = Callable[[np.ndarray, int], np.ndarray]


def _call_oracle(denoise: DenoiseFn, window: np.ndarray, t: int) -> np.ndarray:
    out = np.asarray(denoise(window, t), dtype=np.float64)
    require(out.shape == window.shape, f"oracle returned shape {out.shape}, expected {window.shape}")
    return out


def score_implicit(x: np.ndarray, t: int, layout: PatchLayout, denoise: DenoiseFn) -> np.ndarray:
    """Per-tile scores with context: one oracle call per tile, writing back
    only the inner region.  No averaging anywhere."""
    x = check_grid(x, "x")
    require(
        x.shape[:2] == (layout.target_h, layout.target_w),
        f"grid {x.shape[:2]} does not match layout target ({layout.target_h}, {layout.target_w})",
    )
    out = np.empty_like(x)
    for tile in layout.tiles:
        score = _call_oracle(denoise, x[tile.window.slices], t)
        out[tile.inner.slices] = score[tile.inner_in_window.slices]
    return ensure_finite(out, "score_implicit output")


def score_explicit(x: np.ndarray, t: int, windows: tuple[Rect, ...], denoise: DenoiseFn) -> np.ndarray:
    """Overlapping-window scores averaged per pixel (integer hit counts, one
    final division, so the result is independent of evaluation order)."""
    x = check_grid(x, "x")
    acc = np.zeros_like(x)
    hits = np.zeros(x.shape[:2], dtype=np.int64)
    for window in windows:
        check_rect_within(window, x.shape[0], x.shape[1])
        acc[window.slices] += _call_oracle(denoise, x[window.slices], t)
        hits[window.slices] += 1
    require(bool((hits >= 1).all()), "windows leave part of the grid uncovered")
    out = acc / hits[:, :, None]
    return ensure_finite(out, "score_explicit output")


def seam_discontinuity(x: np.ndarray, layout: PatchLayout) -> float:
    """Mean absolute first difference across inner-tile edges minus the same
    statistic over all non-boundary neighbor pairs.  Zero for a constant
    grid, near zero when tiling leaves no trace, positive when values jump
    exactly at tile boundaries."""
    x = check_grid(x, "x")
    require(
        x.shape[:2] == (layout.target_h, layout.target_w),
        f"grid {x.shape[:2]} does not match layout target ({layout.target_h}, {layout.target_w})",
    )
    cuts_y, cuts_x = layout.inner_cuts()
    dy = np.abs(np.diff(x, axis=0))
    dx = np.abs(np.diff(x, axis=1))
    by = np.zeros(dy.shape[0], dtype=bool)
    for c in cuts_y:
        by[c - 1] = True
    bx = np.zeros(dx.shape[1], dtype=bool)
    for c in cuts_x:
        bx[c - 1] = True
    boundary = np.concatenate([dy[by].ravel(), dx[:, bx].ravel()])
    interior = np.concatenate([dy[~by].ravel(), dx[:, ~bx].ravel()])
    if boundary.size == 0:
        return 0.0
    interior_mean = float(interior.mean()) if interior.size else 0.0
    return float(boundary.mean()) - interior_mean
