"""Dense image grids and the exact spatial primitives the sampler is built on.

Grids are plain (H, W, C) float64 arrays.  All resizing is nearest-neighbor
with the index map ``src_index = floor(out_index * src_len / out_len)``,
computed in integer arithmetic, so every output value is an exact copy of
some input value and integer-factor round trips are exact identities.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .validation import check_grid, check_mask, check_same_shape, require


class Rect(NamedTuple):
    """Axis-aligned pixel window: top-left corner (y0, x0) and size (h, w)."""

    y0: int
    x0: int
    h: int
    w: int

    @property
    def slices(self) -> tuple[slice, slice]:
        return slice(self.y0, self.y0 + self.h), slice(self.x0, self.x0 + self.w)

    def contains(self, other: "Rect") -> bool:
        return (
            self.y0 <= other.y0
            and self.x0 <= other.x0
            and other.y0 + other.h <= self.y0 + self.h
            and other.x0 + other.w <= self.x0 + self.w
        )


def check_rect_within(window: Rect, height: int, width: int, name: str = "window") -> None:
    require(window.h >= 1 and window.w >= 1, f"{name} must have positive size, got {window}")
    require(
        window.y0 >= 0
        and window.x0 >= 0
        and window.y0 + window.h <= height
        and window.x0 + window.w <= width,
        f"{name} {window} does not fit inside a {height}x{width} grid",
    )


def _nearest_indices(src_len: int, out_len: int) -> np.ndarray:
    # integer floor division keeps the map exact for any sizes
    return (np.arange(out_len) * src_len) // out_len


def resize_nearest(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor remap to any size; no direction constraint.

    Prefer `downsample_nearest` / `upsample_nearest`, which check the
    direction of the resize; this variant backs metrics that must compare
    grids of unrelated sizes.
    """
    src = check_grid(src, "src")
    require(out_h >= 1 and out_w >= 1, f"target dims must be positive, got {out_h}x{out_w}")
    ys = _nearest_indices(src.shape[0], out_h)
    xs = _nearest_indices(src.shape[1], out_w)
    return src[np.ix_(ys, xs)]


def downsample_nearest(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Shrink (or copy) a grid; channels are preserved."""
    src = check_grid(src, "src")
    require(
        1 <= out_h <= src.shape[0] and 1 <= out_w <= src.shape[1],
        f"downsample target {out_h}x{out_w} must satisfy 1 <= target <= source {src.shape[0]}x{src.shape[1]}",
    )
    return resize_nearest(src, out_h, out_w)


def upsample_nearest(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Enlarge (or copy) a grid; channels are preserved."""
    src = check_grid(src, "src")
    require(
        out_h >= src.shape[0] and out_w >= src.shape[1],
        f"upsample target {out_h}x{out_w} must be at least the source {src.shape[0]}x{src.shape[1]}",
    )
    return resize_nearest(src, out_h, out_w)


def pad_center(src: np.ndarray, out_h: int, out_w: int, fill: np.ndarray) -> tuple[np.ndarray, Rect]:
    """Write `src` into the center of `fill` and return (result, placement).

    The placement offset is floor((out - in) / 2) per axis; the returned
    Rect records where `src` landed so a later `crop` can undo the padding.
    """
    src = check_grid(src, "src")
    fill = check_grid(fill, "fill")
    require(
        out_h >= src.shape[0] and out_w >= src.shape[1],
        f"pad target {out_h}x{out_w} must be at least the source {src.shape[0]}x{src.shape[1]}",
    )
    require(
        fill.shape == (out_h, out_w, src.shape[2]),
        f"fill shape {fill.shape} must be ({out_h}, {out_w}, {src.shape[2]})",
    )
    placement = Rect((out_h - src.shape[0]) // 2, (out_w - src.shape[1]) // 2, src.shape[0], src.shape[1])
    out = fill.copy()
    out[placement.slices] = src
    return out, placement


def crop(src: np.ndarray, window: Rect) -> np.ndarray:
    """Exact sub-grid copy."""
    src = check_grid(src, "src")
    check_rect_within(window, src.shape[0], src.shape[1])
    return src[window.slices].copy()


def blend_masked(keep: np.ndarray, new: np.ndarray, mask) -> np.ndarray:
    """Per-pixel select: positions where `mask` is set take `new`, others `keep`."""
    keep = check_grid(keep, "keep")
    new = check_grid(new, "new")
    check_same_shape(keep, new, "keep", "new")
    m = check_mask(mask, keep.shape[0], keep.shape[1])
    return np.where(m[:, :, None], new, keep)


def frobenius_distance(a: np.ndarray, b: np.ndarray) -> float:
    """sqrt of the sum of squared elementwise differences."""
    a = check_grid(a, "a")
    b = check_grid(b, "b")
    check_same_shape(a, b)
    d = a - b
    return float(np.sqrt(np.sum(d * d)))


def block_share(g: np.ndarray, block: int) -> np.ndarray:
    """Share one value per `block` x `block` cell (representative pixel).

    Equivalent to a nearest-neighbor downsample by `block` followed by a
    nearest-neighbor upsample back to the original size.
    """
    g = check_grid(g, "g")
    require(block >= 1, f"block must be >= 1, got {block}")
    h, w = g.shape[0], g.shape[1]
    require(h % block == 0 and w % block == 0, f"block {block} must divide grid dims {h}x{w}")
    small = downsample_nearest(g, h // block, w // block)
    return upsample_nearest(small, h, w)
