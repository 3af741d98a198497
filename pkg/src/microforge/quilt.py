"""Minimum-error-boundary merging of overlapping patches.

Two patches placed side by side share an overlap band of width `overlap`.
A monotone 8-connected path through the band (one column index per row,
moving at most one column between rows) is chosen to minimize the summed
squared pixel difference; pixels left of the path come from the first
patch, pixels at/right of it from the second.  Grid assembly applies the
same cut against the left and top neighbors of every patch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadOverlap, ShapeMismatch
from .images import GrayImage, PatchSet

_INT_SENTINEL = np.int64(1) << np.int64(62)


@dataclass(frozen=True)
class SeamPath:
    """Per-row column indices of a minimum-error cut inside an overlap band."""

    columns: np.ndarray  # (rows,) int64, values in [0, band_width)
    band_width: int

    def __post_init__(self):
        cols = np.asarray(self.columns, dtype=np.int64)
        if cols.ndim != 1 or cols.size < 1:
            raise ShapeMismatch("seam path must be a 1D sequence of column indices")
        if cols.min() < 0 or cols.max() >= self.band_width:
            raise ShapeMismatch("seam path leaves the overlap band")
        if cols.size > 1 and np.abs(np.diff(cols)).max() > 1:
            raise ShapeMismatch("seam path must move at most one column per row")
        object.__setattr__(self, "columns", cols)


@dataclass(frozen=True)
class OverlapErrorField:
    """Squared-difference field with its cumulative minima and backpointers."""

    e: np.ndarray  # (rows, band) squared differences
    cumulative: np.ndarray  # (rows, band) running minima
    back: np.ndarray  # (rows, band) int8 backpointer offsets in {-1, 0, +1}


def _error_field(x_band: np.ndarray, y_band: np.ndarray) -> OverlapErrorField:
    if np.issubdtype(x_band.dtype, np.integer) and np.issubdtype(y_band.dtype, np.integer):
        diff = x_band.astype(np.int64) - y_band.astype(np.int64)
        sentinel = _INT_SENTINEL
    else:
        diff = x_band.astype(np.float64) - y_band.astype(np.float64)
        sentinel = np.inf
    e = diff * diff
    rows, band = e.shape
    cumulative = np.empty_like(e)
    back = np.zeros((rows, band), dtype=np.int8)
    cumulative[0] = e[0]
    for i in range(1, rows):
        prev = cumulative[i - 1]
        left = np.empty_like(prev)
        left[0] = sentinel
        left[1:] = prev[:-1]
        right = np.empty_like(prev)
        right[-1] = sentinel
        right[:-1] = prev[1:]
        # candidate order (j-1, j, j+1): argmin ties resolve to the
        # smallest column index
        cand = np.stack((left, prev, right))
        choice = np.argmin(cand, axis=0)
        back[i] = choice.astype(np.int8) - 1
        cumulative[i] = e[i] + cand[choice, np.arange(band)]
    return OverlapErrorField(e, cumulative, back)


def seam(x_band, y_band):
    """Minimum-error monotone path through an overlap band.

    Parameters
    ----------
    x_band, y_band : (rows, band) arrays
        Overlapping pixel bands of the two patches.  Integer inputs are
        promoted to 64-bit before squaring, so the result is exact.

    Returns
    -------
    (SeamPath, total_error)
        Ties are broken toward the smallest column index at every argmin.
    """
    x_band = np.asarray(x_band)
    y_band = np.asarray(y_band)
    if x_band.ndim != 2 or x_band.shape != y_band.shape:
        raise ShapeMismatch(f"band shapes differ: {x_band.shape} vs {y_band.shape}")
    rows, band = x_band.shape
    if rows < 1 or band < 1:
        raise ShapeMismatch("bands must be at least 1x1")
    field = _error_field(x_band, y_band)
    cols = np.empty(rows, dtype=np.int64)
    cols[-1] = int(np.argmin(field.cumulative[-1]))
    for i in range(rows - 1, 0, -1):
        cols[i - 1] = cols[i] + field.back[i, cols[i]]
    total = field.cumulative[-1, cols[-1]]
    total = int(total) if np.issubdtype(field.e.dtype, np.integer) else float(total)
    return SeamPath(cols, band), total


def _check_pair(x: np.ndarray, y: np.ndarray, overlap: int) -> int:
    if x.shape != y.shape or x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ShapeMismatch(f"patches must be equal squares, got {x.shape} and {y.shape}")
    n = x.shape[0]
    if not 1 <= overlap < n:
        raise BadOverlap(f"overlap must satisfy 1 <= overlap < {n}, got {overlap}")
    return n


def quilt_pair_horizontal(x: GrayImage, y: GrayImage, overlap: int) -> GrayImage:
    """Merge two N x N patches into one N x (2N - overlap) image along a
    vertical seam; every output pixel is a copy of an input pixel."""
    xa, ya = x.data, y.data
    n = _check_pair(xa, ya, overlap)
    path, _ = seam(xa[:, n - overlap :], ya[:, :overlap])
    out = np.empty((n, 2 * n - overlap), dtype=xa.dtype)
    out[:, : n - overlap] = xa[:, : n - overlap]
    out[:, n:] = ya[:, overlap:]
    from_y = np.arange(overlap)[None, :] >= path.columns[:, None]
    band = np.where(from_y, ya[:, :overlap], xa[:, n - overlap : n])
    out[:, n - overlap : n] = band
    return GrayImage(out)


def assemble_grid(patches, rows: int, cols: int, overlap: int) -> GrayImage:
    """Quilt a rows x cols grid of N x N patches into one image of size
    (rows*N - (rows-1)*overlap) x (cols*N - (cols-1)*overlap).

    `patches` may be a PatchSet, an (n, N, N) array, or a callable mapping a
    flat index to an N x N array.  Patches are consumed in raster order; each
    one is cut by a vertical seam against the canvas content to its left and
    a horizontal seam against the content above.  In the shared corner a
    pixel comes from the new patch only if it lies on the new side of both
    seams.
    """
    if rows < 1 or cols < 1:
        raise ShapeMismatch("grid must be at least 1x1")
    fetch = _patch_fetcher(patches, rows * cols)
    first = np.asarray(fetch(0))
    n = _check_pair(first, first, overlap)
    step = n - overlap
    out = np.zeros((rows * n - (rows - 1) * overlap, cols * n - (cols - 1) * overlap), dtype=first.dtype)
    for r in range(rows):
        for c in range(cols):
            patch = np.asarray(fetch(r * cols + c))
            if patch.shape != (n, n) or patch.dtype != first.dtype:
                raise ShapeMismatch(f"patch {r * cols + c} has shape {patch.shape}, expected {(n, n)}")
            y0, x0 = r * step, c * step
            fresh = np.ones((n, n), dtype=bool)
            if c > 0:
                path, _ = seam(out[y0 : y0 + n, x0 : x0 + overlap], patch[:, :overlap])
                fresh[:, :overlap] &= np.arange(overlap)[None, :] >= path.columns[:, None]
            if r > 0:
                path, _ = seam(out[y0 : y0 + overlap, x0 : x0 + n].T, patch[:overlap, :].T)
                fresh[:overlap, :] &= np.arange(overlap)[:, None] >= path.columns[None, :]
            region = out[y0 : y0 + n, x0 : x0 + n]
            region[fresh] = patch[fresh]
    return GrayImage(out)


def _patch_fetcher(patches, needed: int):
    if isinstance(patches, PatchSet):
        if patches.count < needed:
            raise ShapeMismatch(f"grid needs {needed} patches, set holds {patches.count}")
        return lambda i: patches.patches[i]
    if callable(patches):
        return patches
    arr = np.asarray(patches)
    if arr.ndim != 3:
        raise ShapeMismatch("expected a PatchSet, (n, N, N) array, or callable")
    if arr.shape[0] < needed:
        raise ShapeMismatch(f"grid needs {needed} patches, array holds {arr.shape[0]}")
    return lambda i: arr[i]


def default_overlap(patch_size: int) -> int:
    """Overlap width used when none is given: one eighth of the patch."""
    return max(1, patch_size // 8)
