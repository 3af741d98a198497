"""Bundled synthetic exemplar: a two-phase field of random overlapping disks.

Lets the whole pipeline (and its tests) run without downloading any real
micro-CT data.  Bright disks play the solid phase on a dark background, with
mild Gaussian intensity noise so thresholding stays non-trivial.
"""

from __future__ import annotations

import numpy as np

from .images import GrayImage
from .rng import RandomStream


def disk_exemplar(
    size: int = 256,
    seed: int = 0,
    disk_count: int | None = None,
    radius_range: tuple[int, int] = (6, 18),
    background: int = 60,
    foreground: int = 200,
    noise_sigma: float = 8.0,
) -> GrayImage:
    """Deterministic two-phase test structure of overlapping bright disks."""
    stream = RandomStream(seed).split("disk_exemplar")
    if disk_count is None:
        disk_count = max(8, (size * size) // 900)
    lo, hi = radius_range
    centers_r = stream.integers(size, (disk_count,))
    centers_c = stream.integers(size, (disk_count,))
    radii = lo + stream.integers(hi - lo + 1, (disk_count,))
    yy, xx = np.mgrid[0:size, 0:size]
    solid = np.zeros((size, size), dtype=bool)
    for cr, cc, rad in zip(centers_r, centers_c, radii):
        rr = int(rad)
        y0, y1 = max(0, cr - rr), min(size, cr + rr + 1)
        x0, x1 = max(0, cc - rr), min(size, cc + rr + 1)
        patch_y = yy[y0:y1, x0:x1] - cr
        patch_x = xx[y0:y1, x0:x1] - cc
        solid[y0:y1, x0:x1] |= patch_y * patch_y + patch_x * patch_x <= rr * rr
    field = np.where(solid, float(foreground), float(background))
    if noise_sigma > 0:
        field = field + noise_sigma * stream.normal((size, size), dtype=np.float64)
    return GrayImage(np.clip(np.rint(field), 0, 255).astype(np.uint8))
