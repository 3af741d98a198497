"""Postprocessing recipes that turn gray generator output into clean masks.

Two published presets ship ready to use:

* ``alporas``:    fixed threshold 116 -> fill holes -> Gaussian (5, sigma 20)
                  -> Otsu binarization
* ``digitalrock``: median 3x3 -> Otsu binarization

A recipe is an ordered step list; it must end with a binarizing step.  Steps
that need a gray image after a binarizing step receive the mask rendered
back to {0, 255}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateImage, EvenKernel, UnsupportedFormat, ValidationError
from .images import BinaryMask, GrayImage

_BINARIZING = ("fixed_threshold", "otsu")
_STEP_NAMES = ("fixed_threshold", "fill_holes", "gaussian", "median", "otsu")


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def threshold(img: GrayImage, t: int) -> BinaryMask:
    """Solid where intensity >= t (bright areas are the substance)."""
    if not 0 <= t <= 255:
        raise ValidationError(f"threshold must be in [0, 255], got {t}")
    return BinaryMask(img.data >= t)


def fill_holes(mask: BinaryMask) -> BinaryMask:
    """Turn every 4-connected pore region that does not touch the image
    border into solid; border-connected pore stays."""
    pore = ~mask.data
    reach = np.zeros_like(pore)
    reach[0, :] = pore[0, :]
    reach[-1, :] = pore[-1, :]
    reach[:, 0] |= pore[:, 0]
    reach[:, -1] |= pore[:, -1]
    frontier = reach.copy()
    while frontier.any():
        grown = np.zeros_like(pore)
        grown[1:, :] |= frontier[:-1, :]
        grown[:-1, :] |= frontier[1:, :]
        grown[:, 1:] |= frontier[:, :-1]
        grown[:, :-1] |= frontier[:, 1:]
        frontier = grown & pore & ~reach
        reach |= frontier
    return BinaryMask(mask.data | (pore & ~reach))


def gaussian_kernel1d(k: int, sigma: float) -> np.ndarray:
    """Truncated, renormalized 1D Gaussian of odd width k."""
    if k < 1 or k % 2 == 0:
        raise EvenKernel(f"kernel width must be odd, got {k}")
    x = np.arange(k, dtype=np.float64) - (k - 1) / 2.0
    w = np.exp(-0.5 * (x / float(sigma)) ** 2)
    return w / w.sum()


def gaussian_blur(img: GrayImage, k: int, sigma: float) -> GrayImage:
    """Separable Gaussian smoothing with edge replication, rounded to the
    nearest 8-bit level (ties away from zero)."""
    w = gaussian_kernel1d(k, sigma)
    half = k // 2
    data = img.data.astype(np.float64)
    padded = np.pad(data, ((half, half), (0, 0)), mode="edge")
    rows = sliding_window_view(padded, k, axis=0)
    data = rows @ w
    padded = np.pad(data, ((0, 0), (half, half)), mode="edge")
    cols = sliding_window_view(padded, k, axis=1)
    data = cols @ w
    return GrayImage(np.floor(data + 0.5).clip(0, 255).astype(np.uint8))


def median_blur(img: GrayImage, k: int = 3) -> GrayImage:
    """k x k window median with edge replication."""
    if k < 1 or k % 2 == 0:
        raise EvenKernel(f"kernel width must be odd, got {k}")
    if k == 1:
        return img
    half = k // 2
    padded = np.pad(img.data, half, mode="edge")
    windows = sliding_window_view(padded, (k, k))
    med = np.median(windows, axis=(2, 3))
    return GrayImage(med.astype(np.uint8))


def otsu_threshold(img: GrayImage):
    """Threshold maximizing the between-class variance of the 256-bin
    histogram; ties resolve to the smallest threshold.  Comparisons are done
    on exact integer cross-products, so the argmax is exact.

    Returns (t, mask) with mask = intensity >= t.
    """
    hist = np.bincount(img.data.ravel(), minlength=256).astype(np.int64)
    total = int(img.data.size)
    if int(np.count_nonzero(hist)) < 2:
        raise DegenerateImage("image has a single intensity")
    csum = np.cumsum(hist)
    isum = np.cumsum(hist * np.arange(256, dtype=np.int64))
    grand = int(isum[-1])
    best_t = None
    best_num = 0
    best_den = 1
    for t in range(1, 256):
        n0 = int(csum[t - 1])
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        s0 = int(isum[t - 1])
        s1 = grand - s0
        num = (s0 * n1 - s1 * n0) ** 2   # exact python ints
        den = n0 * n1
        if best_t is None or num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t, BinaryMask(img.data >= best_t)


# ---------------------------------------------------------------------------
# recipes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PostprocRecipe:
    """Ordered (name, params) steps ending in a binarizing step."""

    steps: tuple

    def __post_init__(self):
        if not self.steps:
            raise ValidationError("recipe must contain at least one step")
        for name, _ in self.steps:
            if name not in _STEP_NAMES:
                raise ValidationError(f"unknown recipe step {name!r}")
        if self.steps[-1][0] not in _BINARIZING:
            raise ValidationError("recipe must end with a binarizing step")

    def apply(self, img: GrayImage) -> BinaryMask:
        current = img
        for name, params in self.steps:
            if name == "fixed_threshold":
                current = threshold(_as_gray(current), int(params[0]))
            elif name == "fill_holes":
                current = fill_holes(_as_mask(current))
            elif name == "gaussian":
                current = gaussian_blur(_as_gray(current), int(params[0]), float(params[1]))
            elif name == "median":
                k = int(params[0]) if params else 3
                current = median_blur(_as_gray(current), k)
            elif name == "otsu":
                _, current = otsu_threshold(_as_gray(current))
        return current


def _as_gray(x) -> GrayImage:
    return x.to_gray() if isinstance(x, BinaryMask) else x


def _as_mask(x) -> BinaryMask:
    if isinstance(x, BinaryMask):
        return x
    raise ValidationError("fill_holes needs a binary mask; binarize first")


ALPORAS = PostprocRecipe(
    (
        ("fixed_threshold", (116,)),
        ("fill_holes", ()),
        ("gaussian", (5, 20.0)),
        ("otsu", ()),
    )
)

DIGITALROCK = PostprocRecipe(
    (
        ("median", (3,)),
        ("otsu", ()),
    )
)

PRESETS = {"alporas": ALPORAS, "digitalrock": DIGITALROCK}


def load_recipe(spec: str) -> PostprocRecipe:
    """Resolve a preset name or parse a recipe file.

    File format: one `name=arg1,arg2` line per step, UTF-8, `#` comments.
    """
    if spec in PRESETS:
        return PRESETS[spec]
    import os

    if not os.path.isfile(spec):
        raise ValidationError(f"recipe {spec!r}: not a preset and not a file")
    steps = []
    with open(spec, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"recipe line {line!r}: expected name=args")
            name, _, args = line.partition("=")
            name = name.strip()
            params = tuple(float(a) for a in args.split(",") if a.strip())
            steps.append((name, params))
    return PostprocRecipe(tuple(steps))


def apply_recipe(img: GrayImage, recipe) -> BinaryMask:
    if isinstance(recipe, str):
        recipe = load_recipe(recipe)
    if not isinstance(recipe, PostprocRecipe):
        raise UnsupportedFormat("expected a PostprocRecipe or preset name")
    return recipe.apply(img)
