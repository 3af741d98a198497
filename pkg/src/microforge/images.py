"""Grayscale image and binary mask types, file I/O, and patch extraction.

All raster data is stored row-major: `GrayImage.data` is a read-only
(height, width) uint8 array, `BinaryMask.data` a bool array of the same
layout with True marking the solid phase (bright pixels).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import (
    CorruptFile,
    NotFound,
    OddDimension,
    PatchTooLarge,
    UnsupportedFormat,
    VersionMismatch,
)
from .rng import RandomStream

PATCHSET_MAGIC = b"MGPT"
PATCHSET_VERSION = 1


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class GrayImage:
    """2D raster of 8-bit intensities (0 = darkest)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise UnsupportedFormat(f"expected a 2D raster, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            raise UnsupportedFormat(f"expected uint8 intensities, got {arr.dtype}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise UnsupportedFormat("image must be at least 1x1")
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class BinaryMask:
    """2D boolean raster; True = solid phase.

    The solid phase corresponds to bright pixels of the source image
    (intensity >= threshold); this convention is carried in `solid_meaning`.
    """

    data: np.ndarray
    solid_meaning: str = "intensity>=threshold"

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise UnsupportedFormat(f"expected a 2D mask, got shape {arr.shape}")
        if arr.dtype != np.bool_:
            arr = arr.astype(bool)
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise UnsupportedFormat("mask must be at least 1x1")
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def solid_fraction(self) -> float:
        return float(self.data.mean())

    def to_gray(self) -> GrayImage:
        return GrayImage(np.where(self.data, 255, 0).astype(np.uint8))


@dataclass(frozen=True)
class PatchSet:
    """Square patches cut from one exemplar, plus the seed that produced them."""

    patches: np.ndarray  # (count, p, p) uint8
    seed: int

    def __post_init__(self):
        arr = np.asarray(self.patches)
        if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
            raise PatchTooLarge(f"expected (count, p, p) patches, got {arr.shape}")
        if arr.shape[0] < 1:
            raise PatchTooLarge("patch count must be >= 1")
        if arr.dtype != np.uint8:
            arr = arr.astype(np.uint8)
        object.__setattr__(self, "patches", _frozen(arr))
        object.__setattr__(self, "seed", int(self.seed) & 0xFFFFFFFFFFFFFFFF)

    @property
    def count(self) -> int:
        return self.patches.shape[0]

    @property
    def patch_size(self) -> int:
        return self.patches.shape[1]

    def patch(self, i: int) -> GrayImage:
        return GrayImage(self.patches[i])


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------


def load_image(path) -> GrayImage:
    """Load an 8-bit grayscale PNG or binary PGM (P5, maxval 255).

    Color, palette, alpha, and 16-bit inputs are rejected rather than
    silently converted.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise NotFound(path)
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"P5":
        return GrayImage(_read_pgm(path))
    if head == b"\x89P":
        with Image.open(path) as img:
            if img.format != "PNG":
                raise UnsupportedFormat(f"{path}: not a PNG despite PNG signature")
            if img.mode != "L":
                raise UnsupportedFormat(
                    f"{path}: PNG mode {img.mode!r}; only 8-bit grayscale (mode 'L') is supported"
                )
            arr = np.asarray(img, dtype=np.uint8)
        return GrayImage(arr)
    raise UnsupportedFormat(f"{path}: unrecognized format (need grayscale PNG or P5 PGM)")


def save_image(img, path) -> None:
    """Write a GrayImage or BinaryMask as PNG or PGM, chosen by extension."""
    if isinstance(img, BinaryMask):
        img = img.to_gray()
    path = os.fspath(path)
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pgm":
        _write_pgm(img.data, path)
    elif ext == ".png":
        Image.fromarray(img.data, mode="L").save(path, format="PNG")
    else:
        raise UnsupportedFormat(f"{path}: use a .png or .pgm extension")


def _read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    pos = 0

    def token():
        nonlocal pos
        while pos < len(raw):
            if raw[pos : pos + 1].isspace():
                pos += 1
            elif raw[pos : pos + 1] == b"#":
                while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                    pos += 1
            else:
                break
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise CorruptFile(f"{path}: truncated PGM header")
        return raw[start:pos]

    magic = token()
    if magic != b"P5":
        raise UnsupportedFormat(f"{path}: only binary (P5) PGM is supported")
    try:
        width = int(token())
        height = int(token())
        maxval = int(token())
    except ValueError as exc:
        raise CorruptFile(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise UnsupportedFormat(f"{path}: PGM maxval {maxval}; only 8-bit (255) supported")
    pos += 1  # single whitespace byte after maxval
    payload = raw[pos : pos + width * height]
    if len(payload) != width * height:
        raise CorruptFile(f"{path}: PGM payload truncated")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width)


def _write_pgm(arr: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


# ---------------------------------------------------------------------------
# patch extraction
# ---------------------------------------------------------------------------


def extract_patches(img: GrayImage, patch_size: int, count: int, seed: int) -> PatchSet:
    """Cut `count` random square windows from `img`, corners uniform, with
    replacement.  The same (img, patch_size, count, seed) always yields a
    bit-identical PatchSet.
    """
    patch_size = int(patch_size)
    count = int(count)
    if patch_size < 1:
        raise PatchTooLarge("patch_size must be >= 1")
    if patch_size > min(img.height, img.width):
        raise PatchTooLarge(
            f"patch_size {patch_size} exceeds image extent {img.height}x{img.width}"
        )
    if count < 1:
        raise PatchTooLarge("count must be >= 1")
    stream = RandomStream(seed)
    rows = stream.integers(img.height - patch_size + 1, (count,))
    cols = stream.integers(img.width - patch_size + 1, (count,))
    out = np.empty((count, patch_size, patch_size), dtype=np.uint8)
    src = img.data
    for i in range(count):
        r, c = int(rows[i]), int(cols[i])
        out[i] = src[r : r + patch_size, c : c + patch_size]
    return PatchSet(out, seed)


def subsample_stride2(img: GrayImage) -> GrayImage:
    """Keep every second pixel along each axis: out(i, j) = in(2i, 2j)."""
    if img.height % 2 or img.width % 2:
        raise OddDimension(f"dimensions must be even, got {img.height}x{img.width}")
    return GrayImage(img.data[0::2, 0::2].copy())


# ---------------------------------------------------------------------------
# PatchSet container (magic "MGPT")
# ---------------------------------------------------------------------------


def save_patches(patches: PatchSet, path) -> None:
    """Container layout: magic, u32 version, u32 patch_size, u32 count,
    u64 seed (little-endian), then count*p*p raw bytes."""
    header = PATCHSET_MAGIC + struct.pack(
        "<IIIQ", PATCHSET_VERSION, patches.patch_size, patches.count, patches.seed
    )
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(patches.patches.tobytes())
    os.replace(tmp, path)


def load_patches(path) -> PatchSet:
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise NotFound(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 24 or raw[:4] != PATCHSET_MAGIC:
        raise CorruptFile(f"{path}: not a patch container")
    version, patch_size, count, seed = struct.unpack("<IIIQ", raw[4:24])
    if version != PATCHSET_VERSION:
        raise VersionMismatch(f"{path}: container version {version}, expected {PATCHSET_VERSION}")
    need = count * patch_size * patch_size
    payload = raw[24 : 24 + need]
    if len(payload) != need:
        raise CorruptFile(f"{path}: payload truncated ({len(payload)} of {need} bytes)")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(count, patch_size, patch_size)
    return PatchSet(arr.copy(), seed)
