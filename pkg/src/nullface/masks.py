"""Region masks from segmentation label maps.

Label codes (fixed 9-code face-parsing vocabulary):

    0 background, 1 skin, 2 left eye, 3 right eye, 4 nose,
    5 mouth+lips, 6 brows, 7 hair, 8 ears

Presets cover the standard visibility configurations: the whole face, or
the face with selected regions kept at reconstruction. Hair and
background are never anonymized by presets.

Masks live at latent resolution. Mask values are quantized to the 2^-24
grid so that complement (1 - M) is an exact involution in float32.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataCorruptionError, ValidationError

CODES = {
    "background": 0,
    "skin": 1,
    "left_eye": 2,
    "right_eye": 3,
    "nose": 4,
    "mouth": 5,
    "brows": 6,
    "hair": 7,
    "ears": 8,
}
CODE_NAMES = {v: k for k, v in CODES.items()}

# Facial regions: everything a whole-face preset anonymizes. Hair and
# background stay untouched.
FACE_REGIONS = frozenset({1, 2, 3, 4, 5, 6, 8})

_EYES = frozenset({CODES["left_eye"], CODES["right_eye"]})

# preset name -> set of kept (visible) region codes
PRESET_KEEP: dict[str, frozenset[int]] = {
    "whole-face": frozenset(),
    "keep-eyes": _EYES,
    "keep-mouth": frozenset({CODES["mouth"]}),
    "keep-eyes-mouth": _EYES | {CODES["mouth"]},
    "keep-nose": frozenset({CODES["nose"]}),
    "keep-nose-mouth": frozenset({CODES["nose"], CODES["mouth"]}),
    "keep-eyes-nose": _EYES | {CODES["nose"]},
}
PRESET_NAMES = tuple(PRESET_KEEP)

_GRID = float(2**24)


@dataclass(frozen=True)
class SegmentationMap:
    """Label grid at image resolution, one code per cell."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ValidationError(f"label map must be 2-d, got shape {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            raise ValidationError("label map must be integer-typed")
        bad = set(np.unique(labels)) - set(CODE_NAMES)
        if bad:
            raise ValidationError(f"unknown region codes in label map: {sorted(bad)}")
        labels = labels.astype(np.uint8)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


@dataclass(frozen=True)
class RegionMask:
    """Soft mask in [0, 1] at latent resolution."""

    values: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ValidationError(f"mask must be 2-d, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)) or vals.min() < 0.0 or vals.max() > 1.0:
            raise ValidationError("mask entries must be finite and inside [0, 1]")
        vals = (np.round(vals * _GRID) / _GRID).astype(np.float32)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def full_mask(shape, value: float = 1.0, provenance: str = "constant") -> RegionMask:
    """Constant mask; shape may be (H, W) or a (C, H, W) latent shape."""
    if len(shape) == 3:
        shape = shape[1:]
    return RegionMask(np.full(shape, value, dtype=np.float64), provenance=provenance)


def _fractional_block_mean(img: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """Exact area-average downsampling with fractional block boundaries.

    Linear interpolation of the cumulative sum evaluates the exact integral
    of the piecewise-constant pixel function, so the global mean is
    preserved to float64 round-off for any size ratio.
    """
    h, w = img.shape
    oh, ow = out_shape

    def reduce_axis(a: np.ndarray, n_out: int) -> np.ndarray:
        n_in = a.shape[0]
        cum = np.concatenate([np.zeros((1,) + a.shape[1:]), np.cumsum(a, axis=0)])
        bounds = np.linspace(0.0, n_in, n_out + 1)
        lo = np.minimum(bounds.astype(int), n_in)
        frac = bounds - lo
        vals = cum[lo] + frac.reshape((-1,) + (1,) * (a.ndim - 1)) * a[np.minimum(lo, n_in - 1)]
        return np.diff(vals, axis=0)

    sums = reduce_axis(reduce_axis(img.astype(np.float64), oh).T, ow).T
    return sums / ((h / oh) * (w / ow))


def mask_from_regions(seg: SegmentationMap, anonymize, keep, latent_shape) -> RegionMask:
    """Binary image-resolution mask (1 on anonymized regions) area-averaged
    down to latent resolution."""
    anonymize = frozenset(int(c) for c in anonymize)
    keep = frozenset(int(c) for c in keep)
    unknown = (anonymize | keep) - set(CODE_NAMES)
    if unknown:
        raise ValidationError(f"unknown region codes: {sorted(unknown)}")
    overlap = anonymize & keep
    if overlap:
        raise ValidationError(f"anonymize and keep sets overlap on codes {sorted(overlap)}")
    image_mask = np.isin(seg.labels, sorted(anonymize)).astype(np.float64)
    if image_mask.sum() == 0.0:
        warnings.warn("empty mask: no pixels carry the anonymized region codes",
                      stacklevel=2)
    if len(latent_shape) == 3:
        latent_shape = latent_shape[1:]
    latent = _fractional_block_mean(image_mask, tuple(latent_shape))
    prov = (f"regions(anonymize={sorted(anonymize)}, keep={sorted(keep)})")
    return RegionMask(latent, provenance=prov)


def preset_mask(seg: SegmentationMap, preset: str, latent_shape) -> RegionMask:
    if preset not in PRESET_KEEP:
        raise ValidationError(f"unknown mask preset {preset!r}; "
                              f"expected one of {sorted(PRESET_KEEP)}")
    keep = PRESET_KEEP[preset]
    mask = mask_from_regions(seg, FACE_REGIONS - keep, keep, latent_shape)
    return RegionMask(mask.values, provenance=f"preset:{preset}")


def complement(mask: RegionMask) -> RegionMask:
    vals = 1.0 - mask.values.astype(np.float64)
    return RegionMask(vals, provenance=f"complement({mask.provenance})")


def save_mask_file(mask: RegionMask, path) -> Path:
    """Write as an 8-bit single-channel image (PNG, or raw PGM for .pgm)."""
    path = Path(path)
    arr = np.rint(mask.values.astype(np.float64) * 255.0).astype(np.uint8)
    if path.suffix.lower() in (".pgm", ".pnm"):
        h, w = arr.shape
        path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + arr.tobytes())
    else:
        Image.fromarray(arr, mode="L").save(path, format="PNG")
    return path


def load_mask_file(path, expected_shape=None) -> RegionMask:
    """Load an 8-bit single-channel mask image; 255 maps to 1.0 linearly."""
    path = Path(path)
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise DataCorruptionError(f"cannot decode mask file {path}: {exc}") from exc
    if img.mode != "L":
        raise ValidationError(f"mask file must be single-channel 8-bit, got mode {img.mode!r}")
    arr = np.asarray(img)
    if expected_shape is not None and arr.shape != tuple(expected_shape):
        raise ValidationError(
            f"mask file has shape {arr.shape}, expected {tuple(expected_shape)}")
    return RegionMask(arr.astype(np.float64) / 255.0, provenance=f"file:{path.name}")


def preset_fixture_bytes() -> bytes:
    """Canonical JSON export of the preset algebra, shared with the
    browser console so both sides provably agree byte-for-byte."""
    import json
    payload = {
        "codes": dict(sorted(CODES.items())),
        "face_regions": sorted(FACE_REGIONS),
        "presets": {name: {"anonymize": sorted(FACE_REGIONS - keep),
                           "keep": sorted(keep)}
                    for name, keep in sorted(PRESET_KEEP.items())},
    }
    return (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode("utf-8")


_SEG_PALETTE = [
    (0, 0, 0), (224, 172, 138), (64, 128, 255), (96, 160, 255), (240, 130, 100),
    (200, 40, 60), (110, 70, 30), (70, 40, 20), (250, 200, 160),
]


def save_segmentation(seg: SegmentationMap, path) -> Path:
    path = Path(path)
    img = Image.fromarray(seg.labels, mode="P")
    palette = []
    for rgb in _SEG_PALETTE:
        palette.extend(rgb)
    img.putpalette(palette)
    img.save(path, format="PNG")
    return path


def load_segmentation(path, sidecar=None) -> SegmentationMap:
    """Read a palette-indexed (or grayscale-coded) label map.

    A sidecar text file of `src = code` lines remaps foreign palette
    indices onto the 9-code vocabulary.
    """
    path = Path(path)
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise DataCorruptionError(f"cannot decode segmentation {path}: {exc}") from exc
    if img.mode not in ("P", "L"):
        raise ValidationError(
            f"segmentation must be palette-indexed or single-channel, got {img.mode!r}")
    labels = np.asarray(img).astype(np.int64)
    if sidecar is not None:
        mapping = {}
        for line in Path(sidecar).read_text(encoding="utf-8").splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            src, _, dst = line.partition("=")
            try:
                mapping[int(src.strip())] = int(dst.strip())
            except ValueError as exc:
                raise DataCorruptionError(f"bad sidecar line {line!r}") from exc
        remapped = np.zeros_like(labels)
        for src, dst in mapping.items():
            remapped[labels == src] = dst
        labels = remapped
    return SegmentationMap(labels)
