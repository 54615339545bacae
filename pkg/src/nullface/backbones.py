"""Plugin contracts plus deterministic toy implementations.

A backbone is callable as `backbone(x, t, cond, params)` and returns a
noise prediction of the same shape as x. Plugins additionally expose
name, fingerprint, latent_shape (None = any), embedding_dim,
deterministic, and max_concurrency.

Two toy backbones ship with the package:

  * toy-pointwise: each output cell is a per-channel affine function of
    the same input cell and the conditioning inner product, so mask
    locality and guidance algebra are exact.
  * toy-attention: a frozen two-layer network whose second layer is the
    decoupled text/image cross-attention combine.

Both are pure, reentrant, and bit-deterministic. External pretrained
stacks attach through JSON manifests (see register_external_backend);
no weights ship with the repo.
"""

from __future__ import annotations

import importlib
import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np

from . import rng
from .conditioning import AdapterParams, IdentityEmbedding, decoupled_attention
from .errors import PluginError, ValidationError
from .masks import CODES, SegmentationMap
from .validation import as_latent, check_image

MANIFEST_KINDS = ("backbone", "codec", "embedder", "parser", "scorer")
_MAX_CHANNELS = 64
PLUGIN_PATH_ENV = "NULLFACE_PLUGIN_PATH"


@runtime_checkable
class Backbone(Protocol):
    name: str
    fingerprint: str
    embedding_dim: int
    deterministic: bool

    def __call__(self, x: np.ndarray, t: int, cond: IdentityEmbedding | None,
                 params: AdapterParams) -> np.ndarray: ...


def _cond_vector(cond: IdentityEmbedding | None, dim: int) -> np.ndarray:
    if cond is None:
        return np.zeros(dim, dtype=np.float64)
    vec = np.asarray(cond.vector, dtype=np.float64)
    if vec.size != dim:
        raise PluginError(f"embedding dim {vec.size} does not match backbone dim {dim}")
    return vec


class ToyPointwiseBackbone:
    """eps[c, i, j] = a_c(t) * x[c, i, j] + b_c(t) * lambda_img * <w, cond>.

    Strictly pointwise in x, linear in the conditioning vector.
    """

    latent_shape = None
    deterministic = True
    max_concurrency = None

    def __init__(self, seed: int = 0, embedding_dim: int = 16,
                 x_gain: float = 0.2, cond_gain: float = 0.35):
        g = rng.aux_generator(seed, 0)
        self._a = x_gain * g.standard_normal(_MAX_CHANNELS)
        self._b = cond_gain * (0.5 + g.random(_MAX_CHANNELS))
        self._w = g.standard_normal(embedding_dim)
        self.seed = int(seed)
        self.embedding_dim = int(embedding_dim)
        self.name = "toy-pointwise"
        self.fingerprint = f"toy-pointwise:v1:seed={seed}:dim={embedding_dim}"

    def _time_factor(self, t: int) -> float:
        return 1.0 / (1.0 + 0.01 * t)

    def __call__(self, x, t, cond, params: AdapterParams) -> np.ndarray:
        x = np.asarray(x, dtype=np.float32)
        channels = x.shape[0]
        if channels > _MAX_CHANNELS:
            raise PluginError(f"toy backbone supports at most {_MAX_CHANNELS} channels")
        proj = float(self._w @ _cond_vector(cond, self.embedding_dim))
        tf = self._time_factor(int(t))
        a = (self._a[:channels] * tf).astype(np.float32).reshape(-1, 1, 1)
        b = (self._b[:channels] * tf * params.lambda_img * proj).astype(np.float32)
        return a * x + b.reshape(-1, 1, 1)


class ToyAttentionBackbone:
    """Two frozen layers: a pointwise tanh featurizer, then the decoupled
    text/image cross-attention combine projected back to channels."""

    latent_shape = None
    deterministic = True
    max_concurrency = None

    def __init__(self, seed: int = 0, embedding_dim: int = 16, d_model: int = 8,
                 n_text_tokens: int = 4, n_image_tokens: int = 2,
                 out_gain: float = 0.45):
        g = rng.aux_generator(seed, 1)
        self._w_in = g.standard_normal((d_model, _MAX_CHANNELS)) / np.sqrt(_MAX_CHANNELS)
        self._u_time = 0.3 * g.standard_normal((d_model, 2))
        # Frozen "empty prompt" context and its K/V projections.
        self._k_text = g.standard_normal((n_text_tokens, d_model))
        self._v_text = g.standard_normal((n_text_tokens, d_model))
        self._p_key = g.standard_normal((n_image_tokens * d_model, embedding_dim))
        self._p_val = (g.standard_normal((n_image_tokens * d_model, embedding_dim))
                       / np.sqrt(embedding_dim))
        self._w_out = out_gain * g.standard_normal((_MAX_CHANNELS, d_model)) / np.sqrt(d_model)
        self._skip = 0.15 * g.standard_normal(_MAX_CHANNELS)
        self._d_model = d_model
        self._n_image_tokens = n_image_tokens
        self.seed = int(seed)
        self.embedding_dim = int(embedding_dim)
        self.name = "toy-attention"
        self.fingerprint = (f"toy-attention:v1:seed={seed}:dim={embedding_dim}"
                            f":d={d_model}")

    def __call__(self, x, t, cond, params: AdapterParams) -> np.ndarray:
        x = np.asarray(x, dtype=np.float32)
        channels, h, w = x.shape
        if channels > _MAX_CHANNELS:
            raise PluginError(f"toy backbone supports at most {_MAX_CHANNELS} channels")
        cvec = _cond_vector(cond, self.embedding_dim)
        feats = x.reshape(channels, -1).T.astype(np.float64)
        tau = np.array([np.sin(0.07 * t), np.cos(0.07 * t)])
        q = np.tanh(feats @ self._w_in[:, :channels].T + self._u_time @ tau)
        k_img = (self._p_key @ cvec).reshape(self._n_image_tokens, self._d_model)
        v_img = (self._p_val @ cvec).reshape(self._n_image_tokens, self._d_model)
        z = decoupled_attention(q, (self._k_text, self._v_text), (k_img, v_img), params)
        out = z @ self._w_out[:channels].T
        out = out.T.reshape(channels, h, w)
        return (out + self._skip[:channels].reshape(-1, 1, 1) * x).astype(np.float32)


class ToyCodec:
    """Exact identity mapping between an 8-bit RGB image grid and a
    (3, H, W) float latent in [-1, 1]."""

    name = "toy-codec"
    fingerprint = "toy-codec:v1"
    deterministic = True
    scale_factor = 1.0

    def encode(self, image) -> np.ndarray:
        image = check_image(image, "image")
        latent = image.astype(np.float32) / 127.5 - 1.0
        return np.transpose(latent, (2, 0, 1))

    def decode(self, latent) -> np.ndarray:
        latent = as_latent(latent, "latent")
        if latent.shape[0] != 3:
            raise ValidationError(f"toy codec decodes 3-channel latents, got {latent.shape}")
        img = (np.transpose(latent, (1, 2, 0)).astype(np.float64) + 1.0) * 127.5
        return np.clip(np.rint(img), 0, 255).astype(np.uint8)


class ToyStatsEmbedder:
    """Seeded projection of patchwise pixel statistics (means and stds
    over a 4x4 patch grid, per channel)."""

    deterministic = True

    def __init__(self, seed: int = 0, dim: int = 16, grid: int = 4):
        self._grid = grid
        n_feats = grid * grid * 3 * 2
        g = rng.aux_generator(seed, 2)
        self._proj = g.standard_normal((dim, n_feats)) / np.sqrt(n_feats)
        self.dim = int(dim)
        self.seed = int(seed)
        self.name = "toy-stats"
        self.fingerprint = f"toy-stats:v1:seed={seed}:dim={dim}:grid={grid}"

    def __call__(self, image) -> np.ndarray:
        image = check_image(image, "image")
        scaled = image.astype(np.float64) / 255.0
        feats = []
        for rows in np.array_split(scaled, self._grid, axis=0):
            for patch in np.array_split(rows, self._grid, axis=1):
                flat = patch.reshape(-1, 3)
                feats.extend(flat.mean(axis=0))
                feats.extend(flat.std(axis=0))
        return self._proj @ np.asarray(feats)


class ToyGeometricParser:
    """Face parser stand-in: a fixed geometric layout (ellipse face, disk
    eyes, triangle nose, box mouth, plus hair/brows/ears) covering the
    full 9-code vocabulary."""

    name = "toy-geometric"
    fingerprint = "toy-geometric:v1"
    deterministic = True

    def __call__(self, image) -> SegmentationMap:
        image = check_image(image, "image")
        h, w = image.shape[:2]
        yy, xx = np.mgrid[0:h, 0:w]
        cy, cx = h / 2.0, w / 2.0
        labels = np.zeros((h, w), dtype=np.uint8)

        outer = ((yy - cy) / (0.46 * h)) ** 2 + ((xx - cx) / (0.40 * w)) ** 2 <= 1.0
        face = ((yy - cy) / (0.38 * h)) ** 2 + ((xx - cx) / (0.30 * w)) ** 2 <= 1.0
        labels[outer & (yy < cy - 0.22 * h)] = CODES["hair"]
        labels[face] = CODES["skin"]
        labels[face & (yy < cy - 0.30 * h)] = CODES["hair"]

        ear_y = np.abs(yy - cy) < 0.08 * h
        labels[ear_y & (np.abs(xx - (cx - 0.33 * w)) < 0.045 * w) & ~face] = CODES["ears"]
        labels[ear_y & (np.abs(xx - (cx + 0.33 * w)) < 0.045 * w) & ~face] = CODES["ears"]

        eye_y, eye_dx, eye_r = cy - 0.10 * h, 0.13 * w, 0.05 * min(h, w)
        for code, ex in ((CODES["left_eye"], cx - eye_dx), (CODES["right_eye"], cx + eye_dx)):
            labels[(yy - eye_y) ** 2 + (xx - ex) ** 2 <= eye_r**2] = code
            brow = (np.abs(yy - (eye_y - 0.09 * h)) < 0.02 * h) & (np.abs(xx - ex) < 0.07 * w)
            labels[brow & face] = CODES["brows"]

        nose_span = (yy - cy + 0.02 * h) / (0.14 * h)
        nose = (nose_span >= 0) & (nose_span <= 1.0) \
            & (np.abs(xx - cx) <= 0.06 * w * nose_span)
        labels[nose & face] = CODES["nose"]

        mouth = (np.abs(yy - (cy + 0.22 * h)) < 0.035 * h) & (np.abs(xx - cx) < 0.11 * w)
        labels[mouth & face] = CODES["mouth"]
        return SegmentationMap(labels)


class ToyGeometryScorer:
    """Attribute scorer stand-in: pose/gaze pseudo-angles from brightness
    centroids, a small expression coefficient vector, and a sharpness
    quality score."""

    name = "toy-geometry"
    fingerprint = "toy-geometry:v1"
    deterministic = True
    provides = ("pose", "gaze", "expression", "quality")

    def __call__(self, image) -> dict[str, np.ndarray | float]:
        image = check_image(image, "image")
        gray = image.astype(np.float64).mean(axis=2)
        h, w = gray.shape
        total = gray.sum() or 1.0
        yy, xx = np.mgrid[0:h, 0:w]
        cy = (gray * yy).sum() / total / h - 0.5
        cx = (gray * xx).sum() / total / w - 0.5
        top = gray[: h // 2].mean()
        bottom = gray[h // 2:].mean()
        left = gray[:, : w // 2].mean()
        right = gray[:, w // 2:].mean()
        expr = []
        for rows in np.array_split(gray, 2, axis=0):
            for block in np.array_split(rows, 4, axis=1):
                expr.append(block.mean() / 255.0)
        grad = np.abs(np.diff(gray, axis=0)).mean() + np.abs(np.diff(gray, axis=1)).mean()
        return {
            "pose": np.array([90.0 * cx, 90.0 * cy, 45.0 * (left - right) / 255.0]),
            "gaze": np.array([60.0 * cx, 60.0 * (top - bottom) / 255.0]),
            "expression": np.asarray(expr),
            "quality": float(grad),
        }


@dataclass(frozen=True)
class PluginManifest:
    """Text record describing an attachable plugin."""

    name: str
    kind: str
    entry: str
    version: str = "0"
    latent_shape: tuple | None = None
    embedding_dim: int | None = None
    deterministic: bool = True
    max_concurrency: int | None = None
    tolerance: float = 0.0
    kwargs: dict | None = None
    description: str = ""

    @staticmethod
    def from_dict(data: dict) -> "PluginManifest":
        if data.get("kind") not in MANIFEST_KINDS:
            raise PluginError(f"manifest kind {data.get('kind')!r} not one of {MANIFEST_KINDS}")
        for key in ("name", "entry"):
            if not data.get(key):
                raise PluginError(f"manifest missing required field {key!r}")
        shape = data.get("latent_shape")
        return PluginManifest(
            name=data["name"], kind=data["kind"], entry=data["entry"],
            version=str(data.get("version", "0")),
            latent_shape=None if shape is None else tuple(shape),
            embedding_dim=data.get("embedding_dim"),
            deterministic=bool(data.get("deterministic", True)),
            max_concurrency=data.get("max_concurrency"),
            tolerance=float(data.get("tolerance", 0.0)),
            kwargs=data.get("kwargs") or {},
            description=data.get("description", ""),
        )


class _ConcurrencyGate:
    """Wraps a plugin callable with a bounded-concurrency semaphore."""

    def __init__(self, inner, max_concurrency: int):
        self._inner = inner
        self._sem = threading.BoundedSemaphore(max_concurrency)
        for attr in ("name", "fingerprint", "embedding_dim", "deterministic",
                     "latent_shape", "dim", "seed"):
            if hasattr(inner, attr):
                setattr(self, attr, getattr(inner, attr))
        self.max_concurrency = max_concurrency

    def __call__(self, *args, **kwargs):
        with self._sem:
            return self._inner(*args, **kwargs)

    def __getattr__(self, item):
        return getattr(self._inner, item)


def _load_entry(entry: str, kwargs: dict):
    module_name, _, attr = entry.partition(":")
    if not module_name or not attr:
        raise PluginError(f"manifest entry {entry!r} must be 'module:callable'")
    try:
        module = importlib.import_module(module_name)
        factory = getattr(module, attr)
    except (ImportError, AttributeError) as exc:
        raise PluginError(f"cannot load plugin entry {entry!r}: {exc}") from exc
    return factory(**kwargs)


def _probe_backbone(instance, manifest: PluginManifest) -> None:
    shape = manifest.latent_shape or (4, 8, 8)
    dim = manifest.embedding_dim or getattr(instance, "embedding_dim", 16)
    g = rng.aux_generator(0, 3)
    x = g.standard_normal(shape).astype(np.float32)
    cond = IdentityEmbedding(g.standard_normal(dim).astype(np.float32))
    params = AdapterParams(lambda_img=1.0)
    try:
        out1 = np.asarray(instance(x, 1, cond, params))
        out2 = np.asarray(instance(x, 1, cond, params))
    except Exception as exc:
        raise PluginError(f"registration probe failed for {manifest.name!r}: {exc}") from exc
    if out1.shape != x.shape:
        raise PluginError(f"plugin {manifest.name!r} changed latent shape "
                          f"{x.shape} -> {out1.shape}")
    if not np.all(np.isfinite(out1)):
        raise PluginError(f"plugin {manifest.name!r} produced non-finite output")
    diff = float(np.max(np.abs(out1.astype(np.float64) - out2.astype(np.float64))))
    if diff > manifest.tolerance:
        raise PluginError(
            f"plugin {manifest.name!r} is nondeterministic: two identical calls "
            f"differ by {diff} (declared tolerance {manifest.tolerance})")


def register_external_backend(manifest) -> object:
    """Instantiate a plugin from its manifest, smoke-test it, and return a
    handle honoring the declared max concurrency."""
    if isinstance(manifest, (str, Path)):
        manifest = json.loads(Path(manifest).read_text(encoding="utf-8"))
    if isinstance(manifest, dict):
        manifest = PluginManifest.from_dict(manifest)
    instance = _load_entry(manifest.entry, manifest.kwargs or {})
    if manifest.kind == "backbone":
        _probe_backbone(instance, manifest)
    if not hasattr(instance, "fingerprint"):
        instance.fingerprint = f"{manifest.name}:{manifest.version}"
    if manifest.max_concurrency:
        instance = _ConcurrencyGate(instance, manifest.max_concurrency)
    return instance


_BUILTIN_FACTORIES = {
    ("backbone", "toy-pointwise"): ToyPointwiseBackbone,
    ("backbone", "toy-attention"): ToyAttentionBackbone,
    ("codec", "toy-codec"): ToyCodec,
    ("embedder", "toy-stats"): ToyStatsEmbedder,
    ("parser", "toy-geometric"): ToyGeometricParser,
    ("scorer", "toy-geometry"): ToyGeometryScorer,
}


def builtin_names(kind: str) -> list[str]:
    return sorted(name for (k, name) in _BUILTIN_FACTORIES if k == kind)


def _manifest_search_dirs() -> list[Path]:
    raw = os.environ.get(PLUGIN_PATH_ENV, "")
    return [Path(p) for p in raw.split(os.pathsep) if p]


def resolve_plugin(kind: str, name: str, **kwargs):
    """Resolve a plugin by kind and name: builtin first, then manifests on
    the NULLFACE_PLUGIN_PATH search path."""
    factory = _BUILTIN_FACTORIES.get((kind, name))
    if factory is not None:
        return factory(**kwargs)
    for directory in _manifest_search_dirs():
        if not directory.is_dir():
            continue
        for mpath in sorted(directory.glob("*.json")):
            try:
                data = json.loads(mpath.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError):
                continue
            if data.get("kind") == kind and data.get("name") == name:
                return register_external_backend(data)
    raise PluginError(f"no {kind} plugin named {name!r} "
                      f"(builtins: {builtin_names(kind)})")
