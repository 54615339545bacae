"""Identity-embedding lifecycle and the decoupled-attention combine.

Embeddings extracted from an embedder plugin are unit-normalized so the
anonymization strength parameter is comparable across subjects. The null
condition is the all-zero vector flagged is_null; it feeds the
unconditional denoising path.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import PluginError, ValidationError
from .validation import check_range


@dataclass(frozen=True)
class IdentityEmbedding:
    vector: np.ndarray
    is_null: bool = False

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float32).reshape(-1)
        if not np.all(np.isfinite(vec)):
            raise ValidationError("embedding vector contains non-finite values")
        if self.is_null and np.any(vec != 0.0):
            raise ValidationError("null embedding must be the all-zero vector")
        vec.setflags(write=False)
        object.__setattr__(self, "vector", vec)

    @property
    def dim(self) -> int:
        return int(self.vector.size)

    @property
    def fingerprint(self) -> str:
        payload = (b"null:" if self.is_null else b"vec:") + self.vector.tobytes()
        return hashlib.sha256(payload).hexdigest()


def null_embedding(dim: int) -> IdentityEmbedding:
    """The null condition: zero image-branch context of the given dimension."""
    dim = check_range(dim, "dim", low=1, integer=True)
    return IdentityEmbedding(np.zeros(dim, dtype=np.float32), is_null=True)


@dataclass(frozen=True)
class AdapterParams:
    """Image-branch scaling of the decoupled attention combine."""

    lambda_img: float = 1.0
    projection_fingerprint: str = ""

    def __post_init__(self):
        check_range(self.lambda_img, "lambda_img", low=0.0)


def extract_embedding(image, embedder) -> IdentityEmbedding:
    """Run the identity-embedder plugin and unit-normalize its output.

    The plugin may raise FaceNotFoundError; a zero vector is rejected here
    rather than silently normalized.
    """
    raw = np.asarray(embedder(image), dtype=np.float32).reshape(-1)
    if raw.size == 0 or not np.all(np.isfinite(raw)):
        raise PluginError(f"embedder {getattr(embedder, 'name', embedder)!r} "
                          "returned an empty or non-finite vector")
    norm = float(np.linalg.norm(raw))
    if norm == 0.0:
        raise PluginError("embedder returned a zero vector; refusing to normalize")
    return IdentityEmbedding(raw / norm, is_null=False)


def negate_scale(e: IdentityEmbedding, lambda_id: float) -> IdentityEmbedding:
    """Scale by lambda_id >= 0 and negate: the anonymizing condition -lambda_id * e."""
    if e.is_null:
        raise ValidationError("cannot negate the null embedding")
    lambda_id = check_range(lambda_id, "lambda_id", low=0.0)
    return IdentityEmbedding((-lambda_id) * e.vector, is_null=False)


def scale(e: IdentityEmbedding, factor: float) -> IdentityEmbedding:
    """Positive-signed scaling (used by the identity-recovery attack)."""
    if e.is_null:
        raise ValidationError("cannot scale the null embedding")
    factor = check_range(factor, "factor", low=0.0)
    return IdentityEmbedding(factor * e.vector, is_null=False)


def _attention(q: np.ndarray, keys: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Scaled dot-product attention, single head, float64 internals."""
    if q.shape[-1] != keys.shape[-1]:
        raise ValidationError(
            f"query dim {q.shape[-1]} does not match key dim {keys.shape[-1]}")
    logits = (q @ keys.T) / np.sqrt(q.shape[-1])
    logits -= logits.max(axis=-1, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=-1, keepdims=True)
    return weights @ values


def decoupled_attention(query_features, text_context, image_context,
                        params: AdapterParams) -> np.ndarray:
    """Combine text and image cross-attention:

        Attention(Q, K_text, V_text) + lambda_img * Attention(Q, K_img, V_img)

    Contexts are (keys, values) pairs already projected by the backbone's
    fixed K/V maps. A None image context contributes nothing.
    """
    q = np.atleast_2d(np.asarray(query_features, dtype=np.float64))
    k_text, v_text = (np.atleast_2d(np.asarray(m, dtype=np.float64)) for m in text_context)
    out = _attention(q, k_text, v_text)
    if image_context is not None and params.lambda_img != 0.0:
        k_img, v_img = (np.atleast_2d(np.asarray(m, dtype=np.float64)) for m in image_context)
        out = out + params.lambda_img * _attention(q, k_img, v_img)
    return out
