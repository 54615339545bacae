"""Sklearn-style estimator wrapping the invert/anonymize pipeline.

`FaceAnonymizer.fit` computes (and caches) the inversion of each input
image; `transform` re-denoises under the configured identity guidance.
All hyperparameters are plain constructor args, so the estimator
composes with `sklearn.base.clone` and grid-style sweeps.
"""

from __future__ import annotations

import hashlib

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .backbones import resolve_plugin
from .conditioning import extract_embedding
from .denoiser import AnonymizationConfig, anonymize
from .errors import ValidationError
from .inversion import invert
from .masks import preset_mask
from .schedule import default_schedule
from .validation import check_image


def _image_key(image: np.ndarray) -> str:
    digest = hashlib.sha256()
    digest.update(str(image.shape).encode())
    digest.update(image.tobytes())
    return digest.hexdigest()


def image_seed(base_seed: int, image: np.ndarray) -> int:
    """Stable per-image inversion seed independent of batch order."""
    mix = int.from_bytes(hashlib.sha256(_image_key(image).encode()).digest()[:6], "big")
    return (int(base_seed) + mix) % (2**62)


def _as_image_list(X) -> list[np.ndarray]:
    if isinstance(X, np.ndarray) and X.ndim == 3:
        X = [X]
    return [check_image(img) for img in X]


class FaceAnonymizer(BaseEstimator, TransformerMixin):
    """Training-free face anonymizer with an estimator interface.

    Parameters mirror the sampler configuration; defaults are the
    standard evaluation settings. `backend`/`backend_seed` select and
    seed the denoising backbone plugin.
    """

    def __init__(self, steps: int = 100, t_skip: int = 70, lambda_id: float = 1.0,
                 lambda_cfg: float = 10.0, lambda_img: float = 1.0,
                 mask_preset: str = "keep-eyes-mouth", mask_start: int = 80,
                 seed: int = 0, backend: str = "toy-pointwise", backend_seed: int = 0,
                 variant: str = "ddpm", lean_records: bool = False):
        self.steps = steps
        self.t_skip = t_skip
        self.lambda_id = lambda_id
        self.lambda_cfg = lambda_cfg
        self.lambda_img = lambda_img
        self.mask_preset = mask_preset
        self.mask_start = mask_start
        self.seed = seed
        self.backend = backend
        self.backend_seed = backend_seed
        self.variant = variant
        self.lean_records = lean_records

    # -- plugin stack -----------------------------------------------------

    def _build_stack(self):
        """(Re)build plugins and schedule; cheap, so rerun whenever the
        stack-determining parameters may have changed via set_params."""
        stack_key = (self.steps, self.variant, self.backend, self.backend_seed)
        if getattr(self, "_stack_key_", None) == stack_key:
            return
        self.backbone_ = resolve_plugin("backbone", self.backend, seed=self.backend_seed)
        self.codec_ = resolve_plugin("codec", "toy-codec")
        self.embedder_ = resolve_plugin("embedder", "toy-stats")
        self.parser_ = resolve_plugin("parser", "toy-geometric")
        self.schedule_ = default_schedule(self.steps, variant=self.variant)
        self._stack_key_ = stack_key

    def config(self) -> AnonymizationConfig:
        return AnonymizationConfig(
            T=self.steps, t_skip=self.t_skip, lambda_id=self.lambda_id,
            lambda_cfg=self.lambda_cfg, lambda_img=self.lambda_img,
            mask_preset=self.mask_preset, mask_start=self.mask_start, seed=self.seed)

    # -- estimator API ----------------------------------------------------

    def fit(self, X, y=None):
        """Invert every input image and cache the records."""
        self._build_stack()
        self.config()  # validate parameter ranges eagerly
        self.records_ = {}
        self.images_ = {}
        for img in _as_image_list(X):
            self._record_for(img)
        return self

    def _record_for(self, img: np.ndarray):
        # keyed by everything the inversion depends on, so changing only
        # denoise-phase parameters never re-inverts
        key = (_image_key(img), self.steps, self.seed, self.backend,
               self.backend_seed, self.variant, self.lean_records)
        if key not in self.records_:
            latent = self.codec_.encode(img)
            self.records_[key] = invert(
                latent, self.backbone_, self.schedule_,
                seed=image_seed(self.seed, img), lean=self.lean_records)
            self.images_[key] = img
        return self.records_[key]

    def transform(self, X) -> np.ndarray:
        """Anonymize images; inversions are reused when already fitted."""
        if not hasattr(self, "records_"):
            raise ValidationError("estimator is not fitted; call fit first")
        self._build_stack()
        cfg = self.config()
        outputs = []
        for img in _as_image_list(X):
            rec = self._record_for(img)
            seg = self.parser_(img)
            mask_user = preset_mask(seg, self.mask_preset, rec.latent_shape)
            mask_face = preset_mask(seg, "whole-face", rec.latent_shape)
            embedding = extract_embedding(img, self.embedder_)
            latent = anonymize(rec, cfg, mask_user, mask_face, embedding,
                               self.backbone_, self.schedule_)
            outputs.append(self.codec_.decode(latent))
        return np.stack(outputs)

    def reconstruct(self, X) -> np.ndarray:
        """Decode the stored reconstructions (the lambda_cfg = 0 limit)."""
        if not hasattr(self, "records_"):
            raise ValidationError("estimator is not fitted; call fit first")
        self._build_stack()
        return np.stack([self.codec_.decode(self._record_for(img).x0)
                         for img in _as_image_list(X)])

    def embedding_of(self, image: np.ndarray):
        self._build_stack()
        return extract_embedding(image, self.embedder_)
