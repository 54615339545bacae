"""The anonymizing sampler.

Each conditioned step runs the backbone twice: once with the negated,
scaled identity embedding and once with the null condition. The two
noise predictions are combined by classifier-free guidance,

    eps_hat = lambda_cfg * eps_cond + (1 - lambda_cfg) * eps_uncond,

then composited with the active region mask,

    eps_tilde = M * eps_hat + (1 - M) * eps_uncond,

and the DDPM step is taken with the stored noise map. Identity
conditioning starts after skipping t_skip of the T steps; until
mask_start iterations of the full process have completed the full-face
mask is active, afterwards the user mask takes over (i.e. the user mask
applies to steps t <= T - mask_start).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conditioning import AdapterParams, IdentityEmbedding, negate_scale, null_embedding
from .container import write_container
from .errors import PluginError, ValidationError
from .inversion import InversionRecord, _predict, check_record_compatible
from .masks import RegionMask, full_mask
from .schedule import NoiseSchedule, posterior_mean
from .validation import check_range, check_same_shape


@dataclass(frozen=True)
class AnonymizationConfig:
    """Knobs of the anonymizing sampler; defaults are the standard
    evaluation settings (T=100, t_skip=70, lambda_id=1, lambda_cfg=10,
    eye-and-mouth-revealing mask activated after 80 iterations)."""

    T: int = 100
    t_skip: int = 70
    lambda_id: float = 1.0
    lambda_cfg: float = 10.0
    lambda_img: float = 1.0
    mask_preset: str = "keep-eyes-mouth"
    mask_start: int = 80
    seed: int = 0

    def __post_init__(self):
        check_range(self.T, "T", low=1, integer=True)
        check_range(self.t_skip, "t_skip", low=0, high=self.T, integer=True)
        check_range(self.mask_start, "mask_start", low=0, high=self.T, integer=True)
        check_range(self.lambda_id, "lambda_id", low=0.0)
        check_range(self.lambda_img, "lambda_img", low=0.0)
        check_range(self.lambda_cfg, "lambda_cfg")
        check_range(self.seed, "seed", low=0, integer=True)


@dataclass
class GuidedStepTrace:
    """Per-step observability for tests and debugging."""

    steps: list[dict] = field(default_factory=list)

    def record(self, t: int, eps_cond, eps_uncond, eps_hat, eps_tilde,
               mask_active: bool) -> None:
        self.steps.append({
            "t": t, "eps_cond": eps_cond, "eps_uncond": eps_uncond,
            "eps_hat": eps_hat, "eps_tilde": eps_tilde, "mask_active": mask_active,
        })

    def save(self, path):
        arrays = {}
        for step in self.steps:
            arrays[f"eps_hat_{step['t']}"] = step["eps_hat"]
            arrays[f"eps_tilde_{step['t']}"] = step["eps_tilde"]
        meta = {
            "version": 1,
            "kind": "guided-step-trace",
            "steps": [s["t"] for s in self.steps],
            "mask_active": {str(s["t"]): bool(s["mask_active"]) for s in self.steps},
        }
        return write_container(path, meta, arrays)


def guidance_combine(eps_cond: np.ndarray, eps_uncond: np.ndarray,
                     lambda_cfg: float) -> np.ndarray:
    """lambda_cfg * eps_cond + (1 - lambda_cfg) * eps_uncond, elementwise.

    Dtype-preserving: float32 pipeline tensors stay float32.
    """
    eps_cond = np.asarray(eps_cond)
    eps_uncond = np.asarray(eps_uncond)
    check_same_shape(eps_cond, eps_uncond, "eps_cond and eps_uncond")
    lam = check_range(lambda_cfg, "lambda_cfg")
    return lam * eps_cond + (1.0 - lam) * eps_uncond


def mask_combine(eps_hat: np.ndarray, eps_uncond: np.ndarray,
                 mask: RegionMask) -> np.ndarray:
    """M * eps_hat + (1 - M) * eps_uncond; the mask must already be at
    latent resolution (no implicit resampling)."""
    eps_hat = np.asarray(eps_hat)
    eps_uncond = np.asarray(eps_uncond)
    check_same_shape(eps_hat, eps_uncond, "eps_hat and eps_uncond")
    m = mask.values
    if m.shape != eps_hat.shape[-2:]:
        raise ValidationError(
            f"mask resolution {m.shape} does not match latent {eps_hat.shape[-2:]}")
    return m * eps_hat + (1.0 - m) * eps_uncond


def _prepare(rec: InversionRecord, cfg: AnonymizationConfig, mask_user, mask_face,
             embedding, backbone, sched):
    check_record_compatible(rec, backbone, sched)
    if sched.T != cfg.T:
        raise ValidationError(f"config T={cfg.T} does not match schedule T={sched.T}")
    if rec.T != sched.T:
        raise ValidationError(f"record T={rec.T} does not match schedule T={sched.T}")
    spatial = rec.latent_shape[-2:]
    if mask_user is None:
        mask_user = full_mask(spatial, 1.0)
    if mask_face is None:
        mask_face = full_mask(spatial, 1.0)
    dim = getattr(backbone, "embedding_dim", 16)
    if embedding is None or embedding.is_null:
        if cfg.lambda_id != 0.0:
            raise ValidationError("a non-null identity embedding is required "
                                  "unless lambda_id is 0")
        cond = null_embedding(dim)
    else:
        cond = negate_scale(embedding, cfg.lambda_id)
    uncond = null_embedding(dim)
    params = AdapterParams(lambda_img=cfg.lambda_img)
    return mask_user, mask_face, cond, uncond, params


def _active_mask(t: int, cfg: AnonymizationConfig, mask_user, mask_face):
    """The user mask takes over once mask_start iterations of the full
    T-step process are complete, i.e. for steps t <= T - mask_start."""
    user_active = t <= cfg.T - cfg.mask_start
    return (mask_user if user_active else mask_face), user_active


def _guided_step(x, t, rec, cfg, mask_user, mask_face, cond, uncond, params,
                 backbone, sched, trace):
    eps_cond = _predict(backbone, x, t, cond, params)
    eps_uncond = _predict(backbone, x, t, uncond, params)
    eps_hat = guidance_combine(eps_cond, eps_uncond, cfg.lambda_cfg)
    mask, user_active = _active_mask(t, cfg, mask_user, mask_face)
    eps_tilde = mask_combine(eps_hat, eps_uncond, mask)
    if trace is not None:
        trace.record(t, eps_cond, eps_uncond, eps_hat, eps_tilde, user_active)
    mu = posterior_mean(x, eps_tilde, t, sched)
    x = mu if t == 1 else mu + np.float32(sched.sigma(t)) * rec.z(t)
    if not np.all(np.isfinite(x)):
        raise PluginError(f"non-finite latent produced at step t={t}")
    return x


def _replay_step(x, t, rec, uncond, params, backbone, sched):
    eps = _predict(backbone, x, t, uncond, params)
    mu = posterior_mean(x, eps, t, sched)
    return mu if t == 1 else mu + np.float32(sched.sigma(t)) * rec.z(t)


def anonymize(rec: InversionRecord, cfg: AnonymizationConfig,
              mask_user: RegionMask | None, mask_face: RegionMask | None,
              embedding: IdentityEmbedding | None, backbone,
              sched: NoiseSchedule, trace: bool = False):
    """Run the guided sampler from the stored latent x_{T - t_skip}.

    Returns the anonymized latent x_0', or (latent, GuidedStepTrace) when
    trace is set. Lean records fall back to replaying the skipped prefix
    from x_T.
    """
    mask_user, mask_face, cond, uncond, params = _prepare(
        rec, cfg, mask_user, mask_face, embedding, backbone, sched)
    t_start = cfg.T - cfg.t_skip
    tracer = GuidedStepTrace() if trace else None
    if rec.lean:
        x = rec.x_top.copy()
        for t in range(rec.T, t_start, -1):
            x = _replay_step(x, t, rec, uncond, params, backbone, sched)
    else:
        x = rec.x(t_start).copy()
    for t in range(t_start, 0, -1):
        x = _guided_step(x, t, rec, cfg, mask_user, mask_face, cond, uncond,
                         params, backbone, sched, tracer)
    return (x, tracer) if trace else x


def anonymize_from_top(rec: InversionRecord, cfg: AnonymizationConfig,
                       mask_user: RegionMask | None, mask_face: RegionMask | None,
                       embedding: IdentityEmbedding | None, backbone,
                       sched: NoiseSchedule, trace: bool = False):
    """Literal variant: start at x_T and run the first t_skip steps as
    unconditional updates with the stored noise maps. Equivalent to
    `anonymize` because those updates reproduce the stored latents."""
    mask_user, mask_face, cond, uncond, params = _prepare(
        rec, cfg, mask_user, mask_face, embedding, backbone, sched)
    t_start = cfg.T - cfg.t_skip
    tracer = GuidedStepTrace() if trace else None
    x = rec.x_top.copy()
    for t in range(rec.T, 0, -1):
        if t > t_start:
            x = _replay_step(x, t, rec, uncond, params, backbone, sched)
        else:
            x = _guided_step(x, t, rec, cfg, mask_user, mask_face, cond, uncond,
                             params, backbone, sched, tracer)
    return (x, tracer) if trace else x
