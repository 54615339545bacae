"""Diffusion noise schedule and DDPM posterior algebra.

A schedule is defined by its per-step variances beta_t for t = 1..T.
Derived tables follow the usual conventions:

    alpha_t     = 1 - beta_t
    alpha_bar_t = prod_{s<=t} alpha_s          (alpha_bar_0 = 1)
    sigma_t     = sqrt((1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t)

so sigma_1 = 0 and the sampler's final transition is deterministic.
Derived tables are pure functions of the betas and are recomputed,
never serialized.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataCorruptionError, ValidationError
from .validation import check_range, check_same_shape

SCHEDULE_FORMAT_VERSION = 1

# Posterior standard-deviation variants. "ddpm" is the full-stochasticity
# posterior sqrt(beta_tilde); "beta" substitutes sqrt(beta_t) for t >= 2
# while keeping sigma_1 = 0 so the last update stays deterministic.
VARIANTS = ("ddpm", "beta")


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable noise schedule; safe for unrestricted concurrent reads.

    Arrays are float64 and indexed so that `betas[t - 1]` is beta_t and
    `alpha_bars[t]` is alpha_bar_t (with the alpha_bar_0 = 1 convention).
    """

    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    posterior_sigmas: np.ndarray
    variant: str = "ddpm"
    # Present only for linearly parameterized schedules; needed to serialize.
    beta_start: float | None = None
    beta_end: float | None = None
    _fingerprint: str = field(default="", repr=False)

    def beta(self, t: int) -> float:
        self._check_step(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        self._check_step(t)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ValidationError(f"step index t={t} outside [0, {self.T}]")
        return float(self.alpha_bars[t])

    def sigma(self, t: int) -> float:
        self._check_step(t)
        return float(self.posterior_sigmas[t - 1])

    def _check_step(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValidationError(f"step index t={t} outside [1, {self.T}]")

    @property
    def fingerprint(self) -> str:
        return self._fingerprint

    def to_record(self) -> dict:
        """Serializable text record; derived tables are never serialized."""
        if self.beta_start is None or self.beta_end is None:
            raise ValidationError("only linearly parameterized schedules serialize")
        return {
            "version": SCHEDULE_FORMAT_VERSION,
            "T": self.T,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "variant": self.variant,
        }


def _derive_tables(betas: np.ndarray, variant: str):
    alphas = 1.0 - betas
    alpha_bars = np.concatenate(([1.0], np.cumprod(alphas)))
    if variant == "ddpm":
        sigmas = np.sqrt((1.0 - alpha_bars[:-1]) / (1.0 - alpha_bars[1:]) * betas)
    else:
        sigmas = np.sqrt(betas)
        sigmas[0] = 0.0  # final update is deterministic in every variant
    return alphas, alpha_bars, sigmas


def _fingerprint_record(record: dict) -> str:
    blob = json.dumps(record, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def schedule_from_betas(betas, variant: str = "ddpm",
                        beta_start: float | None = None,
                        beta_end: float | None = None) -> NoiseSchedule:
    """Build a schedule from explicit betas; each must lie in (0, 1)."""
    if variant not in VARIANTS:
        raise ValidationError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim != 1 or betas.size < 1:
        raise ValidationError("betas must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(betas)) or np.any(betas <= 0.0) or np.any(betas >= 1.0):
        raise ValidationError("every beta_t must be finite and inside (0, 1)")
    alphas, alpha_bars, sigmas = _derive_tables(betas, variant)
    if beta_start is not None and beta_end is not None:
        record = {
            "version": SCHEDULE_FORMAT_VERSION, "T": int(betas.size),
            "beta_start": float(beta_start), "beta_end": float(beta_end),
            "variant": variant,
        }
        fp = _fingerprint_record(record)
    else:
        fp = _fingerprint_record({
            "version": SCHEDULE_FORMAT_VERSION, "betas": betas.tolist(),
            "variant": variant,
        })
    for arr in (betas, alphas, alpha_bars, sigmas):
        arr.setflags(write=False)
    return NoiseSchedule(
        T=int(betas.size), betas=betas, alphas=alphas, alpha_bars=alpha_bars,
        posterior_sigmas=sigmas, variant=variant,
        beta_start=None if beta_start is None else float(beta_start),
        beta_end=None if beta_end is None else float(beta_end),
        _fingerprint=fp,
    )


def make_linear_schedule(T: int, beta_start: float, beta_end: float,
                         variant: str = "ddpm") -> NoiseSchedule:
    """Linear beta schedule inclusive of both endpoints."""
    T = check_range(T, "T", low=1, integer=True)
    beta_start = check_range(beta_start, "beta_start", low=np.nextafter(0.0, 1.0))
    beta_end = check_range(beta_end, "beta_end", high=np.nextafter(1.0, 0.0))
    if beta_start > beta_end:
        raise ValidationError(f"beta_start={beta_start} must not exceed beta_end={beta_end}")
    if beta_start >= 1.0 or beta_end <= 0.0:
        raise ValidationError("beta endpoints must lie inside (0, 1)")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    return schedule_from_betas(betas, variant=variant, beta_start=beta_start, beta_end=beta_end)


def default_schedule(T: int = 100, variant: str = "ddpm") -> NoiseSchedule:
    """Linear schedule with the (1e-4, 0.02)-per-1000-steps endpoints rescaled
    to T so the total injected noise is step-count independent."""
    T = check_range(T, "T", low=1, integer=True)
    scale = 1000.0 / T
    return make_linear_schedule(T, min(1e-4 * scale, 0.999), min(0.02 * scale, 0.999),
                                variant=variant)


def schedule_to_json(sched: NoiseSchedule) -> str:
    return json.dumps(sched.to_record(), sort_keys=True, indent=2)


def schedule_from_json(text: str) -> NoiseSchedule:
    try:
        record = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataCorruptionError(f"unparseable schedule record: {exc}") from exc
    if record.get("version") != SCHEDULE_FORMAT_VERSION:
        raise DataCorruptionError(
            f"schedule record version {record.get('version')!r} unsupported "
            f"(expected {SCHEDULE_FORMAT_VERSION})")
    missing = {"T", "beta_start", "beta_end", "variant"} - set(record)
    if missing:
        raise DataCorruptionError(f"schedule record missing fields: {sorted(missing)}")
    return make_linear_schedule(record["T"], record["beta_start"], record["beta_end"],
                                variant=record["variant"])


def add_noise(x0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Forward construction x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.

    t = 0 is admitted and returns x0 exactly (alpha_bar_0 = 1).
    """
    x0 = np.asarray(x0, dtype=np.float32)
    eps = np.asarray(eps, dtype=np.float32)
    check_same_shape(x0, eps, "x0 and eps")
    abar = sched.alpha_bar(t)
    if abar == 1.0:
        return x0.copy()
    return (np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps).astype(np.float32)


def posterior_mean(x_t: np.ndarray, eps_pred: np.ndarray, t: int,
                   sched: NoiseSchedule) -> np.ndarray:
    """Denoising-network output mu_t(x_t) from the noise prediction:

        mu_t = (x_t - beta_t / sqrt(1 - abar_t) * eps_pred) / sqrt(alpha_t)
    """
    x_t = np.asarray(x_t, dtype=np.float32)
    eps_pred = np.asarray(eps_pred, dtype=np.float32)
    check_same_shape(x_t, eps_pred, "x_t and eps_pred")
    if not (np.all(np.isfinite(x_t)) and np.all(np.isfinite(eps_pred))):
        raise ValidationError(f"non-finite inputs to posterior_mean at t={t}")
    coeff = sched.beta(t) / np.sqrt(1.0 - sched.alpha_bar(t))
    return ((x_t - coeff * eps_pred) / np.sqrt(sched.alpha(t))).astype(np.float32)
