"""Edit-friendly DDPM inversion.

Noisy latents x_t are built independently per step (not as a single
forward trajectory), then per-step noise maps are extracted so that

    x_{t-1} = mu_t(x_t) + sigma_t * z_t        for t = T .. 2

holds exactly by construction. sigma_1 = 0 makes z_1 undefined, so z_1
is fixed to 0 and the final transition is the deterministic update
x_0 = mu_1(x_1); the record therefore stores that reconstruction as its
x_0 entry, and replaying the stored noise maps reproduces it to 32-bit
round-off. After each z_t is extracted the stored x_{t-1} is rewritten
as mu_t + sigma_t * z_t so no float error accumulates across steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .conditioning import AdapterParams, IdentityEmbedding, null_embedding
from .container import read_container, write_container
from .errors import (DataCorruptionError, FingerprintMismatchError, PluginError,
                     ValidationError)
from .schedule import NoiseSchedule, add_noise, posterior_mean, schedule_from_json
from .validation import as_latent

RECORD_FORMAT_VERSION = 1


@dataclass(frozen=True)
class InversionRecord:
    """Everything needed to replay the stochastic sampler exactly.

    x_all holds x_0..x_T indexed by t (None in lean mode, which keeps
    only x_T); z_all holds z_1..z_T at indices 1..T with index 0 unused.
    """

    T: int
    seed: int
    z_all: np.ndarray
    x_all: np.ndarray | None
    x_top: np.ndarray
    schedule_fingerprint: str
    conditioning_fingerprint: str
    backbone_fingerprint: str
    schedule_record: dict | None = None

    @property
    def lean(self) -> bool:
        return self.x_all is None

    @property
    def latent_shape(self) -> tuple[int, ...]:
        return tuple(self.x_top.shape)

    def x(self, t: int) -> np.ndarray:
        if not 0 <= t <= self.T:
            raise ValidationError(f"t={t} outside [0, {self.T}]")
        if t == self.T:
            return self.x_top
        if self.x_all is None:
            raise ValidationError("lean record stores only x_T; replay from the top")
        return self.x_all[t]

    @property
    def x0(self) -> np.ndarray:
        return self.x(0)

    def z(self, t: int) -> np.ndarray:
        if not 1 <= t <= self.T:
            raise ValidationError(f"t={t} outside [1, {self.T}]")
        return self.z_all[t]


def _backbone_fingerprint(backbone) -> str:
    fp = getattr(backbone, "fingerprint", None)
    if not fp:
        raise PluginError("backbone does not expose a fingerprint")
    return str(fp)


def _predict(backbone, x, t, cond, params):
    eps = np.asarray(backbone(x, t, cond, params), dtype=np.float32)
    if eps.shape != x.shape:
        raise PluginError(f"backbone changed latent shape {x.shape} -> {eps.shape} at t={t}")
    if not np.all(np.isfinite(eps)):
        raise PluginError(f"backbone produced non-finite output at step t={t}")
    return eps


def invert(x0, backbone, sched: NoiseSchedule,
           condition: IdentityEmbedding | None = None, seed: int = 0,
           adapter_params: AdapterParams | None = None,
           lean: bool = False) -> InversionRecord:
    """Extract per-step noise maps for x0 under the given condition.

    The inversion condition defaults to the null embedding so the
    unconditional denoising path reproduces the source exactly.
    """
    x0 = as_latent(x0, "x0")
    params = adapter_params or AdapterParams()
    if condition is None:
        condition = null_embedding(getattr(backbone, "embedding_dim", 16))
    T = sched.T
    shape = x0.shape

    x_all = np.zeros((T + 1,) + shape, dtype=np.float32)
    z_all = np.zeros((T + 1,) + shape, dtype=np.float32)
    x_all[0] = x0
    for t in range(1, T + 1):
        x_all[t] = add_noise(x0, t, rng.noise_for_step(seed, t, shape), sched)

    for t in range(T, 0, -1):
        eps = _predict(backbone, x_all[t], t, condition, params)
        mu = posterior_mean(x_all[t], eps, t, sched)
        if t >= 2:
            sigma = np.float32(sched.sigma(t))
            z_all[t] = (x_all[t - 1] - mu) / sigma
            # rewrite the target so replay reproduces it bit-exactly
            x_all[t - 1] = mu + sigma * z_all[t]
        else:
            x_all[0] = mu  # deterministic final update; z_1 stays 0
        if not np.all(np.isfinite(x_all[t - 1])):
            raise PluginError(f"non-finite latent produced while inverting step t={t}")

    return InversionRecord(
        T=T, seed=int(seed), z_all=z_all,
        x_all=None if lean else x_all, x_top=x_all[T].copy(),
        schedule_fingerprint=sched.fingerprint,
        conditioning_fingerprint=condition.fingerprint,
        backbone_fingerprint=_backbone_fingerprint(backbone),
        schedule_record=sched.to_record() if sched.beta_start is not None else None,
    )


def check_record_compatible(rec: InversionRecord, backbone, sched: NoiseSchedule) -> None:
    if rec.schedule_fingerprint != sched.fingerprint:
        raise FingerprintMismatchError(
            f"record was built against schedule {rec.schedule_fingerprint[:12]}..., "
            f"got {sched.fingerprint[:12]}...")
    if rec.backbone_fingerprint != _backbone_fingerprint(backbone):
        raise FingerprintMismatchError(
            f"record was built against backbone {rec.backbone_fingerprint!r}, "
            f"got {_backbone_fingerprint(backbone)!r}")


def verify_roundtrip(rec: InversionRecord, backbone, sched: NoiseSchedule,
                     condition: IdentityEmbedding | None = None,
                     adapter_params: AdapterParams | None = None) -> float:
    """Replay the sampler from x_T with the stored noise maps; returns the
    max-abs deviation of the replayed reconstruction from the stored x_0."""
    check_record_compatible(rec, backbone, sched)
    params = adapter_params or AdapterParams()
    if condition is None:
        condition = null_embedding(getattr(backbone, "embedding_dim", 16))
    if condition.fingerprint != rec.conditioning_fingerprint:
        raise FingerprintMismatchError(
            "record was inverted under a different condition; pass it explicitly")
    if rec.lean:
        raise ValidationError("lean record stores no reconstruction to verify against")
    x = rec.x_top.copy()
    for t in range(rec.T, 0, -1):
        eps = _predict(backbone, x, t, condition, params)
        mu = posterior_mean(x, eps, t, sched)
        x = mu if t == 1 else mu + np.float32(sched.sigma(t)) * rec.z(t)
    return float(np.max(np.abs(x.astype(np.float64) - rec.x0.astype(np.float64))))


_META_KEYS = ("T", "seed", "schedule_fingerprint", "conditioning_fingerprint",
              "backbone_fingerprint")


def save_record(rec: InversionRecord, path) -> Path:
    """Persist to a `<name>.inv/` container directory (bit-exact)."""
    arrays: dict[str, np.ndarray] = {}
    if rec.lean:
        arrays[f"x_{rec.T}"] = rec.x_top
    else:
        for t in range(rec.T + 1):
            arrays[f"x_{t}"] = rec.x_all[t]
    for t in range(1, rec.T + 1):
        arrays[f"z_{t}"] = rec.z_all[t]
    meta = {
        "version": RECORD_FORMAT_VERSION,
        "T": rec.T,
        "latent_shape": list(rec.latent_shape),
        "seed": rec.seed,
        "lean": rec.lean,
        "schedule_fingerprint": rec.schedule_fingerprint,
        "conditioning_fingerprint": rec.conditioning_fingerprint,
        "backbone_fingerprint": rec.backbone_fingerprint,
        "schedule_record": rec.schedule_record,
    }
    return write_container(path, meta, arrays)


def load_record(path) -> InversionRecord:
    """Load and re-validate a persisted record."""
    meta, arrays = read_container(path)
    if meta.get("version") != RECORD_FORMAT_VERSION:
        raise DataCorruptionError(
            f"record version {meta.get('version')!r} unsupported "
            f"(expected {RECORD_FORMAT_VERSION})")
    missing = [k for k in _META_KEYS if k not in meta]
    if missing:
        raise DataCorruptionError(f"record metadata missing fields: {missing}")
    T = int(meta["T"])
    shape = tuple(meta["latent_shape"])
    lean = bool(meta.get("lean", False))

    if meta.get("schedule_record") is not None:
        import json as _json
        sched = schedule_from_json(_json.dumps(meta["schedule_record"]))
        if sched.fingerprint != meta["schedule_fingerprint"]:
            raise FingerprintMismatchError(
                "embedded schedule record does not match the stored schedule "
                f"fingerprint (record T={sched.T})")

    expected = [f"z_{t}" for t in range(1, T + 1)]
    expected += [f"x_{T}"] if lean else [f"x_{t}" for t in range(T + 1)]
    missing_arrays = [name for name in expected if name not in arrays]
    if missing_arrays:
        raise DataCorruptionError(f"record is missing arrays: {missing_arrays[:4]}...")

    z_all = np.zeros((T + 1,) + shape, dtype=np.float32)
    for t in range(1, T + 1):
        arr = arrays[f"z_{t}"]
        if arr.shape != shape:
            raise DataCorruptionError(f"array z_{t} has shape {arr.shape}, expected {shape}")
        z_all[t] = arr
    if np.any(z_all[1] != 0.0):
        raise DataCorruptionError("record violates the z_1 = 0 convention")
    if lean:
        x_all = None
        x_top = arrays[f"x_{T}"]
    else:
        x_all = np.zeros((T + 1,) + shape, dtype=np.float32)
        for t in range(T + 1):
            x_all[t] = arrays[f"x_{t}"]
        x_top = x_all[T].copy()
    if not np.all(np.isfinite(x_top)):
        raise DataCorruptionError("record contains non-finite latents")
    return InversionRecord(
        T=T, seed=int(meta["seed"]), z_all=z_all, x_all=x_all, x_top=x_top,
        schedule_fingerprint=meta["schedule_fingerprint"],
        conditioning_fingerprint=meta["conditioning_fingerprint"],
        backbone_fingerprint=meta["backbone_fingerprint"],
        schedule_record=meta.get("schedule_record"),
    )
