"""Metrics and experiment runner.

Implements the measurement protocols at toy scale: top-1 nearest-
neighbor re-identification against the original gallery (cosine
distance, lower-index tie-break), cosine identity distance, the
Gaussian Frechet distance over pluggable features, optional attribute
distances, parameter sweeps over the sampler knobs, and the
identity-recovery attack procedure.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import clone

from .conditioning import IdentityEmbedding, negate_scale
from .denoiser import anonymize
from .engine import make_pool
from .errors import NullfaceError, ValidationError
from .estimator import FaceAnonymizer
from .masks import preset_mask

SWEEP_PARAMS = ("lambda_id", "lambda_cfg", "t_skip", "mask_preset", "mask_start")

# Stable CSV column order; attribute columns stay empty when no scorer
# plugin is attached.
CSV_COLUMNS = [
    "scope", "cell", "image", "steps", "t_skip", "lambda_id", "lambda_cfg",
    "lambda_img", "mask_preset", "mask_start", "seed",
    "identity_distance", "re_identified", "re_id_rate", "frechet_distance",
    "pose_distance", "gaze_distance", "expression_distance", "quality_distance",
    "error",
]


def identity_distance(e1: IdentityEmbedding, e2: IdentityEmbedding) -> float:
    """Cosine distance 1 - <e1, e2> / (|e1| |e2|), in [0, 2]."""
    if e1.is_null or e2.is_null:
        raise ValidationError("identity distance is undefined for the null embedding")
    if e1.dim != e2.dim:
        raise ValidationError(f"embedding dims differ: {e1.dim} vs {e2.dim}")
    v1 = e1.vector.astype(np.float64)
    v2 = e2.vector.astype(np.float64)
    n1 = np.linalg.norm(v1)
    n2 = np.linalg.norm(v2)
    if n1 == 0.0 or n2 == 0.0:
        raise ValidationError("zero-norm embedding")
    return float(np.clip(1.0 - (v1 @ v2) / (n1 * n2), 0.0, 2.0))


def _unit_rows(embeddings: list[IdentityEmbedding]) -> np.ndarray:
    rows = np.stack([e.vector.astype(np.float64) for e in embeddings])
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValidationError("zero-norm embedding in gallery")
    return rows / norms


def re_id_rate(originals: list[IdentityEmbedding],
               anonymized: list[IdentityEmbedding]) -> float:
    """Percent of anonymized embeddings whose nearest original (cosine
    distance, lower index wins ties) is their own source."""
    if len(originals) != len(anonymized):
        raise ValidationError("originals and anonymized must pair up one-to-one")
    if len(originals) < 2:
        raise ValidationError("re-identification needs a gallery of >= 2 identities")
    gallery = _unit_rows(originals)
    probes = _unit_rows(anonymized)
    dist = 1.0 - probes @ gallery.T
    nearest = np.argmin(dist, axis=1)  # argmin returns the lowest tied index
    hits = np.count_nonzero(nearest == np.arange(len(anonymized)))
    return 100.0 * hits / len(anonymized)


def _sym_sqrt(mat: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    if np.any(vals < -tol):
        raise ValidationError(f"matrix has eigenvalue {vals.min():.3e} below -{tol}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(feats_a, feats_b) -> float:
    """Gaussian Frechet distance |mu_a - mu_b|^2 + Tr(Sa + Sb - 2(Sa Sb)^(1/2)).

    Covariances use 1/(n-1) normalization. The cross term is evaluated
    through the symmetric form sqrt(Sa) Sb sqrt(Sa) by eigendecomposition;
    eigenvalues above -1e-8 are clamped to zero, lower ones are an error.
    """
    a = np.atleast_2d(np.asarray(feats_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(feats_b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ValidationError(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValidationError("need at least 2 samples per side")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False, ddof=1).reshape(a.shape[1], a.shape[1])
    cov_b = np.cov(b, rowvar=False, ddof=1).reshape(b.shape[1], b.shape[1])
    root_a = _sym_sqrt(cov_a)
    cross_vals = np.linalg.eigvalsh(root_a @ cov_b @ root_a)
    if np.any(cross_vals < -1e-8):
        raise ValidationError(
            f"cross-covariance eigenvalue {cross_vals.min():.3e} below -1e-8")
    cross_vals = np.clip(cross_vals, 0.0, None)
    delta = mu_a - mu_b
    return float(delta @ delta + np.trace(cov_a) + np.trace(cov_b)
                 - 2.0 * np.sum(np.sqrt(cross_vals)))


def angular_distance(angles_a, angles_b) -> float:
    """Mean absolute difference of predicted angles (pose/gaze)."""
    a = np.asarray(angles_a, dtype=np.float64).reshape(-1)
    b = np.asarray(angles_b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValidationError("angle vectors must have equal length")
    return float(np.mean(np.abs(a - b)))


def expression_distance(coeffs_a, coeffs_b) -> float:
    """L2 distance over expression coefficient vectors."""
    a = np.asarray(coeffs_a, dtype=np.float64).reshape(-1)
    b = np.asarray(coeffs_b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValidationError("coefficient vectors must have equal length")
    return float(np.linalg.norm(a - b))


def quality_distance(score_gen: float, score_orig: float) -> float:
    return float(abs(float(score_gen) - float(score_orig)))


@dataclass
class MetricsReport:
    """Per-image rows plus aggregate rows; aggregates are recomputable
    from the rows."""

    rows: list[dict] = field(default_factory=list)
    aggregates: list[dict] = field(default_factory=list)

    def all_rows(self) -> list[dict]:
        return self.rows + self.aggregates

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, extrasaction="ignore")
            writer.writeheader()
            for row in self.all_rows():
                writer.writerow(row)
        return path


def _scorer_distances(scorer, original, generated) -> dict[str, float]:
    s_orig = scorer(original)
    s_gen = scorer(generated)
    out = {}
    if "pose" in s_orig:
        out["pose_distance"] = angular_distance(s_orig["pose"], s_gen["pose"])
    if "gaze" in s_orig:
        out["gaze_distance"] = angular_distance(s_orig["gaze"], s_gen["gaze"])
    if "expression" in s_orig:
        out["expression_distance"] = expression_distance(
            s_orig["expression"], s_gen["expression"])
    if "quality" in s_orig:
        out["quality_distance"] = quality_distance(s_gen["quality"], s_orig["quality"])
    return out


def evaluate_pair_set(estimator: FaceAnonymizer, dataset, anonymized,
                      scorer=None, cell: str = "", extra: dict | None = None) -> MetricsReport:
    """Measure one anonymized batch against its originals."""
    report = MetricsReport()
    names = [name for name, _ in dataset]
    originals = [img for _, img in dataset]
    orig_emb = [estimator.embedding_of(img) for img in originals]
    anon_emb = [estimator.embedding_of(img) for img in anonymized]
    gallery = _unit_rows(orig_emb)
    probes = _unit_rows(anon_emb)
    nearest = np.argmin(1.0 - probes @ gallery.T, axis=1)

    base = dict.fromkeys(CSV_COLUMNS, "")
    base.update(extra or {})
    per_attr: dict[str, list[float]] = {}
    for i, name in enumerate(names):
        row = dict(base)
        row.update(scope="image", cell=cell, image=name,
                   identity_distance=identity_distance(orig_emb[i], anon_emb[i]),
                   re_identified=int(nearest[i] == i))
        if scorer is not None:
            dists = _scorer_distances(scorer, originals[i], anonymized[i])
            row.update(dists)
            for key, val in dists.items():
                per_attr.setdefault(key, []).append(val)
        report.rows.append(row)

    agg = dict(base)
    agg.update(
        scope="aggregate", cell=cell, image="",
        identity_distance=float(np.mean([r["identity_distance"] for r in report.rows])),
        re_id_rate=re_id_rate(orig_emb, anon_emb),
        frechet_distance=frechet_distance(
            np.stack([e.vector for e in orig_emb]),
            np.stack([e.vector for e in anon_emb])),
    )
    for key, vals in per_attr.items():
        agg[key] = float(np.mean(vals))
    report.aggregates.append(agg)
    return report


def _grid_cells(grid: dict[str, list]) -> list[dict]:
    keys = list(grid)
    cells = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        cells.append(dict(zip(keys, combo)))
    return cells


def run_sweep(dataset, grid: dict[str, list], estimator: FaceAnonymizer | None = None,
              scorer=None, csv_path=None, workers: int | None = None) -> MetricsReport:
    """One invert+anonymize+measure pass per grid cell.

    dataset is a list of (name, uint8 image) pairs with >= 2 identities.
    Cells run as independent jobs on the worker pool; a cell whose plugin
    fails is recorded in the report and does not abort the sweep.
    """
    if not dataset:
        raise ValidationError("empty dataset")
    if len(dataset) < 2:
        raise ValidationError("sweep needs >= 2 identities")
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValidationError("parameter grid must be non-empty")
    base = estimator if estimator is not None else FaceAnonymizer()
    unknown = set(grid) - set(base.get_params())
    if unknown:
        raise ValidationError(f"unknown sweep parameters: {sorted(unknown)}")
    cells = _grid_cells(grid)
    images = [img for _, img in dataset]
    # inversions are keyed by their own parameters, so cells that only vary
    # denoise-phase knobs share the warm cache safely
    shared_records: dict = {}
    shared_images: dict = {}

    def run_cell(cell_params: dict) -> MetricsReport:
        est = clone(base)
        est.set_params(**cell_params)
        cell_id = ",".join(f"{k}={cell_params[k]}" for k in sorted(cell_params))
        echo = {
            "steps": est.steps, "t_skip": est.t_skip, "lambda_id": est.lambda_id,
            "lambda_cfg": est.lambda_cfg, "lambda_img": est.lambda_img,
            "mask_preset": est.mask_preset, "mask_start": est.mask_start,
            "seed": est.seed,
        }
        try:
            est._build_stack()
            est.config()
            est.records_ = shared_records
            est.images_ = shared_images
            anonymized = est.transform(images)
            return evaluate_pair_set(est, dataset, list(anonymized), scorer=scorer,
                                     cell=cell_id, extra=echo)
        except NullfaceError as exc:
            failed = MetricsReport()
            row = dict.fromkeys(CSV_COLUMNS, "")
            row.update(echo)
            row.update(scope="aggregate", cell=cell_id, error=str(exc))
            failed.aggregates.append(row)
            return failed

    # CSV assembly is single-writer and incremental: an interrupted sweep
    # leaves a valid partial report
    report = MetricsReport()
    writer = fh = None
    if csv_path is not None:
        fh = Path(csv_path).open("w", encoding="utf-8", newline="")
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, extrasaction="ignore")
        writer.writeheader()
    try:
        with make_pool(workers) as pool:
            for cell_report in pool.map(run_cell, cells):
                report.rows.extend(cell_report.rows)
                report.aggregates.extend(cell_report.aggregates)
                if writer is not None:
                    for row in cell_report.all_rows():
                        writer.writerow(row)
                    fh.flush()
    finally:
        if fh is not None:
            fh.close()
    return report


def attack_recover(original_image, anonymized_image, estimator: FaceAnonymizer | None = None):
    """Identity-recovery attack: re-run the pipeline on the anonymized
    image conditioning on the positive-signed embedding (+lambda_id * e).

    Returns (attacked image, distances dict).
    """
    est = clone(estimator) if estimator is not None else FaceAnonymizer()
    est.fit([anonymized_image])
    e_anon = est.embedding_of(anonymized_image)
    # anonymize() negates its embedding, so pre-negating yields +lambda_id * e
    rec = est._record_for(anonymized_image)
    seg = est.parser_(anonymized_image)
    cfg = est.config()
    mask_user = preset_mask(seg, est.mask_preset, rec.latent_shape)
    mask_face = preset_mask(seg, "whole-face", rec.latent_shape)
    latent = anonymize(rec, cfg, mask_user, mask_face, negate_scale(e_anon, 1.0),
                       est.backbone_, est.schedule_)
    attacked = est.codec_.decode(latent)

    e_orig = est.embedding_of(original_image)
    distances = {
        "original_vs_anonymized": identity_distance(e_orig, e_anon),
        "original_vs_attacked": identity_distance(e_orig, est.embedding_of(attacked)),
    }
    return attacked, distances
