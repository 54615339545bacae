import csv

import numpy as np
import pytest

from conftest import unit_embedding
from nullface.backbones import ToyGeometryScorer
from nullface.conditioning import IdentityEmbedding
from nullface.errors import ValidationError
from nullface.estimator import FaceAnonymizer
from nullface.evaluation import (angular_distance, attack_recover,
                                 expression_distance, frechet_distance,
                                 identity_distance, quality_distance, re_id_rate,
                                 run_sweep)
from nullface.toyset import generate_toy_faces


def _e(*values):
    return IdentityEmbedding(np.asarray(values, dtype=np.float32))


def test_identity_distance_cases():
    e = unit_embedding(0)
    assert identity_distance(e, e) == pytest.approx(0.0, abs=1e-7)
    assert identity_distance(_e(1, 0), _e(0, 1)) == pytest.approx(1.0, abs=1e-7)
    assert identity_distance(_e(1, 0), _e(-1, 0)) == pytest.approx(2.0, abs=1e-7)


def test_identity_distance_errors():
    from nullface.conditioning import null_embedding
    with pytest.raises(ValidationError):
        identity_distance(_e(1, 0), _e(1, 0, 0))
    with pytest.raises(ValidationError):
        identity_distance(_e(1, 0), null_embedding(2))
    with pytest.raises(ValidationError):
        identity_distance(_e(1, 0), _e(0, 0))


def test_re_id_identity_gallery():
    gallery = [unit_embedding(i) for i in range(8)]
    assert re_id_rate(gallery, gallery) == 100.0


def test_re_id_crafted_swap():
    a, b = _e(1, 0), _e(0, 1)
    # each anonymized embedding is closer to the *other* original
    anonymized = [_e(0.1, 0.995), _e(0.995, 0.1)]
    assert re_id_rate([a, b], anonymized) == 0.0


def test_re_id_tie_break_lower_index():
    a, b = _e(1, 0), _e(0, 1)
    probe = _e(1, 1)  # equidistant from both originals
    assert re_id_rate([a, b], [probe, probe]) == 50.0  # index 0 wins both ties


def test_re_id_validation():
    with pytest.raises(ValidationError):
        re_id_rate([_e(1, 0)], [_e(1, 0)])
    with pytest.raises(ValidationError):
        re_id_rate([_e(1, 0), _e(0, 1)], [_e(1, 0)])
    with pytest.raises(ValidationError):
        re_id_rate([_e(1, 0), _e(0, 0)], [_e(1, 0), _e(0, 1)])


def test_frechet_identical_sets_zero():
    g = np.random.default_rng(0)
    feats = g.standard_normal((20, 6))
    assert abs(frechet_distance(feats, feats)) <= 1e-8


def test_frechet_one_dimensional_moment_case():
    a = 1.0 / np.sqrt(2.0)
    set_a = np.array([[-a], [a]])            # mean 0, ddof-1 variance 1
    set_b = np.array([[1.0 - a], [1.0 + a]])  # mean 1, ddof-1 variance 1
    assert frechet_distance(set_a, set_b) == pytest.approx(1.0, abs=1e-6)


def test_frechet_two_dimensional_diagonal_case():
    # means (0,0) vs (1,0); covariances I vs 4I -> 1 + tr(5I - 2*2I) = 3
    a = np.sqrt(1.5)
    base = np.array([[a, 0.0], [-a, 0.0], [0.0, a], [0.0, -a]])
    set_a = base
    set_b = 2.0 * base + np.array([1.0, 0.0])
    assert frechet_distance(set_a, set_b) == pytest.approx(3.0, abs=1e-6)


def test_frechet_symmetry_and_nonnegativity():
    g = np.random.default_rng(1)
    a = g.standard_normal((12, 4))
    b = 0.5 * g.standard_normal((15, 4)) + 0.3
    assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), abs=1e-8)
    assert frechet_distance(a, b) >= -1e-8


def test_frechet_validation():
    with pytest.raises(ValidationError):
        frechet_distance(np.ones((1, 3)), np.ones((5, 3)))
    with pytest.raises(ValidationError):
        frechet_distance(np.ones((5, 3)), np.ones((5, 4)))


def test_attribute_distances():
    assert angular_distance([10.0, 20.0], [13.0, 14.0]) == pytest.approx(4.5)
    assert expression_distance([0.0, 3.0], [4.0, 0.0]) == pytest.approx(5.0)
    assert quality_distance(61.5, 60.0) == pytest.approx(1.5)
    with pytest.raises(ValidationError):
        angular_distance([1.0], [1.0, 2.0])


def _small_dataset(n=4):
    return generate_toy_faces(n, 32, seed=0)


def _fast_estimator(**overrides):
    params = dict(steps=20, t_skip=12, lambda_id=1.0, lambda_cfg=10.0,
                  mask_preset="whole-face", mask_start=0, seed=0)
    params.update(overrides)
    return FaceAnonymizer(**params)


def test_run_sweep_grid_shape(tmp_path):
    data = _small_dataset()
    report = run_sweep(data, {"lambda_cfg": [2.5, 10.0]},
                       estimator=_fast_estimator(),
                       csv_path=tmp_path / "report.csv")
    assert len(report.aggregates) == 2
    assert len(report.rows) == 2 * len(data)
    for agg in report.aggregates:
        assert 0.0 <= agg["re_id_rate"] <= 100.0
    # config fields echoed on every row
    assert {row["lambda_cfg"] for row in report.rows} == {2.5, 10.0}


def test_run_sweep_single_cell_echoes_defaults():
    data = _small_dataset()
    est = FaceAnonymizer(steps=20, t_skip=14, lambda_id=1.0, lambda_cfg=10.0,
                         mask_preset="keep-eyes-mouth", mask_start=16)
    report = run_sweep(data, {"lambda_id": [1.0]}, estimator=est)
    assert len(report.aggregates) == 1
    agg = report.aggregates[0]
    assert (agg["t_skip"], agg["lambda_id"], agg["lambda_cfg"], agg["mask_start"]) \
        == (14, 1.0, 10.0, 16)
    assert agg["mask_preset"] == "keep-eyes-mouth"


def test_run_sweep_aggregates_recomputable_and_csv(tmp_path):
    data = _small_dataset()
    path = tmp_path / "r.csv"
    report = run_sweep(data, {"lambda_cfg": [5.0]}, estimator=_fast_estimator(),
                       csv_path=path)
    agg = report.aggregates[0]
    mean_dist = np.mean([r["identity_distance"] for r in report.rows])
    assert agg["identity_distance"] == mean_dist
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(data) + 1
    assert rows[-1]["scope"] == "aggregate"


def test_run_sweep_validation():
    data = _small_dataset()
    with pytest.raises(ValidationError):
        run_sweep([], {"lambda_cfg": [1.0]})
    with pytest.raises(ValidationError):
        run_sweep(data, {})
    with pytest.raises(ValidationError):
        run_sweep(data, {"lambda_cfg": []})
    with pytest.raises(ValidationError):
        run_sweep(data, {"bogus_param": [1]})


def test_run_sweep_failed_cell_recorded():
    data = _small_dataset()
    # t_skip beyond T makes the cell's config invalid -> recorded, not raised
    report = run_sweep(data, {"t_skip": [12, 999]}, estimator=_fast_estimator())
    errors = [a for a in report.aggregates if a["error"]]
    ok = [a for a in report.aggregates if not a["error"]]
    assert len(errors) == 1 and len(ok) == 1


def test_run_sweep_deterministic():
    data = _small_dataset(3)
    grid = {"lambda_cfg": [5.0, 10.0]}
    r1 = run_sweep(data, grid, estimator=_fast_estimator())
    r2 = run_sweep(data, grid, estimator=_fast_estimator())
    assert [row["identity_distance"] for row in r1.rows] \
        == [row["identity_distance"] for row in r2.rows]


def test_scorer_fields_absent_without_plugin():
    data = _small_dataset(3)
    report = run_sweep(data, {"lambda_cfg": [5.0]}, estimator=_fast_estimator())
    assert all(row["pose_distance"] == "" for row in report.rows)
    with_scorer = run_sweep(data, {"lambda_cfg": [5.0]},
                            estimator=_fast_estimator(),
                            scorer=ToyGeometryScorer())
    assert all(row["pose_distance"] != "" for row in with_scorer.rows)
    assert all(row["gaze_distance"] != "" for row in with_scorer.rows)


def test_attack_recover_procedure():
    data = _small_dataset(2)
    original = data[0][1]
    est = _fast_estimator()
    anonymized = est.fit([original]).transform([original])[0]
    attacked, dists = attack_recover(original, anonymized, estimator=_fast_estimator())
    assert attacked.shape == original.shape
    assert dists["original_vs_anonymized"] >= 0.0
    assert dists["original_vs_attacked"] >= 0.0


def test_attack_with_wrong_guidance_differs_from_reconstruction():
    data = _small_dataset(2)
    original = data[0][1]
    est = _fast_estimator(lambda_cfg=10.0)
    anonymized = est.fit([original]).transform([original])[0]
    # attacker guesses lambda_cfg = 1 instead of 10
    attacked, _ = attack_recover(original, anonymized,
                                 estimator=_fast_estimator(lambda_cfg=1.0))
    recon = est.reconstruct([original])[0]
    assert np.any(attacked != recon)
