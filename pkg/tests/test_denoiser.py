import numpy as np
import pytest

from conftest import random_latent, unit_embedding
from nullface.backbones import ToyPointwiseBackbone
from nullface.conditioning import AdapterParams, negate_scale, null_embedding
from nullface.denoiser import (AnonymizationConfig, anonymize, anonymize_from_top,
                               guidance_combine, mask_combine)
from nullface.errors import FingerprintMismatchError, ValidationError
from nullface.inversion import invert, load_record
from nullface.masks import RegionMask, full_mask
from nullface.schedule import default_schedule, posterior_mean


def test_guidance_combine_arithmetic():
    c = np.full((1, 1, 1), 1.0, dtype=np.float32)
    u = np.full((1, 1, 1), 0.5, dtype=np.float32)
    assert guidance_combine(c, u, 10.0)[0, 0, 0] == pytest.approx(5.5, abs=1e-6)


def test_guidance_combine_degenerate_cases():
    g = np.random.default_rng(0)
    c = g.standard_normal((4, 16, 16)).astype(np.float32)  # 1024 elements
    u = g.standard_normal((4, 16, 16)).astype(np.float32)
    assert np.array_equal(guidance_combine(c, u, 1.0), c)
    assert np.array_equal(guidance_combine(c, u, 0.0), u)


def test_guidance_algebra_randomized():
    g = np.random.default_rng(1)
    for _ in range(5):
        c = g.standard_normal((4, 16, 16))
        u = g.standard_normal((4, 16, 16))
        lam = float(g.uniform(-2.0, 12.0))
        lhs = guidance_combine(c, u, lam) - u
        rhs = lam * (c - u)
        assert np.max(np.abs(lhs - rhs)) < 1e-6
    # float32 pipeline tensors satisfy the identity to storage precision
    c32 = g.standard_normal((4, 16, 16)).astype(np.float32)
    u32 = g.standard_normal((4, 16, 16)).astype(np.float32)
    lhs32 = guidance_combine(c32, u32, 10.0) - u32
    assert np.max(np.abs(lhs32 - 10.0 * (c32 - u32))) < 1e-5


def test_guidance_combine_shape_mismatch():
    with pytest.raises(ValidationError):
        guidance_combine(np.zeros((1, 2, 2), np.float32),
                         np.zeros((1, 2, 3), np.float32), 1.0)


def test_mask_combine_cases():
    g = np.random.default_rng(2)
    hat = g.standard_normal((4, 16, 16)).astype(np.float32)
    unc = g.standard_normal((4, 16, 16)).astype(np.float32)
    ones = full_mask((16, 16), 1.0)
    zeros = full_mask((16, 16), 0.0)
    assert np.array_equal(mask_combine(hat, unc, ones), hat)
    assert np.array_equal(mask_combine(hat, unc, zeros), unc)
    quarter = full_mask((16, 16), 0.25)
    out = mask_combine(np.full_like(hat, 4.0), np.zeros_like(unc), quarter)
    assert np.allclose(out, 1.0, atol=1e-6)


def test_mask_combine_resolution_mismatch():
    hat = np.zeros((2, 8, 8), np.float32)
    with pytest.raises(ValidationError):
        mask_combine(hat, hat, full_mask((4, 4), 1.0))


def _setup(T=50, seed=0, backbone_seed=0, shape=(4, 8, 8)):
    sched = default_schedule(T)
    backbone = ToyPointwiseBackbone(seed=backbone_seed)
    x0 = random_latent(seed, shape)
    rec = invert(x0, backbone, sched, seed=seed)
    return sched, backbone, rec


def test_t_skip_full_returns_x0_bit_exact():
    sched, backbone, rec = _setup()
    cfg = AnonymizationConfig(T=50, t_skip=50, lambda_id=1.0, lambda_cfg=10.0,
                              mask_start=40)
    out = anonymize(rec, cfg, None, None, unit_embedding(1), backbone, sched)
    assert np.array_equal(out, rec.x0)


def test_lambda_cfg_zero_reconstructs():
    sched, backbone, rec = _setup()
    cfg = AnonymizationConfig(T=50, t_skip=20, lambda_id=1.0, lambda_cfg=0.0,
                              mask_start=25)
    out = anonymize(rec, cfg, None, None, unit_embedding(2), backbone, sched)
    assert np.max(np.abs(out - rec.x0)) <= 1e-4


def test_lambda_cfg_one_is_pure_conditional():
    sched, backbone, rec = _setup(T=20)
    cfg = AnonymizationConfig(T=20, t_skip=10, lambda_id=1.0, lambda_cfg=1.0,
                              mask_start=0)
    e = unit_embedding(3)
    out = anonymize(rec, cfg, None, None, e, backbone, sched)
    # independent oracle: replay using only the conditional prediction
    cond = negate_scale(e, 1.0)
    params = AdapterParams(lambda_img=1.0)
    x = rec.x(10).copy()
    for t in range(10, 0, -1):
        eps = backbone(x, t, cond, params)
        mu = posterior_mean(x, eps, t, sched)
        x = mu if t == 1 else mu + np.float32(sched.sigma(t)) * rec.z(t)
    assert np.max(np.abs(out - x)) < 1e-5


def test_mask_zero_reconstructs_any_guidance():
    sched, backbone, rec = _setup()
    cfg = AnonymizationConfig(T=50, t_skip=30, lambda_id=1.0, lambda_cfg=10.0,
                              mask_start=0)
    zero = full_mask((8, 8), 0.0)
    out = anonymize(rec, cfg, zero, zero, unit_embedding(4), backbone, sched)
    assert np.max(np.abs(out - rec.x0)) <= 1e-4


def test_mask_one_equals_pure_guidance_path():
    sched, backbone, rec = _setup()
    cfg = AnonymizationConfig(T=50, t_skip=30, lambda_id=0.7, lambda_cfg=7.0,
                              mask_start=0)
    e = unit_embedding(5)
    ones = full_mask((8, 8), 1.0)
    out_masked = anonymize(rec, cfg, ones, ones, e, backbone, sched)
    # oracle: guided replay without any mask compositing
    cond = negate_scale(e, 0.7)
    uncond = null_embedding(16)
    params = AdapterParams(lambda_img=1.0)
    x = rec.x(20).copy()
    for t in range(20, 0, -1):
        hat = guidance_combine(backbone(x, t, cond, params),
                               backbone(x, t, uncond, params), 7.0)
        mu = posterior_mean(x, hat, t, sched)
        x = mu if t == 1 else mu + np.float32(sched.sigma(t)) * rec.z(t)
    assert np.max(np.abs(out_masked - x)) < 1e-5


def test_skip_equivalence_twenty_random_configs():
    g = np.random.default_rng(10)
    for trial in range(20):
        T = 50
        sched, backbone, rec = _setup(T=T, seed=trial, backbone_seed=trial % 3)
        cfg = AnonymizationConfig(
            T=T, t_skip=int(g.integers(0, T + 1)),
            lambda_id=float(g.uniform(0.0, 1.5)) if trial % 4 else 0.0,
            lambda_cfg=float(g.uniform(0.0, 12.0)),
            mask_start=int(g.integers(0, T + 1)), seed=trial)
        e = unit_embedding(trial) if cfg.lambda_id > 0 else None
        m_user = RegionMask(g.random((8, 8)))
        m_face = RegionMask((g.random((8, 8)) > 0.5).astype(np.float64))
        a = anonymize(rec, cfg, m_user, m_face, e, backbone, sched)
        b = anonymize_from_top(rec, cfg, m_user, m_face, e, backbone, sched)
        assert np.max(np.abs(a - b)) <= 1e-5


def test_t_skip_zero_variants_identical():
    sched, backbone, rec = _setup(T=20)
    cfg = AnonymizationConfig(T=20, t_skip=0, lambda_id=1.0, lambda_cfg=5.0,
                              mask_start=10)
    e = unit_embedding(6)
    a = anonymize(rec, cfg, None, None, e, backbone, sched)
    b = anonymize_from_top(rec, cfg, None, None, e, backbone, sched)
    assert np.array_equal(a, b)


def test_from_top_t_skip_full_reconstructs():
    sched, backbone, rec = _setup(T=30)
    cfg = AnonymizationConfig(T=30, t_skip=30, lambda_id=1.0, lambda_cfg=10.0,
                              mask_start=20)
    out = anonymize_from_top(rec, cfg, None, None, unit_embedding(7), backbone, sched)
    assert np.max(np.abs(out - rec.x0)) <= 1e-4


def test_mask_locality_pointwise():
    # cells whose active mask is 0 at every conditioned step stay at the
    # reconstruction; pointwise backbone makes this exact
    sched, backbone, rec = _setup(T=40, shape=(3, 8, 8))
    kept = np.ones((8, 8))
    kept[:4, :4] = 0.0  # protected block
    mask = RegionMask(kept)
    cfg = AnonymizationConfig(T=40, t_skip=25, lambda_id=1.0, lambda_cfg=10.0,
                              mask_start=15)  # user mask active for all t <= 25
    out = anonymize(rec, cfg, mask, mask, unit_embedding(8), backbone, sched)
    diff = np.abs(out - rec.x0)
    assert np.max(diff[:, :4, :4]) <= 1e-5
    assert np.max(diff[:, 4:, 4:]) > 1e-3


def test_mask_timing_switches_at_mask_start():
    sched, backbone, rec = _setup(T=10)
    cfg = AnonymizationConfig(T=10, t_skip=0, lambda_id=1.0, lambda_cfg=3.0,
                              mask_start=6)
    e = unit_embedding(9)
    _, trace = anonymize_from_top(rec, cfg, full_mask((8, 8), 1.0),
                                  full_mask((8, 8), 0.0), e, backbone, sched,
                                  trace=True)
    flags = {s["t"]: s["mask_active"] for s in trace.steps}
    # user mask activates once 6 iterations are done, i.e. for t <= T-6 = 4
    assert all(flags[t] is False for t in range(5, 11))
    assert all(flags[t] is True for t in range(1, 5))


def test_trace_dump_container(tmp_path):
    sched, backbone, rec = _setup(T=6)
    cfg = AnonymizationConfig(T=6, t_skip=3, lambda_id=1.0, lambda_cfg=2.0,
                              mask_start=0)
    out, trace = anonymize(rec, cfg, None, None, unit_embedding(10), backbone,
                           sched, trace=True)
    path = trace.save(tmp_path / "run.trace")
    from nullface.container import read_container
    meta, arrays = read_container(path)
    assert meta["kind"] == "guided-step-trace"
    assert set(arrays) == {f"eps_hat_{t}" for t in (1, 2, 3)} \
        | {f"eps_tilde_{t}" for t in (1, 2, 3)}


def test_non_null_embedding_required_unless_lambda_zero():
    sched, backbone, rec = _setup(T=10)
    cfg = AnonymizationConfig(T=10, t_skip=5, lambda_id=1.0, lambda_cfg=2.0,
                              mask_start=0)
    with pytest.raises(ValidationError):
        anonymize(rec, cfg, None, None, None, backbone, sched)
    cfg0 = AnonymizationConfig(T=10, t_skip=5, lambda_id=0.0, lambda_cfg=2.0,
                               mask_start=0)
    out = anonymize(rec, cfg0, None, None, None, backbone, sched)
    assert np.max(np.abs(out - rec.x0)) <= 1e-4


def test_fingerprint_mismatch_rejected():
    sched, backbone, rec = _setup(T=10)
    other = ToyPointwiseBackbone(seed=99)
    cfg = AnonymizationConfig(T=10, t_skip=5, lambda_id=1.0, lambda_cfg=2.0,
                              mask_start=0)
    with pytest.raises(FingerprintMismatchError):
        anonymize(rec, cfg, None, None, unit_embedding(11), other, sched)


def test_config_range_validation():
    with pytest.raises(ValidationError):
        AnonymizationConfig(T=50, t_skip=51)
    with pytest.raises(ValidationError):
        AnonymizationConfig(T=50, mask_start=51)
    with pytest.raises(ValidationError):
        AnonymizationConfig(T=50, lambda_id=-1.0)
    with pytest.raises(ValidationError):
        AnonymizationConfig(T=50, lambda_cfg=float("inf"))


def test_paper_default_configuration_runs():
    # reference settings: T=100, skip 70, unit identity scale, guidance 10,
    # eye-and-mouth-revealing mask activated after 80 iterations
    sched, backbone, rec = _setup(T=100, shape=(3, 8, 8))
    cfg = AnonymizationConfig()
    assert (cfg.T, cfg.t_skip, cfg.lambda_id, cfg.lambda_cfg) == (100, 70, 1.0, 10.0)
    assert (cfg.mask_preset, cfg.mask_start) == ("keep-eyes-mouth", 80)
    out = anonymize(rec, cfg, None, None, unit_embedding(12), backbone, sched)
    assert out.shape == rec.latent_shape and np.all(np.isfinite(out))


def test_lean_record_anonymize_matches_full():
    sched = default_schedule(20)
    backbone = ToyPointwiseBackbone(seed=0)
    x0 = random_latent(30)
    full = invert(x0, backbone, sched, seed=3)
    lean = invert(x0, backbone, sched, seed=3, lean=True)
    cfg = AnonymizationConfig(T=20, t_skip=12, lambda_id=1.0, lambda_cfg=8.0,
                              mask_start=10)
    e = unit_embedding(13)
    out_full = anonymize(full, cfg, None, None, e, backbone, sched)
    out_lean = anonymize(lean, cfg, None, None, e, backbone, sched)
    assert np.max(np.abs(out_full - out_lean)) <= 1e-5
