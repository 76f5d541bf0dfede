import numpy as np
import pytest

from dpad.gp_priors import (
    ConfigurationError,
    KernelMixtureConfig,
    RareInitConfig,
    build_gram,
    kernel_value,
    sample_gp,
    sample_rare,
)


def test_rbf_zero_distance_is_one():
    cfg = KernelMixtureConfig(rbf_lengthscale=0.37)
    assert kernel_value("rbf", 5.0, 5.0, cfg) == 1.0


def test_periodic_exact_period_shift_is_one():
    cfg = KernelMixtureConfig(periodic_period=0.25)
    assert kernel_value("periodic", 0.0, 0.25, cfg) == pytest.approx(1.0, abs=1e-12)


def test_linear_zero_argument():
    cfg = KernelMixtureConfig(linear_scale=1.0)
    assert kernel_value("linear", 0.0, 7.0, cfg) == 0.0


def test_gram_closed_form_rbf_only():
    cfg = KernelMixtureConfig(lambda_l=0.0, lambda_p=0.0, lambda_r=1.0,
                              rbf_lengthscale=0.2, jitter=1e-6)
    gram = build_gram(2, cfg)
    k = np.exp(-1.0 / (2 * 0.2 ** 2))
    expected = np.array([[1 + 1e-6, k], [k, 1 + 1e-6]])
    assert np.allclose(gram, expected, atol=1e-15)


def test_gram_symmetric_bitwise():
    for length in (2, 16, 64):
        gram = build_gram(length, KernelMixtureConfig())
        assert np.array_equal(gram, gram.T)


def test_gram_pd_via_cholesky_mixed():
    gram = build_gram(16, KernelMixtureConfig())
    np.linalg.cholesky(gram)  # raises if not PD


def test_gram_pd_up_to_720():
    gram = build_gram(720, KernelMixtureConfig())
    np.linalg.cholesky(gram)


def test_gram_invalid_length():
    with pytest.raises(ConfigurationError):
        build_gram(1, KernelMixtureConfig())


def test_sample_gp_identity_gram_standard_normal():
    gram = np.eye(4)
    rng = np.random.default_rng(123)
    samples = np.stack([sample_gp(gram, rng) for _ in range(10_000)])
    assert np.all(np.abs(samples.mean(axis=0)) < 0.05)
    assert np.all((samples.var(axis=0) > 0.9) & (samples.var(axis=0) < 1.1))


def test_sample_gp_covariance_matches_gram():
    cfg = KernelMixtureConfig()
    gram = build_gram(4, cfg)
    rng = np.random.default_rng(7)
    samples = np.stack([sample_gp(gram, rng) for _ in range(10_000)])
    emp = np.cov(samples.T, bias=True)
    assert np.all(np.abs(emp - gram) < 0.1)


def test_sample_gp_deterministic():
    gram = build_gram(8, KernelMixtureConfig())
    a = sample_gp(gram, np.random.default_rng(99))
    b = sample_gp(gram, np.random.default_rng(99))
    assert np.array_equal(a, b)


def test_sample_rare_rejects_zero_sigma():
    with pytest.raises(ConfigurationError):
        sample_rare(RareInitConfig(sigma=0.0, length=8), np.random.default_rng(0))


def test_sample_rare_tail_bound():
    # loose Gaussian-tail bound over 10 trials: max |v| < 0.06*sqrt(2 ln(96*10))
    cfg = RareInitConfig(sigma=0.01, length=96)
    bound = 0.06 * np.sqrt(2 * np.log(96 * 10))
    for seed in range(10):
        sample = sample_rare(cfg, np.random.default_rng(seed))
        assert np.max(np.abs(sample)) < bound


def test_sample_rare_deterministic():
    cfg = RareInitConfig(sigma=0.02, length=32)
    a = sample_rare(cfg, np.random.default_rng(11))
    b = sample_rare(cfg, np.random.default_rng(11))
    assert np.array_equal(a, b)


def test_sample_rare_scales_linearly_bitwise():
    a = sample_rare(RareInitConfig(sigma=0.015, length=64), np.random.default_rng(5))
    b = sample_rare(RareInitConfig(sigma=0.030, length=64), np.random.default_rng(5))
    assert np.array_equal(2.0 * a, b)


def test_kernel_config_validation():
    with pytest.raises(ConfigurationError):
        KernelMixtureConfig(lambda_l=0, lambda_r=0, lambda_p=0).validate()
    with pytest.raises(ConfigurationError):
        KernelMixtureConfig(rbf_lengthscale=-1).validate()


def test_kernel_values_bounded():
    cfg = KernelMixtureConfig()
    rng = np.random.default_rng(2)
    for _ in range(200):
        t, t2 = rng.uniform(0, 1, 2)
        for kind in ("rbf", "periodic"):
            v = kernel_value(kind, t, t2, cfg)
            assert 0.0 < v <= 1.0
