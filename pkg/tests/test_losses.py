import numpy as np
import pytest

from dpad import numerics as nm
from dpad.losses import (
    DGLossConfig,
    FrequencyTracker,
    diversity_loss,
    mae,
    mse,
    rarity_loss,
    separation_loss,
    total_loss,
)


def t(x, grad=False, name=""):
    return nm.tensor(x, requires_grad=grad, name=name)


# ---------------------------------------------------------------------------
# metrics


def test_mse_mae_trivials():
    assert mse(t([1.0, 2.0]), t([1.0, 2.0])).item() == 0.0
    assert mae(t([1.0, 2.0]), t([1.0, 2.0])).item() == 0.0
    assert mse(t([0.0, 0.0]), t([1.0, 3.0])).item() == 5.0
    assert mae(t([0.0, 0.0]), t([1.0, 3.0])).item() == 2.0


def test_metrics_match_loop_oracle():
    rng = np.random.default_rng(0)
    pred = rng.uniform(-2, 2, (4, 3))
    target = rng.uniform(-2, 2, (4, 3))
    se = ae = 0.0
    for i in range(4):
        for j in range(3):
            d = pred[i, j] - target[i, j]
            se += d * d
            ae += abs(d)
    assert mse(t(pred), t(target)).item() == pytest.approx(se / 12, abs=1e-12)
    assert mae(t(pred), t(target)).item() == pytest.approx(ae / 12, abs=1e-12)


def test_metrics_shape_mismatch():
    with pytest.raises(nm.ShapeError):
        mse(t([1.0]), t([1.0, 2.0]))
    with pytest.raises(nm.ShapeError):
        mae(t(np.ones((2, 2))), t(np.ones(4)))


# ---------------------------------------------------------------------------
# frequency tracker


def test_tracker_all_equal_counts():
    tr = FrequencyTracker(4)
    for i in range(4):
        assert tr.weight(i) == 1.0


def test_tracker_one_hot():
    tr = FrequencyTracker(3)
    tr.counts = np.array([0.0, 5.0, 0.0])
    assert tr.weight(1) == 1.0
    assert tr.weight(0) == 0.0
    assert tr.weight(2) == 0.0


def test_tracker_update_arithmetic_oracle():
    tr = FrequencyTracker(3, ema=0.9)
    tr.counts = np.array([2.0, 1.0, 1.0])
    tr.update(np.array([0.0, 1.0, 0.0]))
    assert np.allclose(tr.counts, [1.8, 1.0, 0.9], atol=1e-15)
    assert tr.weight(0) == pytest.approx(1.0, abs=1e-15)
    assert tr.weight(1) == pytest.approx(1.0 / 1.8, abs=1e-12)


def test_tracker_histogram():
    tr = FrequencyTracker(5)
    hist = tr.histogram([0, 2, 2, 4])
    assert np.array_equal(hist, [1, 0, 2, 0, 1])


def test_tracker_sum_positive_after_updates():
    tr = FrequencyTracker(3, ema=0.5)
    for _ in range(50):
        tr.update(np.zeros(3))
    assert tr.counts.sum() > 0


# ---------------------------------------------------------------------------
# separation loss


def test_separation_satisfied_hinges_are_zero():
    m = 0.3
    assert separation_loss(t([m, m + 0.5]), [1.0, 1.0], m).item() == 0.0
    assert separation_loss(t([-m, -m - 0.5]), [0.0, 0.0], m).item() == 0.0


def test_separation_closed_form():
    # omega=0.5, m=0.5, delta=0 -> 0.5*0.5 + 0.5*0.5 = 0.5
    assert separation_loss(t([0.0]), [0.5], 0.5).item() == pytest.approx(0.5, abs=1e-15)


def test_separation_monotonicity():
    rng = np.random.default_rng(1)
    deltas = np.sort(rng.uniform(-1, 1, 100))
    vals_freq = [separation_loss(t([d]), [1.0], 0.2).item() for d in deltas]
    vals_rare = [separation_loss(t([d]), [0.0], 0.2).item() for d in deltas]
    assert all(a >= b - 1e-15 for a, b in zip(vals_freq, vals_freq[1:]))   # nonincreasing
    assert all(a <= b + 1e-15 for a, b in zip(vals_rare, vals_rare[1:]))   # nondecreasing


def test_separation_nonnegative_random():
    rng = np.random.default_rng(2)
    for _ in range(50):
        delta = t(rng.uniform(-2, 2, 6))
        omega = rng.uniform(0, 1, 6)
        assert separation_loss(delta, omega, 0.4).item() >= 0.0


def test_separation_gradient():
    rng = np.random.default_rng(3)
    raw = rng.uniform(-1, 1, 5)
    raw[np.abs(np.abs(raw) - 0.3) < 1e-3] += 0.01  # keep off the hinge kinks
    delta = t(raw, grad=True, name="delta")
    omega = rng.uniform(0, 1, 5)
    report = nm.finite_diff_check(lambda: separation_loss(delta, omega, 0.3),
                                  [delta], step=1e-5, tol=1e-4)
    assert report.passed, repr(report)


# ---------------------------------------------------------------------------
# rarity loss


def test_rarity_empty_activation_set():
    sims = t(np.zeros((3, 4)))
    assert rarity_loss(sims, [], 0.5).item() == 0.0


def test_rarity_single_prototype_zero():
    sims = t([[0.9], [0.2]])
    assert rarity_loss(sims, [(0, 0)], 1.0).item() == pytest.approx(0.0, abs=1e-12)


def test_rarity_two_symmetric_ln2():
    sims = t([[0.4, 0.4]])
    assert rarity_loss(sims, [(0, 0)], 1.0).item() == pytest.approx(np.log(2.0), abs=1e-10)


def test_rarity_scalar_oracle():
    # independent scalar computation of -log softmax at index 0
    row = np.array([0.9, 0.1, 0.1])
    tau = 1.0
    expected = -np.log(np.exp(row[0] / tau) / np.exp(row / tau).sum())
    sims = t(row.reshape(1, 3))
    assert rarity_loss(sims, [(0, 0)], tau).item() == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.6411472830263618, abs=1e-12)


def test_rarity_strictly_decreases_in_own_similarity():
    tau = 0.5
    prev = np.inf
    for s in np.linspace(0.0, 0.9, 10):
        row = np.array([s, 0.3, 0.1])
        val = rarity_loss(t(row.reshape(1, 3)), [(0, 0)], tau).item()
        assert val < prev
        prev = val


def test_rarity_mean_over_activated():
    rows = np.array([[0.8, 0.1], [0.2, 0.6]])
    both = rarity_loss(t(rows), [(0, 0), (1, 1)], 1.0).item()
    first = rarity_loss(t(rows), [(0, 0)], 1.0).item()
    second = rarity_loss(t(rows), [(1, 1)], 1.0).item()
    assert both == pytest.approx((first + second) / 2, abs=1e-12)


def test_rarity_gradient():
    rng = np.random.default_rng(4)
    sims = t(rng.uniform(-1, 1, (4, 3)), grad=True, name="sims")
    report = nm.finite_diff_check(
        lambda: rarity_loss(sims, [(0, 1), (2, 0), (3, 2)], 0.5),
        [sims], step=1e-5, tol=1e-4)
    assert report.passed, repr(report)


# ---------------------------------------------------------------------------
# diversity loss


def test_diversity_orthogonal_rows_zero():
    p = t(np.eye(4, 6))
    assert diversity_loss(p).item() == pytest.approx(0.0, abs=1e-12)


def test_diversity_identical_rows_one():
    p = t(np.tile(np.arange(1.0, 5.0), (3, 1)))
    assert diversity_loss(p).item() == pytest.approx(1.0, abs=1e-12)


def test_diversity_closed_form_half_cosine():
    # two unit rows at 60 degrees: cos = 0.5 -> (0.25 + 0.25) / 2 = 0.25
    p = t(np.array([[1.0, 0.0], [0.5, np.sqrt(3) / 2]]))
    assert diversity_loss(p).item() == pytest.approx(0.25, abs=1e-12)


def test_diversity_rescaling_invariance():
    rng = np.random.default_rng(5)
    p = rng.uniform(-1, 1, (5, 4))
    base = diversity_loss(t(p)).item()
    scales = rng.uniform(0.1, 10, 5)
    assert diversity_loss(t(p * scales[:, None])).item() == pytest.approx(base, abs=1e-10)


def test_diversity_zero_norm_row_neutral():
    p = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
    # only the (0,2) pair could contribute; it is orthogonal -> 0
    assert diversity_loss(t(p)).item() == pytest.approx(0.0, abs=1e-12)


def test_diversity_range_random():
    rng = np.random.default_rng(6)
    for _ in range(30):
        p = t(rng.uniform(-2, 2, (6, 5)))
        v = diversity_loss(p).item()
        assert 0.0 <= v <= 1.0


def test_diversity_needs_two_rows():
    with pytest.raises(nm.ShapeError):
        diversity_loss(t(np.ones((1, 4))))


def test_diversity_gradient():
    rng = np.random.default_rng(7)
    p = t(rng.uniform(-2, 2, (3, 4)), grad=True, name="p")
    report = nm.finite_diff_check(lambda: diversity_loss(p), [p], step=1e-5, tol=1e-4)
    assert report.passed, repr(report)


# ---------------------------------------------------------------------------
# total loss


def test_total_all_zero_weights_is_mse_bitwise():
    cfg = DGLossConfig(sep_weight=0.0, rare_weight=0.0, div_weight=0.0)
    m = t(0.123456789)
    out = total_loss(m, t(1.0), t(2.0), t(3.0), cfg)
    assert out is m


def test_total_arithmetic():
    cfg = DGLossConfig(sep_weight=1.0, rare_weight=1.0, div_weight=1.0)
    out = total_loss(t(0.1), t(0.2), t(0.3), t(0.4), cfg)
    assert out.item() == pytest.approx(1.0, abs=1e-12)


def test_total_none_terms_skipped():
    cfg = DGLossConfig(sep_weight=0.5, rare_weight=0.5, div_weight=0.5)
    out = total_loss(t(1.0), None, t(2.0), None, cfg)
    assert out.item() == pytest.approx(2.0, abs=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        DGLossConfig(sep_weight=-0.1).validate()
    with pytest.raises(ValueError):
        DGLossConfig(margin=0.0).validate()
    with pytest.raises(ValueError):
        DGLossConfig(freq_ema=1.0).validate()
