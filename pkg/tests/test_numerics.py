import numpy as np
import pytest

from dpad import numerics as nm


def grad_of(f, params):
    for p in params:
        p.zero_grad()
    with nm.Tape() as tape:
        loss = f()
        tape.backward(loss)
    return [p.grad.copy() for p in params]


def test_matmul_identity():
    a = nm.tensor([[1.0, 2.0], [3.0, 4.0]])
    eye = nm.tensor([[1.0, 0.0], [0.0, 1.0]])
    out = nm.matmul(a, eye)
    assert np.array_equal(out.data, a.data)


def test_softmax_symmetry_and_sum():
    out = nm.softmax(nm.tensor([0.0, 0.0, 0.0]))
    assert np.allclose(out.data, [1 / 3, 1 / 3, 1 / 3])
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = nm.tensor(rng.uniform(-5, 5, size=7))
        s = nm.softmax(x)
        assert abs(s.data.sum() - 1.0) <= 1e-12
        assert np.all(s.data > 0) and np.all(s.data <= 1.0)


def test_mean_example():
    assert nm.mean(nm.tensor([2.0, 4.0, 6.0])).item() == 4.0


def test_backward_sum_gives_ones():
    x = nm.tensor([1.0, 2.0, 3.0], requires_grad=True)
    with nm.Tape() as tape:
        loss = nm.tsum(x)
        tape.backward(loss)
    assert np.array_equal(x.grad, np.ones(3))


def test_backward_sum_of_squares():
    x = nm.tensor([1.0, 2.0], requires_grad=True)
    with nm.Tape() as tape:
        loss = nm.tsum(nm.mul(x, x))
        tape.backward(loss)
    assert np.array_equal(x.grad, [2.0, 4.0])


def test_backward_requires_scalar():
    x = nm.tensor([1.0, 2.0], requires_grad=True)
    with nm.Tape() as tape:
        y = nm.mul(x, x)
        with pytest.raises(nm.NumericsError):
            tape.backward(y)


def test_shape_error_names_op_and_shapes():
    a = nm.tensor(np.ones((2, 3)))
    b = nm.tensor(np.ones((4, 2)))
    with pytest.raises(nm.ShapeError) as err:
        nm.matmul(a, b)
    assert "matmul" in str(err.value)
    assert "(2, 3)" in str(err.value)


def test_backward_deterministic_bitwise():
    rng = np.random.default_rng(5)
    x_data = rng.uniform(-2, 2, size=(4, 3))
    w_data = rng.uniform(-2, 2, size=(3, 2))

    def run():
        x = nm.tensor(x_data, requires_grad=True)
        w = nm.tensor(w_data, requires_grad=True)
        with nm.Tape() as tape:
            y = nm.matmul(x, w)
            loss = nm.mean(nm.square(nm.add(nm.softmax(y), nm.relu(y))))
            tape.backward(loss)
        return x.grad.copy(), w.grad.copy()

    gx1, gw1 = run()
    gx2, gw2 = run()
    assert np.array_equal(gx1, gx2)
    assert np.array_equal(gw1, gw2)


def test_debug_finite_checks():
    nm.set_debug_checks(True)
    try:
        with pytest.raises(nm.NumericsError):
            nm.log(nm.tensor([-1.0]))
    finally:
        nm.set_debug_checks(False)


def test_finite_diff_sum_of_squares_passes_tight():
    rng = np.random.default_rng(1)
    x = nm.tensor(rng.uniform(-2, 2, size=6), requires_grad=True, name="x")
    report = nm.finite_diff_check(lambda: nm.tsum(nm.square(x)), [x], step=1e-5, tol=1e-6)
    assert report.passed, repr(report)


def test_finite_diff_rejects_bad_step():
    x = nm.tensor([1.0], requires_grad=True)
    with pytest.raises(nm.NumericsError):
        nm.finite_diff_check(lambda: nm.tsum(x), [x], step=0.5)


# Gradient sweep: every differentiable op kind checked against central
# finite differences on random inputs in [-2, 2], avoiding kink
# neighborhoods for the non-smooth ops.

def _case(rng, kind):
    if kind == "matmul":
        a = nm.tensor(rng.uniform(-2, 2, (3, 4)), requires_grad=True, name="a")
        b = nm.tensor(rng.uniform(-2, 2, (4, 2)), requires_grad=True, name="b")
        return lambda: nm.tsum(nm.square(nm.matmul(a, b))), [a, b]
    if kind in ("add", "mul", "sub", "div"):
        a = nm.tensor(rng.uniform(-2, 2, (3, 4)), requires_grad=True, name="a")
        raw = rng.uniform(-2, 2, (3, 4))
        if kind == "div":
            raw = np.sign(raw) * np.maximum(np.abs(raw), 0.5)
        b = nm.tensor(raw, requires_grad=True, name="b")
        return lambda: nm.tsum(nm.square(nm.apply_op(kind, a, b))), [a, b]
    if kind == "div_scalar":
        a = nm.tensor(rng.uniform(-2, 2, 5), requires_grad=True, name="a")
        return lambda: nm.tsum(nm.square(nm.div_scalar(a, 3.7))), [a]
    if kind in ("mean", "sum", "std", "softmax", "neg", "square"):
        a = nm.tensor(rng.uniform(-2, 2, 6), requires_grad=True, name="a")
        op = nm.tsum if kind == "sum" else getattr(nm, kind)
        return lambda: nm.tsum(nm.square(op(a))), [a]
    if kind in ("log", "sqrt"):
        a = nm.tensor(rng.uniform(0.3, 2, 6), requires_grad=True, name="a")
        op = getattr(nm, kind)
        return lambda: nm.tsum(nm.square(op(a))), [a]
    if kind == "exp":
        a = nm.tensor(rng.uniform(-1, 1, 6), requires_grad=True, name="a")
        return lambda: nm.tsum(nm.square(nm.exp(a))), [a]
    if kind in ("relu", "max_with_scalar"):
        raw = rng.uniform(-2, 2, 8)
        raw = raw[np.abs(raw) > 1e-2][:5]  # stay clear of the kink
        a = nm.tensor(raw, requires_grad=True, name="a")
        if kind == "relu":
            return lambda: nm.tsum(nm.square(nm.relu(a))), [a]
        return lambda: nm.tsum(nm.square(nm.max_with_scalar(a, 0.0))), [a]
    if kind == "concat":
        a = nm.tensor(rng.uniform(-2, 2, 3), requires_grad=True, name="a")
        b = nm.tensor(rng.uniform(-2, 2, 4), requires_grad=True, name="b")
        return lambda: nm.tsum(nm.square(nm.concat([a, b]))), [a, b]
    if kind == "transpose":
        a = nm.tensor(rng.uniform(-2, 2, (3, 4)), requires_grad=True, name="a")
        return lambda: nm.tsum(nm.square(nm.transpose(a))), [a]
    if kind == "slice":
        a = nm.tensor(rng.uniform(-2, 2, (5, 3)), requires_grad=True, name="a")
        return lambda: nm.tsum(nm.square(nm.slice_rows(a, 1, 4))), [a]
    if kind == "take_rows":
        a = nm.tensor(rng.uniform(-2, 2, (5, 3)), requires_grad=True, name="a")
        return lambda: nm.tsum(nm.square(nm.take_rows(a, [0, 2, 2, 4]))), [a]
    if kind == "take":
        a = nm.tensor(rng.uniform(-2, 2, (4, 4)), requires_grad=True, name="a")
        return lambda: nm.tsum(nm.square(nm.take(a, [0, 1, 3], [2, 2, 0]))), [a]
    if kind == "reshape":
        a = nm.tensor(rng.uniform(-2, 2, (2, 6)), requires_grad=True, name="a")
        return lambda: nm.tsum(nm.square(nm.reshape(a, (3, 4)))), [a]
    if kind == "scatter_cols":
        a = nm.tensor(rng.uniform(-2, 2, (3, 2)), requires_grad=True, name="a")
        cols = np.array([[0, 4], [1, 1], [2, 0]])  # includes a duplicate
        return lambda: nm.tsum(nm.square(nm.scatter_cols(a, cols, 5))), [a]
    if kind == "moving_average":
        a = nm.tensor(rng.uniform(-2, 2, 9), requires_grad=True, name="a")
        return lambda: nm.tsum(nm.square(nm.moving_average(a, 3))), [a]
    raise AssertionError(kind)


ALL_KINDS = ["matmul", "add", "mul", "sub", "div", "div_scalar", "mean", "std",
             "softmax", "concat", "relu", "sum", "neg", "log", "exp",
             "max_with_scalar", "square", "sqrt", "transpose", "slice",
             "take_rows", "take", "reshape", "scatter_cols", "moving_average"]


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_gradients_match_finite_differences(kind):
    for seed in range(3):
        rng = np.random.default_rng(1000 + seed)
        f, params = _case(rng, kind)
        report = nm.finite_diff_check(f, params, step=1e-5, tol=1e-4)
        assert report.passed, f"{kind} seed {seed}:\n{report!r}"


def test_broadcast_add_bias_row():
    w = nm.tensor(np.random.default_rng(3).uniform(-1, 1, (4, 3)), requires_grad=True, name="w")
    b = nm.tensor(np.random.default_rng(4).uniform(-1, 1, 3), requires_grad=True, name="b")
    report = nm.finite_diff_check(lambda: nm.tsum(nm.square(nm.add(w, b))), [w, b])
    assert report.passed, repr(report)


def test_axis_reductions_gradients():
    rng = np.random.default_rng(7)
    a = nm.tensor(rng.uniform(-2, 2, (3, 5)), requires_grad=True, name="a")
    for axis, keep in ((0, False), (1, True)):
        report = nm.finite_diff_check(
            lambda: nm.tsum(nm.square(nm.mean(a, axis=axis, keepdims=keep))), [a])
        assert report.passed, repr(report)
        report = nm.finite_diff_check(
            lambda: nm.tsum(nm.square(nm.tsum(a, axis=axis, keepdims=keep))), [a])
        assert report.passed, repr(report)


def test_moving_average_constant_preserved():
    x = nm.tensor(np.full(7, 3.5))
    out = nm.moving_average(x, 5)
    assert np.allclose(out.data, 3.5)
