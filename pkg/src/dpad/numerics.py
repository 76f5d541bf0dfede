"""Dense float64 tensors with reverse-mode differentiation.

Define-by-run: a Tape records every operation whose inputs require
gradients while it is active; ``backward`` replays the records in
reverse. The tape is rebuilt on every forward pass, and one tape is
strictly single-threaded (independent tapes on separate threads are
fine).

Shape support is deliberately small: scalars, vectors, matrices, and
the numpy broadcasting needed by the model (bias rows, column scaling).
"""

from __future__ import annotations

import threading

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "NumericsError",
    "tensor",
    "apply_op",
    "finite_diff_check",
    "FiniteDiffReport",
    "set_debug_checks",
]


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to an op's rule."""


class NumericsError(ArithmeticError):
    """Raised on non-finite values or invalid numeric usage."""


_DEBUG_CHECK_FINITE = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle per-op non-finite checks (off by default; the trainer
    always checks at loss evaluation)."""
    global _DEBUG_CHECK_FINITE
    _DEBUG_CHECK_FINITE = bool(enabled)


_state = threading.local()


def _tape_stack():
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of operations for one forward pass.

    Records are appended in execution order, so the list is already
    topologically sorted; backward walks it once in reverse. Gradient
    accumulation order is fixed by the record order, making backward
    bitwise deterministic for an identical tape.
    """

    def __init__(self):
        self._records = []  # (inputs tuple, output, backward fn)

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self._records)

    def record(self, inputs, output, backward_fn):
        self._records.append((inputs, output, backward_fn))

    def backward(self, loss: "Tensor") -> None:
        """Populate .grad on every requires_grad tensor reachable from
        ``loss`` with d(loss)/d(tensor). ``loss`` must be a scalar."""
        if loss.data.shape != ():
            raise NumericsError(
                f"backward requires a scalar loss, got shape {loss.data.shape}"
            )
        loss._ensure_grad()
        loss.grad += 1.0
        for inputs, output, backward_fn in reversed(self._records):
            if output.grad is None:
                continue
            backward_fn(output.grad)


class Tensor:
    """A float64 ndarray plus optional gradient participation."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    def _ensure_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise NumericsError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    # Operator sugar; scalars are lifted to constant tensors.
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return div_scalar(self, other)
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make_output(op: str, data, inputs, backward_builder) -> Tensor:
    """Wrap a forward result; record on the active tape when any input
    participates in differentiation."""
    if _DEBUG_CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NumericsError(f"non-finite output from op '{op}'")
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires)
    tape = _active_tape()
    if requires and tape is not None:
        tape.record(tuple(inputs), out, backward_builder(out))
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(
            f"{op}: shapes {a.data.shape} and {b.data.shape} do not broadcast"
        ) from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)

    def bwd(out):
        def run(g):
            if a.requires_grad:
                a._ensure_grad()
                a.grad += _unbroadcast(g, a.data.shape)
            if b.requires_grad:
                b._ensure_grad()
                b.grad += _unbroadcast(g, b.data.shape)

        return run

    return _make_output("add", a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)

    def bwd(out):
        def run(g):
            if a.requires_grad:
                a._ensure_grad()
                a.grad += _unbroadcast(g, a.data.shape)
            if b.requires_grad:
                b._ensure_grad()
                b.grad -= _unbroadcast(g, b.data.shape)

        return run

    return _make_output("sub", a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a, b)

    def bwd(out):
        def run(g):
            if a.requires_grad:
                a._ensure_grad()
                a.grad += _unbroadcast(g * b.data, a.data.shape)
            if b.requires_grad:
                b._ensure_grad()
                b.grad += _unbroadcast(g * a.data, b.data.shape)

        return run

    return _make_output("mul", a.data * b.data, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a / b with broadcasting (b a tensor)."""
    _check_broadcast("div", a, b)

    def bwd(out):
        def run(g):
            if a.requires_grad:
                a._ensure_grad()
                a.grad += _unbroadcast(g / b.data, a.data.shape)
            if b.requires_grad:
                b._ensure_grad()
                b.grad += _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)

        return run

    return _make_output("div", a.data / b.data, (a, b), bwd)


def div_scalar(a: Tensor, s: float) -> Tensor:
    s = float(s)
    if s == 0.0:
        raise NumericsError("div_scalar: division by zero")

    def bwd(out):
        def run(g):
            a._ensure_grad()
            a.grad += g / s

        return run

    return _make_output("div_scalar", a.data / s, (a,), bwd)


def neg(a: Tensor) -> Tensor:
    def bwd(out):
        def run(g):
            a._ensure_grad()
            a.grad -= g

        return run

    return _make_output("neg", -a.data, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    val = np.exp(a.data)

    def bwd(out):
        def run(g):
            a._ensure_grad()
            a.grad += g * out.data

        return run

    return _make_output("exp", val, (a,), bwd)


def log(a: Tensor) -> Tensor:
    def bwd(out):
        def run(g):
            a._ensure_grad()
            a.grad += g / a.data

        return run

    with np.errstate(invalid="ignore", divide="ignore"):
        val = np.log(a.data)
    return _make_output("log", val, (a,), bwd)


def sqrt(a: Tensor) -> Tensor:
    val = np.sqrt(a.data)

    def bwd(out):
        def run(g):
            a._ensure_grad()
            a.grad += g * 0.5 / out.data

        return run

    return _make_output("sqrt", val, (a,), bwd)


def square(a: Tensor) -> Tensor:
    def bwd(out):
        def run(g):
            a._ensure_grad()
            a.grad += g * 2.0 * a.data

        return run

    return _make_output("square", a.data * a.data, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # subgradient 0 at exactly 0

    def bwd(out):
        def run(g):
            a._ensure_grad()
            a.grad += g * mask

        return run

    return _make_output("relu", np.where(mask, a.data, 0.0), (a,), bwd)


def max_with_scalar(a: Tensor, s: float) -> Tensor:
    s = float(s)
    mask = a.data > s  # subgradient 0 at the kink

    def bwd(out):
        def run(g):
            a._ensure_grad()
            a.grad += g * mask

        return run

    return _make_output("max_with_scalar", np.where(mask, a.data, s), (a,), bwd)


# ---------------------------------------------------------------------------
# contractions and reductions


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """1-D/2-D matrix products: (m,k)x(k,n), (k,)x(k,n), (m,k)x(k,),
    and the (k,)x(k,) inner product."""
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2):
        raise ShapeError(f"matmul: only 1-D/2-D operands, got {ad.shape} x {bd.shape}")
    ak = ad.shape[-1]
    bk = bd.shape[0]
    if ak != bk:
        raise ShapeError(f"matmul: inner dims differ, {ad.shape} x {bd.shape}")

    def bwd(out):
        def run(g):
            g = np.asarray(g)
            if a.requires_grad:
                a._ensure_grad()
                if ad.ndim == 1 and bd.ndim == 1:
                    a.grad += g * bd
                elif ad.ndim == 1:
                    a.grad += bd @ g
                elif bd.ndim == 1:
                    a.grad += np.outer(g, bd)
                else:
                    a.grad += g @ bd.T
            if b.requires_grad:
                b._ensure_grad()
                if ad.ndim == 1 and bd.ndim == 1:
                    b.grad += g * ad
                elif ad.ndim == 1:
                    b.grad += np.outer(ad, g)
                elif bd.ndim == 1:
                    b.grad += ad.T @ g
                else:
                    b.grad += ad.T @ g

        return run

    return _make_output("matmul", ad @ bd, (a, b), bwd)


def _reduce_grad(g, a_shape, axis, keepdims):
    g = np.asarray(g)
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, a_shape)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def bwd(out):
        def run(g):
            a._ensure_grad()
            a.grad += _reduce_grad(g, a.data.shape, axis, keepdims)

        return run

    return _make_output("sum", a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        count = a.data.shape[axis]

    def bwd(out):
        def run(g):
            a._ensure_grad()
            a.grad += _reduce_grad(g, a.data.shape, axis, keepdims) / count

        return run

    return _make_output("mean", a.data.mean(axis=axis, keepdims=keepdims), (a,), bwd)


def std(a: Tensor) -> Tensor:
    """Population standard deviation over all elements (composition, so
    the gradient comes from the primitives). Undefined gradient at an
    exactly constant input; callers floor/guard that case."""
    centered = sub(a, mean(a))
    return sqrt(mean(square(centered)))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    val = e / e.sum(axis=axis, keepdims=True)

    def bwd(out):
        def run(g):
            a._ensure_grad()
            s = out.data
            inner = (g * s).sum(axis=axis, keepdims=True)
            a.grad += s * (g - inner)

        return run

    return _make_output("softmax", val, (a,), bwd)


# ---------------------------------------------------------------------------
# structure ops


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: needs at least one input")
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(out):
        def run(g):
            for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
                if not t.requires_grad:
                    continue
                t._ensure_grad()
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(start, stop)
                t.grad += g[tuple(idx)]

        return run

    return _make_output(
        "concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, bwd
    )


def reshape(a: Tensor, shape) -> Tensor:
    def bwd(out):
        def run(g):
            a._ensure_grad()
            a.grad += g.reshape(a.data.shape)

        return run

    return _make_output("reshape", a.data.reshape(shape), (a,), bwd)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expects a matrix, got shape {a.data.shape}")

    def bwd(out):
        def run(g):
            a._ensure_grad()
            a.grad += g.T

        return run

    return _make_output("transpose", a.data.T.copy(), (a,), bwd)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous slice along axis 0."""
    def bwd(out):
        def run(g):
            a._ensure_grad()
            a.grad[start:stop] += g

        return run

    return _make_output("slice", a.data[start:stop].copy(), (a,), bwd)


def take_rows(a: Tensor, indices) -> Tensor:
    """Gather rows by integer index (repeats allowed)."""
    idx = np.asarray(indices, dtype=np.intp)

    def bwd(out):
        def run(g):
            a._ensure_grad()
            np.add.at(a.grad, idx, g)

        return run

    return _make_output("take_rows", a.data[idx].copy(), (a,), bwd)


def take(a: Tensor, rows, cols) -> Tensor:
    """Gather elements (rows[i], cols[i]) from a matrix into a vector."""
    r = np.asarray(rows, dtype=np.intp)
    c = np.asarray(cols, dtype=np.intp)
    if a.data.ndim != 2:
        raise ShapeError(f"take: expects a matrix, got shape {a.data.shape}")
    if r.shape != c.shape:
        raise ShapeError(f"take: index shapes differ, {r.shape} vs {c.shape}")

    def bwd(out):
        def run(g):
            a._ensure_grad()
            np.add.at(a.grad, (r, c), g)

        return run

    return _make_output("take", a.data[r, c].copy(), (a,), bwd)


def scatter_cols(values: Tensor, cols, width: int) -> Tensor:
    """Scatter a [B, K] tensor into a [B, width] matrix at per-row
    column indices (duplicates accumulate). The indices are constants;
    gradients flow back to ``values`` by gathering."""
    c = np.asarray(cols, dtype=np.intp)
    if values.data.ndim != 2 or c.shape != values.data.shape:
        raise ShapeError(
            f"scatter_cols: values {values.data.shape} vs cols {c.shape}")
    b, k = values.data.shape
    rows = np.repeat(np.arange(b), k)
    flat_cols = c.reshape(-1)
    out_data = np.zeros((b, width))
    np.add.at(out_data, (rows, flat_cols), values.data.reshape(-1))

    def bwd(out):
        def run(g):
            values._ensure_grad()
            values.grad += g[rows, flat_cols].reshape(b, k)

        return run

    return _make_output("scatter_cols", out_data, (values,), bwd)


_SMOOTH_CACHE = {}


def _smoothing_matrix(length: int, window: int) -> np.ndarray:
    """Replicate-padded centered moving average as an (L, L) matrix."""
    key = (length, window)
    if key not in _SMOOTH_CACHE:
        half_lo = (window - 1) // 2
        half_hi = window - 1 - half_lo
        m = np.zeros((length, length))
        for i in range(length):
            for j in range(i - half_lo, i + half_hi + 1):
                m[i, min(max(j, 0), length - 1)] += 1.0 / window
        _SMOOTH_CACHE[key] = m
    return _SMOOTH_CACHE[key]


def moving_average(a: Tensor, window: int) -> Tensor:
    """Centered moving average of a vector with replicated edges,
    realized as multiplication by a cached constant matrix."""
    if a.data.ndim != 1:
        raise ShapeError(f"moving_average: expects a vector, got {a.data.shape}")
    if window < 1 or window > a.data.shape[0]:
        raise ShapeError(f"moving_average: window {window} invalid for length {a.data.shape[0]}")
    m = Tensor(_smoothing_matrix(a.data.shape[0], window))
    return matmul(m, a)


# ---------------------------------------------------------------------------
# dispatcher + finite differences

_OP_TABLE = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "sub": sub,
    "div": div,
    "div_scalar": div_scalar,
    "mean": mean,
    "std": std,
    "softmax": softmax,
    "concat": lambda *ts, axis=0: concat(ts, axis=axis),
    "relu": relu,
    "sum": tsum,
    "neg": neg,
    "log": log,
    "exp": exp,
    "max_with_scalar": max_with_scalar,
    "square": square,
    "sqrt": sqrt,
    "transpose": transpose,
    "slice": slice_rows,
    "take_rows": take_rows,
    "take": take,
    "scatter_cols": scatter_cols,
    "reshape": reshape,
    "moving_average": moving_average,
}


def apply_op(kind: str, *inputs, **kwargs) -> Tensor:
    """Uniform entry point over every op kind (used by the gradient
    sweep tests)."""
    if kind not in _OP_TABLE:
        raise KeyError(f"unknown op kind '{kind}'")
    return _OP_TABLE[kind](*inputs, **kwargs)


class FiniteDiffReport:
    """Per-parameter-block comparison of reverse-mode vs central
    finite-difference gradients."""

    def __init__(self, step: float, tol: float):
        self.step = step
        self.tol = tol
        self.blocks = []  # (name, max relative error)

    @property
    def max_rel_error(self) -> float:
        return max((e for _, e in self.blocks), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def __repr__(self):
        lines = [f"finite-diff check (step={self.step:g}, tol={self.tol:g})"]
        for name, err in self.blocks:
            mark = "ok" if err < self.tol else "FAIL"
            lines.append(f"  {name}: max rel err {err:.3e} [{mark}]")
        return "\n".join(lines)


def finite_diff_check(f, params, step: float = 1e-5, tol: float = 1e-4) -> FiniteDiffReport:
    """Compare reverse-mode gradients of ``f()`` against central finite
    differences for every element of every parameter in ``params``.

    ``f`` must be a pure scalar function of the params' current .data
    (it is re-evaluated with perturbed entries). Relative error uses a
    1e-3 floor in the denominator so near-zero gradient pairs compare
    at absolute scale.
    """
    if not (0.0 < step <= 1e-2):
        raise NumericsError(f"finite_diff_check: step {step} outside (0, 1e-2]")
    params = list(params)
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = f()
        tape.backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    report = FiniteDiffReport(step, tol)
    for p, g_ad in zip(params, analytic):
        flat = p.data.reshape(-1)
        g_fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = f().item()
            flat[i] = orig - step
            lo = f().item()
            flat[i] = orig
            g_fd[i] = (hi - lo) / (2.0 * step)
        g_fd = g_fd.reshape(p.data.shape)
        denom = np.maximum(np.maximum(np.abs(g_ad), np.abs(g_fd)), 1e-3)
        err = float(np.max(np.abs(g_ad - g_fd) / denom)) if g_ad.size else 0.0
        report.blocks.append((p.name or f"param{len(report.blocks)}", err))
    return report
