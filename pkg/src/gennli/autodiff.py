"""Dense-tensor arithmetic with tape-based reverse-mode differentiation.

Operations run eagerly on numpy arrays. While a :class:`Tape` is active,
every primitive whose operands require gradients appends a record holding
its operands and a closure over the activations its backward rule needs.
:func:`backward` replays those records in reverse.

    >>> x = Parameter(np.array([3.0]), name="x")
    >>> with Tape() as tape:
    ...     y = mul(x, x)
    >>> backward(tape, np.ones(1))["x"]
    array([6.])
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "ShapeError",
    "NonFiniteError",
    "TapeError",
    "as_tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "concat",
    "stack",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "softmax",
    "log_sum_exp",
    "lookup",
    "gather",
    "masked_sum",
    "sum",
    "reduce_max",
    "reshape",
    "swapaxes",
    "broadcast_to",
    "lstm_cell",
    "backward",
    "grad",
    "finite_difference_check",
]


class ShapeError(ValueError):
    """Operand shapes do not conform for a primitive."""


class NonFiniteError(ValueError):
    """A primitive received NaN or infinite input."""


class TapeError(RuntimeError):
    """A tape cannot be replayed (e.g. parameters changed since recording)."""


class Tensor:
    """An n-dimensional array that may participate in differentiation."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        data = np.asarray(data)
        self.data = data if np.issubdtype(data.dtype, np.floating) else data.astype(np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


class Parameter(Tensor):
    """A named, trainable leaf tensor.

    ``version`` is bumped by every in-place update made through
    :meth:`assign` so that stale tapes can be detected.
    """

    __slots__ = ("version",)

    def __init__(self, data, name: str):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True, name=name)
        self.version = 0

    def assign(self, value: np.ndarray) -> None:
        if value.shape != self.data.shape:
            raise ShapeError(f"cannot assign shape {value.shape} to parameter {self.name} of shape {self.shape}")
        self.data[...] = value
        self.version += 1

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape})"


@dataclass
class _Record:
    outputs: tuple[Tensor, ...]
    inputs: tuple[Tensor, ...]
    backward: Callable[[list[np.ndarray]], Sequence[np.ndarray | None]]


_state = threading.local()


def _active_tape() -> Tape | None:
    stack = getattr(_state, "tapes", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered log of primitive applications, used as a context manager."""

    def __init__(self):
        self.records: list[_Record] = []
        self._leaves: dict[int, tuple[Parameter, int]] = {}

    def __enter__(self) -> Tape:
        if not hasattr(_state, "tapes"):
            _state.tapes = []
        _state.tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.tapes.pop()

    def __len__(self) -> int:
        return len(self.records)

    def _push(self, outputs, inputs, backward_fn) -> None:
        for t in inputs:
            if isinstance(t, Parameter) and id(t) not in self._leaves:
                self._leaves[id(t)] = (t, t.version)
        self.records.append(_Record(tuple(outputs), tuple(inputs), backward_fn))

    @property
    def parameters(self) -> list[Parameter]:
        return [p for p, _ in self._leaves.values()]


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _check_finite(op: str, *arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.isfinite(a).all():
            raise NonFiniteError(f"{op}: non-finite input")


def _record(op: str, out_data, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._push((out,), inputs, lambda gs: backward_fn(gs[0]))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    _check_finite("add", a.data, b.data)
    return _record("add", a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    _check_finite("sub", a.data, b.data)
    return _record("sub", a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    _check_finite("mul", a.data, b.data)
    return _record(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record("neg", -a.data, (a,), lambda g: (-g,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    _check_finite("tanh", a.data)
    y = np.tanh(a.data)
    return _record("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a) -> Tensor:
    """Logistic sigmoid; saturates to exactly 0 or 1 for large |a|."""
    a = as_tensor(a)
    _check_finite("sigmoid", a.data)
    y = expit(a.data)
    return _record("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    _check_finite("exp", a.data)
    y = np.exp(a.data)
    return _record("exp", y, (a,), lambda g: (g * y,))


def log(a, floor: float | None = None) -> Tensor:
    """Natural log. With ``floor``, inputs below it are clamped (zero gradient there)."""
    a = as_tensor(a)
    _check_finite("log", a.data)
    if floor is None:
        if (a.data <= 0).any():
            raise NonFiniteError("log: non-positive input without a floor")
        x = a.data
        return _record("log", np.log(x), (a,), lambda g: (g / x,))
    clipped = a.data < floor
    x = np.where(clipped, floor, a.data)
    return _record("log", np.log(x), (a,), lambda g: (np.where(clipped, 0.0, g / x),))


# ---------------------------------------------------------------------------
# shape manipulation


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concat: no operands")
    nd = xs[0].ndim
    ax = axis % nd
    for x in xs[1:]:
        if x.ndim != nd or any(x.shape[i] != xs[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {[x.shape for x in xs]} along axis {axis}")
    splits = np.cumsum([x.shape[ax] for x in xs])[:-1]
    out = np.concatenate([x.data for x in xs], axis=ax)
    return _record("concat", out, xs, lambda g: tuple(np.split(g, splits, axis=ax)))


def stack(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    shapes = {x.shape for x in xs}
    if len(shapes) != 1:
        raise ShapeError(f"stack: operands differ in shape: {sorted(shapes)}")
    out = np.stack([x.data for x in xs], axis=axis)
    ax = axis % out.ndim
    return _record("stack", out, xs, lambda g: tuple(np.moveaxis(g, ax, 0)))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from None
    return _record("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def swapaxes(a, axis1: int, axis2: int) -> Tensor:
    a = as_tensor(a)
    return _record("swapaxes", np.swapaxes(a.data, axis1, axis2), (a,), lambda g: (np.swapaxes(g, axis1, axis2),))


def broadcast_to(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, tuple(shape))
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {tuple(shape)}") from None
    return _record("broadcast_to", out, (a,), lambda g: (_unbroadcast(g, a.shape),))


# ---------------------------------------------------------------------------
# linear algebra and reductions


def matmul(a, b) -> Tensor:
    """Matrix product.

    Supported layouts: ``(..., m, k) @ (k, n)``, ``(..., m, k) @ (k,)`` and
    batched ``(B, m, k) @ (B, k, n)`` with identical leading dimensions.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2:
        raise ShapeError(f"matmul: left operand must be at least 2-D, got {a.shape}")
    if a.shape[-1] != b.shape[-2 if b.ndim >= 2 else 0]:
        raise ShapeError(f"matmul: inner dimensions differ: {a.shape} @ {b.shape}")
    if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise ShapeError(f"matmul: batch dimensions differ: {a.shape} @ {b.shape}")
    _check_finite("matmul", a.data, b.data)
    A, B = a.data, b.data
    out = np.matmul(A, B)

    def backward_fn(g):
        if B.ndim == 1:
            return g[..., None] * B, (A * g[..., None]).reshape(-1, B.shape[0]).sum(axis=0)
        if B.ndim == 2:
            k, n = B.shape
            return g @ B.T, A.reshape(-1, k).T @ g.reshape(-1, n)
        return g @ np.swapaxes(B, -1, -2), np.swapaxes(A, -1, -2) @ g

    return _record("matmul", out, (a, b), backward_fn)


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    out = a.data.sum(axis=axis)

    def backward_fn(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _record("sum", out, (a,), backward_fn)


def masked_sum(a, mask, axis: int | None = None) -> Tensor:
    """Sum of ``a * mask`` over ``axis``; ``mask`` is a constant 0/1 array."""
    a = as_tensor(a)
    m = np.asarray(mask, dtype=np.float64)
    try:
        np.broadcast_shapes(a.shape, m.shape)
    except ValueError:
        raise ShapeError(f"masked_sum: mask {m.shape} does not broadcast to {a.shape}") from None
    _check_finite("masked_sum", a.data)
    prod = a.data * m
    out = prod.sum(axis=axis)

    def backward_fn(g):
        g = g if axis is None else np.expand_dims(g, axis)
        return (_unbroadcast(np.broadcast_to(g, prod.shape) * m, a.shape),)

    return _record("masked_sum", out, (a,), backward_fn)


def reduce_max(a, axis: int = -1) -> Tensor:
    """Max over ``axis``; gradient flows to the lowest-index maximiser."""
    a = as_tensor(a)
    _check_finite("reduce_max", a.data)
    idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis=axis).squeeze(axis)

    def backward_fn(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, idx, np.expand_dims(g, axis), axis=axis)
        return (ga,)

    return _record("reduce_max", out, (a,), backward_fn)


def _masked_shift(op: str, x: np.ndarray, axis: int, mask) -> tuple[np.ndarray, np.ndarray | None]:
    if mask is None:
        _check_finite(op, x)
        return x - x.max(axis=axis, keepdims=True), None
    m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not np.isfinite(x[m]).all():
        raise NonFiniteError(f"{op}: non-finite input")
    if not m.any(axis=axis).all():
        raise ShapeError(f"{op}: a slice along axis {axis} is fully masked")
    z = np.where(m, x, -np.inf)
    return z - z.max(axis=axis, keepdims=True), m


def softmax(a, axis: int = -1, mask=None) -> Tensor:
    """Max-shifted softmax. Positions where ``mask`` is false get probability 0."""
    a = as_tensor(a)
    z, _ = _masked_shift("softmax", a.data, axis, mask)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _record("softmax", y, (a,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def log_sum_exp(a, axis: int = -1, mask=None) -> Tensor:
    """Max-shifted log-sum-exp over ``axis`` (the axis is removed)."""
    a = as_tensor(a)
    z, m = _masked_shift("log_sum_exp", a.data, axis, mask)
    top = (a.data if m is None else np.where(m, a.data, -np.inf)).max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=axis, keepdims=True)
    out = (top + np.log(s)).squeeze(axis)
    p = e / s
    return _record("log_sum_exp", out, (a,), lambda g: (np.expand_dims(g, axis) * p,))


def lookup(table, ids) -> Tensor:
    """Row lookup ``table[ids]`` (embedding); ``ids`` may have any shape."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.intp)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"lookup: ids outside [0, {table.shape[0]})")
    out = table.data[ids]

    def backward_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _record("lookup", out, (table,), backward_fn)


def gather(a, idx, axis: int = -1) -> Tensor:
    """``np.take_along_axis`` with gradient; ``idx`` must match ``a`` except along ``axis``."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != a.ndim:
        raise ShapeError(f"gather: index rank {idx.ndim} != operand rank {a.ndim}")
    ax = axis % a.ndim
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[ax]):
        raise ShapeError(f"gather: index outside [0, {a.shape[ax]}) on axis {axis}")
    out = np.take_along_axis(a.data, idx, axis=ax)

    def backward_fn(g):
        ga = np.zeros_like(a.data)
        full = list(np.indices(idx.shape, sparse=True))
        full[ax] = idx
        np.add.at(ga, tuple(full), g)
        return (ga,)

    return _record("gather", out, (a,), backward_fn)


# ---------------------------------------------------------------------------
# recurrent cell


def lstm_cell(x, h_prev, c_prev, W, b) -> tuple[Tensor, Tensor]:
    """One LSTM step as a single fused primitive.

    ``W`` has shape ``(d_in + d, 4d)`` acting on ``[x; h_prev]``, ``b`` has
    shape ``(4d,)``. Gate blocks are ordered input, forget, output, candidate.
    Leading batch dimensions on ``x``/``h_prev``/``c_prev`` are allowed.
    """
    x, h_prev, c_prev, W, b = (as_tensor(t) for t in (x, h_prev, c_prev, W, b))
    d = h_prev.shape[-1]
    d_in = x.shape[-1]
    if W.shape != (d_in + d, 4 * d) or b.shape != (4 * d,):
        raise ShapeError(f"lstm_cell: W {W.shape}, b {b.shape} do not fit d_in={d_in}, d={d}")
    if c_prev.shape != h_prev.shape or x.shape[:-1] != h_prev.shape[:-1]:
        raise ShapeError(f"lstm_cell: x {x.shape}, h {h_prev.shape}, c {c_prev.shape} disagree")
    _check_finite("lstm_cell", x.data, h_prev.data, c_prev.data)

    xh = np.concatenate([x.data, h_prev.data], axis=-1)
    z = xh @ W.data + b.data
    i = expit(z[..., :d])
    f = expit(z[..., d : 2 * d])
    o = expit(z[..., 2 * d : 3 * d])
    g = np.tanh(z[..., 3 * d :])
    c = f * c_prev.data + i * g
    tc = np.tanh(c)
    h = o * tc

    h_out, c_out = Tensor(h), Tensor(c)
    inputs = (x, h_prev, c_prev, W, b)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        h_out.requires_grad = c_out.requires_grad = True

        def backward_fn(gs):
            gh, gc = gs
            dc = gc + gh * o * (1.0 - tc * tc)
            dz = np.concatenate(
                [
                    dc * g * i * (1.0 - i),
                    dc * c_prev.data * f * (1.0 - f),
                    gh * tc * o * (1.0 - o),
                    dc * i * (1.0 - g * g),
                ],
                axis=-1,
            )
            dW = xh.reshape(-1, d_in + d).T @ dz.reshape(-1, 4 * d)
            db = dz.reshape(-1, 4 * d).sum(axis=0)
            dxh = dz @ W.data.T
            return dxh[..., :d_in], dxh[..., d_in:], dc * f, dW, db

        tape._push((h_out, c_out), inputs, backward_fn)
    return h_out, c_out


# ---------------------------------------------------------------------------
# differentiation


def backward(tape: Tape, seed_grad=None, output: Tensor | None = None) -> dict[str, np.ndarray]:
    """Reverse-mode sweep over ``tape``.

    ``output`` defaults to the first output of the last record; ``seed_grad``
    defaults to ones of its shape. Returns ``{parameter name: gradient}``
    for every :class:`Parameter` the tape touched. Parameters missing from
    the result have zero gradient.
    """
    if not tape.records:
        raise TapeError("backward: empty tape")
    for p, version in tape._leaves.values():
        if p.version != version:
            raise TapeError(f"backward: parameter {p.name!r} was modified after the forward pass")
    if output is None:
        output = tape.records[-1].outputs[0]
    seed = np.ones(output.shape) if seed_grad is None else np.asarray(seed_grad, dtype=np.float64)
    if seed.shape != output.shape:
        raise ShapeError(f"backward: seed shape {seed.shape} != output shape {output.shape}")

    grads: dict[int, np.ndarray] = {id(output): seed}
    for rec in reversed(tape.records):
        gouts = [grads.pop(id(o), None) for o in rec.outputs]
        if all(g is None for g in gouts):
            continue
        gouts = [np.zeros(o.shape) if g is None else g for o, g in zip(rec.outputs, gouts)]
        for t, gi in zip(rec.inputs, rec.backward(gouts)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            grads[key] = grads[key] + gi if key in grads else np.array(gi, dtype=np.float64)

    return {p.name: grads[id(p)] for p, _ in tape._leaves.values() if id(p) in grads}


def grad(loss_fn: Callable[[], Tensor]) -> tuple[float, dict[str, np.ndarray]]:
    """Evaluate a scalar ``loss_fn`` under a fresh tape and differentiate it."""
    with Tape() as tape:
        loss = loss_fn()
    if loss.data.size != 1:
        raise ShapeError(f"grad: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return loss.item(), {}
    return loss.item(), backward(tape, np.ones(loss.shape), output=loss)


def finite_difference_check(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Parameter] | Iterable[Parameter],
    epsilon: float = 1e-5,
    max_coords: int = 200,
    seed: int = 0,
    per_param: dict | None = None,
    numeric_dtype=None,
) -> float:
    """Compare analytic gradients against central differences.

    At most ``max_coords`` coordinates per parameter are sampled. Returns the
    max over sampled coordinates of ``|a - n| / max(|a|, |n|, 1e-8)``. If
    ``per_param`` is given it is filled with the per-parameter maxima.

    ``numeric_dtype`` (e.g. ``np.longdouble``) evaluates the perturbed losses
    at higher precision. The analytic gradient is always taken at the
    parameters' own precision. Double-precision differences cannot resolve
    gradients near the 1e-8 floor to 1e-4 relative error.
    """
    if not 0 < epsilon < 1e-2:
        raise ValueError(f"epsilon must lie in (0, 1e-2), got {epsilon}")
    params = list(params.values()) if isinstance(params, Mapping) else list(params)
    base = loss_fn().item()
    if loss_fn().item() != base:
        raise ValueError("finite_difference_check: loss_fn is not deterministic")

    _, analytic = grad(loss_fn)
    originals = [p.data for p in params]
    if numeric_dtype is not None:
        for p in params:
            p.data = p.data.astype(numeric_dtype)
    rng = np.random.default_rng(seed)
    worst = 0.0
    try:
        for p in params:
            flat = p.data.reshape(-1)
            g = analytic.get(p.name, np.zeros(p.shape)).reshape(-1)
            n = flat.size
            coords = np.arange(n) if n <= max_coords else np.sort(rng.choice(n, size=max_coords, replace=False))
            p_worst = 0.0
            for k in coords:
                orig = flat[k]
                flat[k] = orig + epsilon
                up = loss_fn().data
                flat[k] = orig - epsilon
                down = loss_fn().data
                flat[k] = orig
                numeric = float((up - down) / (2 * epsilon))
                err = abs(g[k] - numeric) / max(abs(g[k]), abs(numeric), 1e-8)
                p_worst = max(p_worst, err)
            if per_param is not None:
                per_param[p.name] = p_worst
            worst = max(worst, p_worst)
    finally:
        for p, data in zip(params, originals):
            p.data = data
    return worst
