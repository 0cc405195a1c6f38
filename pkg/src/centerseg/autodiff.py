"""Dense float64 tensors with reverse-mode automatic differentiation.

Graphs are built dynamically on every forward pass: each result tensor keeps
references to its parents and a closure that maps the upstream gradient to
the parents' gradients. ``Tensor.backward`` walks the graph once in reverse
topological order.
"""

from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, InvalidInputError

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (evaluation, optimizer updates)."""
    prev = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _make(cls, data: np.ndarray, parents: tuple, backward) -> "Tensor":
        out = cls(data)
        if grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = as_tensor(other)
        sa, sb = self.shape, other.shape
        return Tensor._make(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
        )

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other) -> "Tensor":
        other = as_tensor(other)
        sa, sb = self.shape, other.shape
        return Tensor._make(
            self.data - other.data,
            (self, other),
            lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
        )

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) - self

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor._make(
            a * b,
            (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor._make(
            a / b,
            (self, other),
            lambda g: (
                _unbroadcast(g / b, a.shape),
                _unbroadcast(-g * a / (b * b), b.shape),
            ),
        )

    def __rtruediv__(self, other) -> "Tensor":
        return as_tensor(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        a = self.data
        return Tensor._make(
            a**exponent, (self,), lambda g: (g * exponent * a ** (exponent - 1),)
        )

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        shape = self.shape

        def backward(g):
            full = np.zeros(shape)
            np.add.at(full, index, g)
            return (full,)

        return Tensor._make(self.data[index], (self,), backward)

    # -- shape ops ------------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        orig = self.shape
        return Tensor._make(
            self.data.reshape(shape), (self,), lambda g: (g.reshape(orig),)
        )

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        return Tensor._make(
            self.data.transpose(axes), (self,), lambda g: (g.transpose(inverse),)
        )

    def swapaxes(self, a: int, b: int) -> "Tensor":
        return Tensor._make(
            np.swapaxes(self.data, a, b), (self,), lambda g: (np.swapaxes(g, a, b),)
        )

    @property
    def T(self) -> "Tensor":
        return self.swapaxes(-1, -2)

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def max(self, axis: int) -> "Tensor":
        """Max along ``axis``; the gradient goes to the first maximal entry."""
        x = self.data
        idx = np.argmax(x, axis=axis)
        out = np.take_along_axis(x, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

        def backward(g):
            full = np.zeros_like(x)
            np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
            return (full,)

        return Tensor._make(out, (self,), backward)

    # -- elementwise ----------------------------------------------------------

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,))

    def log(self) -> "Tensor":
        x = self.data
        return Tensor._make(np.log(x), (self,), lambda g: (g / x,))

    def sqrt(self) -> "Tensor":
        out = np.sqrt(self.data)
        return Tensor._make(out, (self,), lambda g: (g * 0.5 / out,))

    def minimum(self, bound: float) -> "Tensor":
        """Clamp from above; zero gradient where the clamp is active."""
        x = self.data
        return Tensor._make(np.minimum(x, bound), (self,), lambda g: (g * (x <= bound),))

    # -- autodiff -------------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that requires grad."""
        if grad is None:
            if self.size != 1:
                raise InvalidInputError(
                    f"backward() needs a scalar loss, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


# -- functional ops -----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise InvalidInputError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    x, y = a.data, b.data
    if y.ndim == 2 and x.ndim > 2:
        # shared weight: fold leading axes into one GEMM
        k, n = y.shape
        x2 = x.reshape(-1, k)

        def backward(g):
            g2 = g.reshape(-1, n)
            return (g2 @ y.T).reshape(x.shape), x2.T @ g2

        return Tensor._make((x2 @ y).reshape(*x.shape[:-1], n), (a, b), backward)

    def backward(g):
        ga = g @ np.swapaxes(y, -1, -2)
        gb = np.swapaxes(x, -1, -2) @ g
        return _unbroadcast(ga, x.shape), _unbroadcast(gb, y.shape)

    return Tensor._make(x @ y, (a, b), backward)


def broadcast_to(x: Tensor, shape: tuple) -> Tensor:
    x = as_tensor(x)
    orig = x.shape
    return Tensor._make(
        np.broadcast_to(x.data, shape).copy(), (x,), lambda g: (_unbroadcast(g, orig),)
    )


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward
    )


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor._make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply ``gain`` and ``bias``."""
    if gain.shape[-1] != x.shape[-1] or bias.shape[-1] != x.shape[-1]:
        raise InvalidInputError(
            f"layer_norm: last axis {x.shape[-1]} vs gain {gain.shape} / bias {bias.shape}"
        )
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data

    def backward(g):
        gxhat = g * gd
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        ggain = _unbroadcast(g * xhat, gain.shape)
        gbias = _unbroadcast(g, bias.shape)
        return gx, ggain, gbias

    return Tensor._make(xhat * gd + bias.data, (x, gain, bias), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    xd = x.data
    x2 = xd * xd
    inner = _GELU_C * xd * (1.0 + 0.044715 * x2)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return Tensor._make(out, (x,), backward)


def attention(
    query: Tensor,
    key: Tensor,
    value: Tensor,
    weights: dict,
    heads: int,
    key_mask: np.ndarray | None = None,
    return_weights: bool = False,
):
    """Multi-head scaled dot-product attention with output projection.

    ``query`` is ``[..., q, H]``, ``key``/``value`` are ``[..., k, H]``.
    ``weights`` holds ``wq, bq, wk, bk, wv, bv, wo, bo`` tensors (H x H / H).
    ``key_mask`` (``[..., k]`` bool, True = attend) excludes padded keys.
    """
    hidden = query.shape[-1]
    if hidden % heads:
        raise ConfigError(f"hidden size {hidden} not divisible by {heads} heads")
    d = hidden // heads
    lead = query.shape[:-2]

    def split(x: Tensor) -> Tensor:
        n = x.shape[-2]
        return x.reshape(*lead, n, heads, d).swapaxes(-2, -3)

    q = split(query @ weights["wq"] + weights["bq"])
    k = split(key @ weights["wk"] + weights["bk"])
    v = split(value @ weights["wv"] + weights["bv"])
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(d))
    if key_mask is not None:
        bias = np.where(key_mask, 0.0, -1e9)[..., None, None, :]
        scores = scores + Tensor(bias)
    attn = softmax(scores, axis=-1)
    ctx = (attn @ v).swapaxes(-2, -3).reshape(*lead, query.shape[-2], hidden)
    out = ctx @ weights["wo"] + weights["bo"]
    if return_weights:
        return out, attn
    return out


def one_hot_argmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """One-hot of the first maximal entry along ``axis``."""
    idx = np.argmax(x, axis=axis)
    out = np.zeros_like(x)
    np.put_along_axis(out, np.expand_dims(idx, axis), 1.0, axis=axis)
    return out


def sample_gumbel(shape: tuple, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(shape)
    return -np.log(-np.log(u + 1e-20) + 1e-20)


class _FrozenAssignments:
    """Replays hard assignments recorded on a reference pass.

    Used by finite-difference checks of the straight-through estimator: the
    surrogate being differentiated is ``soft + (hard - soft)|_reference``.
    """

    def __init__(self):
        self.offsets: list[np.ndarray] = []
        self.noise: list[np.ndarray] = []
        self.recording = True
        self.cursor = 0
        self.noise_cursor = 0


@contextlib.contextmanager
def freeze_assignments(record: "_FrozenAssignments | None" = None):
    """Record (first use) or replay (reuse of ``record``) hard assignments."""
    frozen = record if record is not None else _FrozenAssignments()
    if record is not None:
        frozen.recording = False
    frozen.cursor = 0
    frozen.noise_cursor = 0
    prev = getattr(_state, "frozen", None)
    _state.frozen = frozen
    try:
        yield frozen
    finally:
        _state.frozen = prev


def gumbel_softmax_hard(
    logits: Tensor,
    temperature: float = 1.0,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> tuple[Tensor, Tensor]:
    """Straight-through Gumbel-Softmax over the last axis.

    Returns ``(hard, soft)``. The forward value of ``hard`` is one-hot; its
    gradient is passed to ``soft`` unchanged. Noise is only drawn when
    ``training`` is set.
    """
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    frozen = getattr(_state, "frozen", None)
    y = logits
    if training:
        if frozen is not None and not frozen.recording:
            noise = frozen.noise[frozen.noise_cursor]
            frozen.noise_cursor += 1
        else:
            if rng is None:
                raise ConfigError("training-mode Gumbel-Softmax needs an rng")
            noise = sample_gumbel(logits.shape, rng)
            if frozen is not None:
                frozen.noise.append(noise)
        y = logits + Tensor(noise)
    soft = softmax(y * (1.0 / temperature), axis=-1)
    if frozen is not None and not frozen.recording:
        value = soft.data + frozen.offsets[frozen.cursor]
        frozen.cursor += 1
    else:
        value = one_hot_argmax(soft.data if training else logits.data)
        if frozen is not None:
            frozen.offsets.append(value - soft.data)
            frozen.cursor += 1
    hard = Tensor._make(value, (soft,), lambda g: (g,))
    return hard, soft


def global_grad_norm(params: Iterable[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    return math.sqrt(total)
