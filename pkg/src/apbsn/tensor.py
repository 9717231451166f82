"""Small reverse-mode autodiff core over numpy arrays.

Only the handful of operations the blind-spot network needs are provided:
dilated (optionally centre-masked) 2-D convolution, ReLU, channel concat,
pixel rearrangements, reductions and the L1 loss. Values are float32;
reductions that produce losses accumulate in float64.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float32


class Tensor:
    """Dense float32 array that records how it was produced."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Sequence["Tensor"] = (),
        backward: Callable[[np.ndarray], None] | None = None,
        name: str | None = None,
    ):
        self.data = np.ascontiguousarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = tuple(parents)
        self._backward = backward
        self.name = name

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        g = g.astype(DTYPE, copy=False)
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def backward(self):
        backward(self)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Skip graph construction inside the block (inference only)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def _needs_grad(*tensors: Tensor) -> bool:
    return _grad_enabled and any(t.requires_grad for t in tensors)


def _result(data, parents, backward_fn) -> Tensor:
    if _needs_grad(*parents):
        return Tensor(data, True, parents, backward_fn)
    return Tensor(data)


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor):
    """Populate ``.grad`` on every tensor reachable from ``loss``.

    Gradients accumulate; callers reset them between optimisation steps.
    """
    if loss.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor that requires grad")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=DTYPE)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node._accumulate(g)
            continue
        if not node._parents:
            continue
        # intermediate nodes keep their grad too (useful for probing)
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def sum_all(x: Tensor) -> Tensor:
    total = np.array(x.data.sum(dtype=np.float64))
    shape = x.shape
    return _result(total, (x,), lambda g: (np.full(shape, g.reshape(()), dtype=DTYPE),))


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x). The derivative at exactly 0 is taken as 0."""
    positive = x.data > 0
    return _result(x.data * positive, (x,), lambda g: (g * positive,))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along ``axis`` (channels for NCHW tensors)."""
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def _back(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), _back)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    inv = np.argsort(axes)
    return _result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def rearrange(
    x: Tensor,
    forward: Callable[[np.ndarray], np.ndarray],
    inverse: Callable[[np.ndarray], np.ndarray],
) -> Tensor:
    """Apply a pure permutation of elements; ``inverse`` must undo ``forward``.

    The gradient of a permutation is the inverse permutation of the upstream
    gradient, which is what pixel-shuffle style ops need.
    """
    return _result(forward(x.data), (x,), lambda g: (inverse(g),))


def l1_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference. Subgradient at a == b is 0."""
    if a.shape != b.shape:
        raise ValueError(f"l1_loss: shape mismatch {a.shape} vs {b.shape}")
    diff = a.data.astype(np.float64) - b.data
    n = diff.size
    value = np.array(np.abs(diff).sum() / n)
    sign = np.sign(diff).astype(DTYPE)

    def _back(g):
        s = sign * (float(g.reshape(())) / n)
        return s, -s

    return _result(value, (a, b), _back)


# ---------------------------------------------------------------------------
# convolution


@dataclass
class ConvParams:
    """Weights of one stride-1 convolution with 'same' zero padding.

    With ``center_masked`` the middle tap is multiplied out on every forward
    pass, so whatever the optimiser does to it never reaches the output.
    """

    weight: Tensor
    bias: Tensor
    dilation: int = 1
    center_masked: bool = False
    name: str = ""
    _mask: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        w = self.weight.shape
        if len(w) != 4 or w[2] != w[3]:
            raise ValueError(f"conv weight must be (out, in, k, k), got {w}")
        if w[2] % 2 != 1:
            raise ValueError(f"kernel size must be odd, got {w[2]}")
        if self.bias.shape != (w[0],):
            raise ValueError(f"bias shape {self.bias.shape} does not match {w[0]} outputs")
        if self.dilation < 1:
            raise ValueError("dilation must be positive")
        if self.center_masked:
            k = w[2]
            mask = np.ones((k, k), dtype=DTYPE)
            mask[k // 2, k // 2] = 0
            self._mask = mask

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[2]

    def effective_weight(self) -> np.ndarray:
        if self._mask is None:
            return self.weight.data
        return self.weight.data * self._mask

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        in_ch: int,
        out_ch: int,
        k: int,
        dilation: int = 1,
        center_masked: bool = False,
        name: str = "",
    ) -> "ConvParams":
        """Uniform(-sqrt(6/fan_in), sqrt(6/fan_in)) weights, zero bias."""
        fan_in = in_ch * k * k
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(out_ch, in_ch, k, k)).astype(DTYPE)
        return cls(
            Tensor(w, requires_grad=True, name=f"{name}.weight"),
            Tensor(np.zeros(out_ch, dtype=DTYPE), requires_grad=True, name=f"{name}.bias"),
            dilation=dilation,
            center_masked=center_masked,
            name=name,
        )


def _im2col(xp: np.ndarray, k: int, d: int, h: int, w: int) -> np.ndarray:
    """Padded (C, N, H+2p, W+2p) -> (C*k*k, N*H*W), rows ordered like weight (C, k, k)."""
    c, n = xp.shape[:2]
    cols = np.empty((c, k * k, n, h, w), dtype=DTYPE)
    for ky in range(k):
        for kx in range(k):
            cols[:, ky * k + kx] = xp[:, :, ky * d : ky * d + h, kx * d : kx * d + w]
    return cols.reshape(c * k * k, n * h * w)


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    c, n, h, w = x.shape
    xp = np.zeros((c, n, h + 2 * pad, w + 2 * pad), dtype=DTYPE)
    xp[:, :, pad : pad + h, pad : pad + w] = x
    return xp


_TO_CNHW = {"NCHW": (1, 0, 2, 3), "CNHW": (0, 1, 2, 3)}


def conv2d(x: Tensor, params: ConvParams, layout: str = "NCHW") -> Tensor:
    """Stride-1 dilated cross-correlation, zero padded to keep H and W.

    Computation happens channel-major so im2col copies long contiguous rows.
    ``layout="CNHW"`` lets deep stacks skip the two transposes per layer.
    """
    if x.data.ndim != 4:
        raise ValueError(f"conv2d expects a rank-4 input, got shape {x.shape}")
    if layout not in _TO_CNHW:
        raise ValueError(f"unknown layout {layout!r}")
    perm = _TO_CNHW[layout]
    xd = x.data.transpose(perm)
    c, n, h, w = xd.shape
    if c != params.in_channels:
        raise ValueError(
            f"conv2d {params.name}: input has {c} channels, weights expect {params.in_channels}"
        )
    k, d, o = params.kernel_size, params.dilation, params.out_channels
    wmat = params.effective_weight().reshape(o, c * k * k)

    if k == 1:
        cols = np.ascontiguousarray(xd).reshape(c, n * h * w)
    else:
        cols = _im2col(_pad(xd, d * (k - 1) // 2), k, d, h, w)
    # (P, K) @ (K, O) is several times faster than (O, K) @ (K, P) for small O
    out = cols.T @ wmat.T
    out += params.bias.data
    out = np.ascontiguousarray(out.T).reshape(o, n, h, w).transpose(perm)

    mask = params._mask

    def _back(g):
        gm = np.ascontiguousarray(g.transpose(perm)).reshape(o, n * h * w)
        gw = (cols @ gm.T).T.reshape(o, c, k, k)
        if mask is not None:
            gw = gw * mask
        gb = gm.sum(axis=1)
        gx = None
        if x.requires_grad:
            # d/dx of a same-padded correlation is the correlation of g with
            # the spatially flipped, channel-transposed kernel
            if k == 1:
                gx = (gm.T @ wmat).T
            else:
                wflip = wmat.reshape(o, c, k, k)[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, o * k * k)
                gcols = _im2col(_pad(gm.reshape(o, n, h, w), d * (k - 1) // 2), k, d, h, w)
                gx = (gcols.T @ wflip.T).T
            gx = np.ascontiguousarray(gx).reshape(c, n, h, w).transpose(perm)
        return gx, gw, gb

    return _result(out, (x, params.weight, params.bias), _back)


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")


def adam_step(params: Sequence[Tensor], state: AdamState):
    """One bias-corrected Adam update, in place. Missing grads count as zero."""
    if not state.lr > 0:
        raise ValueError(f"learning rate must be positive, got {state.lr}")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ValueError("optimiser state was created for a different parameter list")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1 - b1**t, 1 - b2**t
    for p, m, v in zip(params, state.m, state.v):
        if m.shape != p.shape:
            raise ValueError(f"optimiser state shape {m.shape} != parameter {p.shape}")
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p.data -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)).astype(DTYPE)


def zero_grad(params: Iterable[Tensor]):
    for p in params:
        p.grad = None
