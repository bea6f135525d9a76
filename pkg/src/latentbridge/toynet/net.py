"""Small fully-connected networks with hand-written backpropagation.

Inputs are batch-first ``(B, d_in)`` float64 arrays. Parameters are stored as
a flat list ``[W0, b0, W1, b1, ...]`` with ``W_i`` of shape ``(d_i, d_{i+1})``;
every gradient routine returns arrays in that same order.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import DimensionError

_ACTIVATIONS = ("tanh", "relu", "linear")

# while grad_check evaluates a loss, every ReLU layer appends its sign pattern here
_branch_log: list | None = None


class ToyNet:
    def __init__(self, dims: Sequence[int], activations: Sequence[str] | str = "tanh", params=None):
        dims = [int(d) for d in dims]
        if len(dims) < 2 or any(d <= 0 for d in dims):
            raise DimensionError(f"invalid layer dims {dims}")
        n_hidden = len(dims) - 2
        if isinstance(activations, str):
            activations = [activations] * n_hidden
        activations = list(activations)
        if len(activations) != n_hidden:
            raise DimensionError(f"need {n_hidden} activations, got {len(activations)}")
        for a in activations:
            if a not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        self.dims = dims
        self.activations = activations
        if params is None:
            params = []
            for i in range(len(dims) - 1):
                params.append(np.zeros((dims[i], dims[i + 1])))
                params.append(np.zeros(dims[i + 1]))
        self.params = [np.array(p, dtype=float) for p in params]
        for i, (W, b) in enumerate(zip(self.params[::2], self.params[1::2])):
            if W.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise DimensionError(f"layer {i} parameter shapes do not match dims")

    @classmethod
    def init(cls, dims, activations="tanh", rng=None, gain: float = 1.0) -> "ToyNet":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(rng)
        net = cls(dims, activations)
        for i in range(len(net.dims) - 1):
            fan_in, fan_out = net.dims[i], net.dims[i + 1]
            lim = gain * np.sqrt(6.0 / (fan_in + fan_out))
            net.params[2 * i] = rng.uniform(-lim, lim, size=(fan_in, fan_out))
        return net

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "ToyNet":
        return ToyNet(self.dims, self.activations, [p.copy() for p in self.params])

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=float)
        if vec.size != self.n_params:
            raise DimensionError("flat parameter vector has wrong size")
        off = 0
        for p in self.params:
            p[...] = vec[off:off + p.size].reshape(p.shape)
            off += p.size

    # -- forward / backward ------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dims[0]:
            raise DimensionError(f"input dim {x.shape[-1]} != {self.dims[0]}")
        return x

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = self._check_input(x)
        squeeze = x.ndim == 1
        h = np.atleast_2d(x)
        for i in range(self.n_layers):
            h = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < self.n_layers - 1:
                h = _act(self.activations[i], h)
        return h[0] if squeeze else h

    __call__ = forward

    def forward_cached(self, x: np.ndarray):
        """Forward pass that also returns the activations needed by ``backward``.

        ``cache["hidden"]`` holds the post-activation output of every hidden
        layer; feature-matching losses read them directly.
        """
        x = np.atleast_2d(self._check_input(x))
        inputs, hidden = [x], []
        h = x
        for i in range(self.n_layers):
            h = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < self.n_layers - 1:
                h = _act(self.activations[i], h)
                hidden.append(h)
                inputs.append(h)
        return h, {"inputs": inputs, "hidden": hidden}

    def backward(self, cache, grad_out: np.ndarray, hidden_grads=None):
        """Return ``(grad_input, param_grads)``.

        ``hidden_grads`` optionally injects extra upstream gradients at each
        hidden activation (same order as ``cache["hidden"]``; None entries
        are skipped).
        """
        g = np.atleast_2d(grad_out)
        grads = [None] * len(self.params)
        inputs = cache["inputs"]
        for i in reversed(range(self.n_layers)):
            if i < self.n_layers - 1:
                if hidden_grads is not None and hidden_grads[i] is not None:
                    g = g + hidden_grads[i]
                g = g * _act_deriv(self.activations[i], inputs[i + 1])
            grads[2 * i] = inputs[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.params[2 * i].T
        return g, grads


def record_branch(mask: np.ndarray) -> None:
    """Note which side of a kink (ReLU, abs) each element sits on, for grad_check."""
    if _branch_log is not None:
        _branch_log.append(np.asarray(mask).tobytes())


def _act(name: str, h: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(h)
    if name == "relu":
        record_branch(h > 0.0)
        return np.maximum(h, 0.0)
    return h


def _act_deriv(name: str, out: np.ndarray) -> np.ndarray:
    # expressed through the activation output, which is what the cache holds
    if name == "tanh":
        return 1.0 - out * out
    if name == "relu":
        return (out > 0.0).astype(float)
    return np.ones_like(out)


def forward(net: ToyNet, x: np.ndarray) -> np.ndarray:
    return net.forward(x)


def grad_check(
    net: ToyNet,
    loss: Callable[[ToyNet], tuple],
    eps: float | Sequence[float] = 1e-5,
    rng=None,
    max_entries: int = 10_000,
    richardson: bool = False,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``loss(net)`` must return ``(value, grads)`` with grads aligned to
    ``net.params`` and must be deterministic. Nets with more than
    ``max_entries`` parameters are checked on a random 1% subsample.

    The relative error of an entry is ``|a - n| / (max(|a|, |n|) + floor)``
    where ``floor = 1e-6 * max|a|`` keeps entries whose true gradient is
    ~0 from dominating through round-off.

    Entries where any evaluation switches a ReLU unit or abs term (anything
    reported through ``record_branch``) relative to the unperturbed net
    straddle a kink, where a difference quotient says nothing about the
    derivative; they are skipped.

    ``richardson=True`` combines steps ``eps`` and ``eps/2`` as
    ``(4 D(eps/2) - D(eps)) / 3``, cancelling the eps**2 truncation term.

    A sequence of step sizes scores each entry at the step that agrees best.
    Round-off favours large steps for entries with tiny gradients while
    curvature favours small ones, and no single step suits every entry of a
    badly scaled loss; a wrong analytic gradient disagrees at all of them.
    """
    global _branch_log
    ladder = tuple(np.atleast_1d(np.asarray(eps, dtype=float)))
    if not ladder or not all(1e-7 <= h <= 1e-3 for h in ladder):
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    try:
        _branch_log = []
        value, grads = loss(net)
        center = _branch_log
    finally:
        _branch_log = None
    analytic = np.concatenate([np.asarray(g, dtype=float).ravel() for g in grads])
    theta = net.flat()
    n = theta.size
    if n > max_entries:
        rng = np.random.default_rng(rng)
        idx = np.sort(rng.choice(n, size=max(1, n // 100), replace=False))
    else:
        idx = np.arange(n)
    # numeric[m, k]: estimate for entry k at ladder step m; NaN where it straddles a kink
    numeric = np.full((len(ladder), idx.size), np.nan)
    try:
        for k, j in enumerate(idx):
            orig = theta[j]
            for m, step in enumerate(ladder):
                quotients = []
                smooth = True
                for h in ((step, step / 2) if richardson else (step,)):
                    theta[j] = orig + h
                    net.set_flat(theta)
                    _branch_log = []
                    lp = loss(net)[0]
                    smooth &= _branch_log == center
                    theta[j] = orig - h
                    net.set_flat(theta)
                    _branch_log = []
                    lm = loss(net)[0]
                    smooth &= _branch_log == center
                    quotients.append((lp - lm) / (2.0 * h))
                if smooth:
                    numeric[m, k] = (4.0 * quotients[1] - quotients[0]) / 3.0 if richardson else quotients[0]
            theta[j] = orig
    finally:
        _branch_log = None
        net.set_flat(theta)
    usable = ~np.all(np.isnan(numeric), axis=0)
    if not usable.any():
        raise ValueError("every checked entry straddles a kink; use a smaller eps")
    a = analytic[idx][usable]
    numeric = numeric[:, usable]
    scale = np.max(np.abs(analytic)) if analytic.size else 0.0
    if scale == 0.0 and np.nanmax(np.abs(numeric)) == 0.0:
        return 0.0
    denom = np.maximum(np.abs(a), np.abs(numeric)) + 1e-6 * max(scale, 1e-300)
    return float(np.max(np.nanmin(np.abs(a - numeric) / denom, axis=0)))
