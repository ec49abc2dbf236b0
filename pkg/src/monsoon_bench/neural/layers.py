"""Dense and LSTM layers with explicit forward and backward passes.

Shapes
------
* dense, ``groups == 1``: input ``(batch, in_dim)`` -> ``(batch, out_dim)``
* dense, ``groups > 1``: input ``(batch, groups, in_dim)`` -> ``(batch, groups, out_dim)``;
  each group owns an independent weight set (one small net per grid cell).
* lstm: input ``(batch, steps, in_dim)`` -> final hidden state ``(batch, out_dim)``.
  Only allowed as the first layer.

LSTM weights are stored gate-concatenated in the order input, forget,
candidate, output: ``W (in, 4H)``, ``U (H, 4H)``, ``b (4H,)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError, ShapeError, UsageError

ACTIVATIONS = ("relu", "sigmoid", "tanh", "identity")
KINDS = ("dense", "lstm")

_tokens = itertools.count(1)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return _sigmoid(z)
    if name == "tanh":
        return np.tanh(z)
    return z


def activation_grad(name: str, a: np.ndarray) -> np.ndarray:
    """Derivative of the activation expressed through its output ``a``."""
    if name == "relu":
        return (a > 0).astype(a.dtype)
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(a)


def inverse_activation(name: str, a: np.ndarray) -> np.ndarray:
    if name == "sigmoid":
        a = np.clip(a, 1e-4, 1 - 1e-4)
        return np.log(a / (1 - a))
    if name == "tanh":
        return np.arctanh(np.clip(a, -1 + 1e-4, 1 - 1e-4))
    if name == "relu":
        return np.maximum(a, 0.0)
    return a


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int
    activation: str = "identity"
    groups: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")
        if self.in_dim <= 0 or self.out_dim <= 0 or self.groups <= 0:
            raise ShapeError(f"layer dims must be positive: {self}")
        if self.kind == "lstm" and self.groups != 1:
            raise ShapeError("lstm layers cannot be grouped")

    def as_dict(self) -> dict:
        return {"kind": self.kind, "in_dim": self.in_dim, "out_dim": self.out_dim,
                "activation": self.activation, "groups": self.groups}


def check_chain(specs) -> tuple[LayerSpec, ...]:
    specs = tuple(specs)
    if not specs:
        raise ShapeError("network needs at least one layer")
    for i, s in enumerate(specs):
        if s.kind == "lstm" and i != 0:
            raise ShapeError("lstm is only supported as the first layer")
    for a, b in zip(specs, specs[1:]):
        if a.out_dim != b.in_dim:
            raise ShapeError(f"layer chain mismatch: {a.out_dim} -> {b.in_dim}")
    groups = {s.groups for s in specs}
    if len(groups) > 1:
        raise ShapeError("grouped layers must all share the same group count")
    return specs


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Weights of a layer chain. Treated as immutable; updates build a new object."""

    specs: tuple[LayerSpec, ...]
    weights: tuple[dict, ...]
    seed: int
    token: int = field(default_factory=lambda: next(_tokens))

    @property
    def groups(self) -> int:
        return self.specs[0].groups

    def replace(self, weights) -> "ModelParams":
        return ModelParams(self.specs, tuple(weights), self.seed)

    def n_params(self) -> int:
        return sum(a.size for w in self.weights for a in w.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([w[k].ravel() for w in self.weights for k in sorted(w)])


def init_params(specs, seed: int) -> ModelParams:
    """Seeded uniform initialisation.

    Dense: Glorot-uniform ``±sqrt(6/(fan_in+fan_out))``, zero bias.
    LSTM: ``±sqrt(1/H)`` for both weight blocks, zero bias except a forget-gate
    bias of 1.
    """
    specs = check_chain(specs)
    rng = np.random.default_rng(seed)
    weights = []
    for s in specs:
        if s.kind == "dense":
            lim = np.sqrt(6.0 / (s.in_dim + s.out_dim))
            shape = (s.in_dim, s.out_dim) if s.groups == 1 else (s.groups, s.in_dim, s.out_dim)
            bshape = (s.out_dim,) if s.groups == 1 else (s.groups, s.out_dim)
            weights.append({"W": rng.uniform(-lim, lim, shape), "b": np.zeros(bshape)})
        else:
            h = s.out_dim
            lim = np.sqrt(1.0 / h)
            b = np.zeros(4 * h)
            b[h:2 * h] = 1.0
            weights.append({"W": rng.uniform(-lim, lim, (s.in_dim, 4 * h)),
                            "U": rng.uniform(-lim, lim, (h, 4 * h)),
                            "b": b})
    return ModelParams(specs, tuple(weights), seed)


@dataclass(eq=False)
class Trace:
    token: int
    caches: list
    output: np.ndarray


def _finite(a: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite values in {where}")


def _dense_forward(s: LayerSpec, w: dict, x: np.ndarray):
    if s.groups == 1:
        if x.ndim != 2 or x.shape[1] != s.in_dim:
            raise ShapeError(f"dense layer expects (batch, {s.in_dim}), got {x.shape}")
        with np.errstate(over="ignore", invalid="ignore"):
            z = x @ w["W"] + w["b"]
    else:
        if x.ndim != 3 or x.shape[1:] != (s.groups, s.in_dim):
            raise ShapeError(f"grouped dense expects (batch, {s.groups}, {s.in_dim}), got {x.shape}")
        with np.errstate(over="ignore", invalid="ignore"):
            z = np.matmul(x.transpose(1, 0, 2), w["W"]).transpose(1, 0, 2) + w["b"]
    # overflow is reported here; a saturating activation would otherwise hide it
    _finite(z, "dense pre-activation")
    a = activate(s.activation, z)
    return a, (x, a)


def _dense_backward(s: LayerSpec, w: dict, cache, da: np.ndarray):
    x, a = cache
    dz = da * activation_grad(s.activation, a)
    if s.groups == 1:
        grads = {"W": x.T @ dz, "b": dz.sum(axis=0)}
        dx = dz @ w["W"].T
    else:
        xg = x.transpose(1, 0, 2)
        dzg = dz.transpose(1, 0, 2)
        grads = {"W": np.matmul(xg.transpose(0, 2, 1), dzg), "b": dz.sum(axis=0)}
        dx = np.matmul(dzg, w["W"].transpose(0, 2, 1)).transpose(1, 0, 2)
    return grads, dx


def _lstm_forward(s: LayerSpec, w: dict, x: np.ndarray):
    if x.ndim != 3 or x.shape[2] != s.in_dim:
        raise ShapeError(f"lstm expects (batch, steps, {s.in_dim}), got {x.shape}")
    batch, steps, _ = x.shape
    hdim = s.out_dim
    h = np.zeros((batch, hdim))
    c = np.zeros((batch, hdim))
    # input projection for every step at once
    xw = (x.reshape(batch * steps, -1) @ w["W"]).reshape(batch, steps, 4 * hdim)
    steps_cache = []
    for t in range(steps):
        with np.errstate(over="ignore", invalid="ignore"):
            z = xw[:, t] + h @ w["U"] + w["b"]
        _finite(z, f"lstm gates at step {t}")
        i = _sigmoid(z[:, :hdim])
        f = _sigmoid(z[:, hdim:2 * hdim])
        g = activate(s.activation, z[:, 2 * hdim:3 * hdim])
        o = _sigmoid(z[:, 3 * hdim:])
        c_new = f * c + i * g
        ac = activate(s.activation, c_new)
        steps_cache.append((h, c, i, f, g, o, ac))
        h = o * ac
        c = c_new
    return h, (x, steps_cache)


def _lstm_backward(s: LayerSpec, w: dict, cache, dh: np.ndarray):
    x, steps_cache = cache
    batch, steps, _ = x.shape
    hdim = s.out_dim
    dW = np.zeros_like(w["W"])
    dU = np.zeros_like(w["U"])
    db = np.zeros_like(w["b"])
    dx = np.zeros_like(x)
    dc = np.zeros((batch, hdim))
    for t in reversed(range(steps)):
        h_prev, c_prev, i, f, g, o, ac = steps_cache[t]
        do = dh * ac
        dc = dc + dh * o * activation_grad(s.activation, ac)
        dz = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dc * i * activation_grad(s.activation, g),
            do * o * (1.0 - o),
        ], axis=1)
        dW += x[:, t].T @ dz
        dU += h_prev.T @ dz
        db += dz.sum(axis=0)
        dx[:, t] = dz @ w["W"].T
        dh = dz @ w["U"].T
        dc = dc * f
    return {"W": dW, "U": dU, "b": db}, dx


def forward(params: ModelParams, x) -> tuple[np.ndarray, Trace]:
    """Run the chain on a batch and keep what backward needs."""
    a = np.asarray(x, dtype=float)
    _finite(a, "network input")
    caches = []
    for k, (s, w) in enumerate(zip(params.specs, params.weights)):
        if s.kind == "dense":
            a, cache = _dense_forward(s, w, a)
        else:
            a, cache = _lstm_forward(s, w, a)
        _finite(a, f"layer {k} ({s.kind}) output")
        caches.append(cache)
    return a, Trace(params.token, caches, a)


def backward(params: ModelParams, trace: Trace, grad_out, return_input_grad: bool = False):
    """Parameter gradients for ``d loss / d output = grad_out``."""
    if trace.token != params.token:
        raise UsageError("trace was produced by different (or since updated) parameters")
    da = np.asarray(grad_out, dtype=float)
    if da.shape != trace.output.shape:
        raise ShapeError(f"output gradient shape {da.shape} != output shape {trace.output.shape}")
    grads = [None] * len(params.specs)
    for k in reversed(range(len(params.specs))):
        s, w = params.specs[k], params.weights[k]
        if s.kind == "dense":
            grads[k], da = _dense_backward(s, w, trace.caches[k], da)
        else:
            grads[k], da = _lstm_backward(s, w, trace.caches[k], da)
    return (grads, da) if return_input_grad else grads
