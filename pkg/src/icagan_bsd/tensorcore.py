"""Feed-forward network numerics: forward/backward passes, the gradient-penalty
derivative, Adam, and a JSON checkpoint format.

Everything works on float64 arrays. Single vectors and row-batches are both
accepted; batch gradients are summed over rows (callers scale ``upstream`` to
get a mean).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import NumericalError, ShapeError

ACTIVATIONS = ("relu", "linear")


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "linear"

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[0]:
            raise ShapeError(f"bad layer shapes: weight {w.shape}, bias {b.shape}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)


@dataclass(frozen=True)
class MlpParams:
    """Immutable parameter set of a fully connected network."""

    layers: tuple[Layer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ShapeError("network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.weight.shape[1] != prev.weight.shape[0]:
                raise ShapeError(
                    f"layer widths do not chain: {prev.weight.shape} -> {nxt.weight.shape}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def sizes(self) -> list[int]:
        return [self.in_dim] + [layer.weight.shape[0] for layer in self.layers]

    def arrays(self) -> list[np.ndarray]:
        """Flat parameter list ``[W0, b0, W1, b1, ...]``."""
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        if len(arrays) != 2 * len(self.layers):
            raise ShapeError("array count does not match layer count")
        layers = []
        for i, layer in enumerate(self.layers):
            w, b = arrays[2 * i], arrays[2 * i + 1]
            if w.shape != layer.weight.shape or b.shape != layer.bias.shape:
                raise ShapeError("replacement arrays change parameter shapes")
            layers.append(Layer(w, b, layer.activation))
        return MlpParams(tuple(layers))

    def to_dict(self) -> dict:
        return {
            "layers": [
                {
                    "weights": layer.weight.tolist(),
                    "bias": layer.bias.tolist(),
                    "activation": layer.activation,
                }
                for layer in self.layers
            ]
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "MlpParams":
        layers = []
        for item in obj["layers"]:
            w = np.array(item["weights"], dtype=np.float64)
            layers.append(Layer(w, np.array(item["bias"], dtype=np.float64), item["activation"]))
        return cls(tuple(layers))

    def equals(self, other: "MlpParams") -> bool:
        if len(self.layers) != len(other.layers):
            return False
        return all(
            a.activation == b.activation
            and np.array_equal(a.weight, b.weight)
            and np.array_equal(a.bias, b.bias)
            for a, b in zip(self.layers, other.layers)
        )


@dataclass(frozen=True)
class Gradients:
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    input: np.ndarray | None = None

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def __add__(self, other: "Gradients") -> "Gradients":
        inp = None
        if self.input is not None and other.input is not None:
            inp = self.input + other.input
        return Gradients(
            tuple(a + b for a, b in zip(self.weights, other.weights)),
            tuple(a + b for a, b in zip(self.biases, other.biases)),
            inp,
        )

    def scaled(self, factor: float) -> "Gradients":
        return Gradients(
            tuple(factor * w for w in self.weights),
            tuple(factor * b for b in self.biases),
            None if self.input is None else factor * self.input,
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass(frozen=True)
class ForwardCache:
    inputs: tuple[np.ndarray, ...]  # activation entering each layer, (B, in_l)
    pre: tuple[np.ndarray, ...]  # pre-activation of each layer, (B, out_l)
    squeeze: bool = False


def init_mlp(sizes: Sequence[int], seed=None) -> MlpParams:
    """Glorot-uniform weights, zero biases, relu hidden layers, linear output."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
        raise ShapeError(f"invalid layer sizes {list(sizes)}")
    layers = []
    n_layers = len(sizes) - 1
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        act = "linear" if i == n_layers - 1 else "relu"
        layers.append(Layer(w, np.zeros(fan_out), act))
    return MlpParams(tuple(layers))


def zero_like(params: MlpParams) -> MlpParams:
    return params.with_arrays([np.zeros_like(a) for a in params.arrays()])


def forward(params: MlpParams, x) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    a = x[None, :] if squeeze else x
    if a.ndim != 2 or a.shape[1] != params.in_dim:
        raise ShapeError(f"input shape {x.shape} does not match network input width {params.in_dim}")
    inputs, pre = [], []
    for layer in params.layers:
        inputs.append(a)
        h = a @ layer.weight.T + layer.bias
        pre.append(h)
        a = np.maximum(h, 0.0) if layer.activation == "relu" else h
    out = a[0] if squeeze else a
    return out, ForwardCache(tuple(inputs), tuple(pre), squeeze)


def _check_cache(params: MlpParams, cache: ForwardCache):
    if len(cache.pre) != len(params.layers):
        raise ShapeError("stale cache: layer count differs from params")
    for layer, a, h in zip(params.layers, cache.inputs, cache.pre):
        if a.shape[1] != layer.weight.shape[1] or h.shape[1] != layer.weight.shape[0]:
            raise ShapeError("stale cache: shapes do not match params")


def backward(params: MlpParams, cache: ForwardCache, upstream) -> Gradients:
    """Gradients of ``sum(upstream * output)`` w.r.t. every parameter and the input."""
    _check_cache(params, cache)
    g = np.asarray(upstream, dtype=np.float64)
    if cache.squeeze:
        g = g.reshape(1, -1)
    if g.shape != cache.pre[-1].shape:
        raise ShapeError(f"upstream shape {g.shape} does not match output {cache.pre[-1].shape}")
    n = len(params.layers)
    dws: list = [None] * n
    dbs: list = [None] * n
    for i in range(n - 1, -1, -1):
        layer = params.layers[i]
        if layer.activation == "relu":
            g = g * (cache.pre[i] > 0.0)
        dws[i] = g.T @ cache.inputs[i]
        dbs[i] = g.sum(axis=0)
        g = g @ layer.weight
    dx = g[0] if cache.squeeze else g
    return Gradients(tuple(dws), tuple(dbs), dx)


def _masks(params: MlpParams, cache: ForwardCache) -> list[np.ndarray]:
    return [
        (h > 0.0).astype(np.float64) if layer.activation == "relu" else np.ones_like(h)
        for layer, h in zip(params.layers, cache.pre)
    ]


def input_gradient(params: MlpParams, x) -> np.ndarray:
    """``d f / d x`` for a scalar-output network, one row per input row."""
    if params.out_dim != 1:
        raise ShapeError("input_gradient needs a scalar-output network")
    out, cache = forward(params, x)
    return backward(params, cache, np.ones_like(out)).input


def penalty_terms(disc: MlpParams, x_hat, lam: float, row_weight=None):
    """Per-row penalties ``lam * (||grad_x f|| - 1)^2`` and the parameter
    gradient of their weighted sum.

    The input-gradient is an explicit backward network in which the relu masks
    of the forward pass are held fixed; differentiating that network is exact
    wherever no pre-activation sits on a kink. Biases therefore receive zero
    gradient. At ``||grad|| == 0`` the norm's derivative is taken as 0.
    """
    if disc.out_dim != 1:
        raise ShapeError("gradient penalty needs a scalar-output discriminator")
    X = np.asarray(x_hat, dtype=np.float64)
    X = X[None, :] if X.ndim == 1 else X
    _, cache = forward(disc, X)
    masks = _masks(disc, cache)
    layers = disc.layers
    n = len(layers)
    B = X.shape[0]

    # d[i] = df/dh_i for every layer, computed top-down with frozen masks
    d: list = [None] * n
    d[n - 1] = masks[n - 1] * np.ones((B, 1))
    for i in range(n - 2, -1, -1):
        d[i] = (d[i + 1] @ layers[i + 1].weight) * masks[i]
    v = d[0] @ layers[0].weight
    norms = np.sqrt(np.sum(v * v, axis=1))
    pen = lam * (norms - 1.0) ** 2

    w = np.ones(B) if row_weight is None else np.broadcast_to(np.asarray(row_weight, float), (B,))
    safe = np.where(norms > 0.0, norms, 1.0)
    coef = np.where(norms > 0.0, w * 2.0 * lam * (norms - 1.0) / safe, 0.0)
    r = coef[:, None] * v

    dws = [np.zeros_like(layer.weight) for layer in layers]
    dbs = [np.zeros_like(layer.bias) for layer in layers]
    dws[0] += d[0].T @ r
    q = r @ layers[0].weight.T
    for i in range(0, n - 1):
        s = q * masks[i]
        dws[i + 1] += d[i + 1].T @ s
        q = s @ layers[i + 1].weight.T
    return pen, Gradients(tuple(dws), tuple(dbs), None)


def gradient_penalty_grads(disc: MlpParams, x_hat, lam: float) -> tuple[float, Gradients]:
    """Penalty ``lam * (||grad f(x_hat)||_2 - 1)^2`` and its parameter gradient.

    A 2-D ``x_hat`` is treated as a batch: the mean penalty and the gradient of
    that mean are returned.
    """
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if not np.all(np.isfinite(x_hat)):
        raise NumericalError("x_hat contains non-finite values")
    B = 1 if x_hat.ndim == 1 else x_hat.shape[0]
    pen, grads = penalty_terms(disc, x_hat, lam, row_weight=1.0 / B)
    return float(pen.mean()), grads


@dataclass(frozen=True)
class AdamState:
    m: tuple[np.ndarray, ...]
    v: tuple[np.ndarray, ...]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params: MlpParams, **kwargs) -> "AdamState":
        arrays = params.arrays()
        return cls(
            tuple(np.zeros_like(a) for a in arrays),
            tuple(np.zeros_like(a) for a in arrays),
            **kwargs,
        )


def adam_step(
    params: MlpParams, grads: Gradients, state: AdamState, lr: float
) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam update. Returns new params and state."""
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    p_arrays = params.arrays()
    g_arrays = grads.arrays()
    if len(g_arrays) != len(p_arrays) or any(
        g.shape != p.shape for g, p in zip(g_arrays, p_arrays)
    ):
        raise ShapeError("gradient shapes do not match parameters")
    if not grads.is_finite():
        raise NumericalError("non-finite gradient; Adam update rejected")
    b1, b2 = state.beta1, state.beta2
    t = state.step + 1
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_arrays, g_arrays, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_p.append(p - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(tuple(new_m), tuple(new_v), t, b1, b2, state.eps)
    return params.with_arrays(new_p), new_state


def save_params(params: MlpParams, path) -> None:
    Path(path).write_text(json.dumps(params.to_dict()))


def load_params(path) -> MlpParams:
    return MlpParams.from_dict(json.loads(Path(path).read_text()))
