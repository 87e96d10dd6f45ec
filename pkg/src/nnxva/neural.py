"""Small fully-connected networks with hand-written reverse mode, plus Adam.

Parameters live in flat float64 vectors.  Layer l contributes a weight block
W_l of shape (fan_in, fan_out), stored row-major, followed by its bias b_l
when biases are enabled.  A stack of M networks with the same spec is a
(M, n_params) array and is evaluated in one batched pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SpecError",
    "TrainingError",
    "MlpSpec",
    "init_params",
    "unpack",
    "pack",
    "mlp_forward",
    "mlp_backward",
    "stacked_forward",
    "stacked_forward_cached",
    "stacked_backward",
    "AdamState",
    "adam_step",
]

ACTIVATIONS = ("tanh", "relu", "sigmoid", "linear")


class SpecError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden: tuple[int, ...] = (11, 11)
    output_dim: int | None = None
    activation: str | tuple[str, ...] = "tanh"
    bias: bool = True

    def __post_init__(self):
        out = self.input_dim if self.output_dim is None else self.output_dim
        object.__setattr__(self, "output_dim", out)
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        acts = (self.activation,) * len(self.hidden) if isinstance(self.activation, str) else tuple(self.activation)
        if len(acts) != len(self.hidden):
            raise SpecError("one activation per hidden layer is required")
        for a in acts:
            if a not in ACTIVATIONS:
                raise SpecError(f"unknown activation {a!r}")
        object.__setattr__(self, "activation", acts)
        if min((self.input_dim, out) + self.hidden) < 1:
            raise SpecError("layer widths must be at least 1")

    @classmethod
    def default(cls, d: int, extra: int = 10, **kw) -> "MlpSpec":
        """Two hidden layers of width d + extra."""
        return cls(d, (d + extra, d + extra), d, **kw)

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim,) + self.hidden + (self.output_dim,)

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        w = self.widths
        return list(zip(w[:-1], w[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + (o if self.bias else 0) for i, o in self.layer_shapes)

    def offsets(self):
        """(weight_slice, bias_slice or None, fan_in, fan_out) per layer."""
        out, pos = [], 0
        for i, o in self.layer_shapes:
            w = slice(pos, pos + i * o)
            pos += i * o
            b = None
            if self.bias:
                b = slice(pos, pos + o)
                pos += o
            out.append((w, b, i, o))
        return out


def init_params(spec: MlpSpec, seed, n_networks: int | None = None) -> np.ndarray:
    """Glorot-uniform weights, zero biases; a (M, n_params) stack when n_networks is given."""
    rng = np.random.default_rng(seed)
    m = 1 if n_networks is None else n_networks
    flat = np.zeros((m, spec.n_params))
    for w, _, i, o in spec.offsets():
        lim = np.sqrt(6.0 / (i + o))
        flat[:, w] = rng.uniform(-lim, lim, size=(m, i * o))
    return flat[0] if n_networks is None else flat


def unpack(spec: MlpSpec, params: np.ndarray):
    """Per-layer (W, b) views into `params`; b is None without biases."""
    params = np.asarray(params)
    if params.shape[-1] != spec.n_params:
        raise SpecError(f"expected {spec.n_params} parameters, got {params.shape[-1]}")
    lead = params.shape[:-1]
    layers = []
    for w, b, i, o in spec.offsets():
        W = params[..., w].reshape(lead + (i, o))
        B = params[..., b] if b is not None else None
        layers.append((W, B))
    return layers


def pack(spec: MlpSpec, layers) -> np.ndarray:
    parts = []
    for (W, B), (_, _, i, o) in zip(layers, spec.offsets()):
        lead = np.shape(W)[:-2]
        parts.append(np.reshape(W, lead + (i * o,)))
        if spec.bias:
            parts.append(np.asarray(B))
    return np.concatenate(parts, axis=-1)


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return z


def _act_inplace(name, z):
    """Apply the activation, overwriting `z` where the backward pass allows it."""
    if name == "tanh":
        return np.tanh(z, out=z)
    if name == "sigmoid":
        z *= 0.5
        np.tanh(z, out=z)
        z += 1.0
        z *= 0.5
        return z
    return _act(name, z)


def _act_backward(name, z, a, g):
    """g * phi'(z), using the stored activation where possible."""
    if name == "tanh":
        gz = a * a
        np.subtract(1.0, gz, out=gz)
        gz *= g
        return gz
    if name == "sigmoid":
        gz = 1.0 - a
        gz *= a
        gz *= g
        return gz
    if name == "relu":
        return g * (z > 0)
    return g


def _affine(h, W, B):
    if h.shape[-1] == 1:
        z = h * W[..., 0:1, :]
    else:
        z = h @ W
    if B is not None:
        z += B[..., None, :]
    return z


def _run(spec, layers, x):
    """Forward pass keeping (input, pre-activation, activation) of every layer.

    The pre-activation is only kept for relu; other activations differentiate
    from their output.
    """
    cache = []
    h = x
    acts = spec.activation + ("linear",)
    for (W, B), name in zip(layers, acts):
        z = _affine(h, W, B)
        if name == "relu":
            a = _act(name, z)
        else:
            a = _act_inplace(name, z)
            z = None
        cache.append((h, z, a))
        h = a
    return h, cache


def stacked_forward(spec: MlpSpec, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluate M networks: params (M, n_params), x (M, P, d) -> (M, P, d_out)."""
    if x.shape[-1] != spec.input_dim:
        raise SpecError(f"input dimension {x.shape[-1]} != {spec.input_dim}")
    out, _ = _run(spec, unpack(spec, params), x)
    return out


def stacked_forward_cached(spec: MlpSpec, params: np.ndarray, x: np.ndarray):
    """Like stacked_forward but also returns the activation cache for the backward pass."""
    if x.shape[-1] != spec.input_dim:
        raise SpecError(f"input dimension {x.shape[-1]} != {spec.input_dim}")
    return _run(spec, unpack(spec, params), x)


def stacked_backward(spec: MlpSpec, params: np.ndarray, x: np.ndarray, upstream: np.ndarray, cache=None,
                     input_grad: bool = True):
    """Reverse mode for a stack: returns (grad params (M, n_params), grad x (M, P, d)).

    With input_grad=False the input gradient is skipped and returned as None.
    """
    layers = unpack(spec, params)
    if cache is None:
        out, cache = _run(spec, layers, x)
    else:
        out = cache[-1][2]
    if upstream.shape != out.shape:
        raise SpecError(f"upstream shape {upstream.shape} != output shape {out.shape}")
    acts = spec.activation + ("linear",)
    grads = [None] * len(layers)
    g = upstream
    # summing over paths through a matmul is much faster than ndarray.sum here
    ones = np.ones((1, upstream.shape[-2]))
    for k in range(len(layers) - 1, -1, -1):
        h, z, a = cache[k]
        gz = _act_backward(acts[k], z, a, g)
        W, B = layers[k]
        gW = np.swapaxes(h, -1, -2) @ gz
        gB = (ones @ gz)[..., 0, :] if B is not None else None
        grads[k] = (gW, gB)
        if k > 0 or input_grad:
            g = gz @ np.swapaxes(W, -1, -2)
        else:
            g = None
    return pack(spec, grads), g


def mlp_forward(spec: MlpSpec, params: np.ndarray, x) -> np.ndarray:
    """Network output for a single input vector or a (P, d) batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, None, :] if single else x[None]
    if xb.shape[-1] != spec.input_dim:
        raise SpecError(f"input dimension {xb.shape[-1]} != {spec.input_dim}")
    out = stacked_forward(spec, np.asarray(params)[None], xb)[0]
    return out[0] if single else out


def mlp_backward(spec: MlpSpec, params: np.ndarray, x, upstream):
    """Gradient of sum(upstream * output) w.r.t. the flat params and the input."""
    x = np.asarray(x, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    single = x.ndim == 1
    xb = x[None, None, :] if single else x[None]
    ub = upstream[None, None, :] if single else upstream[None]
    if xb.shape[-1] != spec.input_dim:
        raise SpecError(f"input dimension {xb.shape[-1]} != {spec.input_dim}")
    gp, gx = stacked_backward(spec, np.asarray(params)[None], xb, ub)
    return gp[0], (gx[0, 0] if single else gx[0])


@dataclass
class AdamState:
    size: int
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray, lr: float | None = None):
    """One bias-corrected Adam update; returns (new params, state) and mutates `state`."""
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if params.shape != grad.shape or params.size != state.size:
        raise SpecError("parameter, gradient and optimiser sizes differ")
    if not np.all(np.isfinite(grad)):
        raise TrainingError(f"non-finite gradient at Adam step {state.step + 1}")
    lr = state.lr if lr is None else lr
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    return params - lr * m_hat / (np.sqrt(v_hat) + state.eps), state
