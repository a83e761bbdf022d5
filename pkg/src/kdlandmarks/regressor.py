"""Fully-connected coordinate regressor with backprop and Adam."""
from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("relu", "tanh")


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_layers: tuple = (64,)
    output_dim: int = 2
    activation: str | tuple = "relu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        dims = (self.input_dim, *self.hidden_layers, self.output_dim)
        if any(d < 1 for d in dims):
            raise ValueError(f"all layer widths must be >= 1, got {dims}")
        if self.output_dim % 2:
            raise ValueError(f"output_dim must be even (2k), got {self.output_dim}")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")

    @property
    def activations(self):
        if isinstance(self.activation, str):
            return (self.activation,) * len(self.hidden_layers)
        acts = tuple(self.activation)
        if len(acts) != len(self.hidden_layers):
            raise ValueError("one activation per hidden layer expected")
        return acts

    @property
    def dims(self):
        return (self.input_dim, *self.hidden_layers, self.output_dim)

    def param_count(self):
        d = self.dims
        return sum(d[i] * d[i + 1] + d[i + 1] for i in range(len(d) - 1))

    def to_dict(self):
        act = self.activation if isinstance(self.activation, str) else list(self.activation)
        return {
            "input_dim": self.input_dim,
            "hidden_layers": list(self.hidden_layers),
            "output_dim": self.output_dim,
            "activation": act,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data):
        act = data.get("activation", "relu")
        return cls(
            input_dim=int(data["input_dim"]),
            hidden_layers=tuple(data.get("hidden_layers", ())),
            output_dim=int(data["output_dim"]),
            activation=act if isinstance(act, str) else tuple(act),
            seed=int(data.get("seed", 0)),
        )


def init_params(spec):
    """Glorot-uniform weights, zero biases. Returns ``[(W, b), ...]``."""
    rng = np.random.default_rng(spec.seed)
    params = []
    dims = spec.dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        params.append((w, np.zeros(fan_out)))
    return params


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad(name, z, a):
    if name == "relu":
        return (z > 0).astype(z.dtype)
    return 1.0 - a * a


def _check_input(params, inputs):
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2 or inputs.shape[1] != params[0][0].shape[0]:
        raise ValueError(
            f"inputs of shape {inputs.shape} do not match input_dim {params[0][0].shape[0]}"
        )
    return inputs


def forward(params, inputs, activations, return_cache=False):
    """Batch forward pass. The output layer is linear."""
    x = _check_input(params, inputs)
    cache = [(None, x)]
    for i, (w, b) in enumerate(params):
        z = x @ w + b
        x = z if i == len(params) - 1 else _act(activations[i], z)
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(f"non-finite activations in layer {i}")
        cache.append((z, x))
    return (x, cache) if return_cache else x


def backward(params, cache, d_out, activations):
    """Reverse-mode gradients ``[(dW, db), ...]`` from a forward cache."""
    d_out = np.asarray(d_out, dtype=float)
    if d_out.shape != cache[-1][1].shape:
        raise ValueError(f"d_out shape {d_out.shape} != output shape {cache[-1][1].shape}")
    grads = [None] * len(params)
    delta = d_out
    for i in range(len(params) - 1, -1, -1):
        w = params[i][0]
        a_prev = cache[i][1]
        grads[i] = (a_prev.T @ delta, delta.sum(axis=0))
        if i > 0:
            z_prev, a_prev_act = cache[i]
            delta = (delta @ w.T) * _act_grad(activations[i - 1], z_prev, a_prev_act)
    return grads


def pack(params):
    """Flatten ``[(W, b), ...]`` into one vector (row-major W, then b)."""
    return np.concatenate([a.ravel() for pair in params for a in pair])


def unpack(flat, dims):
    """Views into ``flat`` shaped like the layer parameters for ``dims``."""
    out, pos = [], 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = flat[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = flat[pos : pos + fan_out]
        pos += fan_out
        out.append((w, b))
    if pos != flat.size:
        raise ValueError(f"flat vector has {flat.size} entries, layers need {pos}")
    return out


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    decay: float = 1e-6
    epsilon: float = 1e-8
    t: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def current_lr(self):
        """Learning rate for the next step, ``lr / (1 + decay * t)``."""
        return self.learning_rate / (1.0 + self.decay * self.t)

    def to_dict(self):
        return {
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "decay": self.decay,
            "epsilon": self.epsilon,
            "t": self.t,
            "m": None if self.m is None else self.m.tolist(),
            "v": None if self.v is None else self.v.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        state = cls(**{k: data[k] for k in ("learning_rate", "beta1", "beta2", "decay", "epsilon", "t")})
        if data.get("m") is not None:
            state.m = np.asarray(data["m"], dtype=float)
            state.v = np.asarray(data["v"], dtype=float)
        return state


def adam_step(params, grads, state):
    """One bias-corrected Adam update on flat vectors; mutates ``state``.

    Returns the updated parameter vector (a new array).
    """
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if grads.shape != params.shape:
        raise ValueError(f"gradient shape {grads.shape} != parameter shape {params.shape}")
    if state.m is None:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    elif state.m.shape != params.shape:
        raise ValueError("optimizer state does not match parameters")
    lr = state.current_lr()
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    tmp = np.multiply(grads, 1.0 - state.beta1)
    state.m *= state.beta1
    state.m += tmp
    np.multiply(grads, grads, out=tmp)
    tmp *= 1.0 - state.beta2
    state.v *= state.beta2
    state.v += tmp
    # lr * (m / c1) / (sqrt(v / c2) + eps), without extra temporaries
    np.sqrt(state.v, out=tmp)
    tmp *= 1.0 / np.sqrt(c2)
    tmp += state.epsilon
    np.divide(state.m, tmp, out=tmp)
    tmp *= lr / c1
    return params - tmp


class Regressor:
    """An :class:`MlpSpec` with its parameters stored in one flat vector."""

    def __init__(self, spec, params=None):
        self.spec = spec
        self._acts = spec.activations
        params = init_params(spec) if params is None else params
        if len(params) != len(spec.dims) - 1:
            raise ValueError("parameter list does not match spec")
        for (w, b), fi, fo in zip(params, spec.dims[:-1], spec.dims[1:]):
            if np.shape(w) != (fi, fo) or np.shape(b) != (fo,):
                raise ValueError(f"parameter shapes {np.shape(w)}, {np.shape(b)} != ({fi}, {fo})")
        self.theta = pack([(np.asarray(w, float), np.asarray(b, float)) for w, b in params])
        self.history = []

    @property
    def theta(self):
        return self._theta

    @theta.setter
    def theta(self, value):
        self._theta = np.ascontiguousarray(value, dtype=float)
        self.params = unpack(self._theta, self.spec.dims)

    def predict(self, inputs):
        return forward(self.params, inputs, self._acts)

    def predict_shapes(self, inputs):
        out = self.predict(inputs)
        return out.reshape(len(out), -1, 2)

    def forward(self, inputs):
        return forward(self.params, inputs, self._acts, return_cache=True)

    def backward(self, cache, d_out):
        """Flat gradient vector matching :attr:`theta`."""
        return pack(backward(self.params, cache, d_out, self._acts))

    def step(self, grad, state):
        self.theta = adam_step(self.theta, grad, state)

    def copy(self):
        return Regressor(self.spec, [(w.copy(), b.copy()) for w, b in self.params])
