"""Small feed-forward regression network with exact backprop.

Parameters live in one flat float64 vector. Each layer contributes its weight
matrix (shape ``(fan_in, fan_out)``, row-major) followed by its bias, layer by
layer, and the per-layer arrays used during computation are views into that
vector. Continual-learning strategies therefore operate on plain 1-D arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, ConfigError, NumericError, ShapeError

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_layers: tuple[int, ...] = (64, 64, 64)
    activation: str = "relu"
    residual: bool = False
    output_dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(w) for w in self.hidden_layers))
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if any(w < 1 for w in self.hidden_layers):
            raise ConfigError(f"hidden widths must be >= 1, got {list(self.hidden_layers)}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.output_dim != 1:
            raise ConfigError("output_dim is fixed at 1")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_layers, self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def skips(self) -> list[bool]:
        """Whether each layer carries an identity skip (hidden, square layers only)."""
        n_hidden = len(self.hidden_layers)
        return [
            self.residual and i < n_hidden and fan_in == fan_out
            for i, (fan_in, fan_out) in enumerate(self.layer_shapes)
        ]

    @property
    def n_params(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_shapes)


class RegressionNet:
    """A network spec plus its flat parameter vector."""

    def __init__(self, spec: NetworkSpec, params: np.ndarray | None = None):
        self.spec = spec
        self._index = []
        offset = 0
        for fan_in, fan_out in spec.layer_shapes:
            w = slice(offset, offset + fan_in * fan_out)
            offset = w.stop
            b = slice(offset, offset + fan_out)
            offset = b.stop
            self._index.append((w, (fan_in, fan_out), b))
        self.params = np.zeros(offset)
        if params is not None:
            self.set_params(params)

    def __len__(self) -> int:
        return self.params.size

    def set_params(self, values) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.params.shape:
            raise ShapeError(f"expected {self.params.size} parameters, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise NumericError("non-finite parameter values")
        self.params[...] = values

    def get_params(self) -> np.ndarray:
        return self.params.copy()

    def copy(self) -> RegressionNet:
        return RegressionNet(self.spec, self.params)

    def layers(self, params: np.ndarray | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
        theta = self.params if params is None else params
        return [(theta[w].reshape(shape), theta[b]) for w, shape, b in self._index]

    def split(self, flat: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per-layer (weight, bias) views of any vector aligned with the parameters."""
        return self.layers(flat)


def init_network(spec: NetworkSpec, seed: int) -> RegressionNet:
    rng = np.random.default_rng(seed)
    net = RegressionNet(spec)
    for w, b in net.layers():
        bound = 1.0 / np.sqrt(w.shape[0])
        w[...] = rng.uniform(-bound, bound, size=w.shape)
        b[...] = 0.0
    return net


def _act(kind: str, z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(kind: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    return (z > 0).astype(np.float64) if kind == "relu" else 1.0 - a * a


def _check_features(net: RegressionNet, features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != net.spec.input_dim:
        raise ShapeError(f"features must have shape (n, {net.spec.input_dim}), got {x.shape}")
    return x


def _forward(net: RegressionNet, x: np.ndarray, params: np.ndarray | None = None):
    """Run the network, keeping what backprop needs.

    Returns (outputs, inputs, pre, post): the prediction vector, the input to
    each layer, and each hidden layer's pre-activation and activation values
    (activation taken before the skip is added).
    """
    kind = net.spec.activation
    layers = net.layers(params)
    skips = net.spec.skips
    inputs, pre, post = [], [], []
    h = x
    for i, (w, b) in enumerate(layers):
        inputs.append(h)
        z = h @ w + b
        if not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite activations in layer {i}", layer=i)
        if i == len(layers) - 1:
            return z[:, 0], inputs, pre, post
        a = _act(kind, z)
        pre.append(z)
        post.append(a)
        h = a + h if skips[i] else a
    raise AssertionError("unreachable")


def forward_batch(net: RegressionNet, features) -> np.ndarray:
    x = _check_features(net, features)
    return _forward(net, x)[0]


def compute_loss(predictions, targets, kind: str = "mse") -> float:
    p = np.asarray(predictions, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if kind != "mse":
        raise ArgumentError(f"unsupported loss {kind!r}")
    if p.size == 0:
        raise ArgumentError("loss of an empty batch is undefined")
    if p.size != t.size:
        raise ShapeError(f"{p.size} predictions vs {t.size} targets")
    r = p - t
    return float(np.mean(r * r))


def _backprop(net: RegressionNet, inputs, pre, post, dout: np.ndarray):
    """Yield (layer, delta, layer_input) from the output layer backwards.

    ``dout`` is the derivative of the loss with respect to each output, shape (n,).
    """
    kind = net.spec.activation
    layers = net.layers()
    skips = net.spec.skips
    last = len(layers) - 1
    dh = dout.reshape(-1, 1)
    for i in range(last, -1, -1):
        if i == last:
            delta = dh
        else:
            delta = dh * _act_grad(kind, pre[i], post[i])
        if not np.all(np.isfinite(delta)):
            raise NumericError(f"non-finite gradient in layer {i}", layer=i)
        yield i, delta, inputs[i]
        if i > 0:
            dprev = delta @ layers[i][0].T
            if skips[i]:
                dprev = dprev + dh
            dh = dprev


def backward_batch(net: RegressionNet, features, targets) -> tuple[np.ndarray, float]:
    """Exact gradient of the mean squared error, aligned with ``net.params``."""
    x = _check_features(net, features)
    y = np.asarray(targets, dtype=np.float64).ravel()
    if y.size != x.shape[0]:
        raise ShapeError(f"{x.shape[0]} feature rows vs {y.size} targets")
    out, inputs, pre, post = _forward(net, x)
    loss = compute_loss(out, y)
    grad = np.zeros_like(net.params)
    views = net.split(grad)
    for i, delta, a_in in _backprop(net, inputs, pre, post, 2.0 * (out - y) / y.size):
        gw, gb = views[i]
        gw[...] = a_in.T @ delta
        gb[...] = delta.sum(axis=0)
    return grad, loss


def finite_diff_gradient(net: RegressionNet, features, targets, eps: float = 1e-4) -> np.ndarray:
    if not eps > 0:
        raise ArgumentError(f"eps must be positive, got {eps}")
    x = _check_features(net, features)
    y = np.asarray(targets, dtype=np.float64).ravel()
    theta = net.params.copy()
    grad = np.empty_like(theta)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + eps
        up = compute_loss(_forward(net, x, theta)[0], y)
        theta[i] = orig - eps
        down = compute_loss(_forward(net, x, theta)[0], y)
        theta[i] = orig
        grad[i] = (up - down) / (2.0 * eps)
    return grad


def fisher_diagonal(net: RegressionNet, features, targets) -> np.ndarray:
    """Empirical Fisher diagonal: mean over samples of squared per-sample loss gradients.

    Per-sample weight gradients are outer products ``a_s ⊗ delta_s``, so their
    squared mean reduces to ``(A**2).T @ (D**2) / n`` without materialising them.
    """
    x = _check_features(net, features)
    y = np.asarray(targets, dtype=np.float64).ravel()
    if y.size == 0:
        raise ArgumentError("fisher_diagonal needs at least one sample")
    if y.size != x.shape[0]:
        raise ShapeError(f"{x.shape[0]} feature rows vs {y.size} targets")
    out, inputs, pre, post = _forward(net, x)
    fisher = np.zeros_like(net.params)
    views = net.split(fisher)
    n = y.size
    for i, delta, a_in in _backprop(net, inputs, pre, post, 2.0 * (out - y)):
        fw, fb = views[i]
        d2 = delta * delta
        fw[...] = (a_in * a_in).T @ d2 / n
        fb[...] = d2.mean(axis=0)
    return fisher


@dataclass
class OptimizerState:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: np.ndarray | None = field(default=None, repr=False)
    second_moment: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.kind!r}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.kind == "adam":
            if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
                raise ConfigError("adam betas must lie in (0, 1)")
            if not self.epsilon > 0:
                raise ConfigError("adam epsilon must be positive")


def optimizer_step(opt: OptimizerState, params: np.ndarray, grad: np.ndarray) -> tuple[np.ndarray, OptimizerState]:
    """Return updated parameters; ``opt`` is advanced in place and returned."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape:
        raise ShapeError(f"parameter shape {params.shape} vs gradient shape {grad.shape}")
    opt.step_count += 1
    if opt.kind == "sgd":
        return params - opt.learning_rate * grad, opt
    if opt.first_moment is None:
        opt.first_moment = np.zeros_like(params)
        opt.second_moment = np.zeros_like(params)
    elif opt.first_moment.shape != params.shape:
        raise ShapeError("optimizer moments do not match the parameter vector")
    m, v = opt.first_moment, opt.second_moment
    m *= opt.beta1
    m += (1.0 - opt.beta1) * grad
    v *= opt.beta2
    v += (1.0 - opt.beta2) * grad * grad
    m_hat = m / (1.0 - opt.beta1 ** opt.step_count)
    v_hat = v / (1.0 - opt.beta2 ** opt.step_count)
    return params - opt.learning_rate * m_hat / (np.sqrt(v_hat) + opt.epsilon), opt
