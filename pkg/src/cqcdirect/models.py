"""Parameterised comparator function classes with exact parameter gradients.

A comparator model maps an untreated outcome level y0 and covariates x to a
treated-outcome-scale value, differentiably in its parameter vector theta.
Two families are provided: models linear in a feature map (affine
shift/scale features or random Fourier features), and a small fully
connected network with hand-rolled reverse-mode gradients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "AffineFeatures",
    "RandomFourierFeatures",
    "LinearCqc",
    "MlpCqc",
    "project_ball",
    "model_to_json",
    "model_from_json",
]


def _as_batch(y0, x, d):
    """Normalise (y0, x) to ((m,), (m, d)) and report whether input was scalar."""
    y0_arr = np.atleast_1d(np.asarray(y0, dtype=float))
    x_arr = np.asarray(x, dtype=float)
    if x_arr.ndim == 1:
        if d == 1 and len(y0_arr) == len(x_arr) and len(x_arr) != 1:
            x_arr = x_arr.reshape(-1, 1)
        else:
            x_arr = x_arr.reshape(1, -1)
    if x_arr.shape[1] != d:
        raise DataError(f"covariate dimension mismatch: expected {d}, got {x_arr.shape[1]}")
    if len(y0_arr) == 1 and len(x_arr) > 1:
        y0_arr = np.full(len(x_arr), y0_arr[0])
    if len(x_arr) == 1 and len(y0_arr) > 1:
        x_arr = np.repeat(x_arr, len(y0_arr), axis=0)
    if len(y0_arr) != len(x_arr):
        raise DataError("y0 and x batch sizes differ")
    scalar = np.isscalar(y0) or (np.ndim(y0) == 0)
    return y0_arr, x_arr, scalar


class AffineFeatures:
    """Shift/scale feature map: phi(y0, x) = [x*y0, y0, x, 1], length 2(d+1).

    With theta split as [scale, scale0, shift, shift0] the model value is
    (scale.x + scale0) * y0 + (shift.x + shift0), i.e. a per-covariate
    scaling plus shift of the untreated outcome.
    """

    kind = "affine_shift_scale"

    def __init__(self, d: int, rho_bound: float | None = None):
        if d < 1:
            raise ConfigError("covariate dimension must be >= 1")
        self.d = d
        self.p = 2 * (d + 1)
        self.rho_bound = rho_bound

    def __call__(self, y0, x) -> np.ndarray:
        y0_arr, x_arr, scalar = _as_batch(y0, x, self.d)
        m = len(y0_arr)
        out = np.empty((m, self.p))
        out[:, : self.d] = x_arr * y0_arr[:, None]
        out[:, self.d] = y0_arr
        out[:, self.d + 1 : 2 * self.d + 1] = x_arr
        out[:, -1] = 1.0
        self._check_rho(out)
        return out[0] if scalar else out

    def _check_rho(self, phi):
        if self.rho_bound is not None:
            worst = float(np.max(np.linalg.norm(phi, axis=-1)))
            if worst > self.rho_bound + 1e-12:
                raise ConfigError(f"feature norm {worst:.6g} exceeds declared "
                                  f"bound {self.rho_bound:.6g}")

    def spec(self) -> dict:
        return {"kind": self.kind, "d": self.d, "rho_bound": self.rho_bound}


class RandomFourierFeatures:
    """Random cosine features approximating an RBF kernel over (y0, x).

    Frequencies are N(0, lengthscale^-2 I) and phases uniform on [0, 2pi),
    drawn once from the seed; phi = sqrt(2/p) cos(omega.[y0; x] + b), so the
    feature norm never exceeds sqrt(2).
    """

    kind = "random_fourier"

    def __init__(self, d: int, num_features: int, lengthscale: float = 1.0, seed: int = 0):
        if num_features <= 0:
            raise ConfigError("number of random features must be positive")
        if lengthscale <= 0:
            raise ConfigError("lengthscale must be positive")
        self.d = d
        self.p = num_features
        self.lengthscale = lengthscale
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.omega = rng.normal(0.0, 1.0 / lengthscale, size=(num_features, d + 1))
        self.phase = rng.uniform(0.0, 2.0 * np.pi, size=num_features)
        self.rho_bound = np.sqrt(2.0)

    def __call__(self, y0, x) -> np.ndarray:
        y0_arr, x_arr, scalar = _as_batch(y0, x, self.d)
        u = np.concatenate([y0_arr[:, None], x_arr], axis=1)
        out = np.sqrt(2.0 / self.p) * np.cos(u @ self.omega.T + self.phase)
        return out[0] if scalar else out

    def spec(self) -> dict:
        return {
            "kind": self.kind,
            "d": self.d,
            "num_features": self.p,
            "lengthscale": self.lengthscale,
            "seed": self.seed,
        }


class LinearCqc:
    """Comparator linear in a feature map: value = theta . phi(y0, x)."""

    kind = "linear"

    def __init__(self, features, theta: np.ndarray | None = None):
        self.features = features
        self.theta = np.zeros(features.p) if theta is None else np.asarray(theta, dtype=float).copy()
        if len(self.theta) != features.p:
            raise ConfigError(f"theta length {len(self.theta)} != feature dimension {features.p}")

    @property
    def d(self) -> int:
        return self.features.d

    @property
    def n_params(self) -> int:
        return self.features.p

    def value(self, y0, x):
        phi = self.features(y0, x)
        return phi @ self.theta

    def eval_and_grad(self, y0, x):
        """Return (value, gradient w.r.t. theta); the gradient is phi itself."""
        phi = self.features(y0, x)
        return phi @ self.theta, phi

    def grad_weighted(self, y0, x, weights) -> np.ndarray:
        """Mean of weights[i] * grad_i over a batch (single pass, no per-row grads)."""
        phi = np.atleast_2d(self.features(y0, x))
        w = np.asarray(weights, dtype=float)
        return phi.T @ w / len(w)

    def with_theta(self, theta) -> "LinearCqc":
        return LinearCqc(self.features, theta)

    def get_params(self) -> np.ndarray:
        return self.theta.copy()

    def set_params(self, theta) -> None:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != self.theta.shape:
            raise ConfigError("parameter shape mismatch")
        self.theta = theta.copy()


def _glorot_init(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class MlpCqc:
    """Small fully connected comparator network on input [y0, x...].

    Layer widths are (d+1, hidden..., 1). Gradients with respect to every
    weight and bias come from explicit reverse-mode accumulation; ReLU takes
    subgradient 0 at the kink.
    """

    kind = "mlp"

    def __init__(self, d: int, hidden=(20, 20), activation: str = "relu", seed: int = 0,
                 layers: list | None = None):
        if activation not in ("relu", "tanh"):
            raise ConfigError(f"unknown activation {activation!r}")
        self.d = d
        self.hidden = tuple(hidden)
        self.activation = activation
        self.seed = seed
        widths = [d + 1] + list(hidden) + [1]
        if layers is not None:
            self.weights = [np.asarray(w, dtype=float) for (w, _) in layers]
            self.biases = [np.asarray(b, dtype=float) for (_, b) in layers]
        else:
            rng = np.random.default_rng(seed)
            self.weights = [_glorot_init(rng, widths[i], widths[i + 1]) for i in range(len(widths) - 1)]
            self.biases = [np.zeros(widths[i + 1]) for i in range(len(widths) - 1)]
        self._shapes = [(w.shape, b.shape) for w, b in zip(self.weights, self.biases)]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def _act(self, z):
        return np.maximum(z, 0.0) if self.activation == "relu" else np.tanh(z)

    def _act_grad(self, z):
        if self.activation == "relu":
            return (z > 0).astype(float)
        t = np.tanh(z)
        return 1.0 - t * t

    def _forward(self, y0, x):
        y0_arr, x_arr, scalar = _as_batch(y0, x, self.d)
        h = np.concatenate([y0_arr[:, None], x_arr], axis=1)
        pre, post = [], [h]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = h @ w + b
            pre.append(z)
            h = self._act(z)
            post.append(h)
        out = h @ self.weights[-1] + self.biases[-1]
        return out[:, 0], pre, post, scalar

    def value(self, y0, x):
        out, _, _, scalar = self._forward(y0, x)
        return float(out[0]) if scalar else out

    def _backward(self, pre, post, out_grad):
        """Per-sample parameter grads for scalar outputs weighted by out_grad (m,)."""
        grads_w, grads_b = [None] * len(self.weights), [None] * len(self.weights)
        delta = out_grad[:, None]
        for layer in range(len(self.weights) - 1, -1, -1):
            grads_w[layer] = np.einsum("mi,mj->mij", post[layer], delta)
            grads_b[layer] = delta
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * self._act_grad(pre[layer - 1])
        return grads_w, grads_b

    def eval_and_grad(self, y0, x):
        """Return (value, flat parameter gradient); batched inputs give (m, P)."""
        out, pre, post, scalar = self._forward(y0, x)
        m = len(out)
        grads_w, grads_b = self._backward(pre, post, np.ones(m))
        flat = np.concatenate(
            [g.reshape(m, -1) for pair in zip(grads_w, grads_b) for g in pair], axis=1
        )
        if scalar:
            return float(out[0]), flat[0]
        return out, flat

    def grad_weighted(self, y0, x, weights) -> np.ndarray:
        """Mean of weights[i] * grad_i via one weighted backward pass."""
        out, pre, post, _ = self._forward(y0, x)
        m = len(out)
        w = np.asarray(weights, dtype=float) / m
        grads_w, grads_b = [None] * len(self.weights), [None] * len(self.weights)
        delta = w[:, None]
        for layer in range(len(self.weights) - 1, -1, -1):
            grads_w[layer] = post[layer].T @ delta
            grads_b[layer] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * self._act_grad(pre[layer - 1])
        return np.concatenate(
            [g.reshape(-1) for pair in zip(grads_w, grads_b) for g in pair]
        )

    def get_params(self) -> np.ndarray:
        return np.concatenate(
            [g.reshape(-1) for pair in zip(self.weights, self.biases) for g in pair]
        )

    def set_params(self, flat) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params:
            raise ConfigError("parameter vector length mismatch")
        pos = 0
        for i, (w_shape, b_shape) in enumerate(self._shapes):
            w_size = int(np.prod(w_shape))
            self.weights[i] = flat[pos : pos + w_size].reshape(w_shape).copy()
            pos += w_size
            b_size = int(np.prod(b_shape))
            self.biases[i] = flat[pos : pos + b_size].reshape(b_shape).copy()
            pos += b_size

    # theta-style aliases used by the optimizer
    @property
    def theta(self) -> np.ndarray:
        return self.get_params()

    def with_theta(self, flat) -> "MlpCqc":
        clone = MlpCqc(self.d, self.hidden, self.activation, self.seed,
                       layers=list(zip(self.weights, self.biases)))
        clone.set_params(flat)
        return clone


def project_ball(theta: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto the ball of the given radius."""
    if radius <= 0:
        raise ConfigError("projection radius must be positive")
    theta = np.asarray(theta, dtype=float)
    norm = np.linalg.norm(theta)
    if norm <= radius:
        return theta.copy()
    return theta * (radius / norm)


def model_to_json(model) -> str:
    """Serialise a comparator model to a JSON string with deterministic reload."""
    if isinstance(model, LinearCqc):
        payload = {"kind": "linear", "features": model.features.spec(), "theta": model.theta.tolist()}
    elif isinstance(model, MlpCqc):
        payload = {
            "kind": "mlp",
            "d": model.d,
            "hidden": list(model.hidden),
            "activation": model.activation,
            "seed": model.seed,
            "weights": [w.tolist() for w in model.weights],
            "biases": [b.tolist() for b in model.biases],
        }
    else:
        raise ConfigError(f"cannot serialise model of type {type(model).__name__}")
    return json.dumps(payload, indent=2)


def model_from_json(text: str):
    payload = json.loads(text)
    kind = payload.get("kind")
    if kind == "linear":
        fspec = payload["features"]
        if fspec["kind"] == "affine_shift_scale":
            features = AffineFeatures(fspec["d"], fspec.get("rho_bound"))
        elif fspec["kind"] == "random_fourier":
            features = RandomFourierFeatures(
                fspec["d"], fspec["num_features"], fspec["lengthscale"], fspec["seed"]
            )
        else:
            raise ConfigError(f"unknown feature kind {fspec['kind']!r}")
        return LinearCqc(features, np.array(payload["theta"]))
    if kind == "mlp":
        layers = [(np.array(w), np.array(b)) for w, b in zip(payload["weights"], payload["biases"])]
        return MlpCqc(payload["d"], payload["hidden"], payload["activation"], payload["seed"],
                      layers=layers)
    raise ConfigError(f"unknown model kind {kind!r}")
