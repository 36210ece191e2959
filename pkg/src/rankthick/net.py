"""Small dense feed-forward classifiers with exact derivatives.

Everything downstream (explanations, thickness, attacks, training) consumes
the derivative operations defined here: analytic input gradients, closed-form
input Hessians for depth<=2 networks, finite-difference Hessian-vector
products, and weight gradients of losses and of scalar class outputs.

Derivative conventions:
  * relu / leaky_relu take the right derivative at the kink (slope 1 at 0);
    finite-difference checks must skip inputs with |preactivation| < 1e-6.
  * For a sigmoid head the two classes are 0 and 1 with probabilities
    (1 - p, p); gradients of class 0 are the negation of class 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

ACTIVATIONS = ("relu", "leaky_relu", "softplus")

CHECKPOINT_VERSION = 1

_DEFAULT_ACT_PARAM = {"relu": 0.0, "leaky_relu": 0.01, "softplus": 1.0}


class InvalidArchitectureError(ValueError):
    """Zero-width layer or malformed layer-dimension list."""


def _act(name, param, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "leaky_relu":
        return np.where(z >= 0.0, z, param * z)
    if name == "softplus":
        return np.logaddexp(0.0, param * z) / param
    raise ValueError(f"unknown activation {name!r}")


def _act_prime(name, param, z):
    if name == "relu":
        return np.where(z >= 0.0, 1.0, 0.0)
    if name == "leaky_relu":
        return np.where(z >= 0.0, 1.0, param)
    if name == "softplus":
        return expit(param * z)
    raise ValueError(f"unknown activation {name!r}")


def _act_second(name, param, z):
    if name in ("relu", "leaky_relu"):
        return np.zeros_like(z)
    if name == "softplus":
        s = expit(param * z)
        return param * s * (1.0 - s)
    raise ValueError(f"unknown activation {name!r}")


def _softmax(z):
    e = np.exp(z - np.max(z, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


@dataclass
class WeightGrad:
    """Per-layer (dW, db) arrays, shape-congruent with the owning Mlp."""

    layers: list

    @classmethod
    def zeros_like(cls, m: "Mlp") -> "WeightGrad":
        return cls([(np.zeros_like(w), np.zeros_like(b)) for w, b in m.weights])

    def add_(self, other: "WeightGrad", scale: float = 1.0) -> "WeightGrad":
        for (w, b), (ow, ob) in zip(self.layers, other.layers):
            w += scale * ow
            b += scale * ob
        return self

    def scaled(self, a: float) -> "WeightGrad":
        return WeightGrad([(a * w, a * b) for w, b in self.layers])

    def norm(self) -> float:
        return float(
            np.sqrt(sum(np.sum(w * w) + np.sum(b * b) for w, b in self.layers))
        )

    def max_abs(self) -> float:
        return max(
            max(np.max(np.abs(w)), np.max(np.abs(b))) for w, b in self.layers
        )


class Mlp:
    """Feed-forward classifier: dense layers, hidden activation, sigmoid or
    softmax head (sigmoid iff the final width is 1).

    Immutable during inference and attacks; training is the single writer.
    """

    def __init__(self, layer_dims, activation, activation_param, weights, seed):
        if len(layer_dims) < 2:
            raise InvalidArchitectureError("need at least input and output dims")
        if any(int(d) <= 0 for d in layer_dims):
            raise InvalidArchitectureError(f"zero-width layer in {layer_dims}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if activation == "softplus" and activation_param <= 0:
            raise ValueError("softplus rho must be > 0")
        if activation == "leaky_relu" and not (0.0 < activation_param < 1.0):
            raise ValueError("leaky slope must be in (0, 1)")
        for i, (w, b) in enumerate(weights):
            if w.shape != (layer_dims[i + 1], layer_dims[i]) or b.shape != (
                layer_dims[i + 1],
            ):
                raise InvalidArchitectureError(
                    f"layer {i} weight shapes inconsistent with {layer_dims}"
                )
        self.layer_dims = [int(d) for d in layer_dims]
        self.activation = activation
        self.activation_param = float(activation_param)
        self.weights = weights
        self.seed = int(seed)

    # -- structure ---------------------------------------------------------

    @property
    def n_inputs(self) -> int:
        return self.layer_dims[0]

    @property
    def head(self) -> str:
        return "sigmoid" if self.layer_dims[-1] == 1 else "softmax"

    @property
    def n_classes(self) -> int:
        return 2 if self.head == "sigmoid" else self.layer_dims[-1]

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def has_exact_hessian(self) -> bool:
        # Closed-form input Hessian implemented for <=2 weight layers only;
        # deeper nets fall back to finite-difference columns.
        return self.depth <= 2

    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in self.weights)

    def copy(self) -> "Mlp":
        return Mlp(
            list(self.layer_dims),
            self.activation,
            self.activation_param,
            [(w.copy(), b.copy()) for w, b in self.weights],
            self.seed,
        )

    def _check_input(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_inputs,):
            raise ValueError(f"expected input of shape ({self.n_inputs},), got {x.shape}")
        return x

    def _check_class(self, c):
        if not 0 <= int(c) < self.n_classes:
            raise ValueError(f"class index {c} out of range [0, {self.n_classes})")
        return int(c)

    # -- forward -----------------------------------------------------------

    def _forward_cache(self, X):
        """Pre-activations and activations per layer for a (B, n) batch."""
        zs, acts = [], [np.asarray(X, dtype=float)]
        a = acts[0]
        for i, (w, b) in enumerate(self.weights):
            z = a @ w.T + b
            zs.append(z)
            if i < self.depth - 1:
                a = _act(self.activation, self.activation_param, z)
                acts.append(a)
        if self.head == "sigmoid":
            probs = expit(zs[-1])
        else:
            probs = _softmax(zs[-1])
        return zs, acts, probs

    def forward(self, x) -> np.ndarray:
        """Head output: length-1 vector in (0,1) for sigmoid, else a softmax
        probability vector."""
        x = self._check_input(x)
        _, _, probs = self._forward_cache(x[None, :])
        return probs[0]

    def forward_batch(self, X) -> np.ndarray:
        _, _, probs = self._forward_cache(np.atleast_2d(X))
        return probs

    def prob_vector(self, x) -> np.ndarray:
        """Full class distribution; expands a sigmoid head to (1-p, p)."""
        out = self.forward(x)
        if self.head == "sigmoid":
            return np.array([1.0 - out[0], out[0]])
        return out

    def prob_matrix(self, X) -> np.ndarray:
        probs = self.forward_batch(X)
        if self.head == "sigmoid":
            return np.column_stack([1.0 - probs[:, 0], probs[:, 0]])
        return probs

    def predicted_class(self, x) -> int:
        return int(np.argmax(self.prob_vector(x)))

    def predicted_classes(self, X) -> np.ndarray:
        return np.argmax(self.prob_matrix(X), axis=1)

    # -- input derivatives ---------------------------------------------------

    def _head_grad(self, zs, probs, c, of):
        """d f_c / d z_last for one sample; returns a (C_head,) vector."""
        if self.head == "sigmoid":
            sign = 1.0 if c == 1 else -1.0
            if of == "logit":
                return np.array([sign])
            p = probs[0]
            return np.array([sign * p * (1.0 - p)])
        if of == "logit":
            e = np.zeros(self.layer_dims[-1])
            e[c] = 1.0
            return e
        p = probs
        e = np.zeros_like(p)
        e[c] = 1.0
        return p[c] * (e - p)

    def grad_input(self, x, c, of: str = "prob") -> np.ndarray:
        """Analytic gradient of f_c (or its logit) w.r.t. the input."""
        x = self._check_input(x)
        c = self._check_class(c)
        zs, _, probs = self._forward_cache(x[None, :])
        g = self._head_grad([z[0] for z in zs], probs[0], c, of)
        for i in range(self.depth - 1, 0, -1):
            g = self.weights[i][0].T @ g
            g = g * _act_prime(self.activation, self.activation_param, zs[i - 1][0])
        return self.weights[0][0].T @ g

    def grad_input_batch(self, X, classes, of: str = "prob") -> np.ndarray:
        """Row b holds grad_input(X[b], classes[b])."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        classes = np.broadcast_to(np.asarray(classes, dtype=int), (X.shape[0],))
        zs, _, probs = self._forward_cache(X)
        if self.head == "sigmoid":
            sign = np.where(classes == 1, 1.0, -1.0)
            if of == "logit":
                g = sign[:, None]
            else:
                p = probs[:, 0]
                g = (sign * p * (1.0 - p))[:, None]
        else:
            e = np.eye(self.layer_dims[-1])[classes]
            if of == "logit":
                g = e
            else:
                pc = probs[np.arange(len(classes)), classes]
                g = pc[:, None] * (e - probs)
        for i in range(self.depth - 1, 0, -1):
            g = g @ self.weights[i][0]
            g = g * _act_prime(self.activation, self.activation_param, zs[i - 1])
        return g @ self.weights[0][0]

    def _head_hessian(self, probs, c):
        """d^2 f_c / d z_last^2; (C_head, C_head)."""
        if self.head == "sigmoid":
            p = probs[0]
            sign = 1.0 if c == 1 else -1.0
            return np.array([[sign * p * (1.0 - p) * (1.0 - 2.0 * p)]])
        p = probs
        C = len(p)
        e = np.zeros(C)
        e[c] = 1.0
        d = e - p
        return p[c] * (np.outer(d, d) - (np.diag(p) - np.outer(p, p)))

    def hessian_input(self, x, c) -> np.ndarray:
        """Input Hessian of f_c: closed form for depth<=2, else symmetrized
        finite-difference columns (see has_exact_hessian)."""
        x = self._check_input(x)
        c = self._check_class(c)
        if not self.has_exact_hessian:
            return self._hessian_fd(x, c)
        zs, _, probs = self._forward_cache(x[None, :])
        hg = self._head_hessian(probs[0], c)
        w1 = self.weights[0][0]
        if self.depth == 1:
            return w1.T @ hg @ w1
        w2 = self.weights[1][0]
        z1 = zs[0][0]
        phi1 = _act_prime(self.activation, self.activation_param, z1)
        jac_z2 = w2 @ (phi1[:, None] * w1)
        u = w2.T @ self._head_grad([z[0] for z in zs], probs[0], c, "prob")
        psi = _act_second(self.activation, self.activation_param, z1) * u
        return jac_z2.T @ hg @ jac_z2 + w1.T @ (psi[:, None] * w1)

    def _hessian_fd(self, x, c, step: float = 1e-5) -> np.ndarray:
        n = self.n_inputs
        h = np.empty((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = 1.0
            gp = self.grad_input(x + step * e, c)
            gm = self.grad_input(x - step * e, c)
            h[:, j] = (gp - gm) / (2.0 * step)
        return 0.5 * (h + h.T)

    def hvp_fd(self, x, c, v, kappa) -> np.ndarray:
        return hvp_fd(self, self._check_input(x), c, v, kappa)

    # -- weight derivatives --------------------------------------------------

    def grad_weights(self, x, y, loss: str = "bce") -> WeightGrad:
        """Exact backprop gradient of the classification loss at one sample."""
        if loss != "bce":
            raise ValueError(f"unsupported loss {loss!r}")
        x = self._check_input(x)
        y = self._check_class(y)
        zs, acts, probs = self._forward_cache(x[None, :])
        if self.head == "sigmoid":
            delta = np.array([probs[0, 0] - float(y)])
        else:
            delta = probs[0].copy()
            delta[y] -= 1.0
        return self._backprop_single(zs, acts, delta)

    def output_weight_grad(self, x, c, of: str = "prob") -> WeightGrad:
        """Gradient of the scalar class output f_c w.r.t. the weights."""
        x = self._check_input(x)
        c = self._check_class(c)
        zs, acts, probs = self._forward_cache(x[None, :])
        delta = self._head_grad([z[0] for z in zs], probs[0], c, of)
        return self._backprop_single(zs, acts, delta)

    def _backprop_single(self, zs, acts, delta) -> WeightGrad:
        grads = [None] * self.depth
        g = delta
        for i in range(self.depth - 1, -1, -1):
            grads[i] = (np.outer(g, acts[i][0]), g.copy())
            if i > 0:
                g = self.weights[i][0].T @ g
                g = g * _act_prime(
                    self.activation, self.activation_param, zs[i - 1][0]
                )
        return WeightGrad(grads)

    def output_weight_grad_sum(self, points, coefs, classes, of="prob") -> WeightGrad:
        """WeightGrad of sum_b coefs[b] * f_{classes[b]}(points[b]) in one
        batched backward pass."""
        X = np.atleast_2d(np.asarray(points, dtype=float))
        coefs = np.asarray(coefs, dtype=float)
        classes = np.asarray(classes, dtype=int)
        zs, acts, probs = self._forward_cache(X)
        if self.head == "sigmoid":
            sign = np.where(classes == 1, 1.0, -1.0)
            if of == "logit":
                delta = sign[:, None]
            else:
                p = probs[:, 0]
                delta = (sign * p * (1.0 - p))[:, None]
        else:
            e = np.eye(self.layer_dims[-1])[classes]
            if of == "logit":
                delta = e
            else:
                pc = probs[np.arange(len(classes)), classes]
                delta = pc[:, None] * (e - probs)
        delta = delta * coefs[:, None]
        grads = [None] * self.depth
        g = delta
        for i in range(self.depth - 1, -1, -1):
            grads[i] = (g.T @ acts[i], g.sum(axis=0))
            if i > 0:
                g = g @ self.weights[i][0]
                g = g * _act_prime(self.activation, self.activation_param, zs[i - 1])
        return WeightGrad(grads)

    def grad_weights_batch_sum(self, X, Y) -> WeightGrad:
        """Sum over the batch of per-sample BCE/CE loss gradients."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.asarray(Y, dtype=int)
        zs, acts, probs = self._forward_cache(X)
        if self.head == "sigmoid":
            delta = (probs[:, 0] - Y.astype(float))[:, None]
        else:
            delta = probs.copy()
            delta[np.arange(len(Y)), Y] -= 1.0
        grads = [None] * self.depth
        g = delta
        for i in range(self.depth - 1, -1, -1):
            grads[i] = (g.T @ acts[i], g.sum(axis=0))
            if i > 0:
                g = g @ self.weights[i][0]
                g = g * _act_prime(self.activation, self.activation_param, zs[i - 1])
        return WeightGrad(grads)

    def directional_weight_grad(self, x, v, kappa, c) -> WeightGrad:
        """Weight gradient of the finite-difference directional derivative
        (f_c(x + kappa v) - f_c(x)) / kappa; estimates d/dw (grad_x f_c . v)."""
        x = self._check_input(x)
        v = np.asarray(v, dtype=float)
        if kappa <= 0:
            raise ValueError("kappa must be > 0")
        if abs(np.linalg.norm(v) - 1.0) > 1e-8:
            raise ValueError("v must be a unit vector")
        return self.output_weight_grad_sum(
            np.vstack([x + kappa * v, x]),
            np.array([1.0 / kappa, -1.0 / kappa]),
            np.array([c, c]),
        )

    def loss_value(self, X, Y) -> float:
        """Mean cross-entropy over a batch (numerically stable)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.asarray(Y, dtype=int)
        zs, _, _ = self._forward_cache(X)
        z = zs[-1]
        if self.head == "sigmoid":
            zz = z[:, 0]
            return float(np.mean(np.logaddexp(0.0, zz) - Y * zz))
        logp = z - np.logaddexp.reduce(z, axis=1, keepdims=True)
        return float(-np.mean(logp[np.arange(len(Y)), Y]))

    def apply_update(self, grad: WeightGrad, lr: float) -> None:
        for (w, b), (gw, gb) in zip(self.weights, grad.layers):
            w -= lr * gw
            b -= lr * gb


def mlp_new(layer_dims, activation="relu", seed=0, activation_param=None) -> Mlp:
    """Deterministic Glorot-uniform initialization; same seed gives
    bit-identical weights."""
    if activation_param is None:
        activation_param = _DEFAULT_ACT_PARAM.get(activation, 0.0)
    if len(layer_dims) < 2 or any(int(d) <= 0 for d in layer_dims):
        raise InvalidArchitectureError(f"invalid layer dims {layer_dims}")
    rng = np.random.default_rng(seed)
    weights = []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        b = np.zeros(fan_out)
        weights.append((w, b))
    return Mlp(list(layer_dims), activation, activation_param, weights, seed)


def hvp_fd(m, x, c, v, kappa) -> np.ndarray:
    """Forward-difference Hessian-vector product
    (grad f(x + kappa v) - grad f(x)) / kappa for a unit vector v.

    Works for any model exposing grad_input(x, c); exact for quadratic
    outputs regardless of kappa.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if kappa <= 0:
        raise ValueError("kappa must be > 0")
    if abs(np.linalg.norm(v) - 1.0) > 1e-8:
        raise ValueError("v must be a unit vector")
    return (m.grad_input(x + kappa * v, c) - m.grad_input(x, c)) / kappa


def spectral_norm(apply, dim, iters=200, tol=1e-10) -> float:
    """Largest |eigenvalue| of a symmetric operator via power iteration.

    `apply` is a square matrix or a callable v -> Av. Deterministic
    (fixed-seed) start vector; stops at `tol` relative change or `iters`
    sweeps, whichever first.
    """
    if dim <= 0:
        raise ValueError("dim must be positive")
    if not callable(apply):
        mat = np.asarray(apply, dtype=float)
        apply = lambda v: mat @ v  # noqa: E731
    rng = np.random.default_rng(1234567)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = apply(v)
        nrm = float(np.linalg.norm(w))
        if nrm == 0.0:
            return 0.0
        if abs(nrm - lam) <= tol * max(1.0, nrm):
            return nrm
        lam = nrm
        v = w / nrm
    return lam


# -- checkpoint I/O ----------------------------------------------------------


def save_checkpoint(m: Mlp, path) -> None:
    """Versioned JSON record; decimal float serialization round-trips
    bit-exactly."""
    record = {
        "version": CHECKPOINT_VERSION,
        "layer_dims": m.layer_dims,
        "activation": m.activation,
        "activation_param": m.activation_param,
        "weights": [
            {"w": w.tolist(), "b": b.tolist()} for w, b in m.weights
        ],
        "seed": m.seed,
    }
    with open(path, "w") as fh:
        json.dump(record, fh)


def load_checkpoint(path) -> Mlp:
    with open(path) as fh:
        record = json.load(fh)
    if record.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {record.get('version')}")
    weights = [
        (np.asarray(layer["w"], dtype=float), np.asarray(layer["b"], dtype=float))
        for layer in record["weights"]
    ]
    return Mlp(
        record["layer_dims"],
        record["activation"],
        record["activation_param"],
        weights,
        record["seed"],
    )
