"""Small dense feed-forward networks in plain numpy.

Softplus hidden layers, linear output.  Besides forward evaluation the
module provides reverse-mode parameter gradients, the analytic input
derivative, and the parameter gradient of that input derivative; the
calibration objectives need all three.  Gradients are accumulated in a
fixed (layer, row, column) order so flattened vectors are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

__all__ = [
    "DenseNetwork",
    "ParamGradient",
    "init_network",
    "softplus",
    "softplus_prime",
    "softplus_double_prime",
]


def softplus(x):
    """ln(1 + e^x), overflow-safe: for large x this is x + ln(1 + e^-x)."""
    x = np.asarray(x, dtype=float)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return out if out.ndim else float(out)


def softplus_prime(x):
    """d/dx softplus = logistic sigmoid."""
    out = expit(np.asarray(x, dtype=float))
    return out if out.ndim else float(out)


def softplus_double_prime(x):
    s = expit(np.asarray(x, dtype=float))
    out = s * (1.0 - s)
    return out if out.ndim else float(out)


def _softplus_and_sigmoid(h):
    # softplus via the max form, then sigmoid = 1 - e^{-softplus}; this
    # shares the single exp, avoids divides, and keeps full relative
    # accuracy in both tails (expm1 is exact near zero).  In-place ops:
    # these arrays are the hot path of calibration.
    t = np.abs(h)
    np.negative(t, out=t)
    np.exp(t, out=t)
    np.log1p(t, out=t)
    sp = np.maximum(h, 0.0)
    sp += t
    sig = np.negative(sp)
    np.expm1(sig, out=sig)
    np.negative(sig, out=sig)
    return sp, sig


@dataclass
class ParamGradient:
    """Gradient with the same layout as the network parameters."""

    weights: list
    biases: list

    def to_vector(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(np.asarray(w, dtype=float).ravel())
            parts.append(np.asarray(b, dtype=float).ravel())
        return np.concatenate(parts)


class _BatchCache:
    """Forward-pass state reused by the weighted backward passes."""

    __slots__ = ("acts", "sigs", "tangents", "tangent_pre")

    def __init__(self, acts, sigs, tangents=None, tangent_pre=None):
        self.acts = acts
        self.sigs = sigs
        self.tangents = tangents
        self.tangent_pre = tangent_pre


@dataclass
class DenseNetwork:
    """Fully connected network; ``weights[l]`` has shape (dims[l+1], dims[l])."""

    layer_dims: list
    weights: list
    biases: list

    def __post_init__(self):
        dims = [int(d) for d in self.layer_dims]
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ValueError(f"bad layer_dims {self.layer_dims}")
        self.layer_dims = dims
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValueError("layer count mismatch")
        ws, bs = [], []
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = np.asarray(w, dtype=float)
            b = np.asarray(b, dtype=float)
            if w.shape != (dims[l + 1], dims[l]) or b.shape != (dims[l + 1],):
                raise ValueError(f"layer {l} shape mismatch: {w.shape}, {b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {l} has non-finite parameters")
            ws.append(w)
            bs.append(b)
        self.weights = ws
        self.biases = bs

    # ------------------------------------------------------------------
    # basic evaluation

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def forward(self, x) -> np.ndarray:
        """Evaluate at a single input vector of shape (dims[0],)."""
        a = np.asarray(x, dtype=float).reshape(1, self.layer_dims[0])
        return self.forward_batch(a)[0]

    def forward_batch(self, x) -> np.ndarray:
        """Evaluate at a batch of inputs, shape (m, dims[0]) -> (m, dims[-1])."""
        a = np.asarray(x, dtype=float)
        last = self.n_layers - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ w.T + b
            if l < last:
                a = softplus(a)
        return a

    # ------------------------------------------------------------------
    # scalar-input / scalar-output batch machinery

    def _check_scalar(self):
        if self.layer_dims[0] != 1 or self.layer_dims[-1] != 1:
            raise ValueError("scalar batch path needs a 1 -> ... -> 1 network")

    def scalar_batch(self, x, want_slope: bool = False):
        """Evaluate a 1 -> ... -> 1 net at an array of scalar inputs.

        Returns (values, cache) or (values, slopes, cache); the cache feeds
        the weighted backward passes below.
        """
        self._check_scalar()
        x = np.asarray(x, dtype=float).reshape(-1, 1)
        last = self.n_layers - 1
        acts = [x]
        sigs = []
        tangents = [np.ones_like(x)] if want_slope else None
        tangent_pre = [] if want_slope else None
        a = x
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = a @ w.T
            h += b
            if want_slope:
                u = tangents[-1] @ w.T
            if l < last:
                a, sig = _softplus_and_sigmoid(h)
                sigs.append(sig)
                if want_slope:
                    tangent_pre.append(u)
                    tangents.append(sig * u)
            else:
                a = h
                if want_slope:
                    tangent_pre.append(u)
                    tangents.append(u)
            acts.append(a)
        cache = _BatchCache(acts, sigs, tangents, tangent_pre)
        values = acts[-1][:, 0]
        if want_slope:
            return values, tangents[-1][:, 0], cache
        return values, cache

    def weighted_param_gradient(self, cache: _BatchCache, w_value) -> ParamGradient:
        """Gradient of sum_i w_i * y_i with respect to all parameters."""
        delta = np.asarray(w_value, dtype=float).reshape(-1, 1)
        g_w = [None] * self.n_layers
        g_b = [None] * self.n_layers
        for l in range(self.n_layers - 1, -1, -1):
            g_w[l] = delta.T @ cache.acts[l]
            g_b[l] = delta.sum(axis=0)
            if l > 0:
                delta = delta @ self.weights[l]
                delta *= cache.sigs[l - 1]
        return ParamGradient(g_w, g_b)

    def weighted_value_slope_param_gradient(self, cache: _BatchCache, w_value, w_slope) -> ParamGradient:
        """Gradient of sum_i (wv_i * y_i + ws_i * y'_i) w.r.t. parameters.

        y' is the derivative of the network output in its scalar input; the
        cache must come from scalar_batch(..., want_slope=True).
        """
        if cache.tangents is None:
            raise ValueError("cache was built without slopes")
        abar = np.asarray(w_value, dtype=float).reshape(-1, 1)
        tbar = np.asarray(w_slope, dtype=float).reshape(-1, 1)
        g_w = [None] * self.n_layers
        g_b = [None] * self.n_layers
        for l in range(self.n_layers - 1, -1, -1):
            if l == self.n_layers - 1:
                hbar = abar
                ubar = tbar
            else:
                sig = cache.sigs[l]
                spp = sig * (1.0 - sig)
                hbar = abar * sig + tbar * spp * cache.tangent_pre[l]
                ubar = tbar * sig
            g_w[l] = hbar.T @ cache.acts[l] + ubar.T @ cache.tangents[l]
            g_b[l] = hbar.sum(axis=0)
            if l > 0:
                abar = hbar @ self.weights[l]
                tbar = ubar @ self.weights[l]
        return ParamGradient(g_w, g_b)

    # ------------------------------------------------------------------
    # single-point API

    def backward_params(self, x, upstream) -> ParamGradient:
        """Gradient of upstream . y(x) in all parameters at one input."""
        a = np.asarray(x, dtype=float).reshape(1, self.layer_dims[0])
        upstream = np.asarray(upstream, dtype=float).reshape(1, self.layer_dims[-1])
        last = self.n_layers - 1
        acts = [a]
        sigs = []
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = acts[-1] @ w.T + b
            if l < last:
                sp, sig = _softplus_and_sigmoid(h)
                sigs.append(sig)
                acts.append(sp)
            else:
                acts.append(h)
        cache = _BatchCache(acts, sigs)
        delta = upstream
        g_w = [None] * self.n_layers
        g_b = [None] * self.n_layers
        for l in range(self.n_layers - 1, -1, -1):
            g_w[l] = delta.T @ cache.acts[l]
            g_b[l] = delta[0].copy()
            if l > 0:
                delta = (delta @ self.weights[l]) * cache.sigs[l - 1]
        return ParamGradient(g_w, g_b)

    def input_gradient(self, x) -> np.ndarray:
        """Jacobian dy/dx at a single input, shape (dims[-1], dims[0])."""
        a = np.asarray(x, dtype=float).reshape(1, self.layer_dims[0])
        last = self.n_layers - 1
        jac = None
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = a @ w.T + b
            jac = w if jac is None else w @ jac
            if l < last:
                sp, sig = _softplus_and_sigmoid(h)
                a = sp
                jac = sig[0][:, None] * jac
        return jac

    # ------------------------------------------------------------------
    # flat vector and serialization helpers

    def to_vector(self) -> np.ndarray:
        return ParamGradient(self.weights, self.biases).to_vector()

    @classmethod
    def from_vector(cls, layer_dims, vec) -> "DenseNetwork":
        vec = np.asarray(vec, dtype=float)
        dims = [int(d) for d in layer_dims]
        ws, bs, pos = [], [], 0
        for l in range(len(dims) - 1):
            n_w = dims[l + 1] * dims[l]
            ws.append(vec[pos:pos + n_w].reshape(dims[l + 1], dims[l]))
            pos += n_w
            bs.append(vec[pos:pos + dims[l + 1]].copy())
            pos += dims[l + 1]
        if pos != vec.size:
            raise ValueError(f"vector length {vec.size} does not match dims {dims}")
        return cls(dims, ws, bs)

    def to_jsonable(self) -> dict:
        return {
            "layer_dims": list(self.layer_dims),
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_jsonable(cls, doc: dict) -> "DenseNetwork":
        dims = [int(d) for d in doc["layer_dims"]]
        ws = [
            np.asarray(flat, dtype=float).reshape(dims[l + 1], dims[l])
            for l, flat in enumerate(doc["weights"])
        ]
        bs = [np.asarray(b, dtype=float) for b in doc["biases"]]
        return cls(dims, ws, bs)


def init_network(layer_dims, seed: int) -> DenseNetwork:
    """Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases.

    Uses a counter-based generator so the same seed gives the same
    parameters on every platform.
    """
    dims = [int(d) for d in layer_dims]
    rng = np.random.Generator(np.random.Philox(seed))
    ws, bs = [], []
    for l in range(len(dims) - 1):
        fan_in, fan_out = dims[l], dims[l + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    return DenseNetwork(dims, ws, bs)
