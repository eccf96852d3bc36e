"""Generative log-return models for risk-neutral density extraction.

Three model families map shared standard-normal draws Z to log returns
X = ln(S_T / S_t):

* quantile model: X = mu + sigma * Z * (u^Z / a + v^-Z / a + 1), a single
  maturity, with mu pinned by the martingale constraint
  E[e^X] = e^(r tau) rather than trained;
* network model: X = r tau G_mu(tau) + sigma sqrt(tau) Z (G_Z(Z) + G_tau(tau) + 1)
  with three small softplus networks, X(., 0) = 0 exactly;
* mixture model: an affine combination alpha X_1 + (1 - alpha) X_2 of two
  network components sharing the same draws.

The additive structure keeps the maturity derivative of X analytic, which
the no-arbitrage penalties rely on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .nn import DenseNetwork, init_network
from .numerics import logmeanexp
from .sampling import NormalSampleSet

__all__ = [
    "RnQParams",
    "RnMlpParams",
    "RnDmlpParams",
    "rnq_log_return",
    "rnq_mu_from_constraint",
    "rnmlp_log_return",
    "rnmlp_dtau",
    "rndmlp_log_return",
    "rndmlp_dtau",
    "sample_log_returns",
    "dtau_log_returns",
    "init_rnmlp",
    "init_rndmlp",
    "zero_net_rnmlp",
    "model_kind",
    "CHECKPOINT_VERSION",
    "checkpoint_document",
    "checkpoint_json",
    "model_from_checkpoint",
    "save_checkpoint",
    "load_checkpoint",
]

DEFAULT_HIDDEN = (32, 32)


def _values(samples):
    if isinstance(samples, NormalSampleSet):
        return samples.values
    return np.asarray(samples, dtype=float)


# ----------------------------------------------------------------------
# quantile model


@dataclass
class RnQParams:
    """Location mu, scale sigma and the two tail-shape bases u, v >= 1."""

    mu: float
    sigma: float
    u: float
    v: float
    a_const: float = 4.0

    def __post_init__(self):
        if self.sigma < 0.0:
            raise ValueError("sigma must be non-negative")
        if self.u < 1.0 or self.v < 1.0:
            raise ValueError("u and v must be >= 1")
        if self.a_const <= 0.0:
            raise ValueError("a_const must be positive")


def _rnq_shape(p: RnQParams, z: np.ndarray) -> np.ndarray:
    return (np.power(p.u, z) + np.power(p.v, -z)) / p.a_const + 1.0


def rnq_log_return(p: RnQParams, z) -> np.ndarray:
    """X = mu + sigma * Z * (u^Z/a + v^-Z/a + 1), elementwise in Z."""
    z = np.asarray(z, dtype=float)
    return p.mu + p.sigma * z * _rnq_shape(p, z)


def rnq_mu_from_constraint(sigma, u, v, a_const, samples, rate, tau) -> float:
    """Location implied by the martingale constraint on the given draws.

    mu = r tau - ln( (1/N) sum_n exp(sigma Z_n (u^Z_n/a + v^-Z_n/a + 1)) ),
    evaluated with a log-sum-exp shift so large sigma stays finite.
    """
    z = _values(samples)
    shape = RnQParams(0.0, sigma, u, v, a_const)
    t = sigma * z * _rnq_shape(shape, z)
    mu = rate * tau - logmeanexp(t)
    if not np.isfinite(mu):
        raise FloatingPointError("martingale constraint produced a non-finite location")
    return float(mu)


# ----------------------------------------------------------------------
# network model


@dataclass
class RnMlpParams:
    sigma: float
    net_mu: DenseNetwork
    net_z: DenseNetwork
    net_tau: DenseNetwork

    def __post_init__(self):
        if self.sigma < 0.0:
            raise ValueError("sigma must be non-negative")
        for name in ("net_mu", "net_z", "net_tau"):
            net = getattr(self, name)
            if net.layer_dims[0] != 1 or net.layer_dims[-1] != 1:
                raise ValueError(f"{name} must map a scalar to a scalar")


def _tau_scalars(p: RnMlpParams, tau: float):
    """G_mu, G_mu', G_tau, G_tau' at one maturity."""
    t = np.asarray([tau], dtype=float)
    gmu, gmu_s, _ = p.net_mu.scalar_batch(t, want_slope=True)
    gtau, gtau_s, _ = p.net_tau.scalar_batch(t, want_slope=True)
    return float(gmu[0]), float(gmu_s[0]), float(gtau[0]), float(gtau_s[0])


def rnmlp_log_return(p: RnMlpParams, z, tau, rate) -> np.ndarray:
    """X(Z, tau); exactly zero at tau = 0."""
    z = np.asarray(z, dtype=float)
    if tau < 0.0:
        raise ValueError("tau must be non-negative")
    if tau == 0.0:
        return np.zeros_like(z)
    gmu = float(p.net_mu.forward(np.array([tau]))[0])
    gtau = float(p.net_tau.forward(np.array([tau]))[0])
    gz = p.net_z.forward_batch(z.reshape(-1, 1))[:, 0].reshape(z.shape)
    return rate * tau * gmu + p.sigma * np.sqrt(tau) * z * (gz + gtau + 1.0)


def rnmlp_dtau(p: RnMlpParams, z, tau, rate) -> np.ndarray:
    """Analytic dX/dtau at fixed Z:

    r G_mu + r tau G_mu' + sigma Z [ (G_Z + G_tau + 1) / (2 sqrt(tau))
                                     + sqrt(tau) G_tau' ].
    """
    z = np.asarray(z, dtype=float)
    if tau <= 0.0:
        raise ValueError("maturity derivative needs tau > 0")
    gmu, gmu_s, gtau, gtau_s = _tau_scalars(p, tau)
    gz = p.net_z.forward_batch(z.reshape(-1, 1))[:, 0].reshape(z.shape)
    root = np.sqrt(tau)
    return (
        rate * gmu
        + rate * tau * gmu_s
        + p.sigma * z * ((gz + gtau + 1.0) / (2.0 * root) + root * gtau_s)
    )


# ----------------------------------------------------------------------
# mixture model


@dataclass
class RnDmlpParams:
    alpha: float
    comp1: RnMlpParams
    comp2: RnMlpParams


def rndmlp_log_return(p: RnDmlpParams, z, tau, rate) -> np.ndarray:
    x1 = rnmlp_log_return(p.comp1, z, tau, rate)
    x2 = rnmlp_log_return(p.comp2, z, tau, rate)
    return p.alpha * x1 + (1.0 - p.alpha) * x2


def rndmlp_dtau(p: RnDmlpParams, z, tau, rate) -> np.ndarray:
    d1 = rnmlp_dtau(p.comp1, z, tau, rate)
    d2 = rnmlp_dtau(p.comp2, z, tau, rate)
    return p.alpha * d1 + (1.0 - p.alpha) * d2


# ----------------------------------------------------------------------
# dispatch helpers


def model_kind(model) -> str:
    if isinstance(model, RnQParams):
        return "rn-q"
    if isinstance(model, RnMlpParams):
        return "rn-mlp"
    if isinstance(model, RnDmlpParams):
        return "rn-dmlp"
    raise TypeError(f"not a model: {type(model)!r}")


def sample_log_returns(model, tau, samples, rate) -> np.ndarray:
    """Log-return vector on the shared draws at one maturity.

    tau = 0 returns the zero vector for every model kind (degenerate
    distribution at no elapsed time), so prices collapse to intrinsic.
    """
    z = _values(samples)
    if tau < 0.0:
        raise ValueError("tau must be non-negative")
    if tau == 0.0:
        return np.zeros_like(z)
    kind = model_kind(model)
    if kind == "rn-q":
        return rnq_log_return(model, z)
    if kind == "rn-mlp":
        return rnmlp_log_return(model, z, tau, rate)
    return rndmlp_log_return(model, z, tau, rate)


def dtau_log_returns(model, tau, samples, rate) -> np.ndarray:
    """dX/dtau on the shared draws.

    For the quantile model the location tracks the martingale constraint
    mu(tau) = r tau - const, so the derivative is the constant rate.
    """
    z = _values(samples)
    kind = model_kind(model)
    if kind == "rn-q":
        return np.full_like(z, float(rate))
    if kind == "rn-mlp":
        return rnmlp_dtau(model, z, tau, rate)
    return rndmlp_dtau(model, z, tau, rate)


# ----------------------------------------------------------------------
# constructors


def init_rnmlp(seed: int, sigma: float = 0.2, hidden=DEFAULT_HIDDEN) -> RnMlpParams:
    """Fresh network model with Glorot-initialized 1->hidden->1 networks."""
    dims = [1, *hidden, 1]
    children = np.random.SeedSequence(seed).spawn(3)
    return RnMlpParams(
        sigma=sigma,
        net_mu=init_network(dims, children[0]),
        net_z=init_network(dims, children[1]),
        net_tau=init_network(dims, children[2]),
    )


def init_rndmlp(seed: int, sigma: float = 0.2, alpha: float = 0.5, hidden=DEFAULT_HIDDEN) -> RnDmlpParams:
    """Fresh mixture model; the two components get independent draws."""
    c1, c2 = np.random.SeedSequence(seed).spawn(2)
    dims = [1, *hidden, 1]
    comps = []
    for child in (c1, c2):
        n1, n2, n3 = child.spawn(3)
        comps.append(
            RnMlpParams(
                sigma=sigma,
                net_mu=init_network(dims, n1),
                net_z=init_network(dims, n2),
                net_tau=init_network(dims, n3),
            )
        )
    return RnDmlpParams(alpha=alpha, comp1=comps[0], comp2=comps[1])


def zero_net_rnmlp(sigma: float = 0.2, hidden=DEFAULT_HIDDEN) -> RnMlpParams:
    """Network model with all-zero networks: X = sigma sqrt(tau) Z exactly.

    Useful as a driftless lognormal reference in tests and demos.
    """
    dims = [1, *hidden, 1]
    def zero_net():
        ws = [np.zeros((dims[l + 1], dims[l])) for l in range(len(dims) - 1)]
        bs = [np.zeros(dims[l + 1]) for l in range(len(dims) - 1)]
        return DenseNetwork(list(dims), ws, bs)
    return RnMlpParams(sigma=sigma, net_mu=zero_net(), net_z=zero_net(), net_tau=zero_net())


# ----------------------------------------------------------------------
# checkpoints
#
# Stdlib json always writes floats via repr, so a small emitter renders
# the document with every float as a decimal literal carrying 17
# significant digits (enough for an exact float64 round trip).

CHECKPOINT_VERSION = 1

_NET_NAMES = ("net_mu", "net_z", "net_tau")


def _float17(x) -> str:
    x = float(x)
    if x != x:
        return "NaN"
    if x == np.inf:
        return "Infinity"
    if x == -np.inf:
        return "-Infinity"
    text = "%.17g" % x
    if not any(ch in text for ch in ".eE"):
        text += ".0"
    return text


def _emit_json(obj, indent: int = 0) -> str:
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _float17(obj)
    if isinstance(obj, str) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_emit_json(v, indent) for v in obj) + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        pad = " " * (indent + 2)
        body = ",\n".join(
            pad + json.dumps(str(k)) + ": " + _emit_json(v, indent + 2)
            for k, v in sorted(obj.items())
        )
        return "{\n" + body + "\n" + " " * indent + "}"
    raise TypeError(f"cannot serialize {type(obj)!r} into a checkpoint")


def checkpoint_json(doc: dict) -> str:
    """Render a JSON document with floats at 17 significant digits."""
    return _emit_json(doc) + "\n"


def checkpoint_document(model) -> dict:
    """Checkpoint fields: format_version, model_type, scalars, networks."""
    kind = model_kind(model)
    if kind == "rn-q":
        scalars = {"mu": model.mu, "sigma": model.sigma, "u": model.u,
                   "v": model.v, "a_const": model.a_const}
        networks = {}
    elif kind == "rn-mlp":
        scalars = {"sigma": model.sigma}
        networks = {name: getattr(model, name).to_jsonable() for name in _NET_NAMES}
    else:
        scalars = {"alpha": model.alpha,
                   "comp1_sigma": model.comp1.sigma,
                   "comp2_sigma": model.comp2.sigma}
        networks = {}
        for tag, comp in (("comp1", model.comp1), ("comp2", model.comp2)):
            for name in _NET_NAMES:
                networks[f"{tag}_{name}"] = getattr(comp, name).to_jsonable()
    return {"format_version": CHECKPOINT_VERSION, "model_type": kind,
            "scalars": scalars, "networks": networks}


def model_from_checkpoint(doc: dict):
    """Rebuild a model from checkpoint fields; extra fields are ignored."""
    try:
        version = int(doc["format_version"])
        kind = doc["model_type"]
        scalars = doc["scalars"]
        networks = doc["networks"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed checkpoint: {exc}") from exc
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint format_version {version} is not readable "
                         f"by this build (expects {CHECKPOINT_VERSION})")
    if kind not in ("rn-q", "rn-mlp", "rn-dmlp"):
        raise ValueError(f"unsupported model type {kind!r}")
    try:
        if kind == "rn-q":
            return RnQParams(mu=float(scalars["mu"]), sigma=float(scalars["sigma"]),
                             u=float(scalars["u"]), v=float(scalars["v"]),
                             a_const=float(scalars["a_const"]))
        if kind == "rn-mlp":
            nets = {name: DenseNetwork.from_jsonable(networks[name])
                    for name in _NET_NAMES}
            return RnMlpParams(sigma=float(scalars["sigma"]), **nets)
        comps = []
        for tag in ("comp1", "comp2"):
            nets = {name: DenseNetwork.from_jsonable(networks[f"{tag}_{name}"])
                    for name in _NET_NAMES}
            comps.append(RnMlpParams(sigma=float(scalars[f"{tag}_sigma"]), **nets))
        return RnDmlpParams(alpha=float(scalars["alpha"]),
                            comp1=comps[0], comp2=comps[1])
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed checkpoint: {exc}") from exc


def save_checkpoint(model) -> bytes:
    """Serialize a model to checkpoint JSON bytes."""
    return checkpoint_json(checkpoint_document(model)).encode("utf-8")


def load_checkpoint(data) -> object:
    """Inverse of save_checkpoint; accepts bytes or str."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed checkpoint: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValueError("malformed checkpoint: top level is not an object")
    return model_from_checkpoint(doc)
