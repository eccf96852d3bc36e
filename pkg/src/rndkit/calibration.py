"""Penalized calibration of the generative models to option prices.

The training objective is

    L(theta) = MSE_C + MSE_P + lambda * J(theta)

where the MSE terms average squared call and put errors separately and
J is the hinged static-arbitrage penalty evaluated on a synthetic
(maturity, strike) grid.  Gradients are exact reverse-mode through the
Monte Carlo payoffs, with the payoff hinge and the penalty indicator
sets treated as locally constant (piecewise-smooth convention).

The quantile model is special-cased twice: its location is eliminated
through the martingale constraint at every evaluation (so the gradient
carries a softmax correction term), and the arbitrage penalty is omitted
from its objective.  With the location pinned, the martingale term is
identically zero and, at a positive rate, the remaining calendar terms
are constants of the data rather than useful training signal; the fit
reduces to the data MSE alone.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .arbitrage import PenaltyReport, build_synthetic_grid, total_penalty
from .models import (
    RnDmlpParams,
    RnMlpParams,
    RnQParams,
    init_rndmlp,
    init_rnmlp,
    model_kind,
    rnq_mu_from_constraint,
)
from .nn import DenseNetwork, softplus, softplus_prime
from .numerics import logmeanexp
from .pricing import price_chain
from .sampling import draw_standard_normal

__all__ = [
    "CalibrationConfig",
    "CalibrationResult",
    "CalibrationDivergence",
    "AdamState",
    "adam_step",
    "mse",
    "relative_mse",
    "params_to_vector",
    "vector_to_params",
    "objective_and_gradient",
    "calibrate",
]

LOSS_KINDS = ("absolute-MSE", "relative-MSE")

CONVERGENCE_WINDOW = 100


@dataclass
class CalibrationConfig:
    learning_rate: float = 0.01
    iterations: int = 5000
    lam: float = 1.0
    n_samples: int = 1_000_000
    seed: int = 0
    loss_kind: str = "absolute-MSE"
    convergence_tol: float = 1e-10
    relative_mse_floor: float = 0.05

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.lam < 0.0:
            raise ValueError("lambda must be non-negative")
        if self.n_samples < 1:
            raise ValueError("need at least one sample")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


class CalibrationDivergence(RuntimeError):
    """Objective went non-finite; carries the iteration index."""

    def __init__(self, iteration: int, message: str):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass
class CalibrationResult:
    kind: str
    params: object
    loss_trajectory: np.ndarray
    penalty_trajectory: np.ndarray
    final_train_mse: float
    final_relative_mse: float
    n_excluded_relative: int
    final_penalty: PenaltyReport
    iterations_run: int
    converged: bool
    wall_time: float
    seed: int

    def to_jsonable(self) -> dict:
        return {
            "kind": self.kind,
            "params": params_to_jsonable(self.params),
            "loss_trajectory": [float(v) for v in self.loss_trajectory],
            "penalty_trajectory": [float(v) for v in self.penalty_trajectory],
            "final_train_mse": self.final_train_mse,
            "final_relative_mse": self.final_relative_mse,
            "n_excluded_relative": self.n_excluded_relative,
            "final_penalty": self.final_penalty.to_jsonable(),
            "iterations_run": self.iterations_run,
            "converged": self.converged,
            "wall_time": self.wall_time,
            "seed": self.seed,
        }


# ----------------------------------------------------------------------
# loss functions


def _split_sides(sides):
    sides = list(sides)
    calls = np.array([s == "call" for s in sides], dtype=bool)
    if not all(s in ("call", "put") for s in sides):
        raise ValueError("sides must be 'call' or 'put'")
    return calls


def mse(observed, fitted, sides) -> float:
    """Squared errors averaged per side, call and put averages summed."""
    observed = np.asarray(observed, dtype=float)
    fitted = np.asarray(fitted, dtype=float)
    if observed.size == 0 or observed.shape != fitted.shape:
        raise ValueError("observed and fitted must be equal-length and nonempty")
    calls = _split_sides(sides)
    if calls.size != observed.size:
        raise ValueError("sides length mismatch")
    err = (fitted - observed) ** 2
    total = 0.0
    for mask in (calls, ~calls):
        if np.any(mask):
            total += float(np.mean(err[mask]))
    return total


def relative_mse(observed, fitted, sides, floor: float = 0.05):
    """Mean squared relative error per side; returns (value, n_excluded).

    Observed prices below ``floor`` are excluded to keep the ratio loss
    away from near-zero denominators.
    """
    observed = np.asarray(observed, dtype=float)
    fitted = np.asarray(fitted, dtype=float)
    if observed.size == 0 or observed.shape != fitted.shape:
        raise ValueError("observed and fitted must be equal-length and nonempty")
    calls = _split_sides(sides)
    keep = observed >= floor
    n_excluded = int(np.sum(~keep))
    err = np.zeros_like(observed)
    err[keep] = (fitted[keep] / observed[keep] - 1.0) ** 2
    total = 0.0
    for mask in (calls & keep, ~calls & keep):
        if np.any(mask):
            total += float(np.mean(err[mask]))
    return total, n_excluded


# ----------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n))


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray, learning_rate: float) -> np.ndarray:
    """One bias-corrected Adam update; mutates ``state``, returns new params."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.m.shape or grad.shape != np.shape(params):
        raise ValueError("gradient shape does not match optimizer state")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    mhat = state.m / (1.0 - state.beta1 ** state.t)
    vhat = state.v / (1.0 - state.beta2 ** state.t)
    return params - learning_rate * mhat / (np.sqrt(vhat) + state.eps)


# ----------------------------------------------------------------------
# parameter flattening


def params_to_vector(model) -> np.ndarray:
    """Flat vector of the trainable parameters in a fixed documented order.

    rn-q: (sigma, u, v); rn-mlp: sigma | net_mu | net_z | net_tau;
    rn-dmlp: alpha | comp1 block | comp2 block.  The rn-q location mu is
    not trained (eliminated by the martingale constraint).
    """
    kind = model_kind(model)
    if kind == "rn-q":
        return np.array([model.sigma, model.u, model.v])
    if kind == "rn-mlp":
        return np.concatenate([
            [model.sigma],
            model.net_mu.to_vector(), model.net_z.to_vector(), model.net_tau.to_vector(),
        ])
    return np.concatenate([
        [model.alpha], params_to_vector(model.comp1), params_to_vector(model.comp2),
    ])


def vector_to_params(template, vec):
    """Rebuild a model like ``template`` from a flat trainable vector."""
    vec = np.asarray(vec, dtype=float)
    kind = model_kind(template)
    if kind == "rn-q":
        if vec.shape != (3,):
            raise ValueError("rn-q expects a length-3 vector")
        return RnQParams(mu=template.mu, sigma=float(vec[0]), u=float(vec[1]),
                         v=float(vec[2]), a_const=template.a_const)
    if kind == "rn-mlp":
        nets = []
        pos = 1
        for net in (template.net_mu, template.net_z, template.net_tau):
            n = net.n_params
            nets.append(DenseNetwork.from_vector(net.layer_dims, vec[pos:pos + n]))
            pos += n
        if pos != vec.size:
            raise ValueError("vector length does not match network geometry")
        return RnMlpParams(sigma=float(vec[0]), net_mu=nets[0], net_z=nets[1],
                           net_tau=nets[2])
    n1 = params_to_vector(template.comp1).size
    return RnDmlpParams(
        alpha=float(vec[0]),
        comp1=vector_to_params(template.comp1, vec[1:1 + n1]),
        comp2=vector_to_params(template.comp2, vec[1 + n1:]),
    )


def params_to_jsonable(model) -> dict:
    """JSON-ready dict holding the model kind and every parameter."""
    kind = model_kind(model)
    if kind == "rn-q":
        return {"kind": kind, "mu": model.mu, "sigma": model.sigma,
                "u": model.u, "v": model.v, "a_const": model.a_const}
    if kind == "rn-mlp":
        return {"kind": kind, "sigma": model.sigma,
                "net_mu": model.net_mu.to_jsonable(),
                "net_z": model.net_z.to_jsonable(),
                "net_tau": model.net_tau.to_jsonable()}
    return {"kind": kind, "alpha": model.alpha,
            "comp1": params_to_jsonable(model.comp1),
            "comp2": params_to_jsonable(model.comp2)}


def params_from_jsonable(doc: dict):
    kind = doc["kind"]
    if kind == "rn-q":
        return RnQParams(mu=float(doc["mu"]), sigma=float(doc["sigma"]),
                         u=float(doc["u"]), v=float(doc["v"]), a_const=float(doc["a_const"]))
    if kind == "rn-mlp":
        return RnMlpParams(sigma=float(doc["sigma"]),
                           net_mu=DenseNetwork.from_jsonable(doc["net_mu"]),
                           net_z=DenseNetwork.from_jsonable(doc["net_z"]),
                           net_tau=DenseNetwork.from_jsonable(doc["net_tau"]))
    if kind == "rn-dmlp":
        return RnDmlpParams(alpha=float(doc["alpha"]),
                            comp1=params_from_jsonable(doc["comp1"]),
                            comp2=params_from_jsonable(doc["comp2"]))
    raise ValueError(f"unknown model kind {kind!r}")


# ----------------------------------------------------------------------
# objective evaluation
#
# Everything below works on one shared draw of N normals.  Per maturity
# the growth factors are sorted once; option prices, penalty values and
# the per-sample adjoint weights all become cumulative-sum lookups, so
# the cost per iteration is O(N log N) plus one weighted backward pass
# per network, independent of the number of quotes and grid points.


class _TauTable:
    """Sorted growth factors at one maturity plus adjoint accumulators."""

    __slots__ = ("tau", "rate", "x", "growth", "slope", "order", "gs", "cum_g",
                 "cum_a", "coef_pen", "coef_data", "wx", "wd", "mean_growth")

    def __init__(self, tau, rate, x, growth, slope):
        self.tau = tau
        self.rate = rate
        self.x = x
        self.growth = growth
        self.slope = slope
        self.order = np.argsort(growth, kind="stable")
        self.gs = growth[self.order]
        self.cum_g = np.concatenate([[0.0], np.cumsum(self.gs)])
        if slope is not None:
            a = (slope - rate) * growth
            self.cum_a = np.concatenate([[0.0], np.cumsum(a[self.order])])
        n = growth.size
        self.coef_pen = np.zeros(n + 1)
        self.coef_data = np.zeros(n + 1)
        self.mean_growth = self.cum_g[-1] / n

    # range helpers; pos splits the sorted growth array

    def call_price_sum(self, moneyness):
        """sum of (growth - k)^+ and the strict-ITM split position."""
        n = self.gs.size
        pos = int(np.searchsorted(self.gs, moneyness, side="right"))
        return (self.cum_g[-1] - self.cum_g[pos]) - moneyness * (n - pos), pos

    def put_price_sum(self, moneyness):
        pos = int(np.searchsorted(self.gs, moneyness, side="left"))
        return moneyness * pos - self.cum_g[pos], pos

    def calendar_call(self, moneyness):
        """(1/N) sum_{growth >= k} [(slope - r) growth + r k], with position."""
        n = self.gs.size
        pos = int(np.searchsorted(self.gs, moneyness, side="left"))
        value = (self.cum_a[-1] - self.cum_a[pos]) + self.rate * moneyness * (n - pos)
        return value / n, pos

    def calendar_put(self, moneyness):
        n = self.gs.size
        pos = int(np.searchsorted(self.gs, moneyness, side="right"))
        value = -self.cum_a[pos] - self.rate * moneyness * pos
        return value / n, pos

    def add_suffix(self, which, pos, coeff):
        # weight applies to sorted indices >= pos
        target = self.coef_pen if which == "pen" else self.coef_data
        target[pos] += coeff

    def add_prefix(self, which, pos, coeff):
        # weight applies to sorted indices < pos; recorded as a negative
        # suffix starting at pos on top of a full-range term
        target = self.coef_pen if which == "pen" else self.coef_data
        target[0] += coeff
        target[pos] -= coeff

    def adjoint_weights(self):
        """Per-sample weights (wx on dX, wd on d slope) in draw order."""
        n = self.gs.size
        pen = np.cumsum(self.coef_pen[:n])
        data = np.cumsum(self.coef_data[:n])
        wd_sorted = pen * self.gs
        if self.slope is None:
            wx_sorted = data * self.gs
        else:
            a_sorted = (self.slope - self.rate)[self.order] * self.gs
            wx_sorted = pen * a_sorted + data * self.gs
        wx = np.empty(n)
        wd = np.empty(n)
        wx[self.order] = wx_sorted
        wd[self.order] = wd_sorted
        self.wx, self.wd = wx, wd
        return wx, wd


def _quote_groups(chain):
    groups = {}
    for q in chain.quotes:
        groups.setdefault(q.tau, []).append(q)
    return dict(sorted(groups.items()))


def _loss_weights(observed, fitted, sides_call, loss_kind, floor):
    """Per-option dL/dfitted for the configured loss, plus the loss value."""
    err = fitted - observed
    n_call = max(int(np.sum(sides_call)), 1)
    n_put = max(int(np.sum(~sides_call)), 1)
    per_side = np.where(sides_call, n_call, n_put).astype(float)
    if loss_kind == "absolute-MSE":
        loss = mse(observed, fitted, np.where(sides_call, "call", "put"))
        return loss, 2.0 * err / per_side, 0
    value, n_excluded = relative_mse(observed, fitted,
                                     np.where(sides_call, "call", "put"), floor)
    keep = observed >= floor
    grad = np.zeros_like(observed)
    kept_call = max(int(np.sum(sides_call & keep)), 1)
    kept_put = max(int(np.sum(~sides_call & keep)), 1)
    per_side_kept = np.where(sides_call, kept_call, kept_put).astype(float)
    ratio = np.zeros_like(observed)
    ratio[keep] = fitted[keep] / observed[keep] - 1.0
    grad[keep] = 2.0 * ratio[keep] / (observed[keep] * per_side_kept[keep])
    return value, grad, n_excluded


def _mlp_components(model):
    kind = model_kind(model)
    if kind == "rn-mlp":
        return [(1.0, model)]
    return [(model.alpha, model.comp1), (1.0 - model.alpha, model.comp2)]


def _forward_tables(model, taus, chain_rate, z):
    """X, growth and d/dtau tables per maturity, plus backward caches.

    Network values are computed through the cached scalar-batch path so
    one backward pass per network serves every maturity at once.
    """
    kind = model_kind(model)
    tables = {}
    caches = []
    tau_arr = np.asarray(taus, dtype=float)
    if kind == "rn-q":
        if tau_arr.size != 1:
            raise ValueError("the quantile model is single-maturity")
        tau = float(tau_arr[0])
        rate = chain_rate(tau)
        shape = (np.power(model.u, z) + np.power(model.v, -z)) / model.a_const + 1.0
        t = model.sigma * z * shape
        mu = rate * tau - logmeanexp(t)
        x = mu + t
        with np.errstate(over="ignore"):
            growth = np.exp(x)
        if not np.all(np.isfinite(growth)):
            raise FloatingPointError("model produced non-finite growth factors")
        tables[tau] = _TauTable(tau, rate, x, growth, None)
        return tables, {"t": t, "shape": shape, "mu": mu}

    for coef, comp in _mlp_components(model):
        gz, cache_z = comp.net_z.scalar_batch(z)
        gmu, gmu_s, cache_mu = comp.net_mu.scalar_batch(tau_arr, want_slope=True)
        gtau, gtau_s, cache_tau = comp.net_tau.scalar_batch(tau_arr, want_slope=True)
        caches.append({"coef": coef, "comp": comp, "gz": gz, "cache_z": cache_z,
                       "gmu": gmu, "gmu_s": gmu_s, "cache_mu": cache_mu,
                       "gtau": gtau, "gtau_s": gtau_s, "cache_tau": cache_tau})
    for i, tau in enumerate(tau_arr):
        tau = float(tau)
        rate = chain_rate(tau)
        root = np.sqrt(tau)
        x = np.zeros_like(z)
        slope = np.zeros_like(z)
        for c in caches:
            comp = c["comp"]
            band = c["gz"] + c["gtau"][i] + 1.0
            x += c["coef"] * (rate * tau * c["gmu"][i] + comp.sigma * root * z * band)
            slope += c["coef"] * (
                rate * c["gmu"][i] + rate * tau * c["gmu_s"][i]
                + comp.sigma * z * (band / (2.0 * root) + root * c["gtau_s"][i])
            )
        with np.errstate(over="ignore"):
            growth = np.exp(x)
        if not np.all(np.isfinite(growth)):
            raise FloatingPointError("model produced non-finite growth factors")
        tables[tau] = _TauTable(tau, rate, x, growth, slope)
    return tables, caches


def _rnq_gradient(model, table, aux, z):
    """Natural-space (sigma, u, v) gradient with the location eliminated.

    mu = r tau - logmeanexp(t) couples every sample, contributing a
    softmax-weighted mean-field term: dX_n = dt_n - sum_m rho_m dt_m.
    """
    wx, _ = table.adjoint_weights()
    rho = table.growth / (table.growth.size * table.mean_growth)
    w_eff = wx - np.sum(wx) * rho
    dt_sigma = z * aux["shape"]
    zz = model.sigma * z * z
    dt_u = zz * np.power(model.u, z - 1.0) / model.a_const
    dt_v = -zz * np.power(model.v, -z - 1.0) / model.a_const
    return np.array([
        float(np.dot(w_eff, dt_sigma)),
        float(np.dot(w_eff, dt_u)),
        float(np.dot(w_eff, dt_v)),
    ])


def _mlp_gradient(model, tables, caches, z):
    taus = sorted(tables)
    kind = model_kind(model)
    parts = []
    comp_proj = []  # sum over (tau, n) of wx dX_comp + wd dslope_comp
    for c in caches:
        coef, comp = c["coef"], c["comp"]
        wz = np.zeros_like(z)
        zg = z * c["gz"]
        wv_mu = np.zeros(len(taus))
        ws_mu = np.zeros(len(taus))
        wv_tau = np.zeros(len(taus))
        ws_tau = np.zeros(len(taus))
        d_sigma = 0.0
        proj = 0.0
        for i, tau in enumerate(taus):
            table = tables[tau]
            wx, wd = table.wx, table.wd
            rate, root = table.rate, np.sqrt(tau)
            wz += coef * comp.sigma * z * (root * wx + wd / (2.0 * root))
            sx = float(np.sum(wx))
            sd = float(np.sum(wd))
            sxz = float(np.dot(wx, z))
            sdz = float(np.dot(wd, z))
            sxzg = float(np.dot(wx, zg))
            sdzg = float(np.dot(wd, zg))
            base = c["gtau"][i] + 1.0
            wv_mu[i] = coef * rate * (tau * sx + sd)
            ws_mu[i] = coef * rate * tau * sd
            wv_tau[i] = coef * comp.sigma * (root * sxz + sdz / (2.0 * root))
            ws_tau[i] = coef * comp.sigma * root * sdz
            # adjoints against the scale direction z (G_Z + G_tau + 1)
            x_dir = root * (sxzg + base * sxz)
            s_dir = (sdzg + base * sdz) / (2.0 * root) + root * c["gtau_s"][i] * sdz
            d_sigma += coef * (x_dir + s_dir)
            # adjoints against the full component map (for d/dalpha)
            proj += rate * tau * c["gmu"][i] * sx \
                + rate * (c["gmu"][i] + tau * c["gmu_s"][i]) * sd \
                + comp.sigma * (x_dir + s_dir)
        comp_proj.append(proj)
        g_mu = comp.net_mu.weighted_value_slope_param_gradient(c["cache_mu"], wv_mu, ws_mu)
        g_z = comp.net_z.weighted_param_gradient(c["cache_z"], wz)
        g_tau = comp.net_tau.weighted_value_slope_param_gradient(c["cache_tau"], wv_tau, ws_tau)
        parts.append(np.concatenate([
            [d_sigma], g_mu.to_vector(), g_z.to_vector(), g_tau.to_vector(),
        ]))
    if kind == "rn-mlp":
        return np.concatenate(parts)
    d_alpha = comp_proj[0] - comp_proj[1]
    return np.concatenate([[d_alpha], parts[0], parts[1]])


def _objective_parts(model, chain, grid, config, samples):
    """Loss, natural-parameter gradient and diagnostic pieces."""
    z = samples.values
    n = z.size
    kind = model_kind(model)
    groups = _quote_groups(chain)
    market_taus = sorted(groups)
    use_penalty = kind != "rn-q" and config.lam > 0.0 and grid is not None
    if use_penalty:
        all_taus = sorted(set(market_taus) | {float(t) for t in grid.taus})
    else:
        all_taus = market_taus
    tables, caches = _forward_tables(model, all_taus, chain.rate, z)

    # pass 1: price every quote from the cumulative sums
    quotes = [q for tau in market_taus for q in groups[tau]]
    observed = np.array([q.mid for q in quotes])
    sides_call = np.array([q.side == "call" for q in quotes])
    fitted = np.empty(observed.size)
    positions = np.empty(observed.size, dtype=int)
    for j, q in enumerate(quotes):
        table = tables[q.tau]
        m = q.strike / chain.spot
        total, pos = table.call_price_sum(m) if q.side == "call" else table.put_price_sum(m)
        fitted[j] = np.exp(-table.rate * q.tau) * chain.spot * (total / n)
        positions[j] = pos

    # pass 2: per-side averaging over the whole chain fixes the weights
    data_loss, dl_dfit, n_excluded = _loss_weights(
        observed, fitted, sides_call, config.loss_kind, config.relative_mse_floor)
    for j, q in enumerate(quotes):
        table = tables[q.tau]
        c = dl_dfit[j] * np.exp(-table.rate * q.tau) * chain.spot / n
        if q.side == "call":
            table.add_suffix("data", positions[j], c)
        else:
            table.add_prefix("data", positions[j], -c)

    penalty = 0.0
    if use_penalty:
        lam_n = config.lam / n
        for tau in grid.taus:
            table = tables[float(tau)]
            for k in grid.strikes:
                m = float(k) / chain.spot
                jc, pos_c = table.calendar_call(m)
                if jc < 0.0:
                    penalty += -jc
                    table.add_suffix("pen", pos_c, -lam_n)
                jp, pos_p = table.calendar_put(m)
                if jp < 0.0:
                    penalty += -jp
                    table.add_prefix("pen", pos_p, lam_n)
            defect = np.log(table.mean_growth) - table.rate * float(tau)
            penalty += defect * defect
            table.add_suffix("data", 0,
                             config.lam * 2.0 * defect / (n * table.mean_growth))

    loss = data_loss + config.lam * penalty
    if not np.isfinite(loss):
        raise FloatingPointError("objective is not finite")

    if kind == "rn-q":
        grad = _rnq_gradient(model, tables[market_taus[0]], caches, z)
    else:
        for table in tables.values():
            table.adjoint_weights()
        grad = _mlp_gradient(model, tables, caches, z)
    return loss, grad, {"data_loss": data_loss, "penalty": penalty,
                        "n_excluded": n_excluded, "fitted": fitted}


def objective_and_gradient(model, train_chain, grid, config, samples):
    """Penalized loss and its exact gradient in the natural parameters.

    The gradient layout matches ``params_to_vector``.  Payoff hinges use
    the subgradient 1{.>0}; penalty indicator sets are held fixed.
    """
    if not train_chain.quotes:
        raise ValueError("empty chain")
    loss, grad, _ = _objective_parts(model, train_chain, grid, config, samples)
    return loss, grad


# ----------------------------------------------------------------------
# optimization loop


def _softplus_inverse(y: float) -> float:
    if y <= 0.0:
        raise ValueError("softplus inverse needs a positive value")
    return float(np.log(np.expm1(y)))


def _init_model(kind: str, seed: int, init_model=None):
    if init_model is not None:
        if model_kind(init_model) != kind:
            raise ValueError("init_model kind does not match model_kind")
        return init_model
    if kind == "rn-q":
        return RnQParams(mu=0.0, sigma=0.2, u=1.1, v=1.1)
    if kind == "rn-mlp":
        return init_rnmlp(seed)
    if kind == "rn-dmlp":
        return init_rndmlp(seed)
    raise ValueError(f"unknown model kind {kind!r}")


def _state_from_model(kind, model):
    nat = params_to_vector(model)
    if kind != "rn-q":
        return nat
    # unconstrained coordinates: sigma = softplus(s), u = 1 + softplus(b)
    return np.array([
        _softplus_inverse(nat[0]),
        _softplus_inverse(nat[1] - 1.0),
        _softplus_inverse(nat[2] - 1.0),
    ])


def _model_from_state(kind, template, state):
    if kind != "rn-q":
        return vector_to_params(template, state)
    nat = np.array([softplus(state[0]), 1.0 + softplus(state[1]), 1.0 + softplus(state[2])])
    return vector_to_params(template, nat)


def _chain_rule_to_state(kind, state, nat_grad):
    if kind != "rn-q":
        return nat_grad
    return nat_grad * softplus_prime(np.asarray(state))


def calibrate(kind: str, train_chain, config: CalibrationConfig,
              init_model=None, threads=None) -> CalibrationResult:
    """Fit a model of the given kind to the chain by full-batch Adam.

    The synthetic penalty grid comes from the chain's own maturities and
    strikes; samples are drawn once from config.seed.  Iterations stop at
    config.iterations or once the loss improves by less than
    convergence_tol over 100 consecutive iterations.  The loop never
    updates after the last evaluation, so the returned parameters
    reproduce the last trajectory entry exactly.
    """
    t0 = time.perf_counter()
    if not train_chain.quotes:
        raise ValueError("empty chain")
    if kind == "rn-q" and len({q.days_to_maturity for q in train_chain.quotes}) > 1:
        raise ValueError("the quantile model is single-maturity")
    model = _init_model(kind, config.seed, init_model)
    samples = draw_standard_normal(config.n_samples, config.seed)
    grid = build_synthetic_grid([q.tau for q in train_chain.quotes],
                                [q.strike for q in train_chain.quotes])

    state = _state_from_model(kind, model)
    adam = AdamState.zeros(state.size)
    trajectory = []
    penalties = []
    converged = False
    current = _model_from_state(kind, model, state)
    for it in range(config.iterations):
        try:
            loss, nat_grad, parts = _objective_parts(current, train_chain, grid, config, samples)
        except FloatingPointError as exc:
            raise CalibrationDivergence(it, str(exc)) from exc
        if not np.isfinite(loss):
            raise CalibrationDivergence(it, f"loss became {loss}")
        trajectory.append(loss)
        penalties.append(parts["penalty"])
        if it >= CONVERGENCE_WINDOW and \
                trajectory[it - CONVERGENCE_WINDOW] - loss < config.convergence_tol:
            converged = True
            break
        if it == config.iterations - 1:
            break
        grad = _chain_rule_to_state(kind, state, nat_grad)
        state = adam_step(adam, state, grad, config.learning_rate)
        current = _model_from_state(kind, model, state)

    final = current
    if kind == "rn-q":
        final = RnQParams(
            mu=rnq_mu_from_constraint(final.sigma, final.u, final.v, final.a_const,
                                      samples, train_chain.rate(train_chain.quotes[0].tau),
                                      train_chain.quotes[0].tau),
            sigma=final.sigma, u=final.u, v=final.v, a_const=final.a_const)

    # final metrics through the canonical pricing and penalty routes
    prices = price_chain(final, train_chain, samples, threads)
    observed = np.array([q.mid for q in train_chain.quotes])
    sides = [q.side for q in train_chain.quotes]
    final_mse = mse(observed, prices, sides)
    final_rel, n_excl = relative_mse(observed, prices, sides, config.relative_mse_floor)
    report = total_penalty(final, grid, train_chain.spot, train_chain.rate, samples, threads)

    return CalibrationResult(
        kind=kind,
        params=final,
        loss_trajectory=np.asarray(trajectory),
        penalty_trajectory=np.asarray(penalties),
        final_train_mse=float(final_mse),
        final_relative_mse=float(final_rel),
        n_excluded_relative=int(n_excl),
        final_penalty=report,
        iterations_run=len(trajectory),
        converged=converged,
        wall_time=time.perf_counter() - t0,
        seed=config.seed,
    )
