"""Heston ground truth for the simulation study.

Three ingredients, deliberately independent of the generative models:
a branch-stable characteristic function with a damped-Fourier pricer, a
full-truncation Euler Monte Carlo oracle, and the implied density /
cumulants used as the "true" answers when scoring calibrated models.

The dynamics are

    dS = r S dt + sqrt(nu) S dW_S
    dnu = kappa (vartheta - nu) dt + xi sqrt(nu) dW_nu,   d<W_S, W_nu> = rho dt
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_io import OptionChain, OptionQuote
from .density import DensityEstimate
from .numerics import kahan_sum, parallel_map

__all__ = [
    "HestonParams",
    "SCENARIOS",
    "heston_cf",
    "heston_price",
    "heston_call_prices",
    "heston_mc_price",
    "mc_terminal_log_returns",
    "density_from_calls",
    "heston_rnd",
    "heston_true_moments",
    "generate_simulated_chain",
]

MC_CHUNK = 131_072

DAMPING_ALPHA = 1.5

_PANEL_WIDTH = 20.0
_NODES, _WEIGHTS = np.polynomial.legendre.leggauss(64)
_MAX_PANELS = 400
_TAIL_TOL = 1e-10


@dataclass
class HestonParams:
    nu0: float
    vartheta: float
    kappa: float
    xi: float
    rho: float

    def __post_init__(self):
        if self.nu0 <= 0.0 or self.vartheta <= 0.0 or self.kappa <= 0.0 or self.xi <= 0.0:
            raise ValueError("nu0, vartheta, kappa, xi must all be positive")
        if not -1.0 < self.rho < 1.0:
            raise ValueError("rho must lie strictly inside (-1, 1)")

    @property
    def feller_satisfied(self) -> bool:
        return 2.0 * self.kappa * self.vartheta >= self.xi * self.xi


_BASE = dict(nu0=0.05, vartheta=0.25, kappa=0.15)

# scenario name -> (params, days to maturity)
SCENARIOS = {
    "left-skew": (HestonParams(**_BASE, xi=0.35, rho=-0.9), 91),
    "likely-normal": (HestonParams(**_BASE, xi=0.25, rho=-0.2), 91),
    "right-skew": (HestonParams(**_BASE, xi=0.2, rho=0.85), 91),
    "long-maturity": (HestonParams(**_BASE, xi=0.35, rho=-0.9), 730),
}


# ----------------------------------------------------------------------
# characteristic function


def _log1p_complex(w):
    """Principal log(1+w), accurate for small |w| (numpy log1p is real-only)."""
    w = np.asarray(w, dtype=complex)
    out = np.empty_like(w)
    small = np.abs(w) < 1e-4
    ws = w[small]
    out[small] = ws * (1.0 - ws / 2.0 + ws * ws / 3.0 - ws * ws * ws / 4.0)
    out[~small] = np.log(1.0 + w[~small])
    return out


def _log_cf(p: HestonParams, u, tau, spot, rate):
    """ln E[e^{iu ln S_T}] in a branch-stable little-trap formulation.

    The two Riccati roots beta +/- d multiply to -xi^2 q exactly, so the
    smaller one (which suffers cancellation when computed by subtraction)
    is recovered from the product instead.  The log term goes through a
    series-backed log1p so nothing degrades as xi -> 0, and the points
    with q = iu + u^2 = 0 (u = 0 and u = -i, where the CF is pinned by
    normalization and the martingale property) are evaluated exactly.
    """
    u = np.asarray(u, dtype=complex)
    iu = 1j * u
    q = iu + u * u
    xi2 = p.xi * p.xi
    beta = p.kappa - p.rho * p.xi * iu
    d = np.sqrt(beta * beta + xi2 * q)
    martingale = iu * (np.log(spot) + rate * tau)
    with np.errstate(divide="ignore", invalid="ignore"):
        bp_raw = beta + d
        bm_raw = beta - d
        prod = -xi2 * q
        keep_p = np.abs(bp_raw) >= np.abs(bm_raw)
        bp = np.where(keep_p, bp_raw, prod / bm_raw)
        bm = np.where(keep_p, prod / bp_raw, bm_raw)
        edt = np.exp(-d * tau)
        one_m_edt = 1.0 - edt
        # D multiplies nu0; C aggregates the vartheta part
        dd = -q * one_m_edt / (bp - bm * edt)
        w = bm * one_m_edt / (2.0 * d)
        cc = p.kappa * p.vartheta * (-tau * q / bp - 2.0 * _log1p_complex(w) / xi2)
        out = martingale + cc + dd * p.nu0
        out = np.where(q == 0.0, martingale, out)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("characteristic function overflowed")
    return out


def heston_cf(p: HestonParams, u, tau, spot, rate):
    """E[e^{iu ln S_T}]; u may be complex (scalar or array)."""
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    if spot <= 0.0:
        raise ValueError("spot must be positive")
    scalar = np.isscalar(u) or getattr(u, "ndim", 0) == 0
    out = np.exp(_log_cf(p, u, tau, spot, rate))
    return complex(out[()]) if scalar else out


# ----------------------------------------------------------------------
# Fourier pricing


def _damped_cf_table(p, spot, tau, rate, alpha=DAMPING_ALPHA):
    """Quadrature nodes, weights and damped-CF values shared by all strikes.

    The damped transform of the call in log-strike k is

        psi(u) = e^{-r tau} cf(u - (alpha+1)i) / (alpha^2 + alpha - u^2 + i(2 alpha + 1) u)

    and C(K) = e^{-alpha k}/pi * Int_0^inf Re[e^{-iuk} psi(u)] du.  Panels of
    fixed Gauss-Legendre rule are appended until the integrand's l1 tail
    bound drops below 1e-10.
    """
    disc = np.exp(-rate * tau)
    nodes_all, weights_all, psi_all = [], [], []
    prev_l1 = None
    for panel in range(_MAX_PANELS):
        lo = panel * _PANEL_WIDTH
        u = lo + (_NODES + 1.0) * (_PANEL_WIDTH / 2.0)
        w = _WEIGHTS * (_PANEL_WIDTH / 2.0)
        cf = np.exp(_log_cf(p, u - (alpha + 1.0) * 1j, tau, spot, rate))
        denom = alpha * alpha + alpha - u * u + 1j * (2.0 * alpha + 1.0) * u
        psi = disc * cf / denom
        nodes_all.append(u)
        weights_all.append(w)
        psi_all.append(psi)
        l1 = float(np.sum(w * np.abs(psi)))
        if prev_l1 is not None and l1 < prev_l1:
            ratio = l1 / prev_l1
            tail = l1 * ratio / (1.0 - ratio)
            if tail < _TAIL_TOL and l1 < _TAIL_TOL:
                return (np.concatenate(nodes_all), np.concatenate(weights_all),
                        np.concatenate(psi_all))
        prev_l1 = l1
    raise RuntimeError("Fourier quadrature did not converge; CF tail decays too slowly")


def heston_call_prices(p, spot, strikes, tau, rate) -> np.ndarray:
    """Call prices at many strikes from one shared CF evaluation."""
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    strikes = np.asarray(strikes, dtype=float)
    if np.any(strikes < 0.0):
        raise ValueError("strikes must be non-negative")
    out = np.empty(strikes.shape)
    zero = strikes == 0.0
    if np.any(zero):
        disc = np.exp(-rate * tau)
        out[zero] = disc * np.exp(_log_cf(p, np.array(-1j), tau, spot, rate)).real
    pos = ~zero
    if np.any(pos):
        u, w, psi = _damped_cf_table(p, spot, tau, rate)
        k = np.log(strikes[pos])
        phase = np.exp(-1j * np.outer(k, u))
        integral = (phase * (w * psi)).real.sum(axis=1)
        out[pos] = np.exp(-DAMPING_ALPHA * k) / np.pi * integral
    return out


def heston_price(p, side, spot, strike, tau, rate) -> float:
    """Semi-analytic European price; puts via parity."""
    if side not in ("call", "put"):
        raise ValueError("side must be 'call' or 'put'")
    if tau == 0.0:
        intrinsic = spot - strike if side == "call" else strike - spot
        return max(float(intrinsic), 0.0)
    call = float(heston_call_prices(p, spot, np.array([strike]), tau, rate)[0])
    if side == "call":
        return call
    return call - spot + strike * float(np.exp(-rate * tau))


# ----------------------------------------------------------------------
# Euler Monte Carlo oracle


def _chunk_bounds(paths: int):
    starts = range(0, paths, MC_CHUNK)
    return [(i, min(MC_CHUNK, paths - s)) for i, s in enumerate(starts)]


def mc_terminal_log_returns(p, tau, rate, paths, steps, seed, threads=None) -> np.ndarray:
    """ln(S_T/S_0) samples from full-truncation Euler, fixed chunk streams.

    Chunks of 131072 paths each get their own counter-based stream keyed by
    (seed, chunk), so the result is independent of thread count and any
    prefix of chunks is reproducible.
    """
    if paths < 1 or steps < 1:
        raise ValueError("paths and steps must be >= 1")
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    dt = tau / steps
    drift = rate * dt
    sq_rho = np.sqrt(1.0 - p.rho * p.rho)

    def run_chunk(spec):
        chunk_index, n = spec
        rng = np.random.Generator(np.random.Philox(key=np.array([seed, chunk_index], dtype=np.uint64)))
        x = np.zeros(n)
        v = np.full(n, p.nu0)
        for _ in range(steps):
            z = rng.standard_normal((2, n))
            vplus = np.maximum(v, 0.0)
            shock = np.sqrt(vplus * dt)
            x += drift - 0.5 * vplus * dt + shock * z[0]
            v += p.kappa * (p.vartheta - vplus) * dt + p.xi * shock * (p.rho * z[0] + sq_rho * z[1])
        return x

    parts = parallel_map(run_chunk, _chunk_bounds(paths), threads)
    return np.concatenate(parts)


def heston_mc_price(p, side, spot, strike, tau, rate, paths, steps, seed, threads=None):
    """(price, stderr) for one option, or arrays when strike is array-like."""
    if side not in ("call", "put"):
        raise ValueError("side must be 'call' or 'put'")
    strikes = np.asarray(strike, dtype=float)
    growth = np.exp(mc_terminal_log_returns(p, tau, rate, paths, steps, seed, threads))
    disc_spot = np.exp(-rate * tau) * spot
    n = growth.size

    def one(k):
        m = k / spot
        payoff = np.maximum(growth - m, 0.0) if side == "call" else np.maximum(m - growth, 0.0)
        mean = kahan_sum(payoff) / n
        second = kahan_sum(payoff * payoff) / n
        var = max(second - mean * mean, 0.0)
        return disc_spot * mean, disc_spot * np.sqrt(var / n)

    if strikes.ndim == 0:
        return one(float(strikes))
    pairs = [one(float(k)) for k in strikes]
    return np.array([a for a, _ in pairs]), np.array([b for _, b in pairs])


# ----------------------------------------------------------------------
# implied density and true moments


def density_from_calls(call_prices, strikes, tau, rate) -> DensityEstimate:
    """Breeden-Litzenberger: f(K) = e^{r tau} d2C/dK2 on the interior grid."""
    strikes = np.asarray(strikes, dtype=float)
    call_prices = np.asarray(call_prices, dtype=float)
    if strikes.size < 3:
        raise ValueError("need at least three strikes")
    left = np.diff(call_prices[:-1]) / np.diff(strikes[:-1])
    right = np.diff(call_prices[1:]) / np.diff(strikes[1:])
    second = 2.0 * (right - left) / (strikes[2:] - strikes[:-2])
    values = np.exp(rate * tau) * second
    clipped = np.clip(values, 0.0, None)
    negative_mass = float(np.trapezoid(np.minimum(values, 0.0), strikes[1:-1]))
    if -negative_mass > 1e-4:
        raise ValueError(
            f"strike grid too coarse for a clean density (clipped mass {-negative_mass:.2e})"
        )
    return DensityEstimate(grid=strikes[1:-1], values=clipped, variable_kind="terminal-price")


def heston_rnd(p, spot, tau, rate, strike_grid) -> DensityEstimate:
    """True terminal-price density implied by the CF pricer."""
    strike_grid = np.asarray(strike_grid, dtype=float)
    if np.any(np.diff(strike_grid) <= 0.0):
        raise ValueError("strike grid must be strictly increasing")
    calls = heston_call_prices(p, spot, strike_grid, tau, rate)
    return density_from_calls(calls, strike_grid, tau, rate)


def heston_true_moments(p, spot, tau, rate):
    """(variance, skewness, kurtosis) of ln S_T from high-precision cumulants.

    Central differences of the log-CF at u=0 with step 1e-4 need ~25
    significant digits for the fourth cumulant, far beyond float64, so the
    stencil is evaluated in 50-digit arithmetic and Richardson extrapolated.
    """
    import mpmath as mp

    if tau <= 0.0:
        raise ValueError("tau must be positive")

    with mp.workdps(50):
        kappa, vartheta, xi, rho, nu0 = (
            mp.mpf(repr(float(v))) for v in (p.kappa, p.vartheta, p.xi, p.rho, p.nu0)
        )
        lns_rt = (mp.log(mp.mpf(repr(float(spot))))
                  + mp.mpf(repr(float(rate))) * mp.mpf(repr(float(tau))))
        tau_mp = mp.mpf(repr(float(tau)))

        def log_cf(u):
            iu = 1j * u
            quad_term = iu + u * u
            beta = kappa - rho * xi * iu
            d = mp.sqrt(beta * beta + xi * xi * quad_term)
            g = (beta - d) / (beta + d)
            edt = mp.e**(-d * tau_mp)
            dd = (beta - d) / (xi * xi) * (1 - edt) / (1 - g * edt)
            cc = kappa * vartheta / (xi * xi) * (
                (beta - d) * tau_mp - 2 * mp.log((1 - g * edt) / (1 - g))
            )
            return iu * lns_rt + cc + dd * nu0

        def stencil(h):
            f1, f2, fm1, fm2 = log_cf(h), log_cf(2 * h), log_cf(-h), log_cf(-2 * h)
            # log_cf(0) == 0, so the center term drops out of d2 and d4
            d2 = (f1 + fm1) / h**2
            d3 = (f2 - 2 * f1 + 2 * fm1 - fm2) / (2 * h**3)
            d4 = (f2 - 4 * f1 - 4 * fm1 + fm2) / h**4
            return d2, d3, d4

        h = mp.mpf("1e-4")
        coarse = stencil(h)
        fine = stencil(h / 2)
        rich = [(4 * f - c) / 3 for c, f in zip(coarse, fine)]
        k2 = -mp.re(rich[0])
        if k2 <= 0:
            raise FloatingPointError("non-positive variance cumulant")
        # stabilization is judged on the standardized moments, where it
        # matters: skew and kurtosis each to 1e-6 absolute
        tol = mp.mpf("1e-6")
        scales = (k2, k2**mp.mpf("1.5"), k2 * k2)
        for r, f, s in zip(rich, fine, scales):
            if abs(r - f) / s > tol:
                raise FloatingPointError("cumulant differencing did not stabilize")
        skew = float(-mp.im(rich[1]) / k2**mp.mpf("1.5"))
        kurt = float(mp.re(rich[2]) / (k2 * k2)) + 3.0
        k2 = float(k2)
    return k2, skew, kurt


# ----------------------------------------------------------------------
# simulated chains


def generate_simulated_chain(scenario="left-skew", params=None, spot=1000.0,
                             rate=0.04, days=None, strikes=None,
                             observation_date="2026-06-30") -> OptionChain:
    """Synthetic call chain priced by the CF engine.

    The default grid is strikes 400:20:1600 (61 calls) with bid = ask =
    model price.  `days` may be an int or a list of ints for the
    multi-maturity variant.
    """
    if params is None:
        if scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {scenario!r}; choose from {sorted(SCENARIOS)}")
        params, default_days = SCENARIOS[scenario]
    else:
        default_days = 91
    if days is None:
        days = default_days
    day_list = [int(days)] if np.isscalar(days) else [int(d) for d in days]
    if any(d <= 0 for d in day_list) or len(set(day_list)) != len(day_list):
        raise ValueError("days must be distinct positive integers")
    if strikes is None:
        strikes = np.arange(400.0, 1601.0, 20.0)
    strikes = np.asarray(strikes, dtype=float)

    quotes = []
    for d in sorted(day_list):
        tau = d / 365.0
        prices = heston_call_prices(params, spot, strikes, tau, rate)
        if np.any(prices < -1e-8 * spot):
            raise FloatingPointError("negative call price from the CF pricer")
        prices = np.maximum(prices, 0.0)
        for strike, price_val in zip(strikes, prices):
            quotes.append(OptionQuote("call", float(strike), d, float(price_val), float(price_val)))
    curve = [(float(d), float(rate)) for d in sorted(day_list)]
    return OptionChain(observation_date=observation_date, spot=float(spot),
                       quotes=quotes, rate_curve=curve)
