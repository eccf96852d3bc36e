"""Static no-arbitrage penalties and the price-surface audit.

The calendar penalties are sample averages whose sign certifies that the
discounted-price surface moves the right way in maturity:

    Jt_C(tau, K) = (1/N) sum_n 1{e^X_n >= K/S} [ (dX_n/dtau - r) e^X_n + r K/S ]
    Jt_P(tau, K) = (1/N) sum_n 1{e^X_n <= K/S} [ (r - dX_n/dtau) e^X_n - r K/S ]

and S e^(-r tau) Jt_C equals the maturity derivative of the Monte Carlo
call price on the same draws (fixed indicator set), which the test suite
verifies by finite differences.  The martingale penalty is the squared
defect J_mu(tau) = (ln (1/N) sum_n e^X_n - r tau)^2.

Aggregation hinges the calendar terms, so only violations contribute:
J = sum (-Jt_C)^+ + sum (-Jt_P)^+ + sum J_mu.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .models import dtau_log_returns, sample_log_returns
from .numerics import kahan_sum, logmeanexp, parallel_map

__all__ = [
    "SyntheticGrid",
    "build_synthetic_grid",
    "penalty_calendar_call",
    "penalty_calendar_put",
    "penalty_mu",
    "total_penalty",
    "aggregate_penalties",
    "PenaltyReport",
    "price_surface",
    "audit_price_surface",
    "audit_surface",
]


# ----------------------------------------------------------------------
# synthetic grid


@dataclass
class SyntheticGrid:
    """Penalty evaluation grid: maturities x strikes, both option sides."""

    taus: np.ndarray
    strikes: np.ndarray
    points: list  # (tau, strike, side) triples

    @property
    def n_pairs(self) -> int:
        return self.taus.size * self.strikes.size


def _with_midpoints(values: np.ndarray) -> np.ndarray:
    if values.size == 1:
        return values
    mids = 0.5 * (values[:-1] + values[1:])
    return np.sort(np.concatenate([values, mids]))


def build_synthetic_grid(taus, strikes) -> SyntheticGrid:
    """Sorted unique inputs, augmented with pairwise midpoints, Cartesian.

    n maturities and m strikes give (2n-1)(2m-1) pairs, each present for
    both the call and the put side.
    """
    taus = np.unique(np.asarray(taus, dtype=float))
    strikes = np.unique(np.asarray(strikes, dtype=float))
    if taus.size == 0 or strikes.size == 0:
        raise ValueError("grid needs at least one maturity and one strike")
    if np.any(taus <= 0.0) or np.any(strikes <= 0.0):
        raise ValueError("maturities and strikes must be positive")
    taus = _with_midpoints(taus)
    strikes = _with_midpoints(strikes)
    points = [
        (float(tau), float(k), side)
        for tau in taus
        for k in strikes
        for side in ("call", "put")
    ]
    return SyntheticGrid(taus=taus, strikes=strikes, points=points)


# ----------------------------------------------------------------------
# penalty terms


def _tau_tables(model, tau, rate, samples):
    x = sample_log_returns(model, tau, samples, rate)
    growth = np.exp(x)
    slope = dtau_log_returns(model, tau, samples, rate)
    return x, growth, slope


def penalty_calendar_call(model, tau, strike, spot, rate, samples) -> float:
    """Signed calendar value for a call; negative means a violation."""
    if tau <= 0.0:
        raise ValueError("calendar penalty needs tau > 0")
    _, growth, slope = _tau_tables(model, tau, rate, samples)
    return _calendar_call_from_tables(growth, slope, strike / spot, rate)


def penalty_calendar_put(model, tau, strike, spot, rate, samples) -> float:
    if tau <= 0.0:
        raise ValueError("calendar penalty needs tau > 0")
    _, growth, slope = _tau_tables(model, tau, rate, samples)
    return _calendar_put_from_tables(growth, slope, strike / spot, rate)


def _calendar_call_from_tables(growth, slope, moneyness, rate) -> float:
    mask = growth >= moneyness
    terms = (slope[mask] - rate) * growth[mask] + rate * moneyness
    return kahan_sum(terms) / growth.size


def _calendar_put_from_tables(growth, slope, moneyness, rate) -> float:
    mask = growth <= moneyness
    terms = (rate - slope[mask]) * growth[mask] - rate * moneyness
    return kahan_sum(terms) / growth.size


def penalty_mu(model, tau, rate, samples) -> float:
    """Squared martingale defect at one maturity."""
    if tau < 0.0:
        raise ValueError("tau must be non-negative")
    if tau == 0.0:
        return 0.0
    x = sample_log_returns(model, tau, samples, rate)
    defect = logmeanexp(x) - rate * tau
    return float(defect * defect)


@dataclass
class PenaltyReport:
    total: float
    n_violations: int
    worst: float  # most negative calendar value, 0.0 if none
    calendar_values: list  # (tau, strike, side, value)
    mu_values: list  # (tau, value)

    def to_jsonable(self) -> dict:
        return {
            "total": self.total,
            "n_violations": self.n_violations,
            "worst": self.worst,
            "mu_values": [{"tau": t, "value": v} for t, v in self.mu_values],
            "calendar_violations": [
                {"tau": t, "strike": k, "side": s, "value": v}
                for t, k, s, v in self.calendar_values
                if v < 0.0
            ],
        }


def total_penalty(model, grid: SyntheticGrid, spot, rate_fn, samples, threads=None) -> PenaltyReport:
    """Hinged penalty over the whole grid plus martingale terms per maturity.

    rate_fn maps a maturity to its interpolated rate.  Log returns are
    computed once per maturity and shared across strikes and sides.
    """

    def run_tau(tau):
        rate = rate_fn(tau)
        x, growth, slope = _tau_tables(model, tau, rate, samples)
        defect = logmeanexp(x) - rate * tau
        rows = []
        for k in grid.strikes:
            m = k / spot
            rows.append((tau, float(k), "call", _calendar_call_from_tables(growth, slope, m, rate)))
            rows.append((tau, float(k), "put", _calendar_put_from_tables(growth, slope, m, rate)))
        return rows, (float(tau), float(defect * defect))

    results = parallel_map(run_tau, [float(t) for t in grid.taus], threads)
    calendar_values = []
    mu_values = []
    for rows, mu_term in results:
        calendar_values.extend(rows)
        mu_values.append(mu_term)
    return aggregate_penalties(calendar_values, mu_values)


def aggregate_penalties(calendar_values, mu_values) -> PenaltyReport:
    """Hinge the signed calendar values and add the martingale terms."""
    total = 0.0
    n_violations = 0
    worst = 0.0
    for _, _, _, value in calendar_values:
        if value < 0.0:
            total += -value
            n_violations += 1
            worst = min(worst, value)
    for _, mu in mu_values:
        total += mu
    return PenaltyReport(
        total=float(total),
        n_violations=n_violations,
        worst=float(worst),
        calendar_values=list(calendar_values),
        mu_values=list(mu_values),
    )


# ----------------------------------------------------------------------
# surface audit


@dataclass
class PriceSurface:
    """Everything the audit checks need, computed in one pass."""

    spot: float
    taus: np.ndarray
    strikes: np.ndarray
    calls: np.ndarray  # (n_tau, n_strike)
    puts: np.ndarray
    rates: np.ndarray  # per tau
    defects: np.ndarray  # martingale defect per tau
    jtau_calls: np.ndarray  # (n_tau, n_strike) signed calendar values
    jtau_puts: np.ndarray
    call_far: np.ndarray  # call priced beyond the largest simulated growth
    put_near: np.ndarray  # put priced below the smallest simulated growth
    tau0_calls: np.ndarray  # tau = 0 prices per strike
    tau0_puts: np.ndarray


def price_surface(model, taus, strikes, spot, rate_fn, samples, threads=None) -> PriceSurface:
    taus = np.sort(np.unique(np.asarray(taus, dtype=float)))
    strikes = np.sort(np.unique(np.asarray(strikes, dtype=float)))
    if np.any(taus <= 0.0):
        raise ValueError("audit maturities must be positive (tau = 0 is checked separately)")

    def run_tau(tau):
        rate = rate_fn(tau)
        x, growth, slope = _tau_tables(model, tau, rate, samples)
        n = growth.size
        disc = np.exp(-rate * tau)
        calls = np.empty(strikes.size)
        puts = np.empty(strikes.size)
        jc = np.empty(strikes.size)
        jp = np.empty(strikes.size)
        for j, k in enumerate(strikes):
            m = k / spot
            calls[j] = disc * spot * kahan_sum(np.maximum(growth - m, 0.0)) / n
            puts[j] = disc * spot * kahan_sum(np.maximum(m - growth, 0.0)) / n
            jc[j] = _calendar_call_from_tables(growth, slope, m, rate)
            jp[j] = _calendar_put_from_tables(growth, slope, m, rate)
        defect = logmeanexp(x) - rate * tau
        far_m = float(np.max(growth)) * (1.0 + 1e-9)
        near_m = float(np.min(growth)) * (1.0 - 1e-9)
        call_far = disc * spot * kahan_sum(np.maximum(growth - far_m, 0.0)) / n
        put_near = disc * spot * kahan_sum(np.maximum(near_m - growth, 0.0)) / n
        return calls, puts, jc, jp, rate, defect, call_far, put_near

    rows = parallel_map(run_tau, [float(t) for t in taus], threads)
    calls = np.vstack([r[0] for r in rows])
    puts = np.vstack([r[1] for r in rows])
    jtau_calls = np.vstack([r[2] for r in rows])
    jtau_puts = np.vstack([r[3] for r in rows])
    rates = np.array([r[4] for r in rows])
    defects = np.array([r[5] for r in rows])
    call_far = np.array([r[6] for r in rows])
    put_near = np.array([r[7] for r in rows])
    tau0_calls = np.maximum(spot - strikes, 0.0)
    tau0_puts = np.maximum(strikes - spot, 0.0)
    return PriceSurface(
        spot=float(spot), taus=taus, strikes=strikes, calls=calls, puts=puts,
        rates=rates, defects=defects, jtau_calls=jtau_calls, jtau_puts=jtau_puts,
        call_far=call_far, put_near=put_near, tau0_calls=tau0_calls, tau0_puts=tau0_puts,
    )


def audit_price_surface(surface: PriceSurface) -> dict:
    """Run the static checks on an already-priced surface.

    Returns a JSON-ready report; ``passed`` is the conjunction of all
    checks.  Parity and bound checks get slack S |e^delta - 1| from the
    measured martingale defect delta per maturity.
    """
    s = surface
    tol = 1e-12 * s.spot
    checks = {}

    def record(name, violations, worst):
        checks[name] = {
            "passed": bool(len(violations) == 0),
            "n_violations": len(violations),
            "worst": float(worst) if violations else 0.0,
            "examples": violations[:5],
        }

    # 1. monotone in strike: calls fall, puts rise.
    viol, worst = [], 0.0
    for i, tau in enumerate(s.taus):
        dc = np.diff(s.calls[i])
        dp = np.diff(s.puts[i])
        for j in np.nonzero(dc > tol)[0]:
            viol.append({"tau": float(tau), "strike": float(s.strikes[j + 1]), "side": "call", "value": float(dc[j])})
            worst = max(worst, float(dc[j]))
        for j in np.nonzero(dp < -tol)[0]:
            viol.append({"tau": float(tau), "strike": float(s.strikes[j + 1]), "side": "put", "value": float(dp[j])})
            worst = min(worst, float(dp[j]))
    record("monotone_in_strike", viol, worst)

    # 2. convex in strike.
    viol, worst = [], 0.0
    for i, tau in enumerate(s.taus):
        for name, grid_prices in (("call", s.calls[i]), ("put", s.puts[i])):
            if grid_prices.size < 3:
                continue
            second = grid_prices[:-2] - 2.0 * grid_prices[1:-1] + grid_prices[2:]
            for j in np.nonzero(second < -tol)[0]:
                viol.append({"tau": float(tau), "strike": float(s.strikes[j + 1]), "side": name, "value": float(second[j])})
                worst = min(worst, float(second[j]))
    record("convex_in_strike", viol, worst)

    # 3. strike limits: far call and near put are worthless.
    viol, worst = [], 0.0
    for i, tau in enumerate(s.taus):
        if s.call_far[i] > tol:
            viol.append({"tau": float(tau), "side": "call", "value": float(s.call_far[i])})
            worst = max(worst, float(s.call_far[i]))
        if s.put_near[i] > tol:
            viol.append({"tau": float(tau), "side": "put", "value": float(s.put_near[i])})
            worst = max(worst, float(s.put_near[i]))
    record("strike_limits", viol, worst)

    # 4. tau = 0 collapses to intrinsic.
    viol, worst = [], 0.0
    intr_c = np.maximum(s.spot - s.strikes, 0.0)
    intr_p = np.maximum(s.strikes - s.spot, 0.0)
    for j in np.nonzero((s.tau0_calls != intr_c) | (s.tau0_puts != intr_p))[0]:
        gap = max(abs(s.tau0_calls[j] - intr_c[j]), abs(s.tau0_puts[j] - intr_p[j]))
        viol.append({"strike": float(s.strikes[j]), "value": float(gap)})
        worst = max(worst, float(gap))
    record("intrinsic_at_tau0", viol, worst)

    # 5. calendar: prices should not fall as maturity grows, with slack
    # integrated from any measured negative calendar values.
    viol, worst = [], 0.0
    for i in range(s.taus.size - 1):
        dtau = s.taus[i + 1] - s.taus[i]
        for j, k in enumerate(s.strikes):
            jc = min(s.jtau_calls[i, j], s.jtau_calls[i + 1, j])
            slack_c = s.spot * dtau * max(0.0, -jc) + tol
            dc = s.calls[i + 1, j] - s.calls[i, j]
            if dc < -slack_c:
                viol.append({"tau": float(s.taus[i + 1]), "strike": float(k), "side": "call", "value": float(dc)})
                worst = min(worst, float(dc))
            jp = min(s.jtau_puts[i, j], s.jtau_puts[i + 1, j])
            slack_p = s.spot * dtau * max(0.0, -jp) + tol
            dp = s.puts[i + 1, j] - s.puts[i, j]
            if dp < -slack_p:
                viol.append({"tau": float(s.taus[i + 1]), "strike": float(k), "side": "put", "value": float(dp)})
                worst = min(worst, float(dp))
    record("calendar_in_tau", viol, worst)

    # 6. parity and static bounds within the measured martingale slack.
    viol, worst = [], 0.0
    for i, tau in enumerate(s.taus):
        slack = s.spot * abs(np.expm1(s.defects[i])) + 1e-10 * s.spot
        disc_k = s.strikes * np.exp(-s.rates[i] * tau)
        parity_gap = np.abs(s.calls[i] - s.puts[i] - (s.spot - disc_k))
        lower_c = np.maximum(s.spot - disc_k, 0.0)
        lower_p = np.maximum(disc_k - s.spot, 0.0)
        bad = (
            (parity_gap > slack)
            | (s.calls[i] < lower_c - slack) | (s.calls[i] > s.spot + slack)
            | (s.puts[i] < lower_p - slack) | (s.puts[i] > disc_k + slack)
        )
        for j in np.nonzero(bad)[0]:
            viol.append({"tau": float(tau), "strike": float(s.strikes[j]), "value": float(parity_gap[j])})
            worst = max(worst, float(parity_gap[j]))
    record("parity_and_bounds", viol, worst)

    return {
        "passed": all(c["passed"] for c in checks.values()),
        "spot": s.spot,
        "martingale_defects": [{"tau": float(t), "defect": float(d)} for t, d in zip(s.taus, s.defects)],
        "checks": checks,
    }


def audit_surface(model, taus, strikes, spot, rate_fn, samples, threads=None) -> dict:
    """Price the call/put surface for a model and run all static checks."""
    surface = price_surface(model, taus, strikes, spot, rate_fn, samples, threads)
    return audit_price_surface(surface)
