"""Density and moment extraction from model samples.

The density of the log-return is estimated by a Gaussian kernel on a
deterministic subsample; the terminal-price density follows by the change
of variables f(s) = q(ln(s/S)) / s.  Moments are always computed from the
full sample, never from the kernel estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import sample_log_returns

__all__ = [
    "DensityEstimate",
    "RndCharacteristics",
    "kde_log_return",
    "price_density",
    "characteristics",
    "risk_neutral_moments",
    "term_structure",
]

KDE_SUBSAMPLE = 10_000

VARIABLE_KINDS = ("log-return", "terminal-price")

QUANTILE_METHOD = "median_unbiased"


@dataclass
class DensityEstimate:
    grid: np.ndarray
    values: np.ndarray
    variable_kind: str
    bandwidth: float | None = None

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.variable_kind not in VARIABLE_KINDS:
            raise ValueError(f"variable_kind must be one of {VARIABLE_KINDS}")
        if self.grid.ndim != 1 or self.grid.shape != self.values.shape:
            raise ValueError("grid and values must be 1-d and equal length")
        if self.grid.size < 2:
            raise ValueError("grid needs at least two points")
        if np.any(np.diff(self.grid) <= 0.0):
            raise ValueError("grid must be strictly increasing")
        if np.any(self.values < 0.0):
            raise ValueError("density values must be non-negative")

    def integral(self) -> float:
        return float(np.trapezoid(self.values, self.grid))


@dataclass
class RndCharacteristics:
    """The ten summary numbers reported for a risk-neutral density."""

    mean: float
    std: float
    skewness: float
    skew_pm: float
    skew_am: float
    kurtosis: float
    x01: float
    x05: float
    x95: float
    x99: float

    FIELD_ORDER = ("mean", "std", "skewness", "skew_pm", "skew_am",
                   "kurtosis", "x01", "x05", "x95", "x99")

    def to_vector(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in self.FIELD_ORDER])

    def to_jsonable(self) -> dict:
        return {name: float(getattr(self, name)) for name in self.FIELD_ORDER}


def _sample_values(samples) -> np.ndarray:
    values = getattr(samples, "values", samples)
    return np.asarray(values, dtype=float)


def subsample(x: np.ndarray, size: int = KDE_SUBSAMPLE) -> np.ndarray:
    """Deterministic stride subsample: every (n // size)-th element."""
    x = np.asarray(x)
    if x.size <= size:
        return x
    stride = x.size // size
    return x[::stride][:size]


def silverman_bandwidth(x: np.ndarray) -> float:
    sigma = float(np.std(x))
    return 1.06 * sigma * x.size ** (-0.2)


def _kernel_values(x: np.ndarray, grid: np.ndarray, bandwidth: float) -> np.ndarray:
    norm = x.size * bandwidth * np.sqrt(2.0 * np.pi)
    out = np.zeros(grid.size)
    gblock, xblock = 64, 65_536  # bound the (gblock, xblock) work array
    for gs in range(0, grid.size, gblock):
        g = grid[gs:gs + gblock, None]
        acc = np.zeros(g.size)
        for xs in range(0, x.size, xblock):
            u = (g - x[None, xs:xs + xblock]) / bandwidth
            acc += np.exp(-0.5 * u * u).sum(axis=1)
        out[gs:gs + gblock] = acc / norm
    return out


def kde_log_return(model, tau, samples, grid, rate=0.0,
                   subsample_size=KDE_SUBSAMPLE) -> DensityEstimate:
    """Gaussian-kernel density of the log-return at one maturity.

    By default the estimate uses a size-10^4 deterministic subsample with
    the Silverman bandwidth 1.06 sigma m^(-1/5), which is plenty for plots
    (sup-norm error a few percent of the peak).  Pass subsample_size=None
    to run on the full sample when tighter accuracy is needed.
    """
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or np.any(np.diff(grid) <= 0.0):
        raise ValueError("grid must be 1-d and strictly increasing")
    x = sample_log_returns(model, tau, samples, rate)
    sub = x if subsample_size is None else subsample(x, subsample_size)
    if np.std(sub) == 0.0:
        raise ValueError("degenerate samples: zero variance")
    bandwidth = silverman_bandwidth(sub)
    values = _kernel_values(sub, grid, bandwidth)
    return DensityEstimate(grid=grid, values=values, variable_kind="log-return",
                           bandwidth=bandwidth)


def price_density(est: DensityEstimate, spot) -> DensityEstimate:
    """Map a log-return density to the terminal-price density."""
    if est.variable_kind != "log-return":
        raise ValueError("price_density expects a log-return density")
    if spot <= 0.0:
        raise ValueError("spot must be positive")
    s_grid = spot * np.exp(est.grid)
    return DensityEstimate(grid=s_grid, values=est.values / s_grid,
                           variable_kind="terminal-price", bandwidth=est.bandwidth)


def _standardized_moments(x: np.ndarray):
    mean = float(np.mean(x))
    std = float(np.std(x))
    if std == 0.0:
        raise ValueError("degenerate sample: zero variance")
    z = (x - mean) / std
    skewness = float(np.mean(z**3))
    kurtosis = float(np.mean(z**4))  # non-excess: normal -> 3
    return mean, std, skewness, kurtosis


def characteristics(values) -> RndCharacteristics:
    """The ten distribution characteristics of a sample."""
    x = _sample_values(values)
    if x.size < 100:
        raise ValueError("need at least 100 samples")
    mean, std, skewness, kurtosis = _standardized_moments(x)
    q = np.quantile(x, [0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99],
                    method=QUANTILE_METHOD)
    x01, x05, x25, x50, x75, x95, x99 = (float(v) for v in q)
    iqr_low = x50 - x25
    if iqr_low == 0.0:
        raise ValueError("degenerate sample: lower quartile equals median")
    return RndCharacteristics(
        mean=mean,
        std=std,
        skewness=skewness,
        skew_pm=(mean - x50) / std,
        skew_am=(x75 - x50) / iqr_low,
        kurtosis=kurtosis,
        x01=x01,
        x05=x05,
        x95=x95,
        x99=x99,
    )


def risk_neutral_moments(model, tau, samples, rate=0.0):
    """(RNM2, RNM3, RNM4) = std, skewness, kurtosis of the log-return at tau."""
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    x = sample_log_returns(model, tau, samples, rate)
    _, std, skewness, kurtosis = _standardized_moments(x)
    return std, skewness, kurtosis


def term_structure(model, tau_grid, samples, rate=0.0) -> np.ndarray:
    """Rows of (tau, RNM2, RNM3, RNM4) over an ascending maturity grid."""
    tau_grid = np.asarray(tau_grid, dtype=float)
    if tau_grid.ndim != 1 or tau_grid.size == 0:
        raise ValueError("tau grid must be a non-empty 1-d array")
    if np.any(tau_grid <= 0.0) or np.any(np.diff(tau_grid) <= 0.0):
        raise ValueError("tau grid must be positive and ascending")
    rows = np.empty((tau_grid.size, 4))
    for i, tau in enumerate(tau_grid):
        rnm2, rnm3, rnm4 = risk_neutral_moments(model, float(tau), samples, rate)
        rows[i] = (tau, rnm2, rnm3, rnm4)
    return rows
