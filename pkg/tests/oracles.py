"""Independent closed-form references used by the test suite.

These stay deliberately separate from the package code paths they check:
Black-Scholes via the error function, normal integrals via adaptive
quadrature.
"""

import math

import numpy as np
from scipy.integrate import quad


def norm_cdf(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def norm_pdf(x):
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def black_scholes_call(spot, strike, tau, rate, vol):
    if tau == 0.0 or vol == 0.0:
        return max(spot - strike * math.exp(-rate * tau), 0.0)
    s = vol * math.sqrt(tau)
    d1 = (math.log(spot / strike) + (rate + 0.5 * vol * vol) * tau) / s
    d2 = d1 - s
    return spot * norm_cdf(d1) - strike * math.exp(-rate * tau) * norm_cdf(d2)


def black_scholes_put(spot, strike, tau, rate, vol):
    call = black_scholes_call(spot, strike, tau, rate, vol)
    return call - spot + strike * math.exp(-rate * tau)


def normal_expectation(fn, lower=-np.inf, upper=np.inf, **kwargs):
    """E[fn(Z) 1{lower <= Z <= upper}] for standard normal Z by quadrature."""
    value, _ = quad(lambda z: fn(z) * norm_pdf(z), lower, upper, limit=400, **kwargs)
    return value
