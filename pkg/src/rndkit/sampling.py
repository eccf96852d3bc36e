"""Seeded standard-normal draws shared by every Monte Carlo consumer.

One sample set is drawn per run and reused across all maturities and
strikes (common random numbers), so prices move smoothly in the model
parameters.  The generator is counter-based (Philox) and the normals come
from the inverse CDF applied to the midpoint of the 2^53 uniform lattice,
which keeps the sequence reproducible across platforms and makes a longer
draw with the same seed a prefix-preserving extension of a shorter one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

__all__ = ["NormalSampleSet", "draw_standard_normal"]

# Midpoint offset of the 2^53 uniform lattice: Generator.random() returns
# k / 2^53, the inverse CDF is evaluated at (k + 1/2) / 2^53.
_HALF_ULP = 0.5 ** 54


@dataclass
class NormalSampleSet:
    """Frozen draw of n standard normals together with its provenance."""

    values: np.ndarray
    seed: int
    n: int
    antithetic: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.n,):
            raise ValueError("values shape does not match n")


def draw_standard_normal(n: int, seed: int, antithetic: bool = False) -> NormalSampleSet:
    """Draw n standard normals for the given seed.

    With ``antithetic`` the stream is the interleaving (z1, -z1, z2, -z2, ...)
    of half as many base draws, still prefix-preserving in n.
    """
    n = int(n)
    if n <= 0:
        raise ValueError("need at least one sample")
    rng = np.random.Generator(np.random.Philox(seed))
    if antithetic:
        base = ndtri(rng.random((n + 1) // 2) + _HALF_ULP)
        values = np.empty(2 * base.size)
        values[0::2] = base
        values[1::2] = -base
        values = values[:n]
    else:
        values = ndtri(rng.random(n) + _HALF_ULP)
    if n >= 100_000:
        _moment_guard(values, n)
    return NormalSampleSet(values=values, seed=int(seed), n=n, antithetic=antithetic)


def _moment_guard(values: np.ndarray, n: int) -> None:
    # Loose CLT bounds; a correct generator fails them with probability ~1e-6.
    mean = float(np.mean(values))
    var = float(np.var(values))
    if abs(mean) > 5.0 / np.sqrt(n):
        raise RuntimeError(f"sample mean {mean:.3e} outside generator guard")
    if abs(var - 1.0) > 10.0 / np.sqrt(n):
        raise RuntimeError(f"sample variance {var:.6f} outside generator guard")
