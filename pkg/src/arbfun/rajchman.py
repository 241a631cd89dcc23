"""Characteristic-function decay diagnostics and the arbitrary-functions
experiment ({nX + Y} becoming uniform and independent of (X, Y)).

Whether a law is Rajchman is only semi-decidable from finitely many
frequencies, so the classifier has an explicit "inconclusive" verdict.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .graduation import frac
from .stochastics import (
    ComplexEstimate,
    DistributionSpec,
    EstimateWithError,
    RandomStream,
    empirical_cf_with_se,
    ks_distance,
    mean_with_se,
)

GEOMETRIC_LADDER = tuple(float(2 ** j) for j in range(14))


class Verdict(str, enum.Enum):
    DECAYING = "decaying"
    PERSISTENT = "persistent"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class CfDecayProfile:
    frequencies: np.ndarray
    moduli: np.ndarray
    source: str  # "exact" or "empirical"
    std_errors: Optional[np.ndarray] = None
    estimates: tuple = ()  # ComplexEstimate per frequency when empirical

    def __post_init__(self):
        if np.any(self.moduli < 0) or np.any(self.moduli > 1 + 1e-12):
            raise ValueError("cf moduli must lie in [0, 1]")


def _modulus_se(est: ComplexEstimate) -> float:
    re, im = est.real, est.imag
    r = math.hypot(re.value, im.value)
    if r == 0:
        return math.hypot(re.std_error, im.std_error)
    # delta method, ignoring the cos/sin cross-covariance
    return math.hypot(re.value * re.std_error, im.value * im.std_error) / r


def cf_decay_profile(dist: DistributionSpec, frequencies, count: int = 10 ** 5,
                     stream: Optional[RandomStream] = None, prefer_exact: bool = True) -> CfDecayProfile:
    """|Psi_X(u)| on a frequency ladder, from the exact formula when the
    law provides one, otherwise from ``count`` draws with error bars.

    Frequencies are scalars for laws on R, vectors (rows) on R^d.
    """
    freqs = np.asarray(frequencies, dtype=float)
    if freqs.ndim == 1 and np.any(np.diff(freqs) <= 0):
        raise ValueError("frequencies must be increasing")
    if prefer_exact:
        exact = dist.cf(freqs)
        if exact is not None:
            mod = np.minimum(np.abs(np.asarray(exact, dtype=complex)), 1.0)
            return CfDecayProfile(freqs, mod, "exact", np.zeros_like(mod))
    if stream is None:
        raise ValueError("an empirical profile needs a random stream")
    x = dist.sample(stream.generator(), count)
    ests = tuple(empirical_cf_with_se(x, u) for u in freqs)
    mod = np.array([min(abs(e.value), 1.0) for e in ests])
    se = np.array([_modulus_se(e) for e in ests])
    return CfDecayProfile(freqs, mod, "empirical", se, ests)


def classify_rajchman(profile: CfDecayProfile, threshold: float = 0.05,
                      tail_fraction: float = 0.5) -> Verdict:
    """Heuristic verdict from the tail of a decay profile.

    persistent   some tail modulus exceeds 1 - threshold
    decaying     every tail modulus is below threshold and below the head max
    inconclusive anything else, including an empty tail
    """
    m = np.asarray(profile.moduli, dtype=float)
    start = int(math.floor(m.size * (1 - tail_fraction)))
    tail, head = m[start:], m[:start]
    if tail.size == 0:
        return Verdict.INCONCLUSIVE
    if np.any(tail > 1 - threshold):
        return Verdict.PERSISTENT
    trend = head.size == 0 or tail.max() <= head.max()
    if tail.max() < threshold and trend:
        return Verdict.DECAYING
    return Verdict.INCONCLUSIVE


def resonant_frequencies(m: int, count: int = 14) -> np.ndarray:
    """2 pi m k, k = 1..count: frequencies at which a lattice law on k/m
    has unit modulus."""
    return 2 * math.pi * m * np.arange(1, count + 1, dtype=float)


@dataclass(frozen=True)
class JointCfCell:
    k: int
    zeta: float
    joint: ComplexEstimate       # E[exp(2 pi i k U + i zeta X)]
    product: complex             # product of the two empirical marginals
    limit: complex               # value under the limit law (U uniform, independent)


@dataclass(frozen=True)
class ArbitraryFunctionsReport:
    n: int
    ks_uniform: float
    ks_critical: float
    cells: tuple = field(default_factory=tuple)


def arbitrary_functions_test(x_dist: DistributionSpec, y_dist: DistributionSpec, n: int,
                             count: int, stream: RandomStream,
                             ks: Sequence[int] = (0, 1, 2), zetas: Sequence[float] = (0.0, 1.0),
                             level: float = 0.95) -> ArbitraryFunctionsReport:
    """Joint diagnostics of (U_n, X) with U_n = {nX + Y}: KS of U_n against
    U(0,1) and the joint characteristic function on a small (k, zeta) grid."""
    from .stochastics import ks_critical

    if n < 1:
        raise ValueError("n must be >= 1")
    gen = stream.generator()
    x = x_dist.sample(gen, count)
    y = y_dist.sample(gen, count)
    u = frac(n * x + y)
    ks_u = ks_distance(u, lambda t: np.clip(t, 0.0, 1.0))
    cells = []
    for k in ks:
        for zeta in zetas:
            phase = 2 * math.pi * k * u + zeta * x
            if k == 0 and zeta == 0:
                one = EstimateWithError(1.0, 0.0, count)
                joint = ComplexEstimate(one, EstimateWithError(0.0, 0.0, count))
            else:
                joint = ComplexEstimate(mean_with_se(np.cos(phase)), mean_with_se(np.sin(phase)))
            mu = complex(np.mean(np.exp(2j * math.pi * k * u))) if k else 1.0
            mx = complex(np.mean(np.exp(1j * zeta * x))) if zeta else 1.0
            cfx = x_dist.cf(zeta)
            limit = (complex(cfx) if cfx is not None else mx) if k == 0 else 0j
            cells.append(JointCfCell(k, zeta, joint, mu * mx, limit))
    return ArbitraryFunctionsReport(n, ks_u, ks_critical(count, level), tuple(cells))


def fractional_cf_pair(x, n: int) -> tuple:
    """Empirical CF of {X} and of X at 2 pi n, from the same sample."""
    x = np.asarray(x, dtype=float)
    u = 2 * math.pi * n
    return empirical_cf_with_se(frac(x), u), empirical_cf_with_se(x, u)
