"""Brownian and time-changed martingale paths on a uniform grid, left-point
Ito sums, and the oscillating integrals int f(ns) dM_s.

Paths keep time on the last axis; a vector path of dimension d has shape
(..., d, m+1) and any leading axes index replicates.

Deterministic integrands (the oscillator f(ns), step functions) are
sampled at the midpoint of each fine step.  Since they are not random this
keeps the sums adapted while making the quadrature error of f(ns) an
order smaller than with left points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .graduation import frac
from .stochastics import (
    ComplexEstimate,
    EstimateWithError,
    RandomStream,
    complex_mean_with_se,
    covariance_with_se,
    map_replicates,
    mean_with_se,
    richardson,
    variance_with_se,
)

MIN_RESOLUTION = 16


@dataclass(frozen=True)
class GridPath:
    values: np.ndarray
    horizon: float = 1.0

    @property
    def m(self) -> int:
        return self.values.shape[-1] - 1

    @property
    def step(self) -> float:
        return self.horizon / self.m

    @property
    def origin(self):
        return self.values[..., 0]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=-1)

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.m + 1)

    def at(self, t: float):
        """Value at a grid time (t must be a node)."""
        k = t * self.m / self.horizon
        j = int(round(k))
        if abs(k - j) > 1e-9:
            raise ValueError(f"t={t} is not a grid node")
        return self.values[..., j]


def path_from_increments(dx: np.ndarray, origin=0.0, horizon: float = 1.0) -> GridPath:
    shape = dx.shape[:-1] + (1,)
    start = np.broadcast_to(np.asarray(origin, dtype=dx.dtype), shape)
    return GridPath(np.concatenate([start, start + np.cumsum(dx, axis=-1)], axis=-1), horizon)


def brownian_increments(gen: np.random.Generator, m: int, count: Optional[int] = None,
                        d: Optional[int] = None, horizon: float = 1.0) -> np.ndarray:
    shape = tuple(s for s in (count, d) if s is not None) + (m,)
    return math.sqrt(horizon / m) * gen.standard_normal(shape)


def brownian_path(m: int, d: Optional[int] = None, stream: Optional[RandomStream] = None,
                  count: Optional[int] = None, horizon: float = 1.0,
                  gen: Optional[np.random.Generator] = None) -> GridPath:
    """Brownian path(s) with independent N(0, horizon/m) increments."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if gen is None:
        if stream is None:
            raise ValueError("need a stream or a generator")
        gen = stream.generator()
    return path_from_increments(brownian_increments(gen, m, count, d, horizon), 0.0, horizon)


def ito_sum(integrand, path: GridPath) -> GridPath:
    """Partial sums of h_j (M_{j+1} - M_j), h given at left points."""
    h = np.asarray(integrand)
    dm = path.increments
    if h.shape[-1] != dm.shape[-1]:
        raise ValueError(f"integrand has {h.shape[-1]} values for {dm.shape[-1]} steps")
    return path_from_increments(h * dm, 0.0, path.horizon)


def midpoints(m: int, horizon: float = 1.0) -> np.ndarray:
    return (np.arange(m) + 0.5) * (horizon / m)


@dataclass(frozen=True)
class TimeChangeClock:
    """Deterministic increasing clock a(t) with density a'(t); M = B o a."""

    a: Callable
    da: Callable
    name: str = "clock"

    def check(self, m: int = 1024) -> bool:
        v = self.a(np.linspace(0.0, 1.0, m + 1))
        return bool(v[0] == 0 and np.all(np.diff(v) >= 0))


def identity_clock() -> TimeChangeClock:
    return TimeChangeClock(lambda t: np.asarray(t, dtype=float),
                           lambda t: np.ones_like(np.asarray(t, dtype=float)), "t")


def linear_clock(c: float) -> TimeChangeClock:
    return TimeChangeClock(lambda t: c * np.asarray(t, dtype=float),
                           lambda t: np.full_like(np.asarray(t, dtype=float), c), f"{c}t")


def square_clock() -> TimeChangeClock:
    return TimeChangeClock(lambda t: np.asarray(t, dtype=float) ** 2,
                           lambda t: 2 * np.asarray(t, dtype=float), "t^2")


def time_changed_path(base: GridPath, clock: TimeChangeClock, m: int) -> GridPath:
    """M_{t_k} = B_{a(t_k)} on the m-grid, by linear interpolation of a
    finer base path on [0, horizon]."""
    t = np.linspace(0.0, 1.0, m + 1)
    a = np.asarray(clock.a(t), dtype=float)
    if a[-1] > base.horizon * (1 + 1e-12):
        raise ValueError(f"clock reaches {a[-1]} beyond the base horizon {base.horizon}")
    x = np.minimum(a / base.step, base.m)
    j = np.minimum(np.floor(x).astype(int), base.m - 1)
    lam = x - j
    v = base.values
    out = (1 - lam) * v[..., j] + lam * v[..., j + 1]
    return GridPath(out, 1.0)


def clock_increments(gen: np.random.Generator, clock: TimeChangeClock, m: int,
                     count: Optional[int] = None) -> np.ndarray:
    """Exact increments of the Gaussian martingale B o a on the m-grid."""
    da = np.diff(clock.a(np.linspace(0.0, 1.0, m + 1)))
    shape = (m,) if count is None else (count, m)
    return np.sqrt(da) * gen.standard_normal(shape)


@dataclass(frozen=True)
class OscillatorSpec:
    """Bounded periodic f with unit period; stores its mean and mean square."""

    f: Callable
    mean: float
    l2sq: float
    name: str = "f"

    def check(self, nodes: int = 10 ** 5, tol: float = 1e-6) -> bool:
        x = (np.arange(nodes) + 0.5) / nodes
        v = self.f(x)
        return bool(abs(math.fsum(v.tolist()) / nodes - self.mean) <= tol
                    and abs(math.fsum((v * v).tolist()) / nodes - self.l2sq) <= tol)

    def weights(self, n: int, m: int) -> np.ndarray:
        return self.f(n * midpoints(m))


def sawtooth() -> OscillatorSpec:
    """f(x) = 1/2 - {x}: mean 0, mean square 1/12."""
    return OscillatorSpec(lambda x: 0.5 - frac(x), 0.0, 1.0 / 12.0, "1/2-{x}")


def fractional_part() -> OscillatorSpec:
    """f(x) = {x}: mean 1/2, mean square 1/3."""
    return OscillatorSpec(lambda x: np.asarray(frac(x)), 0.5, 1.0 / 3.0, "{x}")


def constant_oscillator(c: float) -> OscillatorSpec:
    return OscillatorSpec(lambda x: np.full_like(np.asarray(x, dtype=float), c), c, c * c, f"{c}")


def normalized_sawtooth() -> OscillatorSpec:
    """sqrt(12) (1/2 - {x}): mean 0, mean square 1."""
    r = math.sqrt(12.0)
    return OscillatorSpec(lambda x: r * (0.5 - frac(x)), 0.0, 1.0, "sqrt12(1/2-{x})")


def _check_resolution(n: int, m: int) -> None:
    if m < MIN_RESOLUTION * n:
        raise ValueError(f"grid m={m} does not resolve the oscillation at n={n} "
                         f"(need m >= {MIN_RESOLUTION}n)")


def oscillating_integral(osc: OscillatorSpec, n: int, martingale: GridPath) -> GridPath:
    """Path of int_0^t f(ns) dM_s."""
    _check_resolution(n, martingale.m)
    return ito_sum(osc.weights(n, martingale.m), martingale)


def deterministic_integral_bound(osc: OscillatorSpec, n: int, nodes: int = 1 << 16) -> float:
    """sup_t |int_0^t f(ns) ds| by midpoint quadrature on [0, 1]."""
    h = 1.0 / nodes
    vals = osc.f(n * midpoints(nodes)) * h
    return float(np.max(np.abs(np.cumsum(vals))))


# ---------------------------------------------------------------------------
# complex forms


def step_function(breaks: Sequence[float], levels: Sequence[float]) -> Callable:
    """Right-continuous step function: levels[i] on [breaks[i], breaks[i+1])."""
    b = np.asarray(breaks, dtype=float)
    lv = np.asarray(levels, dtype=float)

    def f(s):
        idx = np.clip(np.searchsorted(b, np.asarray(s, dtype=float), side="right") - 1, 0, lv.size - 1)
        return lv[idx]

    return f


def constant_step(c: float) -> Callable:
    return step_function([0.0], [c])


def _exp_diff(base_phase, delta):
    """exp(i(base+delta)) - exp(i base) without cancellation."""
    return 2j * np.sin(0.5 * delta) * np.exp(1j * (base_phase + 0.5 * delta))


def bracket_samples(eta: Callable, zeta: Callable, osc: OscillatorSpec, ladder: Sequence[int],
                    m: int, count: int, stream: RandomStream,
                    clock: Optional[TimeChangeClock] = None, workers: int = 1) -> dict:
    """Per-replicate values of
    n^2 (e^{i int eta dM^n} - e^{i int eta dM}) (e^{i int zeta dM^n} - e^{i int zeta dM})
    with M^n = M + (1/n) int f(ns) dM, for every n of the ladder on the same
    paths of M."""
    ladder = list(ladder)
    for n in ladder:
        _check_resolution(n, m)
    s = midpoints(m)
    e, z = eta(s), zeta(s)
    fw = {n: osc.f(n * s) for n in ladder}
    clk = identity_clock() if clock is None else clock

    def kernel(gen, size):
        dm = clock_increments(gen, clk, m, size)
        a = dm @ e
        c = dm @ z
        out = {}
        for n in ladder:
            da = dm @ (e * fw[n]) / n
            dc = dm @ (z * fw[n]) / n
            out[str(n)] = n * n * _exp_diff(a, da) * _exp_diff(c, dc)
        return out

    res = map_replicates(kernel, stream, count, block=1024, workers=workers)
    return {n: res[str(n)] for n in ladder}


def theorem6_bracket(eta: Callable, zeta: Callable, osc: OscillatorSpec, n: int, m: int,
                     count: int, stream: RandomStream, clock: Optional[TimeChangeClock] = None,
                     workers: int = 1) -> ComplexEstimate:
    """Estimate of the complex bracket at a single n."""
    return complex_mean_with_se(bracket_samples(eta, zeta, osc, [n], m, count, stream, clock, workers)[n])


def bracket_extrapolated(samples: dict, ladder: Sequence[int]) -> ComplexEstimate:
    ladder = list(ladder)
    return complex_mean_with_se(richardson([samples[n] for n in ladder], ladder))


def theorem6_target(eta: Callable, zeta: Callable, osc: OscillatorSpec,
                    clock: Optional[TimeChangeClock] = None, nodes: int = 1 << 18) -> complex:
    """-E[exp(i int (eta+zeta) dM)] int eta zeta d<M> ||f||^2 for a Gaussian
    martingale M = B o a and deterministic eta, zeta (midpoint quadrature)."""
    clk = identity_clock() if clock is None else clock
    s = midpoints(nodes)
    w = clk.da(s) / nodes
    g = eta(s) + zeta(s)
    cf = math.exp(-0.5 * math.fsum((g * g * w).tolist()))
    return complex(-cf * math.fsum((eta(s) * zeta(s) * w).tolist()) * osc.l2sq, 0.0)


def theorem7_cf_form(xi: Callable, osc: OscillatorSpec, n: int, m: int, count: int,
                     stream: RandomStream, workers: int = 1) -> ComplexEstimate:
    """n^2 E[(e^{i xi.B^n} - e^{i xi.B})^2] at fixed n."""
    return theorem6_bracket(xi, xi, osc, n, m, count, stream, None, workers)


def theorem7_target(xi: Callable, osc: OscillatorSpec) -> complex:
    return theorem6_target(xi, xi, osc)


# ---------------------------------------------------------------------------
# coarse-grid processes


def coarse_processes(db: np.ndarray, n: int) -> dict:
    """Grid paths (time last) of the coarse-grid statistics for n | m:

    sawtooth  n int (s - [ns]/n - 1/(2n)) dB
    lag_dB    n int (s - [ns]/n) dB
    lag_ds    n int (B_s - B_[ns]/n) ds
    clt       sqrt(n) int (B_s - B_[ns]/n) dB
    B         the driving path

    lag_dB and sawtooth use midpoint-sampled integrands, lag_ds the
    trapezoid rule, and clt the exact one-step identity
    int_t^{t+h} (B_s - B_t) dB_s = ((dB)^2 - h)/2, so that
    lag_dB + lag_ds = B at every coarse node, up to rounding.
    """
    m = db.shape[-1]
    if m % n:
        raise ValueError("coarse grid must divide the fine grid")
    _check_resolution(n, m)
    K = m // n
    h = 1.0 / m
    i = np.arange(m) % K
    b = np.concatenate([np.zeros(db.shape[:-1] + (1,)), np.cumsum(db, axis=-1)], axis=-1)
    start = np.repeat(b[..., :-1][..., ::K], K, axis=-1)  # B at the last coarse node
    lag = b[..., :-1] - start
    w_lag = (i + 0.5) / K
    out = {
        "sawtooth": np.cumsum((w_lag - 0.5) * db, axis=-1),
        "lag_dB": np.cumsum(w_lag * db, axis=-1),
        "lag_ds": np.cumsum(n * h * (lag + 0.5 * db), axis=-1),
        "clt": math.sqrt(n) * np.cumsum(lag * db + 0.5 * (db * db - h), axis=-1),
        "B": b[..., 1:],
    }
    zero = np.zeros(db.shape[:-1] + (1,))
    return {k: np.concatenate([zero, v], axis=-1) for k, v in out.items()}


@dataclass(frozen=True)
class MomentRow:
    statistic: str
    t: float
    estimate: EstimateWithError
    target: float


def kurtz_protter_samples(n: int, m: int, count: int, stream: RandomStream,
                          times: Sequence[float] = (0.5, 1.0), osc_n: Optional[int] = None,
                          workers: int = 1) -> dict:
    """Per-replicate values at ``times`` of the coarse-grid processes, plus
    the sawtooth oscillating integral int f(n s) dB computed generically."""
    osc = sawtooth()
    idx = [int(round(t * m)) for t in times]
    osc_n = n if osc_n is None else osc_n
    wf = osc.weights(osc_n, m)

    def kernel(gen, size):
        db = brownian_increments(gen, m, size)
        procs = coarse_processes(db, n)
        procs["osc"] = np.concatenate([np.zeros((size, 1)), np.cumsum(wf * db, axis=-1)], axis=-1)
        return {f"{k}@{t}": v[:, j] for k, v in procs.items() for t, j in zip(times, idx)}

    return map_replicates(kernel, stream, count, block=256, workers=workers)


def kurtz_protter_statistics(n: int, m: int, count: int, stream: RandomStream,
                             workers: int = 1) -> list:
    """Variances and covariances with B of the coarse-grid statistics at
    t = 1/2 and t = 1, against their continuum values."""
    s = kurtz_protter_samples(n, m, count, stream, workers=workers)
    rows = []
    for t in (0.5, 1.0):
        b = s[f"B@{t}"]
        for name, var, cov in (("sawtooth", t / 12, 0.0), ("lag_dB", t / 3, t / 2),
                               ("lag_ds", t / 3, t / 2), ("clt", t / 2, 0.0), ("osc", t / 12, 0.0)):
            x = s[f"{name}@{t}"]
            rows.append(MomentRow(f"var_{name}", t, variance_with_se(x), var))
            rows.append(MomentRow(f"cov_{name}_B", t, covariance_with_se(x, b), cov))
    return rows


@dataclass(frozen=True)
class GaussianityReport:
    n: int
    ks: float
    ks_critical: float
    variance: EstimateWithError
    target_variance: float    # ||f||^2 a(1), the limit
    discrete_variance: float  # exact variance of the simulated construction


def interpolated_integral_variance(osc: OscillatorSpec, clock: TimeChangeClock, n: int, m: int,
                                   base_m: int) -> float:
    """Exact variance of sum_k f_k (M_{k+1} - M_k) when M is the linear
    interpolation at a(t_k) of a Brownian path on a base_m-step grid over
    [0, a(1)].  The sum is linear in the base increments, so its variance is
    the squared norm of the coefficient vector times the base step."""
    horizon = float(clock.a(np.asarray(1.0)))
    hb = horizon / base_m
    f = osc.weights(n, m)
    # summation by parts: coefficient of M_k is f_{k-1} - f_k (k < m), f_{m-1} at k = m
    cm = np.empty(m + 1)
    cm[0] = -f[0]
    cm[1:m] = f[:-1] - f[1:]
    cm[m] = f[-1]
    a = np.asarray(clock.a(np.linspace(0.0, 1.0, m + 1)), dtype=float)
    x = np.minimum(a / hb, base_m)
    j = np.minimum(np.floor(x).astype(int), base_m - 1)
    lam = x - j
    node = np.zeros(base_m + 1)
    np.add.at(node, j, cm * (1 - lam))
    np.add.at(node, j + 1, cm * lam)
    # B_j = sum_{i<j} dB_i, so increment i carries the tail sum of node weights
    g = np.cumsum(node[::-1])[::-1][1:]
    return float(math.fsum((g * g).tolist()) * hb)


def time_changed_gaussianity(osc: OscillatorSpec, clock: TimeChangeClock, n: int, m: int,
                             count: int, stream: RandomStream, base_mult: int = 4,
                             workers: int = 1) -> GaussianityReport:
    """KS distance of int_0^1 f(ns) dM_s, M = B o a built by interpolating a
    finer Brownian path, against N(0, ||f||^2 a(1))."""
    from scipy.stats import norm

    from .stochastics import ks_critical, ks_distance

    _check_resolution(n, m)
    horizon = float(clock.a(np.asarray(1.0)))
    mb = base_mult * m

    def kernel(gen, size):
        base = brownian_path(mb, gen=gen, count=size, horizon=horizon)
        mart = time_changed_path(base, clock, m)
        return {"I": oscillating_integral(osc, n, mart).values[:, -1]}

    x = map_replicates(kernel, stream, count, block=1024, workers=workers)["I"]
    var = osc.l2sq * horizon
    ks = ks_distance(x, lambda t: norm.cdf(t, scale=math.sqrt(var)))
    return GaussianityReport(n, ks, ks_critical(count), variance_with_se(x), var,
                             interpolated_integral_variance(osc, clock, n, m, mb))
