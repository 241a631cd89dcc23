"""Euler scheme for the scalar mechanical system

    dX1 = f11(X2) dB + f12(X1, X2) ds
    dX2 = f22(X1, X2) ds

its scaled error n (X^n - X), and the linear limit equation for U driven by
B, an independent W and the Z processes

    dZ12 = dW/sqrt(12) + dB/2,   dZ21 = -dW/sqrt(12) + dB/2,   dZ22 = ds/2.

Brownian increments are rounded to multiples of 2^-40.  Partial sums of such
numbers are exact in double precision, so the coarse and fine schemes see
bitwise the same values of B at coarse nodes and Euler on constant
coefficients is exact, not merely exact up to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .paths import GridPath
from .stochastics import (
    EstimateWithError,
    RandomStream,
    covariance_with_se,
    map_replicates,
    mean_with_se,
    variance_with_se,
)

DYADIC = 2.0 ** 40
SQRT12 = math.sqrt(12.0)


# Constant coefficients and derivatives are returned as scalars; numpy
# broadcasting does the rest and the stepping loops stay cheap.
def _zero(x1, x2):
    return 0.0


def _one(x1, x2):
    return 1.0


@dataclass(frozen=True)
class SdeSystem:
    """Coefficients f(x1, x2) with gradients returning (d/dx1, d/dx2)."""

    name: str
    f11: Callable
    f12: Callable
    f22: Callable
    grad11: Callable
    grad12: Callable
    grad22: Callable
    x0: tuple = (0.0, 1.0)
    f21: Optional[Callable] = None
    probe: tuple = (-2.0, 2.0)  # sampled range for the derivative checks

    def validate(self, points: int = 41, rtol: float = 1e-4) -> None:
        g = np.linspace(*self.probe, points)
        x1, x2 = [a.ravel() for a in np.meshgrid(g, g)]
        if self.f21 is not None and np.any(np.asarray(self.f21(x1, x2)) != 0):
            raise ValueError(
                f"system {self.name}: a dB term in the X2 equation leaves the mechanical "
                "class; its Euler error is of order 1/sqrt(n), driven by "
                "sqrt(n) int (B - B_[ns]/n) dB, not by the 1/n limit of this module")
        if np.any(np.asarray(self.grad11(x1, x2)[0]) != 0):
            raise ValueError(f"system {self.name}: f11 must depend on x2 only")
        step = 1e-5
        for f, grad, label in ((self.f11, self.grad11, "f11"), (self.f12, self.grad12, "f12"),
                               (self.f22, self.grad22, "f22")):
            d1, d2 = (np.broadcast_to(np.asarray(v, dtype=float), x1.shape) for v in grad(x1, x2))
            fd1 = (np.asarray(f(x1 + step, x2)) - np.asarray(f(x1 - step, x2))) / (2 * step)
            fd2 = (np.asarray(f(x1, x2 + step)) - np.asarray(f(x1, x2 - step))) / (2 * step)
            for name, a, b in (("x1", d1, fd1), ("x2", d2, fd2)):
                if not np.allclose(a, b, rtol=rtol, atol=rtol):
                    raise ValueError(f"system {self.name}: d{label}/d{name} disagrees with finite differences")

    @property
    def is_constant(self) -> bool:
        g = np.linspace(*self.probe, 9)
        x1, x2 = [a.ravel() for a in np.meshgrid(g, g)]
        return all(np.all(np.asarray(v) == 0) for gr in (self.grad11, self.grad12, self.grad22)
                   for v in gr(x1, x2))


def constant_system() -> SdeSystem:
    zz = lambda x1, x2: (0.0, 0.0)
    return SdeSystem("constant", _one, _zero, _zero, zz, zz, zz, (0.0, 0.0))


def linear_system() -> SdeSystem:
    """f11 = x2, f12 = 0, f22 = x1 started from (0, 1)."""
    return SdeSystem(
        "linear",
        lambda x1, x2: x2,
        _zero,
        lambda x1, x2: x1,
        lambda x1, x2: (0.0, 1.0),
        lambda x1, x2: (0.0, 0.0),
        lambda x1, x2: (1.0, 0.0),
        (0.0, 1.0),
    )


def pendulum_system(sigma: float = 0.5, damping: float = 0.1) -> SdeSystem:
    """Velocity X1, position X2: dX1 = (-sin X2 - c X1) ds + sigma/(1+X2^2) dB."""
    return SdeSystem(
        "pendulum",
        lambda x1, x2: sigma / (1 + x2 * x2),
        lambda x1, x2: -np.sin(x2) - damping * x1,
        lambda x1, x2: x1,
        lambda x1, x2: (0.0, -2 * sigma * x2 / (1 + x2 * x2) ** 2),
        lambda x1, x2: (-damping, -np.cos(x2)),
        lambda x1, x2: (1.0, 0.0),
        (0.0, 1.0),
    )


def harmonic_system() -> SdeSystem:
    """Noise-free oscillator (f11 = 0, f12 = -x2, f22 = x1): Euler error of an ODE."""
    return SdeSystem(
        "harmonic",
        _zero,
        lambda x1, x2: -x2,
        lambda x1, x2: x1,
        lambda x1, x2: (0.0, 0.0),
        lambda x1, x2: (0.0, -1.0),
        lambda x1, x2: (1.0, 0.0),
        (0.0, 1.0),
    )


def generic_system() -> SdeSystem:
    """Has a dB term in the X2 equation; rejected by validate()."""
    s = linear_system()
    return SdeSystem("generic", s.f11, s.f12, s.f22, s.grad11, s.grad12, s.grad22, s.x0,
                     f21=lambda x1, x2: 0.5 * x1)


SDE_SYSTEMS: dict[str, Callable[[], SdeSystem]] = {
    "constant": constant_system,
    "linear": linear_system,
    "pendulum": pendulum_system,
    "harmonic": harmonic_system,
    "generic": generic_system,
}


def get_system(name: str) -> SdeSystem:
    try:
        sys = SDE_SYSTEMS[name]()
    except KeyError:
        raise ValueError(f"unknown system {name!r}; known: {', '.join(SDE_SYSTEMS)}") from None
    sys.validate()
    return sys


# ---------------------------------------------------------------------------
# noise


def dyadic(x: np.ndarray) -> np.ndarray:
    return np.round(x * DYADIC) / DYADIC


def fine_noise(gen: np.random.Generator, m: int, count: int, with_area: bool = False) -> dict:
    """Increments dB on the m-grid and, optionally, the time-weighted
    integrals J_j = int_{t_j}^{t_j+h} (s - t_j) dB_s drawn jointly
    (J = h dB / 2 + sqrt(h^3/12) N, independent N)."""
    h = 1.0 / m
    out = {"dB": dyadic(math.sqrt(h) * gen.standard_normal((count, m)))}
    if with_area:
        out["J"] = 0.5 * h * out["dB"] + math.sqrt(h ** 3 / 12) * gen.standard_normal((count, m))
    return out


@dataclass(frozen=True)
class ZDrivers:
    """Increments of W, B and the Z processes on one grid."""

    dW: np.ndarray
    dB: np.ndarray

    @property
    def m(self) -> int:
        return self.dB.shape[-1]

    @property
    def _w(self):
        # dyadic, so that Z12 + Z21 = B holds exactly, partial sums included
        return dyadic(self.dW / SQRT12)

    @property
    def dZ12(self):
        return self._w + 0.5 * self.dB

    @property
    def dZ21(self):
        return 0.5 * self.dB - self._w

    @property
    def dZ22(self):
        return 0.5 / self.m

    def paths(self) -> dict:
        z0 = np.zeros(self.dB.shape[:-1] + (1,))
        cum = lambda d: np.concatenate([z0, np.cumsum(d, axis=-1)], axis=-1)
        return {"B": cum(self.dB), "W": cum(self.dW), "Z12": cum(self.dZ12), "Z21": cum(self.dZ21),
                "Z22": np.broadcast_to(0.5 * np.linspace(0, 1, self.m + 1), z0.shape[:-1] + (self.m + 1,))}


def make_drivers(dB: np.ndarray, gen: np.random.Generator) -> ZDrivers:
    return ZDrivers(dyadic(math.sqrt(1.0 / dB.shape[-1]) * gen.standard_normal(dB.shape)), dB)


# ---------------------------------------------------------------------------
# schemes


def coarse_increments(dB: np.ndarray, n: int) -> np.ndarray:
    m = dB.shape[-1]
    if m % n:
        raise ValueError(f"fine grid {m} is not a multiple of the coarse grid {n}")
    return dB.reshape(dB.shape[:-1] + (n, m // n)).sum(axis=-1)


def _check_finite(x1, x2, k: int) -> None:
    if not (np.all(np.isfinite(x1)) and np.all(np.isfinite(x2))):
        raise FloatingPointError(f"coefficient overflow at step {k}")


def _euler(sys: SdeSystem, dB: np.ndarray, record: bool):
    steps = dB.shape[-1]
    h = 1.0 / steps
    x1 = np.full(dB.shape[:-1], float(sys.x0[0]))
    x2 = np.full(dB.shape[:-1], float(sys.x0[1]))
    rec = [(x1, x2)] if record else None
    for k in range(steps):
        a, b, c = sys.f11(x1, x2), sys.f12(x1, x2), sys.f22(x1, x2)
        x1, x2 = x1 + a * dB[..., k] + b * h, x2 + c * h
        _check_finite(x1, x2, k)
        if record:
            rec.append((x1, x2))
    return x1, x2, rec


def _to_paths(rec) -> tuple:
    return (GridPath(np.stack([r[0] for r in rec], axis=-1)),
            GridPath(np.stack([r[1] for r in rec], axis=-1)))


def interpolate(path: GridPath, m: int) -> GridPath:
    """Linear interpolation of a coarse path onto the m-grid."""
    t = np.linspace(0.0, 1.0, m + 1)
    src = path.times()
    v = np.apply_along_axis(lambda row: np.interp(t, src, row), -1, path.values)
    return GridPath(v, path.horizon)


def euler_solve(sys: SdeSystem, n: int, dB: np.ndarray, fine: bool = False) -> tuple:
    """Euler on the n-grid with the coarse increments of the fine dB; returns
    (X1, X2) on the fine grid (linear interpolation) or on the coarse grid."""
    _, _, rec = _euler(sys, coarse_increments(dB, n), True)
    p1, p2 = _to_paths(rec)
    if fine:
        m = dB.shape[-1]
        return interpolate(p1, m), interpolate(p2, m)
    return p1, p2


def _coeffs(sys: SdeSystem, x1, x2) -> tuple:
    """(f11, f12, f22, d2 f11, d1 f12, d2 f12, d1 f22, d2 f22) at X."""
    return ((sys.f11(x1, x2), sys.f12(x1, x2), sys.f22(x1, x2), sys.grad11(x1, x2)[1])
            + tuple(sys.grad12(x1, x2)) + tuple(sys.grad22(x1, x2)))


def _taylor_step(sys: SdeSystem, x1, x2, db, j, h, co=None):
    """One step with every term of order h^(3/2) kept (the h^2 ones too)."""
    a, b, c, a2, b1, b2, c1, c2 = _coeffs(sys, x1, x2) if co is None else co
    area = h * db - j  # int (B_s - B_t) ds over the step
    dx1 = a * db + b * h + a2 * c * j + b1 * (a * area + 0.5 * b * h * h) + 0.5 * b2 * c * h * h
    dx2 = c * h + c1 * (a * area + 0.5 * b * h * h) + 0.5 * c2 * c * h * h
    return x1 + dx1, x2 + dx2


def reference_solve(sys: SdeSystem, refine: int, dB: np.ndarray, J: Optional[np.ndarray] = None,
                    n: Optional[int] = None) -> tuple:
    """Proxy for the exact solution on the fine grid of dB.

    With J=None this is Euler on the fine grid.  With J (the per-step
    integrals of (s - t_j) dB) it is the order-3/2 Taylor scheme, whose own
    error is o(1/m), so it does not bias n (X^n - X) at finite refine."""
    m = dB.shape[-1]
    if refine < 64:
        raise ValueError("refine must be at least 64")
    if n is not None and m != refine * n:
        raise ValueError(f"fine grid {m} differs from refine*n = {refine * n}")
    if J is None:
        _, _, rec = _euler(sys, dB, True)
        return _to_paths(rec)
    h = 1.0 / m
    x1 = np.full(dB.shape[:-1], float(sys.x0[0]))
    x2 = np.full(dB.shape[:-1], float(sys.x0[1]))
    rec = [(x1, x2)]
    for k in range(m):
        x1, x2 = _taylor_step(sys, x1, x2, dB[..., k], J[..., k], h)
        _check_finite(x1, x2, k)
        rec.append((x1, x2))
    return _to_paths(rec)


def scaled_error(n: int, coarse: GridPath, reference: GridPath) -> GridPath:
    """n (X^n - X_ref) at the nodes of the coarse path, where the scheme is
    defined; a fine reference is subsampled onto them."""
    ref = reference.values
    if coarse.m != reference.m:
        if reference.m % coarse.m:
            raise ValueError("coarse and reference paths live on incompatible grids")
        ref = ref[..., :: reference.m // coarse.m]
    if coarse.values.shape != ref.shape:
        raise ValueError("coarse and reference paths have different shapes")
    return GridPath(n * (coarse.values - ref), coarse.horizon)


def limit_sde_solve(sys: SdeSystem, drivers: ZDrivers, x1: GridPath, x2: GridPath) -> tuple:
    """Euler solution (U1, U2) of the linear limit equation along X."""
    for g in (sys.grad11, sys.grad12, sys.grad22):
        if g is None:
            raise ValueError("limit equation needs all coefficient gradients")
    m = drivers.m
    if x1.m != m:
        raise ValueError("X path and drivers use different grids")
    h = 1.0 / m
    shape = drivers.dB.shape[:-1]
    u1, u2 = np.zeros(shape), np.zeros(shape)
    rec = [(u1, u2)]
    dz12, dz21 = drivers.dZ12, drivers.dZ21
    for k in range(m):
        u1, u2 = _limit_step(sys, x1.values[..., k], x2.values[..., k], u1, u2,
                             drivers.dB[..., k], dz12[..., k], dz21[..., k], 0.5 * h, h)
        rec.append((u1, u2))
    return _to_paths(rec)


def _limit_step(sys, x1, x2, u1, u2, db, dz12, dz21, dz22, h, co=None):
    a, b, c, a2, b1, b2, c1, c2 = _coeffs(sys, x1, x2) if co is None else co
    du1 = (a2 * u2 * db + (b1 * u1 + b2 * u2) * h
           - a2 * c * dz21 - b1 * (a * dz12 + b * dz22) - b2 * c * dz22)
    du2 = (c1 * u1 + c2 * u2) * h - c1 * (a * dz12 + b * dz22) - c2 * c * dz22
    return u1 + du1, u2 + du2


# ---------------------------------------------------------------------------
# comparison


def _terminal_kernel(sys: SdeSystem, ladder: Sequence[int], m: int, scheme: str):
    taylor = scheme == "taylor15"
    h = 1.0 / m

    def kernel(gen, size):
        # time-major noise so that each step reads a contiguous row
        dbt = dyadic(math.sqrt(h) * gen.standard_normal((m, size)))
        jt = (0.5 * h * dbt + math.sqrt(h ** 3 / 12) * gen.standard_normal((m, size))) if taylor else None
        dwt = dyadic(math.sqrt(h) * gen.standard_normal((m, size)))
        x1 = np.full(size, float(sys.x0[0]))
        x2 = np.full(size, float(sys.x0[1]))
        u1, u2 = np.zeros(size), np.zeros(size)
        for k in range(m):
            dbk = dbt[k]
            wk = dyadic(dwt[k] / SQRT12)
            dz12 = wk + 0.5 * dbk
            dz21 = 0.5 * dbk - wk
            co = _coeffs(sys, x1, x2)
            u1, u2 = _limit_step(sys, x1, x2, u1, u2, dbk, dz12, dz21, 0.5 * h, h, co)
            if taylor:
                x1, x2 = _taylor_step(sys, x1, x2, dbk, jt[k], h, co)
            else:
                x1, x2 = x1 + co[0] * dbk + co[1] * h, x2 + co[2] * h
            if k % 64 == 63:
                _check_finite(x1, x2, k)
        out = {"X1": x1, "X2": x2, "U1": u1, "U2": u2, "B1": dbt.sum(axis=0)}
        for n in ladder:
            e1, e2, _ = _euler(sys, coarse_increments(dbt.T, n), False)
            out[f"err1@{n}"] = n * (e1 - x1)
            out[f"err2@{n}"] = n * (e2 - x2)
        return out

    return kernel


def error_samples(sys: SdeSystem, ladder: Sequence[int], m: int, count: int, stream: RandomStream,
                  scheme: str = "taylor15", workers: int = 1) -> dict:
    """Per-replicate terminal values of n (X^n - X) for every n of the ladder,
    of U, X and B_1, on shared noise.  ``scheme`` picks the reference."""
    if scheme not in ("euler", "taylor15"):
        raise ValueError(f"unknown reference scheme {scheme!r}")
    sys.validate()
    for n in ladder:
        if m % n or m // n < 64:
            raise ValueError(f"fine grid {m} must be a multiple of 64n for n={n}")
    return map_replicates(_terminal_kernel(sys, list(ladder), m, scheme), stream, count,
                          block=2048, workers=workers)


@dataclass(frozen=True)
class MomentComparison:
    statistic: str
    n: int
    error: EstimateWithError
    limit: EstimateWithError

    @property
    def z(self) -> float:
        se = math.hypot(self.error.std_error, self.limit.std_error)
        d = self.error.value - self.limit.value
        return 0.0 if se == 0 and d == 0 else (math.inf if se == 0 else d / se)


@dataclass(frozen=True)
class ErrorLawReport:
    system: str
    ladder: tuple
    comparisons: tuple
    sqrt_n_rms: tuple  # RMS of sqrt(n)(X^n - X)_1 per n
    max_abs_error: float
    extra: dict = field(default_factory=dict)


def error_law_comparison(sys: SdeSystem, ladder: Sequence[int], count: int, stream: RandomStream,
                         m: Optional[int] = None, scheme: str = "taylor15",
                         component: int = 1, workers: int = 1) -> ErrorLawReport:
    """Mean, variance and covariance with B_1 of n (X^n - X)_1 against the
    simulated law of U_1, for every n of the ladder."""
    ladder = tuple(ladder)
    m = 64 * max(ladder) if m is None else m
    s = error_samples(sys, ladder, m, count, stream, scheme, workers)
    u, b = s[f"U{component}"], s["B1"]
    rows, rms = [], []
    lim = {"mean": mean_with_se(u), "var": variance_with_se(u), "cov_B1": covariance_with_se(u, b)}
    worst = 0.0
    for n in ladder:
        e = s[f"err{component}@{n}"]
        worst = max(worst, float(np.max(np.abs(e))))
        got = {"mean": mean_with_se(e), "var": variance_with_se(e), "cov_B1": covariance_with_se(e, b)}
        rows.extend(MomentComparison(k, n, got[k], lim[k]) for k in ("mean", "var", "cov_B1"))
        rms.append(math.sqrt(float(np.mean(e * e)) / n))
    return ErrorLawReport(sys.name, ladder, tuple(rows), tuple(rms), worst)
