"""Finite Wiener chaos on a uniform grid: discrete iterated Ito sums, the
phase-modulated isometry R_n, the sharp gradient X^#, and the rotation
transform T_n.

A chaos element of order k stores its kernel as a short sum of separable
terms c_r g_{r,1}(s_1)...g_{r,k}(s_k) restricted to the strict simplex
j_1 < ... < j_k of grid cells.  Every quantity is then an iterated sum of
products, evaluated by a k-step running-sum recursion in O(k m) per path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .graduation import frac
from .paths import MIN_RESOLUTION, brownian_increments, midpoints
from .stochastics import (
    EstimateWithError,
    RandomStream,
    covariance_with_se,
    ks_critical,
    ks_distance,
    ks_two_sample,
    map_replicates,
    mean_with_se,
)

MAX_ORDER = 3


def iterated_sum(weights: Sequence[np.ndarray]) -> np.ndarray:
    """sum over j_1 < ... < j_k of w_1(j_1)...w_k(j_k); weights have the
    grid on the last axis and may carry leading replicate axes."""
    acc = None
    for w in weights:
        if acc is None:
            acc = np.cumsum(w, axis=-1)
        else:
            prev = np.concatenate([np.zeros_like(acc[..., :1]), acc[..., :-1]], axis=-1)
            acc = np.cumsum(w * prev, axis=-1)
    return acc[..., -1]


@dataclass(frozen=True)
class ChaosElement:
    """X = sum_{j_1<...<j_k} f(j_1..j_k) dB_{j_1}...dB_{j_k} with
    f = sum_r coefs[r] prod_p factors[r][p]."""

    k: int
    m: int
    coefs: tuple
    factors: tuple  # one tuple of k arrays (length m) per term
    name: str = "X"

    def __post_init__(self):
        if not 1 <= self.k <= MAX_ORDER:
            raise ValueError(f"order {self.k} outside 1..{MAX_ORDER}")
        if len(self.coefs) != len(self.factors):
            raise ValueError("one coefficient per separable term")
        for fs in self.factors:
            if len(fs) != self.k or any(np.shape(g) != (self.m,) for g in fs):
                raise ValueError("each term needs k factors of length m")

    def pair_sum(self, extra: Optional[Sequence[np.ndarray]] = None) -> complex:
        """sum over the simplex of |f|^2 prod_p extra[p](j_p)."""
        total = 0j
        for c, fs in zip(self.coefs, self.factors):
            for c2, gs in zip(self.coefs, self.factors):
                w = [fs[p] * np.conj(gs[p]) for p in range(self.k)]
                if extra is not None:
                    w = [w[p] * extra[p] for p in range(self.k)]
                total += c * np.conj(c2) * complex(iterated_sum(w))
        return total

    @property
    def norm_sq(self) -> float:
        return self.pair_sum().real / self.m ** self.k

    def scaled(self, a: complex) -> "ChaosElement":
        return ChaosElement(self.k, self.m, tuple(a * c for c in self.coefs), self.factors, self.name)

    def normalized(self) -> "ChaosElement":
        return self.scaled(1.0 / math.sqrt(self.norm_sq))

    def __add__(self, other: "ChaosElement") -> "ChaosElement":
        if (self.k, self.m) != (other.k, other.m):
            raise ValueError("can only add kernels of the same order and grid")
        return ChaosElement(self.k, self.m, self.coefs + other.coefs, self.factors + other.factors,
                            f"{self.name}+{other.name}")

    def dense(self) -> np.ndarray:
        """Kernel on the simplex as a dense array (small m only)."""
        out = 0
        for c, fs in zip(self.coefs, self.factors):
            t = c
            for g in fs:
                t = np.multiply.outer(t, g)
            out = out + t
        idx = np.indices((self.m,) * self.k)
        mask = np.all(idx[:-1] < idx[1:], axis=0) if self.k > 1 else np.ones(self.m, bool)
        return np.where(mask, out, 0)

    @classmethod
    def from_dense(cls, kernel, tol: float = 1e-12, name: str = "X") -> "ChaosElement":
        """Kernel given on the grid (k <= 2); any mass off the strict simplex
        is rejected."""
        f = np.asarray(kernel)
        if f.ndim == 1:
            return cls(1, f.size, (1.0,), ((f.astype(complex),),), name)
        if f.ndim != 2 or f.shape[0] != f.shape[1]:
            raise ValueError("dense kernels are supported for k <= 2 only")
        off = np.tril(f)
        scale = max(float(np.max(np.abs(f))), 1.0)
        if np.max(np.abs(off)) > tol * scale:
            raise ValueError("kernel has mass off the simplex j1 < j2")
        u, s, vh = np.linalg.svd(np.triu(f, 1))
        keep = s > tol * max(s[0], 1e-300)
        terms = tuple((u[:, r].astype(complex), vh[r].astype(complex)) for r in np.flatnonzero(keep))
        return cls(2, f.shape[0], tuple(float(v) for v in s[keep]), terms, name)


def constant_element(k: int, m: int, c: float = 1.0) -> ChaosElement:
    one = np.ones(m, dtype=complex)
    return ChaosElement(k, m, (c,), ((one,) * k,), f"const{k}")


def cosine_element(k: int, m: int, freq: int = 1) -> ChaosElement:
    """prod_p sqrt(2) cos(2 pi freq s_p), normalized to unit norm."""
    g = math.sqrt(2.0) * np.cos(2 * math.pi * freq * midpoints(m)).astype(complex)
    return ChaosElement(k, m, (1.0,), ((g,) * k,), f"cos{k}").normalized()


def mixed_element(m: int) -> ChaosElement:
    """Order-2 kernel with two separable terms of different shape."""
    s = midpoints(m).astype(complex)
    e = ChaosElement(2, m, (1.0, 0.5), ((np.ones(m, complex), s), (s, np.exp(-s))), "mixed2")
    return e.normalized()


CHAOS_KERNELS: dict[str, Callable[[int, int], ChaosElement]] = {
    "constant": lambda k, m: constant_element(k, m).normalized(),
    "cosine": lambda k, m: cosine_element(k, m),
    "mixed": lambda k, m: mixed_element(m),
}


def _grid_check(x: ChaosElement, increments: np.ndarray) -> None:
    if increments.shape[-1] != x.m:
        raise ValueError(f"path has {increments.shape[-1]} steps, kernel grid has {x.m}")


def _eval(x: ChaosElement, dx: np.ndarray, phase: Optional[np.ndarray] = None):
    out = 0
    for c, fs in zip(x.coefs, x.factors):
        w = [g * dx if phase is None else g * phase * dx for g in fs]
        out = out + c * iterated_sum(w)
    return out


def eval_chaos(x: ChaosElement, increments: np.ndarray):
    """X on paths given by their increments (grid on the last axis)."""
    _grid_check(x, increments)
    return _eval(x, increments)


@dataclass(frozen=True)
class PhaseFunction:
    """Unit-period theta, with the normalization used for R_n
    (mean 0, mean square 1) checked by quadrature unless bypassed."""

    f: Callable
    sup: float
    name: str = "theta"

    def check(self, nodes: int = 10 ** 5, tol: float = 1e-6) -> bool:
        v = self.f((np.arange(nodes) + 0.5) / nodes)
        return abs(float(np.mean(v))) <= tol and abs(float(np.mean(v * v)) - 1.0) <= tol


def sawtooth_phase() -> PhaseFunction:
    r = math.sqrt(12.0)
    return PhaseFunction(lambda x: r * (0.5 - frac(x)), r / 2, "sqrt12(1/2-{x})")


def zero_phase() -> PhaseFunction:
    return PhaseFunction(lambda x: np.zeros_like(np.asarray(x, dtype=float)), 0.0, "0")


def _phase(theta: PhaseFunction, n: int, m: int, check: bool) -> np.ndarray:
    if n > 0 and m < MIN_RESOLUTION * n:
        raise ValueError(f"grid m={m} does not resolve the oscillation at n={n}")
    if check and not theta.check():
        raise ValueError(f"phase function {theta.name} is not normalized")
    if n == 0:
        return np.ones(m, dtype=complex)
    return np.exp(1j * theta.f(n * midpoints(m)) / n)


def rn_transform(x: ChaosElement, n: int, increments: np.ndarray,
                 theta: Optional[PhaseFunction] = None, check: bool = True):
    """R_n(X): every increment dB_{s} is multiplied by exp(i theta(ns)/n)."""
    _grid_check(x, increments)
    theta = sawtooth_phase() if theta is None else theta
    return _eval(x, increments, _phase(theta, n, x.m, check))


def sharp_gradient(x: ChaosElement, db: np.ndarray, dw: np.ndarray):
    """X^# = sum_p (iterated sum with dB at slot p replaced by dW)."""
    _grid_check(x, db)
    _grid_check(x, dw)
    out = 0
    for c, fs in zip(x.coefs, x.factors):
        s = t = None
        for g in fs:
            wb, ww = g * db, g * dw
            if s is None:
                s_new, t_new = np.cumsum(wb, axis=-1), np.cumsum(ww, axis=-1)
            else:
                ps = np.concatenate([np.zeros_like(s[..., :1]), s[..., :-1]], axis=-1)
                pt = np.concatenate([np.zeros_like(t[..., :1]), t[..., :-1]], axis=-1)
                s_new = np.cumsum(wb * ps, axis=-1)
                t_new = np.cumsum(wb * pt + ww * ps, axis=-1)
            s, t = s_new, t_new
        out = out + c * t[..., -1]
    return out


@dataclass(frozen=True)
class Theorem9Value:
    n: int
    value: float
    target: float
    bound: float


def theorem9_limit(x: ChaosElement, n: int, theta: Optional[PhaseFunction] = None) -> Theorem9Value:
    """n^2 E|R_n X - X|^2 computed exactly from the kernel, with its limit
    k ||X||^2 and the domination bound k^2 ||X||^2 ||theta||_inf^2.

    Uses |e^{ia} - 1|^2 = 2 - e^{ia} - e^{-ia}, so every term is again an
    iterated sum of products."""
    theta = sawtooth_phase() if theta is None else theta
    ph = _phase(theta, n, x.m, False)
    base = x.pair_sum()
    plus = x.pair_sum([ph] * x.k)
    minus = x.pair_sum([np.conj(ph)] * x.k)
    val = n * n * (2 * base - plus - minus).real / x.m ** x.k
    norm = x.norm_sq
    return Theorem9Value(n, float(val), x.k * norm, x.k ** 2 * norm * theta.sup ** 2)


@dataclass(frozen=True)
class SharpMomentReport:
    n: int
    mean_real: EstimateWithError      # E Re(-i n (R_n X - X))
    mean_sharp: EstimateWithError     # E X^#
    second_real: EstimateWithError    # E Re(-i n (R_n X - X))^2
    second_sharp: EstimateWithError   # E (X^#)^2
    second_diff: EstimateWithError    # paired difference of the two
    target: float                     # k ||X||^2


def sharp_samples(x: ChaosElement, n: int, count: int, stream: RandomStream,
                  theta: Optional[PhaseFunction] = None, workers: int = 1) -> dict:
    theta = sawtooth_phase() if theta is None else theta
    ph = _phase(theta, n, x.m, True)

    def kernel(gen, size):
        db = brownian_increments(gen, x.m, size)
        dw = brownian_increments(gen, x.m, size)
        xv = _eval(x, db)
        z = -1j * n * (_eval(x, db, ph) - xv)
        return {"z": z, "sharp": np.real(sharp_gradient(x, db, dw)), "x": np.real(xv),
                "b1": db.sum(axis=-1)}

    return map_replicates(kernel, stream, count, block=512, workers=workers)


def sharp_moments(x: ChaosElement, n: int, count: int, stream: RandomStream,
                  theta: Optional[PhaseFunction] = None, workers: int = 1) -> SharpMomentReport:
    s = sharp_samples(x, n, count, stream, theta, workers)
    zr, sh = np.real(s["z"]), s["sharp"]
    return SharpMomentReport(n, mean_with_se(zr), mean_with_se(sh), mean_with_se(zr * zr),
                             mean_with_se(sh * sh), mean_with_se(zr * zr - sh * sh),
                             x.k * x.norm_sq)


# ---------------------------------------------------------------------------
# rotations


@dataclass(frozen=True)
class RotationSchedule:
    """Unit-period map s -> M_s into d x d orthogonal matrices."""

    matrices: Callable  # s array (m,) -> (m, d, d)
    d: int
    name: str = "M"

    def check(self, m: int = 1024, require_mean_zero: bool = True) -> None:
        mats = self.matrices(midpoints(m))
        eye = np.eye(self.d)
        err = np.max(np.abs(np.einsum("sji,sjk->sik", mats, mats) - eye))
        if err > 1e-12:
            raise ValueError(f"schedule {self.name} is not orthogonal (error {err:.2e})")
        if require_mean_zero and np.linalg.norm(mats.mean(axis=0)) >= 1e-10:
            raise ValueError(f"schedule {self.name} does not average to zero over a period")


def planar_rotation() -> RotationSchedule:
    """Rotation by angle 2 pi s in the plane."""

    def mats(s):
        a = 2 * math.pi * np.asarray(s, dtype=float)
        c, sn = np.cos(a), np.sin(a)
        return np.stack([np.stack([c, -sn], -1), np.stack([sn, c], -1)], -2)

    return RotationSchedule(mats, 2, "rot2pi")


def identity_schedule(d: int = 2) -> RotationSchedule:
    return RotationSchedule(lambda s: np.broadcast_to(np.eye(d), (np.size(s), d, d)), d, "I")


def rotate_increments(db: np.ndarray, schedule: RotationSchedule, n: int) -> np.ndarray:
    """Increments M_{ns_j} dB_j for db of shape (..., d, m)."""
    m = db.shape[-1]
    mats = schedule.matrices(n * midpoints(m))  # (m, d, d)
    return np.einsum("jab,...bj->...aj", mats, db)


def terminal_first_coordinate(db: np.ndarray):
    return db[..., 0, :].sum(axis=-1)


@dataclass(frozen=True)
class RotationReport:
    n: int
    ks: float
    ks_critical: float
    cov_with_b1: EstimateWithError
    mean: EstimateWithError


def rotation_transform(functional: Callable, schedule: RotationSchedule, n: int, m: int,
                       count: int, stream: RandomStream, reference_cdf: Optional[Callable] = None,
                       check: bool = True, workers: int = 1) -> RotationReport:
    """Law and independence diagnostics of T_n(X) = X(rotated increments).

    Without a reference cdf the marginal law is compared, by two-sample KS,
    with X itself evaluated on an independent batch of paths."""
    if schedule.d < 2:
        raise ValueError("the rotation transform needs d >= 2")
    if n > 0 and m < MIN_RESOLUTION * n:
        raise ValueError(f"grid m={m} does not resolve the oscillation at n={n}")
    if check:
        schedule.check(require_mean_zero=n > 0)
    d = schedule.d

    def kernel(gen, size):
        db = brownian_increments(gen, m, size, d)
        out = {"t": np.real(functional(rotate_increments(db, schedule, n))),
               "b1": db[:, 0, :].sum(axis=-1)}
        if reference_cdf is None:
            out["x"] = np.real(functional(brownian_increments(gen, m, size, d)))
        return out

    s = map_replicates(kernel, stream, count, block=1024, workers=workers)
    t = s["t"]
    if reference_cdf is None:
        ks = ks_two_sample(t, s["x"])
        crit = ks_critical(count // 2, 0.95)
    else:
        ks = ks_distance(t, reference_cdf)
        crit = ks_critical(count, 0.95)
    return RotationReport(n, ks, crit, covariance_with_se(t, s["b1"]), mean_with_se(t))
