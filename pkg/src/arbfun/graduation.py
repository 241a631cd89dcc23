"""Rounding to a graduated scale and Monte-Carlo estimators of the bias
operators and of the square field operator it induces.

Nearest graduation maps ``y`` to the midpoint lattice ``([n y] + 1/2)/n``,
so ``n (Y_n - Y) = theta(n Y)`` with ``theta(x) = 1/2 - {x}``.  With
``alpha_n = n^2`` the limits are

* theoretical bias ``Abar[phi] = lap(phi)/24``,
* symmetric bias ``Atilde[phi] = lap(phi)/24 + grad(phi).rho/24``,
* square field ``Gamma[phi] = |grad phi|^2 / 12``,

whenever the law of ``Y`` has a log-density gradient ``rho``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .stochastics import (
    DistributionSpec,
    EstimateWithError,
    RandomStream,
    TestFunction,
    map_replicates,
    mean_with_se,
    product_function,
    richardson,
    snapped_floor,
)


def frac(x):
    """Fractional part in [0, 1)."""
    x = np.asarray(x, dtype=float)
    fl = snapped_floor(x)
    # snapped points (fl may sit a few ulps above x) are integers
    out = np.where(fl == np.floor(x), x - fl, 0.0)
    out = np.where((out >= 1.0) | (out < 0.0), 0.0, out)
    return float(out) if out.ndim == 0 else out


def theta(x):
    """1/2 - {x}, values in (-1/2, 1/2]."""
    out = 0.5 - np.asarray(frac(x))
    return float(out) if out.ndim == 0 else out


class MapKind(str, enum.Enum):
    NEAREST = "nearest"
    DEFAULT = "default"
    EXCESS = "excess"
    GENERAL = "general"


@dataclass(frozen=True)
class GraduationMap:
    kind: MapKind = MapKind.NEAREST
    # general maps: y_n = y + displacement(y, n)
    displacement: Optional[Callable] = None

    @classmethod
    def nearest(cls):
        return cls(MapKind.NEAREST)

    @classmethod
    def default(cls):
        return cls(MapKind.DEFAULT)

    @classmethod
    def excess(cls):
        return cls(MapKind.EXCESS)

    @classmethod
    def general(cls, displacement: Callable):
        return cls(MapKind.GENERAL, displacement)


def graduate(y, n: int, gmap: GraduationMap = GraduationMap()):
    """Read ``y`` on a scale of spacing 1/n."""
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    y = np.asarray(y, dtype=float)
    kind = MapKind(gmap.kind)
    if kind is MapKind.NEAREST:
        out = (snapped_floor(n * y) + 0.5) / n
    elif kind is MapKind.DEFAULT:
        out = snapped_floor(n * y) / n
    elif kind is MapKind.EXCESS:
        out = -snapped_floor(-n * y) / n
    else:
        if gmap.displacement is None:
            raise ValueError("general graduation needs a displacement")
        out = y + gmap.displacement(y, n)
    return float(out) if out.ndim == 0 else out


class BiasKind(str, enum.Enum):
    THEORETICAL = "H1"
    PRACTICAL = "H2"
    SYMMETRIC = "H3"
    SINGULAR = "H4"
    GAMMA = "gamma"


def _reflect(y, n):
    """Mirror of y about its graduation mark (an involution of each cell)."""
    return 2.0 * graduate(y, n) - y


def _reflection_weights(dist: DistributionSpec, y, y_ref):
    p, q = dist.pdf(y), dist.pdf(y_ref)
    if np.ndim(p) > 1:
        p, q = np.prod(p, axis=-1), np.prod(q, axis=-1)
    a = p / (p + q)
    return a, 1.0 - a


def bias_terms(phi: TestFunction, chi: TestFunction, y, y_n, alpha: float) -> dict:
    """Per-replicate integrands of the four bias hypotheses and of Gamma,
    all built from the same (y, y_n) pairs."""
    d = phi(y_n) - phi(y)
    cy, cn = chi(y), chi(y_n)
    return {
        BiasKind.THEORETICAL: alpha * d * cy,
        BiasKind.PRACTICAL: -alpha * d * cn,
        BiasKind.SYMMETRIC: alpha * d * (cn - cy),
        BiasKind.SINGULAR: alpha * d * (cn + cy),
        BiasKind.GAMMA: alpha * d * d * (cn + cy) / 2,
    }


def _bias_kernel(phi, chi, dist, n, alpha, reflection):
    def kernel(gen, size):
        y = dist.sample(gen, size)
        yn = graduate(y, n)
        terms = bias_terms(phi, chi, y, yn, alpha)
        if reflection:
            yr = _reflect(y, n)
            a, b = _reflection_weights(dist, y, yr)
            mirror = bias_terms(phi, chi, yr, yn, alpha)
            terms = {k: a * terms[k] + b * mirror[k] for k in terms}
        return {k.value: v for k, v in terms.items()}

    return kernel


def bias_samples(phi: TestFunction, chi: TestFunction, dist: DistributionSpec, n: int,
                 count: int, stream: RandomStream, alpha: Optional[float] = None,
                 reflection: bool = False, workers: int = 1) -> dict:
    """Per-replicate values of every bias integrand under common random
    numbers (same draws of Y for all kinds).

    ``reflection=True`` pairs each draw with its mirror image in the same
    graduation cell, reweighted by the density ratio (balance heuristic),
    which removes the O(n) oscillating first-order term from the variance
    while keeping the estimator unbiased.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    alpha = float(n) ** 2 if alpha is None else float(alpha)
    if alpha <= 0:
        raise ValueError("alpha_n must be positive")
    if reflection and not dist.has_density:
        raise ValueError("reflection sampling needs a law with a density")
    out = map_replicates(_bias_kernel(phi, chi, dist, n, alpha, reflection), stream, count,
                         workers=workers)
    return {BiasKind(k): v for k, v in out.items()}


def bias_estimate(kind: BiasKind, phi: TestFunction, chi: TestFunction, dist: DistributionSpec,
                  n: int, count: int, stream: RandomStream, alpha: Optional[float] = None,
                  reflection: bool = False, workers: int = 1) -> EstimateWithError:
    """Monte-Carlo value of the chosen bias integrand at fixed n.

    For the symmetric kind the raw limit ``-2 E[Atilde[phi] chi]`` is
    returned; dividing by -2 is left to the caller.
    """
    s = bias_samples(phi, chi, dist, n, count, stream, alpha, reflection, workers)
    return mean_with_se(s[BiasKind(kind)])


def gamma_estimate(phi: TestFunction, dist: DistributionSpec, n: int, count: int,
                   stream: RandomStream, workers: int = 1) -> EstimateWithError:
    """n^2 E[(phi(Y_n) - phi(Y))^2]; compare with E[|grad phi|^2]/12."""
    one = _one(phi)
    return bias_estimate(BiasKind.GAMMA, phi, one, dist, n, count, stream, workers=workers)


def _one(phi: TestFunction) -> TestFunction:
    if phi.dim is None:
        return TestFunction("1", lambda y: np.ones_like(np.asarray(y, dtype=float)),
                            lambda y: np.zeros_like(np.asarray(y, dtype=float)),
                            lambda y: np.zeros_like(np.asarray(y, dtype=float)))
    d = phi.dim
    return TestFunction("1", lambda y: np.ones(np.shape(y)[:-1]),
                        lambda y: np.zeros(np.shape(y)), lambda y: np.zeros(np.shape(y) + (d,)),
                        dim=d)


def ladder_samples(kind: BiasKind, phi: TestFunction, chi: TestFunction, dist: DistributionSpec,
                   ladder: Sequence[int], count: int, stream: RandomStream,
                   alpha: Optional[Callable[[int], float]] = None, reflection: bool = False,
                   workers: int = 1) -> list:
    """Per-replicate integrands on an n-ladder with the same Y draws at
    every rung (common random numbers across n)."""
    return [bias_samples(phi, chi, dist, n, count, stream,
                         None if alpha is None else alpha(n), reflection, workers)[BiasKind(kind)]
            for n in ladder]


def extrapolated(per_n: list, ladder: Sequence[int]) -> EstimateWithError:
    return mean_with_se(richardson(per_n, ladder))


def scaled_error_samples(dist: DistributionSpec, n: int, count: int, stream: RandomStream,
                         gmap: GraduationMap = GraduationMap()) -> np.ndarray:
    """Draws of n (Y_n - Y); equals theta(nY) for nearest graduation."""
    if n < 1:
        raise ValueError("n must be >= 1")
    y = dist.sample(stream.generator(), count)
    if MapKind(gmap.kind) is MapKind.NEAREST:
        # exact form: no cancellation in graduate(y) - y
        return theta(n * y)
    return n * (graduate(y, n, gmap) - y)


def conditional_bias_curve(phi: TestFunction, n: int, y_grid) -> np.ndarray:
    """n^2 (phi(y + theta(ny)/n) - phi(y)); a version of the conditional
    bias that does not depend on the law of Y."""
    y = np.asarray(y_grid, dtype=float)
    return n * n * (phi(graduate(y, n)) - phi(y))


def pair_with(phi: TestFunction, chi: TestFunction, n: int, lo: float, hi: float,
              nodes_per_cell: int = 64) -> float:
    """Midpoint-rule integral of the conditional bias curve against chi on
    [lo, hi]; the mesh is aligned with the graduation cells so the jumps of
    theta fall on node boundaries."""
    a = math.floor(lo * n) / n
    b = math.ceil(hi * n) / n
    cells = int(round((b - a) * n))
    m = cells * nodes_per_cell
    h = (b - a) / m
    y = a + (np.arange(m) + 0.5) * h
    vals = conditional_bias_curve(phi, n, y) * chi(y)
    return float(math.fsum(vals.tolist()) * h)


def laplacian_pairing(phi: TestFunction, chi: TestFunction, lo: float, hi: float) -> float:
    """Oracle: integral of lap(phi)/24 * chi by adaptive quadrature."""
    from scipy.integrate import quad

    return quad(lambda y: float(phi.laplacian(np.asarray(y)) * chi(np.asarray(y))) / 24.0,
                lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200)[0]


def first_order_samples(phi: TestFunction, psi: TestFunction, chi: TestFunction,
                        dist: DistributionSpec, n: int, count: int, stream: RandomStream,
                        alpha: Optional[float] = None, workers: int = 1) -> np.ndarray:
    """Per-replicate product-rule defect of the singular bias operator:
    H4 pairing of (phi psi) minus those of phi against psi chi and of psi
    against phi chi (each H4 integrand halved so its limit is E[Ahat chi])."""
    alpha = float(n) ** 2 if alpha is None else float(alpha)
    phipsi = product_function(phi, psi)
    psichi = product_function(psi, chi)
    phichi = product_function(phi, chi)

    def kernel(gen, size):
        y = dist.sample(gen, size)
        yn = graduate(y, n)

        def h4(f, g):
            return 0.5 * alpha * (f(yn) - f(y)) * (g(yn) + g(y))

        return {"defect": h4(phipsi, chi) - h4(phi, psichi) - h4(psi, phichi)}

    return map_replicates(kernel, stream, count, workers=workers)["defect"]


def first_order_check(phi: TestFunction, psi: TestFunction, dist: DistributionSpec, n: int,
                      count: int, stream: RandomStream, chi: Optional[TestFunction] = None,
                      alpha: Optional[float] = None, workers: int = 1) -> EstimateWithError:
    """Estimate of E[(Ahat[phi psi] - Ahat[phi] psi - phi Ahat[psi]) chi] at
    fixed n.  With chi constant the defect vanishes identically."""
    chi = _one(phi) if chi is None else chi
    return mean_with_se(first_order_samples(phi, psi, chi, dist, n, count, stream, alpha, workers))


def _normaliser(f: TestFunction, dist: DistributionSpec, y) -> float:
    """E[f(Y)], by quadrature when the law has a density, else sample mean."""
    if dist.has_density and dist.dim == 1:
        from scipy.integrate import quad

        return quad(lambda t: float(f(np.asarray(t)) * dist.pdf(np.asarray(t))),
                    -np.inf, np.inf, epsabs=1e-13, epsrel=1e-12, limit=400)[0]
    return float(np.mean(f(y)))


@dataclass(frozen=True)
class GirsanovCheck:
    weighted: EstimateWithError  # n^2 E_1[(phi(Y_n)-phi(Y))^2]
    formula: EstimateWithError   # E_1[|grad phi|^2/12]
    difference: EstimateWithError  # paired per-replicate difference

    @property
    def z(self) -> float:
        return self.difference.z_score(0.0)


def girsanov_gamma_check(phi: TestFunction, weight: TestFunction, dist: DistributionSpec,
                         n: int, count: int, stream: RandomStream,
                         workers: int = 1) -> GirsanovCheck:
    """Square field operator under P_1 = f.P, estimated two ways on the same
    draws: from the rounding increments and from the |grad phi|^2/12 formula.
    ``weight`` is normalised internally to E[f(Y)] = 1."""
    alpha = float(n) ** 2

    def kernel(gen, size):
        y = dist.sample(gen, size)
        fy = weight(y)
        if np.any(fy <= 0):
            raise ValueError("weight must be positive on the sampled set")
        yn = graduate(y, n)
        d = phi(yn) - phi(y)
        return {"w": fy * alpha * d * d, "g": fy * phi.grad_sq(y) / 12.0}

    out = map_replicates(kernel, stream, count, workers=workers)
    z = _normaliser(weight, dist, None)
    w, g = out["w"] / z, out["g"] / z
    return GirsanovCheck(mean_with_se(w), mean_with_se(g), mean_with_se(w - g))


def general_graduation_bias(phi: TestFunction, displacement: Callable, alpha: float,
                            dist: DistributionSpec, n: int, count: int, stream: RandomStream,
                            chi: Optional[TestFunction] = None, kind: BiasKind = BiasKind.THEORETICAL,
                            workers: int = 1) -> EstimateWithError:
    """Bias integrand for Y_n = Y + displacement(Y, n).

    The displacement family is assumed to satisfy the usual moment
    conditions (third moment o(1/alpha_n), second moment giving gamma,
    first moment o(1/alpha_n)); this is not checked.
    """
    chi = _one(phi) if chi is None else chi
    gmap = GraduationMap.general(displacement)

    def kernel(gen, size):
        y = dist.sample(gen, size)
        yn = graduate(y, n, gmap)
        return {k.value: v for k, v in bias_terms(phi, chi, y, yn, alpha).items()}

    out = map_replicates(kernel, stream, count, workers=workers)
    return mean_with_se(out[BiasKind(kind).value])


def scaled_theta_displacement(c: float = 1.0) -> Callable:
    """y -> c theta(n y)/n; gamma = c^2/12 times the identity."""

    def disp(y, n):
        return c * theta(n * np.asarray(y, dtype=float)) / n

    return disp


@dataclass(frozen=True)
class DefaultShift:
    shift: EstimateWithError      # n E[Y_n^(d) - Y]       -> -1/2
    symmetric: EstimateWithError  # H3 integrand, alpha=n  -> 0
    per_n_shift: tuple = ()
    per_n_symmetric: tuple = ()


def shift_bias_default(dist: DistributionSpec, ladder: Sequence[int], count: int,
                       stream: RandomStream, phi: Optional[TestFunction] = None,
                       chi: Optional[TestFunction] = None, workers: int = 1) -> DefaultShift:
    """Rounding by default with alpha_n = n on an n-ladder.  Both
    statistics are Richardson-extrapolated across the ladder (common Y
    draws), which removes the O(1/n) drift of the symmetric term."""
    from .stochastics import sin_fn

    phi = sin_fn() if phi is None else phi
    chi = sin_fn() if chi is None else chi
    ladder = list(ladder)

    def kernel(gen, size):
        y = dist.sample(gen, size)
        out = {}
        for n in ladder:
            yd = graduate(y, n, GraduationMap.default())
            d = phi(yd) - phi(y)
            out[f"shift{n}"] = n * (yd - y)
            out[f"sym{n}"] = n * d * (chi(yd) - chi(y))
        return out

    s = map_replicates(kernel, stream, count, workers=workers)
    shifts = [s[f"shift{n}"] for n in ladder]
    syms = [s[f"sym{n}"] for n in ladder]
    if len(ladder) == 1:
        return DefaultShift(mean_with_se(shifts[0]), mean_with_se(syms[0]),
                            (mean_with_se(shifts[0]),), (mean_with_se(syms[0]),))
    return DefaultShift(extrapolated(shifts, ladder), extrapolated(syms, ladder),
                        tuple(mean_with_se(v) for v in shifts), tuple(mean_with_se(v) for v in syms))


def sharp_samples(phi: TestFunction, dist: DistributionSpec, count: int,
                  stream: RandomStream) -> np.ndarray:
    """phi# = sum_i V_i phi'_i(Y) with V uniform on (-1/2, 1/2)^d independent of Y."""
    gen = stream.generator()
    y = dist.sample(gen, count)
    v = gen.random(np.shape(y)) - 0.5
    return phi.grad_dot(y, v)


def locality_samples(phi: TestFunction, dist: DistributionSpec, n: int, count: int,
                     stream: RandomStream) -> np.ndarray:
    """n^2 (phi(Y_n) - phi(Y))^4; its mean must vanish like 1/n^2."""
    y = dist.sample(stream.generator(), count)
    d = phi(graduate(y, n)) - phi(y)
    return n * n * d ** 4
