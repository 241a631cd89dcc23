"""Random streams, distributions, test functions and the Monte-Carlo
estimators shared by every experiment.

Streams are counter-based (Philox), keyed by ``(seed, stream_id)``, so a
replicate block is a pure function of its key.  All reductions go through
``math.fsum`` which is exactly rounded and therefore independent of the
order in which partial results arrive.
"""

from __future__ import annotations

import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

MASK64 = (1 << 64) - 1

# Monte-Carlo work is split in blocks of this many replicates.  The block
# layout, not the worker count, determines which random numbers feed which
# replicate.
DEFAULT_BLOCK = 4096


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class RandomStream:
    """A reproducible source of randomness identified by ``(seed, stream_id)``."""

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = (self.seed & MASK64) | ((self.stream_id & MASK64) << 64)
        return np.random.Generator(np.random.Philox(key=key))

    def substream(self, index: int) -> "RandomStream":
        """Child stream; distinct indices give distinct Philox keys."""
        return RandomStream(self.seed, _splitmix64(self.stream_id ^ _splitmix64(index + 1)))

    def spawn(self, *path: int) -> "RandomStream":
        s = self
        for p in path:
            s = s.substream(p)
        return s


def derive_stream(seed: int, stream_id: int = 0) -> RandomStream:
    return RandomStream(int(seed), int(stream_id))


_ACTIVE_KERNEL = None


def _run_block(kernel, stream: RandomStream, block: int, size: int):
    # copy: a view into a large per-block work array would keep it alive
    out = kernel(stream.substream(block).generator(), size)
    return {k: np.array(v, copy=True) for k, v in out.items()}


def _run_forked(stream: RandomStream, block: int, size: int):
    return _run_block(_ACTIVE_KERNEL, stream, block, size)


def map_replicates(kernel: Callable, stream: RandomStream, count: int, *,
                   block: int = DEFAULT_BLOCK, workers: int = 1) -> dict:
    """Evaluate ``kernel(generator, size) -> dict of per-replicate arrays``
    over ``count`` replicates and concatenate the blocks in order.

    The result depends on ``(stream, count, block)`` only; ``workers`` just
    spreads the blocks over forked processes.
    """
    global _ACTIVE_KERNEL
    if count < 1:
        raise ValueError("count must be >= 1")
    sizes = [min(block, count - b * block) for b in range(-(-count // block))]
    if workers > 1 and len(sizes) > 1:
        _ACTIVE_KERNEL = kernel
        try:
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
                parts = list(pool.map(_run_forked, [stream] * len(sizes), range(len(sizes)), sizes))
        finally:
            _ACTIVE_KERNEL = None
    else:
        parts = [_run_block(kernel, stream, b, s) for b, s in enumerate(sizes)]
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


# ---------------------------------------------------------------------------
# reductions and estimators


def exact_sum(values) -> float:
    """Order-independent sum (exactly rounded)."""
    return math.fsum(np.asarray(values, dtype=float).ravel().tolist())


@dataclass(frozen=True)
class EstimateWithError:
    value: float
    std_error: float
    replicates: int

    def z_score(self, target: float) -> float:
        if self.std_error > 0:
            return (self.value - target) / self.std_error
        return 0.0 if self.value == target else math.copysign(math.inf, self.value - target)

    def within(self, target: float, k: float = 3.0, slack: float = 0.0) -> bool:
        return abs(self.value - target) <= k * self.std_error + slack


@dataclass(frozen=True)
class ComplexEstimate:
    """Real and imaginary parts, each with its own standard error."""

    real: EstimateWithError
    imag: EstimateWithError

    @property
    def value(self) -> complex:
        return complex(self.real.value, self.imag.value)


def mean_with_se(samples) -> EstimateWithError:
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    if n < 2:
        raise ValueError("mean_with_se needs at least 2 samples")
    mean = exact_sum(x) / n
    var = exact_sum((x - mean) ** 2) / (n - 1)
    return EstimateWithError(mean, math.sqrt(var / n), n)


def complex_mean_with_se(samples) -> ComplexEstimate:
    z = np.asarray(samples)
    return ComplexEstimate(mean_with_se(z.real), mean_with_se(np.imag(z)))


def covariance(x, y) -> float:
    """Unbiased sample covariance."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ValueError("covariance needs at least 2 samples")
    mx = exact_sum(x) / x.size
    my = exact_sum(y) / y.size
    return exact_sum((x - mx) * (y - my)) / (x.size - 1)


def covariance_with_se(x, y) -> EstimateWithError:
    """Covariance with a delta-method standard error (means plugged in)."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    n = x.size
    mx = exact_sum(x) / n
    my = exact_sum(y) / n
    est = mean_with_se((x - mx) * (y - my))
    scale = n / (n - 1)
    return EstimateWithError(est.value * scale, est.std_error * scale, n)


def variance_with_se(x) -> EstimateWithError:
    return covariance_with_se(x, x)


def difference_z(a: EstimateWithError, b: EstimateWithError) -> float:
    """z-score of ``a - b`` treating the two estimates as independent."""
    se = math.hypot(a.std_error, b.std_error)
    d = a.value - b.value
    if se == 0:
        return 0.0 if d == 0 else math.copysign(math.inf, d)
    return d / se


def richardson_weights(ladder: Sequence[int]) -> np.ndarray:
    """Weights w with sum(w)=1 cancelling the 1/n, ..., 1/n^(L-1) terms."""
    inv = 1.0 / np.asarray(ladder, dtype=float)
    L = inv.size
    A = np.vander(inv, L, increasing=True).T
    rhs = np.zeros(L)
    rhs[0] = 1.0
    return np.linalg.solve(A, rhs)


def richardson(per_n: Sequence, ladder: Sequence[int]) -> np.ndarray:
    """Per-replicate Richardson extrapolation of values computed on a ladder."""
    w = richardson_weights(ladder)
    out = w[0] * np.asarray(per_n[0])
    for wi, v in zip(w[1:], per_n[1:]):
        out = out + wi * np.asarray(v)
    return out


def ks_distance(samples, reference_cdf: Callable) -> float:
    """Sup distance between the empirical cdf of ``samples`` and
    ``reference_cdf``.  Jumps of the reference are handled by also
    comparing left limits at every sample point."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise ValueError("ks_distance of an empty sample")
    ecdf_right = np.searchsorted(x, x, side="right") / n
    ecdf_left = np.searchsorted(x, x, side="left") / n
    ref_right = np.asarray(reference_cdf(x), dtype=float)
    ref_left = np.asarray(reference_cdf(np.nextafter(x, -np.inf)), dtype=float)
    d = max(np.max(np.abs(ecdf_right - ref_right)), np.max(np.abs(ecdf_left - ref_left)))
    return float(min(max(d, 0.0), 1.0))


def ks_two_sample(a, b) -> float:
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("ks_two_sample of an empty sample")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_critical(n: int, level: float = 0.95) -> float:
    """Asymptotic Kolmogorov critical value c(level)/sqrt(n)."""
    from scipy.special import kolmogi

    return float(kolmogi(1.0 - level) / math.sqrt(n))


def empirical_cf(samples, u) -> complex:
    x = np.asarray(samples, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.size == 0:
        raise ValueError("empirical_cf of an empty sample")
    if u.ndim == 0 or x.ndim == 1:
        phase = x * u if u.ndim == 0 else x * u.ravel()[0]
    else:
        phase = x.reshape(x.shape[0], -1) @ u.ravel()
    if np.all(u == 0):
        return 1.0 + 0.0j
    n = phase.size
    return complex(exact_sum(np.cos(phase)) / n, exact_sum(np.sin(phase)) / n)


def empirical_cf_with_se(samples, u) -> ComplexEstimate:
    x = np.asarray(samples, dtype=float)
    u = np.asarray(u, dtype=float)
    phase = x * float(u) if u.ndim == 0 else x.reshape(x.shape[0], -1) @ u.ravel()
    return ComplexEstimate(mean_with_se(np.cos(phase)), mean_with_se(np.sin(phase)))


# ---------------------------------------------------------------------------
# snapping helpers shared by the rounding maps


def snapped_floor(x):
    """floor(x), treating values within a few ulps of an integer as that
    integer so lattice points survive representation error (0.3*10 etc.)."""
    x = np.asarray(x, dtype=float)
    r = np.rint(x)
    tol = 4.0 * np.finfo(float).eps * np.maximum(1.0, np.abs(x))
    return np.where(np.abs(x - r) <= tol, r, np.floor(x))


# ---------------------------------------------------------------------------
# distributions


@dataclass(frozen=True)
class DistributionSpec:
    """A law identified by a family tag and its parameters."""

    family: str
    params: tuple = ()

    def param(self, name, default=None):
        return dict(self.params).get(name, default)

    @property
    def dim(self) -> int:
        if self.family == "product":
            return len(self.param("components"))
        return 1

    def sample(self, gen: np.random.Generator, count: int) -> np.ndarray:
        return _family(self.family).sample(self, gen, count)

    @property
    def has_density(self) -> bool:
        return _family(self.family).has_density(self)

    def pdf(self, y):
        return _family(self.family).pdf(self, y)

    def rho(self, y):
        """Log-density gradient, ``None`` when the law has no such field."""
        return _family(self.family).rho(self, y)

    def cdf(self, y):
        return _family(self.family).cdf(self, y)

    def cf(self, u):
        return _family(self.family).cf(self, u)

    def mean(self) -> Optional[float]:
        return _family(self.family).mean(self)


def _spec(family, **params) -> DistributionSpec:
    return DistributionSpec(family, tuple(sorted(params.items())))


def normal(mu: float = 0.0, sigma: float = 1.0) -> DistributionSpec:
    return _spec("normal", mu=float(mu), sigma=float(sigma))


def uniform(a: float = 0.0, b: float = 1.0) -> DistributionSpec:
    if not b > a:
        raise ValueError("uniform needs b > a")
    return _spec("uniform", a=float(a), b=float(b))


def exponential(rate: float = 1.0) -> DistributionSpec:
    return _spec("exponential", rate=float(rate))


def lattice(m: int, low: int = 0, high: Optional[int] = None) -> DistributionSpec:
    """Uniform law on the atoms k/m, low <= k < high (default one period)."""
    high = low + m if high is None else high
    if high <= low:
        raise ValueError("lattice needs high > low")
    return _spec("lattice", m=int(m), low=int(low), high=int(high))


def point_mass(c: float = 0.0) -> DistributionSpec:
    return _spec("point", c=float(c))


def cantor(base: int = 3, depth: int = 34) -> DistributionSpec:
    """Cantor-type singular law: sum_k (base-1) d_k base^-k with fair bits d_k."""
    return _spec("cantor", base=int(base), depth=int(depth))


def mixture(components: Sequence[DistributionSpec], weights: Sequence[float]) -> DistributionSpec:
    w = np.asarray(weights, dtype=float)
    if len(components) != w.size or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("mixture needs one nonnegative weight per component")
    w = w / w.sum()
    return _spec("mixture", components=tuple(components), weights=tuple(w.tolist()))


def product(components: Sequence[DistributionSpec]) -> DistributionSpec:
    """Independent coordinates; samples have shape (count, d)."""
    return _spec("product", components=tuple(components))


def sample(dist: DistributionSpec, stream: RandomStream, count: int) -> np.ndarray:
    if count < 1:
        raise ValueError("count must be >= 1")
    return dist.sample(stream.generator(), count)


class _Family:
    def has_density(self, d):
        return False

    def pdf(self, d, y):
        return None

    def rho(self, d, y):
        return None

    def cdf(self, d, y):
        return None

    def cf(self, d, u):
        return None

    def mean(self, d):
        return None


class _Normal(_Family):
    def sample(self, d, gen, count):
        return d.param("mu") + d.param("sigma") * gen.standard_normal(count)

    def has_density(self, d):
        return True

    def pdf(self, d, y):
        mu, s = d.param("mu"), d.param("sigma")
        z = (np.asarray(y, dtype=float) - mu) / s
        return np.exp(-0.5 * z * z) / (s * math.sqrt(2 * math.pi))

    def rho(self, d, y):
        return -(np.asarray(y, dtype=float) - d.param("mu")) / d.param("sigma") ** 2

    def cdf(self, d, y):
        from scipy.special import ndtr

        return ndtr((np.asarray(y, dtype=float) - d.param("mu")) / d.param("sigma"))

    def cf(self, d, u):
        u = np.asarray(u, dtype=float)
        return np.exp(1j * u * d.param("mu") - 0.5 * (d.param("sigma") * u) ** 2)

    def mean(self, d):
        return d.param("mu")


class _Uniform(_Family):
    def sample(self, d, gen, count):
        a, b = d.param("a"), d.param("b")
        return a + (b - a) * gen.random(count)

    def has_density(self, d):
        return True

    def pdf(self, d, y):
        a, b = d.param("a"), d.param("b")
        y = np.asarray(y, dtype=float)
        return np.where((y >= a) & (y < b), 1.0 / (b - a), 0.0)

    def cdf(self, d, y):
        a, b = d.param("a"), d.param("b")
        return np.clip((np.asarray(y, dtype=float) - a) / (b - a), 0.0, 1.0)

    def cf(self, d, u):
        a, b = d.param("a"), d.param("b")
        u = np.asarray(u, dtype=float)
        safe = np.where(u == 0, 1.0, u)
        val = (np.exp(1j * safe * b) - np.exp(1j * safe * a)) / (1j * safe * (b - a))
        return np.where(u == 0, 1.0 + 0j, val)

    def mean(self, d):
        return 0.5 * (d.param("a") + d.param("b"))


class _Exponential(_Family):
    def sample(self, d, gen, count):
        return gen.exponential(1.0 / d.param("rate"), count)

    def has_density(self, d):
        return True

    def pdf(self, d, y):
        lam = d.param("rate")
        y = np.asarray(y, dtype=float)
        return np.where(y >= 0, lam * np.exp(-lam * np.maximum(y, 0.0)), 0.0)

    def rho(self, d, y):
        # valid on (0, inf) only; the jump at 0 is outside the smooth case
        return np.full_like(np.asarray(y, dtype=float), -d.param("rate"))

    def cdf(self, d, y):
        lam = d.param("rate")
        y = np.asarray(y, dtype=float)
        return np.where(y > 0, -np.expm1(-lam * np.maximum(y, 0.0)), 0.0)

    def cf(self, d, u):
        lam = d.param("rate")
        return lam / (lam - 1j * np.asarray(u, dtype=float))

    def mean(self, d):
        return 1.0 / d.param("rate")


class _Lattice(_Family):
    def sample(self, d, gen, count):
        k = gen.integers(d.param("low"), d.param("high"), count)
        return k / d.param("m")

    def cdf(self, d, y):
        m, lo, hi = d.param("m"), d.param("low"), d.param("high")
        k = snapped_floor(np.asarray(y, dtype=float) * m)
        return np.clip((k - lo + 1) / (hi - lo), 0.0, 1.0)

    def cf(self, d, u):
        m, lo, hi = d.param("m"), d.param("low"), d.param("high")
        u = np.asarray(u, dtype=float)
        atoms = np.arange(lo, hi) / m
        return np.exp(1j * np.multiply.outer(u, atoms)).mean(axis=-1)

    def mean(self, d):
        return 0.5 * (d.param("low") + d.param("high") - 1) / d.param("m")


class _Point(_Family):
    def sample(self, d, gen, count):
        return np.full(count, d.param("c"))

    def cdf(self, d, y):
        return np.where(np.asarray(y, dtype=float) >= d.param("c"), 1.0, 0.0)

    def cf(self, d, u):
        return np.exp(1j * np.asarray(u, dtype=float) * d.param("c"))

    def mean(self, d):
        return d.param("c")


class _Cantor(_Family):
    def _weights(self, d):
        b, depth = d.param("base"), d.param("depth")
        return (b - 1) * float(b) ** -np.arange(1, depth + 1)

    def sample(self, d, gen, count):
        bits = gen.integers(0, 2, size=(count, d.param("depth")), dtype=np.int8)
        return bits @ self._weights(d)

    def cdf(self, d, y):
        b, depth = d.param("base"), d.param("depth")
        y = np.clip(np.asarray(y, dtype=float), 0.0, 1.0)
        out = np.zeros_like(y)
        alive = np.ones(y.shape, dtype=bool)
        x = y.copy()
        for k in range(1, depth + 1):
            digit = np.minimum(np.floor(x * b), b - 1)
            x = x * b - digit
            out = np.where(alive & (digit == b - 1), out + 0.5 ** k, out)
            # strictly inside a removed gap: cdf is flat from here on
            gap = alive & (digit > 0) & (digit < b - 1)
            out = np.where(gap, out + 0.5 ** k, out)
            alive &= (digit == 0) | (digit == b - 1)
        return np.where(np.asarray(y) >= 1.0, 1.0, out)

    def cf(self, d, u):
        u = np.asarray(u, dtype=float)
        w = self._weights(d)
        half = 0.5 * np.multiply.outer(u, w)
        return np.exp(1j * half.sum(axis=-1)) * np.prod(np.cos(half), axis=-1)

    def mean(self, d):
        return 0.5 * float(self._weights(d).sum())


class _Mixture(_Family):
    def _parts(self, d):
        return d.param("components"), np.asarray(d.param("weights"))

    def sample(self, d, gen, count):
        comps, w = self._parts(d)
        label = gen.choice(len(comps), size=count, p=w)
        draws = np.stack([c.sample(gen, count) for c in comps])
        return draws[label, np.arange(count)]

    def has_density(self, d):
        return all(c.has_density for c in self._parts(d)[0])

    def pdf(self, d, y):
        comps, w = self._parts(d)
        if not self.has_density(d):
            return None
        return sum(wi * c.pdf(y) for c, wi in zip(comps, w))

    def rho(self, d, y):
        comps, w = self._parts(d)
        rhos = [c.rho(y) for c in comps]
        if not self.has_density(d) or any(r is None for r in rhos):
            return None
        num = sum(wi * c.pdf(y) * r for c, wi, r in zip(comps, w, rhos))
        return num / self.pdf(d, y)

    def cdf(self, d, y):
        comps, w = self._parts(d)
        return sum(wi * c.cdf(y) for c, wi in zip(comps, w))

    def cf(self, d, u):
        comps, w = self._parts(d)
        return sum(wi * c.cf(u) for c, wi in zip(comps, w))

    def mean(self, d):
        comps, w = self._parts(d)
        return float(sum(wi * c.mean() for c, wi in zip(comps, w)))


class _Product(_Family):
    def sample(self, d, gen, count):
        return np.stack([c.sample(gen, count) for c in d.param("components")], axis=-1)

    def has_density(self, d):
        return all(c.has_density for c in d.param("components"))

    def pdf(self, d, y):
        y = np.asarray(y, dtype=float)
        out = 1.0
        for i, c in enumerate(d.param("components")):
            out = out * c.pdf(y[..., i])
        return out

    def rho(self, d, y):
        y = np.asarray(y, dtype=float)
        parts = [c.rho(y[..., i]) for i, c in enumerate(d.param("components"))]
        if any(p is None for p in parts):
            return None
        return np.stack(parts, axis=-1)

    def cf(self, d, u):
        u = np.asarray(u, dtype=float)
        out = 1.0 + 0j
        for i, c in enumerate(d.param("components")):
            out = out * c.cf(u[..., i])
        return out


_FAMILIES = {
    "normal": _Normal(),
    "uniform": _Uniform(),
    "exponential": _Exponential(),
    "lattice": _Lattice(),
    "point": _Point(),
    "cantor": _Cantor(),
    "mixture": _Mixture(),
    "product": _Product(),
}


def _family(tag: str) -> _Family:
    try:
        return _FAMILIES[tag]
    except KeyError:
        raise ValueError(f"unknown distribution family {tag!r}") from None


def check_rho(dist: DistributionSpec, grid, step: float = 1e-5, rtol: float = 1e-6) -> bool:
    """Finite-difference check that ``rho`` is the derivative of log pdf."""
    grid = np.asarray(grid, dtype=float)
    r = dist.rho(grid)
    if r is None or not dist.has_density:
        return True
    fd = (np.log(dist.pdf(grid + step)) - np.log(dist.pdf(grid - step))) / (2 * step)
    return bool(np.all(np.abs(fd - r) <= rtol * np.maximum(1.0, np.abs(r)) + step ** 2 * 10))


# ---------------------------------------------------------------------------
# test functions


@dataclass(frozen=True)
class TestFunction:
    """A C^2 test function with its first and second derivatives.

    Scalar functions act elementwise.  With ``dim`` set, ``f`` maps arrays
    of shape (..., dim) to (...), ``df`` to (..., dim) and ``d2f`` to
    (..., dim, dim).
    """

    __test__ = False  # keep pytest from collecting this class

    name: str
    f: Callable
    df: Callable
    d2f: Callable
    bounded: bool = True
    dim: Optional[int] = None

    def __call__(self, y):
        return self.f(y)

    def laplacian(self, y):
        h = self.d2f(y)
        return h if self.dim is None else np.trace(h, axis1=-2, axis2=-1)

    def grad_sq(self, y):
        g = self.df(y)
        return g * g if self.dim is None else np.sum(g * g, axis=-1)

    def grad_dot(self, y, v):
        g = self.df(y)
        return g * v if self.dim is None else np.sum(g * v, axis=-1)

    def scaled(self, c: float) -> "TestFunction":
        return TestFunction(f"{c}*{self.name}", lambda y: c * self.f(y),
                            lambda y: c * self.df(y), lambda y: c * self.d2f(y),
                            self.bounded, self.dim)


def product_function(a: TestFunction, b: TestFunction) -> TestFunction:
    if a.dim is not None or b.dim is not None:
        raise ValueError("product_function supports scalar test functions")
    return TestFunction(
        f"{a.name}*{b.name}",
        lambda y: a.f(y) * b.f(y),
        lambda y: a.df(y) * b.f(y) + a.f(y) * b.df(y),
        lambda y: a.d2f(y) * b.f(y) + 2 * a.df(y) * b.df(y) + a.f(y) * b.d2f(y),
        a.bounded and b.bounded,
    )


def check_derivatives(tf: TestFunction, points, step: float = 1e-5, rtol: float = 1e-4) -> bool:
    """Compare supplied derivatives with central finite differences."""
    y = np.asarray(points, dtype=float)
    if tf.dim is None:
        fd1 = (tf.f(y + step) - tf.f(y - step)) / (2 * step)
        fd2 = (tf.df(y + step) - tf.df(y - step)) / (2 * step)
        ok1 = np.abs(fd1 - tf.df(y)) <= rtol * np.maximum(1.0, np.abs(fd1))
        ok2 = np.abs(fd2 - tf.d2f(y)) <= rtol * np.maximum(1.0, np.abs(fd2))
        return bool(np.all(ok1) and np.all(ok2))
    ok = True
    for i in range(tf.dim):
        e = np.zeros(tf.dim)
        e[i] = step
        fd1 = (tf.f(y + e) - tf.f(y - e)) / (2 * step)
        fd2 = (tf.df(y + e) - tf.df(y - e)) / (2 * step)
        ok &= bool(np.all(np.abs(fd1 - tf.df(y)[..., i]) <= rtol * np.maximum(1.0, np.abs(fd1))))
        ok &= bool(np.all(np.abs(fd2 - tf.d2f(y)[..., :, i]) <= rtol * np.maximum(1.0, np.abs(fd2))))
    return ok


def _g(t):
    return np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)


def _g1(t):
    tt = np.where(t > 0, t, 1.0)
    return np.where(t > 0, _g(t) / tt ** 2, 0.0)


def _g2(t):
    tt = np.where(t > 0, t, 1.0)
    return np.where(t > 0, _g(t) * (1.0 / tt ** 4 - 2.0 / tt ** 3), 0.0)


def smooth_step(t):
    """C-infinity step: 0 for t<=0, 1 for t>=1.  Returns (S, S', S'')."""
    t = np.asarray(t, dtype=float)
    a, b = _g(t), _g(1 - t)
    a1, b1 = _g1(t), -_g1(1 - t)
    a2, b2 = _g2(t), _g2(1 - t)
    D = a + b
    D1 = a1 + b1
    D2 = a2 + b2
    S = a / D
    S1 = (a1 * D - a * D1) / D ** 2
    S2 = (a2 * D - a * D2) / D ** 2 - 2 * D1 * (a1 * D - a * D1) / D ** 3
    return S, S1, S2


def cutoff(x, inner: float = 10.0, outer: float = 11.0):
    """Smooth cutoff equal to 1 on [-inner, inner] and 0 outside
    [-outer, outer].  Returns (c, c', c'')."""
    x = np.asarray(x, dtype=float)
    w = outer - inner
    S, S1, S2 = smooth_step((outer - np.abs(x)) / w)
    return S, -np.sign(x) * S1 / w, S2 / w ** 2


def truncated(name: str, h, h1, h2, inner: float = 10.0, outer: float = 11.0) -> TestFunction:
    """Bounded version of an unbounded smooth function: h times a cutoff."""

    def f(y):
        c, _, _ = cutoff(y, inner, outer)
        return h(y) * c

    def df(y):
        c, c1, _ = cutoff(y, inner, outer)
        return h1(y) * c + h(y) * c1

    def d2f(y):
        c, c1, c2 = cutoff(y, inner, outer)
        return h2(y) * c + 2 * h1(y) * c1 + h(y) * c2

    return TestFunction(name, f, df, d2f, True)


def identity_fn() -> TestFunction:
    return truncated("x", lambda y: np.asarray(y, dtype=float),
                     lambda y: np.ones_like(np.asarray(y, dtype=float)),
                     lambda y: np.zeros_like(np.asarray(y, dtype=float)))


def square_fn() -> TestFunction:
    return truncated("x^2", lambda y: np.asarray(y, dtype=float) ** 2,
                     lambda y: 2 * np.asarray(y, dtype=float),
                     lambda y: np.full_like(np.asarray(y, dtype=float), 2.0))


def sin_fn() -> TestFunction:
    return TestFunction("sin", np.sin, np.cos, lambda y: -np.sin(y))


def cos_fn() -> TestFunction:
    return TestFunction("cos", np.cos, lambda y: -np.sin(y), lambda y: -np.cos(y))


def constant_fn(c: float = 1.0) -> TestFunction:
    def f(y):
        return np.full_like(np.asarray(y, dtype=float), c)

    def z(y):
        return np.zeros_like(np.asarray(y, dtype=float))

    return TestFunction(f"const({c})", f, z, z)


def linear_fn(a: float = 1.0, b: float = 0.0) -> TestFunction:
    """Unbounded affine map; used only where boundedness is irrelevant."""
    return TestFunction(f"{a}x+{b}", lambda y: a * np.asarray(y, dtype=float) + b,
                        lambda y: np.full_like(np.asarray(y, dtype=float), a),
                        lambda y: np.zeros_like(np.asarray(y, dtype=float)), bounded=False)


def bump_fn(center: float = 0.0, radius: float = 1.0, normalize: bool = True) -> TestFunction:
    """exp(-1/(1-r^2)) bump supported on [center-radius, center+radius]."""
    from scipy.integrate import quad

    def raw(y):
        r = (np.asarray(y, dtype=float) - center) / radius
        inside = np.abs(r) < 1
        q = np.where(inside, 1 - r * r, 1.0)
        return np.where(inside, np.exp(-1.0 / q), 0.0), r, q, inside

    c = 1.0
    if normalize:
        c = 1.0 / quad(lambda y: float(raw(y)[0]), center - radius, center + radius, epsabs=1e-14, epsrel=1e-13)[0]

    def f(y):
        return c * raw(y)[0]

    def df(y):
        v, r, q, inside = raw(y)
        return np.where(inside, c * v * (-2 * r / q ** 2) / radius, 0.0)

    def d2f(y):
        v, r, q, inside = raw(y)
        a = -2 * r / q ** 2
        da = (-2 / q ** 2 - 8 * r * r / q ** 3)
        return np.where(inside, c * v * (a * a + da) / radius ** 2, 0.0)

    return TestFunction("bump", f, df, d2f)


def sin_cos_2d() -> TestFunction:
    """phi(x, y) = sin(x) cos(y) on R^2."""

    def f(p):
        p = np.asarray(p, dtype=float)
        return np.sin(p[..., 0]) * np.cos(p[..., 1])

    def df(p):
        p = np.asarray(p, dtype=float)
        return np.stack([np.cos(p[..., 0]) * np.cos(p[..., 1]),
                         -np.sin(p[..., 0]) * np.sin(p[..., 1])], axis=-1)

    def d2f(p):
        p = np.asarray(p, dtype=float)
        s0, c0, s1, c1 = np.sin(p[..., 0]), np.cos(p[..., 0]), np.sin(p[..., 1]), np.cos(p[..., 1])
        h = np.empty(p.shape[:-1] + (2, 2))
        h[..., 0, 0] = -s0 * c1
        h[..., 0, 1] = h[..., 1, 0] = -c0 * s1
        h[..., 1, 1] = -s0 * c1
        return h

    return TestFunction("sin(x)cos(y)", f, df, d2f, True, dim=2)


def tanh_weight() -> TestFunction:
    """1 + tanh(y): positive, bounded."""

    def f(y):
        return 1 + np.tanh(y)

    def df(y):
        return 1 - np.tanh(y) ** 2

    def d2f(y):
        t = np.tanh(y)
        return -2 * t * (1 - t * t)

    return TestFunction("1+tanh", f, df, d2f)


def quadratic_weight() -> TestFunction:
    """1 + y^2 smoothly truncated outside [-10, 10] (then floored at 1)."""
    base = truncated("y^2", lambda y: np.asarray(y, dtype=float) ** 2,
                     lambda y: 2 * np.asarray(y, dtype=float),
                     lambda y: np.full_like(np.asarray(y, dtype=float), 2.0))
    return TestFunction("1+y^2", lambda y: 1 + base.f(y), base.df, base.d2f)


TEST_FUNCTIONS: dict[str, Callable[[], TestFunction]] = {
    "identity": identity_fn,
    "square": square_fn,
    "sin": sin_fn,
    "cos": cos_fn,
    "constant": constant_fn,
    "linear": linear_fn,
    "bump": bump_fn,
    "sincos2d": sin_cos_2d,
    "tanh_weight": tanh_weight,
    "quadratic_weight": quadratic_weight,
}

DISTRIBUTIONS: dict[str, Callable[[], DistributionSpec]] = {
    "normal": normal,
    "uniform": uniform,
    "exponential": exponential,
    "lattice10": lambda: lattice(10),
    "point0": point_mass,
    "cantor": cantor,
    "mixture": lambda: mixture([normal(-1.0, 0.5), uniform(0.0, 2.0)], [0.5, 0.5]),
    "normal2d": lambda: product([normal(), normal()]),
}


def gauss_hermite_expectation(fn: Callable, order: int = 80) -> float:
    """E[fn(Y)] for Y ~ N(0,1) by Gauss-Hermite quadrature."""
    x, w = np.polynomial.hermite_e.hermegauss(order)
    return float(np.sum(w * fn(x)) / math.sqrt(2 * math.pi))
