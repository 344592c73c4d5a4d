"""Semiparametric demand environments.

A valuation is ``u + xi`` where ``u = mu(x)`` is the latent index of the
context and ``xi`` is noise with survival (tail) function ``g``.  A posted
price ``p`` sells with probability ``g(p - u)`` and earns expected revenue
``r(u, p) = p * g(p - u)``.
"""
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from .errors import AmbiguityWarning, ConfigurationError, ContractViolation, InvalidTailError

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
EXPERIMENT_SUPPORT = 0.3


def smooth_cutoff(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1, logistic blend in between.

    On (0, 1) this equals exp(-1/t) / (exp(-1/t) + exp(-1/(1-t))), written as
    expit(1/(1-t) - 1/t) so that neither exponential overflows.
    """
    if np.ndim(t) == 0:
        return _cutoff_scalar(float(t))
    t = np.asarray(t, dtype=float)
    out = np.where(t >= 1.0, 1.0, 0.0)
    inside = (t > 0.0) & (t < 1.0)
    ti = t[inside]
    with np.errstate(over="ignore", divide="ignore"):   # 1/ti -> inf is fine, expit saturates
        out[inside] = expit(1.0 / (1.0 - ti) - 1.0 / ti)
    return out


def _cutoff_scalar(t):
    if t <= 0.0:
        return 0.0
    if t >= 1.0:
        return 1.0
    a = 1.0 / (1.0 - t) - 1.0 / t
    if a >= 0:
        return 1.0 / (1.0 + math.exp(-a))
    e = math.exp(a)
    return e / (1.0 + e)


def _experiment_tail_scalar(z):
    return 1.0 - _cutoff_scalar((z + EXPERIMENT_SUPPORT) / (2 * EXPERIMENT_SUPPORT))


def experiment_tail(z):
    """Tail of the simulation noise, supported on [-0.3, 0.3]."""
    if isinstance(z, float):
        return _experiment_tail_scalar(z)
    if np.ndim(z) == 0:
        return 1.0 - smooth_cutoff((float(z) + EXPERIMENT_SUPPORT) / (2 * EXPERIMENT_SUPPORT))
    return 1.0 - smooth_cutoff((np.asarray(z, dtype=float) + EXPERIMENT_SUPPORT) / (2 * EXPERIMENT_SUPPORT))


@dataclass(frozen=True)
class TailModel:
    """Survival function of the valuation noise plus metadata.

    ``func`` must accept numpy arrays.  ``scalar`` is an optional fast path
    for single floats (the simulation loop calls it once per round).
    """

    func: Callable[[np.ndarray], np.ndarray]
    support_lo: float
    support_hi: float
    beta: float = 2.0
    lipschitz_bound: float = float("nan")
    inverse_cdf_tol: float = 1e-10
    scalar: Optional[Callable[[float], float]] = None
    name: str = "custom"
    derivative: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def eval(self, z):
        if np.ndim(z) == 0:
            if self.scalar is not None:
                return self.scalar(float(z))
            return float(self.func(np.asarray([float(z)]))[0])
        return self.func(np.asarray(z, dtype=float))

    __call__ = eval

    def check(self, n=10_000, tol=1e-12):
        """Raise InvalidTailError unless monotone, [0,1]-valued and pinned at the support ends."""
        if not self.support_lo < self.support_hi:
            raise InvalidTailError("support_lo must be below support_hi")
        width = self.support_hi - self.support_lo
        z = np.linspace(self.support_lo - 0.05 * width, self.support_hi + 0.05 * width, n)
        g = self.eval(z)
        if np.any(g < -tol) or np.any(g > 1 + tol):
            raise InvalidTailError(f"{self.name}: values leave [0, 1]")
        if np.any(np.diff(g) > tol):
            k = int(np.argmax(np.diff(g)))
            raise InvalidTailError(f"{self.name}: tail increases near z={z[k]:.6g}")
        if self.eval(self.support_lo) != 1.0 or self.eval(self.support_hi) != 0.0:
            raise InvalidTailError(f"{self.name}: tail not pinned to 1/0 at the support ends")
        return True


def make_experiment_tail():
    # max |g'| = phi'(1/2) / 0.6 = 2 / 0.6
    return TailModel(
        func=experiment_tail,
        support_lo=-EXPERIMENT_SUPPORT,
        support_hi=EXPERIMENT_SUPPORT,
        beta=2.0,
        lipschitz_bound=2.0 / (2 * EXPERIMENT_SUPPORT),
        scalar=_experiment_tail_scalar,
        name="experiment",
    )


def make_truncated_linear_tail(B=31 / 32):
    """The piecewise-linear tail 1 - z/B on [0, B] (not smooth at the kinks)."""

    def g(z):
        if np.ndim(z) == 0:
            return min(1.0, max(0.0, 1.0 - float(z) / B))
        return np.clip(1.0 - np.asarray(z, dtype=float) / B, 0.0, 1.0)

    return TailModel(func=g, support_lo=0.0, support_hi=B, beta=1.0, lipschitz_bound=1.0 / B,
                     scalar=g, name="truncated_linear")


def inverse_cdf(tail: TailModel, uniforms, tol=None, max_iter=200):
    """Generalised inverse inf{xi : 1 - g(xi) >= U} by vectorised bisection."""
    tol = tail.inverse_cdf_tol if tol is None else tol
    u = np.atleast_1d(np.asarray(uniforms, dtype=float))
    lo = np.full_like(u, tail.support_lo)
    hi = np.full_like(u, tail.support_hi)
    f_lo = 1.0 - tail.eval(lo)
    f_hi = 1.0 - tail.eval(hi)
    at_lo = u <= f_lo
    for _ in range(max_iter):
        if np.all(hi - lo <= tol):
            break
        mid = 0.5 * (lo + hi)
        f_mid = 1.0 - tail.eval(mid)
        if np.any(f_mid < f_lo - 1e-12) or np.any(f_mid > f_hi + 1e-12):
            raise InvalidTailError(f"{tail.name}: non-monotone tail met during bisection")
        go_left = f_mid >= u
        hi = np.where(go_left, mid, hi)
        f_hi = np.where(go_left, f_mid, f_hi)
        lo = np.where(go_left, lo, mid)
        f_lo = np.where(go_left, f_lo, f_mid)
    out = np.where(at_lo, tail.support_lo, hi)
    return out if np.ndim(uniforms) else float(out[0])


def sample_noise(tail: TailModel, rng: np.random.Generator, size=None):
    """Draw noise with CDF 1 - g by inverting uniform draws."""
    draws = rng.random(size)
    return inverse_cdf(tail, draws)


def revenue(u, p, tail: TailModel):
    """Expected revenue p * g(p - u)."""
    if np.ndim(u) == 0 and np.ndim(p) == 0:
        if p < 0:
            raise ContractViolation("price must be nonnegative")
        return float(p) * tail.eval(float(p) - float(u))
    u = np.asarray(u, dtype=float)
    p = np.asarray(p, dtype=float)
    return p * tail.eval(p - u)


def golden_section_max(f, a, b, tol=1e-8):
    """Elementwise golden-section maximisation of ``f`` on brackets [a, b].

    Ties keep the left sub-bracket, so a flat top resolves to its left edge.
    """
    a = np.array(a, dtype=float, copy=True)
    b = np.array(b, dtype=float, copy=True)
    width = float(np.max(b - a)) if a.size else 0.0
    if width <= tol:
        return 0.5 * (a + b)
    n_iter = int(math.ceil(math.log(tol / width) / math.log(INV_PHI)))
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(n_iter):
        left = fc >= fd
        # left: new bracket [a, d], old c becomes new d
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = np.where(left, b - INV_PHI * (b - a), d)
        new_d = np.where(left, c, a + INV_PHI * (b - a))
        probe = np.where(left, new_c, new_d)
        fp = f(probe)
        fc, fd = np.where(left, fp, fd), np.where(left, fc, fp)
        c, d = new_c, new_d
    return 0.5 * (a + b)


def maximize_revenue(u, tail: TailModel, p_max, grid_points=None, tol=1e-8, flat_width=None):
    """Revenue-maximising price on [0, p_max] for each entry of ``u``.

    Dense-grid bracketing (spacing <= 1e-3 * p_max) followed by golden-section
    refinement.  A flat top wider than ``flat_width`` (default 10*tol) emits an
    AmbiguityWarning and the smallest maximiser is returned.
    """
    scalar = np.ndim(u) == 0
    u = np.atleast_1d(np.asarray(u, dtype=float))
    n_grid = grid_points or 1001
    grid = np.linspace(0.0, p_max, n_grid)
    step = grid[1] - grid[0]
    out = np.empty_like(u)
    flat_width = 10 * tol if flat_width is None else flat_width
    # chunk so the (len(u), n_grid) revenue matrix stays small
    chunk = max(1, 2_000_000 // n_grid)
    for s in range(0, u.size, chunk):
        uu = u[s:s + chunk]
        R = grid[None, :] * tail.eval(grid[None, :] - uu[:, None])
        k = np.argmax(R, axis=1)
        top = R[np.arange(uu.size), k]
        ties = R >= (top - 1e-13 * np.maximum(1.0, np.abs(top)))[:, None]
        n_ties = ties.sum(axis=1)
        if np.any((n_ties - 1) * step > flat_width):
            warnings.warn("revenue maximiser not unique; returning the smallest", AmbiguityWarning,
                          stacklevel=2)
        lo = np.clip(grid[k] - step, 0.0, p_max)
        hi = np.clip(grid[k] + step, 0.0, p_max)
        out[s:s + chunk] = golden_section_max(lambda p: p * tail.eval(p - uu), lo, hi, tol=tol)
    # golden section cannot hit a bracket end exactly; snap when the end is better
    for edge in (0.0, p_max):
        better = edge * tail.eval(edge - u) > out * tail.eval(out - u)
        out = np.where(better, edge, out)
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class Instance:
    """A pricing environment: contexts, utility map, noise tail and price cap."""

    utility: Callable[[np.ndarray], np.ndarray]
    context_sampler: Callable[[np.random.Generator, int], np.ndarray]
    tail: TailModel
    p_max: float
    index_interval: tuple
    dim: int
    theta: Optional[np.ndarray] = None
    name: str = "custom"
    meta: dict = field(default_factory=dict)
    index_sampler: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None

    def __post_init__(self):
        if not self.p_max > 0:
            raise ConfigurationError("p_max must be positive")
        lo, hi = self.index_interval
        if not lo < hi:
            raise ConfigurationError("index_interval must satisfy u_min < u_max")

    @property
    def u_min(self):
        return self.index_interval[0]

    @property
    def u_max(self):
        return self.index_interval[1]

    def sample_contexts(self, rng, n):
        return self.context_sampler(rng, n)

    def sample_indices(self, rng, n):
        """Draw latent indices directly from their law (falls back to contexts)."""
        if self.index_sampler is not None:
            return self.index_sampler(rng, n)
        return self.utility(self.sample_contexts(rng, n))

    def check(self, rng, n=10_000, atol=1e-9):
        """Sample-based check of index containment and valuation range."""
        x = self.sample_contexts(rng, n)
        u = self.utility(x)
        lo, hi = self.index_interval
        if np.any(u < lo - atol) or np.any(u > hi + atol):
            raise ContractViolation(f"{self.name}: latent index leaves {self.index_interval}")
        xi = sample_noise(self.tail, rng, n)
        v = u + xi
        if np.any(v < -atol) or np.any(v > self.p_max + atol):
            raise ContractViolation(f"{self.name}: realised valuation leaves [0, p_max]")
        return True


def oracle_price(u, instance: Instance, tol=1e-8):
    """argmax over p in [0, p_max] of p * g(p - u)."""
    lo, hi = instance.index_interval
    if np.any(np.asarray(u) < lo - 1e-12) or np.any(np.asarray(u) > hi + 1e-12):
        raise ContractViolation("u outside the index interval")
    return maximize_revenue(u, instance.tail, instance.p_max, tol=tol)


@dataclass(frozen=True)
class OraclePriceTable:
    """Oracle prices on a uniform index grid, linearly interpolated."""

    grid: np.ndarray
    values: np.ndarray
    resolution: float
    tol: float
    p_max: float

    def __call__(self, u):
        return np.interp(u, self.grid, self.values)

    def lipschitz_estimate(self):
        return float(np.max(np.abs(np.diff(self.values)) / np.diff(self.grid)))

    def check(self, lipschitz_bound=None):
        if np.any(self.values <= 0) or np.any(self.values >= self.p_max):
            raise ContractViolation("oracle price touches the boundary of [0, p_max]")
        if lipschitz_bound is not None and self.lipschitz_estimate() > lipschitz_bound:
            raise ContractViolation(
                f"oracle price map slope {self.lipschitz_estimate():.4g} exceeds {lipschitz_bound}")
        return True


def build_oracle_table(instance: Instance, resolution=None, tol=1e-8):
    lo, hi = instance.index_interval
    resolution = 1e-3 * (hi - lo) if resolution is None else resolution
    n = int(math.ceil((hi - lo) / resolution)) + 1
    grid = np.linspace(lo, hi, n)
    values = maximize_revenue(grid, instance.tail, instance.p_max, tol=tol)
    return OraclePriceTable(grid=grid, values=values, resolution=(hi - lo) / (n - 1), tol=tol,
                            p_max=instance.p_max)


# ----------------------------------------------------------------------------
# Simulation designs: sphere contexts, anisotropic sphere, sparse cube.


def _sphere(rng, n, k):
    z = rng.standard_normal((n, k))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def anisotropic_root(d, eps):
    """Square root of (1-eps) v v^T + eps I on R^{d-1} and the direction v."""
    k = d - 1
    v = np.zeros(k)
    if k >= 2:
        v[0], v[1] = 1.0, -1.0
        v /= math.sqrt(2.0)
    else:
        # no nonzero vector orthogonal to the all-ones direction in R^1
        v[0] = 1.0
    root = math.sqrt(eps) * np.eye(k) + (1.0 - math.sqrt(eps)) * np.outer(v, v)
    return root, v


def _sphere_projection(rng, n, k):
    """Law of <z, e> for z uniform on the unit sphere of R^k and a fixed unit e."""
    if k == 1:
        return rng.choice([-1.0, 1.0], size=n)
    if k == 3:
        # the projection of the uniform 2-sphere is uniform on [-1, 1]
        return rng.uniform(-1.0, 1.0, size=n)
    a = 0.5 * (k - 1)
    return 2.0 * rng.beta(a, a, size=n) - 1.0


def make_experiment_instance(kind, d, eps=None, s=None, seed=0, p_max=3.5):
    """Linear-utility instances used in the simulation study.

    kind:
      ``sphere_iid``   x = (z, 1), z uniform on the unit sphere of R^{d-1};
      ``anisotropic``  x = (S_eps^{1/2} z, 1), S_eps = (1-eps) v v^T + eps I, v orthogonal to 1;
      ``sparse_cube``  x = (z, 1), z uniform on [-1, 1]^{d-1}, s active coordinates of size 1/s.
    """
    if d < 2:
        raise ConfigurationError("d must be at least 2")
    tail = make_experiment_tail()
    k = d - 1
    if kind in ("sphere_iid", "anisotropic"):
        theta = np.concatenate([np.full(k, 1.0 / math.sqrt(k)), [2.0]])
        if kind == "sphere_iid":
            def sampler(rng, n):
                return np.hstack([_sphere(rng, n, k), np.ones((n, 1))])

            def index_sampler(rng, n):
                return 2.0 + _sphere_projection(rng, n, k)
            meta = {}
        else:
            if eps is None or not 0.0 < eps <= 1.0:
                raise ConfigurationError("anisotropic design needs eps in (0, 1]")
            root, v = anisotropic_root(d, eps)

            def sampler(rng, n):
                return np.hstack([_sphere(rng, n, k) @ root, np.ones((n, 1))])

            # root is symmetric, so theta_s . (root z) = (root theta_s) . z
            scale = float(np.linalg.norm(root @ theta[:k]))

            def index_sampler(rng, n):
                return 2.0 + scale * _sphere_projection(rng, n, k)
            meta = {"eps": eps, "v": v}
    elif kind == "sparse_cube":
        if s is None or not 1 <= s <= k:
            raise ConfigurationError("sparse design needs 1 <= s <= d-1")
        rng = np.random.default_rng(seed)
        support = np.sort(rng.choice(k, size=s, replace=False))
        theta = np.zeros(d)
        theta[support] = rng.choice([-1.0, 1.0], size=s) / s
        theta[-1] = 2.0

        def sampler(rng, n):
            return np.hstack([rng.uniform(-1.0, 1.0, (n, k)), np.ones((n, 1))])

        slope = theta[support].copy()

        def index_sampler(rng, n):
            return 2.0 + rng.uniform(-1.0, 1.0, (n, slope.size)) @ slope
        meta = {"s": s, "support": support}
    else:
        raise ConfigurationError(f"unknown experiment kind {kind!r}")

    theta = theta.copy()
    theta.setflags(write=False)
    return Instance(utility=lambda x: np.asarray(x) @ theta, context_sampler=sampler, tail=tail,
                    p_max=p_max, index_interval=(1.0, 3.0), dim=d, theta=theta, name=kind,
                    meta=meta, index_sampler=index_sampler)


class BernoulliFeedback:
    """Purchase outcomes driven by one pre-drawn uniform per round.

    Round ``i`` sells at price ``p`` iff ``uniforms[i] < g(p - u[i])``, which
    has the law of ``u[i] + xi >= p``.  Outcomes depend only on (round, price),
    so rounds can be settled in any order.
    """

    def __init__(self, u, uniforms, tail: TailModel):
        self.u = np.asarray(u, dtype=float)
        self.uniforms = np.asarray(uniforms, dtype=float)
        if self.u.shape != self.uniforms.shape:
            raise ContractViolation("u and uniforms must have the same shape")
        self.tail = tail
        self._g = tail.scalar if tail.scalar is not None else tail.eval

    def purchase(self, rows, prices):
        rows = np.asarray(rows)
        return (self.uniforms[rows] < self.tail.func(np.asarray(prices, dtype=float) - self.u[rows])).astype(np.int8)

    def purchase_one(self, row, price):
        return int(self.uniforms[row] < self._g(float(price - self.u[row])))

    def subset(self, rows):
        """Feedback restricted to ``rows``, re-indexed from zero."""
        rows = np.asarray(rows)
        return BernoulliFeedback(self.u[rows], self.uniforms[rows], self.tail)
