"""Explore-then-ORBIT with a frozen offline index estimate.

A burn-in of uniformly random prices yields pseudo-responses ``p_max * y``
whose conditional mean is the latent index.  An offline regression oracle
(Lasso for sparse linear indices, local polynomials for smooth ones) is fitted
once, frozen, and its clipped predictions drive ORBIT for the rest of the
horizon.
"""
import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Callable

import numpy as np

from .env import BernoulliFeedback, Instance
from .errors import ConfigurationError, ConvergenceError, NoDataError
from .orbit import Orbit, OrbitConfig
from .records import BURNIN, empty_transcript, merge_orbit


@dataclass(frozen=True)
class BurninDataset:
    X: np.ndarray
    Z: np.ndarray
    p_max: float

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Z = np.asarray(self.Z, dtype=float)
        if X.ndim != 2 or X.shape[0] != Z.size:
            raise ConfigurationError("X must be (n, d) with one response per row")
        if not np.all(np.isfinite(X)):
            raise ConfigurationError("contexts must be finite")
        if not np.all((Z == 0) | (Z == self.p_max)):
            raise ConfigurationError("pseudo-responses must be 0 or p_max")
        X.setflags(write=False)
        Z.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Z", Z)

    @property
    def n(self):
        return self.Z.size


# ----------------------------------------------------------------------------
# Lasso


def soft_threshold(x, t):
    return math.copysign(max(abs(x) - t, 0.0), x)


def lasso_kkt_residual(G, c, theta, lam):
    """Largest KKT violation of (1/n)||Z - X theta||^2 + lam ||theta||_1 given G = X'X/n, c = X'Z/n."""
    grad = 2.0 * (G @ theta - c)
    nz = theta != 0
    r = np.where(nz, np.abs(grad + lam * np.sign(theta)), np.maximum(np.abs(grad) - lam, 0.0))
    return float(r.max()) if r.size else 0.0


def lasso_fit(data: BurninDataset, lam, tol=1e-8, max_sweeps=10_000, theta0=None):
    """Cyclic coordinate descent on (1/n) sum (Z - x'theta)^2 + lam ||theta||_1.

    Works on the cached Gram matrix X'X/n, so a sweep costs O(d^2)
    regardless of n.  Stops when the KKT residual drops below ``tol``.
    """
    if data.n < 1:
        raise ConfigurationError("need at least one sample")
    if lam < 0:
        raise ConfigurationError("lambda must be nonnegative")
    X, Z = data.X, data.Z
    n, d = X.shape
    G = X.T @ X / n
    c = X.T @ Z / n
    return _lasso_cd(G, c, lam, tol, max_sweeps, theta0)


def _lasso_cd(G, c, lam, tol, max_sweeps, theta0=None):
    d = c.size
    theta = np.zeros(d) if theta0 is None else np.array(theta0, dtype=float)
    Gt = G @ theta
    diag = np.diag(G).copy()
    half = 0.5 * lam
    res = math.inf
    for sweep in range(max_sweeps):
        for j in range(d):
            if diag[j] <= 0.0:
                continue
            old = theta[j]
            rho = c[j] - Gt[j] + diag[j] * old
            new = soft_threshold(rho, half) / diag[j]
            if new != old:
                Gt += G[:, j] * (new - old)
                theta[j] = new
        res = lasso_kkt_residual(G, c, theta, lam)
        if res <= tol:
            return theta
    raise ConvergenceError(f"coordinate descent stopped after {max_sweeps} sweeps", residual=res)


def lasso_lambda(p_max, d, T, n, C_lambda=1.0):
    return C_lambda * p_max * math.sqrt(math.log(d * T) / n)


# ----------------------------------------------------------------------------
# Local polynomial regression


def _monomials(d, degree):
    exps = []
    for deg in range(degree + 1):
        for combo in combinations_with_replacement(range(d), deg):
            e = np.zeros(d, dtype=int)
            for i in combo:
                e[i] += 1
            exps.append(e)
    return np.array(exps)


def locpoly_fit(data: BurninDataset, x0, bandwidth, degree, jitter=1e-8):
    """Intercept of the least-squares polynomial fit on the l-infinity window around x0.

    Uniform weights; the local normal matrix gets a ``jitter`` ridge.  With
    fewer than (degree+1)^d samples in the window the local mean is returned.
    """
    if not bandwidth > 0:
        raise ConfigurationError("bandwidth must be positive")
    if degree < 0:
        raise ConfigurationError("degree must be nonnegative")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    D = (data.X - x0) / bandwidth
    inside = np.max(np.abs(D), axis=1) <= 1.0
    k = int(inside.sum())
    if k == 0:
        raise NoDataError(f"no samples within bandwidth {bandwidth:g} of {x0}")
    Zw = data.Z[inside]
    d = x0.size
    if degree == 0 or k < (degree + 1) ** d:
        return float(Zw.mean())
    exps = _monomials(d, degree)
    P = np.prod(D[inside][:, None, :] ** exps[None, :, :], axis=2)
    A = P.T @ P + jitter * np.eye(P.shape[1])
    coef = np.linalg.solve(A, P.T @ Zw)
    return float(coef[0])


def locpoly_predict(data: BurninDataset, x0, bandwidth, degree, widen=4):
    """:func:`locpoly_fit` that doubles the bandwidth on empty windows, up to ``widen`` times."""
    b = bandwidth
    for _ in range(widen + 1):
        try:
            return locpoly_fit(data, x0, b, degree)
        except NoDataError:
            b *= 2.0
    raise NoDataError(f"window still empty after widening bandwidth to {b / 2:g}")


def locpoly_bandwidth(T, n, gamma, d):
    return (math.log(T) / n) ** (1.0 / (2 * gamma + d))


def locpoly_degree(gamma):
    return max(0, int(math.ceil(gamma)) - 1)


# ----------------------------------------------------------------------------
# Frozen pilots and schedules


@dataclass(frozen=True)
class FrozenPilot:
    raw_predict: Callable[[np.ndarray], np.ndarray]
    u_min: float
    u_max: float
    oracle_kind: str
    meta: dict = field(default_factory=dict)

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.clip(self.raw_predict(X), self.u_min, self.u_max)


def fit_lasso_pilot(data: BurninDataset, u_min, u_max, T, C_lambda=1.0):
    n, d = data.X.shape
    lam = lasso_lambda(data.p_max, d, T, n, C_lambda)
    theta = lasso_fit(data, lam)
    theta.setflags(write=False)
    return FrozenPilot(lambda X: X @ theta, u_min, u_max, "lasso", {"lambda": lam, "theta": theta})


def fit_locpoly_pilot(data: BurninDataset, u_min, u_max, T, gamma):
    n, d = data.X.shape
    b = locpoly_bandwidth(T, n, gamma, d)
    deg = locpoly_degree(gamma)

    def raw(X):
        return np.array([locpoly_predict(data, x, b, deg) for x in X])
    return FrozenPilot(raw, u_min, u_max, "locpoly", {"bandwidth": b, "degree": deg})


def schedule_n_exp(kind, T, d, s=None, gamma=None, c=1.0):
    """Burn-in length: c s sqrt(T) (sparse) or c T^((2 gamma + d)/(4 gamma + d)) (holder)."""
    if T < 4:
        raise ConfigurationError("T must be at least 4")
    if kind == "sparse":
        if s is None or s < 1:
            raise ConfigurationError("sparse schedule needs s >= 1")
        n = round(c * s * math.sqrt(T))
    elif kind == "holder":
        if gamma is None or gamma <= 0:
            raise ConfigurationError("holder schedule needs gamma > 0")
        n = round(c * T ** ((2 * gamma + d) / (4 * gamma + d)))
    else:
        raise ConfigurationError(f"unknown schedule kind {kind!r}")
    lo, hi = d + 1, T // 2
    if lo > hi:
        raise ConfigurationError(f"burn-in range [{lo}, {hi}] is empty for T={T}, d={d}")
    return int(min(max(n, lo), hi))


def run_explore_then_orbit(instance: Instance, X, u, explore_uniforms, demand_uniforms, n_exp,
                           oracle="lasso", orbit_params=None, orbit_seed=None, T_nominal=None,
                           C_lambda=1.0, gamma=2.0, pilot=None):
    """Burn-in, fit, freeze, then delegate pricing to ORBIT with budget T - n_exp.

    ``pilot`` overrides the fitted oracle (for instance an exact index map).
    Returns (transcript, frozen pilot).
    """
    T = u.size
    if not 1 <= n_exp < T:
        raise ConfigurationError("need 1 <= n_exp < T")
    T_nominal = T if T_nominal is None else T_nominal
    fb = BernoulliFeedback(u, demand_uniforms, instance.tail)
    tr = empty_transcript(u)
    burn = np.arange(n_exp)
    prices = explore_uniforms[:n_exp] * instance.p_max
    y = fb.purchase(burn, prices)
    tr.price[burn] = prices
    tr.purchase[burn] = y
    tr.phase[burn] = BURNIN
    if pilot is None:
        data = BurninDataset(X[:n_exp], instance.p_max * y.astype(float), instance.p_max)
        if oracle == "lasso":
            pilot = fit_lasso_pilot(data, instance.u_min, instance.u_max, T_nominal, C_lambda)
        elif oracle == "locpoly":
            pilot = fit_locpoly_pilot(data, instance.u_min, instance.u_max, T_nominal, gamma)
        else:
            raise ConfigurationError(f"unknown oracle {oracle!r}")
    rest = np.arange(n_exp, T)
    u_tilde = pilot.predict(X[n_exp:])
    tr.u_tilde[rest] = u_tilde
    cfg = OrbitConfig(u_min=instance.u_min, u_max=instance.u_max, p_max=instance.p_max,
                      H=T - n_exp, **(orbit_params or {}))
    orb = Orbit(cfg, seed=orbit_seed)
    out = orb.run(u_tilde, fb.subset(rest))
    merge_orbit(tr, rest, out)
    tr.meta = {"n_exp": n_exp, "oracle": pilot.oracle_kind,
               **{k: v for k, v in pilot.meta.items() if k != "theta"}}
    return tr, pilot
