"""Bump-perturbed uniform-like tails that move the oracle price by +-w^(beta-1).

The baseline noise law on [0, B] has density 1/B away from two smooth
shoulders, so its tail is exactly 1 - z/B on a central strip.  Small odd
bumps of height kappa w^beta placed at the baseline optimal gaps z_j nudge the
oracle price for context c_j up or down according to a sign vector omega,
while leaving the noise mean unchanged.
"""
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import CubicHermiteSpline

from .env import Instance, TailModel, maximize_revenue, smooth_cutoff
from .errors import AmplitudeError, ConfigurationError, ConstructionError

B_DEFAULT = 31.0 / 32.0
C_LOC = 1.0 / 32.0
STRIP = (1.0 / 8.0, 7.0 / 8.0)


def bump_phi(t):
    """Odd bump e t exp(-1/(1 - 64 t^2)) on |t| < 1/8, zero elsewhere; slope 1 at 0."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 0.125
    ti = t[inside]
    out[inside] = math.e * ti * np.exp(-1.0 / (1.0 - 64.0 * ti * ti))
    return out if out.ndim else float(out)


def bump_phi_prime(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 0.125
    ti = t[inside]
    s = 1.0 - 64.0 * ti * ti
    e = np.exp(-1.0 / s)
    out[inside] = math.e * e * (1.0 - 128.0 * ti * ti / (s * s))
    return out if out.ndim else float(out)


def _shoulder_bump(t):
    # smooth, positive on (0, 1), flat to all orders at both ends
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = (t > 0) & (t < 1)
    ti = t[inside]
    out[inside] = np.exp(-1.0 / (ti * (1.0 - ti)))
    return out


class _Shoulder:
    """Left shoulder density h(z) = (1/B) cutoff(z/delta) + c bump(z/delta) on [0, delta].

    c is fixed by requiring the shoulder to carry mass delta/B, which keeps
    the tail exactly 1 - z/B once past the shoulder.  Its primitive is
    tabulated once and evaluated by Hermite interpolation with the exact
    density as slope.
    """

    def __init__(self, B, delta, nodes=4001):
        self.B, self.delta = B, delta
        cut_mass, _ = integrate.quad(lambda t: float(smooth_cutoff(t)), 0.0, 1.0, epsabs=1e-14, epsrel=1e-14)
        bump_mass, _ = integrate.quad(lambda t: float(_shoulder_bump(np.array(t))), 0.0, 1.0,
                                      epsabs=1e-15, epsrel=1e-13)
        # mass of the shoulder is delta * (cut_mass / B + c * bump_mass); solve for c
        c = (1.0 / B - cut_mass / B) / bump_mass
        if not np.isfinite(c) or c < 0:
            raise ConstructionError("shoulder correction coefficient is not a finite nonnegative number")
        self.c = c
        t = np.linspace(0.0, 1.0, nodes)
        dens = self._unit_density(t)
        # 10-point Gauss-Legendre per cell; the density is smooth, so this is exact to rounding
        x, wts = np.polynomial.legendre.leggauss(10)
        a, b = t[:-1, None], t[1:, None]
        pts = 0.5 * (b - a) * x[None, :] + 0.5 * (a + b)
        cells = 0.5 * (b - a)[:, 0] * (self._unit_density(pts.ravel()).reshape(pts.shape) @ wts)
        prim = np.concatenate(([0.0], np.cumsum(cells)))
        self.mass_error = abs(prim[-1] - 1.0 / B)
        if self.mass_error > 1e-11:
            raise ConstructionError(f"shoulder mass off by {self.mass_error:.3g}")
        prim[-1] = 1.0 / B
        self._spline = CubicHermiteSpline(t, prim, dens)

    def _unit_density(self, t):
        return smooth_cutoff(t) / self.B + self.c * _shoulder_bump(t)

    def density(self, z):
        return self._unit_density(np.asarray(z, dtype=float) / self.delta)

    def primitive(self, z):
        """Integral of the density from 0 to z, for z in [0, delta]."""
        t = np.clip(np.asarray(z, dtype=float) / self.delta, 0.0, 1.0)
        return self.delta * self._spline(t)


def _baseline_funcs(B, delta):
    sh = _Shoulder(B, delta)

    def g(z):
        z = np.asarray(z, dtype=float)
        out = np.where(z <= 0.0, 1.0, np.where(z >= B, 0.0, 1.0 - z / B))
        left = (z > 0) & (z < delta)
        right = (z > B - delta) & (z < B)
        out = np.array(out, dtype=float)
        out[left] = 1.0 - sh.primitive(z[left])
        out[right] = sh.primitive(B - z[right])
        return out if out.ndim else float(out)

    def dg(z):
        z = np.asarray(z, dtype=float)
        out = np.where((z > 0) & (z < B), -1.0 / B, 0.0)
        left = (z > 0) & (z < delta)
        right = (z > B - delta) & (z < B)
        out = np.array(out, dtype=float)
        out[left] = -sh.density(z[left])
        out[right] = -sh.density(B - z[right])
        return out if out.ndim else float(out)

    return g, dg, sh


def baseline_tail(epsilon0=0.01, delta=None, B=B_DEFAULT):
    """Smooth tail equal to 1 - z/B on [delta, B - delta], 1 below 0 and 0 above B."""
    if delta is None:
        delta = min(1.0 / 16.0, B * epsilon0 / 8.0)
    if not 0 < delta < min(1.0 / 8.0, B - 7.0 / 8.0, B * epsilon0 / 4.0):
        raise ConfigurationError("need 0 < delta < min(1/8, B - 7/8, B eps0 / 4)")
    g, dg, sh = _baseline_funcs(B, delta)
    return TailModel(func=g, support_lo=0.0, support_hi=B, beta=math.inf, lipschitz_bound=float(
        np.max(sh.density(np.linspace(0, delta, 2001)))), name="baseline", derivative=dg)


@dataclass
class HardFamily:
    beta: float = 2.0
    gamma: float = 0.1
    kappa: float = 0.05
    T_nominal: float = 1e10
    epsilon0: float = 0.01
    delta: Optional[float] = None
    B: float = B_DEFAULT
    w: float = field(init=False)
    M: int = field(init=False)
    mu0: float = field(init=False)
    baseline: TailModel = field(init=False, repr=False)

    def __post_init__(self):
        if self.beta < 2:
            raise ConfigurationError("beta must be at least 2")
        if self.kappa < 0 or self.gamma <= 0:
            raise ConfigurationError("need kappa >= 0 and gamma > 0")
        if self.delta is None:
            self.delta = min(1.0 / 16.0, self.B * self.epsilon0 / 8.0)
        self.w = self.gamma * float(self.T_nominal) ** (-1.0 / (4 * self.beta - 3))
        self.M = int(math.floor(1.0 / (64.0 * self.w) + 1e-12))
        if self.M < 1:
            raise ConstructionError(f"horizon too small: w={self.w:.4g} leaves no bump")
        self.baseline = baseline_tail(self.epsilon0, self.delta, self.B)
        self.mu0 = tail_mean(self.baseline)
        lo, hi = STRIP
        z = self.z_points
        if np.any(z - self.w / 8 < lo) or np.any(z + self.w / 8 > hi):
            raise ConstructionError("bump supports leave the linear strip")

    @property
    def j(self):
        return np.arange(1, self.M + 1)

    @property
    def z_points(self):
        return self.B / 2.0 - self.j * self.w

    @property
    def c_points(self):
        return 2.0 * self.j * self.w

    @property
    def p0(self):
        return (self.B + self.c_points) / 2.0

    def random_omega(self, rng):
        return rng.choice([-1, 1], size=self.M)

    def report(self):
        return {"beta": self.beta, "gamma": self.gamma, "kappa": self.kappa, "T_nominal": self.T_nominal,
                "epsilon0": self.epsilon0, "delta": self.delta, "B": self.B, "w": self.w, "M": self.M,
                "mu0": self.mu0}


def tail_mean(tail: TailModel, tol=1e-10):
    """Mean of a noise law supported on [0, support_hi]: the integral of its tail."""
    pts = [tail.support_hi * k / 64 for k in range(1, 64)]
    val, err = integrate.quad(lambda z: float(tail.eval(z)), 0.0, tail.support_hi, points=pts,
                              epsabs=tol, epsrel=1e-12, limit=500)
    return val


def _check_monotone(g, lo, hi, n=100_000, tol=1e-12):
    z = np.linspace(lo, hi, n)
    v = g(z)
    if np.any(v < -tol) or np.any(v > 1 + tol):
        return False
    return not np.any(np.diff(v) > tol)


def perturbed_tail(family: HardFamily, omega):
    """g_0 + kappa w^beta sum_j omega_j phi((z - z_j)/w)."""
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (family.M,):
        raise ConfigurationError(f"omega must have length M={family.M}")
    if not np.all(np.isin(omega, (-1.0, 0.0, 1.0))):
        raise ConfigurationError("omega entries must be -1, 0 or +1")
    g0, dg0 = family.baseline.func, family.baseline.derivative
    amp = family.kappa * family.w ** family.beta
    w, Bh, M = family.w, family.B / 2.0, family.M

    def nearest(z):
        k = np.rint((Bh - z) / w).astype(np.int64)
        ok = (k >= 1) & (k <= M)
        kk = np.where(ok, k, 1)
        return kk, ok, (z - (Bh - kk * w)) / w

    def g(z):
        z = np.asarray(z, dtype=float)
        base = np.asarray(g0(z), dtype=float)
        k, ok, t = nearest(z)
        out = base + np.where(ok, amp * omega[k - 1] * bump_phi(np.where(ok, t, 1.0)), 0.0)
        return out if out.ndim else float(out)

    def dg(z):
        z = np.asarray(z, dtype=float)
        base = np.asarray(dg0(z), dtype=float)
        k, ok, t = nearest(z)
        out = base + np.where(ok, (amp / w) * omega[k - 1] * bump_phi_prime(np.where(ok, t, 1.0)), 0.0)
        return out if out.ndim else float(out)

    if not _check_monotone(g, -0.05, family.B + 0.05):
        raise AmplitudeError(f"kappa={family.kappa} breaks monotonicity; use a smaller kappa")
    return TailModel(func=g, support_lo=0.0, support_hi=family.B, beta=family.beta,
                     lipschitz_bound=family.baseline.lipschitz_bound, name="perturbed", derivative=dg)


def centered_instance(family: HardFamily, omega):
    """One-dimensional instance with zero-mean noise and contexts mu0 + c_j drawn uniformly."""
    g = perturbed_tail(family, omega)
    mu0 = family.mu0
    gf, dgf = g.func, g.derivative

    centered = TailModel(func=lambda z: gf(np.asarray(z, dtype=float) + mu0), support_lo=-mu0,
                         support_hi=family.B - mu0, beta=family.beta, lipschitz_bound=g.lipschitz_bound,
                         name="centered_perturbed",
                         derivative=lambda z: dgf(np.asarray(z, dtype=float) + mu0))
    xs = mu0 + family.c_points

    def sampler(rng, n):
        return xs[rng.integers(0, xs.size, size=n)][:, None]

    theta = np.ones(1)
    theta.setflags(write=False)
    return Instance(utility=lambda x: np.asarray(x, dtype=float)[:, 0], context_sampler=sampler, tail=centered,
                    p_max=1.0, index_interval=(mu0, mu0 + C_LOC), dim=1, theta=theta, name="hard_instance",
                    meta={"family": family.report(), "omega": np.asarray(omega), "contexts": xs},
                    index_sampler=lambda rng, n: xs[rng.integers(0, xs.size, size=n)])


def polish_oracle(tail: TailModel, u, p_start, half_width):
    """Root of d/dp [p g(p - u)] near p_start, using the analytic tail derivative."""
    def dr(p):
        return float(tail.eval(p - u)) + p * float(tail.derivative(np.asarray(p - u)))
    lo, hi = p_start - half_width, p_start + half_width
    if dr(lo) <= 0 or dr(hi) >= 0:
        return p_start
    return optimize.brentq(dr, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


def shift_check(family: HardFamily, omega, instance: Optional[Instance] = None):
    """Per-context oracle displacement omega_j (p*_omega(c_j) - p0_j) / w^(beta-1)."""
    inst = centered_instance(family, omega) if instance is None else instance
    omega = np.asarray(omega, dtype=float)
    xs = family.mu0 + family.c_points
    coarse = maximize_revenue(xs, inst.tail, inst.p_max, tol=1e-9)
    scale = family.w ** (family.beta - 1)
    rows = []
    for j, (x, pc, p0, om) in enumerate(zip(xs, np.atleast_1d(coarse), family.p0, omega), start=1):
        p = polish_oracle(inst.tail, x, pc, family.w / 16)
        shift = p - p0
        rows.append({"j": j, "omega": int(om), "p_star": p, "p0": p0, "shift": shift,
                     "sign_ok": bool(np.sign(shift) == om) if om != 0 else bool(abs(shift) < 1e-12),
                     "ratio": om * shift / scale if om != 0 else 0.0})
    return rows


def family_checks(family: HardFamily, n_omega=10, seed=0, w_pair=(1e-2, 1e-3)):
    """Mean invariance, sign correctness and shift scaling for a family.

    The shift scaling compares the median normalised shift at two bump
    scales ``w_pair`` (same beta, gamma, kappa; horizons solved from w).
    """
    rng = np.random.default_rng(seed)
    means, sign_ok = [], True
    for _ in range(n_omega):
        om = family.random_omega(rng)
        inst = centered_instance(family, om)
        means.append(tail_mean(perturbed_tail(family, om)))
        rows = shift_check(family, om, inst)
        sign_ok &= all(r["sign_ok"] for r in rows)
    means = np.array(means)
    ratios = []
    for w in w_pair:
        T = (family.gamma / w) ** (4 * family.beta - 3)
        fam = HardFamily(beta=family.beta, gamma=family.gamma, kappa=family.kappa, T_nominal=T,
                         epsilon0=family.epsilon0, delta=family.delta, B=family.B)
        om = fam.random_omega(rng)
        ratios.append(float(np.median([r["ratio"] for r in shift_check(fam, om)])))
    rel = abs(ratios[1] / ratios[0] - 1.0)
    return {"M": family.M, "w": family.w, "mu0": family.mu0,
            "mu0_spread": float(means.max() - means.min()), "mu0_max_dev": float(np.abs(means - family.mu0).max()),
            "sign_ok": bool(sign_ok), "shift_ratio_a": ratios[0], "shift_ratio_b": ratios[1],
            "shift_ratio_rel_diff": rel,
            "pass": bool(means.max() - means.min() <= 1e-8 and sign_ok and rel <= 0.25)}
