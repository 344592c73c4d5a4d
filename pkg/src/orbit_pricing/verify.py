"""Numerical checks of the revenue geometry an instance is supposed to have.

Everything here is diagnostic: quadratic growth of revenue around the oracle
price, the radius on which revenue is strongly concave, the slope of the
oracle price map, density-based bounds on the growth constants, and the
split of refinement regret into approximation and learning parts.
"""
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .env import Instance, build_oracle_table, maximize_revenue
from .errors import ContractViolation, NumericalError
from .orbit import Orbit, poly_price
from .records import REFINE, Transcript

FD_STEP = 1e-4


def _revenue_fn(instance):
    tail = instance.tail
    return lambda u, p: p * tail.eval(p - u)


def _oracle_fn(instance):
    return lambda u: maximize_revenue(u, instance.tail, instance.p_max)


def quadratic_growth_scan(instance: Optional[Instance] = None, grid_res=None, n_u=200, n_p=400,
                          revenue: Optional[Callable] = None, oracle: Optional[Callable] = None,
                          u_range=None, p_range=None, gap_tol=1e-9):
    """Min and max of 2 (r(u, p*) - r(u, p)) / (p - p*)^2 over a (u, p) grid.

    Points with |p - p*(u)| < 10 grid_res are skipped.  ``revenue`` and
    ``oracle`` override the instance (both take arrays).
    """
    revenue = revenue or _revenue_fn(instance)
    oracle = oracle or _oracle_fn(instance)
    u_lo, u_hi = u_range or instance.index_interval
    p_lo, p_hi = p_range or (0.0, instance.p_max)
    grid_res = (p_hi - p_lo) / (n_p - 1) if grid_res is None else grid_res
    n_p = int(round((p_hi - p_lo) / grid_res)) + 1
    u = np.linspace(u_lo, u_hi, n_u)
    p = np.linspace(p_lo, p_hi, n_p)
    ps = np.asarray(oracle(u), dtype=float)
    U, P = np.meshgrid(u, p, indexing="ij")
    best = revenue(u, ps)[:, None]
    gap = best - revenue(U, P)
    if np.any(gap < -gap_tol):
        raise NumericalError(f"oracle is beaten by {-gap.min():.3g}; oracle price inconsistent")
    d = P - ps[:, None]
    keep = np.abs(d) >= 10 * grid_res
    ratio = 2.0 * gap[keep] / d[keep] ** 2
    return float(ratio.min()), float(ratio.max())


def concavity_radius(instance: Optional[Instance] = None, sigma_r=None, n_u=200, step=FD_STEP,
                     revenue: Optional[Callable] = None, oracle: Optional[Callable] = None,
                     p_max=None, u_range=None, rho_start=1.0, levels=30, n_band=81):
    """Largest dyadic rho with -r_pp >= sigma_r / 2 on |p - p*(u)| <= rho inside (0, p_max).

    Returns 0.0 when no level passes.
    """
    revenue = revenue or _revenue_fn(instance)
    oracle = oracle or _oracle_fn(instance)
    p_max = instance.p_max if p_max is None else p_max
    if sigma_r is None:
        sigma_r = quadratic_growth_scan(instance, revenue=revenue, oracle=oracle)[0]
    u_lo, u_hi = u_range or instance.index_interval
    u = np.linspace(u_lo, u_hi, n_u)
    ps = np.asarray(oracle(u), dtype=float)
    rho = rho_start
    for _ in range(levels):
        if np.all(ps - rho > 0) and np.all(ps + rho < p_max):
            offs = np.linspace(-rho, rho, n_band)
            P = ps[:, None] + offs[None, :]
            U = np.broadcast_to(u[:, None], P.shape)
            rpp = (revenue(U, P + step) - 2 * revenue(U, P) + revenue(U, P - step)) / step ** 2
            if np.all(-rpp >= sigma_r / 2):
                return rho
        rho /= 2
    return 0.0


def cdf_shape_constants(instance: Instance, gap_range=None, step=FD_STEP, n=2001, margin=0.05,
                        density_floor=1e-8):
    """Density-based curvature constants on a gap interval.

    f = -g' and f' by central differences, phi(v) = v - g/f and
    phi' = 2 + g f' / f^2.  By default the gap interval is the band of
    oracle gaps p*(u) - u over the index interval, widened by ``margin``.
    Returns a dict with c_l, c_u, M_f, c_phi, the implied bounds
    sigma_lower = c_l c_phi and L_upper = c_u (2 + M_f / c_l^2), and
    ``applicable`` (False when the density falls below ``density_floor``).
    """
    g = instance.tail.eval
    if gap_range is None:
        u = np.linspace(*instance.index_interval, 201)
        z = maximize_revenue(u, instance.tail, instance.p_max) - u
        gap_range = (float(z.min()) - margin, float(z.max()) + margin)
    z = np.linspace(gap_range[0], gap_range[1], n)
    f = -(g(z + step) - g(z - step)) / (2 * step)
    fp = -(g(z + step) - 2 * g(z) + g(z - step)) / step ** 2
    out = {"gap_lo": gap_range[0], "gap_hi": gap_range[1]}
    if np.min(f) < density_floor:
        out.update(applicable=False, c_l=float(np.min(f)), c_u=float(np.max(f)), M_f=float("nan"),
                   c_phi=float("nan"), sigma_lower=float("nan"), L_upper=float("nan"))
        return out
    phi_prime = 2.0 + g(z) * fp / f ** 2
    c_l, c_u = float(f.min()), float(f.max())
    M_f, c_phi = float(np.abs(fp).max()), float(phi_prime.min())
    out.update(applicable=c_phi > 0, c_l=c_l, c_u=c_u, M_f=M_f, c_phi=c_phi,
               sigma_lower=c_l * c_phi, L_upper=c_u * (2.0 + M_f / c_l ** 2))
    return out


def oracle_lipschitz(instance: Instance, resolution=None):
    """Slope bound of p*(u) from an oracle table and from a table at half the resolution."""
    lo, hi = instance.index_interval
    res = 1e-3 * (hi - lo) if resolution is None else resolution
    a = build_oracle_table(instance, res).lipschitz_estimate()
    b = build_oracle_table(instance, res / 2).lipschitz_estimate()
    return a, b


def refinement_decomposition(transcript: Transcript, instance: Instance, orbit: Orbit, grid_div=50,
                             chunk=2_000_000):
    """Per-bin split of refinement regret against the best fixed coefficient on a grid.

    The comparator a* maximises total expected revenue over a coordinate
    grid (spacing trust_radius / grid_div) restricted to the l1 trust region.
    Then R = R_approx(a*) + R_learn(a*) with
    R_approx = sum r(u, p*(u)) - r(u, price(a*)) and
    R_learn = sum r(u, price(a*)) - r(u, posted price).
    """
    if transcript.phase is None or transcript.bin is None:
        raise ContractViolation("transcript lacks phase or bin attribution")
    rev = _revenue_fn(instance)
    part = orbit.partition
    out = {}
    for b in orbit.bins:
        rows = np.flatnonzero((transcript.phase == REFINE) & (transcript.bin == b.index))
        if rows.size == 0:
            continue
        if b.trust_center is None:
            raise ContractViolation(f"bin {b.index} has refinement rounds but no trust region")
        u, ut, p = transcript.u[rows], transcript.u_tilde[rows], transcript.price[rows]
        cands = _l1_grid(b.trust_center, b.trust_radius, grid_div)
        mid, bar_h = part.midpoint(b.index), part.bar_h
        z = np.clip(2.0 * (ut - mid) / bar_h, -1.0, 1.0)
        basis = z[None, :] ** np.arange(cands.shape[1])[:, None]
        best_val, best_a = -np.inf, None
        step = max(1, chunk // rows.size)
        for s in range(0, cands.shape[0], step):
            C = cands[s:s + step]
            prices = np.clip(C @ basis, 0.0, instance.p_max)
            tot = rev(u[None, :], prices).sum(axis=1)
            k = int(np.argmax(tot))
            if tot[k] > best_val:
                best_val, best_a = tot[k], C[k]
        ps = maximize_revenue(u, instance.tail, instance.p_max)
        r_star = rev(u, ps)
        p_comp = np.clip(best_a @ basis, 0.0, instance.p_max)
        r_comp = rev(u, p_comp)
        r_post = rev(u, p)
        out[b.index] = {"n": int(rows.size), "R": float(np.sum(r_star - r_post)),
                        "R_approx": float(np.sum(r_star - r_comp)), "R_learn": float(np.sum(r_comp - r_post)),
                        "a_star": best_a}
    return out


def _l1_grid(center, radius, div):
    center = np.asarray(center, dtype=float)
    k = np.arange(-div, div + 1) * (radius / div)
    mesh = np.stack(np.meshgrid(*([k] * center.size), indexing="ij"), axis=-1).reshape(-1, center.size)
    mesh = mesh[np.abs(mesh).sum(axis=1) <= radius * (1 + 1e-12)]
    return center + mesh


@dataclass
class StructureReport:
    sigma_r_est: float
    L_r_est: float
    rho0_est: float
    L_p_est: float
    L_p_est_fine: float
    cdf_constants: Optional[dict] = None
    resolutions: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    def to_text(self):
        lines = []
        for k, v in asdict(self).items():
            if isinstance(v, dict):
                for kk, vv in v.items():
                    lines.append(f"{k}.{kk} = {_fmt(vv)}")
            else:
                lines.append(f"{k} = {_fmt(v)}")
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def structure_report(instance: Instance, n_u=200, n_p=400):
    sigma, L = quadratic_growth_scan(instance, n_u=n_u, n_p=n_p)
    sigma2, L2 = quadratic_growth_scan(instance, n_u=n_u, n_p=2 * n_p - 1)
    rho0 = concavity_radius(instance, sigma, n_u=n_u)
    lp, lp_fine = oracle_lipschitz(instance)
    cdf = cdf_shape_constants(instance)
    flags = {
        "sigma_le_L": sigma <= L,
        "rho0_positive": rho0 > 0,
        "scan_stable": abs(sigma2 - sigma) <= 0.05 * abs(sigma) and abs(L2 - L) <= 0.05 * abs(L),
        "L_p_stable": abs(lp_fine - lp) <= 0.05 * abs(lp),
        "cdf_bracket": bool(cdf["applicable"] and cdf["sigma_lower"] <= sigma and L <= cdf["L_upper"]),
    }
    return StructureReport(sigma, L, rho0, lp, lp_fine, cdf,
                           {"n_u": n_u, "n_p": n_p, "fd_step": FD_STEP,
                            "oracle_resolution": 1e-3 * (instance.u_max - instance.u_min)}, flags)
