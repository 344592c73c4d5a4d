"""Acceptance criteria 1-12, each with its runtime budget."""
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from orbit_pricing.bco import RefinementGenerator
from orbit_pricing.env import (BernoulliFeedback, build_oracle_table, make_experiment_instance,
                               make_experiment_tail, maximize_revenue, oracle_price)
from orbit_pricing.hard_instance import HardFamily, baseline_tail, family_checks, perturbed_tail
from orbit_pricing.harness import ExperimentConfig, fit_loglog_slope, pilot_eta, run
from orbit_pricing.orbit import Orbit, OrbitConfig, build_bins, build_grid
from orbit_pricing.pilot_offline import (BurninDataset, lasso_fit, lasso_lambda, locpoly_bandwidth,
                                         locpoly_predict)
from orbit_pricing.records import COARSE, REFINE
from orbit_pricing.verify import structure_report

ENV = make_experiment_instance("sphere_iid", 5)


def _tail_ok(g, lo, hi, n=100_000):
    z = np.linspace(lo - 0.1, hi + 0.1, n)
    v = np.asarray(g(z), dtype=float)
    return (bool(np.all(np.diff(v) <= 1e-12)) and v.min() >= 0.0 and v.max() <= 1.0
            and float(g(lo)) == 1.0 and float(g(hi)) == 0.0)


def test_c01_oracle_exactness(criterion):
    t0 = time.time()
    B = 31 / 32
    g0 = baseline_tail()
    u = np.linspace(0, 1 / 32, 100)
    err = np.max(np.abs(maximize_revenue(u, g0, 1.0) - (B + u) / 2))
    dt = time.time() - t0
    criterion(1, err <= 1e-6 and dt < 1, f"max |p* - (B+u)/2| = {err:.2e}, {dt:.2f}s")


def test_c02_tail_invariants(criterion):
    t0 = time.time()
    tail = make_experiment_tail()
    ok = _tail_ok(tail.eval, tail.support_lo, tail.support_hi)
    fam = HardFamily()
    rng = np.random.default_rng(0)
    for _ in range(10):
        g = perturbed_tail(fam, fam.random_omega(rng))
        ok &= _tail_ok(g.eval, g.support_lo, g.support_hi)
    dt = time.time() - t0
    criterion(2, ok and dt < 5, f"experiment tail and 10 perturbed tails, {dt:.2f}s")


def test_c03_hard_family(criterion):
    t0 = time.time()
    c = family_checks(HardFamily(beta=2, gamma=0.1, kappa=0.05, T_nominal=1e10))
    dt = time.time() - t0
    criterion(3, c["pass"] and dt < 60,
              f"mu0 spread {c['mu0_spread']:.1e}, signs {c['sign_ok']}, "
              f"shift ratio rel diff {c['shift_ratio_rel_diff']:.3f}, {dt:.1f}s")


def test_c04_pilot_unbiasedness(criterion):
    t0 = time.time()
    rng = np.random.default_rng(0)
    n = 100_000
    zs = []
    for x in ENV.sample_contexts(rng, 5):
        u = np.full(n, x @ ENV.theta)
        fb = BernoulliFeedback(u, rng.random(n), ENV.tail)
        Z = ENV.p_max * fb.purchase(np.arange(n), rng.random(n) * ENV.p_max)
        zs.append(abs(Z.mean() - u[0]) / (Z.std(ddof=1) / math.sqrt(n)))
    dt = time.time() - t0
    criterion(4, max(zs) <= 3 and dt < 10, f"max |mean - u| / se = {max(zs):.2f}, {dt:.2f}s")


def test_c05_exploration_budget(criterion):
    t0 = time.time()
    T, ok, parts = 10_000, True, []
    for d in (5, 10, 20):
        cfg = ExperimentConfig(T=T, d=d, repetitions=20)
        res = run(cfg)
        inst = make_experiment_instance("sphere_iid", d)
        eta = pilot_eta(cfg, inst, T)
        bound = 50 * d * eta ** -2 * math.log(math.e * T)
        n_exp = [res.runs[(T, r)].meta["n_explore"] for r in range(20)]
        acc = []
        for r in range(20):
            tr = res.runs[(T, r)]
            rows = np.isin(tr.phase, (COARSE, REFINE))
            acc.append(np.mean(np.abs(tr.u_tilde[rows] - tr.u[rows]) <= eta))
        ok &= max(n_exp) <= bound and min(acc) >= 0.99
        parts.append(f"d={d}: max explore {max(n_exp)} <= {bound:.0f}, min acc {min(acc):.4f}")
    dt = time.time() - t0
    criterion(5, ok and dt < 120, "; ".join(parts) + f", {dt:.1f}s")


def _conditional_index(rng, lo, hi, n, a=1.5):
    # u = 1 + 2t with t ~ Beta(a, a) restricted to [lo, hi); rejection from uniform proposals
    tl, th = (lo - 1) / 2, (hi - 1) / 2
    f = lambda t: (t * (1 - t)) ** (a - 1)
    fmax = max(f(tl), f(th), f(min(max(0.5, tl), th)))
    out = np.empty(0)
    while out.size < n:
        k = int(1.2 * (n - out.size)) + 16
        t = tl + (th - tl) * rng.random(k)
        out = np.concatenate([out, t[rng.random(k) * fmax <= f(t)]])
    return np.minimum(1 + 2 * out[:n], np.nextafter(hi, lo))


def test_c06_coarse_localization(criterion):
    # Bins run independent learners, so each bin is fed its own i.i.d. stream
    # from the index law conditioned on the bin: exactly the coarse data it
    # would see under exact pilots, without simulating refinement rounds.
    t0 = time.time()
    eta_grid, h, m = 0.04, 0.05, 1600
    part = build_bins(1, 3, h)
    n_bin = len(build_grid(3.5, eta_grid)) * m + 1
    T = n_bin * part.M
    m0 = (m - 0.5) / math.log(math.e * T)
    p_mid = oracle_price(np.array([part.midpoint(j) for j in range(1, part.M + 1)]), ENV)
    hits = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        o = Orbit(OrbitConfig(1, 3, 3.5, T, eta_grid=eta_grid, m0=m0, target_h=h), seed=seed)
        assert o.m_coarse == m
        u = np.concatenate([_conditional_index(rng, *part.edges(j), n_bin) for j in range(1, part.M + 1)])
        o.run(u, BernoulliFeedback(u, rng.random(u.size), ENV.tail))
        hits += [abs(b.anchor - p) <= o.config.rho_loc / 8 for b, p in zip(o.bins, p_mid)]
    rate = float(np.mean(hits))
    dt = time.time() - t0
    criterion(6, rate >= 0.95 and dt < 120, f"{rate:.4f} of {len(hits)} (bin, seed) pairs, {dt:.1f}s")


def test_c07_regret_growth(criterion):
    t0 = time.time()
    Ts = (3000, 10_000, 30_000, 100_000)
    orb = run(ExperimentConfig(T=Ts, d=5, repetitions=20))
    uni = run(ExperimentConfig(T=Ts, d=5, repetitions=20, policy="uniform_random"))
    med = [r["median"] for r in orb.summary]
    base = [r["median"] for r in uni.summary]
    slope = fit_loglog_slope(list(zip(Ts, med)))[0]
    below = all(a < b for a, b in zip(med, base))
    dt = time.time() - t0
    criterion(7, 0.45 <= slope <= 0.85 and below and dt < 600,
              f"slope {slope:.3f}, medians {[round(x) for x in med]} vs uniform {[round(x) for x in base]}, "
              f"{dt:.1f}s")


def _bco_avg_regret(n, seed):
    xs = np.array([0.3, -0.2])
    rng = np.random.default_rng([seed, 99])
    g = RefinementGenerator(np.zeros(2), 1.0, 1.0, H_alg=n, rng=np.random.default_rng(seed))
    tot = 0.0
    for _ in range(n):
        a = g.next_action()
        f = 0.25 + np.sum((a - xs) ** 2)
        tot += f - 0.25
        g.update(float(rng.random() < f) - 1.0)
    return tot / n


def test_c08_bco_sublinear(criterion):
    t0 = time.time()
    a = np.median([_bco_avg_regret(1000, s) for s in range(20)])
    b = np.median([_bco_avg_regret(10_000, s) for s in range(20)])
    dt = time.time() - t0
    criterion(8, b <= 0.6 * a and dt < 60, f"avg regret {a:.4f} -> {b:.4f}, ratio {b / a:.3f}, {dt:.1f}s")


def test_c09_offline_rates(criterion):
    t0 = time.time()
    T = 50_000
    inst = make_experiment_instance("sparse_cube", 200, s=5, seed=0)
    ns = [1000, 4000, 16_000]
    errs = {n: [] for n in ns}
    for seed in range(10):
        rng = np.random.default_rng(seed)
        X = inst.sample_contexts(rng, max(ns))
        fb = BernoulliFeedback(inst.utility(X), rng.random(max(ns)), inst.tail)
        y = fb.purchase(np.arange(max(ns)), rng.random(max(ns)) * inst.p_max)
        for n in ns:
            data = BurninDataset(X[:n], inst.p_max * y[:n].astype(float), inst.p_max)
            th = lasso_fit(data, lasso_lambda(inst.p_max, 200, T, n, C_lambda=0.1))
            # sup over the cube support of |x'(theta_hat - theta)| is the l1 norm
            errs[n].append(np.abs(th - inst.theta).sum())
    s_lasso = fit_loglog_slope([(n, np.median(errs[n])) for n in ns])[0]

    mu = lambda x: 1.75 + np.sin(2 * np.pi * x)
    grid = (np.arange(100) + 0.5) / 100
    ns2 = [4000, 16_000, 64_000]
    errs2 = {n: [] for n in ns2}
    for seed in range(10):
        rng = np.random.default_rng(seed)
        x = rng.random((max(ns2), 1))
        Z = 3.5 * (rng.random(max(ns2)) < mu(x[:, 0]) / 3.5)
        for n in ns2:
            data = BurninDataset(x[:n], Z[:n], 3.5)
            b = locpoly_bandwidth(T, n, 2.0, 1)
            est = np.array([locpoly_predict(data, [g], b, 1) for g in grid])
            errs2[n].append(np.abs(est - mu(grid)).max())
    s_loc = fit_loglog_slope([(n, np.median(errs2[n])) for n in ns2])[0]
    dt = time.time() - t0
    ok = abs(s_lasso + 0.5) <= 0.15 and abs(s_loc + 0.4) <= 0.15 and dt < 180
    criterion(9, ok, f"lasso slope {s_lasso:.3f}, locpoly slope {s_loc:.3f} (target -0.4), {dt:.1f}s")


def test_c10_structure(criterion):
    t0 = time.time()
    rep = structure_report(ENV)
    f = rep.flags
    ok = f["cdf_bracket"] and f["rho0_positive"] and f["L_p_stable"]
    dt = time.time() - t0
    c = rep.cdf_constants
    criterion(10, ok and dt < 60,
              f"[{c['sigma_lower']:.3f}, {c['L_upper']:.3f}] contains [{rep.sigma_r_est:.3f}, {rep.L_r_est:.3f}], "
              f"rho0 {rep.rho0_est}, L_p {rep.L_p_est:.4f}/{rep.L_p_est_fine:.4f}, {dt:.1f}s")


def test_c11_anisotropic(criterion):
    t0 = time.time()
    med = {}
    for eps in (0.05, 1.0):
        res = run(ExperimentConfig(experiment="anisotropic", eps=eps, d=5, T=50_000, repetitions=20))
        med[eps] = res.summary[0]["median"]
    dt = time.time() - t0
    criterion(11, med[0.05] <= med[1.0] and dt < 600,
              f"median regret eps=0.05: {med[0.05]:.0f}, eps=1.0: {med[1.0]:.0f}, {dt:.1f}s")


def test_c12_determinism(criterion, tmp_path):
    t0 = time.time()
    cfg = tmp_path / "run.toml"
    cfg.write_text('experiment = "linear_iid"\nT = [2000, 5000]\nd = 5\n')
    outs = []
    for k in range(2):
        out = tmp_path / f"out{k}"
        subprocess.run([sys.executable, "-m", "orbit_pricing.cli", "run", "--config", str(cfg), "--out", str(out),
                        "--reps", "3", "--seed", "11"], check=True, capture_output=True)
        outs.append({p.relative_to(out).as_posix(): p.read_bytes() for p in out.rglob("*") if p.is_file()})
    same = outs[0] == outs[1] and len(outs[0]) == 8
    dt = time.time() - t0
    criterion(12, same, f"{len(outs[0])} files byte-identical across two CLI runs, {dt:.1f}s")
