import numpy as np
import pytest

from orbit_pricing.env import (BernoulliFeedback, Instance, TailModel, make_experiment_instance,
                               make_truncated_linear_tail, oracle_price, revenue)
from orbit_pricing.errors import ContractViolation, NumericalError
from orbit_pricing.orbit import Orbit, OrbitConfig, assign_bin
from orbit_pricing.records import REFINE, empty_transcript, merge_orbit
from orbit_pricing.verify import (cdf_shape_constants, concavity_radius, quadratic_growth_scan,
                                  refinement_decomposition, structure_report)

B = 31 / 32
ENV = make_experiment_instance("sphere_iid", 5)


def _one_dim(tail, u_range, p_max):
    return Instance(utility=lambda x: np.asarray(x)[:, 0], context_sampler=None, tail=tail, p_max=p_max,
                    index_interval=u_range, dim=1)


def test_growth_truncated_linear_strip():
    tail = make_truncated_linear_tail(B)
    inst = _one_dim(tail, (0.0, 1 / 32), 1.0)
    # p* = (B + u)/2 and the probes keep p - u inside the linear piece
    lo, hi = quadratic_growth_scan(inst, oracle=lambda u: (B + u) / 2, p_range=(0.3, 0.7))
    assert lo == pytest.approx(2 / B, rel=1e-9) and hi == pytest.approx(2 / B, rel=1e-9)


def test_growth_pure_quadratic():
    rev = lambda u, p: 1 - (p - 1) ** 2 + 0 * u
    lo, hi = quadratic_growth_scan(revenue=rev, oracle=lambda u: np.ones_like(u), u_range=(0, 1),
                                   p_range=(0, 3))
    assert lo == pytest.approx(2, rel=1e-9) and hi == pytest.approx(2, rel=1e-9)
    rho = concavity_radius(revenue=rev, oracle=lambda u: np.ones_like(u), sigma_r=2.0, p_max=10.0,
                           u_range=(0, 1), rho_start=8.0)
    # interiority: 1 - rho > 0 first holds at rho = 0.5
    assert rho == 0.5


def test_growth_detects_bad_oracle():
    rev = lambda u, p: 1 - (p - 1) ** 2 + 0 * u
    with pytest.raises(NumericalError):
        quadratic_growth_scan(revenue=rev, oracle=lambda u: np.full_like(u, 1.5), u_range=(0, 1),
                              p_range=(0, 3))


def test_experiment_env_growth_and_radius():
    lo, hi = quadratic_growth_scan(ENV)
    assert 0 < lo <= hi
    assert concavity_radius(ENV, lo) > 0


def test_cdf_constants_linear_tail():
    tail = TailModel(func=lambda z: np.clip(1 - np.asarray(z, dtype=float), 0, 1), support_lo=0.0,
                     support_hi=1.0)
    c = cdf_shape_constants(_one_dim(tail, (0, 0.1), 1.0), gap_range=(0.2, 0.8))
    assert c["applicable"]
    assert c["c_l"] == pytest.approx(1, abs=1e-9) and c["c_u"] == pytest.approx(1, abs=1e-9)
    assert c["c_phi"] == pytest.approx(2, abs=1e-6)
    assert c["sigma_lower"] == pytest.approx(2, abs=1e-6) and c["L_upper"] == pytest.approx(2, abs=1e-6)


def test_cdf_constants_flat_tail_not_applicable():
    tail = TailModel(func=lambda z: np.where(np.asarray(z) < 0.5, 1.0, np.clip(2 - 2 * np.asarray(z), 0, 1)),
                     support_lo=0.0, support_hi=1.0)
    c = cdf_shape_constants(_one_dim(tail, (0, 0.1), 1.0), gap_range=(0.1, 0.9))
    assert c["applicable"] is False


def test_structure_report_experiment_env():
    rep = structure_report(ENV)
    assert all(rep.flags.values()), rep.flags
    assert rep.cdf_constants["sigma_lower"] <= rep.sigma_r_est <= rep.L_r_est <= rep.cdf_constants["L_upper"]
    text = rep.to_text()
    assert "flags.scan_stable = true" in text and "resolutions.fd_step" in text


def _exact_run(T, h, seed=0):
    rng = np.random.default_rng(seed)
    u = ENV.sample_indices(rng, T)
    fb = BernoulliFeedback(u, rng.random(T), ENV.tail)
    o = Orbit(OrbitConfig(1, 3, 3.5, T, eta_grid=0.1, m0=0.5, target_h=h), seed=seed)
    tr = empty_transcript(u)
    tr.u_tilde[:] = u
    merge_orbit(tr, np.arange(T), o.run(u, fb))
    return tr, o


def test_decomposition_identity_and_comparator():
    tr, o = _exact_run(30_000, 0.25)
    dec = refinement_decomposition(tr, ENV, o)
    assert dec
    for v in dec.values():
        assert v["R_approx"] + v["R_learn"] == pytest.approx(v["R"], abs=1e-8)
    # post the comparator's own prices: the learning term vanishes
    tr2 = empty_transcript(tr.u)
    tr2.u_tilde[:] = tr.u_tilde
    tr2.phase[:], tr2.bin[:], tr2.price[:] = tr.phase, tr.bin, tr.price
    part = o.partition
    for j, v in dec.items():
        rows = np.flatnonzero((tr.phase == REFINE) & (tr.bin == j))
        z = np.clip(2 * (tr.u_tilde[rows] - part.midpoint(j)) / part.bar_h, -1, 1)
        tr2.price[rows] = np.clip(v["a_star"] @ z[None, :] ** np.arange(v["a_star"].size)[:, None], 0, 3.5)
    for v in refinement_decomposition(tr2, ENV, o).values():
        assert v["R_learn"] <= 1e-8


def test_decomposition_single_round():
    tr, o = _exact_run(60_000, 0.25)
    refine = np.flatnonzero(tr.phase == REFINE)
    keep = refine[0]
    tr.phase[refine[1:]] = 0
    dec = refinement_decomposition(tr, ENV, o)
    assert list(dec) == [int(tr.bin[keep])]
    v = dec[int(tr.bin[keep])]
    assert v["n"] == 1
    assert v["R_approx"] + v["R_learn"] == pytest.approx(v["R"], abs=1e-12)
    # with one round the grid comparator is at least as good as the posted price up to grid slack
    assert v["R_learn"] <= 1e-3


def _with_means(b, r, grid):
    b.counts[:] = 10 ** 9
    b.buys[:] = np.rint(np.where(grid > 0, r / np.maximum(grid, 1e-300), 0.0) * 10 ** 9).astype(np.int64)
    return b


def test_decomposition_approximation_shrinks_with_h():
    # exact pilots and noiseless anchors, so R_approx isolates the fixed-polynomial error
    per_round = []
    u = np.random.default_rng(0).uniform(1, 3, 2000)
    for h in (0.2, 0.1, 0.05):
        o = Orbit(OrbitConfig(1, 3, 3.5, 10 ** 6, eta_grid=0.04, target_h=h), seed=0)
        for b in o.bins:
            r = revenue(o.partition.midpoint(b.index), o.grid.points, ENV.tail)
            o._enter_refinement(_with_means(b, r, o.grid.points))
        tr = empty_transcript(u)
        tr.u_tilde[:] = u
        tr.phase[:] = REFINE
        tr.bin[:] = [assign_bin(o.partition, x) for x in u]
        tr.price[:] = oracle_price(u, ENV)
        dec = refinement_decomposition(tr, ENV, o)
        per_round.append(sum(v["R_approx"] for v in dec.values()) / u.size)
    assert per_round[0] > per_round[1] > per_round[2]
    assert per_round[2] < 0.01 * per_round[0]


def test_decomposition_needs_attribution():
    tr, o = _exact_run(2000, 0.5)
    tr.phase = None
    with pytest.raises(ContractViolation):
        refinement_decomposition(tr, ENV, o)
