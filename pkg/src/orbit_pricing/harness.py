"""Seeded repeated runs of the simulation study, regret accounting and CSV output.

A run is a sweep over one or more horizons T; every (T, repetition) pair
is simulated from scratch with seed streams derived from
``(master_seed, repetition)``, so the same repetition sees the same
contexts and demand draws at every horizon.
"""
import dataclasses
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .env import BernoulliFeedback, Instance, build_oracle_table, make_experiment_instance
from .errors import ConfigurationError, OrbitError, RepetitionError
from .hard_instance import HardFamily, centered_instance
from .orbit import Orbit, OrbitConfig
from .pilot_adaptive import RidgeState, default_eta, paper_confidence_multiplier, run_adaptive_pilot
from .pilot_offline import run_explore_then_orbit, schedule_n_exp
from .records import PHASE_NAMES, PILOT_EXPLORE, Transcript, empty_transcript, merge_orbit

EXPERIMENTS = ("linear_iid", "anisotropic", "sparse", "hard_instance", "custom")
POLICIES = ("orbit_adaptive", "explore_then_orbit_lasso", "explore_then_orbit_locpoly", "uniform_random")
_ENV_KIND = {"linear_iid": "sphere_iid", "anisotropic": "anisotropic", "sparse": "sparse_cube"}
REGRET_FLOOR = -1e-6
CSV_HEADER = "t,phase,bin,u,u_tilde,price,purchase,inst_regret,cum_regret"


@dataclass
class ExperimentConfig:
    """Everything a run needs; ``None`` fields fall back to values derived from T and the instance."""

    experiment: str = "linear_iid"
    policy: str = "orbit_adaptive"
    T: tuple = (10_000,)
    d: int = 5
    s: Optional[int] = None
    eps: float = 1.0
    beta: float = 2.0
    repetitions: int = 1
    master_seed: int = 0
    instance_seed: int = 0
    p_max: float = 3.5
    exact_pilot: bool = False
    # adaptive pilot
    C_w: Optional[float] = None
    C_w_mult: float = 0.01
    c_eta: float = 2.0
    eta: Optional[float] = None
    # ORBIT
    eta_grid: float = 0.1
    m0: float = 0.5
    target_h: Optional[float] = None
    bco_c_delta: float = 1.0
    bco_c_eta: float = 1.0
    bco_delta_cap: float = 0.25
    # explore-then-ORBIT
    n_exp: Optional[int] = None
    c_exp: float = 1.0
    C_lambda: float = 1.0
    gamma: float = 2.0
    # hard instance family
    hi_gamma: float = 0.1
    kappa: float = 0.05
    T_nominal: float = 1e10
    epsilon0: float = 0.01
    omega_seed: int = 0
    # regret accounting
    oracle_resolution: Optional[float] = None

    def __post_init__(self):
        T = self.T
        if isinstance(T, (int, float, np.integer, np.floating)):
            T = (T,)
        self.T = tuple(_as_int("T", t) for t in T)
        self.validate()

    @classmethod
    def from_mapping(cls, mapping):
        """Build from a flat key-value mapping; unknown keys and nested tables are errors."""
        names = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(mapping) - set(names))
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {', '.join(unknown)}")
        kw = {}
        for k, v in mapping.items():
            if isinstance(v, dict):
                raise ConfigurationError(f"key {k!r}: nested tables are not supported")
            kw[k] = _coerce(k, names[k], v)
        return cls(**kw)

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if self.policy not in POLICIES:
            raise ConfigurationError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if not self.T or min(self.T) < 1:
            raise ConfigurationError("every horizon T must be at least 1")
        if len(set(self.T)) != len(self.T):
            raise ConfigurationError("horizons must be distinct")
        if self.repetitions < 1:
            raise ConfigurationError("repetitions must be at least 1")
        if self.master_seed < 0 or self.instance_seed < 0 or self.omega_seed < 0:
            raise ConfigurationError("seeds must be nonnegative")
        if self.d < 2 and self.experiment in _ENV_KIND:
            raise ConfigurationError("d must be at least 2")
        if self.experiment == "anisotropic" and not 0.0 < self.eps <= 1.0:
            raise ConfigurationError("eps must lie in (0, 1]")
        if self.experiment == "sparse" and (self.s is None or not 1 <= self.s <= self.d - 1):
            raise ConfigurationError("sparse experiment needs 1 <= s <= d - 1")
        if self.beta < 2:
            raise ConfigurationError("beta must be at least 2")
        if not self.p_max > 0:
            raise ConfigurationError("p_max must be positive")
        if self.C_w is not None and not self.C_w > 0:
            raise ConfigurationError("C_w must be positive")
        for name in ("C_w_mult", "c_eta", "eta_grid", "m0", "bco_c_delta", "bco_c_eta", "bco_delta_cap",
                     "c_exp", "C_lambda", "gamma", "hi_gamma", "T_nominal"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.eta is not None and not 0 < self.eta <= 0.5:
            raise ConfigurationError("eta must lie in (0, 1/2]")
        if self.target_h is not None and not 0 < self.target_h <= 1:
            raise ConfigurationError("target_h must lie in (0, 1]")
        if self.eta_grid > 1:
            raise ConfigurationError("eta_grid must be at most 1")
        if self.kappa < 0 or self.epsilon0 <= 0:
            raise ConfigurationError("need kappa >= 0 and epsilon0 > 0")
        if self.n_exp is not None and self.n_exp < 1:
            raise ConfigurationError("n_exp must be positive")
        if self.oracle_resolution is not None and not self.oracle_resolution > 0:
            raise ConfigurationError("oracle_resolution must be positive")
        if self.policy != "uniform_random" and not self.exact_pilot and min(self.T) < 4:
            raise ConfigurationError("pilot-driven policies need T >= 4")

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in dataclasses.fields(self)]


def _as_int(name, v):
    if isinstance(v, bool):
        raise ConfigurationError(f"{name} must be an integer")
    if isinstance(v, (float, np.floating)):
        if not float(v).is_integer():
            raise ConfigurationError(f"{name} must be an integer, got {v}")
        v = int(v)
    if not isinstance(v, (int, np.integer)):
        raise ConfigurationError(f"{name} must be an integer, got {v!r}")
    return int(v)


def _coerce(name, f, v):
    hint = str(f.type)
    if name == "T":
        return v
    if v is None:
        return None
    if "bool" in hint:
        if not isinstance(v, bool):
            raise ConfigurationError(f"{name} must be true or false")
        return v
    if "int" in hint:
        return _as_int(name, v)
    if "float" in hint:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigurationError(f"{name} must be a number, got {v!r}")
        return float(v)
    if "str" in hint:
        if not isinstance(v, str):
            raise ConfigurationError(f"{name} must be a string")
        return v
    return v


# ----------------------------------------------------------------------------
# Instances and regret


def build_instance(config: ExperimentConfig, instance: Optional[Instance] = None):
    if config.experiment == "custom":
        if instance is None:
            raise ConfigurationError("custom experiments need an Instance passed to run()")
        return instance
    if instance is not None:
        raise ConfigurationError("an explicit instance is only accepted for experiment = 'custom'")
    if config.experiment == "hard_instance":
        fam = HardFamily(beta=config.beta, gamma=config.hi_gamma, kappa=config.kappa,
                         T_nominal=config.T_nominal, epsilon0=config.epsilon0)
        omega = fam.random_omega(np.random.default_rng(config.omega_seed))
        return centered_instance(fam, omega)
    return make_experiment_instance(_ENV_KIND[config.experiment], config.d, eps=config.eps, s=config.s,
                                    seed=config.instance_seed, p_max=config.p_max)


def default_oracle_resolution(instance: Instance):
    res = 1e-3 * (instance.u_max - instance.u_min)
    fam = instance.meta.get("family") if instance.meta else None
    if fam is not None:
        res = min(res, fam["w"] / 16.0)
    return res


def regret_account(instance: Instance, oracle_table, u, price):
    """r(u, p*(u)) - r(u, price) with p* interpolated from the table.

    Values down to -1e-6 are interpolation slack and clamp to 0; anything
    more negative is kept so it shows up downstream.
    """
    u = np.asarray(u, dtype=float)
    price = np.asarray(price, dtype=float)
    ps = oracle_table(u)
    g = instance.tail.eval
    reg = ps * g(ps - u) - price * g(price - u)
    reg = np.where((reg < 0) & (reg >= REGRET_FLOOR), 0.0, reg)
    return reg if reg.ndim else float(reg)


def fit_loglog_slope(points):
    """OLS of ln(regret) on ln(T); returns (slope, intercept, r^2)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise ConfigurationError("need at least 3 (T, regret) points")
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise ValueError("log-log fit needs positive finite values")
    x, y = np.log(pts[:, 0]), np.log(pts[:, 1])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


# ----------------------------------------------------------------------------
# Simulation


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    constants: dict
    runs: dict = field(default_factory=dict)        # (T, rep) -> Transcript
    summary: list = field(default_factory=list)     # one dict per T

    def final_regrets(self, T):
        return np.array([self.runs[(T, r)].cum_regret[-1] for r in range(self.config.repetitions)])


def rep_streams(master_seed, rep):
    """Independent generators for contexts, exploration prices, demand and ORBIT."""
    ss = np.random.SeedSequence([master_seed, rep])
    ctx, exp, dem, orb = ss.spawn(4)
    return np.random.default_rng(ctx), np.random.default_rng(exp), np.random.default_rng(dem), orb


def orbit_config(config: ExperimentConfig, instance: Instance, H):
    return OrbitConfig(u_min=instance.u_min, u_max=instance.u_max, p_max=instance.p_max, H=H,
                       beta=config.beta, target_h=config.target_h, m0=config.m0, eta_grid=config.eta_grid,
                       bco_c_delta=config.bco_c_delta, bco_c_eta=config.bco_c_eta,
                       bco_delta_cap=config.bco_delta_cap)


def confidence_radius(config: ExperimentConfig, instance: Instance, T):
    if config.C_w is not None:
        return config.C_w
    C_theta = float(np.linalg.norm(instance.theta)) if instance.theta is not None else 1.0
    return config.C_w_mult * paper_confidence_multiplier(C_theta, instance.p_max, T)


def pilot_eta(config: ExperimentConfig, instance: Instance, T):
    return config.eta if config.eta is not None else default_eta(instance.dim, T, config.c_eta)


def burnin_length(config: ExperimentConfig, instance: Instance, T):
    if config.n_exp is not None:
        if not config.n_exp < T:
            raise ConfigurationError(f"n_exp={config.n_exp} must be below T={T}")
        return config.n_exp
    if config.policy == "explore_then_orbit_lasso":
        s = config.s if config.s is not None else instance.dim
        return schedule_n_exp("sparse", T, instance.dim, s=s, c=config.c_exp)
    return schedule_n_exp("holder", T, instance.dim, gamma=config.gamma, c=config.c_exp)


def simulate(config: ExperimentConfig, instance: Instance, table, T, rep) -> Transcript:
    """One repetition at horizon T."""
    rng_ctx, rng_exp, rng_dem, orbit_seed = rep_streams(config.master_seed, rep)
    X = instance.sample_contexts(rng_ctx, T)
    u = np.asarray(instance.utility(X), dtype=float)
    explore_u = rng_exp.random(T)
    demand_u = rng_dem.random(T)
    fb = BernoulliFeedback(u, demand_u, instance.tail)
    policy = config.policy

    if policy == "uniform_random":
        tr = empty_transcript(u)
        tr.price[:] = explore_u * instance.p_max
        tr.purchase[:] = fb.purchase(np.arange(T), tr.price)
        tr.phase[:] = PILOT_EXPLORE
    elif config.exact_pilot:
        tr = empty_transcript(u)
        ut = np.clip(u, instance.u_min, instance.u_max)
        tr.u_tilde[:] = ut
        orb = Orbit(orbit_config(config, instance, T), seed=orbit_seed)
        merge_orbit(tr, np.arange(T), orb.run(ut, fb))
    elif policy == "orbit_adaptive":
        if instance.theta is None:
            raise ConfigurationError("the adaptive linear pilot needs a linear instance")
        state = RidgeState(instance.dim, pilot_eta(config, instance, T), confidence_radius(config, instance, T),
                           instance.p_max, instance.u_min, instance.u_max)
        res = run_adaptive_pilot(state, X, explore_u, fb)
        tr = empty_transcript(u)
        ex = np.flatnonzero(res.explore)
        tr.price[ex] = res.price[ex]
        tr.purchase[ex] = res.purchase[ex]
        tr.phase[ex] = PILOT_EXPLORE
        rows = np.flatnonzero(~res.explore)
        tr.u_tilde[rows] = res.u_tilde[rows]
        # exploration rounds never reach ORBIT, so its clock only counts gated rounds
        orb = Orbit(orbit_config(config, instance, T), seed=orbit_seed)
        merge_orbit(tr, rows, orb.run(res.u_tilde[rows], fb.subset(rows)))
        tr.meta = {"n_explore": int(ex.size)}
    else:
        oracle = "lasso" if policy == "explore_then_orbit_lasso" else "locpoly"
        n_exp = burnin_length(config, instance, T)
        params = {k: getattr(config, k) for k in ("beta", "target_h", "m0", "eta_grid", "bco_c_delta",
                                                  "bco_c_eta", "bco_delta_cap")}
        tr, _ = run_explore_then_orbit(instance, X, u, explore_u, demand_u, n_exp, oracle=oracle,
                                       orbit_params=params, orbit_seed=orbit_seed, C_lambda=config.C_lambda,
                                       gamma=config.gamma)
    tr.inst_regret = regret_account(instance, table, u, tr.price)
    return tr


def resolved_constants(config: ExperimentConfig, instance: Instance, table):
    out = {"package_version": __version__, "instance": instance.name, "dim": instance.dim,
           "u_min": instance.u_min, "u_max": instance.u_max, "p_max_effective": instance.p_max,
           "oracle_resolution_effective": table.resolution, "regret_floor": REGRET_FLOOR,
           "aggregation": "median and IQR (25th, 75th percentiles) of final cumulative regret across repetitions",
           "seed_streams": "SeedSequence([master_seed, rep]).spawn(4): contexts, exploration prices, demand, orbit"}
    if instance.theta is not None:
        out["theta"] = list(np.asarray(instance.theta, dtype=float))
    fam = instance.meta.get("family") if instance.meta else None
    if fam is not None:
        out.update({f"family_{k}": v for k, v in fam.items()})
    for T in config.T:
        tag = f"T{T}_"
        if config.policy == "uniform_random":
            continue
        if config.policy in ("explore_then_orbit_lasso", "explore_then_orbit_locpoly") and not config.exact_pilot:
            n_exp = burnin_length(config, instance, T)
            out[tag + "n_exp"] = n_exp
            H = T - n_exp
        else:
            H = T
        oc = orbit_config(config, instance, H)
        orb = Orbit(oc, seed=0)
        out.update({tag + "H": H, tag + "target_h": oc.target_h, tag + "bins": orb.partition.M,
                    tag + "bin_width": orb.partition.bar_h, tag + "grid_size": len(orb.grid),
                    tag + "m_coarse": oc.m_coarse, tag + "rho_loc": oc.rho_loc,
                    tag + "trust_radius": orb.trust_radius})
        if config.policy == "orbit_adaptive" and not config.exact_pilot:
            out[tag + "eta"] = pilot_eta(config, instance, T)
            out[tag + "C_w"] = confidence_radius(config, instance, T)
            C_theta = float(np.linalg.norm(instance.theta))
            out[tag + "C_w_paper"] = paper_confidence_multiplier(C_theta, instance.p_max, T)
    return out


def run(config: ExperimentConfig, instance: Optional[Instance] = None) -> ExperimentResult:
    """All repetitions at every horizon, in a fixed order."""
    config.validate()
    inst = build_instance(config, instance)
    res = config.oracle_resolution or default_oracle_resolution(inst)
    table = build_oracle_table(inst, res)
    out = ExperimentResult(config, resolved_constants(config, inst, table))
    for T in config.T:
        for r in range(config.repetitions):
            try:
                out.runs[(T, r)] = simulate(config, inst, table, T, r)
            except OrbitError as exc:
                raise RepetitionError(r, T, exc) from exc
        out.summary.append(summarize(T, out.final_regrets(T)))
    return out


def summarize(T, finals):
    finals = np.asarray(finals, dtype=float)
    q25, med, q75 = np.percentile(finals, [25, 50, 75])
    return {"T": int(T), "reps": int(finals.size), "median": float(med), "q25": float(q25),
            "q75": float(q75), "iqr": float(q75 - q25), "mean": float(finals.mean())}


# ----------------------------------------------------------------------------
# Output


def fmt(v):
    """Fixed 17-significant-digit rendering used in every emitted file."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(fmt(x) for x in v) + "]"
    return str(v)


def _col(a):
    return ["%.17g" % x for x in np.asarray(a, dtype=float).tolist()]


def transcript_csv(tr: Transcript):
    T = len(tr)
    phase = np.array(PHASE_NAMES)[tr.phase.astype(np.int64)].tolist()
    bins = ["" if b == 0 else str(b) for b in tr.bin.tolist()]
    cols = [[str(t) for t in range(1, T + 1)], phase, bins, _col(tr.u), _col(tr.u_tilde), _col(tr.price),
            [str(int(y)) for y in tr.purchase.tolist()], _col(tr.inst_regret), _col(tr.cum_regret)]
    lines = [CSV_HEADER]
    lines.extend(",".join(row) for row in zip(*cols))
    return "\n".join(lines) + "\n"


def rep_path(directory, config: ExperimentConfig, T, rep):
    if len(config.T) == 1:
        return os.path.join(directory, f"rep_{rep}.csv")
    return os.path.join(directory, f"T_{T}", f"rep_{rep}.csv")


def emit(result: ExperimentResult, directory):
    """Write rep CSVs, summary.csv and meta.txt; returns the list of paths written."""
    os.makedirs(directory, exist_ok=True)
    written = []
    for (T, r), tr in sorted(result.runs.items()):
        path = rep_path(directory, result.config, T, r)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(transcript_csv(tr))
        written.append(path)
    path = os.path.join(directory, "summary.csv")
    keys = ("T", "reps", "median", "q25", "q75", "iqr", "mean")
    with open(path, "w", newline="") as fh:
        fh.write(",".join(keys) + "\n")
        for row in result.summary:
            fh.write(",".join(fmt(row[k]) for k in keys) + "\n")
    written.append(path)
    path = os.path.join(directory, "meta.txt")
    with open(path, "w", newline="") as fh:
        for k, v in result.config.items():
            fh.write(f"{k} = {fmt(v)}\n")
        for k, v in result.constants.items():
            fh.write(f"{k} = {fmt(v)}\n")
    written.append(path)
    return written


def read_summary(path):
    """(T, median) pairs from a summary.csv."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if "T" not in header or "median" not in header:
            raise ConfigurationError(f"{path} is not a summary table")
        iT, im = header.index("T"), header.index("median")
        pts = []
        for line in fh:
            if line.strip():
                parts = line.strip().split(",")
                pts.append((float(parts[iT]), float(parts[im])))
    return pts


def uniform_gap(instance: Instance, table, n=100_000, seed=0):
    """Monte-Carlo mean per-round regret of uniform pricing on [0, p_max]."""
    rng = np.random.default_rng(seed)
    u = np.asarray(instance.utility(instance.sample_contexts(rng, n)), dtype=float)
    p = rng.random(n) * instance.p_max
    return float(np.mean(regret_account(instance, table, u, p)))


def median_regret_points(result: ExperimentResult):
    return [(row["T"], row["median"]) for row in result.summary]

