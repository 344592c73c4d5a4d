"""Binned coarse-to-fine pricing driven by scalar pilot values.

Each bin of the index interval runs its own two-phase learner: a coarse
phase that cycles through a price grid, then a refinement phase that posts
local polynomial prices whose coefficients come from a bandit convex
optimisation generator confined to a trust region around the coarse anchor.
"""
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .bco import RefinementGenerator
from .errors import BudgetError, ConfigurationError, ContractViolation, GeneratorFailure

COARSE = "coarse"
REFINE = "refine"


@dataclass(frozen=True)
class BinPartition:
    u_min: float
    u_max: float
    M: int
    bar_h: float
    target_h: float

    def midpoint(self, j):
        """Midpoint of bin ``j`` (1-based)."""
        return self.u_min + (j - 0.5) * self.bar_h

    def edges(self, j):
        return self.u_min + (j - 1) * self.bar_h, self.u_min + j * self.bar_h


def build_bins(u_min, u_max, target_h):
    if not u_min < u_max:
        raise ConfigurationError("need u_min < u_max")
    if not 0 < target_h <= 1:
        raise ConfigurationError("target bin width must lie in (0, 1]")
    width = u_max - u_min
    M = int(math.ceil(width / target_h - 1e-12))
    M = max(M, 1)
    return BinPartition(u_min=u_min, u_max=u_max, M=M, bar_h=width / M, target_h=target_h)


def assign_bin(partition: BinPartition, u_tilde):
    """1-based index of the bin containing ``u_tilde``; the last bin is closed."""
    if not partition.u_min <= u_tilde <= partition.u_max:
        raise ContractViolation(f"pilot {u_tilde} outside [{partition.u_min}, {partition.u_max}]")
    j = int((u_tilde - partition.u_min) / partition.bar_h) + 1
    return min(j, partition.M)


@dataclass(frozen=True)
class PriceGrid:
    points: np.ndarray
    spacing: float
    p_max: float

    def __len__(self):
        return self.points.size


def build_grid(p_max, eta_grid):
    if not eta_grid > 0:
        raise ConfigurationError("grid spacing must be positive")
    if eta_grid > p_max:
        raise ConfigurationError("grid spacing exceeds p_max")
    k = int(math.floor(p_max / eta_grid + 1e-12))
    pts = np.arange(k + 1) * eta_grid
    pts = pts[pts <= p_max]
    if not np.isclose(pts[-1], p_max, rtol=0, atol=1e-12):
        pts = np.append(pts, p_max)
    else:
        pts[-1] = p_max
    return PriceGrid(points=pts, spacing=eta_grid, p_max=p_max)


def poly_price(bin_midpoint, bar_h, a, u_tilde):
    """Local polynomial price sum_k a_k z^k with z = 2(u - midpoint)/bar_h clamped to [-1, 1]."""
    z = 2.0 * (u_tilde - bin_midpoint) / bar_h
    z = -1.0 if z < -1.0 else (1.0 if z > 1.0 else z)
    acc = 0.0
    for c in a[::-1]:
        acc = acc * z + c
    return float(acc)


def trust_region_membership(a_ctr, trust_radius, a, slack=1e-12):
    """Membership in the l1 ball ||a - a_ctr||_1 <= trust_radius.

    This ball sits inside the set of coefficient vectors whose polynomial
    stays within trust_radius of the anchor on [-1, 1], because
    sup |v . psi(z)| <= ||v||_1 for the monomial basis.
    """
    a_ctr = np.asarray(a_ctr, dtype=float)
    a = np.asarray(a, dtype=float)
    if a.shape != a_ctr.shape:
        raise ContractViolation(f"dimension mismatch: {a.shape} vs {a_ctr.shape}")
    return bool(np.abs(a - a_ctr).sum() <= trust_radius + slack)


@dataclass
class OrbitConfig:
    """Tuning knobs and structural inputs of the binned pricer."""

    u_min: float
    u_max: float
    p_max: float
    H: int
    beta: float = 2.0
    target_h: Optional[float] = None
    m0: float = 2.0
    eta_grid: float = 0.04
    bco_c_delta: float = 1.0
    bco_c_eta: float = 1.0
    bco_delta_cap: float = 0.25

    def __post_init__(self):
        if self.beta < 2:
            raise ConfigurationError("beta must be at least 2")
        if self.H < 1:
            raise ConfigurationError("budget H must be positive")
        if self.m0 <= 0:
            raise ConfigurationError("m0 must be positive")
        if self.target_h is None:
            self.target_h = default_bin_width(self.H, self.beta)

    @property
    def rho_loc(self):
        return math.sqrt(self.eta_grid)

    @property
    def q(self):
        return int(math.floor(self.beta - 1 + 1e-12))

    @property
    def m_coarse(self):
        return max(1, int(math.ceil(self.m0 * math.log(math.e * self.H))))


def default_bin_width(T, beta=2.0):
    return min(1.0, float(T) ** (-1.0 / (4 * beta - 3)))


@dataclass
class BinState:
    """Local state of one bin.

    Coarse statistics are kept as integer pull and purchase counts so the
    empirical revenue of grid price p is exactly p * buys / counts.
    """

    index: int
    grid: np.ndarray
    tau: int = 0
    counts: np.ndarray = None
    buys: np.ndarray = None
    anchor: Optional[float] = None
    trust_center: Optional[np.ndarray] = None
    trust_radius: Optional[float] = None
    generator: Optional[RefinementGenerator] = None
    refine_count: int = 0

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros(self.grid.size, dtype=np.int64)
        if self.buys is None:
            self.buys = np.zeros(self.grid.size, dtype=np.int64)

    @property
    def means(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.counts > 0, self.grid * self.buys / np.maximum(self.counts, 1), 0.0)


@dataclass
class StepResult:
    price: float
    phase: str
    bin: int
    purchase: int
    pre_projection: float
    action: Optional[np.ndarray] = None


class Orbit:
    """Stateful pricer; one call to :meth:`step` per scalar pilot value."""

    def __init__(self, config: OrbitConfig, seed=None):
        self.config = config
        self.partition = build_bins(config.u_min, config.u_max, config.target_h)
        self.grid = build_grid(config.p_max, config.eta_grid)
        self.m_coarse = config.m_coarse
        self.coarse_len = len(self.grid) * self.m_coarse
        self.trust_radius = config.rho_loc / 4.0
        if isinstance(seed, np.random.SeedSequence):
            self._seed = seed
        else:
            self._seed = np.random.SeedSequence(seed)
        self.bins: List[BinState] = [BinState(index=j, grid=self.grid.points)
                                     for j in range(1, self.partition.M + 1)]
        self.calls = 0

    def _bin_rng(self, j):
        ss = np.random.SeedSequence(self._seed.entropy, spawn_key=self._seed.spawn_key + (j,))
        return np.random.default_rng(ss)

    def _enter_refinement(self, b: BinState):
        # argmax returns the first maximiser, i.e. the smallest grid price
        b.anchor = float(self.grid.points[int(np.argmax(b.means))])
        center = np.zeros(self.config.q + 1)
        center[0] = b.anchor
        b.trust_center = center
        b.trust_radius = self.trust_radius
        cfg = self.config
        b.generator = RefinementGenerator(center, self.trust_radius, cfg.p_max, H_alg=cfg.H,
                                          rng=self._bin_rng(b.index), c_delta=cfg.bco_c_delta,
                                          c_eta=cfg.bco_c_eta, delta_cap=cfg.bco_delta_cap)

    def step(self, u_tilde, feedback: Callable[[float], int]) -> StepResult:
        """Price one round for pilot ``u_tilde``; ``feedback(price)`` returns the purchase."""
        if self.calls >= self.config.H:
            raise BudgetError(f"pilot budget H={self.config.H} exhausted")
        j = assign_bin(self.partition, u_tilde)
        self.calls += 1
        b = self.bins[j - 1]
        b.tau += 1
        if b.tau <= self.coarse_len:
            m = (b.tau - 1) // self.m_coarse
            price = float(self.grid.points[m])
            y = int(feedback(price))
            b.counts[m] += 1
            b.buys[m] += y
            return StepResult(price, COARSE, j, y, price)

        b.refine_count = b.tau - self.coarse_len
        if b.refine_count == 1:
            self._enter_refinement(b)
        try:
            a = b.generator.next_action()
        except Exception as exc:  # noqa: BLE001 - re-raised with the bin id
            raise GeneratorFailure(j, exc) from exc
        raw = poly_price(self.partition.midpoint(j), self.partition.bar_h, a, u_tilde)
        price = min(max(raw, 0.0), self.config.p_max)
        y = int(feedback(price))
        try:
            b.generator.update(-price * y)
        except Exception as exc:  # noqa: BLE001
            raise GeneratorFailure(j, exc) from exc
        return StepResult(price, REFINE, j, y, raw, a)


    def assign_many(self, u_tilde):
        """Vectorised :func:`assign_bin`."""
        u = np.asarray(u_tilde, dtype=float)
        part = self.partition
        if u.size and (not np.all(u >= part.u_min) or not np.all(u <= part.u_max)):
            bad = u[(u < part.u_min) | (u > part.u_max) | np.isnan(u)][0]
            raise ContractViolation(f"pilot {bad} outside [{part.u_min}, {part.u_max}]")
        j = ((u - part.u_min) / part.bar_h).astype(np.int64) + 1
        return np.minimum(j, part.M)

    def run(self, u_tilde, feedback):
        """Price a block of consecutive rounds.

        ``feedback`` must provide ``purchase(rows, prices)`` (vectorised) and
        ``purchase_one(row, price)``, where ``row`` indexes into ``u_tilde``
        and the outcome depends only on (row, price).  Bins never interact, so
        coarse rounds are settled in one vectorised pass and refinement rounds
        are replayed per bin in time order.  The transcript equals the one
        produced by calling :meth:`step` round by round.

        Returns a dict of arrays: price, phase (0 coarse, 1 refine), bin,
        purchase, pre_projection.
        """
        u = np.asarray(u_tilde, dtype=float)
        n = u.size
        if self.calls + n > self.config.H:
            raise BudgetError(f"pilot budget H={self.config.H} exhausted")
        j = self.assign_many(u)
        self.calls += n
        price = np.empty(n)
        pre = np.empty(n)
        phase = np.zeros(n, dtype=np.int8)
        buy = np.zeros(n, dtype=np.int8)
        if n == 0:
            return dict(price=price, phase=phase, bin=j, purchase=buy, pre_projection=pre)

        # stable sort by bin (radix sort on small integer keys) keeps time order inside each bin
        key = j.astype(np.int16) if self.partition.M < 32767 else j
        order = np.argsort(key, kind="stable")
        js = j[order]
        counts = np.bincount(j, minlength=self.partition.M + 1)
        starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
        tau0 = np.concatenate(([0], [b.tau for b in self.bins])).astype(np.int64)
        tau = np.arange(1, n + 1) + np.repeat(tau0 - starts, counts)
        coarse = tau <= self.coarse_len

        rows_c = order[coarse]
        if rows_c.size:
            m = (tau[coarse] - 1) // self.m_coarse
            pc = self.grid.points[m]
            yc = np.asarray(feedback.purchase(rows_c, pc)).astype(np.int8)
            price[rows_c] = pc
            pre[rows_c] = pc
            buy[rows_c] = yc
            G = len(self.grid)
            key = (js[coarse] - 1) * G + m
            cnt = np.bincount(key, minlength=self.partition.M * G).reshape(self.partition.M, G)
            bys = np.bincount(key, weights=yc, minlength=self.partition.M * G).reshape(self.partition.M, G)
            for bi in np.unique(js[coarse]):
                b = self.bins[bi - 1]
                b.counts += cnt[bi - 1]
                b.buys += bys[bi - 1].astype(np.int64)

        for bi in np.nonzero(counts)[0]:
            self.bins[bi - 1].tau += int(counts[bi])

        refine_idx = np.nonzero(~coarse)[0]
        if refine_idx.size:
            phase[order[refine_idx]] = 1
            cut = np.flatnonzero(np.diff(js[refine_idx])) + 1
            for grp in np.split(refine_idx, cut):
                bi = int(js[grp[0]])
                b = self.bins[bi - 1]
                mid = self.partition.midpoint(bi)
                bar_h = self.partition.bar_h
                p_max = self.config.p_max
                for pos in grp:
                    row = int(order[pos])
                    b.refine_count = int(tau[pos]) - self.coarse_len
                    if b.refine_count == 1:
                        self._enter_refinement(b)
                    try:
                        a = b.generator.next_action()
                    except Exception as exc:  # noqa: BLE001
                        raise GeneratorFailure(bi, exc) from exc
                    raw = poly_price(mid, bar_h, a, u[row])
                    p = min(max(raw, 0.0), p_max)
                    y = int(feedback.purchase_one(row, p))
                    try:
                        b.generator.update(-p * y)
                    except Exception as exc:  # noqa: BLE001
                        raise GeneratorFailure(bi, exc) from exc
                    price[row] = p
                    pre[row] = raw
                    buy[row] = y
        return dict(price=price, phase=phase, bin=j, purchase=buy, pre_projection=pre)


def orbit_step(state: Orbit, pilot_value, feedback_hook):
    """Functional form of :meth:`Orbit.step`; returns (price, phase)."""
    res = state.step(pilot_value, feedback_hook)
    return res.price, res.phase


def anchor_event_check(state: Orbit, oracle, n_points=32):
    """Per-bin check of |anchor - p*(u)| <= rho_loc/8 over the closed bin.

    ``oracle`` maps an array of indices to oracle prices (an
    OraclePriceTable works).  Bins without an anchor report ``None``.
    Diagnostic only; the pricer never reads it.
    """
    tol = state.config.rho_loc / 8.0
    out = []
    for b in state.bins:
        if b.anchor is None:
            out.append(None)
            continue
        lo, hi = state.partition.edges(b.index)
        u = np.linspace(lo, hi, n_points)
        out.append(bool(np.all(np.abs(b.anchor - oracle(u)) <= tol)))
    return out
