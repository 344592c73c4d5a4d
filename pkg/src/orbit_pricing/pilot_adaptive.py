"""Adaptive linear pilot.

Rounds whose context is still poorly covered by past exploration are priced
uniformly at random; the purchase gives the unbiased pseudo-response
``p_max * y`` for ``x . theta``.  Rounds that pass the elliptical uncertainty
gate receive the clipped ridge prediction as their pilot value.
"""
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, NumericalError, ProtocolError

REFRESH_EVERY = 256


def paper_confidence_multiplier(C_theta, p_max, T):
    """The conservative radius 32 (C_theta + p_max) sqrt(ln(e T))."""
    return 32.0 * (C_theta + p_max) * math.sqrt(math.log(math.e * T))


def default_eta(d, T, c_eta=1.0):
    if d < 1 or T < 2:
        raise ConfigurationError("need d >= 1 and T >= 2")
    return min(0.5, c_eta * (d / T) ** 0.25)


@dataclass(frozen=True)
class Explore:
    pass


@dataclass(frozen=True)
class Pilot:
    u_tilde: float


class RidgeState:
    """Ridge statistics built from exploration rounds only.

    ``A = I + sum x x^T`` and ``b = sum p_max y x``.  The inverse of A is
    kept by Sherman-Morrison updates and recomputed from scratch every
    ``REFRESH_EVERY`` updates.
    """

    def __init__(self, d, eta, C_w, p_max, u_min, u_max):
        if not 0 < eta <= 0.5:
            raise ConfigurationError("eta must lie in (0, 1/2]")
        if not C_w > 0:
            raise ConfigurationError("C_w must be positive")
        self.d = int(d)
        self.eta = float(eta)
        self.C_w = float(C_w)
        self.p_max = float(p_max)
        self.u_min, self.u_max = float(u_min), float(u_max)
        self.A = np.eye(self.d)
        self.A_inv = np.eye(self.d)
        self.b = np.zeros(self.d)
        self.theta_hat = np.zeros(self.d)
        self.n_explore = 0
        self._pending = None

    def uncertainty(self, x):
        x = np.asarray(x, dtype=float)
        q = float(x @ self.A_inv @ x)
        if q < -1e-10:
            raise NumericalError("design matrix lost positive definiteness")
        return self.C_w * math.sqrt(max(q, 0.0))

    def uncertainty_many(self, X):
        X = np.asarray(X, dtype=float)
        q = np.einsum("ij,jk,ik->i", X, self.A_inv, X)
        if np.any(q < -1e-10):
            raise NumericalError("design matrix lost positive definiteness")
        return self.C_w * np.sqrt(np.maximum(q, 0.0))

    def predict(self, X):
        """Clipped ridge prediction of the latent index."""
        return np.clip(np.asarray(X, dtype=float) @ self.theta_hat, self.u_min, self.u_max)

    def decide(self, x, eta=None):
        eta = self.eta if eta is None else eta
        if not 0 < eta <= 0.5:
            raise ConfigurationError("eta must lie in (0, 1/2]")
        if self.uncertainty(x) > eta:
            self._pending = np.array(x, dtype=float)
            return Explore()
        self._pending = None
        return Pilot(float(self.predict(np.asarray(x)[None, :])[0]))

    def update(self, x, price, purchase):
        x = np.asarray(x, dtype=float)
        if self._pending is None or not np.array_equal(self._pending, x):
            raise ProtocolError("ridge updates are only allowed after an exploration decision for x")
        if not 0.0 <= price <= self.p_max:
            raise ProtocolError("exploration price outside [0, p_max]")
        self._pending = None
        self._absorb(x, int(purchase))

    def _absorb(self, x, y):
        self.A += np.outer(x, x)
        self.b += self.p_max * y * x
        self.n_explore += 1
        if self.n_explore % REFRESH_EVERY == 0:
            self.A_inv = self._fresh_inverse()
        else:
            v = self.A_inv @ x
            self.A_inv -= np.outer(v, v) / (1.0 + x @ v)
        self.theta_hat = self.A_inv @ self.b

    def _fresh_inverse(self):
        try:
            L = np.linalg.cholesky(self.A)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("design matrix is not positive definite") from exc
        Li = np.linalg.inv(L)
        return Li.T @ Li

    def check(self, X_explored=None, tol=1e-8):
        """Verify A against a recomputation (when the explored contexts are given) and A_inv against A."""
        if X_explored is not None:
            X = np.asarray(X_explored, dtype=float)
            if not np.allclose(self.A, np.eye(self.d) + X.T @ X, atol=tol, rtol=tol):
                raise NumericalError("design matrix drifted from its recomputation")
        if not np.allclose(self.A_inv @ self.A, np.eye(self.d), atol=1e-8):
            raise NumericalError("inverse drifted")
        return True


def uncertainty(state: RidgeState, x):
    return state.uncertainty(x)


def pilot_decide(state: RidgeState, x, eta=None):
    return state.decide(x, eta)


def ridge_update(state: RidgeState, x, price, purchase):
    state.update(x, price, purchase)


@dataclass
class AdaptivePilotResult:
    explore: np.ndarray      # bool per round
    u_tilde: np.ndarray      # pilot value on gated rounds, nan on exploration rounds
    price: np.ndarray        # uniform price on exploration rounds, nan elsewhere
    purchase: np.ndarray     # exploration purchases, 0 elsewhere
    state: Optional[RidgeState] = None


def run_adaptive_pilot(state: RidgeState, X, explore_uniforms, feedback, block=1024):
    """Drive the gate over a whole context stream.

    Between exploration rounds the ridge state is frozen, so the gate is
    evaluated on blocks of upcoming contexts at once; the first round that
    fails the gate is explored and the scan restarts after it.  Decisions
    are identical to calling :func:`pilot_decide` round by round.

    ``explore_uniforms[t] * p_max`` is the price posted if round t explores;
    ``feedback.purchase_one(t, price)`` returns the purchase.
    """
    X = np.asarray(X, dtype=float)
    T = X.shape[0]
    explore = np.zeros(T, dtype=bool)
    u_tilde = np.full(T, np.nan)
    price = np.full(T, np.nan)
    buy = np.zeros(T, dtype=np.int8)
    t = 0
    size = 8
    while t < T:
        stop = min(T, t + size)
        w = state.uncertainty_many(X[t:stop])
        hit = np.flatnonzero(w > state.eta)
        end = stop if hit.size == 0 else t + int(hit[0])
        if end > t:
            u_tilde[t:end] = state.predict(X[t:end])
        if hit.size == 0:
            t = stop
            size = min(2 * size, block)
            continue
        p = float(explore_uniforms[end]) * state.p_max
        y = int(feedback.purchase_one(end, p))
        explore[end] = True
        price[end] = p
        buy[end] = y
        state._absorb(X[end], y)
        t = end + 1
        size = 8
    return AdaptivePilotResult(explore, u_tilde, price, buy, state)
