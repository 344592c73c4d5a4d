"""Anytime bandit convex optimisation over an l1 trust region.

The generator works in normalised coordinates where the trust region
``{a : ||a - a_ctr||_1 <= radius}`` becomes the unit l1 ball and raw losses in
``[-p_max, 0]`` become feedback in ``[0, 1]``.  Inside, a one-point
(spherical smoothing) gradient estimate drives projected gradient descent,
restarted on epochs of length 1, 2, 4, ... so no horizon is needed up front.
"""
import math

import numpy as np

from .errors import ConfigurationError, ProtocolError

DIRECTION_BLOCK = 256


def l1_project(v, radius):
    """Euclidean projection of ``v`` onto the l1 ball of the given radius.

    Sort-based soft-thresholding; ``v`` is returned untouched when feasible.
    """
    v = np.asarray(v, dtype=float)
    if radius <= 0:
        raise ConfigurationError("radius must be positive")
    a = np.abs(v)
    if a.sum() <= radius:
        return v
    mu = np.sort(a)[::-1]
    css = np.cumsum(mu)
    j = np.arange(1, v.size + 1)
    rho = np.nonzero(mu - (css - radius) / j > 0)[0][-1]
    theta = (css[rho] - radius) / (rho + 1.0)
    return np.sign(v) * np.maximum(a - theta, 0.0)


def normalize(a_ctr, trust_radius, a_raw):
    """Map the trust region onto the unit l1 ball centred at the origin."""
    if not trust_radius > 0:
        raise ConfigurationError("trust radius must be positive")
    return (np.asarray(a_raw, dtype=float) - a_ctr) / trust_radius


def denormalize(a_ctr, trust_radius, a_norm):
    if not trust_radius > 0:
        raise ConfigurationError("trust radius must be positive")
    return np.asarray(a_ctr, dtype=float) + trust_radius * np.asarray(a_norm, dtype=float)


def shift_feedback(raw_loss, p_max):
    """Affine map of a raw loss in [-p_max, 0] onto [0, 1]."""
    return (raw_loss + p_max) / p_max


class RefinementGenerator:
    """Raw-scale anytime generator for one bin.

    Epoch ``r`` lasts ``n_r = 2**r`` steps (capped at the largest power of two
    not exceeding ``H_alg``).  Each epoch restarts the iterate at the origin
    with smoothing radius ``delta_r = min(delta_cap, c_delta * n_r**-0.25)`` and
    step size ``eta_r = c_eta * n_r**-0.75``.

    The normalised feasible set is the unit l1 ball, which contains the l2
    ball of radius ``r_in = 1/sqrt(dim)``.  Keeping the iterate inside the
    l1 ball of radius ``1 - delta_r / r_in`` makes every perturbed action
    ``iterate + delta_r * S`` feasible.
    """

    def __init__(self, a_ctr, trust_radius, p_max, H_alg=None, rng=None, c_delta=1.0, c_eta=1.0,
                 delta_cap=0.25):
        if not trust_radius > 0:
            raise ConfigurationError("trust radius must be positive")
        if not p_max > 0:
            raise ConfigurationError("p_max must be positive")
        if c_delta < 0 or c_eta < 0 or delta_cap < 0:
            raise ConfigurationError("schedule constants must be nonnegative")
        self.a_ctr = np.asarray(a_ctr, dtype=float).copy()
        self.dim = self.a_ctr.size
        self.trust_radius = float(trust_radius)
        self.p_max = float(p_max)
        self.H_alg = H_alg
        self.rng = rng if rng is not None else np.random.default_rng()
        self.c_delta, self.c_eta = float(c_delta), float(c_eta)
        self.r_in = 1.0 / math.sqrt(self.dim)
        self.delta_cap = min(float(delta_cap), 0.5 * self.r_in)
        self._max_len = None
        if H_alg is not None:
            self._max_len = 2 ** int(math.floor(math.log2(max(1, H_alg))))
        self.epoch = 0
        self.step_in_epoch = 0
        self.n_feedback = 0
        self._pending = None
        self._dirs = np.empty((0, self.dim))
        self._dir_pos = 0
        self._start_epoch()

    def _start_epoch(self):
        n = 2 ** self.epoch
        if self._max_len is not None:
            n = min(n, self._max_len)
        self.epoch_length = n
        self.delta = min(self.delta_cap, self.c_delta * n ** -0.25)
        self.eta = self.c_eta * n ** -0.75
        self.inner_radius = 1.0 - self.delta / self.r_in
        self.iterate = np.zeros(self.dim)
        self.step_in_epoch = 0

    def next_action(self):
        """Raw coefficient vector to play; pairs with the next ``update``."""
        if self._pending is not None:
            raise ProtocolError("previous action still awaits feedback")
        if self.delta > 0:
            s = self._direction()
        else:
            s = np.zeros(self.dim)
        self._pending = s
        return self.a_ctr + self.trust_radius * (self.iterate + self.delta * s)

    def _direction(self):
        # uniform directions are drawn in blocks; the stream is still fixed by the rng
        if self._dir_pos >= self._dirs.shape[0]:
            z = self.rng.standard_normal((DIRECTION_BLOCK, self.dim))
            self._dirs = z / np.sqrt(np.einsum("ij,ij->i", z, z))[:, None]
            self._dir_pos = 0
        s = self._dirs[self._dir_pos]
        self._dir_pos += 1
        return s

    def update(self, raw_loss):
        """Consume the raw loss (-price * purchase) of the pending action."""
        s = self._pending
        if s is None:
            raise ProtocolError("update without a pending action")
        self._pending = None
        self.n_feedback += 1
        if self.delta > 0:
            fb = shift_feedback(raw_loss, self.p_max)
            grad = (self.dim / self.delta) * fb * s
            y = self.iterate - self.eta * grad
            if float(np.abs(y).sum()) > self.inner_radius:
                y = l1_project(y, self.inner_radius)
            self.iterate = y
        self.step_in_epoch += 1
        if self.step_in_epoch >= self.epoch_length:
            self.epoch += 1
            self._start_epoch()

    update_feedback = update

    @property
    def has_pending(self):
        return self._pending is not None
