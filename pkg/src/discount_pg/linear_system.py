"""Plant model, initial-state and noise distributions, and rollouts.

The plant is ``x[t+1] = A x[t] + B u[t] (+ w[t])`` under state feedback
``u = -K x``. :class:`Simulator` wraps a :class:`LinearSystem` and is the only
handle the model-free algorithms receive: it runs closed-loop rollouts and
reports states, but never hands out ``A`` or ``B``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize, special, stats

from . import seeding
from .errors import DimensionError

#: any state entry beyond this magnitude stops the rollout
DIVERGENCE_THRESHOLD = 1e150


def _as_matrix(value, name: str) -> np.ndarray:
    arr = np.array(value, dtype=float, ndmin=2)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be a 2-d matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LinearSystem:
    """Discrete-time LTI plant ``x+ = A x + B u``."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        n = A.shape[0]
        if A.shape != (n, n) or n < 1:
            raise DimensionError(f"A must be square, got {A.shape}")
        if B.shape[0] != n or B.shape[1] < 1:
            raise DimensionError(f"B must have {n} rows, got {B.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def closed_loop(self, K) -> np.ndarray:
        K = check_gain(K, self.n, self.m)
        return self.A - self.B @ K

    def scaled(self, gamma: float) -> "LinearSystem":
        """The damped pair ``(sqrt(gamma) A, sqrt(gamma) B)``."""
        s = math.sqrt(gamma)
        return LinearSystem(s * self.A, s * self.B)


@dataclass(frozen=True)
class CostModel:
    """Quadratic stage weights ``x'Qx + u'Ru``; both must be symmetric positive definite."""

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q = _as_matrix(self.Q, "Q")
        R = _as_matrix(self.R, "R")
        for name, M in (("Q", Q), ("R", R)):
            if M.shape[0] != M.shape[1]:
                raise DimensionError(f"{name} must be square, got {M.shape}")
            if np.max(np.abs(M - M.T), initial=0.0) > 1e-12 * max(1.0, np.abs(M).max()):
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(M).min() <= 0:
                raise ValueError(f"{name} must be positive definite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[0]

    def stage_weight(self, K) -> np.ndarray:
        """``Q + K'RK``, the state weight of the closed-loop stage cost."""
        K = check_gain(K, self.n, self.m)
        return self.Q + K.T @ self.R @ K

    def sigma_min(self, K=None) -> float:
        """Smallest eigenvalue of ``Q + K'RK`` (of ``Q`` when ``K`` is omitted)."""
        M = self.Q if K is None else self.stage_weight(K)
        asym = np.max(np.abs(M - M.T), initial=0.0)
        if asym > 1e-10 * max(1.0, np.abs(M).max()):
            raise ValueError(f"stage weight is not symmetric (max asymmetry {asym:.3g})")
        return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])

    def scaled(self, c: float) -> "CostModel":
        return CostModel(c * self.Q, c * self.R)


def check_gain(K, n: int, m: int) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if K.ndim == 0 and n == 1 and m == 1:
        K = K.reshape(1, 1)
    if K.shape != (m, n):
        raise DimensionError(f"gain must have shape ({m}, {n}), got {K.shape}")
    return K


class DistributionKind(str, enum.Enum):
    UNIT_SPHERE_SCALED = "sphere"
    TRUNCATED_GAUSSIAN = "truncated_gaussian"


@dataclass
class BoundedDistribution:
    """Zero-mean, identity-covariance distribution with bounded support.

    ``sphere`` is uniform on the sphere of radius ``sqrt(dimension)``; its
    bound is exactly that radius. ``truncated_gaussian`` is an isotropic
    Gaussian conditioned on ``||x|| <= bound`` with the variance picked so the
    conditioned covariance is the identity. A ball of radius ``d`` holds at most
    covariance ``d**2 / (n + 2)`` (the uniform limit), so ``bound > sqrt(n + 2)``.

    The instance owns a seeded stream for :meth:`sample`; algorithms draw
    through explicit generators instead (see :mod:`discount_pg.seeding`).
    """

    kind: DistributionKind = DistributionKind.UNIT_SPHERE_SCALED
    dimension: int = 1
    bound: float | None = None
    rng_seed: int = 0
    _stream: np.random.Generator = field(init=False, repr=False, compare=False)
    _scale: float = field(init=False, repr=False, compare=False, default=1.0)

    def __post_init__(self):
        self.kind = DistributionKind(self.kind)
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        root = math.sqrt(self.dimension)
        if self.kind is DistributionKind.UNIT_SPHERE_SCALED:
            if self.bound is not None and not math.isclose(self.bound, root):
                raise ValueError(f"sphere distribution has bound sqrt(n) = {root:.6g}")
            self.bound = root
        else:
            if self.bound is None:
                self.bound = 2.0 * math.sqrt(self.dimension + 2)
            if self.bound <= math.sqrt(self.dimension + 2):
                raise ValueError(
                    f"truncated Gaussian needs bound > sqrt(n + 2) = {math.sqrt(self.dimension + 2):.6g} "
                    "for unit covariance"
                )
            self._scale = _truncated_gaussian_scale(self.dimension, self.bound)
        self._stream = seeding.rng(self.rng_seed)

    @property
    def d(self) -> float:
        return float(self.bound)

    def sample(self, size: int | None = None, rng: np.random.Generator | None = None) -> np.ndarray:
        """Draw ``size`` samples as rows (one vector when ``size`` is None)."""
        gen = self._stream if rng is None else rng
        count = 1 if size is None else int(size)
        n = self.dimension
        if self.kind is DistributionKind.UNIT_SPHERE_SCALED:
            out = math.sqrt(n) * _unit_directions(gen, count, n)
        else:
            # one (count, n + 1) block per call keeps draws prefix-stable: the
            # first n columns give the direction, the last one the radius
            z = gen.standard_normal((count, n + 1))
            direction = _normalize_rows(z[:, :n], gen)
            # inverse-CDF radius of the truncated chi law; no rejection loop
            s = self._scale
            cap = stats.chi2.cdf((self.bound / s) ** 2, n)
            u = special.ndtr(z[:, n])
            radius = s * np.sqrt(stats.chi2.ppf(u * cap, n))
            out = direction * np.minimum(radius, self.bound)[:, None]
        return out[0] if size is None else out


def _unit_directions(gen: np.random.Generator, count: int, n: int) -> np.ndarray:
    return _normalize_rows(gen.standard_normal((count, n)), gen)


def _normalize_rows(z: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    n = z.shape[1]
    norms = np.linalg.norm(z, axis=1)
    bad = norms == 0.0
    while np.any(bad):
        z[bad] = gen.standard_normal((int(bad.sum()), n))
        norms = np.linalg.norm(z, axis=1)
        bad = norms == 0.0
    return z / norms[:, None]


def _truncated_gaussian_scale(n: int, d: float) -> float:
    """Std ``s`` such that N(0, s^2 I) conditioned on ``||x|| <= d`` has covariance I."""

    def second_moment_gap(s):
        c = (d / s) ** 2
        ratio = math.exp(stats.chi2.logcdf(c, n + 2) - stats.chi2.logcdf(c, n))
        return s * s * n * ratio - n

    lo, hi = 0.5, 2.0
    while second_moment_gap(hi) < 0:
        hi *= 2.0
    return optimize.brentq(second_moment_gap, lo, hi, xtol=1e-14, rtol=1e-14)


def sample_initial_state(dist: BoundedDistribution) -> np.ndarray:
    """One draw from the distribution's own stream."""
    return dist.sample()


@dataclass(frozen=True)
class Trajectory:
    """Closed-loop rollout. ``diverged_at`` is the first step whose state blew up."""

    states: np.ndarray
    inputs: np.ndarray
    horizon: int
    diverged_at: int | None = None

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None


@dataclass(frozen=True)
class BatchRollout:
    """Many rollouts at once: ``states`` is (horizon+1, batch, n).

    ``diverged_at[j]`` is -1 for trajectories that stayed finite; otherwise the
    state of that trajectory is zeroed from the divergence step on.
    """

    states: np.ndarray
    inputs: np.ndarray
    diverged_at: np.ndarray

    @property
    def diverged(self) -> np.ndarray:
        return self.diverged_at >= 0


def simulate_batch(sys: LinearSystem, gains, x0s, horizon: int, noises=None) -> BatchRollout:
    """Roll out a batch of trajectories under ``u = -K x``.

    ``gains`` is one (m, n) gain shared by the batch or a (batch, m, n) stack.
    ``noises`` is None or an array (batch, horizon, n) of additive disturbances.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    n, m = sys.n, sys.m
    x0s = np.asarray(x0s, dtype=float)
    if x0s.ndim != 2 or x0s.shape[1] != n:
        raise DimensionError(f"initial states must be (batch, {n}), got {x0s.shape}")
    batch = x0s.shape[0]
    gains = np.asarray(gains, dtype=float)
    shared = gains.ndim == 2
    if shared:
        check_gain(gains, n, m)
    elif gains.shape != (batch, m, n):
        raise DimensionError(f"gain stack must be ({batch}, {m}, {n}), got {gains.shape}")
    if noises is not None:
        noises = np.asarray(noises, dtype=float)
        if noises.shape != (batch, horizon, n):
            raise DimensionError(f"noise must be ({batch}, {horizon}, {n}), got {noises.shape}")

    states = np.zeros((horizon + 1, batch, n))
    inputs = np.zeros((horizon, batch, m))
    diverged_at = np.full(batch, -1, dtype=np.int64)
    alive = np.ones(batch, dtype=bool)
    all_alive = True
    x = x0s.copy()
    states[0] = x
    At, Bt = sys.A.T, sys.B.T
    for t in range(horizon):
        if shared:
            u = -(x @ gains.T)
        else:
            u = -np.einsum("bij,bj->bi", gains, x)
        x = x @ At + u @ Bt
        if noises is not None:
            x = x + noises[:, t, :]
        if not np.abs(x).max() <= DIVERGENCE_THRESHOLD:
            blown = alive & ~np.all(np.abs(x) <= DIVERGENCE_THRESHOLD, axis=1)
            diverged_at[blown] = t + 1
            alive &= ~blown
            all_alive = False
        if not all_alive:
            x[~alive] = 0.0
            u[~alive] = 0.0
        inputs[t] = u
        states[t + 1] = x
    return BatchRollout(states, inputs, diverged_at)


def simulate(sys: LinearSystem, K, x0, horizon: int, noise=None) -> Trajectory:
    """Single closed-loop rollout.

    ``noise`` may be a (horizon, n) array of disturbances ``w_0..w_{horizon-1}``
    or a :class:`BoundedDistribution` to draw them from. With noise the
    initial state must be zero.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (sys.n,):
        raise DimensionError(f"x0 must have length {sys.n}, got {x0.shape}")
    w = None
    if noise is not None:
        if np.any(x0 != 0.0):
            raise ValueError("with additive noise the initial state must be zero")
        if isinstance(noise, BoundedDistribution):
            w = noise.sample(horizon)
        else:
            w = np.asarray(noise, dtype=float)
        w = w.reshape(1, horizon, sys.n)
    out = simulate_batch(sys, K, x0[None, :], horizon, w)
    k = int(out.diverged_at[0])
    if k >= 0:
        return Trajectory(out.states[: k + 1, 0], out.inputs[:k, 0], horizon, diverged_at=k)
    return Trajectory(out.states[:, 0], out.inputs[:, 0], horizon)


class Simulator:
    """Black-box access to a plant: rollouts in, states out.

    Model-free algorithms get one of these and nothing else about the plant.
    """

    def __init__(self, system: LinearSystem):
        self._system = system
        self.rollouts = 0

    @property
    def n(self) -> int:
        return self._system.n

    @property
    def m(self) -> int:
        return self._system.m

    def rollout(self, gains, x0s, horizon: int, noises=None) -> BatchRollout:
        out = simulate_batch(self._system, gains, x0s, horizon, noises)
        self.rollouts += out.states.shape[1]
        return out


def random_system(n: int, m: int, a_std: float = 0.1, b_std: float = 1.0, seed: int = 0) -> LinearSystem:
    """Gaussian ensemble: ``A`` entries N(0, a_std^2), ``B`` entries N(0, b_std^2)."""
    if n < 1 or m < 1:
        raise ValueError("n and m must be positive")
    if a_std <= 0 or b_std <= 0:
        raise ValueError("standard deviations must be positive")
    gen = seeding.rng(seed, seeding.SYSTEM)
    A = a_std * gen.standard_normal((n, n))
    B = b_std * gen.standard_normal((n, m))
    return LinearSystem(A, B)


def write_system(sys: LinearSystem, path) -> None:
    """Plain-text matrix file: ``n m`` then the rows of A, then the rows of B."""
    lines = [f"{sys.n} {sys.m}"]
    for M in (sys.A, sys.B):
        lines.extend(" ".join(f"{v:.17g}" for v in row) for row in M)
    Path(path).write_text("\n".join(lines) + "\n")


def read_system(path) -> LinearSystem:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not rows or len(rows[0]) != 2:
        raise ValueError(f"{path}: first line must be 'n m'")
    n, m = int(rows[0][0]), int(rows[0][1])
    if len(rows) != 1 + 2 * n:
        raise ValueError(f"{path}: expected {2 * n} matrix rows, found {len(rows) - 1}")
    A = np.array([[float(v) for v in r] for r in rows[1 : 1 + n]])
    B = np.array([[float(v) for v in r] for r in rows[1 + n :]])
    if A.shape != (n, n) or B.shape != (n, m):
        raise DimensionError(f"{path}: rows do not match declared sizes {n} x {m}")
    return LinearSystem(A, B)
