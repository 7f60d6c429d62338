"""Core types shared by every solver: distributions, flows, policies, Q-tables,
the environment contract, and solver hyperparameters.

All containers are immutable after construction (arrays are marked read-only),
so they can be shared freely across parallel runs. All randomness in the suite
flows through an explicitly passed ``numpy.random.Generator``.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np

# Floor applied to any probability before taking its log, suite-wide.
LOG_FLOOR = 1e-12

MASS_TOL = 1e-9
NEG_TOL = 1e-12


class NegativeMass(ValueError):
    """A probability vector carries an entry below -1e-12."""


class NotNormalized(ValueError):
    """A probability vector does not sum to 1 within 1e-9."""


class ShapeMismatch(ValueError):
    """Array shapes are inconsistent with the environment's spaces."""


class NonFiniteGradient(FloatingPointError):
    """A gradient contains NaN or infinite entries."""


class ZeroSupportReference(ValueError):
    """A Boltzmann reference policy has an entry below the log floor."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class HorizonSpec:
    """Finite horizon: decision times run n = 0..n_t, so there are n_t+1 steps."""

    n_t: int
    dt: float = 1.0

    def __post_init__(self):
        if self.n_t < 1:
            raise ValueError(f"n_t must be >= 1, got {self.n_t}")
        if self.dt <= 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")


@dataclass(frozen=True)
class Distribution:
    """Probability vector over the finite state set."""

    mass: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=np.float64)
        if m.ndim != 1:
            raise ShapeMismatch(f"distribution must be 1-d, got shape {m.shape}")
        if m.min(initial=0.0) < -NEG_TOL:
            raise NegativeMass(f"negative mass {m.min()} at index {int(m.argmin())}")
        s = m.sum()
        if abs(s - 1.0) > MASS_TOL:
            raise NotNormalized(f"mass sums to {s}, expected 1")
        # tolerated dust in [-1e-12, 0) is clipped so every entry is >= 0
        object.__setattr__(self, "mass", _freeze(np.maximum(m, 0.0)))

    def __len__(self) -> int:
        return self.mass.shape[0]


def validate_distribution(values) -> Distribution:
    """Validate a raw vector as a Distribution; raises NegativeMass / NotNormalized."""
    return Distribution(np.asarray(values, dtype=np.float64))


@dataclass(frozen=True)
class MeanFieldFlow:
    """Time-indexed population distribution, one row per n = 0..n_t."""

    flow: np.ndarray  # (n_t+1, |X|)

    def __post_init__(self):
        f = np.asarray(self.flow, dtype=np.float64)
        if f.ndim != 2:
            raise ShapeMismatch(f"flow must be 2-d, got shape {f.shape}")
        for row in f:
            Distribution(row)  # reuse the per-step checks
        object.__setattr__(self, "flow", _freeze(np.maximum(f, 0.0)))

    @property
    def n_t(self) -> int:
        return self.flow.shape[0] - 1

    @property
    def num_states(self) -> int:
        return self.flow.shape[1]

    def at(self, n: int) -> Distribution:
        return Distribution(self.flow[n])

    @staticmethod
    def constant(m0: Distribution, n_t: int) -> "MeanFieldFlow":
        return MeanFieldFlow(np.tile(m0.mass, (n_t + 1, 1)))


@dataclass(frozen=True)
class Policy:
    """Stochastic action rule per (n, x); each row probs[n, x, :] is a distribution."""

    probs: np.ndarray  # (n_t+1, |X|, |A|)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 3:
            raise ShapeMismatch(f"policy must be 3-d, got shape {p.shape}")
        if p.min(initial=0.0) < -NEG_TOL:
            raise NegativeMass("policy has a negative action probability")
        sums = p.sum(axis=2)
        bad = np.abs(sums - 1.0) > MASS_TOL
        if bad.any():
            n, x = np.argwhere(bad)[0]
            raise NotNormalized(f"policy row (n={n}, x={x}) sums to {sums[n, x]}")
        object.__setattr__(self, "probs", _freeze(np.maximum(p, 0.0)))

    @property
    def n_t(self) -> int:
        return self.probs.shape[0] - 1

    @property
    def num_states(self) -> int:
        return self.probs.shape[1]

    @property
    def num_actions(self) -> int:
        return self.probs.shape[2]

    @staticmethod
    def uniform(n_t: int, num_states: int, num_actions: int) -> "Policy":
        return Policy(np.full((n_t + 1, num_states, num_actions), 1.0 / num_actions))


@dataclass(frozen=True)
class QTable:
    """State-action values per (n, x, a). The table for n = n_t+1 is implicitly 0.

    ``kind`` is a documentation tag only: plain evaluation/optimal tables,
    cumulative mirror-descent tables, or Munchausen-reparameterized tables.
    """

    values: np.ndarray  # (n_t+1, |X|, |A|)
    kind: str = "plain"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ShapeMismatch(f"q-table must be 3-d, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("q-table contains non-finite entries")
        if self.kind not in ("plain", "cumulative", "munchausen"):
            raise ValueError(f"unknown q-table kind {self.kind!r}")
        object.__setattr__(self, "values", _freeze(v))


def stable_softmax(values, inv_temp: float = 1.0) -> Distribution:
    """softmax(inv_temp * values) with max-subtraction so it never overflows."""
    v = np.asarray(values, dtype=np.float64)
    if not np.isfinite(v).all():
        raise ValueError("softmax input must be finite")
    if inv_temp <= 0:
        raise ValueError(f"inv_temp must be > 0, got {inv_temp}")
    z = inv_temp * v
    z = z - z.max()
    e = np.exp(z)
    return Distribution(e / e.sum())


def softmax_rows(table: np.ndarray, inv_temp: float = 1.0) -> np.ndarray:
    """Row-wise stable softmax over the last axis (policy extraction from tables)."""
    z = inv_temp * np.asarray(table, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def floored_log(p: np.ndarray) -> np.ndarray:
    """log with the suite-wide probability floor (keeps Munchausen terms finite)."""
    return np.log(np.maximum(p, LOG_FLOOR))


class EnvironmentModel(abc.ABC):
    """Contract every game implements: spaces, horizon, m0, dynamics, rewards.

    Subclasses implement ``_transition_mass`` / ``reward``; the public
    ``transition`` wraps rows in validated Distributions, and ``sample_next``
    provides the model-free single-draw view used by the deep solvers.
    """

    num_states: int
    num_actions: int
    horizon: HorizonSpec

    @abc.abstractmethod
    def initial_distribution(self) -> Distribution:
        ...

    @abc.abstractmethod
    def _transition_mass(self, n: int, x: int, a: int, mu: np.ndarray) -> np.ndarray:
        """Raw transition row p_n(. | x, a, mu). Must sum to 1."""

    @abc.abstractmethod
    def reward(self, n: int, x: int, a: int, mu_n: Distribution) -> float:
        ...

    def transition(self, n: int, x: int, a: int, mu_n: Distribution) -> Distribution:
        return Distribution(self._transition_mass(n, x, a, mu_n.mass))

    def sample_next(self, n, x, a, mu_n: Distribution, rng: np.random.Generator) -> int:
        row = self._transition_mass(n, int(x), int(a), mu_n.mass)
        k = int(np.searchsorted(np.cumsum(row), rng.random(), side="right"))
        return min(k, self.num_states - 1)

    def sample_next_many(
        self, n, xs: np.ndarray, acts: np.ndarray, mu_n: Distribution, rng: np.random.Generator
    ) -> np.ndarray:
        """Vectorized batch of independent sample_next draws (same law)."""
        t = self.transition_profile(n, mu_n.mass)
        cdf = np.cumsum(t[xs, acts, :], axis=1)
        u = rng.random(len(xs))
        return np.minimum((cdf <= u[:, None]).sum(axis=1), self.num_states - 1)

    # Dense per-step views used by the exact inductions. Environments with
    # mu-independent dynamics override these with cached / vectorized versions.
    def transition_profile(self, n: int, mu: np.ndarray) -> np.ndarray:
        """(|X|, |A|, |X|) array of transition rows at time n under mu."""
        t = np.empty((self.num_states, self.num_actions, self.num_states))
        for x in range(self.num_states):
            for a in range(self.num_actions):
                t[x, a] = self._transition_mass(n, x, a, mu)
        return t

    def reward_profile(self, n: int, mu: np.ndarray) -> np.ndarray:
        """(|X|, |A|) array of rewards at time n under mu."""
        d = Distribution(mu)
        r = np.empty((self.num_states, self.num_actions))
        for x in range(self.num_states):
            for a in range(self.num_actions):
                r[x, a] = self.reward(n, x, a, d)
        return r


@dataclass
class SolverParams:
    """Hyperparameters shared by the tabular and deep solvers.

    tau is the OMD inverse learning rate / Munchausen temperature, alpha the
    Munchausen stabilizer, eta the Boltzmann (and soft best-response)
    temperature. iterations/inner_steps/batch_size are the K/L/N_B loop sizes.
    """

    tau: float = 1.0
    alpha: float = 1.0
    eta: float = 1.0
    iterations: int = 100
    inner_steps: int = 300
    batch_size: int = 128
    epsilon_start: float = 1.0
    epsilon_end: float = 0.1
    learning_rate: float = 1e-3
    lr_decay: float = 1.0  # per-outer-iteration decay of the persistent nets' rate
    sl_learning_rate: float = 5e-3
    seed: int = 0
    # tabular-only switches
    soft: bool = False  # soft best response / soft policy improvement at temperature eta
    # deep-only knobs
    hidden_sizes: tuple = (64, 64)
    replay_capacity: int = 100_000
    reservoir_capacity: int = 2_000_000
    target_refresh: int = 200
    episodes_per_iteration: int = 100
    n_samples: int = 10  # episodes distilled into the reservoir per iteration
    sl_steps: int = 200
    joint_onehot: bool = False  # one-hot over (n, x) jointly: exact tabular capacity
    exact_minibatch: bool = False  # exhaustive batches with exact next-state expectations
    snapshot_policies: bool = False

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.eta <= 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        for name in ("iterations", "inner_steps", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    def with_(self, **kw) -> "SolverParams":
        return replace(self, **kw)
