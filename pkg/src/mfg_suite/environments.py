"""The benchmark games: SIS epidemic, linear-quadratic crowd, four-rooms
exploration, maze with congestion, three-population chasing, plus a tiny
fully-enumerable two-state game used as the brute-force oracle substrate.

Grid layouts are plain-text assets: '#' wall, '.' floor, 'R' target cell,
digits 1-3 mark initial-mass cells (per population in the multi-population
game). All cells of the rectangle are states; moves into walls resolve to
"stay", so wall cells are simply never reached.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import numpy as np

from .core import (
    Distribution,
    EnvironmentModel,
    HorizonSpec,
    LOG_FLOOR,
    ShapeMismatch,
)

# ---------------------------------------------------------------------------
# SIS epidemic game
# ---------------------------------------------------------------------------

S, I = 0, 1  # states: susceptible, infected
GO_OUT, DISTANCE = 0, 1  # actions


@dataclass(frozen=True)
class SisParams:
    n_t: int = 50
    recovery: float = 0.3  # p(S | I, either action)
    infection: float = 0.81  # p(I | S, go out) = infection * mu(I)
    infected_cost: float = 1.0
    distancing_cost: float = 0.5
    infected0: float = 0.5  # initial infected share (not pinned by the model)

    def __post_init__(self):
        if not (0.0 <= self.recovery <= 1.0 and 0.0 <= self.infection <= 1.0):
            raise ValueError("recovery and infection must be probabilities")
        if not 0.0 <= self.infected0 <= 1.0:
            raise ValueError("infected0 must be in [0, 1]")


class SisEnvironment(EnvironmentModel):
    """Two states (S, I), two actions (go out, distance).

    Infection risk scales with the infected share of the population and is
    zero while distancing; distancing costs half as much as being infected.
    """

    def __init__(self, params: SisParams = SisParams()):
        self.params = params
        self.num_states = 2
        self.num_actions = 2
        self.horizon = HorizonSpec(params.n_t)

    def initial_distribution(self) -> Distribution:
        return Distribution(np.array([1.0 - self.params.infected0, self.params.infected0]))

    def _transition_mass(self, n, x, a, mu):
        if x == I:
            rec = self.params.recovery
            return np.array([rec, 1.0 - rec])
        if a == DISTANCE:
            return np.array([1.0, 0.0])
        p_inf = self.params.infection * mu[I]
        return np.array([1.0 - p_inf, p_inf])

    def reward(self, n, x, a, mu_n):
        r = 0.0
        if x == I:
            r -= self.params.infected_cost
        if a == DISTANCE:
            r -= self.params.distancing_cost
        return r

    def reward_profile(self, n, mu):
        p = self.params
        return np.array(
            [[0.0, -p.distancing_cost],
             [-p.infected_cost, -p.infected_cost - p.distancing_cost]]
        )

    def transition_profile(self, n, mu):
        p = self.params
        p_inf = p.infection * mu[I]
        t = np.empty((2, 2, 2))
        t[S, GO_OUT] = (1.0 - p_inf, p_inf)
        t[S, DISTANCE] = (1.0, 0.0)
        t[I, GO_OUT] = t[I, DISTANCE] = (p.recovery, 1.0 - p.recovery)
        return t


def sis_env(params: SisParams = SisParams()) -> SisEnvironment:
    return SisEnvironment(params)


# ---------------------------------------------------------------------------
# Linear-quadratic game on a 1-d lattice
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LqParams:
    n_t: int = 10
    sigma: float = 1.0
    dt: float = 1.0
    q_coef: float = 0.01
    kappa: float = 0.5
    c_term: float = 1.0
    num_states: int = 100
    # the model fixes the noise support; the action set is a repo choice
    actions: tuple = (-3, -2, -1, 0, 1, 2, 3)
    noise_values: tuple = (-3, -2, -1, 0, 1, 2, 3)

    def __post_init__(self):
        if self.num_states < 2:
            raise ValueError("num_states must be >= 2")

    def noise_weights(self) -> np.ndarray:
        w = np.exp(-0.5 * np.asarray(self.noise_values, dtype=float) ** 2)
        return w / w.sum()


class LqEnvironment(EnvironmentModel):
    """Positions 0..num_states-1; moving costs quadratically, staying near the
    population mean pays. Dynamics: x' = clamp(x + a*dt + sigma*eps*sqrt(dt)).
    """

    def __init__(self, params: LqParams = LqParams()):
        self.params = params
        self.num_states = params.num_states
        self.num_actions = len(params.actions)
        self.horizon = HorizonSpec(params.n_t, params.dt)
        self.positions = np.arange(self.num_states, dtype=float)
        self._profile = self._build_profile()

    def _build_profile(self) -> np.ndarray:
        p = self.params
        w = p.noise_weights()
        t = np.zeros((self.num_states, self.num_actions, self.num_states))
        for x in range(self.num_states):
            for ai, a in enumerate(p.actions):
                for eps, weight in zip(p.noise_values, w):
                    drift = x + a * p.dt + p.sigma * eps * math.sqrt(p.dt)
                    nxt = int(np.clip(round(drift), 0, self.num_states - 1))
                    t[x, ai, nxt] += weight
        return t

    def initial_distribution(self) -> Distribution:
        return Distribution(np.full(self.num_states, 1.0 / self.num_states))

    def mean_position(self, mu: np.ndarray) -> float:
        return float(mu @ self.positions)

    def _transition_mass(self, n, x, a, mu):
        return self._profile[x, a]

    def transition_profile(self, n, mu):
        return self._profile

    def reward(self, n, x, a, mu_n):
        p = self.params
        m_bar = self.mean_position(np.asarray(mu_n.mass if isinstance(mu_n, Distribution) else mu_n))
        if n >= p.n_t:
            return -0.5 * p.c_term * (m_bar - x) ** 2
        a_val = p.actions[a]
        gap = m_bar - x
        return (-0.5 * a_val**2 + p.q_coef * a_val * gap - 0.5 * p.kappa * gap**2) * p.dt

    def reward_profile(self, n, mu):
        p = self.params
        gap = self.mean_position(mu) - self.positions  # (X,)
        if n >= p.n_t:
            return np.tile((-0.5 * p.c_term * gap**2)[:, None], (1, self.num_actions))
        a_vals = np.asarray(p.actions, dtype=float)  # (A,)
        r = (
            -0.5 * a_vals[None, :] ** 2
            + p.q_coef * a_vals[None, :] * gap[:, None]
            - 0.5 * p.kappa * gap[:, None] ** 2
        )
        return r * p.dt


def lq_env(params: LqParams = LqParams()) -> LqEnvironment:
    return LqEnvironment(params)


# ---------------------------------------------------------------------------
# Grid worlds
# ---------------------------------------------------------------------------

STAY, LEFT, RIGHT, UP, DOWN = range(5)
MOVES = {STAY: (0, 0), LEFT: (0, -1), RIGHT: (0, 1), UP: (-1, 0), DOWN: (1, 0)}


@dataclass(frozen=True)
class GridLayout:
    """Parsed plain-text map."""

    walls: np.ndarray  # (H, W) bool
    target: Optional[int]  # flat cell index of 'R', if any
    starts: dict  # population digit -> tuple of flat cell indices


def parse_map(text: str) -> GridLayout:
    rows = [line for line in text.strip("\n").split("\n")]
    if not rows:
        raise ValueError("empty map")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError("map rows must all have the same length")
    height = len(rows)
    walls = np.zeros((height, width), dtype=bool)
    target = None
    starts: dict = {}
    for r, line in enumerate(rows):
        for c, ch in enumerate(line):
            idx = r * width + c
            if ch == "#":
                walls[r, c] = True
            elif ch == ".":
                pass
            elif ch == "R":
                if target is not None:
                    raise ValueError("map has more than one target cell")
                target = idx
            elif ch in "123":
                starts.setdefault(int(ch), []).append(idx)
            else:
                raise ValueError(f"unknown map character {ch!r} at row {r}, col {c}")
    if walls.all():
        raise ValueError("map has no floor cells")
    return GridLayout(walls=walls, target=target, starts={k: tuple(v) for k, v in sorted(starts.items())})


def _packaged_map(name: str) -> str:
    return resources.files("mfg_suite").joinpath(f"maps/{name}.map").read_text()


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    walls: np.ndarray  # (H, W) bool
    horizon: HorizonSpec
    m0: np.ndarray  # (H*W,) over flat cells
    target: Optional[int] = None

    def __post_init__(self):
        if self.walls.shape != (self.height, self.width):
            raise ShapeMismatch("wall mask shape does not match width/height")
        if self.walls.all():
            raise ValueError("grid has no floor cells")
        m0 = np.asarray(self.m0, dtype=float)
        if m0[self.walls.reshape(-1)].any():
            raise ValueError("initial mass sits on a wall cell")
        Distribution(m0)


def grid_spec_from_map(text: str, n_t: int = 40) -> GridSpec:
    layout = parse_map(text)
    height, width = layout.walls.shape
    m0 = np.zeros(height * width)
    start_cells = [c for cells in layout.starts.values() for c in cells]
    if start_cells:
        m0[start_cells] = 1.0 / len(start_cells)
    else:
        floor = ~layout.walls.reshape(-1)
        m0[floor] = 1.0 / floor.sum()
    return GridSpec(
        width=width,
        height=height,
        walls=layout.walls,
        horizon=HorizonSpec(n_t),
        m0=m0,
        target=layout.target,
    )


def resolve_move(walls: np.ndarray, cell: int, action: int) -> int:
    """Destination of a move on the grid; walls and borders mean 'stay'."""
    h, w = walls.shape
    r, c = divmod(cell, w)
    dr, dc = MOVES[action]
    nr, nc = r + dr, c + dc
    if not (0 <= nr < h and 0 <= nc < w) or walls[nr, nc]:
        return cell
    return nr * w + nc


def _move_profile(walls: np.ndarray) -> np.ndarray:
    cells = walls.size
    t = np.zeros((cells, len(MOVES), cells))
    for cell in range(cells):
        for a in MOVES:
            t[cell, a, resolve_move(walls, cell, a)] = 1.0
    return t


class GridEnvironment(EnvironmentModel):
    """Deterministic moves on a rectangle; invalid moves (walls, borders)
    resolve to staying put. States are all H*W cells; walls are unreachable.
    """

    def __init__(self, spec: GridSpec):
        self.spec = spec
        self.num_states = spec.width * spec.height
        self.num_actions = len(MOVES)
        self.horizon = spec.horizon
        self._profile = _move_profile(spec.walls)

    def _resolve_move(self, cell: int, action: int) -> int:
        return resolve_move(self.spec.walls, cell, action)

    def initial_distribution(self) -> Distribution:
        return Distribution(self.spec.m0)

    def _transition_mass(self, n, x, a, mu):
        return self._profile[x, a]

    def transition_profile(self, n, mu):
        return self._profile


class FourRoomsEnvironment(GridEnvironment):
    """Pure crowd aversion: r(x, a, mu) = -log(mu(x))."""

    def reward(self, n, x, a, mu_n):
        mu = mu_n.mass if isinstance(mu_n, Distribution) else mu_n
        return float(-np.log(max(mu[x], LOG_FLOOR)))

    def reward_profile(self, n, mu):
        r = -np.log(np.maximum(mu, LOG_FLOOR))
        return np.tile(r[:, None], (1, self.num_actions))


def four_rooms_env(spec: Optional[GridSpec] = None) -> FourRoomsEnvironment:
    if spec is None:
        spec = grid_spec_from_map(_packaged_map("four_rooms"))
    return FourRoomsEnvironment(spec)


class MazeEnvironment(GridEnvironment):
    """Crowd aversion plus distance-to-target and congestion move penalty:
    r = -dist(x, x_ref) - mu(x)*||a|| - log(mu(x)), with ||a|| = 1 for moves.
    """

    def __init__(self, spec: GridSpec, wall_aware_distance: bool = False):
        if spec.target is None:
            raise ValueError("maze needs a target cell ('R' in the map)")
        super().__init__(spec)
        self.wall_aware_distance = wall_aware_distance
        self.dist = self._distances()

    def _distances(self) -> np.ndarray:
        h, w = self.spec.height, self.spec.width
        tr, tc = divmod(self.spec.target, w)
        if not self.wall_aware_distance:
            rr, cc = np.divmod(np.arange(self.num_states), w)
            return np.abs(rr - tr) + np.abs(cc - tc)
        # breadth-first distance over floor cells; unreachable cells get H*W
        dist = np.full(self.num_states, h * w, dtype=float)
        dist[self.spec.target] = 0.0
        queue = [self.spec.target]
        while queue:
            cell = queue.pop(0)
            for a in (LEFT, RIGHT, UP, DOWN):
                nb = self._resolve_move(cell, a)
                if nb != cell and dist[nb] > dist[cell] + 1:
                    dist[nb] = dist[cell] + 1
                    queue.append(nb)
        return dist

    def reward(self, n, x, a, mu_n):
        mu = mu_n.mass if isinstance(mu_n, Distribution) else mu_n
        move = 0.0 if a == STAY else 1.0
        return float(-self.dist[x] - mu[x] * move - np.log(max(mu[x], LOG_FLOOR)))

    def reward_profile(self, n, mu):
        pop = -np.log(np.maximum(mu, LOG_FLOOR)) - self.dist
        r = np.tile(pop[:, None], (1, self.num_actions))
        r[:, [LEFT, RIGHT, UP, DOWN]] -= mu[:, None]
        return r


def maze_env(spec: Optional[GridSpec] = None, wall_aware_distance: bool = False) -> MazeEnvironment:
    if spec is None:
        spec = grid_spec_from_map(_packaged_map("maze"))
    return MazeEnvironment(spec, wall_aware_distance=wall_aware_distance)


# ---------------------------------------------------------------------------
# Multi-population chasing
# ---------------------------------------------------------------------------

DEFAULT_INTERACTIONS = np.array(
    [[0.0, -1.0, 1.0],
     [1.0, 0.0, -1.0],
     [-1.0, 1.0, 0.0]]
)


@dataclass(frozen=True)
class MultiPopParams:
    spec: GridSpec
    start_cells: tuple  # one tuple of flat cell indices per population
    interactions: np.ndarray = field(default_factory=lambda: DEFAULT_INTERACTIONS.copy())

    def __post_init__(self):
        m = np.asarray(self.interactions, dtype=float)
        if m.shape != (len(self.start_cells), len(self.start_cells)):
            raise ShapeMismatch("interaction matrix shape must match population count")
        if not np.allclose(m, -m.T):
            raise ValueError("interaction matrix must be antisymmetric")


def multipop_params_from_map(text: str, n_t: int = 40) -> MultiPopParams:
    layout = parse_map(text)
    if sorted(layout.starts) != [1, 2, 3]:
        raise ValueError("multi-population map must mark populations 1, 2 and 3")
    height, width = layout.walls.shape
    start_cells = tuple(layout.starts[i] for i in (1, 2, 3))
    m0 = np.zeros(height * width)
    for cells in start_cells:
        m0[list(cells)] += 1.0 / (3 * len(cells))
    spec = GridSpec(
        width=width, height=height, walls=layout.walls,
        horizon=HorizonSpec(n_t), m0=m0, target=layout.target,
    )
    return MultiPopParams(spec=spec, start_cells=start_cells)


class MultiPopEnvironment(EnvironmentModel):
    """Composite state (population index, cell); the population index never
    changes, so each population keeps its 1/num_pops share of the total mass.

    Reward for population i at cell x: -log(mu_i(x)) + sum_j mu_j(x) * R[i, j],
    where mu_i is population i's slice of the composite distribution.
    """

    def __init__(self, params: Optional[MultiPopParams] = None):
        if params is None:
            params = multipop_params_from_map(_packaged_map("multipop"))
        self.params = params
        self.spec = params.spec
        self.num_pops = len(params.start_cells)
        self.cells = self.spec.width * self.spec.height
        self.num_states = self.num_pops * self.cells
        self.num_actions = len(MOVES)
        self.horizon = self.spec.horizon
        cell_profile = _move_profile(self.spec.walls)
        self._profile = np.zeros((self.num_states, self.num_actions, self.num_states))
        for i in range(self.num_pops):
            lo, hi = i * self.cells, (i + 1) * self.cells
            self._profile[lo:hi, :, lo:hi] = cell_profile

    def initial_distribution(self) -> Distribution:
        m0 = np.zeros(self.num_states)
        for i, cells in enumerate(self.params.start_cells):
            for c in cells:
                m0[i * self.cells + c] = 1.0 / (self.num_pops * len(cells))
        return Distribution(m0)

    def population_slices(self, mu: np.ndarray) -> np.ndarray:
        return np.asarray(mu).reshape(self.num_pops, self.cells)

    def _transition_mass(self, n, x, a, mu):
        return self._profile[x, a]

    def transition_profile(self, n, mu):
        return self._profile

    def reward(self, n, x, a, mu_n):
        mu = mu_n.mass if isinstance(mu_n, Distribution) else np.asarray(mu_n)
        slices = self.population_slices(mu)
        i, cell = divmod(x, self.cells)
        r = -np.log(max(slices[i, cell], LOG_FLOOR))
        for j in range(self.num_pops):
            if j != i:
                r += slices[j, cell] * self.params.interactions[i, j]
        return float(r)

    def reward_profile(self, n, mu):
        slices = self.population_slices(mu)  # (P, C)
        own = -np.log(np.maximum(slices, LOG_FLOOR))
        cross = self.params.interactions @ slices  # diagonal is 0
        r = (own + cross).reshape(-1)
        return np.tile(r[:, None], (1, self.num_actions))


def multipop_env(params: Optional[MultiPopParams] = None) -> MultiPopEnvironment:
    return MultiPopEnvironment(params)


# ---------------------------------------------------------------------------
# Enumerable two-state game (oracle substrate)
# ---------------------------------------------------------------------------


class ToyEnvironment(EnvironmentModel):
    """Two states, two actions, n_t = 3: small enough that all 2^8 = 256
    deterministic policies can be enumerated exactly, with both the dynamics
    and the reward coupled to the population through mu.
    """

    M0 = np.array([0.6, 0.4])
    BASE_REWARD = np.array([[1.0, 0.3], [0.0, 2.0]])
    CROWD_COST = 0.8

    def __init__(self):
        self.num_states = 2
        self.num_actions = 2
        self.horizon = HorizonSpec(3)

    def initial_distribution(self) -> Distribution:
        return Distribution(self.M0)

    def _transition_mass(self, n, x, a, mu):
        if x == 0 and a == 0:
            return np.array([0.7, 0.3])
        if x == 0 and a == 1:
            p0 = 0.2 + 0.5 * mu[0]
            return np.array([p0, 1.0 - p0])
        if x == 1 and a == 0:
            return np.array([0.5, 0.5])
        return np.array([0.9, 0.1])

    def reward(self, n, x, a, mu_n):
        mu = mu_n.mass if isinstance(mu_n, Distribution) else mu_n
        return float(self.BASE_REWARD[x, a] - self.CROWD_COST * mu[x])

    def reward_profile(self, n, mu):
        return self.BASE_REWARD - self.CROWD_COST * mu[:, None]


def toy_env() -> ToyEnvironment:
    return ToyEnvironment()
