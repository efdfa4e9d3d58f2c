"""Environments: bandits and gridworlds behind one small MDP interface.

All tasks are finite MDPs ``(S, A, R, P, T, rho)`` with discrete actions.
Environments hold no RNG of their own; every stochastic call takes an
:class:`~icrl.rng.RngStream`, so a cloned instance driven by a fresh stream
is an independent simulator.

Grid convention (D-COORD): ``x`` grows rightward, ``y`` grows downward, and
the action order is ``[up, down, left, right, stay]``. Moving off the grid
clamps to the boundary. Sparse grids pay reward 1 on every step that ends on
the goal cell and episodes always run the full horizon.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import HorizonExceeded, InvalidAction, InvalidState, UnknownEnvTag, UnknownFamily
from .rng import RngStream

__all__ = [
    "ACTION_NAMES",
    "UP",
    "DOWN",
    "LEFT",
    "RIGHT",
    "STAY",
    "EnvSpec",
    "Transition",
    "Policy",
    "Env",
    "GaussianBanditParams",
    "BernoulliBanditParams",
    "DarkroomParams",
    "DenseGridParams",
    "GaussianBandit",
    "BernoulliBandit",
    "Darkroom",
    "DenseGrid",
    "grid_step",
    "manhattan",
    "goal_split",
    "sample_env",
    "env_from_tag",
    "family_spec",
    "state_scale",
    "FAMILIES",
]

UP, DOWN, LEFT, RIGHT, STAY = range(5)
ACTION_NAMES = ("up", "down", "left", "right", "stay")
_GRID_DELTAS = ((0, -1), (0, 1), (-1, 0), (1, 0), (0, 0))

# Reserved stream id for the train/test goal permutation, outside the range
# used for per-sample streams.
_SPLIT_STREAM = 2**62


@dataclass(frozen=True)
class EnvSpec:
    """Public shape of a task family: the sizes a model needs to know."""

    state_dim: int
    num_actions: int
    horizon: int
    reward_kind: str  # "dense" | "sparse" | "bandit"
    env_family: str

    def __post_init__(self):
        if self.state_dim < 1 or self.num_actions < 1 or self.horizon < 0:
            raise ValueError("invalid EnvSpec sizes")
        if self.reward_kind not in ("dense", "sparse", "bandit"):
            raise ValueError(f"unknown reward_kind {self.reward_kind!r}")


@dataclass(frozen=True)
class Transition:
    """One interaction ``(s, a, r, s')``."""

    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray


class Policy:
    """Maps states to action distributions.

    Two kinds exist: the uniform random policy (the one the whole data
    pipeline runs under) and tabular policies used by tests/oracles.
    """

    def __init__(self, num_actions: int, table: dict[tuple, np.ndarray] | None = None):
        self.num_actions = int(num_actions)
        self.table = None
        if table is not None:
            self.table = {}
            for key, probs in table.items():
                probs = np.asarray(probs, dtype=float)
                if probs.shape != (self.num_actions,) or np.any(probs < 0):
                    raise ValueError(f"bad probability row for state {key}")
                if abs(probs.sum() - 1.0) > 1e-9:
                    raise ValueError(f"probabilities for state {key} do not sum to 1")
                self.table[tuple(float(v) for v in key)] = probs

    @classmethod
    def uniform(cls, num_actions: int) -> "Policy":
        return cls(num_actions)

    @classmethod
    def tabular(cls, num_actions: int, table: dict[tuple, np.ndarray]) -> "Policy":
        return cls(num_actions, table)

    @property
    def is_uniform(self) -> bool:
        return self.table is None

    def probs(self, state: np.ndarray) -> np.ndarray:
        if self.table is None:
            return np.full(self.num_actions, 1.0 / self.num_actions)
        key = tuple(float(v) for v in np.asarray(state).ravel())
        return self.table[key]

    def sample(self, state: np.ndarray, rng: RngStream) -> int:
        if self.table is None:
            return int(rng.generator.integers(self.num_actions))
        return int(rng.generator.choice(self.num_actions, p=self.probs(state)))


def grid_step(width: int, height: int, x: int, y: int, action: int) -> tuple[int, int]:
    """Deterministic grid move with boundary clamping (D-COORD order)."""
    dx, dy = _GRID_DELTAS[action]
    nx = min(max(x + dx, 0), width - 1)
    ny = min(max(y + dy, 0), height - 1)
    return nx, ny


def manhattan(a: tuple[int, int], b: tuple[int, int]) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


class Env:
    """A sampled task instance: hidden parameters plus an episode clock.

    Single-owner mutable object; use one instance from one thread at a time.
    """

    spec: EnvSpec
    split: str

    def reset(self, rng: RngStream | None = None) -> np.ndarray:
        raise NotImplementedError

    def reset_to(self, state: np.ndarray) -> None:
        raise NotImplementedError

    def step(self, action: int, rng: RngStream) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def sample_state_uniform(self, rng: RngStream) -> np.ndarray:
        raise NotImplementedError

    def states(self) -> list[np.ndarray]:
        """All states, enumerated in a fixed order."""
        raise NotImplementedError

    def tag(self) -> str:
        """Identifier string from which the hidden parameters can be rebuilt."""
        raise NotImplementedError

    def clone(self) -> "Env":
        raise NotImplementedError

    def _check_action(self, action: int) -> int:
        action = int(action)
        if not 0 <= action < self.spec.num_actions:
            raise InvalidAction(f"action {action} outside [0, {self.spec.num_actions})")
        return action


# ---------------------------------------------------------------------------
# Bandits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianBanditParams:
    means: tuple[float, ...]
    sigma: float = 0.3

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")


@dataclass(frozen=True)
class BernoulliBanditParams:
    means: tuple[float, ...]

    def __post_init__(self):
        if any(not 0.0 <= m <= 1.0 for m in self.means):
            raise ValueError("Bernoulli means must lie in [0, 1]")


class _BanditEnv(Env):
    """Stateless multi-armed bandit: single zero state, unbounded pulls."""

    def __init__(self, params, split: str = "train"):
        self.params = params
        self.split = split
        self.t = 0

    @property
    def means(self) -> np.ndarray:
        return np.asarray(self.params.means, dtype=float)

    def reset(self, rng: RngStream | None = None) -> np.ndarray:
        self.t = 0
        return np.zeros(1)

    def reset_to(self, state: np.ndarray) -> None:
        state = np.asarray(state, dtype=float)
        if state.shape != (1,) or state[0] != 0.0:
            raise InvalidState(f"bandit has a single zero state, got {state}")
        self.t = 0

    def step(self, action: int, rng: RngStream) -> tuple[float, np.ndarray]:
        action = self._check_action(action)
        self.t += 1
        return float(self.sample_rewards(action, 1, rng)[0]), np.zeros(1)

    def sample_state_uniform(self, rng: RngStream) -> np.ndarray:
        return np.zeros(1)

    def states(self) -> list[np.ndarray]:
        return [np.zeros(1)]

    def sample_rewards(self, action: int, n: int, rng: RngStream) -> np.ndarray:
        """n i.i.d. reward draws for one arm."""
        raise NotImplementedError

    def pull_sequence(self, actions: np.ndarray, rng: RngStream) -> np.ndarray:
        """One reward draw per pull, in pull order."""
        raise NotImplementedError

    def clone(self) -> "Env":
        return type(self)(self.params, self.split)


class GaussianBandit(_BanditEnv):
    def __init__(self, params: GaussianBanditParams, split: str = "train"):
        super().__init__(params, split)
        self.spec = EnvSpec(1, len(params.means), 1, "bandit", "gaussian_bandit")

    def sample_rewards(self, action, n, rng):
        action = self._check_action(action)
        return rng.generator.normal(self.params.means[action], self.params.sigma, size=n)

    def pull_sequence(self, actions, rng):
        return rng.generator.normal(self.means[actions], self.params.sigma)

    def tag(self) -> str:
        means = ",".join(repr(m) for m in self.params.means)
        return f"gaussian_bandit|means={means}|sigma={self.params.sigma!r}"


class BernoulliBandit(_BanditEnv):
    def __init__(self, params: BernoulliBanditParams, split: str = "train"):
        super().__init__(params, split)
        self.spec = EnvSpec(1, len(params.means), 1, "bandit", "bernoulli_bandit")

    def sample_rewards(self, action, n, rng):
        action = self._check_action(action)
        return (rng.generator.random(n) < self.params.means[action]).astype(float)

    def pull_sequence(self, actions, rng):
        return (rng.generator.random(len(actions)) < self.means[actions]).astype(float)

    def tag(self) -> str:
        means = ",".join(repr(m) for m in self.params.means)
        return f"bernoulli_bandit|means={means}"


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DarkroomParams:
    width: int
    height: int
    goal: tuple[int, int]
    horizon: int

    def __post_init__(self):
        gx, gy = self.goal
        if not (0 <= gx < self.width and 0 <= gy < self.height):
            raise ValueError(f"goal {self.goal} outside {self.width}x{self.height} grid")


@dataclass(frozen=True)
class DenseGridParams:
    width: int
    height: int
    goal: tuple[int, int]
    horizon: int

    def __post_init__(self):
        if self.width + self.height <= 2:
            raise ValueError("dense grid needs width + height > 2")
        gx, gy = self.goal
        if not (0 <= gx < self.width and 0 <= gy < self.height):
            raise ValueError(f"goal {self.goal} outside {self.width}x{self.height} grid")


class _GridEnv(Env):
    family: str

    def __init__(self, params, split: str = "train"):
        self.params = params
        self.split = split
        self.spec = family_spec(self.family)
        self.pos = (params.width // 2, params.height // 2)
        self.t = 0

    def _state(self) -> np.ndarray:
        return np.array(self.pos, dtype=float)

    def reset(self, rng: RngStream | None = None) -> np.ndarray:
        self.pos = (self.params.width // 2, self.params.height // 2)
        self.t = 0
        return self._state()

    def reset_to(self, state: np.ndarray) -> None:
        state = np.asarray(state, dtype=float)
        if state.shape != (2,):
            raise InvalidState(f"grid state must have 2 coordinates, got {state}")
        x, y = int(state[0]), int(state[1])
        if (x, y) != (state[0], state[1]) or not (
            0 <= x < self.params.width and 0 <= y < self.params.height
        ):
            raise InvalidState(f"state {state} outside {self.params.width}x{self.params.height} grid")
        self.pos = (x, y)
        self.t = 0

    def step(self, action: int, rng: RngStream) -> tuple[float, np.ndarray]:
        action = self._check_action(action)
        if self.t >= self.params.horizon:
            raise HorizonExceeded(f"episode clock {self.t} reached horizon {self.params.horizon}")
        self.pos = grid_step(self.params.width, self.params.height, *self.pos, action)
        self.t += 1
        return self.reward_at(self.pos), self._state()

    def reward_at(self, pos: tuple[int, int]) -> float:
        raise NotImplementedError

    def sample_state_uniform(self, rng: RngStream) -> np.ndarray:
        x = int(rng.generator.integers(self.params.width))
        y = int(rng.generator.integers(self.params.height))
        return np.array([x, y], dtype=float)

    def states(self) -> list[np.ndarray]:
        return [
            np.array([x, y], dtype=float)
            for y in range(self.params.height)
            for x in range(self.params.width)
        ]

    def tag(self) -> str:
        return f"{self.family}|goal={self.params.goal[0]},{self.params.goal[1]}"

    def clone(self) -> "Env":
        return type(self)(self.params, self.split)


class Darkroom(_GridEnv):
    """Sparse navigation grid: reward 1 on every step spent on the goal."""

    family = "darkroom"

    def reward_at(self, pos):
        return 1.0 if pos == self.params.goal else 0.0


class DarkroomLarge(Darkroom):
    family = "darkroom_large"


class DenseGrid(_GridEnv):
    """Dense testbed: reward shrinks linearly with distance from the goal."""

    family = "dense_grid"

    def reset(self, rng: RngStream | None = None) -> np.ndarray:
        if rng is None:
            raise ValueError("dense_grid draws its initial state and needs an RngStream")
        self.pos = tuple(int(v) for v in self.sample_state_uniform(rng))
        self.t = 0
        return self._state()

    def reward_at(self, pos):
        span = self.params.width + self.params.height - 2
        return 1.0 - manhattan(pos, self.params.goal) / span


# ---------------------------------------------------------------------------
# Family registry and task sampling
# ---------------------------------------------------------------------------

_GRID_SHAPES = {
    "darkroom": (7, 7, 49),
    "darkroom_large": (10, 10, 100),
    "dense_grid": (5, 5, 25),
}

_SPECS = {
    "gaussian_bandit": EnvSpec(1, 5, 1, "bandit", "gaussian_bandit"),
    "bernoulli_bandit": EnvSpec(1, 5, 1, "bandit", "bernoulli_bandit"),
    "darkroom": EnvSpec(2, 5, 49, "sparse", "darkroom"),
    "darkroom_large": EnvSpec(2, 5, 100, "sparse", "darkroom_large"),
    "dense_grid": EnvSpec(2, 5, 25, "dense", "dense_grid"),
}

_GRID_CLASSES = {"darkroom": Darkroom, "darkroom_large": DarkroomLarge, "dense_grid": DenseGrid}

FAMILIES = tuple(_SPECS)


def family_spec(family: str) -> EnvSpec:
    try:
        return _SPECS[family]
    except KeyError:
        raise UnknownFamily(f"unknown environment family {family!r}") from None


def state_scale(family: str) -> np.ndarray:
    """Per-dimension scale that maps states into [0, 1] for tokenization."""
    spec = family_spec(family)
    if spec.reward_kind == "bandit":
        return np.ones(1)
    w, h, _ = _GRID_SHAPES[family]
    return np.array([w - 1, h - 1], dtype=float)


@lru_cache(maxsize=None)
def goal_split(family: str, master_seed: int) -> dict[str, tuple[tuple[int, int], ...]]:
    """80/20 goal partition, permuted by a stream reserved under master_seed.

    Test size is 20% rounded half-up (D-SPLIT), so darkroom gets 39/10.
    """
    spec = family_spec(family)
    if spec.reward_kind == "bandit":
        raise UnknownFamily(f"{family} has no goal split; bandit tasks draw fresh means")
    w, h, _ = _GRID_SHAPES[family]
    cells = [(x, y) for y in range(h) for x in range(w)]
    n_test = int(np.floor(0.2 * len(cells) + 0.5))
    perm = RngStream(master_seed, _SPLIT_STREAM).generator.permutation(len(cells))
    test = tuple(cells[i] for i in perm[:n_test])
    train = tuple(cells[i] for i in perm[n_test:])
    return {"train": train, "test": test}


def sample_env(family: str, split: str, rng: RngStream) -> Env:
    """Draw a fresh task instance from the family's distribution.

    Grid goals come from the 80/20 split table keyed by ``rng.master_seed``;
    bandit means are drawn from the family's prior and tagged with the split.
    """
    spec = family_spec(family)
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    gen = rng.generator
    if family == "gaussian_bandit":
        means = tuple(float(m) for m in gen.uniform(0.0, 1.0, size=spec.num_actions))
        return GaussianBandit(GaussianBanditParams(means), split)
    if family == "bernoulli_bandit":
        means = tuple(float(m) for m in gen.beta(1.0, 1.0, size=spec.num_actions))
        return BernoulliBandit(BernoulliBanditParams(means), split)
    goals = goal_split(family, rng.master_seed)[split]
    goal = goals[int(gen.integers(len(goals)))]
    w, h, horizon = _GRID_SHAPES[family]
    cls = _GRID_CLASSES[family]
    params_cls = DenseGridParams if family == "dense_grid" else DarkroomParams
    return cls(params_cls(w, h, goal, horizon), split)


def env_from_tag(tag: str) -> Env:
    """Rebuild an environment instance from its tag (see ``Env.tag``)."""
    try:
        family, *fields = tag.split("|")
        kv = dict(f.split("=", 1) for f in fields)
        if family in ("gaussian_bandit", "bernoulli_bandit"):
            means = tuple(float(v) for v in kv["means"].split(","))
            if family == "gaussian_bandit":
                return GaussianBandit(GaussianBanditParams(means, float(kv["sigma"])))
            return BernoulliBandit(BernoulliBanditParams(means))
        if family in _GRID_CLASSES:
            gx, gy = (int(v) for v in kv["goal"].split(","))
            w, h, horizon = _GRID_SHAPES[family]
            params_cls = DenseGridParams if family == "dense_grid" else DarkroomParams
            return _GRID_CLASSES[family](params_cls(w, h, (gx, gy), horizon))
    except (KeyError, ValueError) as exc:
        raise UnknownEnvTag(f"cannot parse env tag {tag!r}") from exc
    raise UnknownEnvTag(f"unknown family in env tag {tag!r}")
