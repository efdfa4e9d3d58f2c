"""Ground-truth solvers used to measure label quality.

Two independent routes exist for grids: a closed-form geometric oracle
(``grid_optimal_actions``) and full-horizon tabular value iteration
(``value_iteration_actions``). They must agree exactly; the geometric form
is valid only because grid dynamics are deterministic and obstacle-free.

Assumption checks report agreement *rates* rather than asserting the
trust-horizon approximation universally: the approximation is only claimed
to hold within a horizon, so we quantify it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datagen import Dataset, distill_bandit, distill_dense, distill_sparse
from .envs import (
    Policy,
    _GridEnv,
    env_from_tag,
    family_spec,
    grid_step,
    manhattan,
    sample_env,
)
from .rng import RngStream

__all__ = [
    "OracleReport",
    "optimal_arm",
    "grid_optimal_actions",
    "value_iteration_actions",
    "optimal_action_set",
    "label_accuracy",
    "assumption_check",
]


@dataclass
class OracleReport:
    """Agreement of labels with the ground-truth optimal set."""

    agreement_rate: float
    sample_count: int
    per_distance: dict[int, float] = field(default_factory=dict)


def optimal_arm(means) -> int:
    """Index of the largest true mean, ties to the lowest index."""
    return int(np.argmax(np.asarray(means, dtype=float)))


def grid_optimal_actions(params, state) -> frozenset[int]:
    """Optimal actions at ``state`` for a goal-reward grid, geometrically.

    Away from the goal: every move that strictly reduces Manhattan distance.
    On the goal: stay, plus any wall-clamped move that re-enters the goal
    (those tie with stay exactly, so value iteration includes them too).
    """
    pos = (int(state[0]), int(state[1]))
    nexts = [grid_step(params.width, params.height, *pos, a) for a in range(5)]
    if pos == params.goal:
        return frozenset(a for a, nxt in enumerate(nexts) if nxt == params.goal)
    d = manhattan(pos, params.goal)
    return frozenset(a for a, nxt in enumerate(nexts) if manhattan(nxt, params.goal) < d)


def value_iteration_actions(env: _GridEnv, gamma: float = 0.99, tol: float = 1e-9) -> dict[tuple[int, int], frozenset[int]]:
    """Finite-horizon tabular value iteration over the full episode length.

    Returns, per cell, the set of actions whose Q-value at the initial step
    is within ``tol`` of the maximum. Independent cross-check for
    :func:`grid_optimal_actions`.
    """
    p = env.params
    n_states = p.width * p.height
    n_actions = env.spec.num_actions
    next_idx = np.empty((n_states, n_actions), dtype=np.int64)
    reward = np.empty((n_states, n_actions))
    for y in range(p.height):
        for x in range(p.width):
            s = y * p.width + x
            for a in range(n_actions):
                nx, ny = grid_step(p.width, p.height, x, y, a)
                next_idx[s, a] = ny * p.width + nx
                reward[s, a] = env.reward_at((nx, ny))
    values = np.zeros(n_states)
    for _ in range(p.horizon):
        q = reward + gamma * values[next_idx]
        values = q.max(axis=1)
    best = q.max(axis=1, keepdims=True)
    out = {}
    for y in range(p.height):
        for x in range(p.width):
            s = y * p.width + x
            out[(x, y)] = frozenset(np.flatnonzero(q[s] >= best[s] - tol).tolist())
    return out


def optimal_action_set(env) -> "dict | frozenset":
    """Ground-truth optimal set(s) for one task instance.

    Bandits: the set of argmax arms. Grids: a per-cell mapping.
    """
    if env.spec.reward_kind == "bandit":
        means = env.means
        return frozenset(np.flatnonzero(means == means.max()).tolist())
    return {tuple(map(int, s)): grid_optimal_actions(env.params, s) for s in env.states()}


def label_accuracy(dataset: Dataset, family: str) -> OracleReport:
    """Fraction of dataset labels inside the oracle-optimal set.

    Grids also report the rate broken down by the query state's Manhattan
    distance to the goal.
    """
    spec = family_spec(family)
    is_grid = spec.reward_kind != "bandit"
    envs: dict[str, object] = {}
    hits = 0
    by_distance: dict[int, list[int]] = {}
    for sample in dataset.samples:
        env = envs.get(sample.env_tag)
        if env is None:
            env = envs.setdefault(sample.env_tag, env_from_tag(sample.env_tag))
        if is_grid:
            good = sample.action_label in grid_optimal_actions(env.params, sample.query_state)
            pos = (int(sample.query_state[0]), int(sample.query_state[1]))
            dist = manhattan(pos, env.params.goal)
            by_distance.setdefault(dist, []).append(int(good))
        else:
            means = env.means
            good = means[sample.action_label] == means.max()
        hits += int(good)
    n = len(dataset.samples)
    per_distance = {d: float(np.mean(v)) for d, v in sorted(by_distance.items())}
    return OracleReport(hits / n if n else 0.0, n, per_distance)


def assumption_check(
    family: str,
    policy: Policy | None,
    trust_horizon: int,
    trials: int,
    master_seed: int,
    episode_cap: int | None = None,
    gamma: float = 0.99,
) -> OracleReport:
    """Rate at which distilled labels match the true optimal set.

    Each trial draws a fresh task (stream = trial index) and distills one
    label with the family's distiller; grids also report per-distance rates.
    """
    spec = family_spec(family)
    policy = policy or Policy.uniform(spec.num_actions)
    cap = episode_cap if episode_cap is not None else spec.horizon
    hits = 0
    by_distance: dict[int, list[int]] = {}
    for i in range(trials):
        rng = RngStream(master_seed, i)
        env = sample_env(family, "train", rng)
        if spec.reward_kind == "bandit":
            _, label = distill_bandit(env, policy, trust_horizon, rng)
            good = env.means[label] == env.means.max()
        else:
            if spec.reward_kind == "sparse":
                s_q, label = distill_sparse(env, policy, trust_horizon, cap, rng)
            else:
                s_q, label = distill_dense(env, policy, trust_horizon, gamma, rng)
            good = label in grid_optimal_actions(env.params, s_q)
            dist = manhattan((int(s_q[0]), int(s_q[1])), env.params.goal)
            by_distance.setdefault(dist, []).append(int(good))
        hits += int(good)
    per_distance = {d: float(np.mean(v)) for d, v in sorted(by_distance.items())}
    return OracleReport(hits / trials if trials else 0.0, trials, per_distance)
