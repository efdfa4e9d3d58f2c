"""Offline and online deployment of a pretrained policy on fresh test tasks.

Offline: freeze a random-policy context of each probe length, predict
greedily, and score suboptimality (bandits) or episode return (grids).
Online: start from an empty context, act by sampling from the model, and
let the self-collected context grow (FIFO-capped at the model's context
window); score cumulative regret (bandits) or per-episode return (grids).

The test task set is a pure function of ``master_seed`` (task i owns stream
``(master_seed, i)``), so every method under comparison sees identical
tasks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import Context, collect_context
from .envs import Env, Policy, family_spec, sample_env
from .errors import FamilyMismatch
from .rng import RngStream

__all__ = [
    "EvalConfig",
    "MetricSeries",
    "RandomModel",
    "eval_offline",
    "eval_online",
    "expected_uniform_suboptimality",
    "save_metrics_csv",
    "load_metrics_csv",
]

METRIC_KINDS = (
    "suboptimality_vs_horizon",
    "return_vs_horizon",
    "cumulative_regret_vs_step",
    "return_vs_episode",
)


@dataclass
class EvalConfig:
    num_test_envs: int = 200
    horizons: tuple[int, ...] = (1, 2, 5, 10, 20, 50, 100)
    online_steps: int = 200
    online_episodes: int = 40
    online_context_cap: int | None = None  # None: the model's max_context

    def __post_init__(self):
        if self.num_test_envs < 1 or self.online_steps < 1 or self.online_episodes < 1:
            raise ValueError("evaluation sizes must be positive")


@dataclass
class MetricSeries:
    """One indexed curve: mean and standard error across test tasks."""

    kind: str
    x: np.ndarray
    mean: np.ndarray
    std_err: np.ndarray
    method: str = ""
    family: str = ""
    seed: int = 0

    def __post_init__(self):
        self.x = np.asarray(self.x)
        self.mean = np.asarray(self.mean, dtype=float)
        self.std_err = np.asarray(self.std_err, dtype=float)
        if not (len(self.x) == len(self.mean) == len(self.std_err)):
            raise ValueError("x/mean/std_err lengths differ")
        if np.any(self.std_err < 0):
            raise ValueError("std_err must be non-negative")
        if self.kind not in METRIC_KINDS:
            raise ValueError(f"unknown metric kind {self.kind!r}")


class RandomModel:
    """Uniform-random stub with the model prediction interface; the
    measured baseline the criteria compare against."""

    def __init__(self, num_actions: int, max_context: int = 10**9):
        self.num_actions = num_actions
        self.max_context = max_context

    def predict_batch(self, contexts, query_states, mode="greedy", rngs=None):
        if mode == "sample":
            return np.array([int(r.generator.integers(self.num_actions)) for r in rngs])
        # Greedy on a uniform prior: ties break to the lowest index.
        return np.zeros(len(contexts), dtype=np.int64)


def _check_family(model, family: str) -> None:
    spec = family_spec(family)
    num_actions = getattr(model, "num_actions", None)
    if num_actions is not None and num_actions != spec.num_actions:
        raise FamilyMismatch(
            f"model has {num_actions} actions but {family} has {spec.num_actions}"
        )


def _test_envs(family: str, count: int, master_seed: int) -> tuple[list[Env], list[RngStream]]:
    streams = [RngStream(master_seed, i) for i in range(count)]
    return [sample_env(family, "test", s) for s in streams], streams


def _stats(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = values.mean(axis=-1)
    std_err = values.std(axis=-1, ddof=1) / np.sqrt(values.shape[-1]) if values.shape[-1] > 1 else np.zeros_like(mean)
    return mean, std_err


def eval_offline(model, family: str, config: EvalConfig, master_seed: int, method: str = "") -> MetricSeries:
    """Greedy deployment against frozen contexts of increasing length.

    Bandits: suboptimality of the predicted arm per context length. Grids:
    return of one greedy episode (query = current state, context frozen)
    per context length.
    """
    _check_family(model, family)
    spec = family_spec(family)
    policy = Policy.uniform(spec.num_actions)
    envs, streams = _test_envs(family, config.num_test_envs, master_seed)
    n = len(envs)
    horizons = [h for h in config.horizons if h <= model.max_context]
    values = np.zeros((len(horizons), n))
    if spec.reward_kind == "bandit":
        gaps = np.stack([env.means.max() - env.means for env in envs])
        query = [np.zeros(1)] * n
        for hi, h in enumerate(horizons):
            contexts = [collect_context(envs[i], policy, h, streams[i]) for i in range(n)]
            actions = model.predict_batch(contexts, query, "greedy")
            values[hi] = gaps[np.arange(n), actions]
        mean, err = _stats(values)
        return MetricSeries("suboptimality_vs_horizon", np.array(horizons), mean, err, method, family, master_seed)
    for hi, h in enumerate(horizons):
        contexts = [collect_context(envs[i], policy, h, streams[i]) for i in range(n)]
        states = [env.reset(streams[i]) for i, env in enumerate(envs)]
        returns = np.zeros(n)
        for _ in range(spec.horizon):
            actions = model.predict_batch(contexts, states, "greedy")
            for i, env in enumerate(envs):
                r, s = env.step(int(actions[i]), streams[i])
                returns[i] += r
                states[i] = s
        values[hi] = returns
    mean, err = _stats(values)
    return MetricSeries("return_vs_horizon", np.array(horizons), mean, err, method, family, master_seed)


class _FifoContext:
    """Growing transition log with FIFO eviction at ``cap``."""

    def __init__(self, state_dim: int, cap: int):
        self.rows: list[tuple] = []
        self.state_dim = state_dim
        self.cap = cap

    def add(self, s, a, r, s2) -> None:
        self.rows.append((s, a, r, s2))
        if len(self.rows) > self.cap:
            del self.rows[0]

    def context(self) -> Context:
        if not self.rows:
            return Context.empty(self.state_dim)
        return Context(
            np.array([row[0] for row in self.rows], dtype=float),
            np.array([row[1] for row in self.rows], dtype=np.int64),
            np.array([row[2] for row in self.rows], dtype=float),
            np.array([row[3] for row in self.rows], dtype=float),
        )


def eval_online(model, family: str, config: EvalConfig, master_seed: int, method: str = "") -> MetricSeries:
    """Sampled deployment with a self-collected growing context.

    Bandits: cumulative regret over ``online_steps`` pulls. Grids: return
    per episode over ``online_episodes`` episodes, the context carrying
    over across episodes.
    """
    _check_family(model, family)
    spec = family_spec(family)
    envs, streams = _test_envs(family, config.num_test_envs, master_seed)
    n = len(envs)
    cap = config.online_context_cap or model.max_context
    logs = [_FifoContext(spec.state_dim, cap) for _ in range(n)]
    if spec.reward_kind == "bandit":
        gaps = np.stack([env.means.max() - env.means for env in envs])
        query = [np.zeros(1)] * n
        cum = np.zeros((config.online_steps, n))
        running = np.zeros(n)
        for t in range(config.online_steps):
            contexts = [log.context() for log in logs]
            actions = model.predict_batch(contexts, query, "sample", streams)
            for i, env in enumerate(envs):
                a = int(actions[i])
                r, _ = env.step(a, streams[i])
                logs[i].add(np.zeros(1), a, r, np.zeros(1))
                running[i] += gaps[i, a]
            cum[t] = running
        mean, err = _stats(cum)
        return MetricSeries(
            "cumulative_regret_vs_step", np.arange(1, config.online_steps + 1), mean, err, method, family, master_seed
        )
    returns = np.zeros((config.online_episodes, n))
    for ep in range(config.online_episodes):
        states = [env.reset(streams[i]) for i, env in enumerate(envs)]
        for _ in range(spec.horizon):
            contexts = [log.context() for log in logs]
            actions = model.predict_batch(contexts, states, "sample", streams)
            for i, env in enumerate(envs):
                a = int(actions[i])
                r, s2 = env.step(a, streams[i])
                logs[i].add(states[i], a, r, s2)
                returns[ep, i] += r
                states[i] = s2
    mean, err = _stats(returns)
    return MetricSeries(
        "return_vs_episode", np.arange(1, config.online_episodes + 1), mean, err, method, family, master_seed
    )


def expected_uniform_suboptimality(family: str, config: EvalConfig, master_seed: int) -> float:
    """Exact expected suboptimality of a uniform arm choice, averaged over
    the same test tasks the evaluations use."""
    envs, _ = _test_envs(family, config.num_test_envs, master_seed)
    return float(np.mean([env.means.max() - env.means.mean() for env in envs]))


# ---------------------------------------------------------------------------
# CSV persistence: columns (kind, x, mean, std_err, method, family, seed)
# ---------------------------------------------------------------------------


def save_metrics_csv(series_list: list[MetricSeries], path: str, config_hash: str = "") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        fh.write("kind,x,mean,std_err,method,family,seed\n")
        for s in series_list:
            for i in range(len(s.x)):
                fh.write(
                    f"{s.kind},{int(s.x[i])},{float(s.mean[i])!r},{float(s.std_err[i])!r},{s.method},{s.family},{s.seed}\n"
                )


def load_metrics_csv(path: str) -> list[MetricSeries]:
    groups: dict[tuple, list[tuple]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or line.startswith("kind,"):
                continue
            kind, x, mean, err, method, family, seed = line.rstrip("\n").split(",")
            groups.setdefault((kind, method, family, int(seed)), []).append(
                (int(x), float(mean), float(err))
            )
    out = []
    for (kind, method, family, seed), rows in groups.items():
        xs = np.array([r[0] for r in rows])
        out.append(
            MetricSeries(
                kind,
                xs,
                np.array([r[1] for r in rows]),
                np.array([r[2] for r in rows]),
                method,
                family,
                seed,
            )
        )
    return out
