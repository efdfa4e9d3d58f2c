"""Pretraining-set generation under a random policy.

The distillation pipeline builds supervised examples ``(context, query
state, action label, weight)`` without ever consulting an optimal or
pretrained policy:

* contexts are non-episodic transition collections gathered by teleporting
  to a uniform state and acting once (``collect_context``);
* action labels come from short random-policy probes: best discounted
  probe return for dense rewards (``distill_dense``), fewest steps to the
  first reward for sparse rewards (``distill_sparse``), and best empirical
  arm average for bandits (``distill_bandit``), each trusted only within a
  horizon ``N``;
* the AD / DPT-random / DIT baseline generators reuse the same random
  policy so that method comparisons isolate label construction.

Sample ``i`` of a dataset draws everything from ``RngStream(master_seed,
i)`` (baselines: per-task streams), so generation is reproducible and
independent of worker count.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .envs import (
    Env,
    EnvSpec,
    Policy,
    Transition,
    _BanditEnv,
    _GridEnv,
    family_spec,
    grid_step,
    sample_env,
)
from .errors import InvalidTrustHorizon, MethodEnvMismatch, NonTermination
from .rng import RngStream

__all__ = [
    "Context",
    "PretrainSample",
    "DatagenConfig",
    "Dataset",
    "METHODS",
    "collect_context",
    "distill_dense",
    "distill_sparse",
    "distill_bandit",
    "build_dataset",
    "build_baseline_dataset",
    "save_dataset",
    "load_dataset",
]

METHODS = ("sad", "ad", "dpt_random", "dit")


@dataclass
class Context:
    """An ordered batch of transitions, stored column-wise.

    Transitions need not chain into an episode: ``states[i + 1]`` is not
    required to equal ``next_states[i]``.
    """

    states: np.ndarray  # (T, state_dim) float
    actions: np.ndarray  # (T,) int
    rewards: np.ndarray  # (T,) float
    next_states: np.ndarray  # (T, state_dim) float

    def __len__(self) -> int:
        return self.actions.shape[0]

    @classmethod
    def empty(cls, state_dim: int) -> "Context":
        return cls(
            np.zeros((0, state_dim)),
            np.zeros(0, dtype=np.int64),
            np.zeros(0),
            np.zeros((0, state_dim)),
        )

    @classmethod
    def from_transitions(cls, transitions: list[Transition], state_dim: int) -> "Context":
        if not transitions:
            return cls.empty(state_dim)
        return cls(
            np.stack([t.state for t in transitions]).astype(float),
            np.array([t.action for t in transitions], dtype=np.int64),
            np.array([t.reward for t in transitions], dtype=float),
            np.stack([t.next_state for t in transitions]).astype(float),
        )

    def transitions(self) -> list[Transition]:
        return [
            Transition(self.states[i].copy(), int(self.actions[i]), float(self.rewards[i]), self.next_states[i].copy())
            for i in range(len(self))
        ]

    def window(self, start: int, stop: int) -> "Context":
        return Context(
            self.states[start:stop],
            self.actions[start:stop],
            self.rewards[start:stop],
            self.next_states[start:stop],
        )


@dataclass
class PretrainSample:
    """One supervised example: predict ``action_label`` at ``query_state``
    given ``context``, weighted by ``weight`` in the loss."""

    context: Context
    query_state: np.ndarray
    action_label: int
    weight: float = 1.0
    env_tag: str = ""
    stream_id: int = 0


@dataclass
class DatagenConfig:
    """Knobs for one dataset build.

    ``trust_horizon`` is the probe length N within which random-policy
    returns are trusted to rank actions; ``context_len`` is the context
    size T; ``dit_temperature`` is the softmax temperature applied to
    pseudo-returns when weighting DIT samples; ``ad_episodes`` is the
    number of episodes concatenated into each AD learning history.
    """

    method: str = "sad"
    trust_horizon: int = 1
    context_len: int = 100
    gamma: float = 0.99
    dataset_size: int = 0
    dit_temperature: float = 0.3
    ad_episodes: int = 3

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.dit_temperature <= 0:
            raise ValueError("dit_temperature must be positive")
        if self.dataset_size < 0 or self.context_len < 0:
            raise ValueError("sizes must be non-negative")


@dataclass
class Dataset:
    family: str
    split: str
    method: str
    master_seed: int
    config: DatagenConfig
    env_spec: EnvSpec
    samples: list[PretrainSample] = field(default_factory=list)
    config_hash: str = ""

    def __len__(self) -> int:
        return len(self.samples)


# ---------------------------------------------------------------------------
# Algorithm-level operations
# ---------------------------------------------------------------------------


def collect_context(env: Env, policy: Policy, length: int, rng: RngStream) -> Context:
    """Gather ``length`` transitions: teleport to a uniform state, act once.

    Uniform policies are drawn in vectorized blocks (state xs, state ys,
    actions); the generic path interleaves draws per step.
    """
    state_dim = env.spec.state_dim
    if length == 0:
        return Context.empty(state_dim)
    gen = rng.generator
    if policy.is_uniform and isinstance(env, _BanditEnv):
        actions = gen.integers(env.spec.num_actions, size=length)
        rewards = env.pull_sequence(actions, rng)
        zeros = np.zeros((length, 1))
        return Context(zeros, actions.astype(np.int64), rewards.astype(float), zeros.copy())
    if policy.is_uniform and isinstance(env, _GridEnv):
        p = env.params
        sx = gen.integers(p.width, size=length)
        sy = gen.integers(p.height, size=length)
        actions = gen.integers(env.spec.num_actions, size=length)
        deltas = np.array([(0, -1), (0, 1), (-1, 0), (1, 0), (0, 0)])
        nx = np.clip(sx + deltas[actions, 0], 0, p.width - 1)
        ny = np.clip(sy + deltas[actions, 1], 0, p.height - 1)
        if env.spec.reward_kind == "sparse":
            rewards = ((nx == p.goal[0]) & (ny == p.goal[1])).astype(float)
        else:
            span = p.width + p.height - 2
            rewards = 1.0 - (np.abs(nx - p.goal[0]) + np.abs(ny - p.goal[1])) / span
        return Context(
            np.stack([sx, sy], axis=1).astype(float),
            actions.astype(np.int64),
            rewards,
            np.stack([nx, ny], axis=1).astype(float),
        )
    transitions = []
    for _ in range(length):
        s = env.sample_state_uniform(rng)
        a = policy.sample(s, rng)
        env.reset_to(s)
        r, s2 = env.step(a, rng)
        transitions.append(Transition(s, a, r, s2))
    return Context.from_transitions(transitions, state_dim)


def _probe_step(env: Env, action: int, rng: RngStream) -> tuple[float, np.ndarray]:
    # Distillation rollouts are probes, not episodes: re-arm the clock in
    # place when it would expire (teleport to the current state).
    if isinstance(env, _GridEnv) and env.t >= env.params.horizon:
        env.reset_to(env._state())
    return env.step(action, rng)


def distill_dense(
    env: Env, policy: Policy, trust_horizon: int, gamma: float, rng: RngStream
) -> tuple[np.ndarray, int]:
    """Label a uniform query state by the best (N+1)-reward probe return.

    For each action ``a``, one rollout starts ``(s_0 = s_q, a_0 = a)`` and
    then follows ``policy``; the label is the argmax over actions of
    ``sum_{t=0..N} gamma^t r_t``, ties to the lowest index.
    """
    if env.spec.reward_kind != "dense":
        raise MethodEnvMismatch(f"dense distillation on {env.spec.reward_kind} rewards")
    if not 0 <= trust_horizon <= env.params.horizon:
        raise InvalidTrustHorizon(f"need 0 <= N <= horizon, got N={trust_horizon}")
    s_q = env.sample_state_uniform(rng)
    returns = np.zeros(env.spec.num_actions)
    for a in range(env.spec.num_actions):
        env.reset_to(s_q)
        reward, state = env.step(a, rng)
        total, disc = reward, gamma
        for _ in range(trust_horizon):
            reward, state = _probe_step(env, policy.sample(state, rng), rng)
            total += disc * reward
            disc *= gamma
        returns[a] = total
    return s_q, int(np.argmax(returns))


def _steps_to_reward_grid_uniform(env: _GridEnv, s_q, first_action, cap, rng) -> int:
    # Fast path: pre-draw the follow-up random actions as one block.
    p = env.params
    x, y = int(s_q[0]), int(s_q[1])
    x, y = grid_step(p.width, p.height, x, y, first_action)
    if (x, y) == p.goal:
        return 1
    actions = rng.generator.integers(env.spec.num_actions, size=cap - 1)
    for i in range(cap - 1):
        x, y = grid_step(p.width, p.height, x, y, int(actions[i]))
        if (x, y) == p.goal:
            return i + 2
    return cap


def _steps_to_reward_generic(env: Env, s_q, first_action, cap, policy, rng) -> int:
    env.reset_to(s_q)
    reward, state = env.step(first_action, rng)
    steps = 1
    while reward == 0.0 and steps < cap:
        reward, state = _probe_step(env, policy.sample(state, rng), rng)
        steps += 1
    return steps if reward != 0.0 else cap


def distill_sparse(
    env: Env,
    policy: Policy,
    trust_horizon: int,
    episode_cap: int,
    rng: RngStream,
    max_resamples: int = 1_000_000,
) -> tuple[np.ndarray, int]:
    """Label a query state by the action that reaches a reward fastest.

    Query states are resampled until some action earns a reward in fewer
    than ``trust_horizon`` steps; each probe runs until the first reward or
    ``episode_cap`` steps (recording the cap on failure). Ties break to the
    lowest action index.
    """
    if env.spec.reward_kind != "sparse":
        raise MethodEnvMismatch(f"sparse distillation on {env.spec.reward_kind} rewards")
    if not 2 <= trust_horizon <= episode_cap:
        raise InvalidTrustHorizon(f"need 2 <= N <= episode cap, got N={trust_horizon}, cap={episode_cap}")
    fast = policy.is_uniform and isinstance(env, _GridEnv)
    for _ in range(max_resamples):
        s_q = env.sample_state_uniform(rng)
        steps = np.empty(env.spec.num_actions, dtype=np.int64)
        for a in range(env.spec.num_actions):
            if fast:
                steps[a] = _steps_to_reward_grid_uniform(env, s_q, a, episode_cap, rng)
            else:
                steps[a] = _steps_to_reward_generic(env, s_q, a, episode_cap, policy, rng)
        if steps.min() < trust_horizon:
            return s_q, int(np.argmin(steps))
    raise NonTermination(f"no qualifying query state after {max_resamples} resamples")


def distill_bandit(
    env: _BanditEnv, policy: Policy, trust_horizon: int, rng: RngStream
) -> tuple[np.ndarray, int]:
    """Label the single bandit state with the best empirical arm.

    Pulls arms under ``policy`` until every arm has been selected more than
    ``trust_horizon`` times, then returns the argmax of per-arm average
    reward (ties to the lowest index).
    """
    if trust_horizon < 1:
        raise InvalidTrustHorizon(f"need N >= 1, got N={trust_horizon}")
    num_actions = env.spec.num_actions
    gen = rng.generator
    need = trust_horizon + 1
    arms = np.zeros(0, dtype=np.int64)
    block = max(1024, int(1.3 * num_actions * need))
    while True:
        counts = np.bincount(arms, minlength=num_actions)
        if counts.min() >= need:
            break
        if policy.is_uniform:
            extra = gen.integers(num_actions, size=block)
        else:
            extra = gen.choice(num_actions, size=block, p=policy.probs(np.zeros(1)))
        arms = np.concatenate([arms, extra])
    # Truncate to the exact pull at which the last arm reached need draws.
    stop = max(int(np.flatnonzero(arms == a)[need - 1]) for a in range(num_actions))
    arms = arms[: stop + 1]
    counts = np.bincount(arms, minlength=num_actions)
    averages = np.array(
        [env.sample_rewards(a, int(counts[a]), rng).mean() for a in range(num_actions)]
    )
    return np.zeros(1), int(np.argmax(averages))


def _distill(env: Env, policy: Policy, config: DatagenConfig, rng: RngStream):
    kind = env.spec.reward_kind
    if kind == "bandit":
        return distill_bandit(env, policy, config.trust_horizon, rng)
    if kind == "sparse":
        return distill_sparse(env, policy, config.trust_horizon, config.context_len, rng)
    return distill_dense(env, policy, config.trust_horizon, config.gamma, rng)


def _validate_trust_horizon(family: str, config: DatagenConfig) -> None:
    spec = family_spec(family)
    n = config.trust_horizon
    if spec.reward_kind == "bandit" and n < 1:
        raise InvalidTrustHorizon("bandit distillation needs N >= 1")
    if spec.reward_kind == "sparse" and not 2 <= n <= min(spec.horizon, config.context_len):
        raise InvalidTrustHorizon(
            f"sparse distillation needs 2 <= N <= min(horizon, context_len), got N={n}"
        )
    if spec.reward_kind == "dense" and not 0 <= n <= spec.horizon:
        raise InvalidTrustHorizon(f"dense distillation needs 0 <= N <= horizon, got N={n}")


def build_dataset(
    family: str,
    split: str,
    config: DatagenConfig,
    master_seed: int,
    policy: Policy | None = None,
    threads: int = 1,
) -> Dataset:
    """Generate a distilled dataset: sample i owns stream (master_seed, i).

    Each sample draws a fresh task from the split, a context, and a
    distilled (query, label) pair, so output is identical for any thread
    count.
    """
    if config.method != "sad":
        return build_baseline_dataset(config.method, family, split, config, master_seed, policy, threads)
    spec = family_spec(family)
    _validate_trust_horizon(family, config)
    policy = policy or Policy.uniform(spec.num_actions)

    def make(i: int) -> PretrainSample:
        rng = RngStream(master_seed, i)
        env = sample_env(family, split, rng)
        context = collect_context(env, policy, config.context_len, rng)
        s_q, label = _distill(env, policy, config, rng)
        return PretrainSample(context, s_q, label, 1.0, env.tag(), i)

    samples = _run_indexed(make, config.dataset_size, threads)
    return Dataset(family, split, "sad", master_seed, config, spec, samples)


def _run_indexed(fn, count: int, threads: int) -> list:
    if threads <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(count)))


# ---------------------------------------------------------------------------
# Baseline generators (AD / DPT-random / DIT)
# ---------------------------------------------------------------------------


def _run_episode(env: Env, policy: Policy, length: int, rng: RngStream) -> Context:
    """One on-policy episode of ``length`` steps (bandits: a block of pulls)."""
    if isinstance(env, _BanditEnv):
        if policy.is_uniform:
            actions = rng.generator.integers(env.spec.num_actions, size=length)
        else:
            actions = rng.generator.choice(
                env.spec.num_actions, size=length, p=policy.probs(np.zeros(1))
            )
        rewards = env.pull_sequence(actions.astype(np.int64), rng)
        zeros = np.zeros((length, 1))
        return Context(zeros, actions.astype(np.int64), rewards.astype(float), zeros.copy())
    state = env.reset(rng)
    transitions = []
    for _ in range(length):
        a = policy.sample(state, rng)
        r, nxt = env.step(a, rng)
        transitions.append(Transition(state, a, r, nxt))
        state = nxt
    return Context.from_transitions(transitions, env.spec.state_dim)


def _episode_length(spec: EnvSpec, config: DatagenConfig) -> int:
    # Bandit episodes carry no temporal structure; use a context-sized block.
    if spec.reward_kind == "bandit":
        return config.context_len
    return spec.horizon


def _ad_task_samples(env: Env, policy: Policy, config: DatagenConfig, rng: RngStream, sid: int):
    """Cross-episodic imitation: query = visited state, label = taken action."""
    length = _episode_length(env.spec, config)
    episodes = [_run_episode(env, policy, length, rng) for _ in range(config.ad_episodes)]
    history = Context(
        np.concatenate([e.states for e in episodes]),
        np.concatenate([e.actions for e in episodes]),
        np.concatenate([e.rewards for e in episodes]),
        np.concatenate([e.next_states for e in episodes]),
    )
    tag = env.tag()
    out = []
    for t in range(len(history)):
        ctx = history.window(max(0, t - config.context_len), t)
        out.append(PretrainSample(ctx, history.states[t].copy(), int(history.actions[t]), 1.0, tag, sid))
    return out


def pseudo_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Reward-to-go from each step: R_t = sum_{t'>=t} gamma^(t'-t) r_t'."""
    out = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def dit_weights(rewards: np.ndarray, gamma: float, temperature: float) -> np.ndarray:
    """Per-episode softmax of pseudo-returns; non-negative, sums to 1."""
    r = pseudo_returns(rewards, gamma) / temperature
    r = r - r.max()
    e = np.exp(r)
    return e / e.sum()


def _dit_task_samples(env: Env, policy: Policy, config: DatagenConfig, rng: RngStream, sid: int):
    """Every pair of one episode becomes a sample, weighted by pseudo-return."""
    episode = _run_episode(env, policy, _episode_length(env.spec, config), rng)
    weights = dit_weights(episode.rewards, config.gamma, config.dit_temperature)
    tag = env.tag()
    return [
        PretrainSample(episode, episode.states[t].copy(), int(episode.actions[t]), float(weights[t]), tag, sid)
        for t in range(len(episode))
    ]


def build_baseline_dataset(
    method: str,
    family: str,
    split: str,
    config: DatagenConfig,
    master_seed: int,
    policy: Policy | None = None,
    threads: int = 1,
) -> Dataset:
    """Generate an AD, DPT-random, or DIT dataset under the same policy.

    AD and DIT emit one block of samples per task (stream = task index);
    DPT-random emits one sample per task like the distilled pipeline but
    labels the query with a policy draw.
    """
    if method not in ("ad", "dpt_random", "dit"):
        raise MethodEnvMismatch(f"not a baseline method: {method!r}")
    spec = family_spec(family)
    policy = policy or Policy.uniform(spec.num_actions)

    if method == "dpt_random":

        def make(i: int) -> PretrainSample:
            rng = RngStream(master_seed, i)
            env = sample_env(family, split, rng)
            context = collect_context(env, policy, config.context_len, rng)
            s_q = env.sample_state_uniform(rng)
            label = policy.sample(s_q, rng)
            return PretrainSample(context, s_q, label, 1.0, env.tag(), i)

        samples = _run_indexed(make, config.dataset_size, threads)
        return Dataset(family, split, method, master_seed, config, spec, samples)

    per_task = _ad_task_samples if method == "ad" else _dit_task_samples
    episode_len = _episode_length(spec, config)
    block = config.ad_episodes * episode_len if method == "ad" else episode_len
    n_tasks = -(-config.dataset_size // block) if block else 0

    def make_block(j: int) -> list[PretrainSample]:
        rng = RngStream(master_seed, j)
        env = sample_env(family, split, rng)
        return per_task(env, policy, config, rng, j)

    samples: list[PretrainSample] = []
    for chunk in _run_indexed(make_block, n_tasks, threads):
        samples.extend(chunk)
    return Dataset(family, split, method, master_seed, config, spec, samples[: config.dataset_size])


# ---------------------------------------------------------------------------
# Serialization (one JSON record per line, header first)
# ---------------------------------------------------------------------------


def save_dataset(dataset: Dataset, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "kind": "icrl-dataset",
            "version": 1,
            "family": dataset.family,
            "split": dataset.split,
            "method": dataset.method,
            "master_seed": dataset.master_seed,
            "config": asdict(dataset.config),
            "env_spec": asdict(dataset.env_spec),
            "config_hash": dataset.config_hash,
            "num_samples": len(dataset.samples),
        }
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for s in dataset.samples:
            record = {
                "context": [
                    [
                        [float(v) for v in s.context.states[i]],
                        int(s.context.actions[i]),
                        float(s.context.rewards[i]),
                        [float(v) for v in s.context.next_states[i]],
                    ]
                    for i in range(len(s.context))
                ],
                "query_state": [float(v) for v in s.query_state],
                "action_label": int(s.action_label),
                "weight": float(s.weight),
                "env_tag": s.env_tag,
                "method": dataset.method,
                "seed": int(s.stream_id),
            }
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")


def load_dataset(path: str) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("kind") != "icrl-dataset":
            raise ValueError(f"{path} is not a dataset file")
        state_dim = header["env_spec"]["state_dim"]
        samples = []
        for line in fh:
            rec = json.loads(line)
            rows = rec["context"]
            if rows:
                context = Context(
                    np.array([r[0] for r in rows], dtype=float),
                    np.array([r[1] for r in rows], dtype=np.int64),
                    np.array([r[2] for r in rows], dtype=float),
                    np.array([r[3] for r in rows], dtype=float),
                )
            else:
                context = Context.empty(state_dim)
            samples.append(
                PretrainSample(
                    context,
                    np.array(rec["query_state"], dtype=float),
                    int(rec["action_label"]),
                    float(rec["weight"]),
                    rec["env_tag"],
                    int(rec["seed"]),
                )
            )
    return Dataset(
        header["family"],
        header["split"],
        header["method"],
        header["master_seed"],
        DatagenConfig(**header["config"]),
        EnvSpec(**header["env_spec"]),
        samples,
        header.get("config_hash", ""),
    )
