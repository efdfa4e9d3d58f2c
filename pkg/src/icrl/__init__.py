"""In-context reinforcement learning workbench.

Generates pretraining datasets for in-context RL under uniform random
policies (state-action distillation plus AD/DPT/DIT-style baselines),
pretrains a small causal transformer on them with a self-contained numpy
autodiff engine, and evaluates the frozen model offline and online on
fresh test tasks with oracle verification of label quality.
"""

from .datagen import (
    Context,
    DatagenConfig,
    Dataset,
    PretrainSample,
    build_baseline_dataset,
    build_dataset,
    collect_context,
    distill_bandit,
    distill_dense,
    distill_sparse,
    load_dataset,
    save_dataset,
)
from .envs import EnvSpec, Policy, Transition, env_from_tag, family_spec, goal_split, sample_env
from .evaluation import EvalConfig, MetricSeries, RandomModel, eval_offline, eval_online
from .model import ModelConfig, TransformerPolicy, load_checkpoint, save_checkpoint
from .oracles import (
    OracleReport,
    assumption_check,
    grid_optimal_actions,
    label_accuracy,
    optimal_arm,
    value_iteration_actions,
)
from .rng import RngStream
from .trainer import TrainConfig, TrainReport, evaluate_loss, train

__version__ = "0.1.0"
