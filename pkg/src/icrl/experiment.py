"""Experiment orchestration: config documents, hashing, pipeline steps.

A config is one JSON document with nested sections (``datagen``, ``model``,
``train``, ``eval``); unknown keys anywhere are errors. Every artifact a
pipeline step writes embeds the sha256 hash of its generating config, and
reruns on the reference path reproduce artifacts byte for byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

from .datagen import DatagenConfig, METHODS, build_dataset, load_dataset, save_dataset
from .envs import family_spec
from .errors import ConfigInvalid, MissingArtifact
from .evaluation import EvalConfig, MetricSeries, eval_offline, eval_online, load_metrics_csv, save_metrics_csv
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, save_report_csv, train

__all__ = [
    "ModelOptions",
    "ExperimentConfig",
    "load_config",
    "config_hash",
    "run_generate",
    "run_train",
    "run_eval",
    "run_ablate",
    "run_compare",
    "improvement_percent",
]

ABLATION_AXES = ("trust_horizon", "n_heads", "n_layers")


@dataclass
class ModelOptions:
    """Architecture knobs exposed in config files; the full ModelConfig is
    derived from these plus the environment family."""

    n_layers: int = 3
    n_heads: int = 3
    d_embed: int = 32
    max_context: int | None = None  # None: the datagen context length
    dtype: str = "float32"


@dataclass
class ExperimentConfig:
    family: str
    method: str
    master_seed: int = 0
    output_dir: str = "out"
    datagen: DatagenConfig = field(default_factory=DatagenConfig)
    model: ModelOptions = field(default_factory=ModelOptions)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        family_spec(self.family)
        if self.method != self.datagen.method:
            self.datagen = dataclasses.replace(self.datagen, method=self.method)
        if self.max_context < self.datagen.context_len:
            raise ConfigInvalid(
                f"max_context {self.max_context} < context_len {self.datagen.context_len}"
            )

    @property
    def max_context(self) -> int:
        return self.model.max_context or self.datagen.context_len

    def model_config(self) -> ModelConfig:
        return ModelConfig.for_family(
            self.family,
            self.max_context,
            n_layers=self.model.n_layers,
            n_heads=self.model.n_heads,
            d_embed=self.model.d_embed,
            dtype=self.model.dtype,
        )

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "method": self.method,
            "master_seed": self.master_seed,
            "output_dir": self.output_dir,
            "datagen": dataclasses.asdict(self.datagen),
            "model": dataclasses.asdict(self.model),
            "train": dataclasses.asdict(self.train),
            "eval": dataclasses.asdict(self.eval),
        }


def _build_section(cls, mapping: dict, where: str):
    if not isinstance(mapping, dict):
        raise ConfigInvalid(f"{where} must be a mapping")
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigInvalid(f"unknown keys in {where}: {sorted(unknown)}")
    fixed = dict(mapping)
    if cls is EvalConfig and "horizons" in fixed:
        fixed["horizons"] = tuple(fixed["horizons"])
    try:
        return cls(**fixed)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"bad values in {where}: {exc}") from exc


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigInvalid("config document must be a JSON object")
    top_allowed = {"family", "method", "master_seed", "output_dir", "datagen", "model", "train", "eval"}
    unknown = set(doc) - top_allowed
    if unknown:
        raise ConfigInvalid(f"unknown top-level keys: {sorted(unknown)}")
    for required in ("family", "method"):
        if required not in doc:
            raise ConfigInvalid(f"missing required key {required!r}")
    method = str(doc["method"]).lower()
    if method not in METHODS:
        raise ConfigInvalid(f"method must be one of {METHODS}, got {doc['method']!r}")
    try:
        return ExperimentConfig(
            family=doc["family"],
            method=method,
            master_seed=int(doc.get("master_seed", 0)),
            output_dir=str(doc.get("output_dir", "out")),
            datagen=_build_section(DatagenConfig, {**doc.get("datagen", {}), "method": method}, "datagen"),
            model=_build_section(ModelOptions, doc.get("model", {}), "model"),
            train=_build_section(TrainConfig, doc.get("train", {}), "train"),
            eval=_build_section(EvalConfig, doc.get("eval", {}), "eval"),
        )
    except ConfigInvalid:
        raise
    except Exception as exc:
        raise ConfigInvalid(str(exc)) from exc


def load_config(path: str) -> ExperimentConfig:
    if not os.path.exists(path):
        raise MissingArtifact(f"config file {path} does not exist")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(doc)


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Pipeline steps
# ---------------------------------------------------------------------------


def _out(config: ExperimentConfig, name: str) -> str:
    os.makedirs(config.output_dir, exist_ok=True)
    return os.path.join(config.output_dir, name)


def dataset_path(config: ExperimentConfig) -> str:
    return os.path.join(config.output_dir, "dataset.jsonl")


def checkpoint_path(config: ExperimentConfig) -> str:
    return os.path.join(config.output_dir, "checkpoint.bin")


def metrics_path(config: ExperimentConfig, mode: str) -> str:
    return os.path.join(config.output_dir, f"metrics_{mode}.csv")


def run_generate(config: ExperimentConfig, threads: int = 1) -> str:
    """Build the pretraining set for the config's method and write it."""
    dataset = build_dataset(config.family, "train", config.datagen, config.master_seed, threads=threads)
    dataset.config_hash = config_hash(config)
    path = _out(config, "dataset.jsonl")
    save_dataset(dataset, path)
    return path


def run_train(config: ExperimentConfig, data_path: str | None = None) -> str:
    """Train on the generated dataset and write checkpoint + loss curve."""
    data_path = data_path or dataset_path(config)
    if not os.path.exists(data_path):
        raise MissingArtifact(f"dataset {data_path} does not exist (run generate first)")
    dataset = load_dataset(data_path)
    model, report = train(dataset, config.model_config(), config.train)
    path = _out(config, "checkpoint.bin")
    save_checkpoint(
        model,
        path,
        metadata={
            "config_hash": config_hash(config),
            "method": config.method,
            "family": config.family,
            "epoch_losses": report.epoch_losses,
            "params_checksum": report.params_checksum,
        },
    )
    save_report_csv(report, _out(config, "train_report.csv"), config_hash(config))
    return path


def run_eval(config: ExperimentConfig, mode: str, ckpt_path: str | None = None, plot: bool = True) -> str:
    """Evaluate a checkpoint offline or online; write CSV (and a PNG)."""
    if mode not in ("offline", "online"):
        raise ConfigInvalid(f"eval mode must be offline or online, got {mode!r}")
    ckpt_path = ckpt_path or checkpoint_path(config)
    if not os.path.exists(ckpt_path):
        raise MissingArtifact(f"checkpoint {ckpt_path} does not exist (run train first)")
    model, _ = load_checkpoint(ckpt_path)
    fn = eval_offline if mode == "offline" else eval_online
    series = fn(model, config.family, config.eval, config.master_seed, method=config.method)
    path = _out(config, f"metrics_{mode}.csv")
    save_metrics_csv([series], path, config_hash(config))
    if plot:
        from .plotting import plot_series

        plot_series([series], _out(config, f"metrics_{mode}.png"), title=f"{config.family} ({mode})")
    return path


def ablation_variant(config: ExperimentConfig, axis: str, value: int) -> ExperimentConfig:
    if axis not in ABLATION_AXES:
        raise ConfigInvalid(f"ablation axis must be one of {ABLATION_AXES}, got {axis!r}")
    doc = config.to_dict()
    doc["output_dir"] = os.path.join(config.output_dir, f"ablate_{axis}_{value}")
    if axis == "trust_horizon":
        doc["datagen"]["trust_horizon"] = value
    else:
        doc["model"][axis] = value
    return config_from_dict(doc)


def run_ablate(config: ExperimentConfig, axis: str, values: list[int], threads: int = 1, modes=("offline", "online")) -> str:
    """Full pipeline per axis value; stack the resulting curves in one CSV."""
    stacked: list[MetricSeries] = []
    for value in values:
        variant = ablation_variant(config, axis, value)
        run_generate(variant, threads=threads)
        run_train(variant)
        for mode in modes:
            run_eval(variant, mode, plot=False)
            for series in load_metrics_csv(metrics_path(variant, mode)):
                series.method = f"{axis}={value}"
                stacked.append(series)
    path = _out(config, f"ablate_{axis}.csv")
    save_metrics_csv(stacked, path, config_hash(config))
    from .plotting import plot_series

    for mode_kinds in (("suboptimality_vs_horizon", "return_vs_horizon"), ("cumulative_regret_vs_step", "return_vs_episode")):
        subset = [s for s in stacked if s.kind in mode_kinds]
        if subset:
            plot_series(subset, _out(config, f"ablate_{axis}_{subset[0].kind}.png"), title=f"{config.family} {axis} ablation")
    return path


def improvement_percent(kind: str, reference: float, baseline: float) -> float:
    """Relative improvement of the reference method over a baseline.

    Lower-is-better metrics (suboptimality, cumulative regret) use
    ``(baseline - reference) / reference``; returns use
    ``(reference - baseline) / baseline``. Expressed in percent.
    """
    if kind in ("suboptimality_vs_horizon", "cumulative_regret_vs_step"):
        if reference == 0:
            raise ValueError("reference suboptimality/regret is zero; improvement undefined")
        return 100.0 * (baseline - reference) / reference
    if baseline == 0:
        raise ValueError("baseline return is zero; improvement undefined")
    return 100.0 * (reference - baseline) / baseline


def _final_value(path: str) -> tuple[str, float]:
    if not os.path.exists(path):
        raise MissingArtifact(f"metrics file {path} does not exist (run eval first)")
    series = load_metrics_csv(path)[0]
    return series.kind, float(series.mean[-1])


def run_compare(configs: list[ExperimentConfig], out_path: str | None = None) -> str:
    """Improvement table of the first config's method over the others.

    Reads each config's offline and online metric CSVs; the scalar per
    curve is its value at the final x (longest context / last step or
    episode).
    """
    if len(configs) < 2:
        raise ConfigInvalid("compare needs at least two configs")
    reference = configs[0]
    rows = []
    for mode in ("offline", "online"):
        ref_kind, ref_value = _final_value(metrics_path(reference, mode))
        for other in configs[1:]:
            kind, value = _final_value(metrics_path(other, mode))
            if kind != ref_kind:
                raise ConfigInvalid(f"cannot compare metric kinds {ref_kind} and {kind}")
            rows.append(
                {
                    "family": reference.family,
                    "mode": mode,
                    "kind": kind,
                    "reference_method": reference.method,
                    "baseline_method": other.method,
                    "reference_value": ref_value,
                    "baseline_value": value,
                    "improvement_pct": improvement_percent(kind, ref_value, value),
                }
            )
    out_path = out_path or _out(reference, "comparison.csv")
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(f"# config_hash={config_hash(reference)}\n")
        fh.write("family,mode,kind,reference_method,baseline_method,reference_value,baseline_value,improvement_pct\n")
        for r in rows:
            fh.write(
                f"{r['family']},{r['mode']},{r['kind']},{r['reference_method']},{r['baseline_method']},"
                f"{r['reference_value']!r},{r['baseline_value']!r},{r['improvement_pct']!r}\n"
            )
    return out_path
