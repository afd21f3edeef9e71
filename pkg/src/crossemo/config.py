"""Run configuration files: YAML with strict validation.

Unknown keys are rejected and every referenced dataset path must exist when
the file is parsed, so typos fail before any training starts.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import yaml

from .errors import ConfigError
from .losses import ObjectiveConfig
from .model import ModelConfig
from .postprocess import DEFAULT_FILTER_WINDOWS, DEFAULT_SHIFT_DELAYS
from .training import SweepGrid, TrainConfig

_TOP_KEYS = {"task", "target_modality", "output_dir", "data", "model", "objective", "training", "sweep", "postprocess", "figures"}
_DATA_KEYS = {"frame_rate_hz", "audio", "video", "n_classes"}
_PARTITION_KEYS = {"train", "dev", "test"}
_MODEL_KEYS = {"encoder_layers", "shared_layers", "shared_layer_type"}
_OBJECTIVE_KEYS = {"alpha", "beta", "weight_decay", "dimension", "triplet_threshold", "triplet_margin", "regression_loss"}
_TRAINING_KEYS = {"learning_rate", "batch_size", "max_epochs", "steps_per_epoch", "window_frames", "seed", "delay_seconds", "max_sample_retries"}
_SWEEP_KEYS = {"alpha", "beta", "selection_metric"}
_POST_KEYS = {"filter_windows_seconds", "shift_delays_seconds"}


@dataclass
class RunConfig:
    task: str
    target_modality: str
    output_dir: str
    frame_rate_hz: float
    data_paths: dict  # modality -> partition -> path
    n_classes: int | None
    model: ModelConfig
    objective: ObjectiveConfig
    training: TrainConfig
    sweep: SweepGrid | None
    filter_windows: tuple[float, ...]
    shift_delays: tuple[float, ...]
    figures: bool


def _require_mapping(node, name: str, allowed: set[str]) -> dict:
    if not isinstance(node, dict):
        raise ConfigError(f"{name} must be a mapping")
    unknown = set(node) - allowed
    if unknown:
        raise ConfigError(f"unknown keys under {name}: {sorted(unknown)}")
    return node


def _check_path(path: str, name: str, base_dir: str) -> str:
    resolved = path if os.path.isabs(path) else os.path.join(base_dir, path)
    if not os.path.exists(resolved):
        raise ConfigError(f"{name}: path does not exist: {resolved}")
    return resolved


def load_run_config(path, seed_override: int | None = None, out_override: str | None = None) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file does not exist: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    base_dir = os.path.dirname(os.path.abspath(path))
    raw = _require_mapping(raw, "config", _TOP_KEYS)

    task = raw.get("task", "regression")
    if task not in ("regression", "classification"):
        raise ConfigError(f"task must be regression or classification, got {task!r}")
    target = raw.get("target_modality", "audio")
    if target not in ("audio", "video"):
        raise ConfigError(f"target_modality must be audio or video, got {target!r}")

    data = _require_mapping(raw.get("data") or {}, "data", _DATA_KEYS)
    if "frame_rate_hz" not in data:
        raise ConfigError("data.frame_rate_hz is required")
    frame_rate = float(data["frame_rate_hz"])
    n_classes = data.get("n_classes")
    if task == "classification" and (n_classes is None or int(n_classes) < 2):
        raise ConfigError("classification requires data.n_classes >= 2")
    data_paths: dict[str, dict[str, str]] = {}
    for modality in ("audio", "video"):
        if modality not in data:
            continue
        parts = _require_mapping(data[modality], f"data.{modality}", _PARTITION_KEYS)
        data_paths[modality] = {
            part: _check_path(str(p), f"data.{modality}.{part}", base_dir) for part, p in parts.items()
        }
    if target not in data_paths:
        raise ConfigError(f"no dataset paths for target modality {target!r}")

    model_raw = _require_mapping(raw.get("model") or {}, "model", _MODEL_KEYS)
    model_cfg = ModelConfig(
        encoder_layers=tuple(model_raw.get("encoder_layers", (120, 120))),
        shared_layers=tuple(model_raw.get("shared_layers", (120, 120))),
        shared_layer_type=model_raw.get("shared_layer_type", "gru"),
    )

    obj_raw = _require_mapping(raw.get("objective") or {}, "objective", _OBJECTIVE_KEYS)
    margin = obj_raw.get("triplet_margin")
    objective = ObjectiveConfig(
        target_modality=target,
        alpha=float(obj_raw.get("alpha", 0.0)),
        beta=float(obj_raw.get("beta", 0.0)),
        weight_decay=float(obj_raw.get("weight_decay", 1e-4)),
        task=task,
        dimension=obj_raw.get("dimension"),
        n_classes=int(n_classes) if n_classes is not None else None,
        triplet_threshold=float(obj_raw.get("triplet_threshold", 0.0)),
        triplet_margin=None if margin is None else float(margin),
        regression_loss=obj_raw.get("regression_loss", "ccc"),
    )

    train_raw = _require_mapping(raw.get("training") or {}, "training", _TRAINING_KEYS)
    seed = int(train_raw.get("seed", 1))
    if seed_override is not None:
        seed = seed_override
    steps = train_raw.get("steps_per_epoch")
    training = TrainConfig(
        objective=objective,
        learning_rate=float(train_raw.get("learning_rate", 1e-3)),
        batch_size=int(train_raw.get("batch_size", 4)),
        max_epochs=int(train_raw.get("max_epochs", 10)),
        steps_per_epoch=None if steps is None else int(steps),
        window_frames=int(train_raw.get("window_frames", 200)),
        seed=seed,
        delay_seconds=float(train_raw.get("delay_seconds", 2.4)),
        frame_rate_hz=frame_rate,
        max_sample_retries=int(train_raw.get("max_sample_retries", 100)),
    )

    grid = None
    if raw.get("sweep") is not None:
        sweep_raw = _require_mapping(raw["sweep"], "sweep", _SWEEP_KEYS)
        if "alpha" not in sweep_raw or "beta" not in sweep_raw:
            raise ConfigError("sweep requires alpha and beta value lists")
        grid = SweepGrid(
            alpha_values=tuple(float(v) for v in sweep_raw["alpha"]),
            beta_values=tuple(float(v) for v in sweep_raw["beta"]),
            selection_metric=sweep_raw.get("selection_metric", "auto"),
        )

    post_raw = _require_mapping(raw.get("postprocess") or {}, "postprocess", _POST_KEYS)
    filter_windows = tuple(float(v) for v in post_raw.get("filter_windows_seconds", DEFAULT_FILTER_WINDOWS))
    shift_delays = tuple(float(v) for v in post_raw.get("shift_delays_seconds", DEFAULT_SHIFT_DELAYS))

    output_dir = out_override or raw.get("output_dir")
    if not output_dir:
        raise ConfigError("output_dir is required (or pass --out)")
    if not os.path.isabs(output_dir):
        output_dir = os.path.join(base_dir, output_dir)

    return RunConfig(
        task=task,
        target_modality=target,
        output_dir=output_dir,
        frame_rate_hz=frame_rate,
        data_paths=data_paths,
        n_classes=int(n_classes) if n_classes is not None else None,
        model=model_cfg,
        objective=objective,
        training=training,
        sweep=grid,
        filter_windows=filter_windows,
        shift_delays=shift_delays,
        figures=bool(raw.get("figures", True)),
    )


def snapshot_config(cfg: RunConfig, path) -> None:
    """Write the resolved configuration back out for reproducibility."""
    doc = {
        "task": cfg.task,
        "target_modality": cfg.target_modality,
        "output_dir": cfg.output_dir,
        "data": {
            "frame_rate_hz": cfg.frame_rate_hz,
            "n_classes": cfg.n_classes,
            **{m: dict(parts) for m, parts in cfg.data_paths.items()},
        },
        "model": {
            "encoder_layers": list(cfg.model.encoder_layers),
            "shared_layers": list(cfg.model.shared_layers),
            "shared_layer_type": cfg.model.shared_layer_type,
        },
        "objective": {
            "alpha": cfg.objective.alpha,
            "beta": cfg.objective.beta,
            "weight_decay": cfg.objective.weight_decay,
            "dimension": cfg.objective.dimension,
            "triplet_threshold": cfg.objective.triplet_threshold,
            "triplet_margin": cfg.objective.triplet_margin,
            "regression_loss": cfg.objective.regression_loss,
        },
        "training": {
            "learning_rate": cfg.training.learning_rate,
            "batch_size": cfg.training.batch_size,
            "max_epochs": cfg.training.max_epochs,
            "steps_per_epoch": cfg.training.steps_per_epoch,
            "window_frames": cfg.training.window_frames,
            "seed": cfg.training.seed,
            "delay_seconds": cfg.training.delay_seconds,
        },
        "sweep": None
        if cfg.sweep is None
        else {
            "alpha": list(cfg.sweep.alpha_values),
            "beta": list(cfg.sweep.beta_values),
            "selection_metric": cfg.sweep.selection_metric,
        },
        "postprocess": {
            "filter_windows_seconds": list(cfg.filter_windows),
            "shift_delays_seconds": list(cfg.shift_delays),
        },
        "figures": cfg.figures,
    }
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=True)
