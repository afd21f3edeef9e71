"""Model assembly: modality encoders, shared prediction head, checkpoints.

A model maps a raw feature sequence through per-modality standardisation and
a stack of recurrent layers into a shared embedding space; a head (recurrent
layers plus a final affine projection) turns embeddings into per-frame
regression values or per-utterance class probabilities.  Both modalities use
the same head, which is what lets an auxiliary modality be dropped after
training without touching target-modality inference.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, UsageError
from .layers import DenseLayer, GruLayer
from .numkit import SeededRng

CHECKPOINT_VERSION = 1

REGRESSION = "regression"
CLASSIFICATION = "classification"
MODALITIES = ("audio", "video")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture knobs: hidden sizes for encoder and shared stacks.

    The last encoder size is the shared embedding width.  ``shared_layer_type``
    selects recurrent ("gru") or frame-wise affine ("dense") shared layers;
    recurrent is the default.
    """

    encoder_layers: tuple[int, ...] = (120, 120)
    shared_layers: tuple[int, ...] = (120, 120)
    shared_layer_type: str = "gru"

    def __post_init__(self):
        if not self.encoder_layers:
            raise UsageError("encoder_layers must contain at least one layer")
        if any(h < 1 for h in self.encoder_layers) or any(h < 1 for h in self.shared_layers):
            raise UsageError("layer sizes must be positive")
        if self.shared_layer_type not in ("gru", "dense"):
            raise UsageError(f"unknown shared_layer_type {self.shared_layer_type!r}")

    @property
    def embedding_dim(self) -> int:
        return self.encoder_layers[-1]


@dataclass
class Standardization:
    """Per-dimension mean/variance fitted on the training partition."""

    mean: np.ndarray
    var: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / np.sqrt(self.var)


@dataclass
class TrainedModel:
    task: str
    target_modality: str
    config: ModelConfig
    input_dims: dict[str, int]
    n_outputs: int
    encoders: dict[str, list[GruLayer]]
    shared: list
    head: DenseLayer
    standardization: dict[str, Standardization] = field(default_factory=dict)

    @property
    def embedding_dim(self) -> int:
        return self.config.embedding_dim

    def modalities(self) -> tuple[str, ...]:
        return tuple(self.encoders.keys())

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        """All trainable arrays in a fixed, documented order."""
        out = []
        for modality in sorted(self.encoders):
            for i, layer in enumerate(self.encoders[modality]):
                out.extend((f"encoder.{modality}.{i}.{n}", p) for n, p in layer.params())
        for i, layer in enumerate(self.shared):
            out.extend((f"shared.{i}.{n}", p) for n, p in layer.params())
        out.extend((f"head.{n}", p) for n, p in self.head.params())
        return out

    def gradients(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for modality in sorted(self.encoders):
            for i, layer in enumerate(self.encoders[modality]):
                out.extend((f"encoder.{modality}.{i}.{n}", g) for n, g in layer.grads())
        for i, layer in enumerate(self.shared):
            out.extend((f"shared.{i}.{n}", g) for n, g in layer.grads())
        out.extend((f"head.{n}", g) for n, g in self.head.grads())
        return out

    def zero_grads(self) -> None:
        for layers in self.encoders.values():
            for layer in layers:
                layer.zero_grads()
        for layer in self.shared:
            layer.zero_grads()
        self.head.zero_grads()


def build_model(
    task: str,
    target_modality: str,
    input_dims: dict[str, int],
    config: ModelConfig,
    rng: SeededRng,
    n_classes: int | None = None,
) -> TrainedModel:
    """Construct a model with deterministic, seed-derived initialisation.

    Each component draws from its own derived stream, so e.g. the audio
    encoder's initial weights do not depend on whether a video encoder is
    built alongside it.
    """
    if task not in (REGRESSION, CLASSIFICATION):
        raise UsageError(f"unknown task {task!r}")
    if task == CLASSIFICATION:
        if n_classes is None or n_classes < 2:
            raise UsageError("classification requires n_classes >= 2")
        n_outputs = n_classes
    else:
        n_outputs = 1
    if target_modality not in input_dims:
        raise UsageError(f"target modality {target_modality!r} has no input dim")
    for modality in input_dims:
        if modality not in MODALITIES:
            raise UsageError(f"unknown modality tag {modality!r}")

    encoders: dict[str, list[GruLayer]] = {}
    for modality in sorted(input_dims):
        stream = rng.derive(f"init.encoder.{modality}")
        layers: list[GruLayer] = []
        prev = input_dims[modality]
        for hidden in config.encoder_layers:
            layers.append(GruLayer(prev, hidden, stream))
            prev = hidden
        encoders[modality] = layers

    shared: list = []
    stream = rng.derive("init.shared")
    prev = config.embedding_dim
    for hidden in config.shared_layers:
        if config.shared_layer_type == "gru":
            shared.append(GruLayer(prev, hidden, stream))
        else:
            shared.append(DenseLayer(prev, hidden, stream))
        prev = hidden
    head = DenseLayer(prev, n_outputs, rng.derive("init.head"))

    return TrainedModel(
        task=task,
        target_modality=target_modality,
        config=config,
        input_dims=dict(input_dims),
        n_outputs=n_outputs,
        encoders=encoders,
        shared=shared,
        head=head,
    )


def drop_auxiliary(model: TrainedModel) -> TrainedModel:
    """Copy of the model with every non-target encoder removed."""
    slim = copy.deepcopy(model)
    for modality in list(slim.encoders):
        if modality != slim.target_modality:
            del slim.encoders[modality]
            slim.standardization.pop(modality, None)
            slim.input_dims.pop(modality, None)
    return slim


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def _check_sequences(model: TrainedModel, modality: str, x: np.ndarray) -> None:
    if modality not in model.encoders:
        raise UsageError(f"model has no {modality!r} encoder")
    if modality not in model.standardization:
        raise UsageError(f"no standardization stats for modality {modality!r}")
    if x.shape[-1] != model.input_dims[modality]:
        raise ShapeError(
            f"{modality} input width {x.shape[-1]} != expected {model.input_dims[modality]}"
        )


def encoder_forward(model: TrainedModel, modality: str, x: np.ndarray):
    """Standardise and encode batched sequences ``[B, T, d]`` -> ``[B, T, E]``.

    Returns ``(embeddings, caches)``; the caches feed :func:`encoder_backward`.
    """
    _check_sequences(model, modality, x)
    h = model.standardization[modality].apply(np.asarray(x, dtype=np.float64))
    caches = []
    for layer in model.encoders[modality]:
        h, cache = layer.forward(h)
        caches.append(cache)
    return h, caches


def encoder_backward(model: TrainedModel, modality: str, grad_emb: np.ndarray, caches) -> None:
    g = grad_emb
    for layer, cache in zip(reversed(model.encoders[modality]), reversed(caches)):
        g = layer.backward(g, cache)


def head_forward(model: TrainedModel, embeddings: np.ndarray):
    """Shared head over batched embeddings ``[B, T, E]``.

    Regression: per-frame predictions ``[B, T]``.  Classification: embeddings
    are mean-pooled over frames before the head, yielding logits ``[B, C]``.
    Returns ``(output, cache)``.
    """
    if embeddings.shape[-1] != model.embedding_dim:
        raise ShapeError(
            f"embedding width {embeddings.shape[-1]} != model width {model.embedding_dim}"
        )
    pooled_T = None
    h = embeddings
    if model.task == CLASSIFICATION:
        pooled_T = h.shape[1]
        h = h.mean(axis=1, keepdims=True)
    caches = []
    for layer in model.shared:
        h, cache = layer.forward(h)
        caches.append(cache)
    out, head_cache = model.head.forward(h)
    if model.task == REGRESSION:
        result = out[:, :, 0]
    else:
        result = out[:, 0, :]
    return result, (caches, head_cache, pooled_T, embeddings.shape)


def head_backward(model: TrainedModel, grad_out: np.ndarray, cache) -> np.ndarray:
    """Gradient of the head output back to the embeddings ``[B, T, E]``."""
    caches, head_cache, pooled_T, emb_shape = cache
    if model.task == REGRESSION:
        g = grad_out[:, :, np.newaxis]
    else:
        g = grad_out[:, np.newaxis, :]
    g = model.head.backward(g, head_cache)
    for layer, layer_cache in zip(reversed(model.shared), reversed(caches)):
        g = layer.backward(g, layer_cache)
    if pooled_T is not None:
        g = np.repeat(g / pooled_T, pooled_T, axis=1)
    if g.shape != emb_shape:
        raise ShapeError("head backward produced mismatched embedding gradient")
    return g


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# inference (canonical single-sequence path)
# ---------------------------------------------------------------------------


def encode(model: TrainedModel, modality: str, sequence: np.ndarray) -> np.ndarray:
    """Per-frame embeddings ``[T, E]`` for one raw sequence ``[T, d]``."""
    seq = np.asarray(sequence, dtype=np.float64)
    if seq.ndim != 2:
        raise ShapeError(f"sequence must be 2-D, got shape {seq.shape}")
    emb, _ = encoder_forward(model, modality, seq[np.newaxis])
    return emb[0]


def predict(model: TrainedModel, embeddings: np.ndarray, task: str | None = None) -> np.ndarray:
    """Predictions from embeddings ``[T, E]``.

    Regression: one value per frame.  Classification: a C-dim probability
    vector for the whole sequence (softmax over pooled-head logits).
    """
    task = model.task if task is None else task
    if task != model.task:
        raise UsageError(f"model head is {model.task!r}, requested {task!r}")
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2:
        raise ShapeError(f"embeddings must be 2-D, got shape {emb.shape}")
    out, _ = head_forward(model, emb[np.newaxis])
    if task == REGRESSION:
        return out[0]
    return softmax(out[0])


def infer_sequence(model: TrainedModel, modality: str, sequence: np.ndarray) -> np.ndarray:
    """Encode then predict; the single inference path used everywhere."""
    return predict(model, encode(model, modality, sequence))


# ---------------------------------------------------------------------------
# checkpoint io
# ---------------------------------------------------------------------------


def save_checkpoint(model: TrainedModel, path, extra_meta: dict | None = None) -> None:
    """Write a versioned .npz checkpoint; round-trips bit-exactly."""
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "task": model.task,
        "target_modality": model.target_modality,
        "input_dims": model.input_dims,
        "n_outputs": model.n_outputs,
        "encoder_layers": list(model.config.encoder_layers),
        "shared_layers": list(model.config.shared_layers),
        "shared_layer_type": model.config.shared_layer_type,
        "modalities": sorted(model.encoders),
        "extra": extra_meta or {},
    }
    arrays: dict[str, np.ndarray] = {}
    for name, p in model.parameters():
        arrays[name] = p
    for modality, stats in model.standardization.items():
        arrays[f"std.{modality}.mean"] = stats.mean
        arrays[f"std.{modality}.var"] = stats.var
    arrays["__meta__"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[TrainedModel, dict]:
    """Load a checkpoint; returns ``(model, extra_meta)``."""
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    meta = json.loads(bytes(arrays.pop("__meta__")).decode("utf-8"))
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise UsageError(f"unsupported checkpoint version {meta.get('format_version')!r}")
    config = ModelConfig(
        encoder_layers=tuple(meta["encoder_layers"]),
        shared_layers=tuple(meta["shared_layers"]),
        shared_layer_type=meta["shared_layer_type"],
    )
    input_dims = {m: int(d) for m, d in meta["input_dims"].items()}
    model = build_model(
        task=meta["task"],
        target_modality=meta["target_modality"],
        input_dims=input_dims,
        config=config,
        rng=SeededRng(0),
        n_classes=meta["n_outputs"] if meta["task"] == CLASSIFICATION else None,
    )
    for name, p in model.parameters():
        p[...] = arrays[name]
    for modality in meta["modalities"]:
        model.standardization[modality] = Standardization(
            mean=arrays[f"std.{modality}.mean"], var=arrays[f"std.{modality}.var"]
        )
    return model, meta.get("extra", {})
