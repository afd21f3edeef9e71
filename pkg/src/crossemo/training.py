"""Training loop: unpaired crossmodal batches, Adam, best-dev checkpointing.

One ``train`` path serves every configuration.  The auxiliary modality's
computations are gated by the objective weights: with alpha = beta = 0 no
auxiliary encoder is built or sampled and the run is exactly the classic
monomodal system; with beta = 0 only the joint audiovisual loss remains; with
alpha = 0 only the crossmodal triplet term does.  Derived random streams keep
parameter initialisation and each modality's batch sampling independent, so
those reductions hold bit-for-bit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import SequenceDataset, UtteranceDataset
from .errors import (
    ConfigError,
    CrossemoError,
    DegenerateInputError,
    NumericError,
    SamplingError,
    UsageError,
)
from .losses import (
    LossReport,
    ObjectiveConfig,
    compose_objective,
    cross_entropy_from_logits,
    regression_loss_fn,
)
from .metrics import format_float, macro_f1
from .model import (
    ModelConfig,
    Standardization,
    TrainedModel,
    build_model,
    encoder_backward,
    encoder_forward,
    head_backward,
    head_forward,
    infer_sequence,
)
from .numkit import SeededRng
from .triplet import CrossmodalBatch, binarize_classes, triplet_loss_grad

MODALITY_ORDER = ("audio", "video")


@dataclass(frozen=True)
class TrainConfig:
    objective: ObjectiveConfig
    learning_rate: float = 1e-3
    batch_size: int = 4
    max_epochs: int = 10
    steps_per_epoch: int | None = None
    window_frames: int = 200
    seed: int = 1
    delay_seconds: float = 2.4
    frame_rate_hz: float = 25.0
    max_sample_retries: int = 100

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise UsageError("learning_rate must be positive")
        if self.batch_size < 2:
            raise UsageError("batch_size must be >= 2 per modality")
        if self.max_epochs < 1:
            raise UsageError("max_epochs must be >= 1")
        if self.delay_seconds < 0:
            raise UsageError("delay_seconds must be >= 0")
        if self.frame_rate_hz <= 0:
            raise UsageError("frame_rate_hz must be positive")
        if self.window_frames < 2:
            raise UsageError("window_frames must be >= 2")


@dataclass(frozen=True)
class SweepGrid:
    alpha_values: tuple[float, ...]
    beta_values: tuple[float, ...]
    selection_metric: str = "auto"

    def __post_init__(self):
        if not self.alpha_values or not self.beta_values:
            raise UsageError("sweep grids must be non-empty")
        if any(v < 0 for v in self.alpha_values) or any(v < 0 for v in self.beta_values):
            raise UsageError("sweep values must be >= 0")
        if self.selection_metric not in ("auto", "ccc", "f1"):
            raise UsageError(f"unknown selection metric {self.selection_metric!r}")


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------


def compensate_delay(
    features: np.ndarray, gold: np.ndarray, delay_seconds: float, frame_rate_hz: float
):
    """Align features with the later gold values they caused.

    The gold standard is shifted back by round(delay*rate) frames relative to
    the features; both outputs have length T - k.
    """
    features = np.asarray(features, dtype=np.float64)
    gold = np.asarray(gold, dtype=np.float64).ravel()
    if features.shape[0] != gold.shape[0]:
        raise UsageError("feature and gold lengths differ")
    k = int(round(delay_seconds * frame_rate_hz))
    if k < 0:
        raise UsageError("delay must be >= 0")
    if gold.size <= k:
        raise DegenerateInputError(f"delay of {k} frames >= series length {gold.size}")
    if k == 0:
        return features.copy(), gold.copy()
    return features[: -k or None].copy(), gold[k:].copy()


def compensate_dataset(dataset: SequenceDataset, delay_seconds: float) -> SequenceDataset:
    recs = []
    for rec in dataset.recordings:
        feats, gold = compensate_delay(rec.features, rec.gold, delay_seconds, dataset.frame_rate_hz)
        recs.append(type(rec)(id=rec.id, features=feats, gold=gold))
    return SequenceDataset(recs, dataset.frame_rate_hz, dataset.modality, dataset.partition)


VARIANCE_FLOOR = 1e-8


def fit_standardizer(feature_arrays) -> Standardization:
    """Per-dimension mean/variance (population) over all training frames.

    Variances are floored at 1e-8 so constant dimensions standardise to zero
    instead of dividing by zero.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in feature_arrays]
    if not arrays or sum(a.shape[0] for a in arrays) < 2:
        raise UsageError("need at least two frames to fit a standardizer")
    stacked = np.concatenate(arrays, axis=0)
    return Standardization(
        mean=stacked.mean(axis=0), var=np.maximum(stacked.var(axis=0), VARIANCE_FLOOR)
    )


# ---------------------------------------------------------------------------
# mini-batch sampling
# ---------------------------------------------------------------------------


@dataclass
class ModalityBatch:
    features: list[np.ndarray]  # B arrays [T_i, d]
    gold: list[np.ndarray]  # regression: B arrays [T_i]; classification: B scalars
    indices: list[tuple[int, int]]  # (item index, start frame)


class CrossmodalSampler:
    """Draws unpaired per-modality batches from the training partition.

    Regression batches are fixed-length windows sampled uniformly over
    (recording, start); classification batches are uniform utterance draws.
    Each modality consumes its own derived random stream, so adding or
    removing one modality never changes another's draw sequence.  When the
    triplet term is active the combined class composition is validated and
    invalid batches are redrawn (bounded retries).
    """

    def __init__(
        self,
        train_data: dict,
        modalities: tuple[str, ...],
        batch_size: int,
        window_frames: int,
        rng: SeededRng,
        require_valid_classes: bool = False,
        triplet_threshold: float = 0.0,
        max_retries: int = 100,
    ):
        if not modalities:
            raise UsageError("sampler needs at least one modality")
        for m in modalities:
            if m not in train_data:
                raise UsageError(f"no training data for modality {m!r}")
        self.data = {m: train_data[m] for m in modalities}
        self.modalities = tuple(modalities)
        self.batch_size = batch_size
        self.rngs = {m: rng.derive(f"sample.{m}") for m in self.modalities}
        self.require_valid_classes = require_valid_classes
        self.triplet_threshold = triplet_threshold
        self.max_retries = max_retries
        self.windows = {}
        for m in self.modalities:
            ds = self.data[m]
            if isinstance(ds, SequenceDataset):
                shortest = min(r.features.shape[0] for r in ds.recordings)
                if shortest < 2:
                    raise UsageError(f"{m}: recordings too short to sample from")
                self.windows[m] = min(window_frames, shortest)

    def _draw(self, modality: str) -> ModalityBatch:
        ds = self.data[modality]
        rng = self.rngs[modality]
        feats, gold, indices = [], [], []
        if isinstance(ds, SequenceDataset):
            w = self.windows[modality]
            for _ in range(self.batch_size):
                ri = int(rng.integers(0, len(ds.recordings)))
                rec = ds.recordings[ri]
                start = int(rng.integers(0, rec.features.shape[0] - w + 1))
                feats.append(rec.features[start : start + w])
                gold.append(rec.gold[start : start + w])
                indices.append((ri, start))
        else:
            for _ in range(self.batch_size):
                ui = int(rng.integers(0, len(ds.utterances)))
                utt = ds.utterances[ui]
                feats.append(utt.features)
                gold.append(utt.label)
                indices.append((ui, 0))
        return ModalityBatch(features=feats, gold=gold, indices=indices)

    def _classes_of(self, batches: dict[str, ModalityBatch]) -> np.ndarray:
        parts = []
        for m in self.modalities:
            b = batches[m]
            if isinstance(self.data[m], SequenceDataset):
                parts.append(binarize_classes(np.concatenate(b.gold), self.triplet_threshold))
            else:
                parts.append(np.asarray(b.gold, dtype=np.int64))
        return np.concatenate(parts)

    @staticmethod
    def _composition_ok(classes: np.ndarray) -> bool:
        uniq, counts = np.unique(classes, return_counts=True)
        return uniq.size >= 2 and bool(np.all(counts >= 2))

    def next_batch(self) -> dict[str, ModalityBatch]:
        for _ in range(self.max_retries):
            batches = {m: self._draw(m) for m in self.modalities}
            if not self.require_valid_classes or self._composition_ok(self._classes_of(batches)):
                return batches
        raise SamplingError(
            f"no batch with valid triplet class composition after {self.max_retries} retries"
        )


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------


class Adam:
    """Adaptive moment estimation with the canonical defaults."""

    def __init__(self, params: list[np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise UsageError("gradient list does not match parameter list")
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


# ---------------------------------------------------------------------------
# the training loop
# ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    l_main: float
    l_aux: float
    l_triplet: float
    l_reg: float
    total: float
    dev_metric: float


@dataclass
class TrainResult:
    model: TrainedModel
    history: list[EpochRecord]
    best_epoch: int
    best_dev_metric: float


def _l2_penalty(model: TrainedModel) -> float:
    return float(sum(np.sum(p * p) for _, p in model.parameters()))


def _check_finite(report: LossReport, epoch: int, step: int) -> None:
    for name in ("l_main", "l_aux", "l_triplet", "l_reg", "total"):
        if not math.isfinite(getattr(report, name)):
            raise NumericError(f"{name} became non-finite at epoch {epoch} step {step}")


def _regression_step(model, cfg, batches, target, aux):
    obj = cfg.objective
    loss_fn = regression_loss_fn(obj.regression_loss)
    Xt = np.stack(batches[target].features)
    gt = np.stack(batches[target].gold)
    emb_t, enc_cache_t = encoder_forward(model, target, Xt)
    pred_t, head_cache_t = head_forward(model, emb_t)
    l_main, dpred_flat = loss_fn(pred_t.ravel(), gt.ravel())
    dpred_t = dpred_flat.reshape(pred_t.shape)

    l_aux = 0.0
    l_trip = 0.0
    emb_a = enc_cache_a = None
    dpred_a = head_cache_a = None
    trip_grad = None
    if aux is not None:
        Xa = np.stack(batches[aux].features)
        ga = np.stack(batches[aux].gold)
        emb_a, enc_cache_a = encoder_forward(model, aux, Xa)
        if obj.alpha > 0:
            pred_a, head_cache_a = head_forward(model, emb_a)
            l_aux, dflat = loss_fn(pred_a.ravel(), ga.ravel())
            dpred_a = dflat.reshape(pred_a.shape)
        if obj.beta > 0:
            E = model.embedding_dim
            rows = np.concatenate([emb_t.reshape(-1, E), emb_a.reshape(-1, E)])
            classes = np.concatenate(
                [
                    binarize_classes(gt.ravel(), obj.triplet_threshold),
                    binarize_classes(ga.ravel(), obj.triplet_threshold),
                ]
            )
            tags = np.concatenate(
                [np.full(emb_t.shape[0] * emb_t.shape[1], target), np.full(emb_a.shape[0] * emb_a.shape[1], aux)]
            )
            l_trip, trip_grad = triplet_loss_grad(
                CrossmodalBatch(rows, tags, classes), margin=obj.triplet_margin
            )

    l_reg = _l2_penalty(model)
    report = compose_objective(obj, l_main, l_aux, l_trip, l_reg)

    demb_t = head_backward(model, dpred_t, head_cache_t)
    if trip_grad is not None:
        n_t = emb_t.shape[0] * emb_t.shape[1]
        demb_t += obj.beta * trip_grad[:n_t].reshape(emb_t.shape)
    encoder_backward(model, target, demb_t, enc_cache_t)

    if aux is not None:
        demb_a = np.zeros_like(emb_a)
        if dpred_a is not None:
            demb_a += head_backward(model, obj.alpha * dpred_a, head_cache_a)
        if trip_grad is not None:
            n_t = emb_t.shape[0] * emb_t.shape[1]
            demb_a += obj.beta * trip_grad[n_t:].reshape(emb_a.shape)
        encoder_backward(model, aux, demb_a, enc_cache_a)
    return report


def _encode_pooled(model, modality, feature_list):
    """Encode variable-length utterances and mean-pool each over frames."""
    embs, caches, lengths = [], [], []
    pooled = np.empty((len(feature_list), model.embedding_dim))
    for i, feats in enumerate(feature_list):
        emb, cache = encoder_forward(model, modality, feats[np.newaxis])
        embs.append(emb)
        caches.append(cache)
        lengths.append(feats.shape[0])
        pooled[i] = emb[0].mean(axis=0)
    return pooled, embs, caches, lengths


def _pooled_backward(model, modality, dpooled, embs, caches, lengths):
    for i, (cache, T) in enumerate(zip(caches, lengths)):
        demb = np.broadcast_to(dpooled[i] / T, (1, T, dpooled.shape[1])).copy()
        encoder_backward(model, modality, demb, cache)


def _classification_step(model, cfg, batches, target, aux):
    obj = cfg.objective
    pooled_t, embs_t, caches_t, len_t = _encode_pooled(model, target, batches[target].features)
    labels_t = np.asarray(batches[target].gold, dtype=np.int64)
    logits_t, head_cache_t = head_forward(model, pooled_t[:, np.newaxis, :])
    l_main, dlogits_t = cross_entropy_from_logits(logits_t, labels_t)

    l_aux = 0.0
    l_trip = 0.0
    pooled_a = embs_a = caches_a = len_a = None
    dlogits_a = head_cache_a = None
    trip_grad = None
    if aux is not None:
        pooled_a, embs_a, caches_a, len_a = _encode_pooled(model, aux, batches[aux].features)
        labels_a = np.asarray(batches[aux].gold, dtype=np.int64)
        if obj.alpha > 0:
            logits_a, head_cache_a = head_forward(model, pooled_a[:, np.newaxis, :])
            l_aux, dlogits_a = cross_entropy_from_logits(logits_a, labels_a)
        if obj.beta > 0:
            rows = np.concatenate([pooled_t, pooled_a])
            classes = np.concatenate([labels_t, labels_a])
            tags = np.concatenate(
                [np.full(len(len_t), target), np.full(len(len_a), aux)]
            )
            l_trip, trip_grad = triplet_loss_grad(
                CrossmodalBatch(rows, tags, classes), margin=obj.triplet_margin
            )

    l_reg = _l2_penalty(model)
    report = compose_objective(obj, l_main, l_aux, l_trip, l_reg)

    dpooled_t = head_backward(model, dlogits_t, head_cache_t)[:, 0, :]
    if trip_grad is not None:
        dpooled_t += obj.beta * trip_grad[: len(len_t)]
    _pooled_backward(model, target, dpooled_t, embs_t, caches_t, len_t)

    if aux is not None:
        dpooled_a = np.zeros_like(pooled_a)
        if dlogits_a is not None:
            dpooled_a += head_backward(model, obj.alpha * dlogits_a, head_cache_a)[:, 0, :]
        if trip_grad is not None:
            dpooled_a += obj.beta * trip_grad[len(len_t) :]
        _pooled_backward(model, aux, dpooled_a, embs_a, caches_a, len_a)
    return report


def evaluate_dev(model: TrainedModel, dev_data, objective: ObjectiveConfig) -> float:
    """Target-modality development metric: concordance or macro F1."""
    target = objective.target_modality
    ds = dev_data[target]
    if objective.task == "regression":
        preds, golds = [], []
        for rec in ds.recordings:
            preds.append(infer_sequence(model, target, rec.features))
            golds.append(rec.gold)
        from .metrics import ccc

        return ccc(np.concatenate(preds), np.concatenate(golds))
    pred_labels = []
    gold_labels = []
    for utt in ds.utterances:
        probs = infer_sequence(model, target, utt.features)
        pred_labels.append(int(np.argmax(probs)))
        gold_labels.append(utt.label)
    return macro_f1(pred_labels, gold_labels, objective.n_classes).f1


def _default_steps(cfg: TrainConfig, ds) -> int:
    if isinstance(ds, SequenceDataset):
        per_step = cfg.batch_size * min(
            cfg.window_frames, min(r.features.shape[0] for r in ds.recordings)
        )
        return max(1, math.ceil(ds.n_frames / per_step))
    return max(1, math.ceil(len(ds.utterances) / cfg.batch_size))


def train(model: TrainedModel, data: dict, cfg: TrainConfig) -> TrainResult:
    """Optimise the composite objective; retain the best-dev-epoch parameters.

    ``data`` maps modality -> partition -> dataset and must already be
    delay-compensated; standardization stats must be attached to the model.
    """
    obj = cfg.objective
    target = obj.target_modality
    aux_candidates = [m for m in model.encoders if m != target]
    aux = aux_candidates[0] if aux_candidates else None
    if obj.aux_active and aux is None:
        raise ConfigError("objective uses an auxiliary modality but the model has none")
    if not obj.aux_active:
        aux = None
    modalities = (target,) if aux is None else (target, aux)

    sampler = CrossmodalSampler(
        {m: data[m]["train"] for m in modalities},
        modalities,
        cfg.batch_size,
        cfg.window_frames,
        SeededRng(cfg.seed),
        require_valid_classes=obj.beta > 0,
        triplet_threshold=obj.triplet_threshold,
        max_retries=cfg.max_sample_retries,
    )
    steps = cfg.steps_per_epoch or _default_steps(cfg, data[target]["train"])
    step_fn = _regression_step if obj.task == "regression" else _classification_step
    adam = Adam([p for _, p in model.parameters()], cfg.learning_rate)

    history: list[EpochRecord] = []
    best_metric = -np.inf
    best_epoch = 0
    best_params = None
    for epoch in range(1, cfg.max_epochs + 1):
        sums = np.zeros(5)
        for step in range(1, steps + 1):
            model.zero_grads()
            batches = sampler.next_batch()
            report = step_fn(model, cfg, batches, target, aux)
            _check_finite(report, epoch, step)
            if obj.weight_decay > 0:
                for (_, p), (_, g) in zip(model.parameters(), model.gradients()):
                    g += 2.0 * obj.weight_decay * p
            adam.step([g for _, g in model.gradients()])
            sums += (report.l_main, report.l_aux, report.l_triplet, report.l_reg, report.total)
        means = sums / steps
        dev_metric = evaluate_dev(model, {target: data[target]["dev"]}, obj)
        history.append(EpochRecord(epoch, *means, dev_metric))
        if dev_metric > best_metric:
            best_metric = dev_metric
            best_epoch = epoch
            best_params = [p.copy() for _, p in model.parameters()]
    for (_, p), saved in zip(model.parameters(), best_params):
        p[...] = saved
    return TrainResult(model=model, history=history, best_epoch=best_epoch, best_dev_metric=best_metric)


def run_training(
    raw_data: dict, model_config: ModelConfig, cfg: TrainConfig
) -> tuple[TrainResult, dict]:
    """Build, standardise and train a model from raw (uncompensated) datasets.

    Returns the training result plus the prepared (compensated) data used,
    keyed modality -> partition.
    """
    obj = cfg.objective
    target = obj.target_modality
    if target not in raw_data:
        raise ConfigError(f"no data for target modality {target!r}")
    aux = next((m for m in MODALITY_ORDER if m in raw_data and m != target), None)
    if obj.aux_active and aux is None:
        raise ConfigError("alpha/beta > 0 require an auxiliary modality dataset")
    modalities = (target,) if not obj.aux_active else (target, aux)

    prepared: dict[str, dict] = {}
    for m in modalities:
        prepared[m] = {}
        for part, ds in raw_data[m].items():
            if isinstance(ds, SequenceDataset):
                prepared[m][part] = compensate_dataset(ds, cfg.delay_seconds)
            else:
                prepared[m][part] = ds
        if "train" not in prepared[m]:
            raise ConfigError(f"modality {m!r} has no train partition")
    if "dev" not in prepared[target]:
        raise ConfigError("target modality needs a dev partition for model selection")

    input_dims = {m: prepared[m]["train"].feature_dim for m in modalities}
    model = build_model(
        task=obj.task,
        target_modality=target,
        input_dims=input_dims,
        config=model_config,
        rng=SeededRng(cfg.seed),
        n_classes=obj.n_classes,
    )
    for m in modalities:
        ds = prepared[m]["train"]
        if isinstance(ds, SequenceDataset):
            arrays = [r.features for r in ds.recordings]
        else:
            arrays = [u.features for u in ds.utterances]
        model.standardization[m] = fit_standardizer(arrays)
    result = train(model, prepared, cfg)
    return result, prepared


# ---------------------------------------------------------------------------
# alpha/beta sweep
# ---------------------------------------------------------------------------


@dataclass
class SweepRow:
    alpha: float
    beta: float
    dev_metric: float


@dataclass
class SweepResult:
    rows: list[SweepRow]
    selected: SweepRow
    selected_result: TrainResult
    prepared: dict = field(repr=False, default=None)


def sweep(grid: SweepGrid, base_cfg: TrainConfig, raw_data: dict, model_config: ModelConfig) -> SweepResult:
    """One training run per grid point, all with the same seed.

    Selection is the development-metric argmax; ties prefer the smallest
    alpha, then the smallest beta.
    """
    rows = []
    results = {}
    for alpha in grid.alpha_values:
        for beta in grid.beta_values:
            cfg = replace(base_cfg, objective=replace(base_cfg.objective, alpha=alpha, beta=beta))
            try:
                result, prepared = run_training(raw_data, model_config, cfg)
            except CrossemoError as exc:
                raise type(exc)(f"grid point (alpha={alpha}, beta={beta}): {exc}") from exc
            rows.append(SweepRow(alpha=alpha, beta=beta, dev_metric=result.best_dev_metric))
            results[(alpha, beta)] = (result, prepared)
    selected = min(rows, key=lambda r: (-r.dev_metric, r.alpha, r.beta))
    sel_result, sel_prepared = results[(selected.alpha, selected.beta)]
    return SweepResult(rows=rows, selected=selected, selected_result=sel_result, prepared=sel_prepared)


# ---------------------------------------------------------------------------
# run-directory pieces
# ---------------------------------------------------------------------------

HISTORY_FIELDS = ("epoch", "l_main", "l_aux", "l_triplet", "l_reg", "total", "dev_metric")


def write_history_csv(history: list[EpochRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_FIELDS)
        for rec in history:
            writer.writerow(
                [rec.epoch]
                + [
                    format_float(getattr(rec, f))
                    for f in HISTORY_FIELDS[1:]
                ]
            )


def write_sweep_csv(rows: list[SweepRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "beta", "dev_metric"])
        for row in rows:
            writer.writerow([format_float(row.alpha), format_float(row.beta), format_float(row.dev_metric)])
