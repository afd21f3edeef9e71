"""Dataset containers, CSV ingestion and the synthetic crossmodal generator.

CSV schemas (UTF-8, comma-separated, header row required, floats written with
round-trippable decimal formatting):

* regression:  ``recording_id,frame_index,f0..f{d-1},gold`` with frame indices
  contiguous from 0 within each recording.
* utterances:  ``utterance_id,frame_index,f0..f{d-1},label`` with one integer
  class label per utterance, repeated on every frame row.

The generator draws a smoothed Gaussian random-walk latent trajectory per
recording and projects it through per-modality mixing matrices plus noise;
both modalities share the identical gold standard derived from the latent,
which is what makes the crossmodal transfer claim checkable on synthetic
data.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, UsageError
from .metrics import format_float
from .numkit import SeededRng

PARTITIONS = ("train", "dev", "test")


@dataclass
class Recording:
    id: str
    features: np.ndarray  # [T, d]
    gold: np.ndarray  # [T]


@dataclass
class SequenceDataset:
    recordings: list[Recording]
    frame_rate_hz: float
    modality: str
    partition: str

    def __post_init__(self):
        if self.frame_rate_hz <= 0:
            raise UsageError("frame rate must be positive")
        for rec in self.recordings:
            if rec.features.shape[0] != rec.gold.shape[0]:
                raise DataError(f"recording {rec.id}: feature/gold length mismatch")

    @property
    def feature_dim(self) -> int:
        return self.recordings[0].features.shape[1]

    @property
    def n_frames(self) -> int:
        return sum(r.features.shape[0] for r in self.recordings)


@dataclass
class Utterance:
    id: str
    features: np.ndarray  # [T, d]
    label: int


@dataclass
class UtteranceDataset:
    utterances: list[Utterance]
    n_classes: int
    modality: str
    partition: str

    def __post_init__(self):
        for utt in self.utterances:
            if utt.features.size == 0:
                raise DataError(f"utterance {utt.id}: empty features")
            if not 0 <= utt.label < self.n_classes:
                raise DataError(f"utterance {utt.id}: label {utt.label} out of range")

    @property
    def feature_dim(self) -> int:
        return self.utterances[0].features.shape[1]


# ---------------------------------------------------------------------------
# CSV io
# ---------------------------------------------------------------------------


def _read_grouped_csv(path, id_column: str, tail_column: str):
    """Parse a framewise CSV grouped by its id column; yields raw groups."""
    groups: dict[str, list[tuple[int, list[float], float]]] = {}
    order: list[str] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 4 or header[0] != id_column or header[1] != "frame_index":
            raise DataError(
                f"{path}: header must start with {id_column},frame_index and end with {tail_column}"
            )
        if header[-1] != tail_column:
            raise DataError(f"{path}: last column must be {tail_column!r}, got {header[-1]!r}")
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width:
                raise DataError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
            try:
                rid = row[0]
                frame = int(row[1])
                feats = [float(v) for v in row[2:-1]]
                tail = float(row[-1])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if rid not in groups:
                groups[rid] = []
                order.append(rid)
            groups[rid].append((frame, feats, tail))
    if not order:
        raise DataError(f"{path}: no data rows")
    return order, groups


def _check_contiguous(path, rid: str, frames: list[int]) -> None:
    for expected, got in enumerate(frames):
        if got != expected:
            raise DataError(f"{path}: recording {rid!r} missing frame {expected} (found {got})")


def load_regression_csv(path, frame_rate_hz: float, modality: str, partition: str) -> SequenceDataset:
    order, groups = _read_grouped_csv(path, "recording_id", "gold")
    recordings = []
    for rid in order:
        rows = groups[rid]
        _check_contiguous(path, rid, [r[0] for r in rows])
        feats = np.array([r[1] for r in rows], dtype=np.float64)
        gold = np.array([r[2] for r in rows], dtype=np.float64)
        recordings.append(Recording(id=rid, features=feats, gold=gold))
    widths = {r.features.shape[1] for r in recordings}
    if len(widths) != 1:
        raise DataError(f"{path}: inconsistent feature widths {sorted(widths)}")
    return SequenceDataset(recordings, frame_rate_hz, modality, partition)


def save_regression_csv(dataset: SequenceDataset, path) -> None:
    d = dataset.feature_dim
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["recording_id", "frame_index"] + [f"f{i}" for i in range(d)] + ["gold"])
        for rec in dataset.recordings:
            for t in range(rec.features.shape[0]):
                writer.writerow(
                    [rec.id, t]
                    + [format_float(v) for v in rec.features[t]]
                    + [format_float(rec.gold[t])]
                )


def load_utterance_csv(path, n_classes: int, modality: str, partition: str) -> UtteranceDataset:
    order, groups = _read_grouped_csv(path, "utterance_id", "label")
    utterances = []
    for uid in order:
        rows = groups[uid]
        _check_contiguous(path, uid, [r[0] for r in rows])
        labels = {r[2] for r in rows}
        if len(labels) != 1:
            raise DataError(f"{path}: utterance {uid!r} has conflicting labels {sorted(labels)}")
        label = labels.pop()
        if label != int(label):
            raise DataError(f"{path}: utterance {uid!r} label {label} is not an integer")
        feats = np.array([r[1] for r in rows], dtype=np.float64)
        utterances.append(Utterance(id=uid, features=feats, label=int(label)))
    widths = {u.features.shape[1] for u in utterances}
    if len(widths) != 1:
        raise DataError(f"{path}: inconsistent feature widths {sorted(widths)}")
    return UtteranceDataset(utterances, n_classes, modality, partition)


def save_utterance_csv(dataset: UtteranceDataset, path) -> None:
    d = dataset.feature_dim
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["utterance_id", "frame_index"] + [f"f{i}" for i in range(d)] + ["label"])
        for utt in dataset.utterances:
            for t in range(utt.features.shape[0]):
                writer.writerow(
                    [utt.id, t] + [format_float(v) for v in utt.features[t]] + [utt.label]
                )


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------


@dataclass
class SynthSpec:
    """Shared-latent generator settings.

    Mixing matrices may be supplied explicitly (rows = latent_dim); when
    omitted they are drawn once from the seed.  ``noise_audio``/``noise_video``
    are additive Gaussian noise scales, the lever for making one modality
    strictly more informative than the other.
    """

    latent_dim: int = 4
    audio_dim: int = 20
    video_dim: int = 30
    noise_audio: float = 1.0
    noise_video: float = 0.1
    label_rule: str = "continuous"  # or "threshold"
    threshold: float = 0.0
    smoothing_frames: int = 25
    frame_rate_hz: float = 25.0
    seed: int = 0
    mixing_audio: np.ndarray | None = field(default=None, repr=False)
    mixing_video: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if min(self.latent_dim, self.audio_dim, self.video_dim) < 1:
            raise UsageError("dimensions must be positive")
        if self.noise_audio < 0 or self.noise_video < 0:
            raise UsageError("noise scales must be >= 0")
        if self.label_rule not in ("continuous", "threshold"):
            raise UsageError(f"unknown label_rule {self.label_rule!r}")
        if self.smoothing_frames < 1:
            raise UsageError("smoothing_frames must be >= 1")
        for name, m, cols in (
            ("mixing_audio", self.mixing_audio, self.audio_dim),
            ("mixing_video", self.mixing_video, self.video_dim),
        ):
            if m is not None and np.asarray(m).shape != (self.latent_dim, cols):
                raise UsageError(f"{name} must have shape ({self.latent_dim}, {cols})")


def _smooth(x: np.ndarray, width: int) -> np.ndarray:
    if width <= 1:
        return x
    kernel = np.ones(width) / width
    out = np.empty_like(x)
    for j in range(x.shape[1]):
        out[:, j] = np.convolve(x[:, j], kernel, mode="same")
    return out


def generate_crossmodal(
    spec: SynthSpec, n_recordings: int, n_frames: int, partition: str = "train"
) -> tuple[SequenceDataset, SequenceDataset]:
    """Paired audio/video datasets sharing one latent trajectory per recording.

    The latent walk is smoothed, then standardised per recording and per
    dimension so amplitudes are comparable across recordings.  The gold
    standard is a fixed unit-norm linear readout of the latent (continuous
    rule) or its thresholded high/low version.
    """
    if n_recordings < 1 or n_frames < 2:
        raise UsageError("need at least one recording with two frames")
    rng = SeededRng(spec.seed)
    mix_rng = rng.derive("mixing")
    A = (
        np.asarray(spec.mixing_audio, dtype=np.float64)
        if spec.mixing_audio is not None
        else mix_rng.normal(0.0, 1.0 / np.sqrt(spec.latent_dim), (spec.latent_dim, spec.audio_dim))
    )
    V = (
        np.asarray(spec.mixing_video, dtype=np.float64)
        if spec.mixing_video is not None
        else mix_rng.normal(0.0, 1.0 / np.sqrt(spec.latent_dim), (spec.latent_dim, spec.video_dim))
    )
    readout = mix_rng.normal(0.0, 1.0, spec.latent_dim)
    readout /= np.linalg.norm(readout)

    audio_recs = []
    video_recs = []
    for i in range(n_recordings):
        rec_rng = rng.derive(f"recording.{i}")
        steps = rec_rng.derive("latent").normal(0.0, 1.0, (n_frames, spec.latent_dim))
        z = _smooth(np.cumsum(steps, axis=0), spec.smoothing_frames)
        z = (z - z.mean(axis=0)) / np.maximum(z.std(axis=0), 1e-12)
        gold = z @ readout
        if spec.label_rule == "threshold":
            gold = (gold >= spec.threshold).astype(np.float64)
        xa = z @ A + spec.noise_audio * rec_rng.derive("noise.audio").normal(
            0.0, 1.0, (n_frames, spec.audio_dim)
        )
        xv = z @ V + spec.noise_video * rec_rng.derive("noise.video").normal(
            0.0, 1.0, (n_frames, spec.video_dim)
        )
        rid = f"rec{i:03d}"
        audio_recs.append(Recording(id=rid, features=xa, gold=gold.copy()))
        video_recs.append(Recording(id=rid, features=xv, gold=gold.copy()))
    audio = SequenceDataset(audio_recs, spec.frame_rate_hz, "audio", partition)
    video = SequenceDataset(video_recs, spec.frame_rate_hz, "video", partition)
    return audio, video


def split_dataset(dataset: SequenceDataset, counts: dict[str, int]) -> dict[str, SequenceDataset]:
    """Partition recordings, in order, into train/dev/test datasets."""
    total = sum(counts.values())
    if total != len(dataset.recordings):
        raise UsageError(f"split counts sum to {total}, dataset has {len(dataset.recordings)}")
    out = {}
    start = 0
    for part in PARTITIONS:
        n = counts.get(part, 0)
        if n == 0:
            continue
        out[part] = SequenceDataset(
            dataset.recordings[start : start + n], dataset.frame_rate_hz, dataset.modality, part
        )
        start += n
    return out


def segment_into_utterances(
    dataset: SequenceDataset, frames_per_utterance: int, threshold: float = 0.0
) -> UtteranceDataset:
    """Chop recordings into fixed-length utterances labelled by mean gold.

    Convenience bridge from the regression generator to the classification
    path: label = 1 when the segment's mean gold is >= threshold, else 0.
    """
    if frames_per_utterance < 1:
        raise UsageError("frames_per_utterance must be >= 1")
    utterances = []
    for rec in dataset.recordings:
        T = rec.features.shape[0]
        for k, start in enumerate(range(0, T - frames_per_utterance + 1, frames_per_utterance)):
            stop = start + frames_per_utterance
            label = int(rec.gold[start:stop].mean() >= threshold)
            utterances.append(
                Utterance(id=f"{rec.id}_u{k:03d}", features=rec.features[start:stop].copy(), label=label)
            )
    return UtteranceDataset(utterances, 2, dataset.modality, dataset.partition)
