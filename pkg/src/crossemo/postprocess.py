"""Prediction refinement chain for continuous regression.

Four stages in fixed order: median filtering, centring, scaling, time
shifting.  The filter window and shift delay come from a development-set grid
search maximising concordance; centring/scaling constants match the filtered
development predictions' moments to the training gold standard's and are then
frozen into the plan so the identical affine map is applied to test data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, UsageError
from .metrics import ccc, format_float

# AVEC-style search grids (seconds)
DEFAULT_FILTER_WINDOWS = tuple(round(0.12 + 0.08 * i, 2) for i in range(5))  # 0.12 .. 0.44
DEFAULT_SHIFT_DELAYS = tuple(round(0.04 * i, 2) for i in range(1, 16))  # 0.04 .. 0.60


@dataclass(frozen=True)
class PostprocessPlan:
    window_seconds: float
    center_offset: float
    scale_factor: float
    shift_seconds: float

    def apply(self, pred, frame_rate_hz: float) -> np.ndarray:
        out = median_filter(pred, self.window_seconds, frame_rate_hz)
        out = out * self.scale_factor + self.center_offset
        return time_shift(out, self.shift_seconds, frame_rate_hz)


def _frames(seconds: float, frame_rate_hz: float) -> int:
    return int(round(seconds * frame_rate_hz))


def median_filter(pred, window_seconds: float, frame_rate_hz: float) -> np.ndarray:
    """Centred sliding median; windows shrink symmetrically at the edges.

    Shrinking both sides of the window by the same amount keeps edge windows
    centred, which makes the filter an exact identity (hence idempotent) on
    monotone series.  Even-sized windows take the lower of the two middle
    values, keeping the result bit-reproducible.
    """
    x = np.asarray(pred, dtype=np.float64).ravel()
    if x.size == 0:
        raise UsageError("empty series")
    w = _frames(window_seconds, frame_rate_hz)
    if w < 1:
        raise UsageError(f"window of {window_seconds}s is below one frame")
    if w == 1:
        return x.copy()
    n = x.size
    out = np.empty_like(x)
    left = w // 2 if w % 2 == 0 else (w - 1) // 2
    right = (w - 1) // 2
    for i in range(n):
        lo = i - left + max(0, left - i, i + right - (n - 1))
        hi = i + right - max(0, left - i, i + right - (n - 1))
        if lo > hi:
            lo = hi = i
        window = np.sort(x[lo : hi + 1])
        out[i] = window[(window.size - 1) // 2]
    return out


def center_and_scale(pred, gold_train_mean: float, gold_train_std: float) -> np.ndarray:
    """Match prediction mean/std (population) to the training gold moments.

    Constant predictions are centred only; scaling is skipped.
    """
    scale, offset = fit_affine(pred, gold_train_mean, gold_train_std)
    return np.asarray(pred, dtype=np.float64).ravel() * scale + offset


def fit_affine(pred, gold_train_mean: float, gold_train_std: float) -> tuple[float, float]:
    """(scale, offset) such that pred*scale + offset matches the gold moments."""
    x = np.asarray(pred, dtype=np.float64).ravel()
    if x.size == 0:
        raise UsageError("empty series")
    if gold_train_std <= 0:
        raise DegenerateInputError("gold standard deviation must be positive")
    mean = float(np.mean(x))
    std = float(np.std(x))
    scale = gold_train_std / std if std > 0 else 1.0
    return scale, gold_train_mean - mean * scale


def time_shift(pred, shift_seconds: float, frame_rate_hz: float) -> np.ndarray:
    """Delay predictions by round(shift*rate) frames, repeating the first value."""
    x = np.asarray(pred, dtype=np.float64).ravel()
    if shift_seconds < 0:
        raise UsageError("shift must be >= 0")
    k = _frames(shift_seconds, frame_rate_hz)
    if k >= x.size:
        raise DegenerateInputError(f"shift of {k} frames >= series length {x.size}")
    if k == 0:
        return x.copy()
    return np.concatenate([np.full(k, x[0]), x[:-k]])


def _series_list(x) -> list[np.ndarray]:
    if isinstance(x, (list, tuple)):
        return [np.asarray(s, dtype=np.float64).ravel() for s in x]
    return [np.asarray(x, dtype=np.float64).ravel()]


def apply_plan_per_recording(plan: PostprocessPlan, preds, frame_rate_hz: float) -> list[np.ndarray]:
    """Apply the chain independently per recording (no cross-boundary leakage)."""
    return [plan.apply(p, frame_rate_hz) for p in _series_list(preds)]


def grid_search(
    dev_pred,
    dev_gold,
    frame_rate_hz: float,
    gold_train_mean: float,
    gold_train_std: float,
    filter_windows=DEFAULT_FILTER_WINDOWS,
    shift_delays=DEFAULT_SHIFT_DELAYS,
) -> PostprocessPlan:
    """Pick the (window, delay) pair maximising development concordance.

    Accepts a single prediction/gold series or per-recording lists; filtering
    and shifting are applied within each recording, the affine fit and the
    concordance score use the concatenation.  Ties break toward the smallest
    window, then the smallest delay, which makes the result independent of
    grid enumeration order.
    """
    if not filter_windows or not shift_delays:
        raise UsageError("grids must be non-empty")
    preds = _series_list(dev_pred)
    golds = _series_list(dev_gold)
    if len(preds) != len(golds):
        raise UsageError("prediction and gold recording counts differ")
    gold_cat = np.concatenate(golds)
    best = None
    for w in filter_windows:
        filtered = [median_filter(p, w, frame_rate_hz) for p in preds]
        scale, offset = fit_affine(np.concatenate(filtered), gold_train_mean, gold_train_std)
        adjusted = [f * scale + offset for f in filtered]
        for d in shift_delays:
            shifted = np.concatenate([time_shift(a, d, frame_rate_hz) for a in adjusted])
            score = ccc(shifted, gold_cat)
            key = (-score, w, d)
            if best is None or key < best[0]:
                best = (key, PostprocessPlan(w, offset, scale, d))
    return best[1]


# ---------------------------------------------------------------------------
# plan io: flat key=value text block
# ---------------------------------------------------------------------------

_PLAN_FIELDS = ("window_seconds", "center_offset", "scale_factor", "shift_seconds")


def save_plan(plan: PostprocessPlan, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name in _PLAN_FIELDS:
            fh.write(f"{name}={format_float(getattr(plan, name))}\n")


def load_plan(path) -> PostprocessPlan:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, _, raw = line.partition("=")
            values[key.strip()] = float(raw)
    missing = [f for f in _PLAN_FIELDS if f not in values]
    if missing:
        raise UsageError(f"{path}: missing plan fields {missing}")
    return PostprocessPlan(**{f: values[f] for f in _PLAN_FIELDS})
