"""Evaluation metrics and significance tests.

All moments are population moments (1/n), matching the training loss so that
a model optimised on the agreement loss is scored by the same quantity.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, ShapeError, UsageError


def _paired_series(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeError(f"series lengths differ: {x.size} vs {y.size}")
    if x.size < 2:
        raise ShapeError("series must have length >= 2")
    return x, y


def pcc(x, y) -> float:
    """Pearson correlation; 0 by convention if exactly one series is constant."""
    x, y = _paired_series(x, y)
    vx = float(np.var(x))
    vy = float(np.var(y))
    if vx == 0.0 and vy == 0.0:
        raise DegenerateInputError("both series are constant")
    if vx == 0.0 or vy == 0.0:
        return 0.0
    cov = float(np.mean((x - x.mean()) * (y - y.mean())))
    return cov / math.sqrt(vx * vy)


def ccc(x, y) -> float:
    """Concordance correlation: 2*cov / (var_x + var_y + (mean_x - mean_y)^2).

    Penalises mean and scale mismatch on top of decorrelation, so it only
    reaches 1 when the two series agree in value, not just in shape.  Returns
    0 by convention when exactly one series is constant; raises when both are.
    """
    x, y = _paired_series(x, y)
    vx = float(np.var(x))
    vy = float(np.var(y))
    if vx == 0.0 and vy == 0.0:
        raise DegenerateInputError("both series are constant")
    if vx == 0.0 or vy == 0.0:
        return 0.0
    mx = float(np.mean(x))
    my = float(np.mean(y))
    cov = float(np.mean((x - mx) * (y - my)))
    return 2.0 * cov / (vx + vy + (mx - my) ** 2)


@dataclass(frozen=True)
class RegressionEval:
    ccc: float
    pcc: float
    n: int


def evaluate_regression(pred, gold) -> RegressionEval:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    return RegressionEval(ccc=ccc(pred, gold), pcc=pcc(pred, gold), n=pred.size)


@dataclass(frozen=True)
class ClassificationEval:
    confusion: np.ndarray  # [C, C]; rows = gold class, cols = predicted class
    f1: float
    precision: np.ndarray  # per class
    recall: np.ndarray  # per class


def confusion_matrix(predictions, gold, n_classes: int) -> np.ndarray:
    pred = np.asarray(predictions, dtype=np.int64).ravel()
    gold = np.asarray(gold, dtype=np.int64).ravel()
    if pred.shape != gold.shape:
        raise ShapeError("prediction and gold lengths differ")
    if pred.size < 1:
        raise ShapeError("need at least one prediction")
    if pred.min() < 0 or pred.max() >= n_classes or gold.min() < 0 or gold.max() >= n_classes:
        raise UsageError(f"labels must lie in [0, {n_classes})")
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (gold, pred), 1)
    return conf


def macro_f1(predictions, gold, n_classes: int) -> ClassificationEval:
    """Unweighted-mean precision and recall, combined by their harmonic mean.

    A class that is never predicted gets precision 0; a class with no support
    gets recall 0.  Both still count toward the unweighted means.
    """
    conf = confusion_matrix(predictions, gold, n_classes)
    tp = np.diag(conf).astype(np.float64)
    pred_totals = conf.sum(axis=0).astype(np.float64)
    gold_totals = conf.sum(axis=1).astype(np.float64)
    precision = np.divide(tp, pred_totals, out=np.zeros(n_classes), where=pred_totals > 0)
    recall = np.divide(tp, gold_totals, out=np.zeros(n_classes), where=gold_totals > 0)
    p = float(precision.mean())
    r = float(recall.mean())
    f1 = 0.0 if p + r == 0.0 else 2.0 * p * r / (p + r)
    return ClassificationEval(confusion=conf, f1=f1, precision=precision, recall=recall)


def _normal_sf(z: float) -> float:
    """P(Z > z) for a standard normal."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def fisher_r_to_z_test(r1: float, n1: int, r2: float, n2: int) -> float:
    """One-tailed p-value for correlation r1 exceeding r2 (independent samples)."""
    for r in (r1, r2):
        if abs(r) >= 1.0:
            raise DegenerateInputError("correlations must satisfy |r| < 1")
    for n in (n1, n2):
        if n <= 3:
            raise UsageError("sample sizes must exceed 3")
    z1 = math.atanh(r1)
    z2 = math.atanh(r2)
    se = math.sqrt(1.0 / (n1 - 3) + 1.0 / (n2 - 3))
    return _normal_sf((z1 - z2) / se)


def one_tailed_z_test(p1: float, n1: int, p2: float, n2: int) -> float:
    """One-tailed pooled two-proportion z-test for p1 exceeding p2."""
    for p in (p1, p2):
        if not 0.0 <= p <= 1.0:
            raise UsageError("proportions must lie in [0, 1]")
    for n in (n1, n2):
        if n < 1:
            raise UsageError("sample sizes must be >= 1")
    pooled = (p1 * n1 + p2 * n2) / (n1 + n2)
    var = pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2)
    if var == 0.0:
        raise DegenerateInputError("pooled variance is zero")
    return _normal_sf((p1 - p2) / math.sqrt(var))


# ---------------------------------------------------------------------------
# report output
# ---------------------------------------------------------------------------


def format_float(x: float) -> str:
    """Round-trippable decimal rendering used by every CSV writer."""
    return repr(float(x))


def write_report(rows: list[dict], csv_path, text_path) -> None:
    """Emit an evaluation report as CSV plus an aligned text rendering.

    Each row is a mapping with keys ``metric``, ``value``, ``n`` and an
    optional ``p_value`` for comparisons.
    """
    fields = ["metric", "value", "n", "p_value"]
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            out = dict(row)
            out["value"] = format_float(out["value"])
            if out.get("p_value") is not None:
                out["p_value"] = format_float(out["p_value"])
            writer.writerow({k: out.get(k, "") for k in fields})
    with open(text_path, "w", encoding="utf-8") as fh:
        for row in rows:
            line = f"{row['metric']:<28s} {row['value']: .6f}  (n={row['n']})"
            if row.get("p_value") is not None:
                line += f"  p={row['p_value']:.3g}"
            fh.write(line + "\n")
