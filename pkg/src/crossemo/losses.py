"""Discriminative losses and the composite training objective.

The regression loss is 1 - concordance (agreement-on-metric training); an
MSE variant sits behind a config switch for ablations.  Classification uses
categorical cross-entropy on softmax outputs.  ``compose_objective`` combines
a main-modality loss with an auxiliary-modality loss, a crossmodal triplet
term and an L2 penalty, weighted by alpha, beta and the weight decay.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, ShapeError, UsageError
from .metrics import ccc
from .model import softmax

REGRESSION_LOSSES = ("ccc", "mse")
TASKS = ("regression", "classification")


@dataclass(frozen=True)
class ObjectiveConfig:
    """Weights and task defining the composite objective.

    ``alpha`` scales the auxiliary modality's discriminative loss, ``beta``
    the crossmodal triplet term, ``weight_decay`` the L2 penalty.  Setting
    alpha = beta = 0 reduces training to the classic monomodal system.
    """

    target_modality: str = "audio"
    alpha: float = 0.0
    beta: float = 0.0
    weight_decay: float = 0.0
    task: str = "regression"
    dimension: str | None = None  # regression annotation name, e.g. arousal
    n_classes: int | None = None
    triplet_threshold: float = 0.0
    triplet_margin: float | None = None
    regression_loss: str = "ccc"

    def __post_init__(self):
        for name in ("alpha", "beta", "weight_decay"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise UsageError(f"{name} must be finite and >= 0, got {v}")
        if self.task not in TASKS:
            raise UsageError(f"unknown task {self.task!r}")
        if self.task == "classification" and (self.n_classes is None or self.n_classes < 2):
            raise UsageError("classification requires n_classes >= 2")
        if self.regression_loss not in REGRESSION_LOSSES:
            raise UsageError(f"unknown regression_loss {self.regression_loss!r}")

    @property
    def aux_active(self) -> bool:
        return self.alpha > 0.0 or self.beta > 0.0


@dataclass(frozen=True)
class LossReport:
    """One step's loss terms; ``total`` is the exact weighted combination."""

    l_main: float
    l_aux: float
    l_triplet: float
    l_reg: float
    total: float


def compose_objective(
    cfg: ObjectiveConfig, l_main: float, l_aux: float, l_triplet: float, l_reg: float
) -> LossReport:
    terms = (l_main, l_aux, l_triplet, l_reg)
    if not all(np.isfinite(t) for t in terms):
        raise UsageError(f"loss terms must be finite, got {terms}")
    total = l_main + cfg.alpha * l_aux + cfg.beta * l_triplet + cfg.weight_decay * l_reg
    return LossReport(l_main=l_main, l_aux=l_aux, l_triplet=l_triplet, l_reg=l_reg, total=total)


# ---------------------------------------------------------------------------
# regression: 1 - concordance
# ---------------------------------------------------------------------------


def regression_loss(pred, gold) -> float:
    """1 - CCC(pred, gold) in [0, 2]; constant predictions score exactly 1."""
    loss, _ = regression_loss_grad(pred, gold, need_grad=False)
    return loss


def regression_loss_grad(pred, gold, need_grad: bool = True):
    """Loss and its gradient w.r.t. the predictions.

    Gold with zero variance is rejected; constant predictions get loss 1
    (concordance 0 by convention) with the analytic gradient of the
    concordance formula, which stays well-defined there and pulls the
    predictions toward the gold standard.
    """
    x = np.asarray(pred, dtype=np.float64).ravel()
    y = np.asarray(gold, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeError(f"series lengths differ: {x.size} vs {y.size}")
    if x.size < 2:
        raise ShapeError("series must have length >= 2")
    vy = float(np.var(y))
    if vy == 0.0:
        raise DegenerateInputError("gold standard has zero variance")

    n = x.size
    mx = float(np.mean(x))
    my = float(np.mean(y))
    dx = x - mx
    dy = y - my
    vx = float(np.mean(dx * dx))
    cov = float(np.mean(dx * dy))
    denom = vx + vy + (mx - my) ** 2
    num = 0.0 if vx == 0.0 else 2.0 * cov
    c = num / denom
    loss = 1.0 - c
    if not need_grad:
        return loss, None
    # d ccc / d x_i = (2/n) * [dy_i * denom - 2 cov (dx_i + mx - my)] / denom^2
    grad_c = (2.0 / n) * (dy * denom - num * (dx + (mx - my))) / (denom * denom)
    return loss, -grad_c


def mse_loss_grad(pred, gold, need_grad: bool = True):
    """Mean squared error variant of the regression loss."""
    x = np.asarray(pred, dtype=np.float64).ravel()
    y = np.asarray(gold, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeError(f"series lengths differ: {x.size} vs {y.size}")
    diff = x - y
    loss = float(np.mean(diff * diff))
    if not need_grad:
        return loss, None
    return loss, 2.0 * diff / x.size


def regression_loss_fn(kind: str):
    if kind == "ccc":
        return regression_loss_grad
    if kind == "mse":
        return mse_loss_grad
    raise UsageError(f"unknown regression_loss {kind!r}")


# ---------------------------------------------------------------------------
# classification: cross-entropy
# ---------------------------------------------------------------------------

_PROB_FLOOR = 1e-12


def classification_loss(probs, label: int) -> float:
    """Negative log-likelihood of the gold class under a probability vector."""
    p = np.asarray(probs, dtype=np.float64).ravel()
    if not 0 <= label < p.size:
        raise UsageError(f"label {label} out of range for {p.size} classes")
    if abs(float(p.sum()) - 1.0) > 1e-6:
        raise UsageError("probabilities must sum to 1")
    return -float(np.log(max(float(p[label]), _PROB_FLOOR)))


def cross_entropy_from_logits(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over a batch of logits ``[B, C]`` plus its gradient.

    Returns ``(loss, grad_logits)`` with the usual softmax shortcut
    grad = (probs - onehot) / B.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if logits.ndim != 2 or logits.shape[0] != labels.size:
        raise ShapeError(f"logits {logits.shape} do not match {labels.size} labels")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise UsageError("label out of range")
    probs = softmax(logits)
    B = labels.size
    picked = np.clip(probs[np.arange(B), labels], _PROB_FLOOR, None)
    loss = -float(np.mean(np.log(picked)))
    grad = probs.copy()
    grad[np.arange(B), labels] -= 1.0
    return loss, grad / B
