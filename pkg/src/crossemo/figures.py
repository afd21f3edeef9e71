"""Matplotlib renderings written next to the delimited outputs.

Every renderer takes plain arrays plus an output path; nothing here feeds
back into training or evaluation, so plotting failures never invalidate a
run's CSVs.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 140


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def render_training_curves(history, path) -> None:
    """Loss terms and the dev metric per epoch (two stacked panels)."""
    epochs = [r.epoch for r in history]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for name, key in (("main", "l_main"), ("aux", "l_aux"), ("triplet", "l_triplet"), ("total", "total")):
        ax1.plot(epochs, [getattr(r, key) for r in history], label=name)
    ax1.set_ylabel("loss")
    ax1.legend(loc="best", fontsize=8)
    ax2.plot(epochs, [r.dev_metric for r in history], marker="o", color="tab:green")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("dev metric")
    _save(fig, path)


def render_sweep(rows, path) -> None:
    """Dev metric over the (alpha, beta) grid: heatmap, or a line when 1-D."""
    alphas = sorted({r.alpha for r in rows})
    betas = sorted({r.beta for r in rows})
    grid = np.full((len(alphas), len(betas)), np.nan)
    for r in rows:
        grid[alphas.index(r.alpha), betas.index(r.beta)] = r.dev_metric
    fig, ax = plt.subplots(figsize=(6, 4.5))
    if len(alphas) == 1 or len(betas) == 1:
        if len(alphas) == 1:
            ax.plot(betas, grid[0], marker="o")
            ax.set_xlabel("beta")
        else:
            ax.plot(alphas, grid[:, 0], marker="o")
            ax.set_xlabel("alpha")
        ax.set_ylabel("dev metric")
    else:
        im = ax.imshow(grid, origin="lower", aspect="auto", cmap="viridis")
        ax.set_xticks(range(len(betas)), [f"{b:g}" for b in betas])
        ax.set_yticks(range(len(alphas)), [f"{a:g}" for a in alphas])
        ax.set_xlabel("beta")
        ax.set_ylabel("alpha")
        fig.colorbar(im, ax=ax, label="dev metric")
    _save(fig, path)


def render_prediction_overlay(gold, pred_raw, pred_post, path, max_frames: int = 2000) -> None:
    """Gold vs raw (and optionally post-processed) predictions for one stretch."""
    n = min(len(gold), max_frames)
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.plot(gold[:n], label="gold", color="black", linewidth=1.0)
    ax.plot(pred_raw[:n], label="prediction", color="tab:blue", alpha=0.8, linewidth=0.9)
    if pred_post is not None:
        ax.plot(pred_post[:n], label="post-processed", color="tab:red", alpha=0.8, linewidth=0.9)
    ax.set_xlabel("frame")
    ax.legend(loc="best", fontsize=8)
    _save(fig, path)


def render_confusion(confusion: np.ndarray, path) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(confusion, cmap="Blues")
    C = confusion.shape[0]
    for i in range(C):
        for j in range(C):
            ax.text(j, i, str(int(confusion[i, j])), ha="center", va="center", fontsize=8)
    ax.set_xlabel("predicted")
    ax.set_ylabel("gold")
    fig.colorbar(im, ax=ax)
    _save(fig, path)


def render_embedding_scatter(embeddings: np.ndarray, classes, modalities, path, max_points: int = 4000) -> None:
    """2-D principal-component projection, coloured by class, marked by modality."""
    emb = np.asarray(embeddings, dtype=np.float64)
    classes = np.asarray(classes)
    modalities = np.asarray(modalities)
    if emb.shape[0] > max_points:
        stride = emb.shape[0] // max_points + 1
        emb, classes, modalities = emb[::stride], classes[::stride], modalities[::stride]
    centered = emb - emb.mean(axis=0)
    if emb.shape[1] > 2:
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        proj = centered @ vt[:2].T
    else:
        proj = centered
    fig, ax = plt.subplots(figsize=(5.5, 5))
    markers = {m: mk for m, mk in zip(sorted(set(modalities.tolist())), ("o", "x", "s"))}
    cmap = plt.get_cmap("tab10")
    class_values = sorted(set(np.asarray(classes).tolist()))
    for m, mk in markers.items():
        for ci, c in enumerate(class_values):
            sel = (modalities == m) & (classes == c)
            if not np.any(sel):
                continue
            ax.scatter(
                proj[sel, 0], proj[sel, 1], marker=mk, s=8, alpha=0.5,
                color=cmap(ci % 10), label=f"{m}/{c}",
            )
    ax.set_xlabel("component 1")
    ax.set_ylabel("component 2")
    ax.legend(loc="best", fontsize=7, markerscale=1.5)
    _save(fig, path)
