"""Evaluation metrics and the local-smoothness probes behind the boundary plots."""

from __future__ import annotations

import numpy as np

from . import model as mdl
from .data import Dataset
from .errors import InputError
from .losses import PROB_CLAMP, smooth_kind_for, smooth_loss_rows
from .tensor import Rng


def accuracy(model_cfg: mdl.ModelConfig, params: mdl.ModelParams, dataset: Dataset) -> float:
    """Fraction of argmax-correct predictions; ties break toward the lowest class."""
    if model_cfg.task != "classification" or dataset.task != "classification":
        raise InputError("accuracy needs a classification model and dataset")
    probs = mdl.forward(model_cfg, params, dataset.inputs, "eval")
    return float(np.mean(np.argmax(probs, axis=1) == dataset.labels))


def mean_squared_error(model_cfg: mdl.ModelConfig, params: mdl.ModelParams,
                       dataset: Dataset) -> float:
    if model_cfg.task != "regression" or dataset.task != "regression":
        raise InputError("mean_squared_error needs a regression model and dataset")
    preds = mdl.forward(model_cfg, params, dataset.inputs, "eval")
    return float(np.mean((preds - dataset.labels) ** 2))


def agreement_cross_entropy(model_cfg: mdl.ModelConfig, params: mdl.ModelParams,
                            dataset: Dataset) -> float:
    """Mean cross-entropy between annotation distributions and model outputs:
    -(1/n) sum_i sum_j p_j(x_i) log f_j(x_i), with the usual probability clamp.

    Bounded below by the mean soft-label entropy, with equality exactly when
    the model reproduces the annotation distribution.
    """
    if dataset.soft_labels is None:
        raise InputError("agreement_cross_entropy needs soft labels")
    probs = mdl.forward(model_cfg, params, dataset.inputs, "eval")
    if probs.shape[1] != dataset.soft_labels.shape[1]:
        raise InputError(
            f"model outputs {probs.shape[1]} classes but soft labels have "
            f"{dataset.soft_labels.shape[1]}"
        )
    logs = np.log(np.clip(probs, PROB_CLAMP, 1.0))
    return float(-np.mean(np.sum(dataset.soft_labels * logs, axis=1)))


def local_smoothness_probe(
    model_cfg: mdl.ModelConfig,
    params: mdl.ModelParams,
    dataset: Dataset,
    eps: float,
    samples_per_point: int,
    seed: int,
) -> float:
    """Mean over examples of the worst divergence seen among uniform samples in
    the L-inf eps-ball around each embedding.

    Sample offsets are unit-cube draws scaled by eps, so growing eps with the
    same seed pushes the same sample directions outward.
    """
    if eps < 0 or samples_per_point < 1:
        raise InputError("need eps >= 0 and samples_per_point >= 1")
    emb = mdl.embed(model_cfg, params, dataset.inputs)
    clean = mdl.forward_from_embedding(model_cfg, params, emb, "eval")
    kind = smooth_kind_for(model_cfg.task)
    rng = Rng(seed)
    worst = np.zeros(len(dataset))
    for _ in range(samples_per_point):
        offsets = (2.0 * rng.uniform(emb.shape) - 1.0) * eps
        out = mdl.forward_from_embedding(model_cfg, params, emb + offsets, "eval")
        worst = np.maximum(worst, smooth_loss_rows(kind, out, clean))
    return float(np.mean(worst))


def decision_boundary_grid(
    model_cfg: mdl.ModelConfig,
    params: mdl.ModelParams,
    bounds: tuple[float, float, float, float],
    resolution: int,
) -> np.ndarray:
    """(resolution^2, 3) table of (x0, x1, probability of class 1), row-major
    over the bounds rectangle (x0 varies slowest)."""
    if model_cfg.arch != "mlp" or model_cfg.input_dim != 2 \
            or model_cfg.task != "classification":
        raise InputError("decision boundary needs a 2-input classification model")
    if resolution < 2:
        raise InputError("resolution must be >= 2")
    x0_lo, x0_hi, x1_lo, x1_hi = bounds
    xs = np.linspace(x0_lo, x0_hi, resolution)
    ys = np.linspace(x1_lo, x1_hi, resolution)
    grid = np.array([[a, b] for a in xs for b in ys])
    probs = mdl.forward(model_cfg, params, grid, "eval")
    return np.column_stack([grid, probs[:, 1]])
