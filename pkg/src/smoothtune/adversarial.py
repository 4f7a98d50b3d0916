"""Worst-case input search: noisy initialization plus projected gradient ascent
on the output divergence, confined to an eps-ball around each embedding.

The inner search treats parameters as constants; the outer objective treats the
returned points as constants (no differentiation through the search), so no
second-order machinery is ever needed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import model as mdl
from .autodiff import Tape
from .errors import ContractViolation
from .losses import smooth_kind_for, smooth_loss_mean_node, smooth_loss_rows
from .tensor import Rng, l2_norm, linf_norm


@dataclass(frozen=True)
class AdvConfig:
    eps: float = 1e-5        # ball radius
    noise_std: float = 1e-5  # std of the random start offset
    step_size: float = 1e-3  # ascent step per iteration
    steps: int = 1           # ascent iterations
    norm: str = "inf"        # "inf" | "two"

    def __post_init__(self):
        if self.eps < 0:
            raise ContractViolation("eps must be >= 0")
        if self.noise_std < 0:
            raise ContractViolation("noise_std must be >= 0")
        if self.step_size <= 0:
            raise ContractViolation("step_size must be > 0")
        if self.steps < 0:
            raise ContractViolation("steps must be >= 0")
        if self.norm not in ("inf", "two"):
            raise ContractViolation(f"norm must be 'inf' or 'two', got {self.norm!r}")
        if self.noise_std > self.eps:
            warnings.warn(
                f"noise_std {self.noise_std} exceeds eps {self.eps}; "
                "any value up to eps behaves well",
                stacklevel=2,
            )


class PassCounters:
    """Monotone counts of whole-batch model passes."""

    __slots__ = ("forwards", "backwards")

    def __init__(self, forwards: int = 0, backwards: int = 0):
        self.forwards = forwards
        self.backwards = backwards


def project_ball(x_tilde: np.ndarray, x: np.ndarray, eps: float, norm: str = "inf") -> np.ndarray:
    """Project one point back into the eps-ball around x."""
    if x_tilde.shape != x.shape:
        raise ContractViolation(f"project_ball: shape mismatch {x_tilde.shape} vs {x.shape}")
    if norm == "inf":
        return np.clip(x_tilde, x - eps, x + eps)
    d = x_tilde - x
    nrm = l2_norm(d)
    if nrm <= eps:
        return x_tilde.copy()
    return x + d * (eps / nrm)


def normalized_ascent_direction(grad: np.ndarray, norm: str = "inf") -> np.ndarray:
    """grad divided by its norm; the zero gradient maps to the zero step."""
    nrm = linf_norm(grad) if norm == "inf" else l2_norm(grad)
    if nrm == 0.0:
        return np.zeros_like(grad)
    return grad / nrm


def _rows_norm(d: np.ndarray, norm: str) -> np.ndarray:
    """Per-example norm over all non-batch axes, shaped for broadcasting."""
    flat = np.abs(d).reshape(d.shape[0], -1)
    n = np.max(flat, axis=1) if norm == "inf" else np.sqrt(np.sum(flat * flat, axis=1))
    return n.reshape((d.shape[0],) + (1,) * (d.ndim - 1))


def _normalize_rows(grad: np.ndarray, norm: str) -> np.ndarray:
    n = _rows_norm(grad, norm)
    return np.divide(grad, n, out=np.zeros_like(grad), where=n > 0)


def _project_rows(x_tilde: np.ndarray, x: np.ndarray, eps: float, norm: str) -> np.ndarray:
    if norm == "inf":
        return np.clip(x_tilde, x - eps, x + eps)
    d = x_tilde - x
    n = _rows_norm(d, "two")
    scale = np.where(n > eps, np.divide(eps, n, out=np.ones_like(n), where=n > 0), 1.0)
    return x + d * scale


def find_adversarial(
    model_cfg: mdl.ModelConfig,
    params: mdl.ModelParams,
    batch_embeddings: np.ndarray,
    clean_outputs: np.ndarray,
    cfg: AdvConfig,
    rng: Rng,
    masks: list[np.ndarray] | None = None,
    counters: PassCounters | None = None,
) -> np.ndarray:
    """Per-example worst-case points within the eps-ball around each embedding.

    Starts from x + noise, then takes `cfg.steps` normalized gradient-ascent
    steps on the divergence from the (cached) clean outputs, projecting back
    onto the ball after every step. Gradients are per example: each point
    climbs toward its own worst case.
    """
    x = batch_embeddings
    kind = smooth_kind_for(model_cfg.task)
    noise = rng.gaussian(x.shape, cfg.noise_std)
    x_adv = _project_rows(x + noise, x, cfg.eps, cfg.norm)
    for _ in range(cfg.steps):
        tape = Tape()
        pvars = mdl.leaf_params(tape, params, requires_grad=False)
        x_var = tape.leaf(x_adv, requires_grad=True)
        out = mdl.build_head(tape, model_cfg, pvars, x_var, masks)
        loss = smooth_loss_mean_node(kind, out, tape.const(clean_outputs))
        if counters is not None:
            counters.forwards += 1
            counters.backwards += 1
        grad = tape.backward(loss)[x_var]
        x_adv = _project_rows(
            x_adv + cfg.step_size * _normalize_rows(grad, cfg.norm), x, cfg.eps, cfg.norm
        )
    return x_adv


def build_smoothness_term(
    tape: Tape,
    model_cfg: mdl.ModelConfig,
    pvars: dict,
    clean_outputs_var,
    adversarial_points: np.ndarray,
    masks: list[np.ndarray] | None,
    counters: PassCounters | None = None,
):
    """Batch-mean divergence between outputs at fixed adversarial points and the
    clean outputs, on an existing tape. Parameter gradients flow through both
    branches; the points themselves enter as constants."""
    if counters is not None:
        counters.forwards += 1
    perturbed = mdl.build_head(
        tape, model_cfg, pvars, tape.const(adversarial_points), masks
    )
    kind = smooth_kind_for(model_cfg.task)
    return smooth_loss_mean_node(kind, perturbed, clean_outputs_var)


def smoothness_regularizer(
    model_cfg: mdl.ModelConfig,
    params: mdl.ModelParams,
    inputs,
    cfg: AdvConfig,
    rng: Rng,
    mode: str = "eval",
    masks: list[np.ndarray] | None = None,
) -> tuple[float, np.ndarray]:
    """Value of the smoothness penalty on one batch, with the points it used."""
    emb = mdl.embed(model_cfg, params, inputs)
    if mode == "train" and masks is None and model_cfg.dropout > 0:
        masks = mdl.draw_dropout_masks(model_cfg, emb.shape[0], rng)
    clean = mdl.forward_from_embedding(model_cfg, params, emb, "eval" if masks is None else "train",
                                       masks=masks)
    x_adv = find_adversarial(model_cfg, params, emb, clean, cfg, rng, masks)
    perturbed = mdl.forward_from_embedding(model_cfg, params, x_adv,
                                           "eval" if masks is None else "train", masks=masks)
    kind = smooth_kind_for(model_cfg.task)
    value = float(np.mean(smooth_loss_rows(kind, perturbed, clean)))
    return value, x_adv
