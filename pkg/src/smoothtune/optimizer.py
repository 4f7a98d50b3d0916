"""ADAM with global-norm gradient clipping, the warmup/linear-decay schedule,
the trust-region divergence between parameter settings, and the EMA teacher."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model as mdl
from .errors import ContractViolation
from .losses import smooth_kind_for, smooth_loss_rows

GradientMap = dict[str, np.ndarray]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    m: mdl.ModelParams
    v: mdl.ModelParams
    t: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS


def init_adam(params: mdl.ModelParams) -> AdamState:
    zeros = {name: np.zeros_like(block) for name, block in params.items()}
    return AdamState(m=zeros, v={name: z.copy() for name, z in zeros.items()})


def global_grad_norm(grads: GradientMap) -> float:
    """L2 norm over the concatenation of all blocks."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


def clip_gradients(grads: GradientMap, max_norm: float) -> GradientMap:
    """Scale all blocks together so the global L2 norm is at most max_norm."""
    if max_norm <= 0:
        raise ContractViolation("max_norm must be > 0")
    norm = global_grad_norm(grads)
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}


def lr_at(step: int, total_steps: int, peak: float, warmup_fraction: float) -> float:
    """Linear 0 -> peak over the first warmup_fraction of steps, then linear
    peak -> 0 over the rest. lr(0) = lr(total_steps) = 0."""
    if not 0 <= step <= total_steps:
        raise ContractViolation(f"step {step} outside [0, {total_steps}]")
    if not 0 < warmup_fraction < 1:
        raise ContractViolation("warmup_fraction must lie in (0, 1)")
    w = warmup_fraction * total_steps
    if step <= w:
        return peak * step / w
    return peak * (total_steps - step) / (total_steps - w)


def adam_step(
    state: AdamState, params: mdl.ModelParams, grads: GradientMap, lr: float
) -> mdl.ModelParams:
    """One bias-corrected ADAM update; advances the state in place."""
    if list(params.keys()) != list(state.m.keys()) or list(params.keys()) != list(grads.keys()):
        raise ContractViolation("adam_step: parameter/gradient structure mismatch")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    out: mdl.ModelParams = {}
    for name, p in params.items():
        g = grads[name]
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[name] / c1
        v_hat = state.v[name] / c2
        out[name] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out


# ---------------------------------------------------------------------------
# Trust region and EMA teacher
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProxConfig:
    prox_weight: float = 1.0   # trust-region strength; ignored when mode is "off"
    mode: str = "mbpp"         # "mbpp" (EMA teacher) | "vbpp" (previous iterate) | "off"
    ema_early: float = 0.99
    ema_late: float = 0.999
    ema_switch: float = 0.1    # fraction of outer steps run at ema_early

    def __post_init__(self):
        if self.mode not in ("mbpp", "vbpp", "off"):
            raise ContractViolation(f"mode must be mbpp/vbpp/off, got {self.mode!r}")
        if self.prox_weight < 0:
            raise ContractViolation("prox_weight must be >= 0")

    @property
    def effective_weight(self) -> float:
        return 0.0 if self.mode == "off" else self.prox_weight


@dataclass
class TeacherState:
    params: mdl.ModelParams


def teacher_update(teacher: TeacherState, current: mdl.ModelParams, beta: float) -> TeacherState:
    """Blockwise (1 - beta) * current + beta * teacher."""
    if not 0 <= beta < 1:
        raise ContractViolation(f"beta must lie in [0, 1), got {beta}")
    return TeacherState(params=mdl.params_axpy(1.0 - beta, current, beta, teacher.params))


def beta_at(outer_step: int, total: int, cfg: ProxConfig) -> float:
    """Teacher momentum for outer step t in 1..total; early value up to and
    including the switch boundary. vbpp pins the teacher to the previous
    iterate, which is the beta = 0 special case."""
    if not 1 <= outer_step <= total:
        raise ContractViolation(f"outer step {outer_step} outside [1, {total}]")
    if cfg.mode == "vbpp":
        return 0.0
    return cfg.ema_early if outer_step <= cfg.ema_switch * total else cfg.ema_late


def bregman_divergence(
    model_cfg: mdl.ModelConfig,
    params: mdl.ModelParams,
    teacher: TeacherState,
    inputs,
) -> float:
    """Mean output divergence between two parameter settings on the same clean
    inputs, with deterministic (eval-mode) forwards."""
    live = mdl.forward(model_cfg, params, inputs, "eval")
    ref = mdl.forward(model_cfg, teacher.params, inputs, "eval")
    kind = smooth_kind_for(model_cfg.task)
    return float(np.mean(smooth_loss_rows(kind, live, ref)))
