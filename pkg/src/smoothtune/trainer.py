"""Training loops: smoothness-regularized proximal fine-tuning and the plain baseline.

Each update builds one objective tape: task loss, plus (when active) the
smoothness penalty at fixed adversarial points and the trust-region divergence
from the teacher. Terms with zero coefficient contribute no tape nodes at all,
so the regularized loop with both weights at zero is bit-for-bit the baseline
loop: same batches, same dropout masks, same updates, same records.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import model as mdl
from .adversarial import AdvConfig, PassCounters, build_smoothness_term, find_adversarial
from .autodiff import Tape, Var
from .checkpoint import (
    CHECKPOINT_VERSION,
    model_config_from_obj,
    model_config_to_obj,
    read_json,
    tensors_from_obj,
    tensors_to_obj,
    write_json,
)
from .data import Dataset
from .errors import CheckpointError, ContractViolation
from .losses import smooth_kind_for, smooth_loss_mean_node, task_kind_for, task_loss_mean_node
from .optimizer import (
    AdamState,
    ProxConfig,
    TeacherState,
    adam_step,
    beta_at,
    clip_gradients,
    global_grad_norm,
    init_adam,
    lr_at,
    teacher_update,
)
from .tensor import Rng

# rng stream tags; fixed so checkpoints replay
_STREAM_TAGS = {"batch": 1, "dropout": 2, "noise": 3}
_BALL_SLACK = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    """Everything one run needs besides the model config and the data."""

    reg_weight: float = 1.0          # weight on the smoothness penalty
    adv: AdvConfig = AdvConfig()
    prox: ProxConfig = ProxConfig()
    inner_steps: int = 1             # updates per outer iteration
    outer_steps: int = 100           # outer iterations
    batch_size: int = 32
    peak_lr: float = 1e-3
    warmup_frac: float = 0.1
    clip_norm: float = 1.0
    seed: int = 0
    reg_detach_clean: bool = False   # ablation: freeze the clean branch of the penalty

    def __post_init__(self):
        if self.reg_weight < 0:
            raise ContractViolation("reg_weight must be >= 0")
        if self.inner_steps < 1 or self.outer_steps < 1:
            raise ContractViolation("inner_steps and outer_steps must be >= 1")
        if self.batch_size < 1:
            raise ContractViolation("batch_size must be >= 1")
        if self.peak_lr <= 0:
            raise ContractViolation("peak_lr must be > 0")
        if not 0 < self.warmup_frac < 1:
            raise ContractViolation("warmup_frac must lie in (0, 1)")
        if self.clip_norm <= 0:
            raise ContractViolation("clip_norm must be > 0")

    @property
    def total_updates(self) -> int:
        return self.outer_steps * self.inner_steps


@dataclass(frozen=True)
class TrainRecord:
    step: int
    lr: float
    beta: float
    task_loss: float
    reg_loss: float | None
    breg_loss: float | None
    total: float
    grad_norm: float


@dataclass(frozen=True)
class PerturbationEvent:
    outer_step: int
    inner_step: int
    embedding: np.ndarray
    adversarial: np.ndarray
    eps: float
    norm: str


@dataclass
class TrainState:
    model_cfg: mdl.ModelConfig
    cfg: TrainConfig
    smart: bool                       # regularized method vs baseline
    params: mdl.ModelParams
    teacher: TeacherState | None
    adam: AdamState
    streams: dict[str, Rng]
    outer_t: int = 0                  # completed outer iterations
    global_step: int = 0              # completed updates
    counters: PassCounters = dataclasses.field(default_factory=PassCounters)
    sampler_perm: np.ndarray | None = None
    sampler_cursor: int = 0


@dataclass
class TrainResult:
    params: mdl.ModelParams
    records: list[TrainRecord]
    state: TrainState


@dataclass
class Objective:
    tape: Tape
    total: Var
    task: Var
    reg: Var | None
    breg: Var | None
    pvars: dict[str, Var]
    embedding: np.ndarray
    adversarial: np.ndarray | None


def init_train_state(
    model_cfg: mdl.ModelConfig,
    cfg: TrainConfig,
    initial: mdl.ModelParams,
    smart: bool,
) -> TrainState:
    master = Rng(cfg.seed)
    streams = {name: master.child(tag) for name, tag in _STREAM_TAGS.items()}
    use_teacher = smart and cfg.prox.effective_weight > 0
    return TrainState(
        model_cfg=model_cfg,
        cfg=cfg,
        smart=smart,
        params=mdl.copy_params(initial),
        teacher=TeacherState(mdl.copy_params(initial)) if use_teacher else None,
        adam=init_adam(initial),
        streams=streams,
    )


def build_iteration_objective(
    model_cfg: mdl.ModelConfig,
    cfg: TrainConfig,
    params: mdl.ModelParams,
    teacher_params: mdl.ModelParams | None,
    xs: np.ndarray,
    ys: np.ndarray,
    *,
    smart: bool,
    masks: list[np.ndarray] | None = None,
    noise_rng: Rng | None = None,
    counters: PassCounters | None = None,
    adversarial_points: np.ndarray | None = None,
) -> Objective:
    """One update's objective on a single tape.

    The clean forward is computed once and shared by the task loss, the inner
    ascent target, and the smoothness term. Adversarial points enter as
    constants; teacher outputs come from a deterministic forward and likewise
    stay constant under differentiation.
    """
    reg_on = smart and cfg.reg_weight > 0
    breg_on = smart and cfg.prox.effective_weight > 0 and teacher_params is not None
    tape = Tape()
    pvars = mdl.leaf_params(tape, params, requires_grad=True)
    emb = mdl.build_embed(tape, model_cfg, pvars, xs)
    outputs = mdl.build_head(tape, model_cfg, pvars, emb, masks)
    if counters is not None:
        counters.forwards += 1
    task = task_loss_mean_node(task_kind_for(model_cfg.task), outputs, ys)
    total = task
    reg = breg = None
    x_adv = None
    if reg_on:
        if adversarial_points is not None:
            x_adv = adversarial_points
        else:
            if noise_rng is None:
                raise ContractViolation("active smoothness term needs a noise rng")
            x_adv = find_adversarial(
                model_cfg, params, emb.value, outputs.value, cfg.adv,
                noise_rng, masks, counters,
            )
        clean_branch = ad.stop_gradient(outputs) if cfg.reg_detach_clean else outputs
        reg = build_smoothness_term(tape, model_cfg, pvars, clean_branch, x_adv,
                                    masks, counters)
        total = ad.add(total, ad.cmul(reg, cfg.reg_weight))
    if breg_on:
        teacher_out = mdl.forward(model_cfg, teacher_params, xs, "eval")
        if counters is not None:
            counters.forwards += 1
        breg = smooth_loss_mean_node(
            smooth_kind_for(model_cfg.task), outputs, tape.const(teacher_out)
        )
        total = ad.add(total, ad.cmul(breg, cfg.prox.effective_weight))
    return Objective(tape=tape, total=total, task=task, reg=reg, breg=breg,
                     pvars=pvars, embedding=emb.value, adversarial=x_adv)


def iteration_objective(state: TrainState, xs: np.ndarray, ys: np.ndarray,
                        masks: list[np.ndarray] | None = None) -> Objective:
    """Objective at the state's current parameters (consumes the noise stream)."""
    return build_iteration_objective(
        state.model_cfg, state.cfg, state.params,
        state.teacher.params if state.teacher is not None else None,
        xs, ys, smart=state.smart, masks=masks,
        noise_rng=state.streams["noise"], counters=state.counters,
    )


def _next_batch(state: TrainState, n: int) -> np.ndarray:
    """Consecutive slices of a per-epoch shuffle; reshuffles when a full batch
    no longer fits (partial tail batches are dropped)."""
    bs = min(state.cfg.batch_size, n)
    if state.sampler_perm is None or state.sampler_cursor + bs > len(state.sampler_perm):
        state.sampler_perm = state.streams["batch"].permutation(n)
        state.sampler_cursor = 0
    idx = state.sampler_perm[state.sampler_cursor:state.sampler_cursor + bs]
    state.sampler_cursor += bs
    return idx


def _audit_perturbation(
    obj: Objective,
    cfg: TrainConfig,
    t: int,
    s: int,
    hook: Callable[[PerturbationEvent], None] | None,
) -> None:
    d = obj.adversarial - obj.embedding
    flat = np.abs(d).reshape(d.shape[0], -1)
    per_ex = flat.max(axis=1) if cfg.adv.norm == "inf" else np.sqrt((flat * flat).sum(axis=1))
    worst = float(per_ex.max()) if per_ex.size else 0.0
    if worst > cfg.adv.eps + _BALL_SLACK:
        raise ContractViolation(
            f"perturbation left the ball at iteration {t}.{s}: "
            f"{worst} > {cfg.adv.eps} + {_BALL_SLACK}"
        )
    if hook is not None:
        hook(PerturbationEvent(outer_step=t, inner_step=s, embedding=obj.embedding,
                               adversarial=obj.adversarial, eps=cfg.adv.eps,
                               norm=cfg.adv.norm))


def _check_dataset(model_cfg: mdl.ModelConfig, dataset: Dataset) -> None:
    if len(dataset) == 0:
        raise ContractViolation("dataset is empty")
    if dataset.task != model_cfg.task:
        raise ContractViolation(
            f"dataset task {dataset.task!r} does not match model task {model_cfg.task!r}"
        )
    expected_kind = "tokens" if model_cfg.arch == "transformer" else "vector"
    if dataset.input_kind != expected_kind:
        raise ContractViolation(
            f"model arch {model_cfg.arch!r} needs {expected_kind!r} inputs, "
            f"dataset has {dataset.input_kind!r}"
        )


def _run(
    dataset: Dataset,
    state: TrainState,
    *,
    perturbation_hook: Callable[[PerturbationEvent], None] | None = None,
    checkpoint_path: str | None = None,
    checkpoint_every: int = 0,
    stop_after: int | None = None,
) -> TrainResult:
    model_cfg, cfg = state.model_cfg, state.cfg
    _check_dataset(model_cfg, dataset)
    n = len(dataset)
    records: list[TrainRecord] = []
    last = cfg.outer_steps if stop_after is None else min(stop_after, cfg.outer_steps)
    for t in range(state.outer_t + 1, last + 1):
        beta = beta_at(t, cfg.outer_steps, cfg.prox)
        for s in range(1, cfg.inner_steps + 1):
            idx = _next_batch(state, n)
            xs, ys = dataset.inputs[idx], dataset.labels[idx]
            masks = None
            if model_cfg.dropout > 0:
                masks = mdl.draw_dropout_masks(model_cfg, len(idx), state.streams["dropout"])
            obj = build_iteration_objective(
                model_cfg, cfg, state.params,
                state.teacher.params if state.teacher is not None else None,
                xs, ys, smart=state.smart, masks=masks,
                noise_rng=state.streams["noise"], counters=state.counters,
            )
            if obj.adversarial is not None:
                _audit_perturbation(obj, cfg, t, s, perturbation_hook)
            grad_map = obj.tape.backward(obj.total)
            state.counters.backwards += 1
            grads = {name: grad_map[var] for name, var in obj.pvars.items()}
            grad_norm = global_grad_norm(grads)
            grads = clip_gradients(grads, cfg.clip_norm)
            state.global_step += 1
            lr = lr_at(state.global_step, cfg.total_updates, cfg.peak_lr, cfg.warmup_frac)
            state.params = adam_step(state.adam, state.params, grads, lr)
            records.append(TrainRecord(
                step=state.global_step, lr=lr, beta=beta,
                task_loss=float(obj.task.value),
                reg_loss=None if obj.reg is None else float(obj.reg.value),
                breg_loss=None if obj.breg is None else float(obj.breg.value),
                total=float(obj.total.value), grad_norm=grad_norm,
            ))
        if state.teacher is not None:
            state.teacher = teacher_update(state.teacher, state.params, beta)
        state.outer_t = t
        if checkpoint_path and checkpoint_every and t % checkpoint_every == 0 \
                and t < cfg.outer_steps:
            save_train_checkpoint(checkpoint_path, state)
    return TrainResult(params=state.params, records=records, state=state)


def continue_training(
    state: TrainState,
    dataset: Dataset,
    *,
    perturbation_hook: Callable[[PerturbationEvent], None] | None = None,
    checkpoint_path: str | None = None,
    checkpoint_every: int = 0,
    stop_after: int | None = None,
) -> TrainResult:
    """Advance an existing state, optionally pausing after a given outer step;
    segmented runs traverse exactly the trajectory of an unpaused one."""
    return _run(dataset, state, perturbation_hook=perturbation_hook,
                checkpoint_path=checkpoint_path, checkpoint_every=checkpoint_every,
                stop_after=stop_after)


def smooth_finetune(
    model_cfg: mdl.ModelConfig,
    cfg: TrainConfig,
    dataset: Dataset,
    initial: mdl.ModelParams,
    *,
    perturbation_hook: Callable[[PerturbationEvent], None] | None = None,
    checkpoint_path: str | None = None,
    checkpoint_every: int = 0,
) -> TrainResult:
    """Run the full regularized proximal loop; deterministic in (config, seed, data)."""
    state = init_train_state(model_cfg, cfg, initial, smart=True)
    return _run(dataset, state, perturbation_hook=perturbation_hook,
                checkpoint_path=checkpoint_path, checkpoint_every=checkpoint_every)


def vanilla_finetune(
    model_cfg: mdl.ModelConfig,
    cfg: TrainConfig,
    dataset: Dataset,
    initial: mdl.ModelParams,
    *,
    checkpoint_path: str | None = None,
    checkpoint_every: int = 0,
) -> TrainResult:
    """Same loop with the penalty terms structurally absent: the control arm."""
    state = init_train_state(model_cfg, cfg, initial, smart=False)
    return _run(dataset, state, checkpoint_path=checkpoint_path,
                checkpoint_every=checkpoint_every)


def expected_pass_counts(cfg: TrainConfig, smart: bool) -> tuple[int, int]:
    """Analytic whole-batch forward/backward counts for ONE update, from the
    computation graph: one clean forward and one objective backward always;
    an active smoothness term adds one forward+backward per ascent step plus
    the forward at the final points; an active trust region adds the teacher
    forward."""
    forwards, backwards = 1, 1
    if smart and cfg.reg_weight > 0:
        forwards += cfg.adv.steps + 1
        backwards += cfg.adv.steps
    if smart and cfg.prox.effective_weight > 0:
        forwards += 1
    return forwards, backwards


# ---------------------------------------------------------------------------
# Records CSV
# ---------------------------------------------------------------------------

def records_csv_lines(records: list[TrainRecord]) -> list[str]:
    """CSV rows; the penalty columns appear only when the run produced them."""
    with_penalties = any(r.reg_loss is not None or r.breg_loss is not None for r in records)
    if with_penalties:
        lines = ["step,lr,beta,task_loss,reg_loss,breg_loss,total,grad_norm"]
        for r in records:
            reg = "" if r.reg_loss is None else repr(r.reg_loss)
            breg = "" if r.breg_loss is None else repr(r.breg_loss)
            lines.append(f"{r.step},{r.lr!r},{r.beta!r},{r.task_loss!r},"
                         f"{reg},{breg},{r.total!r},{r.grad_norm!r}")
    else:
        lines = ["step,lr,beta,task_loss,total,grad_norm"]
        for r in records:
            lines.append(f"{r.step},{r.lr!r},{r.beta!r},{r.task_loss!r},"
                         f"{r.total!r},{r.grad_norm!r}")
    return lines


def write_records_csv(path: str, records: list[TrainRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(records_csv_lines(records)) + "\n")


# ---------------------------------------------------------------------------
# Train-state checkpointing
# ---------------------------------------------------------------------------

def _train_config_to_obj(cfg: TrainConfig) -> dict:
    return dataclasses.asdict(cfg)


def _train_config_from_obj(obj: dict) -> TrainConfig:
    try:
        obj = dict(obj)
        obj["adv"] = AdvConfig(**obj["adv"])
        obj["prox"] = ProxConfig(**obj["prox"])
        return TrainConfig(**obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed train config: {exc}") from exc


def save_train_checkpoint(path: str, state: TrainState) -> None:
    write_json(path, {
        "version": CHECKPOINT_VERSION,
        "config": model_config_to_obj(state.model_cfg),
        "tensors": tensors_to_obj(state.params),
        "train_state": {
            "smart": state.smart,
            "train_config": _train_config_to_obj(state.cfg),
            "adam": {
                "m": tensors_to_obj(state.adam.m),
                "v": tensors_to_obj(state.adam.v),
                "t": state.adam.t,
            },
            "teacher": None if state.teacher is None else tensors_to_obj(state.teacher.params),
            "streams": {name: list(rng.state()) for name, rng in state.streams.items()},
            "outer_t": state.outer_t,
            "global_step": state.global_step,
            "counters": [state.counters.forwards, state.counters.backwards],
            "sampler": {
                "perm": None if state.sampler_perm is None else state.sampler_perm.tolist(),
                "cursor": state.sampler_cursor,
            },
        },
    })


def resume_from_checkpoint(path: str) -> TrainState:
    document = read_json(path)
    for key in ("config", "tensors", "train_state"):
        if key not in document:
            raise CheckpointError(f"cannot load {path}: missing section {key!r}")
    ts = document["train_state"]
    try:
        model_cfg = model_config_from_obj(document["config"])
        cfg = _train_config_from_obj(ts["train_config"])
        adam = AdamState(
            m=tensors_from_obj(ts["adam"]["m"]),
            v=tensors_from_obj(ts["adam"]["v"]),
            t=int(ts["adam"]["t"]),
        )
        teacher = None if ts["teacher"] is None \
            else TeacherState(tensors_from_obj(ts["teacher"]))
        streams = {name: Rng.from_state(st) for name, st in ts["streams"].items()}
        if set(streams) != set(_STREAM_TAGS):
            raise CheckpointError(f"cannot load {path}: unexpected rng streams")
        sampler = ts["sampler"]
        perm = None if sampler["perm"] is None \
            else np.asarray(sampler["perm"], dtype=np.int64)
        counters = PassCounters(int(ts["counters"][0]), int(ts["counters"][1]))
        return TrainState(
            model_cfg=model_cfg, cfg=cfg, smart=bool(ts["smart"]),
            params=tensors_from_obj(document["tensors"]),
            teacher=teacher, adam=adam, streams=streams,
            outer_t=int(ts["outer_t"]), global_step=int(ts["global_step"]),
            counters=counters, sampler_perm=perm,
            sampler_cursor=int(sampler["cursor"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"cannot load {path}: {exc}") from exc


def resume_training(
    path: str,
    dataset: Dataset,
    *,
    perturbation_hook: Callable[[PerturbationEvent], None] | None = None,
    checkpoint_path: str | None = None,
    checkpoint_every: int = 0,
) -> TrainResult:
    """Continue a checkpointed run; the completed trajectory matches an
    uninterrupted one bit for bit."""
    state = resume_from_checkpoint(path)
    return _run(dataset, state, perturbation_hook=perturbation_hook,
                checkpoint_path=checkpoint_path, checkpoint_every=checkpoint_every)
