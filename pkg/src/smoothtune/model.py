"""Model f(x; params): embedding layer plus an MLP or tiny transformer-encoder head.

The forward pass is split at the embedding boundary because input perturbations
are applied to embeddings, not raw tokens. For raw-vector inputs the embedding
is the identity, so perturbations land on the input itself. Classification
outputs are probability rows; regression outputs are one scalar per example.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .errors import ContractViolation, InputError
from .tensor import Rng, as_tensor

ModelParams = dict[str, np.ndarray]

_FF_MULT = 2  # feedforward width = _FF_MULT * embed_dim


@dataclass(frozen=True)
class ModelConfig:
    task: str = "classification"        # "classification" | "regression"
    classes: int = 2                    # classification only
    arch: str = "mlp"                   # "mlp" | "transformer"
    input_dim: int = 2                  # mlp: raw input width
    hidden: tuple[int, ...] = (16, 16)  # mlp hidden sizes; () = linear model
    embed_dim: int = 8                  # transformer fields
    heads: int = 2
    layers: int = 1
    max_len: int = 8
    vocab_size: int = 16
    dropout: float = 0.1
    activation: str = "tanh"            # hidden nonlinearity: "tanh" | "relu"

    def __post_init__(self):
        if self.task not in ("classification", "regression"):
            raise ContractViolation(f"unknown task {self.task!r}")
        if self.arch not in ("mlp", "transformer"):
            raise ContractViolation(f"unknown arch {self.arch!r}")
        if self.task == "classification" and self.classes < 2:
            raise ContractViolation("classification needs at least 2 classes")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractViolation("dropout must lie in [0, 1)")
        if self.arch == "transformer" and self.embed_dim % self.heads != 0:
            raise ContractViolation(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}"
            )
        if self.activation not in ("tanh", "relu"):
            raise ContractViolation(f"unknown activation {self.activation!r}")

    @property
    def out_dim(self) -> int:
        return self.classes if self.task == "classification" else 1


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Block names and shapes; a pure function of the config."""
    shapes: dict[str, tuple[int, ...]] = {}
    if config.arch == "mlp":
        dims = [config.input_dim, *config.hidden, config.out_dim]
        for i in range(len(dims) - 1):
            shapes[f"layer{i}.weight"] = (dims[i], dims[i + 1])
            shapes[f"layer{i}.bias"] = (dims[i + 1],)
    else:
        d = config.embed_dim
        shapes["embed.table"] = (config.vocab_size, d)
        for i in range(config.layers):
            p = f"block{i}"
            shapes[f"{p}.ln1.gain"] = (d,)
            shapes[f"{p}.ln1.bias"] = (d,)
            for name in ("wq", "wk", "wv", "wo"):
                shapes[f"{p}.attn.{name}"] = (d, d)
            for name in ("bq", "bk", "bv", "bo"):
                shapes[f"{p}.attn.{name}"] = (d,)
            shapes[f"{p}.ln2.gain"] = (d,)
            shapes[f"{p}.ln2.bias"] = (d,)
            shapes[f"{p}.ff.w1"] = (d, _FF_MULT * d)
            shapes[f"{p}.ff.b1"] = (_FF_MULT * d,)
            shapes[f"{p}.ff.w2"] = (_FF_MULT * d, d)
            shapes[f"{p}.ff.b2"] = (d,)
        shapes["out_ln.gain"] = (d,)
        shapes["out_ln.bias"] = (d,)
        shapes["head.weight"] = (d, config.out_dim)
        shapes["head.bias"] = (config.out_dim,)
    return shapes


def init_params(config: ModelConfig, rng: Rng) -> ModelParams:
    """Gaussian weights at scale 1/sqrt(fan_in), zero biases, unit norm gains.

    Blocks are drawn in param_shapes order from a single stream, so equal seeds
    give identical parameters.
    """
    params: ModelParams = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".gain"):
            params[name] = np.ones(shape)
        elif len(shape) == 1:
            params[name] = np.zeros(shape)
        elif name == "embed.table":
            params[name] = rng.gaussian(shape, 1.0 / np.sqrt(shape[1]))
        else:
            params[name] = rng.gaussian(shape, 1.0 / np.sqrt(shape[0]))
    return params


def params_axpy(a: float, x: ModelParams, b: float, y: ModelParams) -> ModelParams:
    """Blockwise a*x + b*y over two parameter sets with equal structure."""
    if list(x.keys()) != list(y.keys()):
        raise ContractViolation("params_axpy: block structure mismatch")
    out: ModelParams = {}
    for name, block in x.items():
        if block.shape != y[name].shape:
            raise ContractViolation(
                f"params_axpy: block {name} shape {block.shape} vs {y[name].shape}"
            )
        out[name] = a * block + b * y[name]
    return out


def copy_params(params: ModelParams) -> ModelParams:
    return {name: block.copy() for name, block in params.items()}


def sinusoidal_positions(max_len: int, dim: int) -> np.ndarray:
    """Fixed sin/cos position table, rows = positions."""
    pos = np.arange(max_len)[:, None].astype(np.float64)
    i = np.arange(dim)[None, :].astype(np.float64)
    angle = pos / np.power(10000.0, 2.0 * np.floor(i / 2.0) / dim)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table


# ---------------------------------------------------------------------------
# Dropout plumbing
# ---------------------------------------------------------------------------

def dropout_site_shapes(config: ModelConfig, n: int) -> list[tuple[int, ...]]:
    """Activation shapes that receive dropout, in application order."""
    if config.arch == "mlp":
        return [(n, h) for h in config.hidden]
    return [(n, config.embed_dim)]  # pooled representation before the head


def draw_dropout_masks(config: ModelConfig, n: int, rng: Rng) -> list[np.ndarray] | None:
    """Pre-scaled inverted-dropout masks (entries 0 or 1/keep), or None when rate is 0.

    Sharing one mask set between two forwards on equal-sized batches makes the
    two passes differ only through their inputs.
    """
    rate = config.dropout
    if rate == 0.0:
        return None
    keep = 1.0 - rate
    masks = []
    for shape in dropout_site_shapes(config, n):
        u = rng.uniform(shape)
        masks.append(np.where(u < rate, 0.0, 1.0 / keep))
    return masks


# ---------------------------------------------------------------------------
# Tape-level forward builders
# ---------------------------------------------------------------------------

def _check_token_inputs(config: ModelConfig, ids: np.ndarray) -> np.ndarray:
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise InputError("token inputs must be integers")
    if ids.ndim != 2:
        raise InputError(f"token inputs must be [batch, seq], got shape {ids.shape}")
    if ids.shape[1] > config.max_len:
        raise InputError(f"sequence length {ids.shape[1]} exceeds max_len {config.max_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        raise InputError(
            f"token id out of range [0, {config.vocab_size}): "
            f"min {ids.min()}, max {ids.max()}"
        )
    return ids


def build_embed(tape: Tape, config: ModelConfig, pvars: dict[str, Var], inputs) -> Var:
    """Clean-branch embedding on the tape: the tensor perturbations are applied to.

    For raw vectors this is the identity; for tokens it is the table lookup.
    Position encodings are added inside the head, so perturbing the lookup is
    the same as perturbing the encoder input up to a constant shift.
    """
    if config.arch == "mlp":
        x = as_tensor(inputs)
        if x.ndim != 2 or x.shape[1] != config.input_dim:
            raise InputError(
                f"raw inputs must be [batch, {config.input_dim}], got {x.shape}"
            )
        return tape.const(x)
    ids = _check_token_inputs(config, inputs)
    return ad.gather_rows(pvars["embed.table"], ids)


def build_head(
    tape: Tape,
    config: ModelConfig,
    pvars: dict[str, Var],
    emb: Var,
    masks: list[np.ndarray] | None = None,
) -> Var:
    """Forward from an embedded batch to probabilities [n, k] or predictions [n]."""
    act = ad.tanh if config.activation == "tanh" else ad.relu
    if config.arch == "mlp":
        h = emb
        n_hidden = len(config.hidden)
        for i in range(n_hidden):
            h = act(ad.add_broadcast(ad.matmul(h, pvars[f"layer{i}.weight"]),
                                     pvars[f"layer{i}.bias"]))
            if masks is not None:
                h = ad.mul_const(h, masks[i])
        logits = ad.add_broadcast(
            ad.matmul(h, pvars[f"layer{n_hidden}.weight"]), pvars[f"layer{n_hidden}.bias"]
        )
    else:
        n, seq = emb.value.shape[0], emb.value.shape[1]
        d, heads = config.embed_dim, config.heads
        hd = d // heads
        pos = sinusoidal_positions(config.max_len, d)[:seq]
        h = ad.add_broadcast(emb, emb.tape.const(pos))
        for i in range(config.layers):
            p = f"block{i}"
            # pre-LN self-attention with residual
            x = ad.layer_norm(h, pvars[f"{p}.ln1.gain"], pvars[f"{p}.ln1.bias"])
            q = ad.add_broadcast(ad.matmul(x, pvars[f"{p}.attn.wq"]), pvars[f"{p}.attn.bq"])
            k = ad.add_broadcast(ad.matmul(x, pvars[f"{p}.attn.wk"]), pvars[f"{p}.attn.bk"])
            v = ad.add_broadcast(ad.matmul(x, pvars[f"{p}.attn.wv"]), pvars[f"{p}.attn.bv"])
            q = ad.swapaxes(ad.reshape(q, (n, seq, heads, hd)), 1, 2)
            k = ad.swapaxes(ad.reshape(k, (n, seq, heads, hd)), 1, 2)
            v = ad.swapaxes(ad.reshape(v, (n, seq, heads, hd)), 1, 2)
            scores = ad.cmul(ad.matmul(q, ad.swapaxes(k, -1, -2)), 1.0 / np.sqrt(hd))
            ctx = ad.matmul(ad.softmax(scores), v)
            ctx = ad.reshape(ad.swapaxes(ctx, 1, 2), (n, seq, d))
            attn = ad.add_broadcast(ad.matmul(ctx, pvars[f"{p}.attn.wo"]),
                                    pvars[f"{p}.attn.bo"])
            h = ad.add(h, attn)
            # pre-LN feedforward with residual
            x = ad.layer_norm(h, pvars[f"{p}.ln2.gain"], pvars[f"{p}.ln2.bias"])
            x = act(ad.add_broadcast(ad.matmul(x, pvars[f"{p}.ff.w1"]), pvars[f"{p}.ff.b1"]))
            x = ad.add_broadcast(ad.matmul(x, pvars[f"{p}.ff.w2"]), pvars[f"{p}.ff.b2"])
            h = ad.add(h, x)
        h = ad.layer_norm(h, pvars["out_ln.gain"], pvars["out_ln.bias"])
        pooled = ad.mean_axis(h, 1)
        if masks is not None:
            pooled = ad.mul_const(pooled, masks[0])
        logits = ad.add_broadcast(ad.matmul(pooled, pvars["head.weight"]), pvars["head.bias"])
    if config.task == "classification":
        return ad.softmax(logits)
    return ad.reshape(logits, (logits.value.shape[0],))


def leaf_params(tape: Tape, params: ModelParams, requires_grad: bool = True) -> dict[str, Var]:
    """Enter every parameter block as a tape leaf."""
    return {name: tape.leaf(block, requires_grad=requires_grad)
            for name, block in params.items()}


# ---------------------------------------------------------------------------
# Eager (numpy-level) forwards: thin wrappers over the tape builders so the
# recorded and eager paths are the same code, bit for bit.
# ---------------------------------------------------------------------------

def _resolve_masks(config, n, mode, rng, masks):
    if mode == "eval":
        return None
    if mode != "train":
        raise ContractViolation(f"mode must be 'train' or 'eval', got {mode!r}")
    if masks is not None:
        return masks
    if config.dropout == 0.0:
        return None
    if rng is None:
        raise ContractViolation("train-mode forward with dropout needs an rng or masks")
    return draw_dropout_masks(config, n, rng)


def embed(config: ModelConfig, params: ModelParams, inputs) -> np.ndarray:
    """Embedding of a batch: identity for raw vectors, table lookup + positions for tokens."""
    tape = Tape()
    pvars = leaf_params(tape, params, requires_grad=False)
    return build_embed(tape, config, pvars, inputs).value


def forward_from_embedding(
    config: ModelConfig,
    params: ModelParams,
    embedded: np.ndarray,
    mode: str = "eval",
    rng: Rng | None = None,
    masks: list[np.ndarray] | None = None,
) -> np.ndarray:
    tape = Tape()
    pvars = leaf_params(tape, params, requires_grad=False)
    masks = _resolve_masks(config, embedded.shape[0], mode, rng, masks)
    return build_head(tape, config, pvars, tape.const(embedded), masks).value


def forward(
    config: ModelConfig,
    params: ModelParams,
    inputs,
    mode: str = "eval",
    rng: Rng | None = None,
    masks: list[np.ndarray] | None = None,
) -> np.ndarray:
    """Fused embed + head; identical to calling the two stages separately."""
    tape = Tape()
    pvars = leaf_params(tape, params, requires_grad=False)
    emb = build_embed(tape, config, pvars, inputs)
    masks = _resolve_masks(config, emb.value.shape[0], mode, rng, masks)
    return build_head(tape, config, pvars, emb, masks).value
