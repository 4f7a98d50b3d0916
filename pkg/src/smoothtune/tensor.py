"""Dense float64 tensors, a counter-based deterministic RNG, and stable numeric primitives.

Tensors are plain numpy float64 arrays in row-major (C) order; numpy supplies the
arithmetic while this module pins down the contracts (shape rules, stability,
determinism) the rest of the package relies on.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation

Tensor = np.ndarray


def as_tensor(data) -> Tensor:
    """Coerce to a float64 C-order array (0-d stays 0-d)."""
    a = np.asarray(data, dtype=np.float64)
    if a.ndim and not a.flags.c_contiguous:
        a = np.ascontiguousarray(a)
    return a


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ContractViolation(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    return a + b


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    return a - b


def scalar_mul(c: float, a: Tensor) -> Tensor:
    return c * a


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")
    return a * b


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Row-major matrix product of 2-D tensors."""
    if a.ndim != 2 or b.ndim != 2:
        raise ContractViolation(f"matmul: expected 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ContractViolation(f"matmul: inner dimensions differ, {a.shape} vs {b.shape}")
    return a @ b


def relu(a: Tensor) -> Tensor:
    return np.maximum(a, 0.0)


def tanh(a: Tensor) -> Tensor:
    return np.tanh(a)


def softmax_row(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by subtracting the row maximum."""
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def linf_norm(x: Tensor) -> float:
    """Max absolute entry; 0 for an all-zero (or empty) tensor."""
    return float(np.max(np.abs(x))) if x.size else 0.0


def l2_norm(x: Tensor) -> float:
    return float(np.sqrt(np.sum(x * x)))


# ---------------------------------------------------------------------------
# Deterministic RNG
# ---------------------------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_CHILD_SALT = np.uint64(0x632BE59BD9B4E019)
_U53 = float(1 << 53)


def _mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, vectorized over uint64 (wrapping arithmetic)."""
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """Counter-based generator: draw i of stream `seed` is mix64(seed + (i+1)*GOLDEN).

    The mapping from (seed, counter) to output bits, the [0,1) uniform derivation
    (top 53 bits / 2^53), the Box-Muller Gaussian derivation, and the Fisher-Yates
    shuffle below are fixed forever so that checkpoints and experiments replay
    exactly. State is just (seed, counter); both serialize as plain integers.
    """

    __slots__ = ("seed", "counter")

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = int(counter)

    def _next_block(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix64(np.uint64(self.seed) + idx * _GOLDEN)

    def uniform(self, shape=()) -> Tensor:
        """i.i.d. uniforms in [0, 1)."""
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        u = (self._next_block(n) >> np.uint64(11)).astype(np.float64) / _U53
        return u.reshape(shape) if shape else u[0]

    def gaussian(self, shape, sigma: float) -> Tensor:
        """i.i.d. N(0, sigma^2) via Box-Muller on consecutive uniform pairs.

        sigma = 0 returns zeros without consuming any draws.
        """
        if sigma < 0:
            raise ContractViolation(f"gaussian: sigma must be >= 0, got {sigma}")
        shape = tuple(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if sigma == 0.0:
            z = np.zeros(n)
        else:
            m = (n + 1) // 2
            # u1 in (0, 1] so log never sees 0
            u1 = ((self._next_block(m) >> np.uint64(11)).astype(np.float64) + 1.0) / _U53
            u2 = (self._next_block(m) >> np.uint64(11)).astype(np.float64) / _U53
            r = np.sqrt(-2.0 * np.log(u1))
            theta = 2.0 * np.pi * u2
            z = sigma * np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape) if shape else z[0]

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n), descending, j = draw mod (i+1)."""
        perm = np.arange(n, dtype=np.int64)
        if n < 2:
            return perm
        draws = self._next_block(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = int(draws[k] % np.uint64(i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def child(self, tag: int) -> "Rng":
        """Independently seeded child stream; deterministic in (seed, tag)."""
        with np.errstate(over="ignore"):
            s = _mix64((np.uint64(self.seed) ^ _CHILD_SALT) + np.uint64(tag) * _GOLDEN)
        return Rng(int(s))

    def clone(self) -> "Rng":
        return Rng(self.seed, self.counter)

    def state(self) -> tuple[int, int]:
        return (self.seed, self.counter)

    @classmethod
    def from_state(cls, state) -> "Rng":
        seed, counter = state
        return cls(seed, counter)


def gaussian_tensor(rng: Rng, shape, sigma: float) -> Tensor:
    """Tensor of i.i.d. N(0, sigma^2) entries drawn from `rng`."""
    return rng.gaussian(shape, sigma)
