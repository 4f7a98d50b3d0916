"""Synthetic dataset generators, low-resource splitting, and dataset file IO.

Generators are pure functions of their parameters and seed; re-generation is
bit-identical. Files hold one self-contained JSON record per line with fields
"x" (reals) or "tokens" (non-negative ints), "y", and optional "p" (soft
label); a sidecar <path>.meta.json records provenance.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .tensor import Rng


@dataclass
class Dataset:
    task: str                               # "classification" | "regression"
    input_kind: str                         # "vector" | "tokens"
    inputs: np.ndarray                      # float [n, d] or int [n, L]
    labels: np.ndarray                      # int [n] or float [n]
    soft_labels: np.ndarray | None = None   # [n, k], rows on the simplex
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, idx: np.ndarray, provenance: dict | None = None) -> "Dataset":
        return Dataset(
            task=self.task,
            input_kind=self.input_kind,
            inputs=self.inputs[idx],
            labels=self.labels[idx],
            soft_labels=None if self.soft_labels is None else self.soft_labels[idx],
            provenance=provenance if provenance is not None else dict(self.provenance),
        )


def gen_two_moons(n: int, noise_std: float, seed: int) -> Dataset:
    """Two interleaved arcs: class 0 at (cos t, sin t), class 1 at
    (1 - cos t, 0.5 - sin t), t uniform on [0, pi], plus N(0, noise_std^2)."""
    if n < 2 or n % 2 != 0:
        raise InputError(f"n must be even and >= 2, got {n}")
    rng = Rng(seed)
    half = n // 2
    t0 = rng.uniform((half,)) * np.pi
    t1 = rng.uniform((half,)) * np.pi
    pts0 = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    pts1 = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    x = np.concatenate([pts0, pts1], axis=0) + rng.gaussian((n, 2), noise_std)
    y = np.concatenate([np.zeros(half, dtype=np.int64), np.ones(half, dtype=np.int64)])
    return Dataset(
        task="classification", input_kind="vector", inputs=x, labels=y,
        provenance={"generator": "two_moons", "n": n, "noise_std": noise_std, "seed": seed},
    )


def _cluster_centroids(classes: int, dim: int, separation: float, rng: Rng) -> np.ndarray:
    # axis-aligned when they fit (guaranteed pairwise distance separation*sqrt(2));
    # otherwise random directions at the same scale
    if classes <= dim:
        c = np.zeros((classes, dim))
        c[np.arange(classes), np.arange(classes)] = separation
        return c
    return rng.gaussian((classes, dim), separation)


def gen_cluster_classification(
    n: int, classes: int, dim: int, separation: float, noise: float, seed: int
) -> Dataset:
    """Labeled Gaussian clusters with exact posterior soft labels.

    Class counts differ by at most one; soft labels are the true mixture
    posteriors, so ambiguity grows as clusters overlap.
    """
    if n < classes or classes < 2 or dim < 1:
        raise InputError(f"invalid sizes n={n}, classes={classes}, dim={dim}")
    rng = Rng(seed)
    centroids = _cluster_centroids(classes, dim, separation, rng)
    counts = [n // classes + (1 if j < n % classes else 0) for j in range(classes)]
    y = np.concatenate([np.full(c, j, dtype=np.int64) for j, c in enumerate(counts)])
    x = centroids[y] + rng.gaussian((n, dim), 1.0) * noise
    soft = _mixture_posteriors(x, y, centroids, counts, noise, n)
    return Dataset(
        task="classification", input_kind="vector", inputs=x, labels=y, soft_labels=soft,
        provenance={"generator": "cluster", "n": n, "classes": classes, "dim": dim,
                    "separation": separation, "noise": noise, "seed": seed},
    )


def _mixture_posteriors(x, y, centroids, counts, noise, n) -> np.ndarray:
    if noise == 0.0:
        soft = np.zeros((n, len(counts)))
        soft[np.arange(n), y] = 1.0
        return soft
    d2 = np.sum((x[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    loglik = -d2 / (2.0 * noise * noise) + np.log(np.asarray(counts) / n)
    loglik -= loglik.max(axis=1, keepdims=True)
    p = np.exp(loglik)
    return p / p.sum(axis=1, keepdims=True)


def gen_token_sequences(n: int, vocab: int, length: int, rule: str, seed: int) -> Dataset:
    """Rule-labeled integer sequences; "majority" labels each sequence with its
    most frequent token id (ties to the lowest id)."""
    if n < 1 or vocab < 2 or length < 1:
        raise InputError(f"invalid sizes n={n}, vocab={vocab}, length={length}")
    if rule != "majority":
        raise InputError(f"unknown labeling rule {rule!r}")
    rng = Rng(seed)
    ids = np.floor(rng.uniform((n, length)) * vocab).astype(np.int64)
    ids = np.minimum(ids, vocab - 1)
    y = np.array([np.bincount(row, minlength=vocab).argmax() for row in ids], dtype=np.int64)
    return Dataset(
        task="classification", input_kind="tokens", inputs=ids, labels=y,
        provenance={"generator": "tokens", "n": n, "vocab": vocab, "length": length,
                    "rule": rule, "seed": seed},
    )


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def subsample_splits(dataset: Dataset, fractions: list[float], seed: int) -> list[Dataset]:
    """Nested low-resource subsets from one shuffled order.

    Smaller splits are subsets of larger ones, and class balance is preserved
    within one example per class where rounding allows. Sizes round half up.
    """
    n = len(dataset)
    for f in fractions:
        if not 0 < f <= 1:
            raise InputError(f"fraction {f} outside (0, 1]")
        if f * n < 1:
            raise InputError(f"fraction {f} selects no examples from {n}")
    rng = Rng(seed)
    if dataset.task == "classification":
        class_orders = []
        for cls in np.unique(dataset.labels):
            members = np.flatnonzero(dataset.labels == cls)
            class_orders.append(members[rng.permutation(len(members))])
    else:
        class_orders = [rng.permutation(n)]
    splits = []
    for f in fractions:
        take = [order[: _round_half_up(f * len(order))] for order in class_orders]
        idx = np.sort(np.concatenate(take))
        if idx.size == 0:
            largest = max(class_orders, key=len)
            idx = np.array([largest[0]])
        prov = dict(dataset.provenance)
        prov.update({"split_fraction": f, "split_seed": seed})
        splits.append(dataset.subset(idx, provenance=prov))
    return splits


# ---------------------------------------------------------------------------
# File IO
# ---------------------------------------------------------------------------

def write_dataset(path: str, dataset: Dataset) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(len(dataset)):
            record: dict = {}
            if dataset.input_kind == "vector":
                record["x"] = dataset.inputs[i].tolist()
            else:
                record["tokens"] = [int(v) for v in dataset.inputs[i]]
            if dataset.task == "classification":
                record["y"] = int(dataset.labels[i])
            else:
                record["y"] = float(dataset.labels[i])
            if dataset.soft_labels is not None:
                record["p"] = dataset.soft_labels[i].tolist()
            fh.write(json.dumps(record) + "\n")
    meta = {"task": dataset.task, "input_kind": dataset.input_kind,
            "provenance": dataset.provenance}
    with open(path + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh)
        fh.write("\n")


def read_dataset(path: str) -> Dataset:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: malformed record: {exc}") from exc
            records.append((lineno, rec))
    if not records:
        raise InputError(f"{path}: empty dataset")
    schema = frozenset(records[0][1].keys())
    allowed = ({"x", "y"}, {"x", "y", "p"}, {"tokens", "y"}, {"tokens", "y", "p"})
    if set(schema) not in allowed:
        raise InputError(f"{path}: unsupported record fields {sorted(schema)}")
    for lineno, rec in records:
        if frozenset(rec.keys()) != schema:
            raise InputError(f"{path}:{lineno}: mixed record schemas")
    input_kind = "vector" if "x" in schema else "tokens"
    y0 = records[0][1]["y"]
    task = "classification" if isinstance(y0, int) else "regression"
    inputs, labels, soft = [], [], []
    for lineno, rec in records:
        if isinstance(rec["y"], int) != (task == "classification"):
            raise InputError(f"{path}:{lineno}: mixed label types")
        inputs.append(rec["x"] if input_kind == "vector" else rec["tokens"])
        labels.append(rec["y"])
        if "p" in schema:
            soft.append(rec["p"])
    inputs_arr = (np.asarray(inputs, dtype=np.float64) if input_kind == "vector"
                  else np.asarray(inputs, dtype=np.int64))
    if inputs_arr.ndim != 2:
        raise InputError(f"{path}: input rows have inconsistent lengths")
    labels_arr = (np.asarray(labels, dtype=np.int64) if task == "classification"
                  else np.asarray(labels, dtype=np.float64))
    soft_arr = np.asarray(soft, dtype=np.float64) if soft else None
    if soft_arr is not None and np.any(np.abs(soft_arr.sum(axis=1) - 1.0) > 1e-9):
        raise InputError(f"{path}: soft labels must sum to 1")
    provenance = {}
    meta_path = path + ".meta.json"
    if os.path.exists(meta_path):
        with open(meta_path, "r", encoding="utf-8") as fh:
            provenance = json.load(fh).get("provenance", {})
    return Dataset(task=task, input_kind=input_kind, inputs=inputs_arr,
                   labels=labels_arr, soft_labels=soft_arr, provenance=provenance)
