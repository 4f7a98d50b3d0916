"""Independent test oracles: brute-force grid search, central finite
differences, and direct-formula references. Written against the math, not
against the package code paths they check."""

import numpy as np


def ref_softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def ref_sym_kl_rows(p, q, clamp=1e-12):
    lp = np.log(np.clip(p, clamp, 1.0))
    lq = np.log(np.clip(q, clamp, 1.0))
    return np.sum(p * (lp - lq) + q * (lq - lp), axis=-1)


def grid_oracle_max(weights, bias, x, eps, resolution=201):
    """Exhaustive max of the symmetrized divergence over the L-inf eps-ball
    around a 2-d point, for a linear-softmax model."""
    offs = np.linspace(-eps, eps, resolution)
    g0, g1 = np.meshgrid(offs, offs, indexing="ij")
    pts = x[None, :] + np.column_stack([g0.ravel(), g1.ravel()])
    clean = ref_softmax(x @ weights + bias)
    probs = ref_softmax(pts @ weights + bias)
    return float(ref_sym_kl_rows(probs, clean[None, :]).max())


def central_diff(f, arrays, step=1e-5):
    """Central finite differences of scalar f w.r.t. each array, in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.ravel(), g.ravel()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = f()
            flat[j] = orig - step
            down = f()
            flat[j] = orig
            gflat[j] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads


def assert_grads_close(actual, expected, rel=1e-4, floor=1e-8):
    actual = np.asarray(actual).ravel()
    expected = np.asarray(expected).ravel()
    err = np.abs(actual - expected)
    bound = floor + rel * np.abs(expected)
    worst = np.max(err - bound)
    assert np.all(err <= bound), f"gradient mismatch, worst excess {worst:.3e}"
