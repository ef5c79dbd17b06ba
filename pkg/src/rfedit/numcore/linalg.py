"""Projection and normalization primitives on plain numpy vectors."""

from __future__ import annotations

import numpy as np


def project_onto(v, b):
    """Orthogonal projection of ``v`` onto the line spanned by ``b``.

    A zero-norm ``b`` has no direction; the projection is then the zero
    vector, so :func:`orthogonal_component` returns ``v`` unchanged.
    """
    v = np.asarray(v)
    b = np.asarray(b)
    if v.shape != b.shape:
        raise ValueError(f"shape mismatch: {v.shape} vs {b.shape}")
    dtype = np.result_type(v.dtype, b.dtype, np.float32)
    # accumulate in float64, round once into the working dtype
    b64 = b.astype(np.float64)
    nn = float(b64 @ b64)
    if nn == 0.0:
        return np.zeros(v.shape, dtype=dtype)
    coef = float(v.astype(np.float64) @ b64) / nn
    return (coef * b64).astype(dtype)


def orthogonal_component(v, b):
    v = np.asarray(v)
    proj = project_onto(v, b)
    return v.astype(proj.dtype, copy=False) - proj


def softmax(logits, axis=-1):
    x = np.asarray(logits)
    if x.dtype.kind != "f":
        x = x.astype(np.float64)
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def minmax_normalize(x):
    """Affine rescale to [0, 1]; a constant input carries no signal and maps to zeros."""
    x = np.asarray(x)
    if x.size == 0:
        raise ValueError("minmax_normalize needs a nonempty input")
    if x.dtype.kind != "f":
        x = x.astype(np.float64)
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def sigmoid(x):
    x = np.asarray(x, dtype=np.result_type(np.asarray(x).dtype, np.float32))
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else out[()]
