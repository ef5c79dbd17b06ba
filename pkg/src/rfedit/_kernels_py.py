"""Pure-numpy row-wise editing kernels (fallback for rfedit._kernels)."""

import numpy as np


def orthogonal_rows(v, b):
    v = np.ascontiguousarray(v)
    b64 = np.asarray(b, dtype=np.float64)
    dot = np.einsum("ij,ij->i", v.astype(np.float64), b64)
    nn = np.einsum("ij,ij->i", b64, b64)
    coef = np.divide(dot, nn, out=np.zeros_like(dot), where=nn != 0.0)
    proj = (coef[:, None] * b64).astype(v.dtype)
    return v - proj


def fine_edit(base, edit, prior, lam, mask=None):
    out = np.array(base, copy=True)
    if lam == 0.0:
        return out
    delta = base + out.dtype.type(lam) * orthogonal_rows(edit, prior)
    if mask is None:
        return delta
    sel = np.asarray(mask).astype(bool)
    out[sel] = delta[sel]
    return out


def first_token_map(q, k, scale):
    logits = np.einsum("hnd,hld->hnl", q.astype(np.float64), k.astype(np.float64)) * scale
    logits -= logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    first = e[..., 0] / e.sum(axis=-1)
    return first.mean(axis=0)
