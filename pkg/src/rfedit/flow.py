"""Rectified-flow path, velocity-matching loss, and Euler integration.

Convention: ``t = 1`` is pure noise and ``t = 0`` is data, so the straight
path is ``x_t = (1 - t) x0 + t eps`` with constant velocity ``eps - x0``.
Sampling integrates from 1 down to 0; inversion integrates back up.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rfedit.numcore import make_rng, standard_normal
from rfedit.numcore import tensor as T

DEFAULT_STEPS = 30
WEIGHTINGS = ("uniform",)


@dataclass(frozen=True)
class Schedule:
    knots: tuple  # strictly decreasing, knots[0] == 1.0, knots[-1] == 0.0

    @classmethod
    def uniform(cls, steps=DEFAULT_STEPS):
        if steps < 1:
            raise ValueError("steps must be >= 1")
        knots = np.linspace(1.0, 0.0, steps + 1)
        knots[0], knots[-1] = 1.0, 0.0
        return cls(tuple(float(k) for k in knots))

    def __post_init__(self):
        k = np.asarray(self.knots)
        if k.size < 2 or k[0] != 1.0 or k[-1] != 0.0 or np.any(np.diff(k) >= 0):
            raise ValueError("knots must decrease strictly from 1 to 0")

    @property
    def steps(self):
        return len(self.knots) - 1


def forward_sample(x0, eps, t):
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch {x0.shape} vs {eps.shape}")
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    return (1.0 - t) * x0 + t * eps


class StraightPathField:
    """Exact velocity of the straight path between fixed ``x0`` and ``eps``."""

    def __init__(self, x0, eps):
        self.v = np.asarray(eps) - np.asarray(x0)

    def predict_velocity(self, x, prompt, t, guidance=1.0, hooks=None):
        return self.v


def euler_sample(model, x1, schedule=None, prompt=None, edit=None, guidance=1.0):
    """Integrate ``dx/dt = v`` from t=1 to t=0.

    ``edit`` is an optional session exposing ``hooks_for(step)``; it returns
    the hooks for that step index or ``None`` when editing is inactive.
    """
    schedule = schedule or Schedule.uniform()
    x = np.array(x1, copy=True)
    knots = schedule.knots
    for k in range(schedule.steps):
        hooks = edit.hooks_for(k) if edit is not None else None
        v = model.predict_velocity(x, prompt, knots[k], guidance, hooks)
        x = x + (knots[k + 1] - knots[k]) * v
    return x


def invert(model, x0, schedule=None, prompt=None, guidance=1.0):
    """Integrate the same field from t=0 back to t=1 over the reversed knots."""
    schedule = schedule or Schedule.uniform()
    x = np.array(x0, copy=True)
    knots = schedule.knots[::-1]
    for k in range(schedule.steps):
        v = model.predict_velocity(x, prompt, knots[k], guidance, None)
        x = x + (knots[k + 1] - knots[k]) * v
    return x


def velocity_mse(pred, target):
    diff = T.sub(pred, target)
    return T.mean(T.mul(diff, diff))


def cfm_loss(model, x0, c_pool, c_ctxt, rng, t=None, eps=None, weighting="uniform"):
    """Velocity-matching loss for one batch (uniform weighting over t).

    Draws, in order: ``t`` (B uniforms) then ``eps`` (B*H*W*C normals); a
    value passed in explicitly is not drawn. ``x0`` is (B,H,W,C) in model
    space; the conditions are tensors.
    """
    if weighting not in WEIGHTINGS:
        raise ValueError(f"unknown weighting {weighting!r}")
    x0 = np.asarray(x0)
    B = x0.shape[0]
    if t is None:
        t = rng.random(B)
    t = np.asarray(t, dtype=np.float64).reshape(B)
    if eps is None:
        eps = standard_normal(rng, x0.shape, x0.dtype)
    eps = np.asarray(eps, dtype=x0.dtype)
    tt = t.reshape(B, 1, 1, 1).astype(x0.dtype)
    x_t = (1 - tt) * x0 + tt * eps
    pred = model.forward(x_t, c_pool, c_ctxt, t)
    return velocity_mse(pred, T.Tensor(eps - x0))


def to_model_space(image):
    return np.asarray(image, dtype=np.float32) * 2.0 - 1.0


def to_image_space(x):
    return np.clip((np.asarray(x) + 1.0) / 2.0, 0.0, 1.0)


def initial_noise(shape, seed, dtype=np.float32):
    return standard_normal(make_rng(seed), shape, dtype)
