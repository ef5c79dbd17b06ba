"""Central finite-difference check of recorded gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rfedit.numcore.rng import make_rng
from rfedit.numcore.tensor import no_grad


@dataclass
class GradCheckResult:
    rel_errors: np.ndarray

    @property
    def worst(self):
        return float(self.rel_errors.max()) if self.rel_errors.size else 0.0

    def fraction_below(self, tol):
        return float(np.mean(self.rel_errors < tol)) if self.rel_errors.size else 1.0


def relative_error(a, b, floor=1e-8):
    scale = max(abs(a), abs(b))
    if scale < floor:
        return 0.0
    return abs(a - b) / scale


def gradcheck(loss_fn, tensors, step=1e-5, samples_per_tensor=8, seed=0):
    """Compare ``backward()`` gradients of ``loss_fn()`` with central differences.

    ``tensors`` should be float64 leaves with ``requires_grad`` set. Up to
    ``samples_per_tensor`` coordinates of each are probed.
    """
    rng = make_rng(seed)
    for t in tensors:
        t.grad = None
    loss_fn().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    errors = []
    with no_grad():
        for t, g in zip(tensors, analytic):
            flat = t.data.reshape(-1)
            n = flat.size
            picks = np.arange(n) if n <= samples_per_tensor else rng.choice(n, samples_per_tensor, replace=False)
            for j in picks:
                orig = flat[j]
                flat[j] = orig + step
                up = float(loss_fn().item())
                flat[j] = orig - step
                down = float(loss_fn().item())
                flat[j] = orig
                numeric = (up - down) / (2 * step)
                errors.append(relative_error(float(g.reshape(-1)[j]), numeric))
    return GradCheckResult(np.asarray(errors))
