"""One-axis hyperparameter sweeps over edited generation."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from rfedit.editor import EditConfig, edited_generate, generate
from rfedit.synth import CHANNEL, attribute_metric, background_mse, object_mask

AXES = {
    "lambda_fine": "lambda_fine",
    "lambda_coarse": "lambda_coarse",
    "tau_m": "tau_m",
    "start_step": "start_step",
}


@dataclass
class SweepResult:
    axis: str
    values: list
    images: list
    reference: np.ndarray  # unedited generation, same seed
    mask: np.ndarray  # object pixels of the reference
    metric: list  # mean of the edit color channel inside the object
    background: list  # mean squared change outside the object

    def table(self):
        return "".join(f"{v!r} {m!r} {b!r}\n" for v, m, b in zip(self.values, self.metric, self.background))


def metric_channel(edit_prompt):
    for word in edit_prompt.split():
        if word in CHANNEL:
            return CHANNEL[word]
    return 0


def run_sweep(model, prompt, config: EditConfig, axis, values, steps=30, seed=0):
    if axis not in AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {sorted(AXES)}")
    if not values:
        raise ValueError("sweep grid is empty")
    reference = generate(model, prompt, steps, seed)
    mask = object_mask(reference)
    if not mask.any():
        # nothing rendered; fall back to the whole frame
        mask = np.ones(mask.shape, dtype=bool)
    channel = metric_channel(config.edit_prompt)
    images, metric, background = [], [], []
    for v in values:
        v = int(v) if axis == "start_step" else float(v)
        img = edited_generate(model, prompt, replace(config, **{AXES[axis]: v}), steps, seed)
        images.append(img)
        metric.append(attribute_metric(img, mask, channel))
        background.append(background_mse(img, reference, mask))
    return SweepResult(axis, list(values), images, reference, mask, metric, background)
