"""Adam training of the toy transformer under the velocity-matching loss."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from rfedit import checkpoint
from rfedit.flow import WEIGHTINGS, to_model_space
from rfedit.mmdit import MMDiT, ModelConfig
from rfedit.numcore import make_rng, standard_normal
from rfedit.numcore import tensor as T
from rfedit.synth import Jitter, make_corpus

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    steps: int = 2000
    seed: int = 0
    weighting: str = "uniform"
    corpus_size: int = 512
    corpus_seed: int = 0
    clip_norm: float = 1.0
    # caption dropout: empty prompt, or a single attribute word
    p_null: float = 0.1
    p_single: float = 0.2
    log_every: int = 1
    checkpoint_every: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self):
        for name in ("lr", "batch_size", "corpus_size", "clip_norm", "log_every"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.steps < 0 or self.checkpoint_every < 0:
            raise ValueError("steps and checkpoint_every must be non-negative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1 and self.eps > 0):
            raise ValueError("Adam betas must lie in (0, 1) and eps > 0")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")
        if not (0 <= self.p_null and 0 <= self.p_single and self.p_null + self.p_single <= 1):
            raise ValueError("caption dropout probabilities must sum to at most 1")
        return self

    def to_json(self):
        d = asdict(self)
        d["model"] = self.model.to_json()
        return d


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params, grads, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam, elementwise; updates ``params`` and ``state`` in place."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient in {k}")
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for k, p in params.items():
        g = grads[k]
        m = state.m[k]
        v = state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)
    return params, state


def clip_grad_norm(grads, max_norm):
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for k in grads:
            grads[k] = grads[k] * np.asarray(scale, dtype=grads[k].dtype)
    return total


def caption_for(sample, u, p_null, p_single):
    if u < p_null:
        return ""
    if u < p_null + p_single / 2:
        return sample.color
    if u < p_null + p_single:
        return sample.shape
    return sample.caption


def batch_loss(model, x0, id_lists, t, eps):
    """Velocity MSE over the batch; items are grouped by prompt length so each group shares one text width."""
    B = x0.shape[0]
    tt = t.reshape(B, 1, 1, 1).astype(x0.dtype)
    x_t = (1 - tt) * x0 + tt * eps
    target = eps - x0
    lengths = np.array([len(ids) for ids in id_lists])
    total = None
    for n in sorted(set(lengths.tolist())):
        sel = np.flatnonzero(lengths == n)
        c_pool, c_ctxt = model.encode_batch([id_lists[i] for i in sel])
        pred = model.forward(x_t[sel], c_pool, c_ctxt, t[sel])
        diff = T.sub(pred, T.Tensor(target[sel]))
        part = T.tsum(T.mul(diff, diff))
        total = part if total is None else T.add(total, part)
    return T.mul(total, 1.0 / x0.size)


def train(config: TrainConfig, model: MMDiT | None = None, samples=None, ckpt_path=None, log_path=None):
    """Run training; returns ``(model, loss_log)`` with ``loss_log`` a list of ``(step, loss)``.

    Per step the training stream is consumed in this order: batch indices,
    caption-dropout uniforms, times, noise.
    """
    config.validate()
    if samples is None:
        samples, _ = make_corpus(config.corpus_size, config.corpus_seed, Jitter())
    if not samples:
        raise ValueError("empty corpus")
    model = model or MMDiT(config.model, seed=config.seed)
    data = np.stack([to_model_space(s.image) for s in samples])
    rng = make_rng(config.seed + 1)
    params = {k: p.data for k, p in model.params.items()}
    state = AdamState.zeros_like(params)
    losses = []
    log_file = open(log_path, "w") if log_path else None
    try:
        for step in range(1, config.steps + 1):
            idx = rng.integers(0, len(samples), config.batch_size)
            u = rng.random(config.batch_size)
            t = rng.random(config.batch_size)
            x0 = data[idx]
            eps = standard_normal(rng, x0.shape, x0.dtype)
            ids = [
                model.vocab.ids(caption_for(samples[j], u[n], config.p_null, config.p_single))
                for n, j in enumerate(idx)
            ]
            model.requires_grad_(True)
            model.zero_grad()
            loss = batch_loss(model, x0, ids, t, eps)
            value = float(loss.item())
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at step {step}")
            loss.backward()
            grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in model.params.items()}
            clip_grad_norm(grads, config.clip_norm)
            adam_step(params, grads, state, config.lr, config.beta1, config.beta2, config.eps)
            losses.append((step, value))
            if log_file and step % config.log_every == 0:
                log_file.write(f"{step} {value!r}\n")
            if step % 100 == 0:
                log.info("step %d loss %.5f", step, value)
            if ckpt_path and config.checkpoint_every and step % config.checkpoint_every == 0:
                checkpoint.save_model(ckpt_path, model, {"step": step, "train": config.to_json()})
    except TrainingDiverged:
        # the failing step never reached the update, so params are the last good ones
        if ckpt_path:
            checkpoint.save_model(ckpt_path, model, {"diverged": True, "train": config.to_json()})
        raise
    finally:
        model.requires_grad_(False)
        model.zero_grad()
        if log_file:
            log_file.close()
    if ckpt_path:
        checkpoint.save_model(ckpt_path, model, {"step": config.steps, "train": config.to_json()})
    return model, losses
