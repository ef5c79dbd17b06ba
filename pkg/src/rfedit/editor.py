"""Inference-time editing of joint-attention outputs.

At every edited block the joint attention is evaluated three times on the
same image tokens: against the base prompt, the edit prompt and the empty
prompt. The component of the edit output orthogonal (per token row) to the
empty-prompt output is added to the base output, optionally only on tokens
that attend strongly to the first edit token. Separately, the pooled
condition that modulates the text stream can be pushed along the edit
prompt's pooled direction.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from rfedit import kernels
from rfedit.flow import Schedule, euler_sample, initial_noise, to_image_space
from rfedit.mmdit import modulation_embedding
from rfedit.numcore import minmax_normalize, orthogonal_component, sigmoid
from rfedit.numcore import tensor as T


class EditConfigError(ValueError):
    pass


@dataclass
class EditConfig:
    edit_prompt: str = ""
    lambda_fine: float = 5.0
    lambda_coarse: float = 0.5
    tau_m: float = 0.5
    boundary: float = 10.0
    start_step: int = 1
    masking: bool = True
    target_blocks: list | None = None  # None -> every joint block

    def validate(self, n_blocks=None, steps=None):
        if not np.isfinite(self.lambda_fine) or self.lambda_fine < 0:
            raise EditConfigError(f"lambda_fine must be >= 0, got {self.lambda_fine}")
        if not 0.0 <= self.lambda_coarse <= 1.0:
            raise EditConfigError(f"lambda_coarse must lie in [0, 1], got {self.lambda_coarse}")
        if not 0.0 <= self.tau_m <= 1.0:
            raise EditConfigError(f"tau_m must lie in [0, 1], got {self.tau_m}")
        if not np.isfinite(self.boundary):
            raise EditConfigError("boundary coefficient must be finite")
        if int(self.start_step) != self.start_step or self.start_step < 0:
            raise EditConfigError(f"start_step must be a non-negative integer, got {self.start_step}")
        if self.target_blocks is not None and n_blocks is not None:
            bad = [b for b in self.target_blocks if not 0 <= b < n_blocks]
            if bad:
                raise EditConfigError(f"target blocks {bad} outside 0..{n_blocks - 1}")
        return self

    def to_json(self):
        return asdict(self)


PRESETS = {
    "eyeglasses": dict(lambda_coarse=0.8, lambda_fine=5.0, tau_m=0.5, start_step=3),
    "smile": dict(lambda_coarse=0.5, lambda_fine=8.0, tau_m=0.5, start_step=5),
}


def preset(name, **overrides):
    try:
        values = PRESETS[name]
    except KeyError:
        raise EditConfigError(f"unknown preset {name!r}; known: {sorted(PRESETS)}") from None
    return replace(EditConfig(), **{**values, **overrides})


@dataclass
class AttentionTriple:
    base: np.ndarray  # (n_img, hidden)
    edit: np.ndarray
    prior: np.ndarray

    def __post_init__(self):
        if not (self.base.shape == self.edit.shape == self.prior.shape):
            raise ValueError("attention triple members must share one shape")


# -- per-block operations --------------------------------------------------
def fine_edit(triple: AttentionTriple, lambda_fine, mask=None):
    """``base + lambda * (edit - proj_prior(edit))`` per token row, only where ``mask`` is set."""
    base = np.ascontiguousarray(triple.base)
    edit = np.ascontiguousarray(triple.edit, dtype=base.dtype)
    prior = np.ascontiguousarray(triple.prior, dtype=base.dtype)
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != (base.shape[0],):
            raise ValueError(f"mask shape {mask.shape} != ({base.shape[0]},)")
    return kernels.fine_edit(base, edit, prior, float(lambda_fine), mask)


def edit_direction(triple: AttentionTriple):
    edit = np.ascontiguousarray(triple.edit)
    return kernels.orthogonal_rows(edit, np.ascontiguousarray(triple.prior, dtype=edit.dtype))


def soft_attention_mask(q_img, k_edit, boundary=10.0):
    """Sigmoid-sharpened, min-max normalized attention of each image query on the first key.

    ``q_img`` is (heads, n_img, d_k) or (n_img, d_k); ``k_edit`` likewise with
    the edit prompt's first token in row 0. Heads are averaged before
    normalization.
    """
    q = np.asarray(q_img)
    k = np.asarray(k_edit)
    if q.ndim == 2:
        q, k = q[None], k[None]
    if q.shape[0] != k.shape[0] or q.shape[2] != k.shape[2]:
        raise ValueError(f"head layout mismatch: {q.shape} vs {k.shape}")
    q = np.ascontiguousarray(q)
    k = np.ascontiguousarray(k, dtype=q.dtype)
    amap = kernels.first_token_map(q, k, 1.0 / np.sqrt(q.shape[2]))
    return sigmoid(boundary * (minmax_normalize(amap) - 0.5))


def attention_mask(q_img, k_edit, boundary=10.0, tau_m=0.5):
    """Binary {0,1} mask over image tokens (inclusive threshold)."""
    return (soft_attention_mask(q_img, k_edit, boundary) >= tau_m).astype(np.uint8)


def coarse_edit(c_pool, c_e_pool, lambda_coarse):
    c_pool = np.asarray(c_pool)
    if lambda_coarse == 0.0:
        return c_pool.copy()
    direction = orthogonal_component(c_e_pool, c_pool).astype(c_pool.dtype)
    lam = c_pool.dtype.type(lambda_coarse)
    return (1 - lam) * c_pool + lam * direction


# -- session ----------------------------------------------------------------
CONDITIONS = ("base", "edit", "null")


@dataclass
class BlockRecord:
    """Instrumentation for one (step, block); filled when the session records."""

    base: np.ndarray
    edit: np.ndarray
    prior: np.ndarray
    output: np.ndarray
    mask: np.ndarray | None
    m_img: np.ndarray
    m_txt: dict


@dataclass
class EditSession:
    model: object
    prompt: str
    config: EditConfig
    record: bool = False
    masks: dict = field(default_factory=dict)  # (step, block) -> (B, n_img) uint8
    records: dict = field(default_factory=dict)

    def __post_init__(self):
        self.config.validate(self.model.config.blocks)
        self.conditions = {
            "base": self.model.encode(self.prompt),
            "edit": self.model.encode(self.config.edit_prompt),
            "null": self.model.encode(""),
        }
        base_pool = self.conditions["base"].c_pool
        self.c_hat_pool = coarse_edit(base_pool, self.conditions["edit"].c_pool, self.config.lambda_coarse)
        blocks = self.config.target_blocks
        self.targets = set(range(self.model.config.blocks) if blocks is None else blocks)
        self.step = None

    def hooks_for(self, step):
        if step < self.config.start_step:
            return None
        self.step = step
        return self

    def _text_pools(self):
        return {
            "base": self.c_hat_pool,
            "edit": self.conditions["edit"].c_pool,
            "null": self.conditions["null"].c_pool,
        }

    def run_blocks(self, model, img, m_img, t_emb, g_emb):
        """Block loop with one shared image stream and three text streams."""
        B = img.shape[0]
        dtype = model.dtype
        txt, m_txt = {}, {}
        for cond, pool in self._text_pools().items():
            emb = self.conditions[cond]
            ctxt = np.broadcast_to(emb.c_ctxt.astype(dtype), (B, *emb.c_ctxt.shape))
            txt[cond] = model.embed_text(T.Tensor(ctxt))
            pool = T.Tensor(np.broadcast_to(pool.astype(dtype), (B, pool.shape[0])))
            m_txt[cond] = modulation_embedding(pool, t_emb, g_emb)

        cfg = self.config
        for i in range(model.config.blocks):
            mi = model.block_modulation(i, "img", m_img)
            outs, mods = {}, {}
            for cond in CONDITIONS:
                mods[cond] = model.block_modulation(i, "txt", m_txt[cond])
                outs[cond] = model.attend(i, img, txt[cond], mi, mods[cond])

            base_out = outs["base"][0].data
            if i in self.targets:
                new = np.empty_like(base_out)
                mask = None
                if cfg.masking:
                    mask = self._masks(outs["edit"][2])
                    self.masks[(self.step, i)] = mask
                for b in range(B):
                    triple = AttentionTriple(base_out[b], outs["edit"][0].data[b], outs["null"][0].data[b])
                    new[b] = fine_edit(triple, cfg.lambda_fine, None if mask is None else mask[b])
                if self.record:
                    self.records[(self.step, i)] = BlockRecord(
                        base_out.copy(),
                        outs["edit"][0].data.copy(),
                        outs["null"][0].data.copy(),
                        new.copy(),
                        None if mask is None else mask.copy(),
                        m_img.data.copy(),
                        {c: m.data.copy() for c, m in m_txt.items()},
                    )
                img_attn = T.Tensor(new)
            else:
                img_attn = outs["base"][0]

            img_next = model.finish(i, "img", img, img_attn, mi)
            for cond in CONDITIONS:
                txt[cond] = model.finish(i, "txt", txt[cond], outs[cond][1], mods[cond])
            img = img_next
        return img

    def _masks(self, internals):
        """Mask per batch item from the edit condition's queries and keys.

        Keys span the whole joint sequence ``[edit text; image]`` so the
        first-token column is read from the real attention distribution.
        """
        k_all = np.concatenate([internals.k_txt, internals.k_img], axis=2)
        B = k_all.shape[0]
        return np.stack(
            [
                attention_mask(internals.q_img[b], k_all[b], self.config.boundary, self.config.tau_m)
                for b in range(B)
            ]
        )


# -- generation ---------------------------------------------------------------
def image_shape(model):
    c = model.config
    return (c.image_size, c.image_size, c.channels)


def generate(model, prompt, steps=30, seed=0):
    """Plain sampling; returns an (H, W, C) image in [0, 1]."""
    emb = model.encode(prompt)
    x1 = initial_noise(image_shape(model), seed, model.dtype)
    return to_image_space(euler_sample(model, x1, Schedule.uniform(steps), emb))


def edited_generate(model, prompt, config: EditConfig, steps=30, seed=0, session_out=None, record=False):
    """Sampling with editing hooks from ``config.start_step`` on.

    Pass a list as ``session_out`` to receive the :class:`EditSession`
    (masks and, with ``record=True``, per-block instrumentation).
    """
    session = EditSession(model, prompt, config, record=record)
    emb = session.conditions["base"]
    x1 = initial_noise(image_shape(model), seed, model.dtype)
    out = euler_sample(model, x1, Schedule.uniform(steps), emb, edit=session)
    if session_out is not None:
        session_out.append(session)
    return to_image_space(out)
