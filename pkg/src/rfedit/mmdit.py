"""Toy multi-modal diffusion transformer.

Images are patchified into tokens, text prompts arrive as token-wise
context plus a pooled vector. Every joint block keeps separate text and
image weights but runs one softmax attention over the concatenated
``[text; image]`` sequence. The block is split into three steps
(:meth:`MMDiT.block_modulation`, :meth:`MMDiT.attend`, :meth:`MMDiT.finish`)
so the editor can evaluate the attention several times per block.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from rfedit.numcore import make_rng
from rfedit.numcore import tensor as T
from rfedit.textenc import PromptEmbedding, Vocabulary, encode, encode_ids

STREAMS = ("img", "txt")
MOD_CHUNKS = 6  # shift1, scale1, gate1, shift2, scale2, gate2


@dataclass
class ModelConfig:
    image_size: int = 16
    channels: int = 3
    patch_size: int = 2
    hidden: int = 64
    heads: int = 4
    blocks: int = 2
    d_pool: int = 32
    d_ctxt: int = 32
    mlp_ratio: int = 4
    vocabulary: list = field(default_factory=lambda: ["red", "green", "blue", "circle", "square"])

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError("image_size must be divisible by patch_size")
        if self.hidden % self.heads:
            raise ValueError("hidden must be divisible by heads")
        if self.d_pool % 2:
            raise ValueError("d_pool must be even (sinusoidal embedding)")

    @property
    def grid(self):
        return self.image_size // self.patch_size

    @property
    def n_img(self):
        return self.grid * self.grid

    @property
    def patch_dim(self):
        return self.patch_size * self.patch_size * self.channels

    @property
    def head_dim(self):
        return self.hidden // self.heads

    def to_json(self):
        return asdict(self)


@dataclass
class AttentionInternals:
    """Per-head projections of one joint attention call, shape (B, heads, n, head_dim)."""

    q_img: np.ndarray
    k_img: np.ndarray
    v_img: np.ndarray
    q_txt: np.ndarray
    k_txt: np.ndarray
    v_txt: np.ndarray
    weights: np.ndarray  # (B, heads, L, L), rows over [txt; img]


def parameter_shapes(cfg: ModelConfig):
    """Ordered ``name -> shape`` table; this order is the checkpoint order."""
    D, P = cfg.hidden, cfg.d_pool
    shapes = {
        "text.table": (len(cfg.vocabulary) + 2, cfg.d_ctxt),
        "text.pool": (cfg.d_ctxt, P),
        "patch.weight": (cfg.patch_dim, D),
        "patch.bias": (D,),
        "pos": (cfg.n_img, D),
        "context.weight": (cfg.d_ctxt, D),
        "context.bias": (D,),
        "time.fc1.weight": (P, P),
        "time.fc1.bias": (P,),
        "time.fc2.weight": (P, P),
        "time.fc2.bias": (P,),
        "guidance.fc1.weight": (P, P),
        "guidance.fc1.bias": (P,),
        "guidance.fc2.weight": (P, P),
        "guidance.fc2.bias": (P,),
    }
    for i in range(cfg.blocks):
        for s in STREAMS:
            pre = f"blocks.{i}.{s}"
            shapes[f"{pre}.mod.weight"] = (P, MOD_CHUNKS * D)
            shapes[f"{pre}.mod.bias"] = (MOD_CHUNKS * D,)
            shapes[f"{pre}.qkv.weight"] = (D, 3 * D)
            shapes[f"{pre}.qkv.bias"] = (3 * D,)
            shapes[f"{pre}.out.weight"] = (D, D)
            shapes[f"{pre}.out.bias"] = (D,)
            shapes[f"{pre}.mlp1.weight"] = (D, cfg.mlp_ratio * D)
            shapes[f"{pre}.mlp1.bias"] = (cfg.mlp_ratio * D,)
            shapes[f"{pre}.mlp2.weight"] = (cfg.mlp_ratio * D, D)
            shapes[f"{pre}.mlp2.bias"] = (D,)
    shapes["final.mod.weight"] = (P, 2 * D)
    shapes["final.mod.bias"] = (2 * D,)
    shapes["final.weight"] = (D, cfg.patch_dim)
    shapes["final.bias"] = (cfg.patch_dim,)
    return shapes


def init_parameters(cfg: ModelConfig, seed=0, dtype=np.float32):
    """Scaled-normal weights (std 1/sqrt(fan_in)), zero biases, zero modulation maps.

    Draws happen in checkpoint order from one PCG64 stream.
    """
    rng = make_rng(seed)
    params = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith(".bias") or ".mod." in name:
            arr = np.zeros(shape)
        elif name == "text.table":
            arr = rng.standard_normal(shape)
        elif name == "pos":
            arr = 0.02 * rng.standard_normal(shape)
        else:
            arr = rng.standard_normal(shape) / np.sqrt(shape[0])
        params[name] = arr.astype(dtype)
    return params


def timestep_embedding(t, dim, scale=1000.0):
    """Sinusoidal features of ``t`` (B,) -> (B, dim): cosines then sines."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = scale * t[:, None] * freqs[None, :]
    return np.concatenate([np.cos(args), np.sin(args)], axis=1)


def modulate(x, shift, scale):
    """``(1 + scale) * layer_norm(x) + shift``; shift/scale broadcast over tokens."""
    return T.add(T.mul(T.layer_norm(x), T.add(scale, 1.0)), shift)


def joint_softmax_attention(q_txt, k_txt, v_txt, q_img, k_img, v_img):
    """One softmax attention over the ``[text; image]`` sequence, split back per modality.

    Inputs are (..., n, head_dim) tensors; returns ``(out_txt, out_img, weights)``.
    """
    n_txt = q_txt.shape[-2]
    q = T.concat([q_txt, q_img], axis=-2)
    k = T.concat([k_txt, k_img], axis=-2)
    v = T.concat([v_txt, v_img], axis=-2)
    axes = tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)
    scale = 1.0 / np.sqrt(q.shape[-1])
    w = T.softmax(T.mul(T.matmul(q, T.transpose(k, axes)), scale), axis=-1)
    o = T.matmul(w, v)
    o_txt, o_img = T.split(o, [n_txt, q_img.shape[-2]], axis=o.ndim - 2)
    return o_txt, o_img, w


def modulation_embedding(c_pool, t_emb, g_emb):
    return T.add(T.add(c_pool, t_emb), g_emb)


class MMDiT:
    def __init__(self, config: ModelConfig | None = None, params=None, seed=0):
        self.config = config or ModelConfig()
        self.vocab = Vocabulary(list(self.config.vocabulary))
        raw = params if params is not None else init_parameters(self.config, seed)
        expected = parameter_shapes(self.config)
        if list(raw) != list(expected):
            missing = set(expected) ^ set(raw)
            if missing:
                raise ValueError(f"parameter names do not match config: {sorted(missing)[:5]}")
            raw = {k: raw[k] for k in expected}
        for name, shape in expected.items():
            if tuple(raw[name].shape) != shape:
                raise ValueError(f"{name}: shape {raw[name].shape} != {shape}")
        self.params = {k: v if isinstance(v, T.Tensor) else T.Tensor(v) for k, v in raw.items()}

    # -- parameter management ---------------------------------------------
    @property
    def dtype(self):
        return self.params["pos"].dtype

    def named_parameters(self):
        return list(self.params.items())

    def state_dict(self):
        return {k: v.data for k, v in self.params.items()}

    def astype(self, dtype):
        return MMDiT(self.config, {k: v.data.astype(dtype) for k, v in self.params.items()})

    def requires_grad_(self, flag=True):
        for p in self.params.values():
            p.requires_grad = flag
        return self

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def p(self, name):
        return self.params[name]

    # -- text ---------------------------------------------------------------
    def encode(self, prompt) -> PromptEmbedding:
        return encode(prompt, self.vocab, self.params["text.table"].data, self.params["text.pool"].data)

    def encode_batch(self, id_lists):
        return encode_ids(self.params["text.table"], self.params["text.pool"], id_lists)

    # -- embeddings -----------------------------------------------------------
    def patchify(self, x):
        """(B, H, W, C) -> (B, N, p*p*C), patches in row-major grid order."""
        cfg = self.config
        B = x.shape[0]
        g, p, c = cfg.grid, cfg.patch_size, cfg.channels
        x = T.reshape(x, (B, g, p, g, p, c))
        x = T.transpose(x, (0, 1, 3, 2, 4, 5))
        return T.reshape(x, (B, g * g, p * p * c))

    def unpatchify(self, tokens):
        cfg = self.config
        B = tokens.shape[0]
        g, p, c = cfg.grid, cfg.patch_size, cfg.channels
        x = T.reshape(tokens, (B, g, g, p, p, c))
        x = T.transpose(x, (0, 1, 3, 2, 4, 5))
        return T.reshape(x, (B, g * p, g * p, c))

    def embed_image(self, x):
        tok = T.linear(self.patchify(x), self.p("patch.weight"), self.p("patch.bias"))
        return T.add(tok, self.p("pos"))

    def embed_text(self, c_ctxt):
        return T.linear(c_ctxt, self.p("context.weight"), self.p("context.bias"))

    def _mlp_embed(self, prefix, feats):
        h = T.silu(T.linear(feats, self.p(f"{prefix}.fc1.weight"), self.p(f"{prefix}.fc1.bias")))
        return T.linear(h, self.p(f"{prefix}.fc2.weight"), self.p(f"{prefix}.fc2.bias"))

    def time_embedding(self, t, batch):
        t = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1), (batch,))
        feats = T.Tensor(timestep_embedding(t, self.config.d_pool).astype(self.dtype))
        return self._mlp_embed("time", feats)

    def guidance_embedding(self, g, batch):
        g = np.broadcast_to(np.asarray(g, dtype=np.float64).reshape(-1), (batch,))
        feats = T.Tensor(timestep_embedding(g, self.config.d_pool).astype(self.dtype))
        return self._mlp_embed("guidance", feats)

    # -- blocks -------------------------------------------------------------
    def block_modulation(self, i, stream, m):
        """Six (B, 1, D) modulation chunks for one stream of block ``i``."""
        pre = f"blocks.{i}.{stream}.mod"
        out = T.linear(T.silu(m), self.p(f"{pre}.weight"), self.p(f"{pre}.bias"))
        B, D = out.shape[0], self.config.hidden
        out = T.reshape(out, (B, 1, MOD_CHUNKS * D))
        return T.split(out, [D] * MOD_CHUNKS, axis=2)

    def _heads(self, x):
        B, n, _ = x.shape
        H, dh = self.config.heads, self.config.head_dim
        return T.transpose(T.reshape(x, (B, n, H, dh)), (0, 2, 1, 3))

    def _merge(self, x):
        B, H, n, dh = x.shape
        return T.reshape(T.transpose(x, (0, 2, 1, 3)), (B, n, H * dh))

    def _qkv(self, i, stream, x, mods):
        shift, scale = mods[0], mods[1]
        h = modulate(x, shift, scale)
        pre = f"blocks.{i}.{stream}.qkv"
        qkv = T.linear(h, self.p(f"{pre}.weight"), self.p(f"{pre}.bias"))
        D = self.config.hidden
        return [self._heads(z) for z in T.split(qkv, [D, D, D], axis=2)]

    def attend(self, i, img, txt, mods_img, mods_txt):
        """Joint attention of block ``i``.

        Returns ``(img_out, txt_out, internals)`` where the outputs are the
        per-modality results after the output projection and before the
        residual addition.
        """
        qi, ki, vi = self._qkv(i, "img", img, mods_img)
        qt, kt, vt = self._qkv(i, "txt", txt, mods_txt)
        o_txt, o_img, w = joint_softmax_attention(qt, kt, vt, qi, ki, vi)
        o_txt, o_img = self._merge(o_txt), self._merge(o_img)
        out_img = T.linear(o_img, self.p(f"blocks.{i}.img.out.weight"), self.p(f"blocks.{i}.img.out.bias"))
        out_txt = T.linear(o_txt, self.p(f"blocks.{i}.txt.out.weight"), self.p(f"blocks.{i}.txt.out.bias"))
        internals = AttentionInternals(
            qi.data, ki.data, vi.data, qt.data, kt.data, vt.data, w.data
        )
        return out_img, out_txt, internals

    def finish(self, i, stream, x, attn_out, mods):
        """Gated residual for the attention output, then the modulated MLP."""
        _, _, gate1, shift2, scale2, gate2 = mods
        x = T.add(x, T.mul(gate1, attn_out))
        pre = f"blocks.{i}.{stream}"
        h = modulate(x, shift2, scale2)
        h = T.gelu(T.linear(h, self.p(f"{pre}.mlp1.weight"), self.p(f"{pre}.mlp1.bias")))
        h = T.linear(h, self.p(f"{pre}.mlp2.weight"), self.p(f"{pre}.mlp2.bias"))
        return T.add(x, T.mul(gate2, h))

    def run_block(self, i, img, txt, m_img, m_txt):
        mi = self.block_modulation(i, "img", m_img)
        mt = self.block_modulation(i, "txt", m_txt)
        a_img, a_txt, _ = self.attend(i, img, txt, mi, mt)
        return self.finish(i, "img", img, a_img, mi), self.finish(i, "txt", txt, a_txt, mt)

    def head(self, img, m_img):
        D = self.config.hidden
        mod = T.linear(T.silu(m_img), self.p("final.mod.weight"), self.p("final.mod.bias"))
        mod = T.reshape(mod, (mod.shape[0], 1, 2 * D))
        shift, scale = T.split(mod, [D, D], axis=2)
        out = T.linear(modulate(img, shift, scale), self.p("final.weight"), self.p("final.bias"))
        return self.unpatchify(out)

    # -- full pass ----------------------------------------------------------
    def forward(self, x, c_pool, c_ctxt, t, guidance=1.0, hooks=None):
        """Velocity for a batch. ``x`` (B,H,W,C); ``c_pool`` (B,d_pool); ``c_ctxt`` (B,n,d_ctxt)."""
        x = T.as_tensor(x)
        B = x.shape[0]
        t_emb = self.time_embedding(t, B)
        g_emb = self.guidance_embedding(guidance, B)
        m_img = modulation_embedding(c_pool, t_emb, g_emb)
        img = self.embed_image(x)
        if hooks is not None:
            img = hooks.run_blocks(self, img, m_img, t_emb, g_emb)
        else:
            txt = self.embed_text(c_ctxt)
            for i in range(self.config.blocks):
                img, txt = self.run_block(i, img, txt, m_img, m_img)
        return self.head(img, m_img)

    def check_image(self, x):
        cfg = self.config
        expected = (cfg.image_size, cfg.image_size, cfg.channels)
        if tuple(x.shape[-3:]) != expected:
            raise ValueError(f"image shape {tuple(x.shape)} does not end in {expected}")

    def predict_velocity(self, x_t, prompt: PromptEmbedding, t, guidance=1.0, hooks=None):
        """Inference-mode velocity for one prompt; accepts (H,W,C) or (B,H,W,C)."""
        x = np.asarray(x_t, dtype=self.dtype)
        self.check_image(x)
        single = x.ndim == 3
        if single:
            x = x[None]
        B = x.shape[0]
        c_pool = np.broadcast_to(prompt.c_pool.astype(self.dtype), (B, self.config.d_pool))
        c_ctxt = np.broadcast_to(prompt.c_ctxt.astype(self.dtype), (B, *prompt.c_ctxt.shape))
        with T.no_grad():
            v = self.forward(x, T.Tensor(c_pool), T.Tensor(c_ctxt), t, guidance, hooks).data
        return v[0] if single else v


def joint_attention(model, i, img, txt, m_img, m_txt):
    """Attention outputs of block ``i`` with separate image/text modulation vectors."""
    mi = model.block_modulation(i, "img", T.as_tensor(m_img))
    mt = model.block_modulation(i, "txt", T.as_tensor(m_txt))
    return model.attend(i, T.as_tensor(img), T.as_tensor(txt), mi, mt)


def predict_velocity(model, x_t, prompt, t, guidance=1.0, hooks=None):
    return model.predict_velocity(x_t, prompt, t, guidance, hooks)
