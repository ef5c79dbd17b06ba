import math

import numpy as np
import pytest

from rfedit.mmdit import (
    MMDiT,
    ModelConfig,
    joint_attention,
    joint_softmax_attention,
    modulate,
    modulation_embedding,
    parameter_shapes,
)
from rfedit.numcore import make_rng
from rfedit.numcore import tensor as T
from rfedit.textenc import NULL_ID, UNK_ID, Vocabulary, encode, null_condition


# -- text encoder -----------------------------------------------------------
def test_empty_prompt_is_one_null_token(random_model):
    emb = random_model.encode("")
    assert emb.token_ids == [NULL_ID]
    assert emb.c_ctxt.shape == (1, random_model.config.d_ctxt)


def test_encode_deterministic(random_model):
    a, b = random_model.encode("red circle"), random_model.encode("red circle")
    assert a.c_pool.tobytes() == b.c_pool.tobytes()
    assert a.c_ctxt.tobytes() == b.c_ctxt.tobytes()


def test_color_change_touches_only_first_row(random_model):
    a, b = random_model.encode("red circle"), random_model.encode("blue circle")
    assert not np.array_equal(a.c_ctxt[0], b.c_ctxt[0])
    assert np.array_equal(a.c_ctxt[1], b.c_ctxt[1])


def test_unknown_words_and_normalization():
    vocab = Vocabulary(["red", "circle"])
    assert vocab.ids("RED  Circle") == [2, 3]
    assert vocab.ids("purple circle") == [UNK_ID, 3]
    assert len(vocab.ids("a b c")) == 3
    with pytest.raises(ValueError):
        Vocabulary(["<null>"])


def test_null_condition_matches_empty_prompt(random_model):
    table = random_model.params["text.table"].data
    pool = random_model.params["text.pool"].data
    phi = null_condition(random_model.vocab, table, pool)
    empty = encode("", random_model.vocab, table, pool)
    assert phi.c_pool.tobytes() == empty.c_pool.tobytes()
    assert np.isfinite(phi.c_pool).all()
    dot1 = float(phi.c_pool @ random_model.encode("red circle").c_pool)
    dot2 = float(null_condition(random_model.vocab, table, pool).c_pool @ random_model.encode("red circle").c_pool)
    assert dot1 == dot2


def test_pool_is_projection_of_mean(random_model):
    emb = random_model.encode("green square")
    expected = emb.c_ctxt.mean(axis=0) @ random_model.params["text.pool"].data
    np.testing.assert_allclose(emb.c_pool, expected, rtol=1e-6)


# -- modulation ---------------------------------------------------------------
def test_modulation_embedding_is_sum():
    z = np.zeros(2, np.float32)
    assert np.array_equal(modulation_embedding(T.Tensor(z), T.Tensor(z), T.Tensor(z)).data, z)
    a, b, c = (T.Tensor(np.array(v, np.float32)) for v in [(1, 0), (0, 1), (1, 1)])
    assert np.array_equal(modulation_embedding(a, b, c).data, [2, 2])
    assert np.array_equal(modulation_embedding(c, a, b).data, modulation_embedding(a, b, c).data)


def test_identity_modulation_is_layer_norm():
    x = T.Tensor(make_rng(0).standard_normal((5, 8)).astype(np.float32))
    zero = T.Tensor(np.zeros((1, 8), np.float32))
    assert np.array_equal(modulate(x, zero, zero).data, T.layer_norm(x).data)


def test_shift_only_modulation_adds_row():
    x = T.Tensor(make_rng(1).standard_normal((5, 8)))
    shift = make_rng(2).standard_normal((1, 8))
    zero = T.Tensor(np.zeros((1, 8)))
    out = modulate(x, T.Tensor(shift), zero).data
    np.testing.assert_allclose(out - T.layer_norm(x).data, np.repeat(shift, 5, axis=0), atol=1e-12)


def test_duplicate_tokens_modulate_equally():
    rng = make_rng(3)
    row = rng.standard_normal(8)
    x = T.Tensor(np.stack([row, rng.standard_normal(8), row]))
    out = modulate(x, T.Tensor(rng.standard_normal((1, 8))), T.Tensor(rng.standard_normal((1, 8)))).data
    assert np.array_equal(out[0], out[2])


# -- attention ----------------------------------------------------------------
def test_equal_features_average_to_themselves():
    f = T.Tensor(np.array([[0.3, -1.2, 2.0]]))
    ot, oi, _ = joint_softmax_attention(f, f, f, f, f, f)
    np.testing.assert_allclose(ot.data, f.data, atol=1e-15)
    np.testing.assert_allclose(oi.data, f.data, atol=1e-15)


def test_scalar_attention_by_hand():
    q = {"t": 1.0, "i0": 0.0, "i1": -1.0}
    k = {"t": 0.5, "i0": 1.0, "i1": 2.0}
    v = {"t": 2.0, "i0": -1.0, "i1": 3.0}
    order = ["t", "i0", "i1"]
    expected = {}
    for a in order:
        w = [math.exp(q[a] * k[b]) for b in order]
        expected[a] = sum(wi * v[b] for wi, b in zip(w, order)) / sum(w)

    def col(*names, src):
        return T.Tensor(np.array([[src[n]] for n in names]))

    ot, oi, w = joint_softmax_attention(
        col("t", src=q), col("t", src=k), col("t", src=v),
        col("i0", "i1", src=q), col("i0", "i1", src=k), col("i0", "i1", src=v),
    )
    np.testing.assert_allclose(ot.data.ravel(), [expected["t"]], rtol=1e-12)
    np.testing.assert_allclose(oi.data.ravel(), [expected["i0"], expected["i1"]], rtol=1e-12)
    np.testing.assert_allclose(w.data.sum(axis=-1), 1.0, atol=1e-12)


def _inputs(model, prompt="red circle", seed=0):
    cfg = model.config
    rng = make_rng(seed)
    x = rng.standard_normal((2, cfg.image_size, cfg.image_size, cfg.channels)).astype(np.float32)
    emb = model.encode(prompt)
    return x, emb


def _block_inputs(model, prompt="red circle"):
    x, emb = _inputs(model, prompt)
    with T.no_grad():
        img = model.embed_image(T.Tensor(x))
        txt = model.embed_text(T.Tensor(np.broadcast_to(emb.c_ctxt, (2, *emb.c_ctxt.shape)).copy()))
        m = modulation_embedding(
            T.Tensor(np.broadcast_to(emb.c_pool, (2, emb.c_pool.size)).copy()),
            model.time_embedding(0.5, 2),
            model.guidance_embedding(1.0, 2),
        )
    return img, txt, m


def test_attention_rows_sum_to_one(random_model):
    img, txt, m = _block_inputs(random_model)
    with T.no_grad():
        _, _, internals = joint_attention(random_model, 0, img, txt, m, m)
    assert np.abs(internals.weights.sum(axis=-1) - 1).max() < 1e-6
    cfg = random_model.config
    assert internals.q_img.shape == (2, cfg.heads, cfg.n_img, cfg.head_dim)
    assert internals.k_txt.shape == (2, cfg.heads, 2, cfg.head_dim)


def test_zero_value_projection_gives_zero_output(random_model):
    params = {k: v.data.copy() for k, v in random_model.params.items()}
    D = random_model.config.hidden
    for s in ("img", "txt"):
        params[f"blocks.0.{s}.qkv.weight"][:, 2 * D :] = 0
        params[f"blocks.0.{s}.qkv.bias"][2 * D :] = 0
    model = MMDiT(random_model.config, params)
    img, txt, m = _block_inputs(model)
    with T.no_grad():
        out_img, out_txt, _ = joint_attention(model, 0, img, txt, m, m)
    assert not out_img.data.any() and not out_txt.data.any()


def test_text_condition_changes_image_attention(random_model):
    img, txt_a, m = _block_inputs(random_model, "red circle")
    _, txt_b, _ = _block_inputs(random_model, "blue square")
    with T.no_grad():
        a, _, _ = joint_attention(random_model, 0, img, txt_a, m, m)
        b, _, _ = joint_attention(random_model, 0, img, txt_b, m, m)
    assert not np.array_equal(a.data, b.data)


# -- full forward -------------------------------------------------------------
def test_predict_velocity_deterministic_and_shaped(random_model):
    x, emb = _inputs(random_model)
    v1 = random_model.predict_velocity(x, emb, 0.3)
    v2 = random_model.predict_velocity(x, emb, 0.3)
    assert v1.tobytes() == v2.tobytes()
    assert v1.shape == x.shape
    assert random_model.predict_velocity(x[0], emb, 0.3).shape == x[0].shape


@pytest.mark.parametrize("cfg", [
    ModelConfig(image_size=8, patch_size=4, hidden=8, heads=1, blocks=1, d_pool=4, d_ctxt=6),
    ModelConfig(image_size=12, patch_size=3, hidden=12, heads=3, blocks=3, d_pool=6, d_ctxt=4, channels=2),
])
def test_output_shape_any_config(cfg):
    model = MMDiT(cfg, seed=1)
    x = make_rng(0).standard_normal((cfg.image_size, cfg.image_size, cfg.channels))
    assert model.predict_velocity(x, model.encode("blue"), 0.7).shape == x.shape


def test_shape_mismatch_rejected(random_model):
    with pytest.raises(ValueError):
        random_model.predict_velocity(np.zeros((8, 8, 3)), random_model.encode(""), 0.5)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(image_size=15, patch_size=2)
    with pytest.raises(ValueError):
        ModelConfig(hidden=30, heads=4)


def test_velocity_finite_for_bounded_inputs(random_model):
    emb = random_model.encode("green square")
    for scale in (0.0, 1.0, 10.0):
        x = np.clip(scale * make_rng(4).standard_normal((3, 16, 16, 3)), -10, 10)
        for t in (0.0, 0.5, 1.0):
            assert np.isfinite(random_model.predict_velocity(x, emb, t)).all()


def test_zeroed_output_projections_reduce_to_embed_and_head(random_model):
    params = {k: v.data.copy() for k, v in random_model.params.items()}
    for k in params:
        if k.endswith(("out.weight", "out.bias", "mlp2.weight", "mlp2.bias")):
            params[k][...] = 0
    model = MMDiT(random_model.config, params)
    cfg0 = ModelConfig(**{**random_model.config.to_json(), "blocks": 0})
    bare = MMDiT(cfg0, {k: params[k] for k in parameter_shapes(cfg0)})
    x, emb = _inputs(random_model)
    assert np.array_equal(model.predict_velocity(x, emb, 0.4), bare.predict_velocity(x, emb, 0.4))
    with T.no_grad():
        tokens = model.patchify(T.Tensor(x))
        assert np.array_equal(model.unpatchify(tokens).data, x)
