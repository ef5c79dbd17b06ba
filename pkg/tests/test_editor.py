import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfedit.editor import (
    AttentionTriple,
    EditConfig,
    EditConfigError,
    PRESETS,
    attention_mask,
    coarse_edit,
    edit_direction,
    edited_generate,
    fine_edit,
    generate,
    preset,
    soft_attention_mask,
)
from rfedit.numcore import make_rng


def triple(base, edit, prior):
    f = lambda v: np.atleast_2d(np.asarray(v, dtype=np.float32))  # noqa: E731
    return AttentionTriple(f(base), f(edit), f(prior))


# -- fine edit ---------------------------------------------------------------
def test_fine_edit_zero_scale_is_base():
    rng = make_rng(0)
    tr = AttentionTriple(*(rng.standard_normal((6, 4)).astype(np.float32) for _ in range(3)))
    assert fine_edit(tr, 0.0).tobytes() == tr.base.tobytes()


def test_fine_edit_hand_example():
    # projection of (0, 2) onto (1, 0) vanishes; (1, 0) + 0.5 * (0, 2)
    out = fine_edit(triple([1, 0], [0, 2], [1, 0]), 0.5)
    np.testing.assert_allclose(out, [[1, 1]], atol=1e-7)


def test_fine_edit_parallel_edit_is_noop():
    for lam in (0.5, 3.0, 8.0):
        out = fine_edit(triple([1, 2, 3], [2, 4, 6], [1, 2, 3]), lam)
        np.testing.assert_allclose(out, [[1, 2, 3]], atol=1e-6)


def test_fine_edit_masked_rows_bit_equal_base():
    rng = make_rng(1)
    tr = AttentionTriple(*(rng.standard_normal((8, 5)).astype(np.float32) for _ in range(3)))
    mask = np.array([1, 0, 0, 1, 1, 0, 1, 0], np.uint8)
    out = fine_edit(tr, 4.0, mask)
    assert out[mask == 0].tobytes() == tr.base[mask == 0].tobytes()
    assert not np.array_equal(out[mask == 1], tr.base[mask == 1])
    assert np.array_equal(fine_edit(tr, 4.0, np.ones(8, np.uint8)), fine_edit(tr, 4.0))
    with pytest.raises(ValueError):
        fine_edit(tr, 1.0, np.ones(7))


def test_edit_direction_orthogonal_to_prior():
    rng = make_rng(2)
    tr = AttentionTriple(*(rng.standard_normal((16, 64)).astype(np.float32) for _ in range(3)))
    d = edit_direction(tr).astype(np.float64)
    prior = tr.prior.astype(np.float64)
    cos = np.abs((d * prior).sum(1)) / (np.linalg.norm(tr.edit, axis=1) * np.linalg.norm(prior, axis=1))
    assert cos.max() < 1e-5


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 10), st.floats(0, 10), st.integers(0, 10_000))
def test_fine_edit_linear_in_scale(l1, l2, seed):
    rng = make_rng(seed)
    tr = AttentionTriple(*(rng.standard_normal((4, 8)) for _ in range(3)))
    lhs = fine_edit(tr, l1) + fine_edit(tr, l2) - tr.base
    np.testing.assert_allclose(lhs, fine_edit(tr, l1 + l2), atol=1e-5)


# -- mask -----------------------------------------------------------------------
def test_mask_golden_pipeline():
    q = np.array([[2.0], [0.0]])
    k = np.array([[1.0], [0.0]])
    soft = soft_attention_mask(q, k, boundary=10.0)
    sig5 = 1 / (1 + math.exp(-5))
    np.testing.assert_allclose(soft, [sig5, 1 - sig5], atol=1e-12)
    np.testing.assert_allclose(soft, [0.993307, 0.006693], atol=1e-6)
    assert attention_mask(q, k, 10.0, 0.5).tolist() == [1, 0]


def test_mask_constant_map_is_empty():
    q = np.ones((5, 3))
    k = make_rng(3).standard_normal((4, 3))
    assert attention_mask(q, k, 10.0, 0.5).tolist() == [0] * 5


def test_mask_threshold_inclusive():
    q = np.array([[2.0], [1.0], [0.0]])
    k = np.array([[1.0], [-1.0]])
    soft = soft_attention_mask(q, k, 10.0)
    assert attention_mask(q, k, 10.0, float(soft[1])).tolist()[1] == 1
    assert attention_mask(q, k, 10.0, float(np.nextafter(soft[1], 2))).tolist()[1] == 0


def test_mask_multihead_averages_before_normalizing():
    rng = make_rng(4)
    q = rng.standard_normal((3, 10, 4))
    k = rng.standard_normal((3, 6, 4))
    maps = []
    for h in range(3):
        logits = q[h] @ k[h].T / 2.0
        p = np.exp(logits - logits.max(1, keepdims=True))
        maps.append(p[:, 0] / p.sum(1))
    m = np.mean(maps, axis=0)
    norm = (m - m.min()) / (m.max() - m.min())
    expected = 1 / (1 + np.exp(-10 * (norm - 0.5)))
    np.testing.assert_allclose(soft_attention_mask(q, k, 10.0), expected, atol=1e-12)
    assert set(np.unique(attention_mask(q, k))) <= {0, 1}


# -- coarse edit -------------------------------------------------------------------
def test_coarse_edit_endpoints_and_hand_example():
    c, ce = np.array([1.0, 0.0]), np.array([1.0, 1.0])
    assert np.array_equal(coarse_edit(c, ce, 0.0), c)
    np.testing.assert_allclose(coarse_edit(c, ce, 1.0), [0.0, 1.0])
    np.testing.assert_allclose(coarse_edit(c, ce, 0.5), [0.5, 0.5])


def test_coarse_edit_zero_base_moves_toward_raw_edit():
    np.testing.assert_allclose(coarse_edit(np.zeros(2), np.array([2.0, 4.0]), 0.5), [1.0, 2.0])


# -- config --------------------------------------------------------------------
def test_presets_match_documented_values():
    assert PRESETS["eyeglasses"] == dict(lambda_coarse=0.8, lambda_fine=5.0, tau_m=0.5, start_step=3)
    assert PRESETS["smile"] == dict(lambda_coarse=0.5, lambda_fine=8.0, tau_m=0.5, start_step=5)
    cfg = preset("smile", edit_prompt="red")
    assert cfg.lambda_fine == 8.0 and cfg.edit_prompt == "red" and cfg.boundary == 10.0


def test_defaults():
    cfg = EditConfig()
    assert (cfg.lambda_coarse, cfg.tau_m, cfg.boundary) == (0.5, 0.5, 10.0)


@pytest.mark.parametrize(
    "kwargs",
    [dict(lambda_coarse=1.5), dict(lambda_coarse=-0.1), dict(lambda_fine=-1), dict(tau_m=2), dict(start_step=-1)],
)
def test_invalid_config_rejected(kwargs):
    with pytest.raises(EditConfigError):
        EditConfig(**kwargs).validate()


def test_unknown_target_block(random_model):
    with pytest.raises(EditConfigError):
        edited_generate(random_model, "red circle", EditConfig("blue", target_blocks=[5]), steps=2)


# -- end to end -------------------------------------------------------------------
def test_identity_contract_random_model(random_model):
    plain = generate(random_model, "blue circle", steps=5, seed=1)
    edited = edited_generate(random_model, "blue circle", EditConfig("red", 0.0, 0.0), steps=5, seed=1)
    assert plain.tobytes() == edited.tobytes()
    late = edited_generate(random_model, "blue circle", EditConfig("red", 6.0, 0.7, start_step=5), steps=5, seed=1)
    assert plain.tobytes() == late.tobytes()
    active = edited_generate(random_model, "blue circle", EditConfig("red", 6.0, 0.0, masking=False), steps=5, seed=1)
    assert plain.tobytes() != active.tobytes()


def test_instrumented_invariants(random_model):
    sessions = []
    cfg = EditConfig("red", lambda_fine=4.0, lambda_coarse=0.5, start_step=1)
    edited_generate(random_model, "blue circle", cfg, steps=4, seed=2, session_out=sessions, record=True)
    s = sessions[0]
    assert sorted(s.records) == [(k, b) for k in (1, 2, 3) for b in (0, 1)]
    assert sorted(s.masks) == sorted(s.records)
    for rec in s.records.values():
        m = rec.mask[0]
        assert set(np.unique(m)) <= {0, 1}
        assert rec.output[0][m == 0].tobytes() == rec.base[0][m == 0].tobytes()
        d = (rec.output[0] - rec.base[0]).astype(np.float64) / cfg.lambda_fine
        prior = rec.prior[0].astype(np.float64)
        rows = (m == 1) & (np.linalg.norm(prior, axis=1) > 0)
        num = np.abs((d * prior).sum(1))[rows]
        den = (np.linalg.norm(rec.edit[0], axis=1) * np.linalg.norm(prior, axis=1))[rows]
        assert (num / den).max(initial=0) < 1e-4


def test_coarse_edit_only_touches_text_modulation(random_model):
    runs = {}
    for lam in (0.0, 0.8):
        sessions = []
        cfg = EditConfig("red", lambda_fine=0.0, lambda_coarse=lam, masking=False, start_step=0)
        edited_generate(random_model, "blue circle", cfg, steps=1, seed=3, session_out=sessions, record=True)
        runs[lam] = sessions[0].records[(0, 0)]
    assert runs[0.0].m_img.tobytes() == runs[0.8].m_img.tobytes()
    assert runs[0.0].m_txt["base"].tobytes() != runs[0.8].m_txt["base"].tobytes()
    for cond in ("edit", "null"):
        assert runs[0.0].m_txt[cond].tobytes() == runs[0.8].m_txt[cond].tobytes()


def test_masking_off_equals_all_ones_mask(random_model, monkeypatch):
    import rfedit.editor as ed

    off = edited_generate(random_model, "red square", EditConfig("green", 3.0, 0.0, masking=False), steps=3, seed=4)
    monkeypatch.setattr(ed, "attention_mask", lambda q, k, b, t: np.ones(q.shape[1], np.uint8))
    ones = edited_generate(random_model, "red square", EditConfig("green", 3.0, 0.0, masking=True), steps=3, seed=4)
    assert off.tobytes() == ones.tobytes()


def test_edited_generation_deterministic(random_model):
    cfg = EditConfig("green", 5.0, 0.5)
    a = edited_generate(random_model, "red circle", cfg, steps=4, seed=0)
    b = edited_generate(random_model, "red circle", cfg, steps=4, seed=0)
    assert a.tobytes() == b.tobytes()
