import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spantag import encoder as enc
from spantag.encoder import EncoderConfig, StreamStates


def rng(seed=0):
    return np.random.default_rng(seed)


def unit_params(d, h, seed=0):
    return enc.init_unit_params(d, h, rng(seed))


# -- scalar-loop oracles ------------------------------------------------------


def loop_matmul(A, B):
    n, k = len(A), len(B)
    m = len(B[0])
    return [[sum(A[i][t] * B[t][j] for t in range(k)) for j in range(m)] for i in range(n)]


def loop_mha(Q, K, V, p, h):
    n, d = Q.shape
    dk = d // h
    heads = []
    for i in range(h):
        cols = slice(i * dk, (i + 1) * dk)
        q = loop_matmul(Q.tolist(), p["W_Q"][:, cols].tolist())
        k = loop_matmul(K.tolist(), p["W_K"][:, cols].tolist())
        v = loop_matmul(V.tolist(), p["W_V"][:, cols].tolist())
        head = []
        for a in range(n):
            s = [sum(q[a][c] * k[b][c] for c in range(dk)) / math.sqrt(dk) for b in range(len(K))]
            mx = max(s)
            e = [math.exp(x - mx) for x in s]
            z = sum(e)
            head.append([sum(e[b] / z * v[b][c] for b in range(len(K))) for c in range(dk)])
        heads.append(head)
    concat = [[x for hd in heads for x in hd[a]] for a in range(n)]
    return np.array(loop_matmul(concat, p["W_O"].tolist()))


def loop_ffn(X, p):
    hid = [[max(0.0, v + b) for v, b in zip(row, p["b_1"])] for row in loop_matmul(X.tolist(), p["W_1"].tolist())]
    return np.array([[v + b for v, b in zip(row, p["b_2"])] for row in loop_matmul(hid, p["W_2"].tolist())])


def loop_layer_norm(X, g, b, eps=1e-5):
    out = []
    for row in X.tolist():
        mu = sum(row) / len(row)
        var = sum((x - mu) ** 2 for x in row) / len(row)
        out.append([(x - mu) / math.sqrt(var + eps) * gi + bi for x, gi, bi in zip(row, g, b)])
    return np.array(out)


# -- multi-head attention ------------------------------------------------------


def test_mha_uniform_weights_average_values():
    I = np.eye(2)
    p = {"W_Q": I, "W_K": I, "W_V": I, "W_O": I}
    V = np.array([[2.0, 0.0], [0.0, 4.0]])
    out, _ = enc.multi_head_attention(np.zeros((2, 2)), np.zeros((2, 2)), V, p, heads=1)
    np.testing.assert_allclose(out, [[1.0, 2.0], [1.0, 2.0]])


def test_mha_vs_loop_oracle():
    r = rng(3)
    Q, K, V = r.normal(size=(3, 4)), r.normal(size=(3, 4)), r.normal(size=(3, 4))
    p = unit_params(4, 2, seed=4)
    out, _ = enc.multi_head_attention(Q, K, V, p, heads=2)
    np.testing.assert_allclose(out, loop_mha(Q, K, V, p, 2), rtol=0, atol=1e-12)


def test_mha_cross_attention_lengths():
    r = rng(5)
    p = unit_params(4, 2)
    Q, K = r.normal(size=(2, 4)), r.normal(size=(5, 4))
    out, cache = enc.multi_head_attention(Q, K, K, p, heads=2)
    assert out.shape == (2, 4) and cache[6].shape == (2, 2, 5)
    np.testing.assert_allclose(out, loop_mha(Q, K, K, p, 2), atol=1e-12)


def test_mha_saturation():
    d = 4
    I = np.eye(d)
    p = {"W_Q": I, "W_K": I, "W_V": I, "W_O": I}
    Q = np.array([[1.0, 0, 0, 0]])
    K = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0], [0, 0, 1.0, 0]])
    K[0] *= 1000.0
    _, cache = enc.multi_head_attention(Q, K, K, p, heads=1)
    assert cache[6][0, 0, 0] >= 0.999


def test_mha_rejects_non_finite():
    p = unit_params(4, 2)
    Q = np.zeros((2, 4))
    Q[0, 0] = np.nan
    with pytest.raises(FloatingPointError):
        enc.multi_head_attention(Q, np.zeros((2, 4)), np.zeros((2, 4)), p, 2)


def test_key_mask_zeroes_padding():
    r = rng(6)
    p = unit_params(4, 2)
    X = r.normal(size=(4, 4))
    mask = np.array([True, True, True, False])
    out_masked, cache = enc.multi_head_attention(X[:3], X, X, p, 2, key_mask=mask)
    assert np.all(cache[6][..., 3] == 0)
    out_trim, _ = enc.multi_head_attention(X[:3], X[:3], X[:3], p, 2)
    np.testing.assert_allclose(out_masked, out_trim, atol=1e-14)


# -- FFN, layer norm, unit ---------------------------------------------------


def test_ffn_relu_clips():
    p = {"W_1": np.eye(2), "b_1": np.zeros(2), "W_2": np.eye(2), "b_2": np.zeros(2)}
    out, _ = enc.position_wise_ffn(np.array([[-1.0, 2.0]]), p)
    np.testing.assert_array_equal(out, [[0.0, 2.0]])
    out, _ = enc.position_wise_ffn(np.zeros((3, 2)), p)
    np.testing.assert_array_equal(out, np.zeros((3, 2)))


def test_ffn_vs_loop_oracle():
    r = rng(7)
    p = unit_params(5, 1)
    p["b_1"], p["b_2"] = r.normal(size=5), r.normal(size=5)
    X = r.normal(size=(4, 5))
    np.testing.assert_allclose(enc.position_wise_ffn(X, p)[0], loop_ffn(X, p), rtol=0, atol=1e-12)


def test_unit_zero_values_leave_query_residual():
    r = rng(8)
    p = unit_params(4, 2)
    p["W_V"] = np.zeros((4, 4))
    Q = r.normal(size=(3, 4))
    _, (c_attn, c_ln1, _, _) = enc.attention_unit(Q, Q, Q, p, 2)
    xhat = c_ln1[0]
    centered = Q - Q.mean(1, keepdims=True)
    np.testing.assert_allclose(xhat, centered / np.sqrt(Q.var(1, keepdims=True) + 1e-5), atol=1e-14)


def test_unit_vs_composed_oracle():
    r = rng(9)
    p = unit_params(4, 2, seed=10)
    p["ln1_g"], p["ln1_b"] = r.normal(size=4), r.normal(size=4)
    Q, K = r.normal(size=(3, 4)), r.normal(size=(5, 4))
    out, _ = enc.attention_unit(Q, K, K, p, 2)
    A = loop_layer_norm(Q + loop_mha(Q, K, K, p, 2), p["ln1_g"], p["ln1_b"])
    expected = loop_layer_norm(A + loop_ffn(A, p), p["ln2_g"], p["ln2_b"])
    np.testing.assert_allclose(out, expected, atol=1e-11)


def test_unit_normalized_rows():
    r = rng(11)
    p = unit_params(8, 2)
    Q = r.normal(scale=4, size=(6, 8))
    _, (_, c_ln1, _, c_ln2) = enc.attention_unit(Q, Q, Q, p, 2)
    for xhat in (c_ln1[0], c_ln2[0]):
        np.testing.assert_allclose(xhat.mean(1), 0, atol=1e-6)


# -- fusion ---------------------------------------------------------------


def test_fuse_zero_weights_give_bias():
    b = np.array([1.0, -2.0, 3.0])
    out, _ = enc.fuse_streams(rng().normal(size=(4, 3)), rng(1).normal(size=(4, 3)), np.zeros((6, 3)), b)
    np.testing.assert_array_equal(out, np.tile(b, (4, 1)))


def test_fuse_hand_case():
    out, _ = enc.fuse_streams(np.array([[2.0], [3.0]]), np.array([[4.0], [5.0]]), np.array([[1.0], [1.0]]), np.zeros(1))
    np.testing.assert_array_equal(out, [[6.0], [8.0]])


# -- layers and stack ------------------------------------------------------------


def layer_setup(mode, d=8, h=2, n=5, seed=0):
    cfg = EncoderConfig(layers=1, heads=h, d=d, mode=mode)
    params = enc.init_encoder_params(cfg, d, rng(seed))
    r = rng(seed + 100)
    states = StreamStates(*(r.normal(size=(n, d)) for _ in range(3)))
    return cfg, enc.sub_params(params, "layer0"), states


def fresh(r, x):
    return r.normal(size=x.shape)


def test_entity_stream_reads_updated_labels():
    cfg, lp, s = layer_setup("full")
    base, _ = enc.encode_layer(s, lp, "full", cfg.heads)
    moved, _ = enc.encode_layer(StreamStates(s.H_L + 0.1, s.H_E, s.H_R), lp, "full", cfg.heads)
    assert not np.allclose(base.H_E, moved.H_E)
    assert not np.allclose(base.H_R, moved.H_R)


def test_lea_uses_updated_label_stream():
    cfg, lp, s = layer_setup("full")
    out, _ = enc.encode_layer(s, lp, "full", cfg.heads)
    expected, _ = enc.attention_unit(s.H_E, out.H_L, out.H_L, enc.sub_params(lp, "lea"), cfg.heads)
    np.testing.assert_array_equal(out.H_E, expected)


@pytest.mark.parametrize(
    "mode, frozen, moving",
    [("none", ("H_E", "H_R"), ()), ("no_re_to_ner", ("H_R",), ("H_E",)), ("no_ner_to_re", ("H_E",), ("H_R",)),
     ("full", (), ("H_E", "H_R"))],
)
def test_label_stream_dependencies(mode, frozen, moving):
    cfg, lp, s = layer_setup(mode)
    base, _ = enc.encode_layer(s, lp, mode, cfg.heads)
    r = rng(42)
    for name in frozen:
        out, _ = enc.encode_layer(s._replace(**{name: fresh(r, s.H_E)}), lp, mode, cfg.heads)
        np.testing.assert_array_equal(out.H_L, base.H_L)
    for name in moving:
        out, _ = enc.encode_layer(s._replace(**{name: fresh(r, s.H_E)}), lp, mode, cfg.heads)
        assert not np.allclose(out.H_L, base.H_L)


def test_fusion_params_only_in_full_mode():
    for mode in enc.INTERACTION_MODES:
        params = enc.init_encoder_params(EncoderConfig(layers=2, heads=2, d=4, mode=mode), 4, rng())
        has_fuse = any("/fuse/" in k for k in params)
        assert has_fuse == (mode == "full")


def test_stack_equals_sequential_layers():
    cfg = EncoderConfig(layers=3, heads=2, d=8)
    params = enc.init_encoder_params(cfg, 6, rng(1))
    emb = rng(2).normal(size=(5, 6))
    out, _ = enc.encode_stack(emb, params, cfg)
    s = enc.project_inputs(emb, params)
    for k in range(3):
        s, _ = enc.encode_layer(s, enc.sub_params(params, f"layer{k}"), "full", 2)
    for a, b in zip(out, s):
        np.testing.assert_array_equal(a, b)
        assert a.shape == (5, 8)


def test_single_layer_stack():
    cfg = EncoderConfig(layers=1, heads=2, d=4, mode="none")
    params = enc.init_encoder_params(cfg, 4, rng(3))
    emb = rng(4).normal(size=(3, 4))
    out, _ = enc.encode_stack(emb, params, cfg)
    ref, _ = enc.encode_layer(enc.project_inputs(emb, params), enc.sub_params(params, "layer0"), "none", 2)
    for a, b in zip(out, ref):
        np.testing.assert_array_equal(a, b)


def test_initial_streams_are_projections():
    cfg = EncoderConfig(layers=1, heads=1, d=4)
    params = enc.init_encoder_params(cfg, 3, rng(5))
    emb = rng(6).normal(size=(2, 3))
    s = enc.project_inputs(emb, params)
    np.testing.assert_allclose(s.H_L, emb @ params["proj/L/W"] + params["proj/L/b"])
    assert not np.allclose(s.H_L, s.H_E)


def test_glorot_bounds_and_zero_biases():
    params = enc.init_unit_params(8, 2, rng(7))
    assert np.abs(params["W_Q"]).max() <= math.sqrt(6 / (8 + 4))
    assert np.abs(params["W_O"]).max() <= math.sqrt(6 / 16)
    assert not params["b_1"].any() and np.all(params["ln1_g"] == 1)


@pytest.mark.parametrize("bad", [dict(layers=0), dict(d=6, heads=4), dict(mode="sideways")])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        EncoderConfig(**bad)


@pytest.mark.parametrize("mode", enc.INTERACTION_MODES)
def test_stack_backward_numeric(mode):
    """Directional derivative of a random linear read-out of all three streams."""
    cfg = EncoderConfig(layers=2, heads=2, d=4, mode=mode)
    params = enc.init_encoder_params(cfg, 4, rng(8))
    emb = rng(9).normal(size=(3, 4))
    r = rng(10)
    proj = StreamStates(*(r.normal(size=(3, 4)) for _ in range(3)))

    def f():
        s, _ = enc.encode_stack(emb, params, cfg)
        return sum((a * b).sum() for a, b in zip(s, proj))

    _, cache = enc.encode_stack(emb, params, cfg)
    grads = enc.encode_stack_backward(proj, cache, params, cfg)
    assert set(grads) == set(params)
    for name, p in params.items():
        direction = rng(11).normal(size=p.shape)
        h = 1e-6
        p += h * direction
        up = f()
        p -= 2 * h * direction
        down = f()
        p += h * direction
        numeric = (up - down) / (2 * h)
        analytic = (grads[name] * direction).sum()
        assert abs(numeric - analytic) <= 1e-6 * max(1.0, abs(analytic)), name


@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_normalized_variance_identity(seed, scale):
    x = np.random.default_rng(seed).normal(scale=scale, size=(5, 16))
    _, cache = enc.layer_norm(x, np.ones(16), np.zeros(16))
    v = x.var(axis=1)
    np.testing.assert_allclose(cache[0].var(axis=1), v / (v + enc.LN_EPS), rtol=1e-12)
    assert np.all(np.abs(cache[0].mean(axis=1)) < 1e-12)
