"""Stacked three-stream attention encoder with hand-written backward passes.

Each layer holds three attention units. The label stream attends to a fusion
of the entity and relation streams (``erla``), then the entity stream
(``lea``) and the relation stream (``lra``) each attend to the *updated*
label stream. Interaction modes rewire only the keys/values of ``erla``.

Parameters live in flat dicts keyed by slash paths such as
``layer0/erla/W_Q``. Every forward function returns ``(output, cache)`` and
has a matching ``*_backward`` taking the upstream gradient and the cache.
Per-head projections are stored side by side as column blocks of one
``d x d`` matrix: head ``i`` uses columns ``i*d/h:(i+1)*d/h``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels

INTERACTION_MODES = ("full", "no_re_to_ner", "no_ner_to_re", "none")
UNIT_NAMES = ("erla", "lea", "lra")
LN_EPS = 1e-5


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 3
    heads: int = 8
    d: int = 64
    mode: str = "full"

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("encoder needs at least one layer")
        if self.heads < 1 or self.d < 1:
            raise ValueError("heads and d must be positive")
        if self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.mode not in INTERACTION_MODES:
            raise ValueError(f"unknown interaction mode {self.mode!r}")


class StreamStates(NamedTuple):
    H_L: np.ndarray
    H_E: np.ndarray
    H_R: np.ndarray


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape or (fan_in, fan_out))


def sub_params(params: dict, prefix: str) -> dict:
    prefix = prefix.rstrip("/") + "/"
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


def prefixed(grads: dict, prefix: str) -> dict:
    return {f"{prefix}/{k}": v for k, v in grads.items()}


def init_unit_params(d: int, heads: int, rng: np.random.Generator) -> dict:
    dk = d // heads
    p = {}
    for name in ("W_Q", "W_K", "W_V"):
        p[name] = glorot(rng, d, dk, shape=(d, d))
    p["W_O"] = glorot(rng, d, d)
    p["W_1"] = glorot(rng, d, d)
    p["b_1"] = np.zeros(d)
    p["W_2"] = glorot(rng, d, d)
    p["b_2"] = np.zeros(d)
    for ln in ("ln1", "ln2"):
        p[f"{ln}_g"] = np.ones(d)
        p[f"{ln}_b"] = np.zeros(d)
    return p


def init_encoder_params(cfg: EncoderConfig, d_in: int, rng: np.random.Generator) -> dict:
    """Initial stream projections plus ``cfg.layers`` layers of unit parameters."""
    params = {}
    for s in ("L", "E", "R"):
        params[f"proj/{s}/W"] = glorot(rng, d_in, cfg.d)
        params[f"proj/{s}/b"] = np.zeros(cfg.d)
    for k in range(cfg.layers):
        if cfg.mode == "full":
            params[f"layer{k}/fuse/W"] = glorot(rng, 2 * cfg.d, cfg.d)
            params[f"layer{k}/fuse/b"] = np.zeros(cfg.d)
        for unit in UNIT_NAMES:
            for name, value in init_unit_params(cfg.d, cfg.heads, rng).items():
                params[f"layer{k}/{unit}/{name}"] = value
    return params


# -- multi-head attention ----------------------------------------------------


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    n, d = x.shape
    return x.reshape(n, heads, d // heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, n, dk = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * dk)


def multi_head_attention(Q, K, V, p: dict, heads: int, key_mask=None):
    """Scaled dot-product attention over ``heads`` heads followed by ``W_O``.

    ``key_mask`` (bool, one entry per key row) marks real positions; masked
    keys get zero weight. Without a mask every query attends to every key.
    """
    for name, x in (("Q", Q), ("K", K), ("V", V)):
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite values in attention input {name}")
    d = Q.shape[1]
    dk = d // heads
    q = _split_heads(Q @ p["W_Q"], heads)
    k = _split_heads(K @ p["W_K"], heads)
    v = _split_heads(V @ p["W_V"], heads)
    scale = 1.0 / np.sqrt(dk)
    scores = (q @ k.transpose(0, 2, 1)) * scale
    if key_mask is not None:
        key_mask = np.asarray(key_mask, dtype=bool)
        if not key_mask.any():
            raise ValueError("attention needs at least one unmasked key")
        scores = np.where(key_mask[None, None, :], scores, -np.inf)
    weights = kernels.softmax_rows(scores)
    ctx = _merge_heads(weights @ v)
    out = ctx @ p["W_O"]
    cache = (Q, K, V, q, k, v, weights, ctx, scale, heads)
    return out, cache


def multi_head_attention_backward(dout, cache, p: dict):
    Q, K, V, q, k, v, weights, ctx, scale, heads = cache
    g = {"W_O": ctx.T @ dout}
    dctx = _split_heads(dout @ p["W_O"].T, heads)
    dweights = dctx @ v.transpose(0, 2, 1)
    dv = weights.transpose(0, 2, 1) @ dctx
    dscores = kernels.softmax_rows_backward(dweights, weights) * scale
    dq = dscores @ k
    dk = dscores.transpose(0, 2, 1) @ q
    dq, dk, dv = _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)
    g["W_Q"] = Q.T @ dq
    g["W_K"] = K.T @ dk
    g["W_V"] = V.T @ dv
    return dq @ p["W_Q"].T, dk @ p["W_K"].T, dv @ p["W_V"].T, g


# -- position-wise FFN -------------------------------------------------------


def position_wise_ffn(X, p: dict):
    pre = X @ p["W_1"] + p["b_1"]
    hidden = np.maximum(pre, 0.0)
    out = hidden @ p["W_2"] + p["b_2"]
    return out, (X, pre, hidden)


def position_wise_ffn_backward(dout, cache, p: dict):
    X, pre, hidden = cache
    g = {"W_2": hidden.T @ dout, "b_2": dout.sum(axis=0)}
    dhidden = dout @ p["W_2"].T
    dpre = dhidden * (pre > 0)
    g["W_1"] = X.T @ dpre
    g["b_1"] = dpre.sum(axis=0)
    return dpre @ p["W_1"].T, g


# -- layer norm --------------------------------------------------------------


def layer_norm(x, gamma, beta):
    y, xhat, inv_std = kernels.layer_norm_forward(np.ascontiguousarray(x), gamma, beta, LN_EPS)
    return y, (xhat, inv_std, gamma)


def layer_norm_backward(dy, cache):
    xhat, inv_std, gamma = cache
    return kernels.layer_norm_backward(np.ascontiguousarray(dy), xhat, inv_std, gamma)


# -- attention unit ----------------------------------------------------------


def attention_unit(Q, K, V, p: dict, heads: int, key_mask=None):
    """Post-norm unit: ``A = LN(Q + MHA(Q, K, V))``, ``out = LN(A + FFN(A))``."""
    attn, c_attn = multi_head_attention(Q, K, V, p, heads, key_mask)
    A, c_ln1 = layer_norm(Q + attn, p["ln1_g"], p["ln1_b"])
    ffn, c_ffn = position_wise_ffn(A, p)
    out, c_ln2 = layer_norm(A + ffn, p["ln2_g"], p["ln2_b"])
    return out, (c_attn, c_ln1, c_ffn, c_ln2)


def attention_unit_backward(dout, cache, p: dict):
    c_attn, c_ln1, c_ffn, c_ln2 = cache
    g = {}
    dsum2, g["ln2_g"], g["ln2_b"] = layer_norm_backward(dout, c_ln2)
    dA_ffn, g_ffn = position_wise_ffn_backward(dsum2, c_ffn, p)
    g.update(g_ffn)
    dA = dsum2 + dA_ffn
    dsum1, g["ln1_g"], g["ln1_b"] = layer_norm_backward(dA, c_ln1)
    dQ_attn, dK, dV, g_attn = multi_head_attention_backward(dsum1, c_attn, p)
    g.update(g_attn)
    return dsum1 + dQ_attn, dK, dV, g


# -- fusion and layers -------------------------------------------------------


def fuse_streams(H_E, H_R, W, b):
    cat = np.concatenate([H_E, H_R], axis=1)
    return cat @ W + b, cat


def fuse_streams_backward(dout, cat, W):
    d = dout.shape[1]
    dcat = dout @ W.T
    return dcat[:, :d], dcat[:, d:], cat.T @ dout, dout.sum(axis=0)


def _label_memory_source(mode: str) -> str:
    return {"full": "C", "no_re_to_ner": "E", "no_ner_to_re": "R", "none": "L"}[mode]


def encode_layer(states: StreamStates, lp: dict, mode: str, heads: int, key_mask=None):
    """One layer. ``lp`` holds this layer's parameters without the ``layerK/`` prefix."""
    H_L, H_E, H_R = states
    source = _label_memory_source(mode)
    fuse_cat = None
    if source == "C":
        memory, fuse_cat = fuse_streams(H_E, H_R, lp["fuse/W"], lp["fuse/b"])
    else:
        memory = {"E": H_E, "R": H_R, "L": H_L}[source]
    erla, lea, lra = (sub_params(lp, u) for u in UNIT_NAMES)
    H_L1, c_erla = attention_unit(H_L, memory, memory, erla, heads, key_mask)
    H_E1, c_lea = attention_unit(H_E, H_L1, H_L1, lea, heads, key_mask)
    H_R1, c_lra = attention_unit(H_R, H_L1, H_L1, lra, heads, key_mask)
    cache = (source, fuse_cat, c_erla, c_lea, c_lra)
    return StreamStates(H_L1, H_E1, H_R1), cache


def encode_layer_backward(dstates: StreamStates, cache, lp: dict):
    source, fuse_cat, c_erla, c_lea, c_lra = cache
    erla, lea, lra = (sub_params(lp, u) for u in UNIT_NAMES)
    dH_L1, dH_E1, dH_R1 = dstates
    grads = {}

    dH_R, dk, dv, g = attention_unit_backward(dH_R1, c_lra, lra)
    grads.update(prefixed(g, "lra"))
    dH_L1 = dH_L1 + dk + dv
    dH_E, dk, dv, g = attention_unit_backward(dH_E1, c_lea, lea)
    grads.update(prefixed(g, "lea"))
    dH_L1 = dH_L1 + dk + dv

    dH_L, dk, dv, g = attention_unit_backward(dH_L1, c_erla, erla)
    grads.update(prefixed(g, "erla"))
    dmemory = dk + dv
    if source == "C":
        dE_f, dR_f, grads["fuse/W"], grads["fuse/b"] = fuse_streams_backward(dmemory, fuse_cat, lp["fuse/W"])
        dH_E = dH_E + dE_f
        dH_R = dH_R + dR_f
    elif source == "E":
        dH_E = dH_E + dmemory
    elif source == "R":
        dH_R = dH_R + dmemory
    else:
        dH_L = dH_L + dmemory
    return StreamStates(dH_L, dH_E, dH_R), grads


def project_inputs(embeddings: np.ndarray, params: dict) -> StreamStates:
    return StreamStates(
        *(embeddings @ params[f"proj/{s}/W"] + params[f"proj/{s}/b"] for s in ("L", "E", "R"))
    )


def run_layers(states: StreamStates, params: dict, cfg: EncoderConfig, key_mask=None):
    caches = []
    for k in range(cfg.layers):
        states, cache = encode_layer(states, sub_params(params, f"layer{k}"), cfg.mode, cfg.heads, key_mask)
        caches.append(cache)
    return states, caches


def run_layers_backward(dstates: StreamStates, caches, params: dict, cfg: EncoderConfig):
    grads = {}
    for k in reversed(range(cfg.layers)):
        dstates, g = encode_layer_backward(dstates, caches[k], sub_params(params, f"layer{k}"))
        grads.update(prefixed(g, f"layer{k}"))
    return dstates, grads


def encode_stack(embeddings: np.ndarray, params: dict, cfg: EncoderConfig, key_mask=None):
    """Project the aligned embeddings into three streams and run all layers."""
    initial = project_inputs(embeddings, params)
    states, caches = run_layers(initial, params, cfg, key_mask)
    return states, (embeddings, caches)


def encode_stack_backward(dstates: StreamStates, cache, params: dict, cfg: EncoderConfig):
    embeddings, caches = cache
    d0, grads = run_layers_backward(dstates, caches, params, cfg)
    for s, ds in zip(("L", "E", "R"), d0):
        grads[f"proj/{s}/W"] = embeddings.T @ ds
        grads[f"proj/{s}/b"] = ds.sum(axis=0)
    return grads


# -- introspection for invariant checks --------------------------------------


def iter_unit_caches(layer_caches):
    for source, fuse_cat, *units in layer_caches:
        yield from units


def attention_weights(layer_caches):
    """All per-head attention weight matrices, shape ``(heads, n_q, n_k)`` each."""
    return [c_attn[6] for c_attn, _, _, _ in iter_unit_caches(layer_caches)]


def normalized_rows(layer_caches):
    """Pre-affine layer-norm outputs of every unit in every layer."""
    out = []
    for _, c_ln1, _, c_ln2 in iter_unit_caches(layer_caches):
        out.extend([c_ln1[0], c_ln2[0]])
    return out
