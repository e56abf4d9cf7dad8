"""Span and relation candidates, the three linear decoders, negative sampling.

Spans are ``(start, end)`` pairs, 0-based and end-exclusive. Class 0 of the
span classifier is ``NoneEntity``; classes ``1..T`` follow schema order.
"""
from __future__ import annotations

import logging
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .data import AnnotatedDocument

log = logging.getLogger(__name__)

DEFAULT_WIDTH_THRESHOLD = 10
DEFAULT_WIDTH_DIM = 150
DEFAULT_ALPHA = 0.4


class SpanCandidate(NamedTuple):
    start: int
    end: int

    @property
    def width(self) -> int:
        return self.end - self.start


class RelationCandidate(NamedTuple):
    head: SpanCandidate
    tail: SpanCandidate


def softmax(logits: np.ndarray) -> np.ndarray:
    return kernels.softmax_rows(np.ascontiguousarray(logits, dtype=np.float64))


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tag_logits(H_L: np.ndarray, W_L: np.ndarray, b_L: np.ndarray) -> np.ndarray:
    """Row-wise label distribution for every token."""
    return softmax(H_L @ W_L + b_L)


def enumerate_spans(n: int, max_width: int = DEFAULT_WIDTH_THRESHOLD) -> list[SpanCandidate]:
    """All spans of width ``1..min(max_width, n)``, ordered by start then width."""
    if max_width < 1:
        raise ValueError("width threshold must be >= 1")
    return [
        SpanCandidate(i, i + w)
        for i in range(n)
        for w in range(1, min(max_width, n - i) + 1)
    ]


def span_arrays(spans: Sequence[tuple[int, int]]) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(spans, dtype=np.int64).reshape(-1, 2)
    return arr[:, 0].copy(), arr[:, 1].copy()


def span_representation(starts, ends, H: np.ndarray, width_table: np.ndarray) -> np.ndarray:
    """``[H[start]; H[end - 1]; width_table[width - 1]]`` for each span."""
    widths = ends - starts
    if widths.size and (widths.min() < 1 or widths.max() > width_table.shape[0]):
        raise ValueError(f"span width outside 1..{width_table.shape[0]}")
    return np.concatenate([H[starts], H[ends - 1], width_table[widths - 1]], axis=1)


def span_representation_backward(drep, starts, ends, n_rows: int, width_table_shape):
    d = (drep.shape[1] - width_table_shape[1]) // 2
    idx = np.concatenate([starts, ends - 1])
    src = np.concatenate([drep[:, :d], drep[:, d : 2 * d]], axis=0)
    dH = kernels.scatter_add_rows(n_rows, idx, np.ascontiguousarray(src))
    dW = kernels.scatter_add_rows(width_table_shape[0], ends - starts - 1, np.ascontiguousarray(drep[:, 2 * d :]))
    return dH, dW


def context_windows(head_starts, head_ends, tail_starts, tail_ends):
    """Token window strictly between two spans; empty when they touch or overlap."""
    lo = np.minimum(head_ends, tail_ends)
    hi = np.maximum(head_starts, tail_starts)
    return lo, np.maximum(hi, lo)


def relation_representation(pairs, H_R: np.ndarray, width_table: np.ndarray):
    """``[E_head; E_tail; context]`` for each ordered span pair, plus the cache for backward.

    ``pairs`` is an ``(m, 4)`` int array of ``head_start, head_end, tail_start, tail_end``.
    The context is the element-wise max over the rows between the two spans,
    or zeros when nothing lies between them.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 4)
    hs, he, ts, te = (pairs[:, c].copy() for c in range(4))
    lo, hi = context_windows(hs, he, ts, te)
    ctx, arg = kernels.segment_max(np.ascontiguousarray(H_R), lo, hi)
    rep = np.concatenate(
        [span_representation(hs, he, H_R, width_table), span_representation(ts, te, H_R, width_table), ctx],
        axis=1,
    )
    return rep, (hs, he, ts, te, arg)


def relation_representation_backward(drep, cache, n_rows: int, width_table_shape):
    hs, he, ts, te, arg = cache
    # rep width is 2 * (2d + d_w) + d
    d = (drep.shape[1] - 2 * width_table_shape[1]) // 5
    span_dim = 2 * d + width_table_shape[1]
    dH1, dW1 = span_representation_backward(drep[:, :span_dim], hs, he, n_rows, width_table_shape)
    dH2, dW2 = span_representation_backward(drep[:, span_dim : 2 * span_dim], ts, te, n_rows, width_table_shape)
    dH3 = kernels.segment_max_backward(np.ascontiguousarray(drep[:, 2 * span_dim :]), arg, n_rows)
    return dH1 + dH2 + dH3, dW1 + dW2


def classify_spans(spans: Sequence[SpanCandidate], posteriors: np.ndarray, entity_types: Sequence[str]):
    """Keep spans whose argmax class is an entity type.

    Returns ``[(span, type, probability), ...]`` in candidate order.
    """
    if len(spans) == 0:
        return []
    best = posteriors.argmax(axis=1)
    return [
        (SpanCandidate(*spans[k]), entity_types[best[k] - 1], float(posteriors[k, best[k]]))
        for k in range(len(spans))
        if best[k] != 0
    ]


def build_relation_candidates(entities: Sequence) -> list[tuple]:
    """Every ordered pair of distinct members of ``entities``."""
    return [(a, b) for i, a in enumerate(entities) for j, b in enumerate(entities) if i != j]


def classify_relations(scores: np.ndarray, relation_types: Sequence[str], alpha: float = DEFAULT_ALPHA):
    """Per candidate, the list of ``(type, score)`` whose sigmoid score reaches ``alpha``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    scores = np.asarray(scores).reshape(-1, len(relation_types))
    return [
        [(relation_types[t], float(row[t])) for t in range(len(relation_types)) if row[t] >= alpha]
        for row in scores
    ]


class NegativeSamples(NamedTuple):
    spans: list[SpanCandidate]
    pairs: list[RelationCandidate]


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_negatives(
    doc: AnnotatedDocument,
    span_quota: int,
    pair_quota: int,
    seed,
    max_width: int = DEFAULT_WIDTH_THRESHOLD,
) -> NegativeSamples:
    """Uniformly sample non-gold spans and unrelated ordered gold-entity pairs.

    Sampling is without replacement and capped by the pool size. ``seed``
    may be an int, a seed sequence, or a ``numpy.random.Generator``.
    """
    if span_quota < 0 or pair_quota < 0:
        raise ValueError("negative sample quotas must be >= 0")
    rng = _rng(seed)
    gold_spans = {(e.start, e.end) for e in doc.entities}
    pool = [s for s in enumerate_spans(doc.n, max_width) if (s.start, s.end) not in gold_spans]
    take = min(span_quota, len(pool))
    picked = sorted(rng.choice(len(pool), size=take, replace=False)) if take else []
    spans = [pool[k] for k in picked]

    entity_spans = sorted({(e.start, e.end) for e in doc.entities if e.width <= max_width})
    related = {
        (doc.entities[r.head].span, doc.entities[r.tail].span) for r in doc.relations
    }
    pair_pool = [
        RelationCandidate(SpanCandidate(*a), SpanCandidate(*b))
        for a, b in build_relation_candidates(entity_spans)
        if (a, b) not in related
    ]
    take = min(pair_quota, len(pair_pool))
    picked = sorted(rng.choice(len(pair_pool), size=take, replace=False)) if take else []
    return NegativeSamples(spans, [pair_pool[k] for k in picked])


def gold_training_targets(doc: AnnotatedDocument, entity_types: Sequence[str], relation_types: Sequence[str], max_width: int):
    """Gold span targets and gold relation multi-hot targets for one document.

    Entities wider than ``max_width`` cannot be represented as candidates and
    are dropped, along with relations that touch them.
    """
    type_index = {t: i + 1 for i, t in enumerate(entity_types)}
    rel_index = {t: i for i, t in enumerate(relation_types)}
    spans, labels = [], []
    for e in doc.entities:
        if e.width > max_width:
            log.warning("dropping gold entity %s wider than threshold %d", e.key(), max_width)
            continue
        spans.append(SpanCandidate(e.start, e.end))
        labels.append(type_index[e.type])
    targets: dict[tuple, np.ndarray] = {}
    for r in doc.relations:
        h, t = doc.entities[r.head], doc.entities[r.tail]
        if h.width > max_width or t.width > max_width:
            continue
        if h.span == t.span:
            continue
        key = RelationCandidate(SpanCandidate(*h.span), SpanCandidate(*t.span))
        vec = targets.setdefault(key, np.zeros(len(relation_types)))
        vec[rel_index[r.type]] = 1.0
    return spans, labels, targets
