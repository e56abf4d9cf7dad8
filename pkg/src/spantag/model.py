"""Joint extractor: encoder plus tagging, span and relation decoders.

``loss_and_grads`` runs the joint objective over a mini-batch and returns the
exact gradient for every parameter; ``predict`` decodes entities and relations.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import encoder as enc
from . import heads
from .data import TypeSchema
from .tagging import LabelVocabulary

PROB_CLAMP = 1e-12
NO_DECAY_LEAVES = frozenset({"b", "b_1", "b_2", "ln1_g", "ln1_b", "ln2_g", "ln2_b"})


@dataclass(frozen=True)
class ModelConfig:
    encoder: enc.EncoderConfig = field(default_factory=enc.EncoderConfig)
    width_threshold: int = heads.DEFAULT_WIDTH_THRESHOLD
    width_dim: int = heads.DEFAULT_WIDTH_DIM
    alpha: float = heads.DEFAULT_ALPHA
    use_label_stream: bool = True

    def __post_init__(self):
        if self.width_threshold < 1 or self.width_dim < 1:
            raise ValueError("width threshold and width embedding size must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")

    @property
    def variant(self) -> str:
        return self.encoder.mode if self.use_label_stream else "no_label"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        obj = dict(obj)
        obj["encoder"] = enc.EncoderConfig(**obj["encoder"])
        return cls(**obj)


class Example(NamedTuple):
    """One document prepared for the joint loss."""

    embeddings: np.ndarray
    tag_ids: np.ndarray
    span_starts: np.ndarray
    span_ends: np.ndarray
    span_labels: np.ndarray
    pairs: np.ndarray  # (m, 4): head_start, head_end, tail_start, tail_end
    pair_targets: np.ndarray  # (m, relation types) multi-hot


@dataclass(frozen=True)
class LossBreakdown:
    L_L: float
    L_E: float
    L_R: float
    M_L: int
    M_E: int
    M_R: int

    @property
    def L_joint(self) -> float:
        return self.L_L + self.L_E + self.L_R

    def to_dict(self) -> dict:
        return {"L_L": self.L_L, "L_E": self.L_E, "L_R": self.L_R, "L_joint": self.L_joint,
                "M_L": self.M_L, "M_E": self.M_E, "M_R": self.M_R}


def decays(name: str) -> bool:
    """Whether weight decay applies: weight matrices yes, biases and layer-norm parameters no."""
    return name.rsplit("/", 1)[-1] not in NO_DECAY_LEAVES


def _ce_sum_and_grad(probs: np.ndarray, gold: np.ndarray):
    """Clamped cross-entropy sum and its gradient w.r.t. the softmax logits."""
    rows = np.arange(len(gold))
    p = probs[rows, gold]
    clamped = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = -np.log(clamped).sum()
    dlogits = probs.copy()
    dlogits[rows, gold] -= 1.0
    dlogits[(p != clamped)] = 0.0
    return loss, dlogits


def _bce_sum_and_grad(scores: np.ndarray, targets: np.ndarray):
    clamped = np.clip(scores, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = -(targets * np.log(clamped) + (1.0 - targets) * np.log(1.0 - clamped)).sum()
    dz = np.where(scores == clamped, scores - targets, 0.0)
    return loss, dz


class JointExtractor:
    def __init__(
        self,
        schema: TypeSchema,
        vocab: LabelVocabulary,
        cfg: ModelConfig,
        d_in: int,
        seed: int = 0,
        params: dict | None = None,
    ):
        self.schema = schema
        self.vocab = vocab
        self.cfg = cfg
        self.d_in = d_in
        self.params = params if params is not None else self.init_params(np.random.default_rng(seed))

    @property
    def n_entity_classes(self) -> int:
        return len(self.schema.entity_types) + 1

    @property
    def n_relation_types(self) -> int:
        return len(self.schema.relation_types)

    def init_params(self, rng: np.random.Generator) -> dict:
        ecfg = self.cfg.encoder
        d, dw, eps = ecfg.d, self.cfg.width_dim, self.cfg.width_threshold
        if self.cfg.use_label_stream:
            params = enc.init_encoder_params(ecfg, self.d_in, rng)
            params["heads/tag/W"] = enc.glorot(rng, d, len(self.vocab))
            params["heads/tag/b"] = np.zeros(len(self.vocab))
        else:
            params = {}
            for s in ("E", "R"):
                params[f"proj/{s}/W"] = enc.glorot(rng, self.d_in, d)
                params[f"proj/{s}/b"] = np.zeros(d)
        params["heads/width"] = enc.glorot(rng, eps, dw)
        span_dim = 2 * d + dw
        params["heads/span/W"] = enc.glorot(rng, span_dim, self.n_entity_classes)
        params["heads/span/b"] = np.zeros(self.n_entity_classes)
        if self.n_relation_types:
            params["heads/rel/W"] = enc.glorot(rng, 2 * span_dim + d, self.n_relation_types)
            params["heads/rel/b"] = np.zeros(self.n_relation_types)
        return params

    # -- encoder ---------------------------------------------------------

    def encode(self, embeddings: np.ndarray):
        p = self.params
        if self.cfg.use_label_stream:
            states, cache = enc.encode_stack(embeddings, p, self.cfg.encoder)
            return states, cache
        H_E = embeddings @ p["proj/E/W"] + p["proj/E/b"]
        H_R = embeddings @ p["proj/R/W"] + p["proj/R/b"]
        return enc.StreamStates(None, H_E, H_R), embeddings

    def encode_backward(self, dstates: enc.StreamStates, cache) -> dict:
        if self.cfg.use_label_stream:
            return enc.encode_stack_backward(dstates, cache, self.params, self.cfg.encoder)
        embeddings = cache
        grads = {}
        for s, ds in (("E", dstates.H_E), ("R", dstates.H_R)):
            grads[f"proj/{s}/W"] = embeddings.T @ ds
            grads[f"proj/{s}/b"] = ds.sum(axis=0)
        return grads

    # -- training objective ----------------------------------------------

    def _forward_example(self, ex: Example):
        p = self.params
        n = ex.embeddings.shape[0]
        states, enc_cache = self.encode(ex.embeddings)
        out = {"states": states, "enc_cache": enc_cache, "n": n}
        if self.cfg.use_label_stream:
            probs = heads.tag_logits(states.H_L, p["heads/tag/W"], p["heads/tag/b"])
            out["tag"] = _ce_sum_and_grad(probs, ex.tag_ids)
        if len(ex.span_starts):
            rep = heads.span_representation(ex.span_starts, ex.span_ends, states.H_E, p["heads/width"])
            probs = heads.softmax(rep @ p["heads/span/W"] + p["heads/span/b"])
            out["span"] = (rep, *_ce_sum_and_grad(probs, ex.span_labels))
        if len(ex.pairs) and self.n_relation_types:
            rep, rcache = heads.relation_representation(ex.pairs, states.H_R, p["heads/width"])
            scores = heads.sigmoid(rep @ p["heads/rel/W"] + p["heads/rel/b"])
            out["rel"] = (rep, rcache, *_bce_sum_and_grad(scores, ex.pair_targets))
        return out

    def _backward_example(self, fwd, ex: Example, scale_l, scale_e, scale_r, grads: dict):
        p = self.params
        states = fwd["states"]
        n = fwd["n"]
        d = self.cfg.encoder.d
        width_shape = p["heads/width"].shape

        def acc(name, value):
            if name in grads:
                grads[name] += value
            else:
                grads[name] = value

        dH_L = np.zeros((n, d)) if self.cfg.use_label_stream else None
        dH_E = np.zeros((n, d))
        dH_R = np.zeros((n, d))
        if "tag" in fwd:
            dlogits = fwd["tag"][1] * scale_l
            acc("heads/tag/W", states.H_L.T @ dlogits)
            acc("heads/tag/b", dlogits.sum(axis=0))
            dH_L = dlogits @ p["heads/tag/W"].T
        if "span" in fwd:
            rep, _, dlogits = fwd["span"]
            dlogits = dlogits * scale_e
            acc("heads/span/W", rep.T @ dlogits)
            acc("heads/span/b", dlogits.sum(axis=0))
            dH, dW = heads.span_representation_backward(
                dlogits @ p["heads/span/W"].T, ex.span_starts, ex.span_ends, n, width_shape
            )
            dH_E += dH
            acc("heads/width", dW)
        if "rel" in fwd:
            rep, rcache, _, dz = fwd["rel"]
            dz = dz * scale_r
            acc("heads/rel/W", rep.T @ dz)
            acc("heads/rel/b", dz.sum(axis=0))
            dH, dW = heads.relation_representation_backward(dz @ p["heads/rel/W"].T, rcache, n, width_shape)
            dH_R += dH
            acc("heads/width", dW)
        for name, g in self.encode_backward(enc.StreamStates(dH_L, dH_E, dH_R), fwd["enc_cache"]).items():
            acc(name, g)

    def loss_and_grads(self, batch: Sequence[Example], need_grads: bool = True):
        """Joint loss over a batch with per-batch denominators, and its gradient."""
        batch = [ex for ex in batch if ex.embeddings.shape[0] > 0]
        fwds = [self._forward_example(ex) for ex in batch]
        M_L = sum(f["n"] for f in fwds) if self.cfg.use_label_stream else 0
        M_E = sum(len(ex.span_starts) for ex in batch)
        M_R = sum(len(ex.pairs) for ex in batch) if self.n_relation_types else 0
        s_l = 1.0 / M_L if M_L else 0.0
        s_e = 1.0 / M_E if M_E else 0.0
        s_r = 1.0 / M_R if M_R else 0.0
        L_L = sum(f["tag"][0] for f in fwds if "tag" in f) * s_l
        L_E = sum(f["span"][1] for f in fwds if "span" in f) * s_e
        L_R = sum(f["rel"][2] for f in fwds if "rel" in f) * s_r
        losses = LossBreakdown(float(L_L), float(L_E), float(L_R), M_L, M_E, M_R)
        if not need_grads:
            return losses, None
        grads: dict = {}
        for f, ex in zip(fwds, batch):
            self._backward_example(f, ex, s_l, s_e, s_r, grads)
        for name, value in self.params.items():
            if name not in grads:
                grads[name] = np.zeros_like(value)
        return losses, grads

    # -- inference -------------------------------------------------------

    def predict(self, embeddings: np.ndarray) -> dict:
        """Entities and relations for one document, in the prediction-file record format."""
        n = embeddings.shape[0]
        if n == 0:
            return {"entities": [], "relations": [], "labels": []}
        p = self.params
        states, _ = self.encode(embeddings)
        labels = []
        if self.cfg.use_label_stream:
            probs = heads.tag_logits(states.H_L, p["heads/tag/W"], p["heads/tag/b"])
            labels = self.vocab.decode(probs.argmax(axis=1))
        spans = heads.enumerate_spans(n, self.cfg.width_threshold)
        starts, ends = heads.span_arrays(spans)
        rep = heads.span_representation(starts, ends, states.H_E, p["heads/width"])
        posteriors = heads.softmax(rep @ p["heads/span/W"] + p["heads/span/b"])
        found = heads.classify_spans(spans, posteriors, self.schema.entity_types)
        entities = [{"type": t, "start": s.start, "end": s.end, "score": score} for s, t, score in found]
        relations = []
        candidates = heads.build_relation_candidates([s for s, _, _ in found])
        if candidates and self.n_relation_types:
            pairs = np.array([[a.start, a.end, b.start, b.end] for a, b in candidates], dtype=np.int64)
            rrep, _ = heads.relation_representation(pairs, states.H_R, p["heads/width"])
            scores = heads.sigmoid(rrep @ p["heads/rel/W"] + p["heads/rel/b"])
            for (a, b), active in zip(candidates, heads.classify_relations(scores, self.schema.relation_types, self.cfg.alpha)):
                for rtype, score in active:
                    relations.append(
                        {"type": rtype, "head_span": [a.start, a.end], "tail_span": [b.start, b.end], "score": score}
                    )
        return {"entities": entities, "relations": relations, "labels": labels}
