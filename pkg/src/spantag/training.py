"""Losses, optimizer, learning-rate schedule, training loop, checkpoints and
finite-difference gradient verification."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import heads
from .data import AnnotatedDocument, TypeSchema
from .embedding import EmbedderConfig
from .model import PROB_CLAMP, Example, JointExtractor, LossBreakdown, ModelConfig, decays
from .tagging import LabelVocabulary, encode_labels

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-5
    warmup_ratio: float = 0.1
    weight_decay: float = 1e-2
    batch_size: int = 4
    epochs: int = 100
    neg_entities: int = 100
    neg_relations: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("lr, batch_size and epochs must be positive")
        if not 0.0 <= self.warmup_ratio <= 1.0:
            raise ValueError("warmup_ratio must lie in [0, 1]")
        if self.weight_decay < 0 or self.neg_entities < 0 or self.neg_relations < 0:
            raise ValueError("weight_decay and negative quotas must be >= 0")


# -- losses ------------------------------------------------------------------


def tagging_loss(probs: np.ndarray, gold: Sequence[int]) -> float:
    """Mean negative log-likelihood of the gold labels."""
    gold = np.asarray(gold, dtype=np.int64)
    if gold.size == 0:
        return 0.0
    p = np.clip(probs[np.arange(gold.size), gold], PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.log(p).mean())


span_loss = tagging_loss


def relation_loss(scores: np.ndarray, targets: np.ndarray) -> float:
    """Binary cross-entropy summed over relation types, averaged over pair instances."""
    scores = np.atleast_2d(scores)
    targets = np.atleast_2d(targets)
    if scores.shape[0] == 0:
        return 0.0
    s = np.clip(scores, PROB_CLAMP, 1.0 - PROB_CLAMP)
    per_pair = -(targets * np.log(s) + (1.0 - targets) * np.log(1.0 - s)).sum(axis=1)
    return float(per_pair.mean())


# -- schedule and optimizer -------------------------------------------------


def linear_schedule(step: int, total_steps: int, base_lr: float, warmup_ratio: float = 0.1) -> float:
    """Linear ramp from 0 to ``base_lr`` over the warmup steps, then linear decay to 0."""
    warmup = warmup_ratio * total_steps
    if step < warmup:
        return base_lr * step / warmup
    if total_steps <= warmup:
        return base_lr
    return base_lr * max(0.0, (total_steps - step) / (total_steps - warmup))


class AdamW:
    """Adam with bias correction and weight decay applied directly to the weights."""

    def __init__(self, params: dict, weight_decay: float = 1e-2, betas=(0.9, 0.999), eps: float = 1e-8):
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, p in params.items():
            g = grads[name]
            if self.weight_decay and decays(name):
                p *= 1.0 - lr * self.weight_decay
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# -- example preparation -----------------------------------------------------


def prepare_example(
    doc: AnnotatedDocument,
    embeddings: np.ndarray,
    vocab: LabelVocabulary,
    schema: TypeSchema,
    cfg: ModelConfig,
    neg_entities: int,
    neg_relations: int,
    rng,
) -> Example:
    """Gold targets plus freshly sampled negatives for one document."""
    eps = cfg.width_threshold
    tag_ids = np.asarray(vocab.encode(encode_labels(doc)), dtype=np.int64) if cfg.use_label_stream else np.zeros(0, np.int64)
    spans, labels, rel_targets = heads.gold_training_targets(doc, schema.entity_types, schema.relation_types, eps)
    negs = heads.sample_negatives(doc, neg_entities, neg_relations, rng, eps)
    # a span with two gold types is a single candidate; keep its first gold type
    seen = {}
    for s, lab in zip(spans, labels):
        seen.setdefault(s, lab)
    all_spans = list(seen) + list(negs.spans)
    all_labels = list(seen.values()) + [0] * len(negs.spans)
    starts, ends = heads.span_arrays(all_spans) if all_spans else (np.zeros(0, np.int64), np.zeros(0, np.int64))

    n_rel = len(schema.relation_types)
    pair_list = list(rel_targets) + list(negs.pairs)
    targets = [rel_targets[p] for p in rel_targets] + [np.zeros(n_rel)] * len(negs.pairs)
    pairs = np.array([[a.start, a.end, b.start, b.end] for a, b in pair_list], dtype=np.int64).reshape(-1, 4)
    pair_targets = np.zeros((len(targets), n_rel))
    for k, t in enumerate(targets):
        pair_targets[k] = t
    return Example(
        np.ascontiguousarray(embeddings, dtype=np.float64),
        tag_ids,
        starts,
        ends,
        np.asarray(all_labels, dtype=np.int64),
        pairs,
        pair_targets,
    )


# -- joint step and training loop -------------------------------------------


def _check_finite(losses: LossBreakdown, grads: dict) -> None:
    for key in ("L_L", "L_E", "L_R"):
        if not math.isfinite(getattr(losses, key)):
            raise FloatingPointError(f"non-finite loss {key}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter group {name}")


def joint_step(model: JointExtractor, batch: Sequence[Example], optimizer: AdamW, lr: float) -> LossBreakdown:
    losses, grads = model.loss_and_grads(batch)
    _check_finite(losses, grads)
    optimizer.step(model.params, grads, lr)
    return losses


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    evaluations: list[dict] = field(default_factory=list)


def train(
    model: JointExtractor,
    docs: Sequence[AnnotatedDocument],
    embeddings: Sequence[np.ndarray],
    cfg: TrainConfig,
    log_path: str | Path | None = None,
    evaluate: Callable[[int, JointExtractor], dict] | None = None,
    eval_every: int = 1,
) -> TrainResult:
    """Train ``model`` in place; one JSON line per epoch goes to ``log_path``.

    Document order is reshuffled and negatives are resampled every epoch from
    generators derived from ``cfg.seed``, so a run is reproducible end to end.
    """
    steps_per_epoch = max(1, math.ceil(len(docs) / cfg.batch_size))
    total_steps = steps_per_epoch * cfg.epochs
    optimizer = AdamW(model.params, cfg.weight_decay)
    result = TrainResult()
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    step = 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            order = np.random.default_rng([cfg.seed, epoch, 0]).permutation(len(docs))
            sums = np.zeros(3)
            lr = 0.0
            for b in range(steps_per_epoch):
                idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
                batch = [
                    prepare_example(
                        docs[i], embeddings[i], model.vocab, model.schema, model.cfg,
                        cfg.neg_entities, cfg.neg_relations, np.random.default_rng([cfg.seed, epoch, 1, int(i)]),
                    )
                    for i in idx
                ]
                lr = linear_schedule(step, total_steps, cfg.lr, cfg.warmup_ratio)
                losses = joint_step(model, batch, optimizer, lr)
                sums += (losses.L_L, losses.L_E, losses.L_R)
                step += 1
            mean = sums / steps_per_epoch
            record = {
                "epoch": epoch,
                "L_L": float(mean[0]),
                "L_E": float(mean[1]),
                "L_R": float(mean[2]),
                "L_joint": float(mean.sum()),
                "lr": lr,
                "wall_time_s": round(time.perf_counter() - t0, 4),
            }
            result.history.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            log.info("epoch %d L_joint=%.5f", epoch, record["L_joint"])
            if evaluate is not None and (epoch % eval_every == 0 or epoch == cfg.epochs):
                metrics = evaluate(epoch, model)
                if metrics is not None:
                    result.evaluations.append({"epoch": epoch, **metrics})
                    if metrics.get("stop"):
                        break
    finally:
        if log_fh:
            log_fh.close()
    return result


# -- checkpoints -------------------------------------------------------------

HEADER_KEY = "__header__"


def save_checkpoint(
    path: str | Path,
    model: JointExtractor,
    train_cfg: TrainConfig | None = None,
    embedder: EmbedderConfig | None = None,
) -> None:
    """Write an ``.npz`` archive of float64 parameters plus a JSON header entry."""
    header = {
        "model": model.cfg.to_dict(),
        "schema": model.schema.to_dict(),
        "labels": list(model.vocab.labels),
        "d_in": model.d_in,
        "train": asdict(train_cfg) if train_cfg else None,
        "embedder": asdict(embedder) if embedder else None,
    }
    arrays = {name: np.ascontiguousarray(v, dtype=np.float64) for name, v in model.params.items()}
    arrays[HEADER_KEY] = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> tuple[JointExtractor, dict]:
    with np.load(path, allow_pickle=False) as archive:
        header = json.loads(bytes(archive[HEADER_KEY]).decode("utf-8"))
        params = {k: archive[k].astype(np.float64) for k in archive.files if k != HEADER_KEY}
    model = JointExtractor(
        TypeSchema.from_dict(header["schema"]),
        LabelVocabulary(tuple(header["labels"])),
        ModelConfig.from_dict(header["model"]),
        header["d_in"],
        params=params,
    )
    return model, header


# -- gradient check ----------------------------------------------------------


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def failing(self) -> list[str]:
        return [k for k, v in self.errors.items() if v > self.tolerance]

    def to_dict(self) -> dict:
        return {"tolerance": self.tolerance, "max_error": self.max_error, "passed": self.passed, "groups": self.errors}


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)``; 0 when both vanish."""
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if denom < 1e-14:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)


def numeric_gradient(model: JointExtractor, batch: Sequence[Example], name: str, step: float = 1e-5) -> np.ndarray:
    p = model.params[name]
    grad = np.zeros_like(p)
    flat = p.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = model.loss_and_grads(batch, need_grads=False)[0].L_joint
        flat[i] = orig - step
        down = model.loss_and_grads(batch, need_grads=False)[0].L_joint
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return grad


def check_gradients(
    model: JointExtractor,
    batch: Sequence[Example],
    tolerance: float = 1e-4,
    step: float = 1e-5,
    tamper: Callable[[dict], dict] | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of the joint loss against central differences, per parameter group.

    ``tamper`` may rewrite the analytic gradients before comparison; it exists
    so tests can confirm that a broken gradient is caught.
    """
    _, grads = model.loss_and_grads(batch)
    if tamper is not None:
        grads = tamper(grads)
    errors = {}
    for name in model.params:
        errors[name] = relative_error(grads[name], numeric_gradient(model, batch, name, step))
    return GradCheckReport(errors, tolerance)


def gradcheck_fixture(
    mode: str = "full",
    seed: int = 0,
    d: int = 8,
    n_heads: int = 2,
    layers: int = 2,
    width_dim: int = 150,
    relation_types: tuple[str, ...] = ("WORK", "LOC"),
):
    """A small double-precision model and one five-token document for gradient checks."""
    from .embedding import toy_embed
    from .data import EntityMention, RelationMention
    from .encoder import EncoderConfig
    from .tagging import build_label_vocabulary

    schema = TypeSchema(("PER", "ORG"), relation_types)
    relations = ()
    if len(relation_types) >= 2:
        relations = (RelationMention(0, 1, relation_types[0]), RelationMention(1, 0, relation_types[1]))
    doc = AnnotatedDocument(
        ("Jack", "works", "at", "Harvard", "University"),
        (EntityMention(0, 1, "PER"), EntityMention(3, 5, "ORG"), EntityMention(3, 4, "PER")),
        relations,
    )
    vocab = build_label_vocabulary([doc])
    use_label = mode != "no_label"
    enc_cfg = EncoderConfig(layers=layers, heads=n_heads, d=d, mode=mode if use_label else "full")
    cfg = ModelConfig(encoder=enc_cfg, width_dim=width_dim, use_label_stream=use_label)
    model = JointExtractor(schema, vocab, cfg, d_in=d, seed=seed)
    emb = toy_embed(doc.tokens, EmbedderConfig(d=d, seed=seed))
    ex = prepare_example(doc, emb, vocab, schema, cfg, 6, 4, np.random.default_rng(seed))
    return model, [ex]
