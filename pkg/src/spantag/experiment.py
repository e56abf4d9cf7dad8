"""Glue between configuration, data, model and scoring used by the CLI."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .data import AnnotatedDocument, Dataset
from .embedding import EmbedderConfig, align_subtokens, load_precomputed, toy_embed
from .evaluation import MetricsReport, evaluate
from .model import JointExtractor, ModelConfig
from .tagging import build_label_vocabulary
from .training import TrainConfig, TrainResult, train


def embed_documents(
    docs: Sequence[AnnotatedDocument], cfg: EmbedderConfig, embeddings_path: str | Path | None = None
) -> list[np.ndarray]:
    """Aligned ``n x d`` token embeddings for every document."""
    if cfg.mode == "toy":
        return [toy_embed(doc.tokens, cfg) for doc in docs]
    if embeddings_path is None:
        raise ValueError("precomputed embeddings need a file path")
    out: list[np.ndarray | None] = [None] * len(docs)
    for doc_id, seq in load_precomputed(embeddings_path, cfg.d, docs):
        out[doc_id] = align_subtokens(seq)
    missing = [i for i, e in enumerate(out) if e is None and docs[i].n > 0]
    if missing:
        raise ValueError(f"no precomputed embeddings for documents {missing[:10]}")
    return [e if e is not None else np.zeros((0, cfg.d)) for e in out]


def kfold_splits(n: int, k: int, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffled k-fold partition: disjoint test folds whose sizes differ by at most one."""
    if not 2 <= k <= max(n, 2):
        raise ValueError(f"cannot split {n} documents into {k} folds")
    order = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(order, k)
    return [
        (np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i])), np.sort(folds[i]))
        for i in range(k)
    ]


def build_model(dataset: Dataset, model_cfg: ModelConfig, d_in: int, seed: int) -> JointExtractor:
    return JointExtractor(dataset.schema, build_label_vocabulary(dataset), model_cfg, d_in, seed=seed)


def fit(
    dataset: Dataset,
    embeddings: Sequence[np.ndarray],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    log_path: str | Path | None = None,
    evaluate_fn=None,
    eval_every: int = 1,
) -> tuple[JointExtractor, TrainResult]:
    model = build_model(dataset, model_cfg, embeddings[0].shape[1] if embeddings else model_cfg.encoder.d, train_cfg.seed)
    result = train(model, dataset.documents, embeddings, train_cfg, log_path, evaluate_fn, eval_every)
    return model, result


def predict_documents(model: JointExtractor, embeddings: Sequence[np.ndarray]) -> list[dict]:
    preds = []
    for emb in embeddings:
        p = model.predict(emb)
        preds.append({"entities": p["entities"], "relations": p["relations"]})
    return preds


def score(
    golds: Sequence[AnnotatedDocument], preds: Sequence[dict], criteria: Sequence[str], aggregation: str = "micro"
) -> dict[str, MetricsReport]:
    return {c: evaluate(golds, preds, c, aggregation) for c in criteria}
