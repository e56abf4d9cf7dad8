"""Overfit runs on the templated corpus, scored on the training set each epoch."""
import time
from dataclasses import replace

import numpy as np

from spantag.config import RunConfig
from spantag.experiment import embed_documents, fit, predict_documents, score
from spantag.synth import templated_corpus


def first_converged_epoch(evaluations, ner_min=0.99, re_min=0.95):
    for ev in evaluations:
        if ev["ner"] >= ner_min and ev["re_plus"] >= re_min:
            return ev["epoch"]
    return None


def overfit_run(mode: str, lr: float, epochs: int = 200):
    cfg = RunConfig()
    cfg = replace(cfg, model=replace(cfg.model, mode=mode), train=replace(cfg.train, lr=lr, epochs=epochs))
    ds = templated_corpus(50)
    emb = embed_documents(ds.documents, cfg.embedder_config())

    def on_epoch(epoch, model):
        reps = score(ds.documents, predict_documents(model, emb), ("ner", "re_plus"))
        f1 = {c: r.overall["f1"] for c, r in reps.items()}
        return {**f1, "stop": f1["ner"] >= 0.99 and f1["re_plus"] >= 0.95}

    t0 = time.perf_counter()
    _, result = fit(ds, emb, cfg.model_config(), cfg.train, evaluate_fn=on_epoch)
    return result.evaluations, time.perf_counter() - t0


def curve_area(evaluations, epochs=200):
    """Mean of (NER+RE+)/2 over all epochs, holding the last value after an early stop."""
    vals = [(ev["ner"] + ev["re_plus"]) / 2 for ev in evaluations]
    vals += [vals[-1]] * (epochs - len(vals))
    return float(np.mean(vals))
