"""Strict P/R/F1 scoring for entities (NER), relations by boundaries (RE) and
relations by boundaries plus entity types (RE+), with length-bucketed views."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .data import AnnotatedDocument, assign_bucket, bucket_labels

CRITERIA = ("ner", "ner_head", "re", "re_plus")


class EvaluationError(ValueError):
    pass


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __iadd__(self, other: "Counts") -> "Counts":
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        return self


def _safe_div(num: float, den: float) -> tuple[float, bool]:
    return (num / den, False) if den else (0.0, True)


def prf(c: Counts) -> dict:
    p, zp = _safe_div(c.tp, c.tp + c.fp)
    r, zr = _safe_div(c.tp, c.tp + c.fn)
    f1, zf = _safe_div(2 * p * r, p + r)
    out = {"p": p, "r": r, "f1": f1, "tp": c.tp, "fp": c.fp, "fn": c.fn}
    if zp or zr or zf:
        out["zero_division"] = True
    return out


# -- per-document matching ---------------------------------------------------
# Predictions use the prediction-file record shape:
#   {"entities": [{"type", "start", "end", ...}], "relations": [{"type", "head_span", "tail_span", ...}]}


def gold_entity_tuples(doc: AnnotatedDocument, criterion: str = "ner") -> set[tuple]:
    if criterion == "ner_head":
        if not all(e.has_head for e in doc.entities):
            raise EvaluationError("entity-head scoring needs head_start/head_end on every gold entity")
        return {(e.head_start, e.head_end, e.type) for e in doc.entities}
    return {(e.start, e.end, e.type) for e in doc.entities}


def predicted_entity_tuples(pred: dict, criterion: str = "ner") -> set[tuple]:
    if criterion == "ner_head":
        out = set()
        for e in pred.get("entities", []):
            if "head_start" not in e or "head_end" not in e:
                raise EvaluationError("entity-head scoring needs head_start/head_end on every prediction")
            out.add((e["head_start"], e["head_end"], e["type"]))
        return out
    return {(e["start"], e["end"], e["type"]) for e in pred.get("entities", [])}


def gold_relation_tuples(doc: AnnotatedDocument, criterion: str) -> set[tuple]:
    out = set()
    for r in doc.relations:
        h, t = doc.entities[r.head], doc.entities[r.tail]
        if criterion == "re":
            out.add((h.span, t.span, r.type))
        else:
            out.add(((*h.span, h.type), (*t.span, t.type), r.type))
    return out


def predicted_relation_tuples(pred: dict, criterion: str) -> set[tuple]:
    span_types: dict[tuple, set] = {}
    for e in pred.get("entities", []):
        span_types.setdefault((e["start"], e["end"]), set()).add(e["type"])
    out = set()
    for r in pred.get("relations", []):
        hs, ts = tuple(r["head_span"]), tuple(r["tail_span"])
        if criterion == "re":
            out.add((hs, ts, r["type"]))
            continue
        head_types = [r["head_type"]] if "head_type" in r else span_types.get(hs, ())
        tail_types = [r["tail_type"]] if "tail_type" in r else span_types.get(ts, ())
        for ht in head_types:
            for tt in tail_types:
                out.add(((*hs, ht), (*ts, tt), r["type"]))
    return out


def match_sets(gold: set, predicted: set) -> dict[str, Counts]:
    """Per-type TP/FP/FN by exact set matching; the type is the last tuple field."""
    counts: dict[str, Counts] = {}
    for item in gold | predicted:
        c = counts.setdefault(item[-1], Counts())
        if item in gold and item in predicted:
            c.tp += 1
        elif item in gold:
            c.fn += 1
        else:
            c.fp += 1
    return counts


def match_entities(gold: AnnotatedDocument, predicted: dict, criterion: str = "ner") -> dict[str, Counts]:
    return match_sets(gold_entity_tuples(gold, criterion), predicted_entity_tuples(predicted, criterion))


def match_relations(gold: AnnotatedDocument, predicted: dict, criterion: str = "re_plus") -> dict[str, Counts]:
    if criterion not in ("re", "re_plus"):
        raise EvaluationError(f"unknown relation criterion {criterion!r}")
    return match_sets(gold_relation_tuples(gold, criterion), predicted_relation_tuples(predicted, criterion))


def match_document(gold: AnnotatedDocument, predicted: dict, criterion: str) -> dict[str, Counts]:
    if criterion in ("ner", "ner_head"):
        return match_entities(gold, predicted, criterion)
    if criterion in ("re", "re_plus"):
        return match_relations(gold, predicted, criterion)
    raise EvaluationError(f"unknown criterion {criterion!r}")


# -- aggregation -------------------------------------------------------------


@dataclass
class MetricsReport:
    criterion: str
    aggregation: str
    per_type: dict[str, dict]
    overall: dict
    buckets: dict[str, "MetricsReport"] | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "criterion": self.criterion,
            "aggregation": self.aggregation,
            "per_type": self.per_type,
            "overall": self.overall,
        }
        if self.notes:
            out["notes"] = self.notes
        if self.buckets is not None:
            out["buckets"] = {k: v.to_dict() for k, v in self.buckets.items()}
        return out

    def table(self) -> str:
        rows = [("type", "P", "R", "F1", "TP", "FP", "FN")]
        for name, m in sorted(self.per_type.items()):
            rows.append((name, f"{m['p']:.4f}", f"{m['r']:.4f}", f"{m['f1']:.4f}", str(m["tp"]), str(m["fp"]), str(m["fn"])))
        o = self.overall
        rows.append((f"[{self.aggregation}]", f"{o['p']:.4f}", f"{o['r']:.4f}", f"{o['f1']:.4f}",
                     str(o.get("tp", "")), str(o.get("fp", "")), str(o.get("fn", ""))))
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = [f"criterion: {self.criterion}"]
        for r in rows:
            lines.append("  ".join(cell.rjust(w) if i else cell.ljust(w) for i, (cell, w) in enumerate(zip(r, widths))))
        return "\n".join(lines)


def prf1(counts: dict[str, Counts], aggregation: str = "micro", criterion: str = "") -> MetricsReport:
    """Turn per-type counts into a report; micro pools counts, macro averages per-type scores."""
    per_type = {t: prf(c) for t, c in sorted(counts.items())}
    pooled = Counts()
    for c in counts.values():
        pooled += c
    notes = []
    if aggregation == "micro":
        overall = prf(pooled)
    elif aggregation == "macro":
        present = sorted(t for t, c in counts.items() if c.tp + c.fn > 0)
        absent = sorted(set(counts) - set(present))
        if absent:
            notes.append(f"macro average excludes types absent from gold: {absent}")
        if present:
            overall = {k: sum(per_type[t][k] for t in present) / len(present) for k in ("p", "r", "f1")}
        else:
            overall = {"p": 0.0, "r": 0.0, "f1": 0.0, "zero_division": True}
        overall.update(tp=pooled.tp, fp=pooled.fp, fn=pooled.fn)
    else:
        raise EvaluationError(f"unknown aggregation {aggregation!r}")
    if any(m.get("zero_division") for m in [*per_type.values(), overall]):
        notes.append("zero denominators reported as 0")
    return MetricsReport(criterion, aggregation, per_type, overall, notes=notes)


def count_corpus(golds: Sequence[AnnotatedDocument], preds: Sequence[dict], criterion: str) -> dict[str, Counts]:
    if len(golds) != len(preds):
        raise EvaluationError(f"{len(golds)} gold documents but {len(preds)} predictions")
    total: dict[str, Counts] = {}
    for g, p in zip(golds, preds):
        for t, c in match_document(g, p, criterion).items():
            total.setdefault(t, Counts())
            total[t] += c
    return total


def evaluate(golds, preds, criterion: str = "ner", aggregation: str = "micro") -> MetricsReport:
    return prf1(count_corpus(golds, preds, criterion), aggregation, criterion)


def _filter_entities_by_length(doc: AnnotatedDocument, pred: dict, bucket: str):
    keep = [e for e in doc.entities if assign_bucket(e.width, "entity") == bucket]
    gold = AnnotatedDocument(doc.tokens, tuple(keep), ())
    ents = [e for e in pred.get("entities", []) if 1 <= e["end"] - e["start"] <= 10
            and assign_bucket(e["end"] - e["start"], "entity") == bucket]
    return gold, {"entities": ents, "relations": []}


def bucketed_report(
    golds: Sequence[AnnotatedDocument],
    preds: Sequence[dict],
    kind: str,
    criterion: str = "ner",
    aggregation: str = "micro",
) -> MetricsReport:
    """Scores split by entity length (NER only) or by sentence length (any criterion)."""
    if len(golds) != len(preds):
        raise EvaluationError(f"{len(golds)} gold documents but {len(preds)} predictions")
    buckets: dict[str, MetricsReport] = {}
    if kind == "entity_length":
        if criterion != "ner":
            raise EvaluationError("entity-length buckets apply to NER scoring only")
        for label in bucket_labels("entity"):
            pairs = [_filter_entities_by_length(g, p, label) for g, p in zip(golds, preds)]
            sub = evaluate([g for g, _ in pairs], [p for _, p in pairs], criterion, aggregation)
            if sub.per_type:
                buckets[label] = sub
    elif kind == "text_length":
        groups: dict[str, list[int]] = {}
        for i, g in enumerate(golds):
            groups.setdefault(assign_bucket(g.n, "text"), []).append(i)
        for label in bucket_labels("text"):
            idx = groups.get(label)
            if idx:
                buckets[label] = evaluate([golds[i] for i in idx], [preds[i] for i in idx], criterion, aggregation)
    else:
        raise EvaluationError(f"unknown bucket kind {kind!r}")
    report = evaluate(golds, preds, criterion, aggregation)
    report.buckets = buckets
    return report
