import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from metric_oracle import brute_force, random_pair

from spantag.data import AnnotatedDocument, EntityMention, RelationMention
from spantag.evaluation import (
    Counts,
    EvaluationError,
    bucketed_report,
    evaluate,
    match_entities,
    match_relations,
    prf,
    prf1,
)

E = EntityMention
R = RelationMention


def assert_report_equals(report, oracle):
    types, overall = oracle
    assert set(report.per_type) == set(types)
    for t, (p, r, f) in types.items():
        m = report.per_type[t]
        assert (m["p"], m["r"], m["f1"]) == (p, r, f)
    assert (report.overall["p"], report.overall["r"], report.overall["f1"]) == overall


@pytest.mark.parametrize("criterion", ["ner", "re", "re_plus"])
@pytest.mark.parametrize("aggregation", ["micro", "macro"])
def test_oracle_equivalence_sample(criterion, aggregation):
    rng = np.random.default_rng(123)
    pairs = [random_pair(rng) for _ in range(200)]
    golds, preds = [g for g, _ in pairs], [p for _, p in pairs]
    assert_report_equals(evaluate(golds, preds, criterion, aggregation), brute_force(golds, preds, criterion, aggregation))
    for g, p in pairs[:40]:
        assert_report_equals(evaluate([g], [p], criterion, aggregation), brute_force([g], [p], criterion, aggregation))


# -- hand cases ------------------------------------------------------------------


def test_prf_hand_case():
    m = prf(Counts(tp=1, fp=2, fn=1))
    assert m["p"] == pytest.approx(1 / 3) and m["r"] == 0.5 and m["f1"] == pytest.approx(0.4)


def test_zero_counts():
    m = prf(Counts())
    assert (m["p"], m["r"], m["f1"]) == (0.0, 0.0, 0.0) and m["zero_division"]
    rep = prf1({})
    assert rep.overall["f1"] == 0.0 and rep.notes


def test_macro_vs_micro():
    counts = {"A": Counts(tp=4, fp=1, fn=1), "B": Counts(tp=2, fp=3, fn=3)}
    macro = prf1(counts, "macro")
    assert prf(counts["A"])["f1"] == pytest.approx(0.8) and prf(counts["B"])["f1"] == pytest.approx(0.4)
    assert macro.overall["f1"] == pytest.approx(0.6)
    micro = prf1(counts, "micro")
    assert micro.overall["f1"] == pytest.approx(prf(Counts(6, 4, 4))["f1"])


def test_macro_excludes_absent_types():
    rep = prf1({"A": Counts(tp=1), "B": Counts(fp=3)}, "macro")
    assert rep.overall["f1"] == 1.0
    assert any("B" in note for note in rep.notes)


def doc2():
    return AnnotatedDocument(("Jack", "works", "at", "Harvard", "University"),
                             (E(0, 1, "PER"), E(3, 5, "ORG")), (R(0, 1, "WORK"),))


def test_entity_exact_match():
    c = match_entities(doc2(), {"entities": [{"start": 0, "end": 1, "type": "PER"}, {"start": 3, "end": 5, "type": "ORG"}]})
    assert (c["PER"].tp, c["PER"].fp, c["PER"].fn) == (1, 0, 0)


def test_entity_wrong_type_is_fp_and_fn():
    c = match_entities(doc2(), {"entities": [{"start": 0, "end": 1, "type": "ORG"}]})
    assert c["PER"].fn == 1 and c["ORG"].fp == 1 and c["PER"].tp == c["ORG"].tp == 0


def test_two_gold_three_predicted():
    pred = {"entities": [{"start": 0, "end": 1, "type": "PER"}, {"start": 1, "end": 2, "type": "PER"},
                         {"start": 2, "end": 3, "type": "PER"}]}
    gold = AnnotatedDocument(tuple("abcd"), (E(0, 1, "PER"), E(3, 4, "PER")))
    c = match_entities(gold, pred)["PER"]
    assert (c.tp, c.fp, c.fn) == (1, 2, 1)


def test_re_vs_re_plus_on_wrong_head_type():
    pred = {"entities": [{"start": 0, "end": 1, "type": "LOC"}, {"start": 3, "end": 5, "type": "ORG"}],
            "relations": [{"type": "WORK", "head_span": [0, 1], "tail_span": [3, 5]}]}
    assert match_relations(doc2(), pred, "re")["WORK"].tp == 1
    c = match_relations(doc2(), pred, "re_plus")["WORK"]
    assert (c.tp, c.fp, c.fn) == (0, 1, 1)


def test_reversed_direction_not_matched():
    pred = {"entities": [], "relations": [{"type": "WORK", "head_span": [3, 5], "tail_span": [0, 1]}]}
    for crit in ("re", "re_plus"):
        c = match_relations(doc2(), pred, crit).get("WORK", Counts())
        assert c.tp == 0 and c.fn == 1


def test_empty_predictions():
    c = match_relations(doc2(), {"entities": [], "relations": []}, "re_plus")["WORK"]
    assert (c.tp, c.fp, c.fn) == (0, 0, 1)


def test_head_criterion_requires_heads():
    with pytest.raises(EvaluationError):
        match_entities(doc2(), {"entities": []}, "ner_head")
    gold = AnnotatedDocument(("a", "b"), (E(0, 2, "PER", 1, 2),))
    c = match_entities(gold, {"entities": [{"start": 0, "end": 1, "type": "PER", "head_start": 1, "head_end": 2}]}, "ner_head")
    assert c["PER"].tp == 1


def test_length_mismatch_rejected():
    with pytest.raises(EvaluationError):
        evaluate([doc2()], [], "ner")


# -- properties ----------------------------------------------------------------------


@given(st.integers(0, 2**32 - 1))
def test_count_identities(seed):
    gold, pred = random_pair(np.random.default_rng(seed))
    for crit in ("ner", "re", "re_plus"):
        rep = evaluate([gold], [pred], crit)
        swapped_tp = sum(m["tp"] for m in rep.per_type.values())
        assert rep.overall["tp"] == swapped_tp
        if crit == "ner":
            assert rep.overall["tp"] + rep.overall["fn"] == len(gold.entities)
            assert rep.overall["tp"] + rep.overall["fp"] == len({(e["start"], e["end"], e["type"]) for e in pred["entities"]})


@given(st.integers(0, 2**32 - 1))
def test_symmetry_of_matching(seed):
    gold, pred = random_pair(np.random.default_rng(seed))
    as_doc = AnnotatedDocument(gold.tokens, tuple({E(e["start"], e["end"], e["type"]) for e in pred["entities"]}))
    as_pred = {"entities": [{"start": e.start, "end": e.end, "type": e.type} for e in gold.entities]}
    fwd = match_entities(gold, pred)
    bwd = match_entities(as_doc, as_pred)
    for t in set(fwd) | set(bwd):
        a, b = fwd.get(t, Counts()), bwd.get(t, Counts())
        assert (a.tp, a.fp, a.fn) == (b.tp, b.fn, b.fp)


def test_single_type_micro_equals_type_f1():
    gold = AnnotatedDocument(tuple("abcd"), (E(0, 1, "PER"), E(2, 3, "PER")))
    rep = evaluate([gold], [{"entities": [{"start": 0, "end": 1, "type": "PER"}, {"start": 3, "end": 4, "type": "PER"}]}])
    assert rep.overall["f1"] == rep.per_type["PER"]["f1"]


# -- buckets ----------------------------------------------------------------------------


def test_single_text_bucket():
    gold = [AnnotatedDocument(tuple("x" * 25), (E(0, 1, "PER"),))] * 3
    rep = bucketed_report(gold, [{"entities": [], "relations": []}] * 3, "text_length", "ner")
    assert list(rep.buckets) == ["[20-34]"]


def test_entity_bucket_filtering():
    gold = AnnotatedDocument(tuple("x" * 12), (E(0, 2, "PER"), E(3, 6, "ORG"), E(6, 7, "LOC")))
    pred = {"entities": [{"start": 0, "end": 2, "type": "PER"}, {"start": 3, "end": 5, "type": "ORG"},
                         {"start": 8, "end": 12, "type": "LOC"}], "relations": []}
    rep = bucketed_report([gold], [pred], "entity_length", "ner")
    b12 = rep.buckets["[1-2]"]
    assert b12.per_type["PER"]["tp"] == 1 and b12.per_type["LOC"]["fn"] == 1 and b12.per_type["ORG"]["fp"] == 1
    b34 = rep.buckets["[3-4]"]
    assert b34.per_type["ORG"]["fn"] == 1 and b34.per_type["LOC"]["fp"] == 1
    assert set(rep.buckets) == {"[1-2]", "[3-4]"}


def test_text_bucket_equals_filtered_subset():
    rng = np.random.default_rng(9)
    pairs = [random_pair(rng) for _ in range(60)]
    golds, preds = [g for g, _ in pairs], [p for _, p in pairs]
    rep = bucketed_report(golds, preds, "text_length", "re")
    for label, sub in rep.buckets.items():
        idx = [i for i, g in enumerate(golds) if label == "[0-19]" and g.n <= 19]
        assert sub.overall == evaluate([golds[i] for i in idx], [preds[i] for i in idx], "re").overall


def test_report_json_shape():
    rep = evaluate([doc2()], [{"entities": [], "relations": []}], "ner")
    d = rep.to_dict()
    assert set(d) >= {"criterion", "aggregation", "per_type", "overall"}
    assert set(d["per_type"]["PER"]) >= {"p", "r", "f1", "tp", "fp", "fn"}
    assert "criterion: ner" in rep.table()
