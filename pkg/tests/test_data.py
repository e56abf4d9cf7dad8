import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from spantag.data import (
    AnnotatedDocument,
    EntityMention,
    ParseError,
    RelationMention,
    TypeSchema,
    ValidationError,
    assign_bucket,
    bucket_labels,
    document_from_dict,
    document_to_dict,
    load_schema,
    parse_dataset,
    save_dataset,
    save_schema,
    validate_document,
)
from strategies import annotated_documents

SCHEMA = TypeSchema(("PER", "ORG", "LOC"), ("R1", "R2", "WORK"))


def write(tmp_path, records, name="d.json"):
    path = tmp_path / name
    path.write_text(json.dumps(records), encoding="utf-8")
    return path


def test_empty_document_is_valid(tmp_path):
    ds = parse_dataset(write(tmp_path, [{"tokens": [], "entities": [], "relations": []}]), SCHEMA)
    assert len(ds) == 1 and ds[0].n == 0


def test_three_documents_counted(tmp_path):
    recs = [{"tokens": ["a", "b"], "entities": [{"type": "PER", "start": 0, "end": 1}], "relations": []}] * 3
    path = write(tmp_path, recs)
    assert len(parse_dataset(path, SCHEMA)) == len(json.loads(path.read_text()))


def test_empty_span_rejected(tmp_path):
    recs = [{"tokens": ["a"], "entities": [{"type": "PER", "start": 0, "end": 0}], "relations": []}]
    with pytest.raises(ValidationError, match="empty span") as info:
        parse_dataset(write(tmp_path, recs), SCHEMA)
    assert info.value.index == 0


def test_malformed_record_reports_index(tmp_path):
    recs = [{"tokens": ["a"]}, {"tokens": "oops"}]
    with pytest.raises(ParseError) as info:
        parse_dataset(write(tmp_path, recs), SCHEMA)
    assert info.value.index == 1


def test_malformed_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("[{", encoding="utf-8")
    with pytest.raises(ParseError):
        parse_dataset(path, SCHEMA)


def test_figure_one_structure_is_valid():
    doc = AnnotatedDocument(
        ("Jack", "works", "at", "Harvard", "University"),
        (EntityMention(0, 1, "PER"), EntityMention(3, 5, "ORG")),
        (RelationMention(0, 1, "WORK"),),
    )
    assert validate_document(doc, SCHEMA) == []


def test_self_relation():
    doc = AnnotatedDocument(("a", "b"), (EntityMention(0, 1, "PER"),), (RelationMention(0, 0, "R1"),))
    assert any("self-relation" in v for v in validate_document(doc, SCHEMA))


def test_out_of_range_end():
    doc = AnnotatedDocument(("a", "b", "c"), (EntityMention(1, 4, "PER"),))
    assert any("out of range" in v for v in validate_document(doc, SCHEMA))


@pytest.mark.parametrize(
    "doc, needle",
    [
        (AnnotatedDocument(("a",), (EntityMention(0, 1, "XYZ"),)), "unknown entity type"),
        (AnnotatedDocument(("a",), (EntityMention(0, 1, "PER"), EntityMention(0, 1, "PER"))), "duplicate mention"),
        (AnnotatedDocument(("a",), (EntityMention(0, 1, "PER"),), (RelationMention(0, 3, "R1"),)), "entity index out of range"),
        (AnnotatedDocument(("a", "b"), (EntityMention(0, 1, "PER"), EntityMention(1, 2, "ORG")),
                           (RelationMention(0, 1, "NOPE"),)), "unknown relation type"),
        (AnnotatedDocument(("a", "b"), (EntityMention(0, 2, "PER", 1, 3),)), "head span"),
    ],
)
def test_violations(doc, needle):
    assert any(needle in v for v in validate_document(doc, SCHEMA))


def test_same_span_different_types_allowed():
    doc = AnnotatedDocument(("a",), (EntityMention(0, 1, "PER"), EntityMention(0, 1, "ORG")))
    assert validate_document(doc, SCHEMA) == []


def test_too_long_rejected():
    doc = AnnotatedDocument(tuple("x" * 6))
    assert any("too long" in v for v in validate_document(doc, SCHEMA, max_length=5))
    assert validate_document(doc, SCHEMA, max_length=None) == []


@pytest.mark.parametrize("name", ["NoneEntity", "NoneType"])
def test_reserved_names_rejected(name):
    with pytest.raises(ValueError, match="reserved"):
        TypeSchema((name,))
    with pytest.raises(ValueError, match="reserved"):
        TypeSchema(("PER",), (name,))


def test_schema_round_trip(tmp_path):
    save_schema(SCHEMA, tmp_path / "s.json")
    assert load_schema(tmp_path / "s.json") == SCHEMA


@given(annotated_documents())
def test_serialize_parse_round_trip(doc):
    assert document_from_dict(json.loads(json.dumps(document_to_dict(doc)))) == doc


def test_dataset_file_round_trip(tmp_path):
    docs = [
        AnnotatedDocument(("Ünïcode", "x"), (EntityMention(0, 2, "PER", 0, 1),)),
        AnnotatedDocument(("a", "b"), (EntityMention(0, 1, "PER"), EntityMention(1, 2, "ORG")),
                          (RelationMention(1, 0, "R2"),)),
    ]
    save_dataset(docs, tmp_path / "d.json")
    assert list(parse_dataset(tmp_path / "d.json", SCHEMA)) == docs


@pytest.mark.parametrize(
    "length, kind, label",
    [(25, "text", "[20-34]"), (0, "text", "[0-19]"), (2, "entity", "[1-2]"), (19, "text", "[0-19]"),
     (20, "text", "[20-34]"), (49, "text", "[35-49]"), (50, "text", "[>=50]"), (10, "entity", "[9-10]")],
)
def test_bucket_examples(length, kind, label):
    assert assign_bucket(length, kind) == label


def test_entity_bucket_beyond_range():
    with pytest.raises(ValueError):
        assign_bucket(11, "entity")
    with pytest.raises(ValueError):
        assign_bucket(0, "entity")


@given(st.integers(0, 10_000))
def test_text_buckets_exhaustive_and_disjoint(length):
    label = assign_bucket(length, "text")
    assert label in bucket_labels("text")
    lo_hi = [(0, 19), (20, 34), (35, 49), (50, 10**9)]
    assert sum(lo <= length <= hi for lo, hi in lo_hi) == 1
