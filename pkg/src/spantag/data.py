"""Annotation data model, JSON ingestion and validation, length buckets.

Spans are 0-based and end-exclusive everywhere, so ``width = end - start``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

NONE_ENTITY = "NoneEntity"
NONE_RELATION = "NoneType"
RESERVED_NAMES = frozenset({NONE_ENTITY, NONE_RELATION})

DEFAULT_MAX_LENGTH = 512

ENTITY_BUCKETS = ((1, 2), (3, 4), (5, 6), (7, 8), (9, 10))
TEXT_BUCKETS = ((0, 19), (20, 34), (35, 49))
TEXT_OVERFLOW_BUCKET = "[>=50]"


class ParseError(ValueError):
    """A dataset record could not be read."""

    def __init__(self, message: str, index: int | None = None):
        self.index = index
        prefix = f"document {index}: " if index is not None else ""
        super().__init__(prefix + message)


class ValidationError(ValueError):
    """A document violates the annotation invariants."""

    def __init__(self, violations: Sequence[str], index: int | None = None):
        self.violations = list(violations)
        self.index = index
        prefix = f"document {index}: " if index is not None else ""
        super().__init__(prefix + "; ".join(self.violations))


@dataclass(frozen=True)
class EntityMention:
    start: int
    end: int
    type: str
    head_start: int | None = None
    head_end: int | None = None

    @property
    def width(self) -> int:
        return self.end - self.start

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)

    @property
    def has_head(self) -> bool:
        return self.head_start is not None and self.head_end is not None

    def key(self) -> tuple[int, int, str]:
        return (self.start, self.end, self.type)


@dataclass(frozen=True)
class RelationMention:
    head: int
    tail: int
    type: str


@dataclass(frozen=True)
class AnnotatedDocument:
    tokens: tuple[str, ...]
    entities: tuple[EntityMention, ...] = ()
    relations: tuple[RelationMention, ...] = ()

    def __post_init__(self):
        # accept lists from callers but store tuples so documents stay hashable
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "entities", tuple(self.entities))
        object.__setattr__(self, "relations", tuple(self.relations))

    @property
    def n(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class TypeSchema:
    entity_types: tuple[str, ...]
    relation_types: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "entity_types", tuple(self.entity_types))
        object.__setattr__(self, "relation_types", tuple(self.relation_types))
        for kind, names in (("entity", self.entity_types), ("relation", self.relation_types)):
            if len(set(names)) != len(names):
                raise ValueError(f"duplicate {kind} type in schema")
            bad = RESERVED_NAMES.intersection(names)
            if bad:
                raise ValueError(f"reserved name(s) {sorted(bad)} cannot be schema {kind} types")
            if any(not isinstance(t, str) or not t for t in names):
                raise ValueError(f"{kind} type names must be non-empty strings")
            if any("/" in t for t in names):
                raise ValueError(f"{kind} type names must not contain '/'")

    def to_dict(self) -> dict:
        return {"entities": list(self.entity_types), "relations": list(self.relation_types)}

    @classmethod
    def from_dict(cls, obj: dict) -> "TypeSchema":
        unknown = set(obj) - {"entities", "relations"}
        if unknown:
            raise ValueError(f"unknown schema keys: {sorted(unknown)}")
        return cls(tuple(obj.get("entities", ())), tuple(obj.get("relations", ())))


@dataclass(frozen=True)
class Dataset:
    documents: tuple[AnnotatedDocument, ...]
    schema: TypeSchema = field(default_factory=lambda: TypeSchema(()))

    def __post_init__(self):
        object.__setattr__(self, "documents", tuple(self.documents))

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    def __getitem__(self, i):
        return self.documents[i]

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(tuple(self.documents[i] for i in indices), self.schema)


def validate_document(
    doc: AnnotatedDocument, schema: TypeSchema, max_length: int | None = DEFAULT_MAX_LENGTH
) -> list[str]:
    """Return the list of invariant violations; an empty list means the document is valid."""
    problems: list[str] = []
    n = doc.n
    if max_length is not None and n > max_length:
        problems.append(f"too long: {n} tokens exceeds max length {max_length}")
    for i, tok in enumerate(doc.tokens):
        if not isinstance(tok, str) or not tok:
            problems.append(f"token {i}: empty token")

    entity_types = set(schema.entity_types)
    seen: set[tuple[int, int, str]] = set()
    for k, ent in enumerate(doc.entities):
        where = f"entity {k}"
        if ent.start == ent.end:
            problems.append(f"{where}: empty span")
        elif ent.start > ent.end:
            problems.append(f"{where}: start after end")
        if ent.start < 0 or ent.end > n:
            problems.append(f"{where}: out of range [{ent.start}, {ent.end}) for {n} tokens")
        if ent.type not in entity_types:
            problems.append(f"{where}: unknown entity type {ent.type!r}")
        if (ent.head_start is None) != (ent.head_end is None):
            problems.append(f"{where}: head_start and head_end must be given together")
        elif ent.has_head and not (ent.start <= ent.head_start < ent.head_end <= ent.end):
            problems.append(f"{where}: head span outside entity span")
        if ent.key() in seen:
            problems.append(f"{where}: duplicate mention {ent.key()}")
        seen.add(ent.key())

    relation_types = set(schema.relation_types)
    m = len(doc.entities)
    seen_rel: set[tuple[int, int, str]] = set()
    for k, rel in enumerate(doc.relations):
        where = f"relation {k}"
        if not (0 <= rel.head < m and 0 <= rel.tail < m):
            problems.append(f"{where}: entity index out of range")
        if rel.head == rel.tail:
            problems.append(f"{where}: self-relation")
        if rel.type not in relation_types:
            problems.append(f"{where}: unknown relation type {rel.type!r}")
        key = (rel.head, rel.tail, rel.type)
        if key in seen_rel:
            problems.append(f"{where}: duplicate relation {key}")
        seen_rel.add(key)
    return problems


def _expect(cond: bool, message: str, index: int) -> None:
    if not cond:
        raise ParseError(message, index)


def _int_field(obj: dict, name: str, index: int) -> int:
    value = obj.get(name)
    _expect(isinstance(value, int) and not isinstance(value, bool), f"field {name!r} must be an integer", index)
    return value


def document_from_dict(obj: dict, index: int = 0) -> AnnotatedDocument:
    _expect(isinstance(obj, dict), "record must be an object", index)
    unknown = set(obj) - {"tokens", "entities", "relations"}
    _expect(not unknown, f"unknown record keys {sorted(unknown)}", index)
    tokens = obj.get("tokens")
    _expect(isinstance(tokens, list), "'tokens' must be a list", index)
    _expect(all(isinstance(t, str) for t in tokens), "tokens must be strings", index)

    entities = []
    for e in obj.get("entities", []):
        _expect(isinstance(e, dict), "entity must be an object", index)
        _expect(isinstance(e.get("type"), str), "entity 'type' must be a string", index)
        head_start = e.get("head_start")
        head_end = e.get("head_end")
        entities.append(
            EntityMention(
                start=_int_field(e, "start", index),
                end=_int_field(e, "end", index),
                type=e["type"],
                head_start=None if head_start is None else _int_field(e, "head_start", index),
                head_end=None if head_end is None else _int_field(e, "head_end", index),
            )
        )
    relations = []
    for r in obj.get("relations", []):
        _expect(isinstance(r, dict), "relation must be an object", index)
        _expect(isinstance(r.get("type"), str), "relation 'type' must be a string", index)
        relations.append(
            RelationMention(
                head=_int_field(r, "head", index),
                tail=_int_field(r, "tail", index),
                type=r["type"],
            )
        )
    return AnnotatedDocument(tuple(tokens), tuple(entities), tuple(relations))


def document_to_dict(doc: AnnotatedDocument) -> dict:
    entities = []
    for e in doc.entities:
        rec = {"type": e.type, "start": e.start, "end": e.end}
        if e.has_head:
            rec["head_start"] = e.head_start
            rec["head_end"] = e.head_end
        entities.append(rec)
    return {
        "tokens": list(doc.tokens),
        "entities": entities,
        "relations": [{"type": r.type, "head": r.head, "tail": r.tail} for r in doc.relations],
    }


def load_schema(path: str | Path) -> TypeSchema:
    with open(path, encoding="utf-8") as fh:
        return TypeSchema.from_dict(json.load(fh))


def save_schema(schema: TypeSchema, path: str | Path) -> None:
    Path(path).write_text(json.dumps(schema.to_dict(), indent=2) + "\n", encoding="utf-8")


def dataset_from_records(
    records: Sequence[dict], schema: TypeSchema, max_length: int | None = DEFAULT_MAX_LENGTH
) -> Dataset:
    docs = []
    for i, rec in enumerate(records):
        doc = document_from_dict(rec, i)
        problems = validate_document(doc, schema, max_length)
        if problems:
            raise ValidationError(problems, i)
        docs.append(doc)
    return Dataset(tuple(docs), schema)


def parse_dataset(
    path: str | Path, schema: TypeSchema, max_length: int | None = DEFAULT_MAX_LENGTH
) -> Dataset:
    """Read a JSON array of document records and validate each against ``schema``."""
    try:
        with open(path, encoding="utf-8") as fh:
            records = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc}") from exc
    if not isinstance(records, list):
        raise ParseError("dataset file must hold a JSON array of records")
    return dataset_from_records(records, schema, max_length)


def save_dataset(docs: Iterable[AnnotatedDocument], path: str | Path) -> None:
    records = [document_to_dict(d) for d in docs]
    Path(path).write_text(json.dumps(records, ensure_ascii=False) + "\n", encoding="utf-8")


def _label(lo: int, hi: int) -> str:
    return f"[{lo}-{hi}]"


def assign_bucket(length: int, kind: str) -> str:
    """Map an entity or text length to its analysis bucket label."""
    if kind == "entity":
        if length < 1:
            raise ValueError(f"entity length must be >= 1, got {length}")
        for lo, hi in ENTITY_BUCKETS:
            if lo <= length <= hi:
                return _label(lo, hi)
        raise ValueError(f"entity length {length} exceeds the analysed range (max 10)")
    if kind == "text":
        if length < 0:
            raise ValueError(f"text length must be >= 0, got {length}")
        for lo, hi in TEXT_BUCKETS:
            if lo <= length <= hi:
                return _label(lo, hi)
        return TEXT_OVERFLOW_BUCKET
    raise ValueError(f"unknown bucket kind {kind!r}")


def bucket_labels(kind: str) -> list[str]:
    if kind == "entity":
        return [_label(lo, hi) for lo, hi in ENTITY_BUCKETS]
    if kind == "text":
        return [_label(lo, hi) for lo, hi in TEXT_BUCKETS] + [TEXT_OVERFLOW_BUCKET]
    raise ValueError(f"unknown bucket kind {kind!r}")
