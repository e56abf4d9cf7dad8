"""Extended BIO tagging with "/"-joined composite labels for two-fold overlaps.

Each token carries up to two BIO channels. The primary channel holds the
preceding entity of every overlapping pair; the overlay channel holds the
other one. A label string is ``primary`` or ``primary/overlay``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

from .data import AnnotatedDocument, Dataset, EntityMention

OUTSIDE = "O"
SEPARATOR = "/"


class TaggingError(ValueError):
    pass


class TokenLabel(NamedTuple):
    primary: str
    overlay: str | None = None

    def __str__(self) -> str:
        return self.primary if self.overlay is None else f"{self.primary}{SEPARATOR}{self.overlay}"

    @classmethod
    def parse(cls, label: str) -> "TokenLabel":
        parts = label.split(SEPARATOR)
        overlay = parts[1] if len(parts) > 1 and parts[1] != OUTSIDE else None
        return cls(parts[0], overlay)


def _overlaps(a: EntityMention, b: EntityMention) -> bool:
    return a.start < b.end and b.start < a.end


def _precedence_key(e: EntityMention):
    # earlier head first, then the longer entity; type name only breaks exact-span ties
    return (e.start, -(e.end - e.start), e.type)


def select_preceding(a: EntityMention, b: EntityMention) -> tuple[EntityMention, EntityMention]:
    """Return ``(preceding, overlapping)`` for two overlapping entities."""
    if not _overlaps(a, b):
        raise TaggingError(f"entities {a.key()} and {b.key()} do not overlap")
    if _precedence_key(b) < _precedence_key(a):
        return b, a
    return a, b


def _assign_channels(entities: Sequence[EntityMention], n: int):
    coverage = [0] * n
    for e in entities:
        for t in range(e.start, e.end):
            coverage[t] += 1
    for t, c in enumerate(coverage):
        if c > 2:
            raise TaggingError(f"not two-fold: token {t} is covered by {c} entities")

    primary: list[EntityMention] = []
    overlay: list[EntityMention] = []
    for e in sorted(set(entities), key=_precedence_key):
        if not any(_overlaps(e, p) for p in primary):
            primary.append(e)
        elif not any(_overlaps(e, o) for o in overlay):
            overlay.append(e)
        else:  # pragma: no cover - coverage <= 2 makes interval 2-colouring always succeed
            raise TaggingError(f"not two-fold: cannot place entity {e.key()}")
    return primary, overlay


def _bio_channel(entities: Iterable[EntityMention], n: int) -> list[str]:
    tags = [OUTSIDE] * n
    for e in entities:
        tags[e.start] = f"B-{e.type}"
        for t in range(e.start + 1, e.end):
            tags[t] = f"I-{e.type}"
    return tags


def encode_labels(doc: AnnotatedDocument) -> list[str]:
    """Tag ``doc`` with extended BIO label strings, one per token."""
    primary, overlay = _assign_channels(doc.entities, doc.n)
    first = _bio_channel(primary, doc.n)
    second = _bio_channel(overlay, doc.n)
    return [p if o == OUTSIDE else f"{p}{SEPARATOR}{o}" for p, o in zip(first, second)]


def _split_tag(tag: str) -> tuple[str, str | None]:
    if len(tag) > 2 and tag[1] == "-" and tag[0] in "BI":
        return tag[0], tag[2:]
    return OUTSIDE, None


def decode_channel(tags: Sequence[str]) -> list[EntityMention]:
    """Decode one plain BIO channel, repairing orphan I- tags into new entities."""
    found = []
    open_type: str | None = None
    open_start = 0
    for i, tag in enumerate(tags):
        prefix, etype = _split_tag(tag)
        if prefix == "I" and open_type == etype:
            continue
        if open_type is not None:
            found.append(EntityMention(open_start, i, open_type))
            open_type = None
        if prefix in ("B", "I"):
            open_type, open_start = etype, i
    if open_type is not None:
        found.append(EntityMention(open_start, len(tags), open_type))
    return found


def decode_labels(labels: Sequence[str]) -> set[EntityMention]:
    """Recover the entity set from extended BIO labels; both channels decode independently."""
    parsed = [TokenLabel.parse(lab) for lab in labels]
    first = decode_channel([p.primary for p in parsed])
    second = decode_channel([p.overlay or OUTSIDE for p in parsed])
    return set(first) | set(second)


@dataclass(frozen=True)
class LabelVocabulary:
    labels: tuple[str, ...]

    def __post_init__(self):
        if OUTSIDE not in self.labels:
            raise ValueError("label vocabulary must contain 'O'")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate labels in vocabulary")
        object.__setattr__(self, "_index", {lab: i for i, lab in enumerate(self.labels)})

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label: str) -> bool:
        return label in self._index

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise KeyError(f"label {label!r} not in vocabulary") from None

    def encode(self, labels: Sequence[str]) -> list[int]:
        return [self.index(lab) for lab in labels]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.labels[i] for i in ids]


def build_label_vocabulary(dataset: Dataset | Iterable[AnnotatedDocument]) -> LabelVocabulary:
    observed = set()
    for doc in dataset:
        for e in doc.entities:
            observed.update((f"B-{e.type}", f"I-{e.type}"))
        observed.update(lab for lab in encode_labels(doc) if SEPARATOR in lab)
    observed.discard(OUTSIDE)
    return LabelVocabulary((OUTSIDE, *sorted(observed)))


def to_conll(tokens_and_labels: Iterable[tuple[Sequence[str], Sequence[str]]]) -> str:
    blocks = []
    for tokens, labels in tokens_and_labels:
        blocks.append("\n".join(f"{tok}\t{lab}" for tok, lab in zip(tokens, labels)))
    return "\n\n".join(blocks) + ("\n" if blocks else "")


def from_conll(text: str) -> list[tuple[list[str], list[str]]]:
    """Parse two-column token/label text; blank lines separate documents."""
    docs: list[tuple[list[str], list[str]]] = []
    tokens: list[str] = []
    labels: list[str] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            if tokens:
                docs.append((tokens, labels))
                tokens, labels = [], []
            continue
        parts = line.split()
        if len(parts) != 2:
            raise TaggingError(f"line {lineno}: expected 'token<TAB>label', got {line!r}")
        tokens.append(parts[0])
        labels.append(parts[1])
    if tokens:
        docs.append((tokens, labels))
    return docs
