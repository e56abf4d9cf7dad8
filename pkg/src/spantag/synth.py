"""Templated toy corpora for smoke runs and the overfit sanity experiment."""
from __future__ import annotations

import numpy as np

from .data import AnnotatedDocument, Dataset, EntityMention, RelationMention, TypeSchema

SCHEMA = TypeSchema(("PER", "ORG", "LOC"), ("Work_For", "Located_In"))

PEOPLE = [
    ["Jack"], ["Judith", "Toth"], ["Maria", "Lopez"], ["Chen", "Wei"], ["Amara", "Okafor"],
    ["Lars"], ["Priya", "Nair"], ["Tom", "Baker", "Jr."], ["Sofia"], ["Omar", "Haddad"],
]
ORGS = [
    ["Harvard", "University"], ["Acme", "Corp"], ["the", "House", "of", "Delegates"], ["Globex"],
    ["Initech", "Labs"], ["the", "Red", "Cross"], ["Umbrella", "Group"], ["Stark", "Industries"],
]
PLACES = [
    ["Boston"], ["Maryland"], ["New", "York"], ["Lagos"], ["Oslo"], ["Grand", "Isle"], ["Seattle"], ["Lake", "Washington"],
]

# slots: (kind, pool) or literal words; relations refer to slot positions
TEMPLATES = [
    (["PER", "works", "for", "ORG", "."], [(0, 3, "Work_For")]),
    (["ORG", "is", "based", "in", "LOC", "."], [(0, 4, "Located_In")]),
    (["PER", ",", "an", "employee", "of", "ORG", "in", "LOC", ",", "spoke", "today", "."],
     [(0, 5, "Work_For"), (5, 7, "Located_In")]),
    (["PER", "visited", "LOC", "last", "week", "."], []),
    (["ORG", "hired", "PER", "in", "March", "."], [(2, 0, "Work_For")]),
    (["In", "LOC", ",", "ORG", "opened", "an", "office", "."], [(3, 1, "Located_In")]),
    (["PER", "met", "PER", "at", "ORG", "."], [(0, 4, "Work_For"), (2, 4, "Work_For")]),
]

_POOLS = {"PER": PEOPLE, "ORG": ORGS, "LOC": PLACES}


def templated_corpus(n_docs: int = 50, seed: int = 0) -> Dataset:
    """``n_docs`` sentences with 3 entity types and 2 relation types.

    Documents cycle through the templates; slot fillers are drawn with a
    seeded generator, so the corpus is a pure function of ``(n_docs, seed)``.
    """
    rng = np.random.default_rng(seed)
    docs = []
    for k in range(n_docs):
        template, rels = TEMPLATES[k % len(TEMPLATES)]
        tokens: list[str] = []
        entities: list[EntityMention] = []
        slot_entity: dict[int, int] = {}
        used: set[tuple[str, ...]] = set()
        for pos, item in enumerate(template):
            if item in _POOLS:
                pool = _POOLS[item]
                while True:
                    filler = pool[int(rng.integers(len(pool)))]
                    if tuple(filler) not in used:
                        break
                used.add(tuple(filler))
                slot_entity[pos] = len(entities)
                entities.append(EntityMention(len(tokens), len(tokens) + len(filler), item))
                tokens.extend(filler)
            else:
                tokens.append(item)
        relations = [RelationMention(slot_entity[h], slot_entity[t], r) for h, t, r in rels]
        docs.append(AnnotatedDocument(tuple(tokens), tuple(entities), tuple(relations)))
    return Dataset(tuple(docs), SCHEMA)
