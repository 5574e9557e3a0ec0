"""Quadruple data model, dataset ingestion, chronological splits, emergence bookkeeping.

File formats (all UTF-8 text):
  facts:      one fact per line, `subject<TAB>relation<TAB>object<TAB>raw_time`,
              trailing columns ignored
  vocab:      `entity2id.txt` / `relation2id.txt`, lines `name<TAB>id`
  embeddings: first line `N d`, then N lines `entity_id v1 ... vd`
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, constant, parameter
from .errors import ConfigError, ContractError, IntegrityError, ParseError, VocabError


@dataclass(frozen=True)
class Quadruple:
    subject: int
    relation: int
    object: int
    timestamp: int


@dataclass
class Vocab:
    entity_names: dict[int, str]
    relation_names: dict[int, str]

    def __post_init__(self):
        for names, kind in ((self.entity_names, "entity"), (self.relation_names, "relation")):
            n = len(names)
            if sorted(names) != list(range(n)):
                raise VocabError(f"{kind} ids are not dense 0..{n - 1}")
            if len(set(names.values())) != n:
                raise VocabError(f"duplicate {kind} names")

    @property
    def num_entities(self) -> int:
        return len(self.entity_names)

    @property
    def num_relations(self) -> int:
        return len(self.relation_names)


@dataclass
class TemporalKG:
    """Snapshots indexed by contiguous timestamps starting at 0."""

    snapshots: list[list[Quadruple]]
    vocab: Vocab
    has_inverses: bool = False
    _history_index: dict | None = field(default=None, repr=False, compare=False)

    @property
    def num_timestamps(self) -> int:
        return len(self.snapshots)

    def num_facts(self) -> int:
        return sum(len(s) for s in self.snapshots)

    def all_facts(self):
        for snap in self.snapshots:
            yield from snap


@dataclass(frozen=True)
class Split:
    """Half-open timestamp intervals: train < valid < test, covering everything."""

    train: tuple[int, int]
    valid: tuple[int, int]
    test: tuple[int, int]

    def interval(self, name: str) -> tuple[int, int]:
        return {"train": self.train, "valid": self.valid, "test": self.test}[name]


@dataclass
class EmbeddingTable:
    """Frozen entity rows plus (optionally) trainable relation rows."""

    entities: Tensor
    relations: Tensor | None
    dim: int

    def __post_init__(self):
        if self.entities.requires_grad:
            raise ContractError("entity embeddings must stay frozen")


# ---------------------------------------------------------------------------
# Loading


def load_vocab(vocab_dir: str) -> Vocab:
    def read(path, kind):
        names: dict[int, str] = {}
        if not os.path.exists(path):
            raise ParseError(f"missing vocabulary file: {path}")
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                name, sep, raw_id = line.rpartition("\t")
                if not sep:
                    raise ParseError(f"{path}:{lineno}: expected `name<TAB>id`")
                try:
                    ident = int(raw_id)
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: non-integer {kind} id {raw_id!r}")
                if ident in names:
                    raise VocabError(f"{path}:{lineno}: duplicate {kind} id {ident}")
                names[ident] = name
        return names

    return Vocab(
        entity_names=read(os.path.join(vocab_dir, "entity2id.txt"), "entity"),
        relation_names=read(os.path.join(vocab_dir, "relation2id.txt"), "relation"),
    )


def _parse_fact_lines(path: str, vocab: Vocab) -> list[tuple[int, int, int, int]]:
    raw = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) < 4:
                raise ParseError(f"{path}:{lineno}: expected at least 4 tab-separated columns")
            try:
                s, r, o, t = (int(parts[0]), int(parts[1]), int(parts[2]), int(parts[3]))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-integer field in {parts[:4]}")
            if t < 0:
                raise ParseError(f"{path}:{lineno}: negative timestamp {t}")
            if s not in vocab.entity_names or o not in vocab.entity_names:
                raise VocabError(f"{path}:{lineno}: unknown entity id in ({s}, {o})")
            if r not in vocab.relation_names:
                raise VocabError(f"{path}:{lineno}: unknown relation id {r}")
            raw.append((s, r, o, t))
    return raw


def _snap_from_raw(raw: list[tuple[int, int, int, int]], vocab: Vocab) -> TemporalKG:
    if not raw:
        return TemporalKG(snapshots=[], vocab=vocab)
    granularity = 0
    for t in {t for _, _, _, t in raw}:
        granularity = math.gcd(granularity, t)
    granularity = granularity or 1
    last = max(t for _, _, _, t in raw) // granularity
    snapshots: list[list[Quadruple]] = [[] for _ in range(last + 1)]
    for s, r, o, t in raw:
        snapshots[t // granularity].append(Quadruple(s, r, o, t // granularity))
    return TemporalKG(snapshots=snapshots, vocab=vocab)


def load_quadruples(path: str, vocab_dir: str) -> TemporalKG:
    """Load one quadruple file, normalizing raw times to snapshot indices.

    The time granularity is inferred as the gcd of the distinct raw
    timestamps (24 for daily dumps with hour-resolution stamps, etc.).
    Duplicate lines are kept: facts form a multiset.
    """
    vocab = load_vocab(vocab_dir)
    return _snap_from_raw(_parse_fact_lines(path, vocab), vocab)


def load_dataset(data_dir: str) -> TemporalKG:
    """Load a dataset directory: `facts.txt`, or the union of train/valid/test files.

    All files share one raw-time normalization, matching the chronological
    re-split workflow where partition files are merged before splitting.
    """
    vocab = load_vocab(data_dir)
    single = os.path.join(data_dir, "facts.txt")
    if os.path.exists(single):
        return _snap_from_raw(_parse_fact_lines(single, vocab), vocab)
    raw = []
    found = False
    for name in ("train.txt", "valid.txt", "test.txt"):
        path = os.path.join(data_dir, name)
        if os.path.exists(path):
            found = True
            raw.extend(_parse_fact_lines(path, vocab))
    if not found:
        raise ParseError(f"no fact files found in {data_dir} (facts.txt or train/valid/test.txt)")
    return _snap_from_raw(raw, vocab)


def load_embeddings(path: str, expected_entities: int) -> EmbeddingTable:
    """Read the frozen entity-embedding matrix, rows ordered by entity id."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ParseError(f"{path}:1: header must be `N d`")
        try:
            n, d = int(header[0]), int(header[1])
        except ValueError:
            raise ParseError(f"{path}:1: non-integer header {header}")
        if n != expected_entities:
            raise IntegrityError(f"{path}: header declares {n} entities, expected {expected_entities}")
        matrix = np.full((n, d), np.nan)
        seen = np.zeros(n, dtype=bool)
        rows = 0
        for lineno, line in enumerate(fh, 2):
            if not line.strip():
                continue
            rows += 1
            if rows > n:
                raise IntegrityError(f"{path}: more than the declared {n} rows")
            parts = line.split()
            if len(parts) != d + 1:
                raise ParseError(f"{path}:{lineno}: expected id + {d} values, got {len(parts)} tokens")
            try:
                ident = int(parts[0])
                values = [float(v) for v in parts[1:]]
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric token")
            if not (0 <= ident < n):
                raise IntegrityError(f"{path}:{lineno}: entity id {ident} out of range")
            if seen[ident]:
                raise IntegrityError(f"{path}:{lineno}: duplicate row for entity {ident}")
            seen[ident] = True
            matrix[ident] = values
    if rows != n:
        raise IntegrityError(f"{path}: header declares {n} rows, found {rows}")
    return EmbeddingTable(entities=constant(matrix), relations=None, dim=d)


def init_relation_embeddings(num_relations: int, dim: int, rng: np.random.Generator) -> Tensor:
    """Trainable rows for original relations and their inverses (2R x d)."""
    return parameter(rng.normal(0.0, 1.0 / math.sqrt(dim), size=(2 * num_relations, dim)))


# ---------------------------------------------------------------------------
# Transformations


def add_inverse_relations(g: TemporalKG) -> TemporalKG:
    """Append (o, r+R, s, t) for every (s, r, o, t); fact count doubles."""
    if g.has_inverses:
        raise ContractError("graph already carries inverse relations")
    r_count = g.vocab.num_relations
    snapshots = []
    for snap in g.snapshots:
        for q in snap:
            if q.relation >= r_count:
                raise ContractError(f"relation id {q.relation} >= |R|={r_count}: already augmented?")
        snapshots.append(list(snap) + [Quadruple(q.object, q.relation + r_count, q.subject, q.timestamp)
                                       for q in snap])
    return TemporalKG(snapshots=snapshots, vocab=g.vocab, has_inverses=True)


def chronological_split(g: TemporalKG, ratios: tuple[float, float, float]) -> Split:
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ConfigError(f"need three positive ratios, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must sum to 1, got {sum(ratios)}")
    n = g.num_timestamps
    b1 = math.floor(ratios[0] * n)
    b2 = math.floor((ratios[0] + ratios[1]) * n)
    split = Split(train=(0, b1), valid=(b1, b2), test=(b2, n))
    for name in ("train", "valid", "test"):
        lo, hi = split.interval(name)
        if hi <= lo:
            raise ConfigError(f"{name} partition empty for {n} timestamps at ratios {ratios}")
    return split


def first_appearance(g: TemporalKG) -> dict[int, int]:
    """Earliest timestamp at which each entity occurs as subject or object."""
    first: dict[int, int] = {}
    for t, snap in enumerate(g.snapshots):
        for q in snap:
            if q.subject not in first:
                first[q.subject] = t
            if q.object not in first:
                first[q.object] = t
    return first


def emerging_entities(g: TemporalKG, split: Split) -> set[int]:
    """Entities whose first appearance falls inside the test interval."""
    lo, hi = split.test
    return {e for e, t in first_appearance(g).items() if lo <= t < hi}
