"""Synthetic temporal graphs with planted, cluster-transferable patterns.

Entities belong to latent types. Actors of a type repeatedly fire that
type's script relation toward type-determined anchor entities, with the
target alternating over the type's anchor list as timestamps advance, so
the correct answer depends on when the question is asked, not just on
who asks. Entity embeddings are type centroids plus small jitter, which
lets nearest-prototype clustering recover the types. A scheduled
fraction of actors first appears inside the test horizon; their queries
are answerable purely from their type's pattern, which is exactly the
premise an inductive model must exploit.

Ground truth (type map, answer key, schedule) ships alongside the graph
so tests can compute the best achievable ranking by brute force.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from .data import Quadruple, Split, TemporalKG, Vocab
from .errors import ConfigError


@dataclass
class SynthSpec:
    n_types: int = 4
    per_type: int = 30
    anchors_per_type: int = 3        # answers cycle over these as timestamps advance
    n_relations: int = 8             # first n_types are script relations, rest noise
    n_timestamps: int = 60
    emergence: float = 0.25          # fraction of all entities first appearing in test
    noise: float = 0.05              # extra random facts per pattern fact
    dim: int = 32
    jitter: float = 0.05             # embedding spread around the type centroid
    stride: int = 3                  # an actor fires every `stride` timestamps
    seed: int = 0
    split_ratios: tuple = (0.5, 0.2, 0.3)
    pattern: str = "alternating"     # "alternating" | "ambiguous"

    def validate(self) -> None:
        if self.n_types < 1 or self.per_type < 1 or self.anchors_per_type < 1:
            raise ConfigError("n_types, per_type and anchors_per_type must be >= 1")
        if self.n_relations < self.n_types:
            raise ConfigError(f"need >= {self.n_types} relations for the type scripts")
        if self.noise > 0 and self.n_relations == self.n_types:
            raise ConfigError("noise facts need at least one non-script relation")
        if not (0.0 <= self.emergence < 1.0):
            raise ConfigError(f"emergence must be in [0, 1), got {self.emergence}")
        if self.pattern not in ("alternating", "ambiguous"):
            raise ConfigError(f"unknown pattern kind {self.pattern!r}")
        if self.stride < 1 or self.n_timestamps < 2 * self.stride:
            raise ConfigError("timeline too short for the activity stride")
        if abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ConfigError("split ratios must sum to 1")

    @property
    def n_actors(self) -> int:
        return self.n_types * self.per_type

    @property
    def n_entities(self) -> int:
        return self.n_actors + self.n_types * self.anchors_per_type


@dataclass
class SynthTruth:
    type_of: dict[int, int]          # every entity (actors and anchors) -> type
    anchors: list[list[int]]         # per type, the alternating answer entities
    emerging: list[int]              # actors first appearing in the test horizon
    first_fact: dict[int, int]       # scheduled first-appearance time per actor
    answer_key: dict[tuple[int, int, int], list[int]]  # (subject, relation, t) -> candidates
    spec: SynthSpec


def _test_start(spec: SynthSpec) -> int:
    return math.floor((spec.split_ratios[0] + spec.split_ratios[1]) * spec.n_timestamps)


def generate(spec: SynthSpec) -> tuple[TemporalKG, np.ndarray, SynthTruth]:
    """Build the graph, the frozen embedding matrix, and the ground truth."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n_actors, n_entities = spec.n_actors, spec.n_entities

    def actor_type(e: int) -> int:
        return e // spec.per_type

    anchors = [[n_actors + tau * spec.anchors_per_type + j for j in range(spec.anchors_per_type)]
               for tau in range(spec.n_types)]
    type_of = {e: actor_type(e) for e in range(n_actors)}
    for tau, group in enumerate(anchors):
        for a in group:
            type_of[a] = tau

    # Emerging actors: evenly many per type, first appearing spread over the test range.
    n_emerging = round(spec.emergence * n_entities)
    if n_emerging > n_actors:
        raise ConfigError("emergence fraction leaves no known actors")
    emerging: list[int] = []
    for i in range(n_emerging):
        tau = i % spec.n_types
        offset = i // spec.n_types
        emerging.append(tau * spec.per_type + spec.per_type - 1 - offset)
    emerging = sorted(emerging)
    test_lo = _test_start(spec)
    first_fact = {}
    for e in range(n_actors):
        first_fact[e] = (spec.stride - e % spec.stride) % spec.stride
    span = spec.n_timestamps - test_lo
    for pos, e in enumerate(emerging):
        first_fact[e] = test_lo + (pos * span) // max(1, len(emerging))

    # Embeddings: unit-norm type centroids; actors and anchors jitter around the
    # same centroid so known and emerging entities share one mixture (anchors
    # with private centroids would hand the known set extra principal
    # directions and depress the spread ratio for structural reasons).
    centroids = rng.normal(size=(spec.n_types, spec.dim))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    matrix = np.empty((n_entities, spec.dim))
    for e in range(n_entities):
        matrix[e] = centroids[type_of[e]] + rng.normal(0.0, spec.jitter, spec.dim)

    emerging_set = set(emerging)
    answer_key: dict[tuple[int, int, int], list[int]] = {}
    snapshots: list[list[Quadruple]] = [[] for _ in range(spec.n_timestamps)]
    appeared: list[int] = []         # known-by-now pool for noise endpoints
    appeared_set: set[int] = set()

    def note_appearance(e: int) -> None:
        if e not in appeared_set:
            appeared_set.add(e)
            appeared.append(e)

    for t in range(spec.n_timestamps):
        pattern_facts = 0
        for e in range(n_actors):
            born = first_fact[e]
            if t < born:
                continue
            if t != born and (t - born) % spec.stride != 0:
                continue
            tau = actor_type(e)
            relation = tau
            group = anchors[tau]
            if spec.pattern == "alternating":
                candidates = [group[t % len(group)]]
                answer = candidates[0]
            else:
                candidates = list(group)
                answer = int(rng.choice(group))
            snapshots[t].append(Quadruple(e, relation, answer, t))
            answer_key[(e, relation, t)] = candidates
            pattern_facts += 1
            note_appearance(e)
            note_appearance(answer)
        if spec.noise > 0 and appeared:
            safe = [e for e in appeared if e not in emerging_set]
            for _ in range(round(spec.noise * pattern_facts)):
                s, o = (int(v) for v in rng.choice(safe, size=2))
                r = int(rng.integers(spec.n_types, spec.n_relations))
                snapshots[t].append(Quadruple(s, r, o, t))

    vocab = Vocab(
        entity_names={e: (f"actor_{type_of[e]}_{e}" if e < n_actors else f"anchor_{type_of[e]}_{e}")
                      for e in range(n_entities)},
        relation_names={r: (f"does_{r}" if r < spec.n_types else f"noise_{r}")
                        for r in range(spec.n_relations)},
    )
    g = TemporalKG(snapshots=snapshots, vocab=vocab)
    truth = SynthTruth(type_of=type_of, anchors=anchors, emerging=emerging,
                       first_fact=first_fact, answer_key=answer_key, spec=spec)
    return g, matrix, truth


def default_split(spec: SynthSpec, g: TemporalKG) -> Split:
    r = spec.split_ratios
    b1 = math.floor(r[0] * g.num_timestamps)
    b2 = math.floor((r[0] + r[1]) * g.num_timestamps)
    return Split(train=(0, b1), valid=(b1, b2), test=(b2, g.num_timestamps))


def oracle_best_mrr(truth: SynthTruth, g: TemporalKG, split: Split,
                    policy: str = "query-side") -> float:
    """Expected MRR of a predictor that knows the planted schedule exactly.

    Forward pattern queries: the true answer sits uniformly inside its
    ambiguity set of size m, contributing mean(1/i, i<=m). Either-side
    additionally counts inverse queries whose answer is an emerging actor
    at first appearance; time-aware filtering removes the co-active
    pattern answers there, leaving the schedule-aware predictor at rank 1.
    """
    lo, hi = split.test
    emerging = set(truth.emerging)
    contributions: list[float] = []
    for (s, r, t), candidates in truth.answer_key.items():
        if not (lo <= t < hi):
            continue
        if s in emerging and truth.first_fact[s] == t:
            m = len(candidates)
            contributions.append(sum(1.0 / i for i in range(1, m + 1)) / m)
        if policy == "either-side":
            for answer in candidates:
                if answer in emerging and truth.first_fact[answer] == t:
                    contributions.append(1.0)
    if not contributions:
        return 0.0
    return float(np.mean(contributions))


def nearest_centroid_purity(matrix: np.ndarray, truth: SynthTruth) -> float:
    """Fraction of actors whose nearest type centroid matches their true type."""
    spec = truth.spec
    centroids = np.stack([matrix[[e for e, tau in truth.type_of.items()
                                  if tau == c and e < spec.n_actors]].mean(axis=0)
                          for c in range(spec.n_types)])
    actors = np.arange(spec.n_actors)
    diff = matrix[actors][:, None, :] - centroids[None, :, :]
    nearest = np.argmin((diff * diff).sum(axis=2), axis=1)
    labels = np.array([truth.type_of[int(e)] for e in actors])
    return float((nearest == labels).mean())


# ---------------------------------------------------------------------------
# File output (same formats the loader reads)


def write_instance(out_dir: str, spec: SynthSpec) -> tuple[TemporalKG, np.ndarray, SynthTruth]:
    g, matrix, truth = generate(spec)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "facts.txt"), "w", encoding="utf-8") as fh:
        for q in g.all_facts():
            fh.write(f"{q.subject}\t{q.relation}\t{q.object}\t{q.timestamp}\n")
    with open(os.path.join(out_dir, "entity2id.txt"), "w", encoding="utf-8") as fh:
        for e in range(spec.n_entities):
            fh.write(f"{g.vocab.entity_names[e]}\t{e}\n")
    with open(os.path.join(out_dir, "relation2id.txt"), "w", encoding="utf-8") as fh:
        for r in range(spec.n_relations):
            fh.write(f"{g.vocab.relation_names[r]}\t{r}\n")
    with open(os.path.join(out_dir, "embeddings.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"{spec.n_entities} {spec.dim}\n")
        for e in range(spec.n_entities):
            fh.write(f"{e} " + " ".join(repr(float(v)) for v in matrix[e]) + "\n")
    payload = {
        "spec": asdict(spec),
        "type_of": {str(k): v for k, v in truth.type_of.items()},
        "anchors": truth.anchors,
        "emerging": truth.emerging,
        "first_fact": {str(k): v for k, v in truth.first_fact.items()},
        "answer_key": [[s, r, t, c] for (s, r, t), c in truth.answer_key.items()],
    }
    with open(os.path.join(out_dir, "truth.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
    return g, matrix, truth


def load_truth(path: str) -> SynthTruth:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    raw_spec = payload["spec"]
    raw_spec["split_ratios"] = tuple(raw_spec["split_ratios"])
    spec = SynthSpec(**raw_spec)
    return SynthTruth(
        type_of={int(k): v for k, v in payload["type_of"].items()},
        anchors=payload["anchors"],
        emerging=payload["emerging"],
        first_fact={int(k): v for k, v in payload["first_fact"].items()},
        answer_key={(s, r, t): c for s, r, t, c in payload["answer_key"]},
        spec=spec)
