"""Question management: proposal from tree nodes, answer pooling, and the
Dirichlet evidence filter that rejects questions with predictable or
persistently ambiguous answers.

"Similar questions" are questions whose three items fall in the same multiset
of tree leaves; answer history is tallied per such cluster signature and the
tallies feed a Dirichlet(alpha + counts) posterior over the three slots.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .embedding import AnsweredTriplet
from .hierarchy import HierarchyTree

RANDOM_SOURCE = "root/random"

KEEP = "keep"
REJECT_CONFIDENT = "reject_confident"
REJECT_AMBIGUOUS = "reject_ambiguous"


@dataclass(frozen=True)
class Question:
    """Three distinct items shown together; identity is the id set alone."""

    ids: tuple[int, int, int]
    source: int | str = field(default=RANDOM_SOURCE, compare=False)

    def __post_init__(self) -> None:
        if len(set(self.ids)) != 3:
            raise ValueError(f"question ids must be distinct: {self.ids}")
        if tuple(sorted(self.ids)) != tuple(self.ids):
            raise ValueError(f"question ids must be sorted: {self.ids}")

    @classmethod
    def of(cls, a: int, b: int, c: int, source: int | str = RANDOM_SOURCE) -> "Question":
        return cls(tuple(sorted((int(a), int(b), int(c)))), source)


@dataclass(frozen=True)
class AnswerRecord:
    """One judgment: which of the question's items was the odd one out."""

    question: Question
    chosen: int
    responder: str
    margin: float
    iteration: int
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        if self.chosen not in self.question.ids:
            raise ValueError(
                f"chosen id {self.chosen} is not part of question {self.question.ids}"
            )
        if not self.margin > 0:
            raise ValueError("margin must be positive")

    def positives(self) -> tuple[int, int]:
        return tuple(i for i in self.question.ids if i != self.chosen)

    def to_triplet(self) -> AnsweredTriplet:
        p1, p2 = self.positives()
        return AnsweredTriplet(p1=p1, p2=p2, n=self.chosen, margin=self.margin)

    def to_json_line(self) -> str:
        a1, a2, a3 = self.question.ids
        return json.dumps(
            {
                "a1": a1,
                "a2": a2,
                "a3": a3,
                "chosen": self.chosen,
                "responder": self.responder,
                "margin": self.margin,
                "iteration": self.iteration,
                "timestamp": self.timestamp,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json_line(cls, line: str) -> "AnswerRecord":
        raw = json.loads(line)
        return cls(
            question=Question.of(raw["a1"], raw["a2"], raw["a3"]),
            chosen=int(raw["chosen"]),
            responder=str(raw["responder"]),
            margin=float(raw["margin"]),
            iteration=int(raw["iteration"]),
            timestamp=float(raw.get("timestamp", 0.0)),
        )


class KnowledgePool:
    """Append-only answer store; a (question, responder) pair is kept once."""

    def __init__(self) -> None:
        self._records: list[AnswerRecord] = []
        self._keys: set[tuple[tuple[int, int, int], str]] = set()

    def __len__(self) -> int:
        return len(self._records)

    @property
    def records(self) -> tuple[AnswerRecord, ...]:
        return tuple(self._records)

    def add(self, record: AnswerRecord) -> bool:
        """Append a record; returns False (and keeps nothing) on a duplicate."""
        key = (record.question.ids, record.responder)
        if key in self._keys:
            return False
        self._keys.add(key)
        self._records.append(record)
        return True

    def extend(self, records: Iterable[AnswerRecord]) -> int:
        return sum(1 for r in records if self.add(r))

    def answered_sets(self, responder: str | None = None) -> set[tuple[int, int, int]]:
        """Id triples already answered, optionally for one responder only."""
        if responder is None:
            return {ids for ids, _ in self._keys}
        return {ids for ids, resp in self._keys if resp == responder}

    def save(self, path: str | Path) -> None:
        text = "".join(r.to_json_line() + "\n" for r in self._records)
        Path(path).write_text(text, encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "KnowledgePool":
        pool = cls()
        with Path(path).open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    pool.add(AnswerRecord.from_json_line(line))
        return pool


# ---------------------------------------------------------------------------
# Question proposal
# ---------------------------------------------------------------------------


def random_questions(
    ids: Sequence[int],
    count: int,
    rng: np.random.Generator,
    answered: frozenset[tuple[int, int, int]] = frozenset(),
    attempt_cap: int | None = None,
) -> list[Question]:
    """Uniform random triples over the given ids, avoiding answered id sets."""
    ids = np.asarray(sorted(ids))
    if len(ids) < 3:
        raise ValueError("need at least 3 items to form a question")
    cap = attempt_cap if attempt_cap is not None else max(200 * count, 1000)
    seen = set(answered)
    out: list[Question] = []
    for _ in range(cap):
        if len(out) >= count:
            break
        triple = tuple(sorted(int(i) for i in rng.choice(ids, size=3, replace=False)))
        if triple in seen:
            continue
        seen.add(triple)
        out.append(Question(triple, RANDOM_SOURCE))
    if len(out) < count:
        raise ValueError(
            f"could not draw {count} unanswered questions from {len(ids)} items"
        )
    return out


def propose_questions(
    tree: HierarchyTree,
    count: int,
    rng: np.random.Generator,
    answered: frozenset[tuple[int, int, int]] = frozenset(),
    retry_cap: int = 20,
) -> list[Question]:
    """Round-robin over tree nodes, drawing 3 distinct member ids per visit.

    Nodes with fewer than 3 members are skipped. A draw that collides with an
    answered or already-proposed id set is retried up to ``retry_cap`` times,
    then that node's turn is skipped. May return fewer than ``count`` when every
    node keeps colliding.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    nodes = [n for n in tree.nodes() if len(n.members) >= 3]
    if not nodes:
        raise ValueError("no tree node has 3 or more members")
    members = {n.id: np.asarray(sorted(n.members)) for n in nodes}
    seen = set(answered)
    out: list[Question] = []
    while len(out) < count:
        progressed = False
        for node in nodes:
            if len(out) >= count:
                break
            pool = members[node.id]
            for _ in range(retry_cap):
                triple = tuple(
                    sorted(int(i) for i in rng.choice(pool, size=3, replace=False))
                )
                if triple not in seen:
                    seen.add(triple)
                    out.append(Question(triple, node.id))
                    progressed = True
                    break
        if not progressed:
            break
    return out


# ---------------------------------------------------------------------------
# Dirichlet evidence over similar questions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DirichletStats:
    """Prior pseudo-counts alpha and observed counts m for the three slots."""

    alpha: tuple[float, float, float] = (1.0, 1.0, 1.0)
    m: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self) -> None:
        if any(not a > 0 for a in self.alpha):
            raise ValueError("alpha entries must be > 0")
        if any(c < 0 for c in self.m):
            raise ValueError("counts must be >= 0")

    def posterior(self) -> tuple[float, float, float]:
        return tuple(a + c for a, c in zip(self.alpha, self.m))


def expected_max(stats: DirichletStats) -> float:
    """Largest posterior mean: how predictable the answer already is."""
    post = stats.posterior()
    return max(post) / sum(post)


def variance_sum(stats: DirichletStats) -> float:
    """Sum of the marginal posterior variances.

    With the symmetric unit prior the value never exceeds 1/6: the numerator
    sum(a_j(a_0 - a_j)) is at most 2/3 a_0^2, so the sum is bounded by
    2/(3(a_0+1)) with a_0 >= 3.
    """
    post = stats.posterior()
    total = sum(post)
    numerator = sum(a * (total - a) for a in post)
    return numerator / (total * total * (total + 1.0))


def cluster_signature(question: Question, tree: HierarchyTree) -> tuple[int, ...]:
    """The multiset (sorted tuple) of the three items' leaf ids."""
    return tuple(sorted(tree.leaf_of(i) for i in question.ids))


class SignatureIndex:
    """Pool records grouped by cluster signature under one tree snapshot."""

    def __init__(self, pool: KnowledgePool, tree: HierarchyTree):
        self.tree = tree
        self._groups: dict[tuple[int, ...], list[int]] = {}
        for record in pool.records:
            sig = cluster_signature(record.question, tree)
            self._groups.setdefault(sig, []).append(
                tree.leaf_of(record.chosen)
            )

    def tally(self, question: Question, seed: int = 0) -> tuple[int, int, int]:
        """Counts of matching answers attributed to slots a1, a2, a3.

        A chosen leaf appearing in several slots of the question is a
        degenerate signature; such answers are split uniformly among the
        matching slots with a per-question rng so the split is reproducible.
        """
        slots = [self.tree.leaf_of(i) for i in question.ids]
        chosen_leaves = self._groups.get(tuple(sorted(slots)), [])
        counts = [0, 0, 0]
        rng: np.random.Generator | None = None
        for chosen_leaf in chosen_leaves:
            matching = [s for s in range(3) if slots[s] == chosen_leaf]
            if not matching:
                continue
            if len(matching) == 1:
                counts[matching[0]] += 1
            else:
                if rng is None:
                    rng = np.random.default_rng((seed, *question.ids))
                counts[matching[int(rng.integers(len(matching)))]] += 1
        return tuple(counts)


def tally_similar(
    question: Question, pool: KnowledgePool, tree: HierarchyTree, seed: int = 0
) -> tuple[int, int, int]:
    """Answer counts from pool records with the same cluster signature."""
    return SignatureIndex(pool, tree).tally(question, seed)


# ---------------------------------------------------------------------------
# Rejection filter and batch selection
# ---------------------------------------------------------------------------


@dataclass
class SelectionConfig:
    confident_threshold: float = 0.8
    ambiguous_threshold: float = 0.2
    budget: int = 600
    oversample: int = 4
    neighborhood_rank: int = 0
    min_variance_evidence: int = 6

    def __post_init__(self) -> None:
        if not 1.0 / 3.0 < self.confident_threshold <= 1.0:
            raise ValueError("confident_threshold must lie in (1/3, 1]")
        if not self.ambiguous_threshold > 0:
            raise ValueError("ambiguous_threshold must be > 0")
        if self.budget < 1 or self.oversample < 1:
            raise ValueError("budget and oversample must be >= 1")
        if self.neighborhood_rank < 0 or self.min_variance_evidence < 0:
            raise ValueError("neighborhood_rank and min_variance_evidence must be >= 0")


@dataclass(frozen=True)
class RejectionDecision:
    decision: str
    expected_max: float
    variance_sum: float
    tallies: tuple[int, int, int]

    @property
    def keep(self) -> bool:
        return self.decision == KEEP


def _decide(
    tallies: tuple[int, int, int], config: SelectionConfig
) -> RejectionDecision:
    stats = DirichletStats(m=tallies)
    expected = expected_max(stats)
    variance = variance_sum(stats)
    if expected > config.confident_threshold:
        decision = REJECT_CONFIDENT
    elif (
        sum(tallies) >= config.min_variance_evidence
        and variance > config.ambiguous_threshold
    ):
        decision = REJECT_AMBIGUOUS
    else:
        decision = KEEP
    return RejectionDecision(decision, expected, variance, tallies)


def reject(
    question: Question,
    pool: KnowledgePool,
    tree: HierarchyTree,
    config: SelectionConfig,
    seed: int = 0,
) -> RejectionDecision:
    """Filter one question against the pooled evidence for its signature.

    An answer distribution the posterior already predicts strongly is
    rejected as confident; one that stayed scattered despite enough evidence
    is rejected as ambiguous; everything else is kept.
    """
    return _decide(tally_similar(question, pool, tree, seed), config)


def select_batch(
    tree: HierarchyTree,
    pool: KnowledgePool,
    config: SelectionConfig,
    rng: np.random.Generator,
    seed: int = 0,
    stats_out: dict | None = None,
) -> list[Question]:
    """A budget of questions: oversampled node proposals minus rejections.

    Proposals that survive the filter are taken in order until the budget is
    met; any shortfall is topped up with fresh uniform random questions so the
    batch size is always exactly the budget. Questions already answered by any
    responder in the pool are never returned.
    """
    answered = frozenset(pool.answered_sets())
    index = SignatureIndex(pool, tree)
    proposals = propose_questions(
        tree, config.budget * config.oversample, rng, answered=answered
    )
    counts = {KEEP: 0, REJECT_CONFIDENT: 0, REJECT_AMBIGUOUS: 0}
    batch: list[Question] = []
    for question in proposals:
        if len(batch) >= config.budget:
            break
        decision = _decide(index.tally(question, seed), config)
        counts[decision.decision] += 1
        if decision.keep:
            batch.append(question)
    topped_up = 0
    if len(batch) < config.budget:
        exclude = answered | {q.ids for q in proposals}
        filler = random_questions(
            sorted(tree.root.members),
            config.budget - len(batch),
            rng,
            answered=frozenset(exclude),
        )
        topped_up = len(filler)
        batch.extend(filler)
    if stats_out is not None:
        stats_out.update(
            proposed=len(proposals),
            kept=counts[KEEP],
            reject_confident=counts[REJECT_CONFIDENT],
            reject_ambiguous=counts[REJECT_AMBIGUOUS],
            topped_up=topped_up,
        )
    return batch
