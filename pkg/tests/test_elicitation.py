"""Tests for question proposal, the knowledge pool, and the evidence filter."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hke.elicitation import (
    KEEP,
    RANDOM_SOURCE,
    REJECT_AMBIGUOUS,
    REJECT_CONFIDENT,
    AnswerRecord,
    DirichletStats,
    KnowledgePool,
    Question,
    SelectionConfig,
    cluster_signature,
    expected_max,
    propose_questions,
    random_questions,
    reject,
    select_batch,
    tally_similar,
    variance_sum,
)
from hke.hierarchy import HierarchyNode, HierarchyTree


def two_leaf_tree(left=tuple(range(6)), right=tuple(range(6, 12))) -> HierarchyTree:
    root = HierarchyNode(
        0,
        left + right,
        np.zeros(2),
        children=[
            HierarchyNode(1, left, np.zeros(2)),
            HierarchyNode(2, right, np.zeros(2)),
        ],
    )
    return HierarchyTree(root, {i: np.zeros(2) for i in left + right})


def root_only_tree(n=12) -> HierarchyTree:
    members = tuple(range(n))
    return HierarchyTree(
        HierarchyNode(0, members, np.zeros(2)), {i: np.zeros(2) for i in members}
    )


class TestQuestion:
    def test_of_sorts_ids(self):
        q = Question.of(9, 2, 5)
        assert q.ids == (2, 5, 9)

    def test_rejects_duplicates(self):
        with pytest.raises(ValueError, match="distinct"):
            Question.of(1, 1, 2)

    def test_rejects_unsorted_direct_construction(self):
        with pytest.raises(ValueError, match="sorted"):
            Question((3, 1, 2))

    def test_equality_ignores_source(self):
        assert Question.of(1, 2, 3, source=7) == Question.of(3, 2, 1)
        assert hash(Question.of(1, 2, 3, source=7)) == hash(Question.of(1, 2, 3))


class TestAnswerRecord:
    def test_rejects_foreign_chosen_id(self):
        with pytest.raises(ValueError, match="not part of"):
            AnswerRecord(Question.of(1, 2, 3), chosen=9, responder="r", margin=0.4, iteration=0)

    def test_positives_and_triplet(self):
        rec = AnswerRecord(Question.of(1, 2, 3), chosen=2, responder="r", margin=0.4, iteration=0)
        assert rec.positives() == (1, 3)
        triplet = rec.to_triplet()
        assert (triplet.p1, triplet.p2, triplet.n) == (1, 3, 2)
        assert triplet.margin == 0.4

    def test_json_line_round_trip(self):
        rec = AnswerRecord(
            Question.of(5, 1, 9), chosen=5, responder="p1", margin=0.25,
            iteration=3, timestamp=12.5,
        )
        again = AnswerRecord.from_json_line(rec.to_json_line())
        assert again == rec

    def test_json_line_carries_flat_fields(self):
        rec = AnswerRecord(Question.of(1, 2, 3), chosen=3, responder="r", margin=0.4, iteration=1)
        line = rec.to_json_line()
        for key in ('"a1"', '"a2"', '"a3"', '"chosen"', '"responder"',
                    '"margin"', '"iteration"', '"timestamp"'):
            assert key in line


class TestKnowledgePool:
    def make(self, ids, responder="r"):
        return AnswerRecord(Question.of(*ids), chosen=ids[0], responder=responder,
                            margin=0.4, iteration=0)

    def test_duplicate_question_responder_is_dropped(self):
        pool = KnowledgePool()
        assert pool.add(self.make((1, 2, 3))) is True
        assert pool.add(self.make((3, 2, 1))) is False
        assert len(pool) == 1

    def test_same_question_different_responder_is_kept(self):
        pool = KnowledgePool()
        pool.add(self.make((1, 2, 3), responder="a"))
        assert pool.add(self.make((1, 2, 3), responder="b")) is True
        assert len(pool) == 2

    def test_answered_sets_filters_by_responder(self):
        pool = KnowledgePool()
        pool.add(self.make((1, 2, 3), responder="a"))
        pool.add(self.make((4, 5, 6), responder="b"))
        assert pool.answered_sets("a") == {(1, 2, 3)}
        assert pool.answered_sets() == {(1, 2, 3), (4, 5, 6)}

    def test_jsonl_round_trip(self, tmp_path):
        pool = KnowledgePool()
        pool.add(self.make((1, 2, 3)))
        pool.add(self.make((2, 3, 4), responder="other"))
        p = tmp_path / "pool.jsonl"
        pool.save(p)
        again = KnowledgePool.load(p)
        assert again.records == pool.records

    def test_load_skips_blank_lines(self, tmp_path):
        p = tmp_path / "pool.jsonl"
        line = self.make((1, 2, 3)).to_json_line()
        p.write_text(line + "\n\n" + line + "\n", encoding="utf-8")
        assert len(KnowledgePool.load(p)) == 1


class TestRandomQuestions:
    def test_draws_requested_count(self):
        rng = np.random.default_rng(0)
        qs = random_questions(range(20), 15, rng)
        assert len(qs) == 15
        assert len({q.ids for q in qs}) == 15
        assert all(q.source == RANDOM_SOURCE for q in qs)

    def test_avoids_answered_sets(self):
        rng = np.random.default_rng(1)
        answered = frozenset({(0, 1, 2), (1, 2, 3)})
        qs = random_questions(range(5), 8, rng, answered=answered)
        assert len(qs) == 8
        assert not any(q.ids in answered for q in qs)

    def test_exhausted_space_raises(self):
        rng = np.random.default_rng(2)
        with pytest.raises(ValueError, match="could not draw"):
            random_questions(range(4), 5, rng)  # C(4,3) = 4 < 5


class TestProposeQuestions:
    def test_root_only_tree_gives_uniform_triples(self):
        tree = root_only_tree(12)
        qs = propose_questions(tree, 10, np.random.default_rng(0))
        assert len(qs) == 10
        assert all(q.source == 0 for q in qs)
        assert all(set(q.ids) <= set(range(12)) for q in qs)

    def test_round_robin_splits_budget_evenly(self):
        tree = two_leaf_tree(tuple(range(50)), tuple(range(50, 100)))
        qs = propose_questions(tree, 9, np.random.default_rng(1))
        per_source = {0: 0, 1: 0, 2: 0}
        for q in qs:
            per_source[q.source] += 1
        assert per_source == {0: 3, 1: 3, 2: 3}

    def test_small_nodes_are_skipped(self):
        tree = two_leaf_tree(tuple(range(2)), tuple(range(2, 12)))
        qs = propose_questions(tree, 8, np.random.default_rng(2))
        assert len(qs) == 8
        assert not any(q.source == 1 for q in qs)

    def test_answered_sets_are_avoided(self):
        tree = root_only_tree(6)
        answered = frozenset({(0, 1, 2), (3, 4, 5), (0, 1, 3)})
        qs = propose_questions(tree, 10, np.random.default_rng(3), answered=answered)
        assert not any(q.ids in answered for q in qs)

    def test_no_duplicates_within_batch(self):
        tree = root_only_tree(8)
        qs = propose_questions(tree, 30, np.random.default_rng(4))
        assert len({q.ids for q in qs}) == len(qs)

    def test_errors_when_every_node_is_too_small(self):
        members = (0, 1)
        tree = HierarchyTree(
            HierarchyNode(0, members, np.zeros(2)), {i: np.zeros(2) for i in members}
        )
        with pytest.raises(ValueError, match="3 or more members"):
            propose_questions(tree, 5, np.random.default_rng(0))

    def test_returns_short_when_space_exhausted(self):
        tree = root_only_tree(4)  # only 4 possible questions
        qs = propose_questions(tree, 10, np.random.default_rng(5))
        assert len(qs) == 4


class TestClusterSignature:
    def test_same_leaf_pattern_same_signature(self):
        tree = two_leaf_tree()
        a = cluster_signature(Question.of(0, 1, 6), tree)
        b = cluster_signature(Question.of(2, 3, 7), tree)
        assert a == b

    def test_different_pattern_differs(self):
        tree = two_leaf_tree()
        a = cluster_signature(Question.of(0, 1, 6), tree)
        b = cluster_signature(Question.of(0, 6, 7), tree)
        assert a != b

    def test_single_leaf_triples(self):
        tree = two_leaf_tree()
        sig = cluster_signature(Question.of(0, 1, 2), tree)
        assert sig == (1, 1, 1)


def record(ids, chosen, responder="r", margin=0.4, iteration=0):
    return AnswerRecord(Question.of(*ids), chosen=chosen, responder=responder,
                        margin=margin, iteration=iteration)


class TestTallySimilar:
    def test_empty_pool(self):
        tree = two_leaf_tree()
        assert tally_similar(Question.of(0, 1, 6), KnowledgePool(), tree) == (0, 0, 0)

    def test_counts_by_slot_leaf(self):
        tree = two_leaf_tree()
        pool = KnowledgePool()
        # 8 similar questions answered with the lone right-leaf item
        for i, ids in enumerate(
            [(0, 1, 7), (2, 3, 8), (4, 5, 9), (0, 2, 10), (1, 3, 11),
             (2, 4, 7), (3, 5, 8), (0, 4, 9)]
        ):
            pool.add(record(ids, chosen=ids[2]))
        # and one answered with a left-leaf item
        pool.add(record((1, 5, 10), chosen=1))
        m = tally_similar(Question.of(0, 1, 6), pool, tree)
        assert m[2] == 8
        assert sorted(m[:2]) == [0, 1]

    def test_unrelated_signature_contributes_nothing(self):
        tree = two_leaf_tree()
        pool = KnowledgePool()
        pool.add(record((0, 1, 2), chosen=0))  # left-left-left signature
        assert tally_similar(Question.of(0, 1, 6), pool, tree) == (0, 0, 0)

    def test_degenerate_split_is_deterministic(self):
        tree = two_leaf_tree()
        pool = KnowledgePool()
        for ids in [(0, 1, 2), (1, 2, 3), (2, 3, 4), (3, 4, 5)]:
            pool.add(record(ids, chosen=ids[0]))
        q = Question.of(0, 4, 5)
        first = tally_similar(q, pool, tree, seed=9)
        assert first == tally_similar(q, pool, tree, seed=9)
        assert sum(first) == 4


class TestDirichletMoments:
    def test_fresh_point_is_exact(self):
        stats = DirichletStats()
        assert expected_max(stats) == 1 / 3
        assert variance_sum(stats) == 1 / 6

    def test_expected_max_worked_values(self):
        assert expected_max(DirichletStats(m=(8, 1, 0))) == 0.75
        assert expected_max(DirichletStats(m=(0, 0, 100))) == pytest.approx(
            101 / 103, abs=1e-15
        )

    def test_variance_sum_worked_values(self):
        assert variance_sum(DirichletStats(m=(8, 1, 0))) == pytest.approx(
            58 / 1872, abs=1e-15
        )
        assert variance_sum(DirichletStats(m=(99, 99, 99))) == pytest.approx(
            60000 / 27090000, abs=1e-15
        )

    def test_rejects_invalid_parameters(self):
        with pytest.raises(ValueError, match="alpha"):
            DirichletStats(alpha=(0.0, 1.0, 1.0))
        with pytest.raises(ValueError, match="counts"):
            DirichletStats(m=(-1, 0, 0))

    @given(
        m=st.tuples(st.integers(0, 200), st.integers(0, 200), st.integers(0, 200))
    )
    def test_posterior_update_matches_shifted_prior(self, m):
        folded = DirichletStats(alpha=tuple(1.0 + c for c in m), m=(0, 0, 0))
        plain = DirichletStats(m=m)
        assert expected_max(plain) == expected_max(folded)
        assert variance_sum(plain) == variance_sum(folded)

    def test_variance_decreases_from_symmetric_posterior(self):
        for base in range(0, 40):
            sym = DirichletStats(m=(base, base, base))
            for j in range(3):
                bumped = list((base, base, base))
                bumped[j] += 1
                assert variance_sum(DirichletStats(m=tuple(bumped))) < variance_sum(sym)

    def test_variance_never_exceeds_one_sixth_under_unit_prior(self):
        grid = range(0, 30, 3)
        for m1 in grid:
            for m2 in grid:
                for m3 in grid:
                    assert variance_sum(DirichletStats(m=(m1, m2, m3))) <= 1 / 6

    @given(
        m=st.tuples(st.integers(0, 500), st.integers(0, 500), st.integers(0, 500))
    )
    def test_expected_max_stays_in_range(self, m):
        value = expected_max(DirichletStats(m=m))
        assert 1 / 3 <= value < 1.0


class TestReject:
    def fresh_setup(self):
        return KnowledgePool(), two_leaf_tree(), SelectionConfig()

    def test_fresh_question_is_kept(self):
        pool, tree, config = self.fresh_setup()
        decision = reject(Question.of(0, 1, 6), pool, tree, config)
        assert decision.keep
        assert decision.expected_max == 1 / 3
        assert decision.variance_sum == 1 / 6

    def test_moderate_evidence_kept_at_defaults_rejected_when_strict(self):
        pool, tree, _ = self.fresh_setup()
        for i, ids in enumerate(
            [(0, 1, 7), (2, 3, 8), (4, 5, 9), (0, 2, 10), (1, 3, 11),
             (2, 4, 7), (3, 5, 8), (0, 4, 9)]
        ):
            pool.add(record(ids, chosen=ids[2]))
        pool.add(record((1, 5, 10), chosen=1))
        q = Question.of(0, 1, 6)
        assert reject(q, pool, tree, SelectionConfig()).keep
        strict = reject(q, pool, tree, SelectionConfig(confident_threshold=0.7))
        assert strict.decision == REJECT_CONFIDENT

    def test_heavy_one_sided_evidence_rejected_confident(self):
        pool, tree, config = self.fresh_setup()
        count = 0
        for a in range(6):
            for b in range(a + 1, 6):
                for c in range(6, 12):
                    if count >= 30:
                        break
                    pool.add(record((a, b, c), chosen=c))
                    count += 1
        decision = reject(Question.of(0, 1, 6), pool, tree, config)
        assert decision.decision == REJECT_CONFIDENT
        assert decision.expected_max == pytest.approx(31 / 33, abs=1e-15)

    def test_ambiguous_rejection_needs_enough_evidence(self):
        pool, tree, _ = self.fresh_setup()
        picks = [(0, 1, 6), (1, 2, 7), (2, 3, 8), (3, 4, 9), (4, 5, 10), (0, 2, 11)]
        for i, ids in enumerate(picks):
            # scatter: two choices per slot position
            pool.add(record(ids, chosen=ids[i % 3]))
        q = Question.of(0, 1, 6)
        loose = SelectionConfig(ambiguous_threshold=0.05)
        decision = reject(q, pool, tree, loose)
        assert decision.decision == REJECT_AMBIGUOUS
        assert sum(decision.tallies) == 6
        gated = SelectionConfig(ambiguous_threshold=0.05, min_variance_evidence=7)
        assert reject(q, pool, tree, gated).keep

    def test_default_thresholds_never_fire_ambiguous(self):
        """With the unit prior the variance sum is capped at 1/6 < 0.2, so the
        ambiguous branch is inert until the threshold is tightened."""
        pool, tree, config = self.fresh_setup()
        assert config.ambiguous_threshold > 1 / 6


class TestSelectBatch:
    def test_empty_pool_passes_everything(self):
        tree = two_leaf_tree()
        config = SelectionConfig(budget=10, oversample=2)
        stats = {}
        batch = select_batch(tree, KnowledgePool(), config, np.random.default_rng(0),
                             stats_out=stats)
        assert len(batch) == 10
        assert stats["kept"] == 10
        assert stats["reject_confident"] == 0
        assert stats["topped_up"] == 0

    def test_saturated_signature_is_filtered_out(self):
        tree = two_leaf_tree()
        pool = KnowledgePool()
        added = 0
        for a in range(6):
            for b in range(a + 1, 6):
                for c in range(6, 12):
                    if added >= 50:
                        break
                    pool.add(record((a, b, c), chosen=c))
                    added += 1
        config = SelectionConfig(budget=12, oversample=4)
        stats = {}
        batch = select_batch(tree, pool, config, np.random.default_rng(1),
                             stats_out=stats)
        assert len(batch) == 12
        assert stats["reject_confident"] > 0
        saturated = cluster_signature(Question.of(0, 1, 6), tree)
        if stats["topped_up"] == 0:
            assert all(cluster_signature(q, tree) != saturated for q in batch)

    def test_never_repeats_an_answered_question(self):
        tree = root_only_tree(8)
        pool = KnowledgePool()
        rng = np.random.default_rng(2)
        for q in random_questions(range(8), 30, rng):
            pool.add(AnswerRecord(q, chosen=q.ids[0], responder="r", margin=0.4,
                                  iteration=0))
        answered = pool.answered_sets()
        config = SelectionConfig(budget=15, oversample=2)
        batch = select_batch(tree, pool, config, np.random.default_rng(3))
        assert len(batch) == 15
        assert not any(q.ids in answered for q in batch)

    def test_batch_is_exactly_budget_sized(self):
        tree = two_leaf_tree()
        config = SelectionConfig(budget=25, oversample=3)
        batch = select_batch(tree, KnowledgePool(), config, np.random.default_rng(4))
        assert len(batch) == 25

    def test_deterministic_given_seeded_rng(self):
        tree = two_leaf_tree()
        config = SelectionConfig(budget=9, oversample=2)
        a = select_batch(tree, KnowledgePool(), config, np.random.default_rng(5))
        b = select_batch(tree, KnowledgePool(), config, np.random.default_rng(5))
        assert a == b


class TestSelectionConfig:
    def test_rejects_trivial_confidence_threshold(self):
        with pytest.raises(ValueError, match="confident_threshold"):
            SelectionConfig(confident_threshold=1 / 3)

    def test_rejects_zero_budget(self):
        with pytest.raises(ValueError, match="budget"):
            SelectionConfig(budget=0)
