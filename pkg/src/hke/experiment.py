"""End-to-end elicitation runs, ablation arms, and report files.

A run alternates between collecting a batch of answered questions and
retraining: iteration 0 asks uniformly random questions at the fixed margin,
later iterations select questions against the current tree and, in adaptive
mode, price each question's margin by the diversity of the node it came from.
Every random draw derives from the run seed, so runs are bit-reproducible.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Dataset
from .elicitation import (
    RANDOM_SOURCE,
    AnswerRecord,
    KnowledgePool,
    Question,
    SelectionConfig,
    random_questions,
    select_batch,
)
from .embedding import (
    EmbeddingModel,
    TrainConfig,
    adaptive_margin,
    embed_all,
    train,
)
from .hierarchy import (
    BuildConfig,
    HierarchyTree,
    annotate_accuracy,
    build_hierarchy,
    dendrogram_purity,
)
from .participants import VirtualParticipant

SELECTION_MODES = ("active", "random")
MARGIN_MODES = ("adaptive", "fixed")

# sub-seed streams per iteration
_QUESTIONS, _TRAIN, _BUILD, _INIT, _TALLY, _MIXED = range(6)


def subseed(seed: int, stream: int, step: int) -> int:
    return int(np.random.SeedSequence((seed, stream, step)).generate_state(1)[0])


@dataclass
class ExperimentConfig:
    initial_questions: int = 1000
    iterations: int = 4
    budget: int = 600
    selection: str = "active"
    margin_mode: str = "adaptive"
    seed: int = 0
    warm_start: bool = True
    hidden: tuple[int, ...] = (32,)
    embed_dim: int = 8
    train: TrainConfig = field(default_factory=TrainConfig)
    selection_config: SelectionConfig = field(default_factory=SelectionConfig)
    build: BuildConfig = field(default_factory=BuildConfig)
    dataset: str | dict | None = None
    participant: str | dict | None = None

    def __post_init__(self) -> None:
        if self.selection not in SELECTION_MODES:
            raise ValueError(f"selection must be one of {SELECTION_MODES}")
        if self.margin_mode not in MARGIN_MODES:
            raise ValueError(f"margin_mode must be one of {MARGIN_MODES}")
        if self.initial_questions < 1 or self.budget < 1:
            raise ValueError("question counts must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.embed_dim < 2:
            raise ValueError("embed_dim must be >= 2")
        self.hidden = tuple(int(h) for h in self.hidden)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        data = dict(raw)
        if "train" in data:
            data["train"] = TrainConfig(**data["train"])
        if "selection_config" in data:
            data["selection_config"] = SelectionConfig(**data["selection_config"])
        if "build" in data:
            data["build"] = BuildConfig(**data["build"])
        if "hidden" in data:
            data["hidden"] = tuple(data["hidden"])
        return cls(**data)


@dataclass
class ExperimentResult:
    responder: str
    purities: list[float]
    loss_traces: list[list[float]]
    pool_sizes: list[int]
    selection_stats: list[dict]
    trees: list[dict]
    final_tree: HierarchyTree
    pool: KnowledgePool
    labels: dict[int, str]
    config: ExperimentConfig

    @property
    def final_purity(self) -> float:
        return self.purities[-1]


def _assign_margin(question: Question, tree: HierarchyTree, config: ExperimentConfig) -> float:
    if config.margin_mode == "fixed":
        return config.train.margin
    node = tree.root if question.source == RANDOM_SOURCE else tree.node(question.source)
    return adaptive_margin(
        config.train.margin_base, config.train.margin_gain, node.diversity
    )


def _collect(
    pool: KnowledgePool,
    participant: VirtualParticipant,
    questions: Sequence[Question],
    margins: Sequence[float],
    iteration: int,
) -> None:
    for question, margin in zip(questions, margins):
        chosen = participant.answer(question)
        pool.add(
            AnswerRecord(
                question=question,
                chosen=chosen,
                responder=participant.name,
                margin=margin,
                iteration=iteration,
            )
        )


def run_elicitation(
    dataset: Dataset,
    participant: VirtualParticipant,
    config: ExperimentConfig,
) -> ExperimentResult:
    """The full loop: collect, train, rebuild, measure, repeat."""
    labels = participant.leaf_labels()
    pool = KnowledgePool()
    selection = replace(config.selection_config, budget=config.budget)

    rng0 = np.random.default_rng(subseed(config.seed, _QUESTIONS, 0))
    questions = random_questions(dataset.ids(), config.initial_questions, rng0)
    _collect(pool, participant, questions, [config.train.margin] * len(questions), 0)

    model = EmbeddingModel.for_features(
        dataset.feature_matrix(),
        hidden=config.hidden,
        embed_dim=config.embed_dim,
        seed=subseed(config.seed, _INIT, 0),
    )

    purities: list[float] = []
    loss_traces: list[list[float]] = []
    pool_sizes: list[int] = []
    selection_stats: list[dict] = []
    trees: list[dict] = []
    tree: HierarchyTree | None = None

    for iteration in range(config.iterations + 1):
        if iteration > 0:
            rng = np.random.default_rng(subseed(config.seed, _QUESTIONS, iteration))
            stats: dict = {}
            if config.selection == "active":
                questions = select_batch(
                    tree,
                    pool,
                    selection,
                    rng,
                    seed=subseed(config.seed, _TALLY, iteration),
                    stats_out=stats,
                )
            else:
                questions = random_questions(
                    dataset.ids(),
                    config.budget,
                    rng,
                    answered=frozenset(pool.answered_sets(participant.name)),
                )
            margins = [_assign_margin(q, tree, config) for q in questions]
            _collect(pool, participant, questions, margins, iteration)
            selection_stats.append(stats)
            if not config.warm_start:
                model = EmbeddingModel.for_features(
                    dataset.feature_matrix(),
                    hidden=config.hidden,
                    embed_dim=config.embed_dim,
                    seed=subseed(config.seed, _INIT, iteration),
                )
        else:
            selection_stats.append({})

        triplets = [record.to_triplet() for record in pool.records]
        train_config = replace(config.train, seed=subseed(config.seed, _TRAIN, iteration))
        trace = train(model, triplets, dataset, train_config)

        embeddings = embed_all(model, dataset)
        build_config = replace(config.build, seed=subseed(config.seed, _BUILD, iteration))
        tree = build_hierarchy(embeddings, build_config)
        annotate_accuracy(tree, labels)

        purities.append(dendrogram_purity(tree, labels))
        loss_traces.append(trace)
        pool_sizes.append(len(pool))
        trees.append(tree.to_dict())

    return ExperimentResult(
        responder=participant.name,
        purities=purities,
        loss_traces=loss_traces,
        pool_sizes=pool_sizes,
        selection_stats=selection_stats,
        trees=trees,
        final_tree=tree,
        pool=pool,
        labels=labels,
        config=config,
    )


# ---------------------------------------------------------------------------
# Baselines, ablation arms, mixed pools
# ---------------------------------------------------------------------------

ARMS = ("raw", "random_fixed", "active_fixed", "active_adaptive")


def raw_feature_purity(
    dataset: Dataset, participant: VirtualParticipant, config: ExperimentConfig
) -> float:
    """Cluster the untrained feature vectors directly and score that tree."""
    embeddings = {item.id: item.features for item in dataset.items}
    build_config = replace(config.build, seed=subseed(config.seed, _BUILD, 0))
    tree = build_hierarchy(embeddings, build_config)
    return dendrogram_purity(tree, participant.leaf_labels())


def _arm_config(config: ExperimentConfig, arm: str) -> ExperimentConfig:
    if arm == "random_fixed":
        return replace(config, selection="random", margin_mode="fixed")
    if arm == "active_fixed":
        return replace(config, selection="active", margin_mode="fixed")
    if arm == "active_adaptive":
        return replace(config, selection="active", margin_mode="adaptive")
    raise ValueError(f"unknown arm {arm!r}")


def run_ablation(
    dataset: Dataset,
    participants: Sequence[VirtualParticipant],
    config: ExperimentConfig | None = None,
) -> dict:
    """Purity curves for the raw baseline and the three trained arms.

    Every trained arm consumes the identical question budget; the raw
    baseline never trains, so its curve is flat by construction.
    """
    config = config or ExperimentConfig()
    table: dict = {"arms": list(ARMS), "participants": {}}
    points = config.iterations + 1
    for participant in participants:
        raw = raw_feature_purity(dataset, participant, config)
        curves = {"raw": [raw] * points}
        for arm in ARMS[1:]:
            result = run_elicitation(dataset, participant, _arm_config(config, arm))
            curves[arm] = result.purities
        table["participants"][participant.name] = curves
    return table


@dataclass
class MixedResult:
    tree: HierarchyTree
    purity: float
    labels: dict[int, str]
    runs: list[ExperimentResult]


def run_mixed(
    dataset: Dataset,
    participants: Sequence[VirtualParticipant],
    config: ExperimentConfig,
) -> MixedResult:
    """Train one model on the union of several participants' pools.

    Individual runs first elicit per-participant pools; a fresh model is then
    trained on all answers together and its tree is scored against the
    dataset's own finest class labels (the concepts all participants share).
    """
    runs = [
        run_elicitation(dataset, p, replace(config, seed=subseed(config.seed, _MIXED, i)))
        for i, p in enumerate(participants)
    ]
    union: list[AnswerRecord] = []
    for run in runs:
        union.extend(run.pool.records)
    triplets = [record.to_triplet() for record in union]

    model = EmbeddingModel.for_features(
        dataset.feature_matrix(),
        hidden=config.hidden,
        embed_dim=config.embed_dim,
        seed=subseed(config.seed, _INIT, len(participants)),
    )
    train_config = replace(config.train, seed=subseed(config.seed, _TRAIN, len(participants)))
    train(model, triplets, dataset, train_config)
    embeddings = embed_all(model, dataset)
    build_config = replace(config.build, seed=subseed(config.seed, _BUILD, len(participants)))
    tree = build_hierarchy(embeddings, build_config)

    labels = dataset.finest_labels()
    annotate_accuracy(tree, labels)
    return MixedResult(
        tree=tree,
        purity=dendrogram_purity(tree, labels),
        labels=labels,
        runs=runs,
    )


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def report(result: ExperimentResult, out_dir: str | Path) -> dict[str, Path]:
    """Write metrics JSON, the purity curve CSV, and the final tree JSON.

    The metrics file contains no timestamps or environment data, so re-running
    the same seed reproduces it byte for byte.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    metrics = {
        "responder": result.responder,
        "config": result.config.to_dict(),
        "purities": result.purities,
        "final_purity": result.final_purity,
        "loss_traces": result.loss_traces,
        "pool_sizes": result.pool_sizes,
        "selection_stats": result.selection_stats,
    }
    metrics_path = out / "metrics.json"
    metrics_path.write_text(
        json.dumps(metrics, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )

    purity_path = out / "purity.csv"
    with purity_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "purity"])
        for i, value in enumerate(result.purities):
            writer.writerow([i, repr(value)])

    tree_path = out / "tree.json"
    tree_path.write_text(
        json.dumps(result.trees[-1], indent=2) + "\n", encoding="utf-8"
    )
    return {"metrics": metrics_path, "purity": purity_path, "tree": tree_path}
