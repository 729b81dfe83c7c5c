"""HTTP sessions for collecting odd-one-out answers from real responders.

Every session lives in its own directory: answers append to a JSONL pool,
metadata rewrites atomically, and the model checkpoint and tree are snapshots.
An answer is acknowledged only after it is fsynced, and a question id is
served only after the queue pop is persisted, so a killed and restarted
server never loses an acknowledged answer and never repeats a question.
"""

from __future__ import annotations

import json
import os
import threading
import uuid
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import Response
from pydantic import BaseModel

from .dataset import Dataset, DatasetError, render_stimulus
from .elicitation import (
    AnswerRecord,
    KnowledgePool,
    Question,
    random_questions,
    select_batch,
)
from .embedding import EmbeddingModel, embed_all, train
from .experiment import ExperimentConfig, _assign_margin, subseed
from .hierarchy import HierarchyTree, annotate_accuracy, build_hierarchy, dendrogram_purity

SCHEMA_VERSION = 1

PHASES = ("collecting", "training", "ready")


def _write_json_atomic(path: Path, payload: dict) -> None:
    """Write via a sibling temp file, fsync, and rename, so readers never
    observe a torn file and a crash leaves the previous version intact."""
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
    dir_fd = os.open(path.parent, os.O_RDONLY)
    try:
        os.fsync(dir_fd)
    finally:
        os.close(dir_fd)


@dataclass
class _Pending:
    question_id: str
    ids: tuple[int, int, int]
    source: object
    margin: float

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "ids": list(self.ids),
            "source": self.source,
            "margin": self.margin,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "_Pending":
        return cls(raw["question_id"], tuple(raw["ids"]), raw["source"], raw["margin"])


@dataclass
class Session:
    """One responder's elicitation state, mirrored to a directory."""

    session_id: str
    responder: str
    config: ExperimentConfig
    root: Path
    dataset: Dataset
    phase: str = "collecting"
    iteration: int = 0
    next_question_number: int = 0
    pending: list[_Pending] = field(default_factory=list)
    served: dict[str, dict] = field(default_factory=dict)
    pool: KnowledgePool = field(default_factory=KnowledgePool)
    model: EmbeddingModel | None = None
    tree: HierarchyTree | None = None
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def pool_path(self) -> Path:
        return self.root / "pool.jsonl"

    @property
    def meta_path(self) -> Path:
        return self.root / "meta.json"

    @property
    def checkpoint_path(self) -> Path:
        return self.root / "checkpoint.json"

    @property
    def tree_path(self) -> Path:
        return self.root / "tree.json"

    # -- persistence ------------------------------------------------------

    def save_meta(self) -> None:
        _write_json_atomic(
            self.meta_path,
            {
                "schema_version": SCHEMA_VERSION,
                "session_id": self.session_id,
                "responder": self.responder,
                "config": self.config.to_dict(),
                "phase": self.phase,
                "iteration": self.iteration,
                "next_question_number": self.next_question_number,
                "pending": [p.to_dict() for p in self.pending],
                "served": self.served,
            },
        )

    def append_answer(self, record: AnswerRecord) -> None:
        with self.pool_path.open("a", encoding="utf-8") as fh:
            fh.write(record.to_json_line() + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    @classmethod
    def load(cls, root: Path, dataset: Dataset) -> "Session":
        meta = json.loads((root / "meta.json").read_text(encoding="utf-8"))
        session = cls(
            session_id=meta["session_id"],
            responder=meta["responder"],
            config=ExperimentConfig.from_dict(meta["config"]),
            root=root,
            dataset=dataset,
            phase=meta["phase"],
            iteration=meta["iteration"],
            next_question_number=meta["next_question_number"],
            pending=[_Pending.from_dict(p) for p in meta["pending"]],
            served=meta["served"],
        )
        if session.pool_path.exists():
            session.pool = KnowledgePool.load(session.pool_path)
        if session.checkpoint_path.exists():
            session.model = EmbeddingModel.load(session.checkpoint_path)
        if session.tree_path.exists():
            session.tree = HierarchyTree.load(session.tree_path)
        if session.phase == "training":
            # a crash mid-training leaves the pool intact; collect again
            session.phase = "collecting"
            session.save_meta()
        return session

    # -- question flow ----------------------------------------------------

    def _answered_sets(self) -> set[frozenset[int]]:
        answered = set(self.pool.answered_sets(self.responder))
        answered.update(frozenset(entry["ids"]) for entry in self.served.values())
        return answered

    def _refill(self) -> None:
        count = (
            self.config.initial_questions if self.iteration == 0 else self.config.budget
        )
        rng = np.random.default_rng(
            subseed(self.config.seed, 7, self.next_question_number)
        )
        exclude = self._answered_sets()
        if self.tree is None or self.config.selection == "random":
            questions = random_questions(self.dataset.ids(), count, rng, answered=exclude)
        else:
            batch = select_batch(
                self.tree,
                self.pool,
                replace(self.config.selection_config, budget=count),
                rng,
                seed=subseed(self.config.seed, 8, self.iteration),
            )
            questions = [q for q in batch if frozenset(q.ids) not in exclude]
            if len(questions) < count:
                seen = exclude | {frozenset(q.ids) for q in questions}
                questions.extend(
                    random_questions(
                        self.dataset.ids(), count - len(questions), rng, answered=seen
                    )
                )
        for question in questions:
            margin = (
                self.config.train.margin
                if self.tree is None
                else _assign_margin(question, self.tree, self.config)
            )
            self.pending.append(
                _Pending(
                    question_id=f"q{self.next_question_number}",
                    ids=question.ids,
                    source=question.source,
                    margin=margin,
                )
            )
            self.next_question_number += 1

    def next_question(self) -> dict:
        if self.phase == "training":
            raise HTTPException(status_code=409, detail="training in progress")
        if self.phase == "ready":
            self.phase = "collecting"
        if not self.pending:
            self._refill()
        entry = self.pending.pop(0)
        self.served[entry.question_id] = {
            "ids": list(entry.ids),
            "source": entry.source,
            "margin": entry.margin,
            "iteration": self.iteration,
        }
        self.save_meta()
        return {
            "question_id": entry.question_id,
            "items": list(entry.ids),
            "stimuli": [f"/stimuli/{i}" for i in entry.ids],
        }

    def submit_answer(self, question_id: str, chosen: int) -> dict:
        if self.phase == "training":
            raise HTTPException(status_code=409, detail="training in progress")
        entry = self.served.get(question_id)
        if entry is None:
            raise HTTPException(status_code=404, detail="unknown question id")
        ids = tuple(entry["ids"])
        if chosen not in ids:
            raise HTTPException(status_code=422, detail="chosen item not in question")
        existing = self._existing_choice(ids)
        if existing is not None:
            if existing != chosen:
                raise HTTPException(status_code=409, detail="question already answered")
            return {"recorded": False, "duplicate": True, "pool_size": len(self.pool)}
        record = AnswerRecord(
            question=Question.of(*ids, source=entry["source"]),
            chosen=chosen,
            responder=self.responder,
            margin=entry["margin"],
            iteration=entry["iteration"],
        )
        self.pool.add(record)
        self.append_answer(record)
        return {"recorded": True, "duplicate": False, "pool_size": len(self.pool)}

    def _existing_choice(self, ids: tuple[int, int, int]) -> int | None:
        key = frozenset(ids)
        for record in self.pool.records:
            if record.responder == self.responder and frozenset(record.question.ids) == key:
                return record.chosen
        return None

    # -- training ---------------------------------------------------------

    def start_training(self) -> None:
        if self.phase == "training":
            raise HTTPException(status_code=409, detail="training already in progress")
        if len(self.pool) == 0:
            raise HTTPException(status_code=409, detail="no answers to train on")
        self.phase = "training"
        self.save_meta()
        thread = threading.Thread(target=self._train_job, daemon=True)
        thread.start()

    def _train_job(self) -> None:
        config = self.config
        model = self.model
        if model is None or not config.warm_start:
            model = EmbeddingModel.for_features(
                self.dataset.feature_matrix(),
                hidden=config.hidden,
                embed_dim=config.embed_dim,
                seed=subseed(config.seed, 3, self.iteration),
            )
        triplets = [record.to_triplet() for record in self.pool.records]
        train_config = replace(config.train, seed=subseed(config.seed, 1, self.iteration))
        train(model, triplets, self.dataset, train_config)
        embeddings = embed_all(model, self.dataset)
        build_config = replace(config.build, seed=subseed(config.seed, 2, self.iteration))
        tree = build_hierarchy(embeddings, build_config)
        labels = self.dataset.finest_labels()
        if labels:
            annotate_accuracy(tree, labels)
        with self.lock:
            self.model = model
            self.tree = tree
            self.iteration += 1
            model.save(self.checkpoint_path)
            tree.save(self.tree_path)
            self.phase = "ready"
            self.save_meta()

    # -- reads ------------------------------------------------------------

    def progress(self) -> dict:
        payload = {
            "session_id": self.session_id,
            "responder": self.responder,
            "phase": self.phase,
            "iteration": self.iteration,
            "pool_size": len(self.pool),
            "questions_served": len(self.served),
            "pending": len(self.pending),
            "has_tree": self.tree is not None,
        }
        labels = self.dataset.finest_labels()
        if self.tree is not None and labels:
            try:
                payload["purity"] = dendrogram_purity(self.tree, labels)
            except ValueError:
                pass
        return payload


class CreateSessionRequest(BaseModel):
    responder: str = "anonymous"
    config: dict | None = None


class AnswerRequest(BaseModel):
    question_id: str
    chosen: int


def _versioned(payload: dict) -> dict:
    return {"schema_version": SCHEMA_VERSION, **payload}


def create_app(
    dataset: Dataset,
    state_dir: str | Path,
    default_config: ExperimentConfig | None = None,
) -> FastAPI:
    state_root = Path(state_dir)
    sessions_root = state_root / "sessions"
    sessions_root.mkdir(parents=True, exist_ok=True)
    default_config = default_config or ExperimentConfig()

    app = FastAPI(title="hierarchy elicitation service")
    cache: dict[str, Session] = {}
    cache_lock = threading.Lock()

    def get_session(session_id: str) -> Session:
        with cache_lock:
            session = cache.get(session_id)
            if session is None:
                root = sessions_root / session_id
                if not (root / "meta.json").exists():
                    raise HTTPException(status_code=404, detail="unknown session")
                session = Session.load(root, dataset)
                cache[session_id] = session
        return session

    @app.post("/sessions")
    def create_session(request: CreateSessionRequest) -> dict:
        config = default_config
        if request.config:
            merged = default_config.to_dict()
            merged.update(request.config)
            config = ExperimentConfig.from_dict(merged)
        session_id = uuid.uuid4().hex[:12]
        root = sessions_root / session_id
        root.mkdir(parents=True)
        session = Session(
            session_id=session_id,
            responder=request.responder,
            config=config,
            root=root,
            dataset=dataset,
        )
        session.save_meta()
        with cache_lock:
            cache[session_id] = session
        return _versioned(
            {"session_id": session_id, "responder": session.responder, "phase": session.phase}
        )

    @app.get("/sessions/{session_id}/question")
    def next_question(session_id: str) -> dict:
        session = get_session(session_id)
        with session.lock:
            return _versioned(session.next_question())

    @app.post("/sessions/{session_id}/answers")
    def submit_answer(session_id: str, request: AnswerRequest) -> dict:
        session = get_session(session_id)
        with session.lock:
            return _versioned(session.submit_answer(request.question_id, request.chosen))

    @app.post("/sessions/{session_id}/train", status_code=202)
    def trigger_train(session_id: str) -> dict:
        session = get_session(session_id)
        with session.lock:
            session.start_training()
        return _versioned({"phase": "training"})

    @app.get("/sessions/{session_id}/tree")
    def get_tree(session_id: str) -> dict:
        session = get_session(session_id)
        if session.tree is None:
            raise HTTPException(status_code=404, detail="no tree yet; train first")
        return _versioned({"tree": session.tree.to_dict()})

    @app.get("/sessions/{session_id}/progress")
    def get_progress(session_id: str) -> dict:
        session = get_session(session_id)
        return _versioned(session.progress())

    @app.get("/stimuli/{item_id}")
    def get_stimulus(item_id: int) -> Response:
        try:
            item = dataset.by_id(item_id)
        except DatasetError:
            raise HTTPException(status_code=404, detail="unknown item")
        return Response(content=render_stimulus(item), media_type="image/svg+xml")

    return app
