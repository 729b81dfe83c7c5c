"""Divisive clustering of embeddings into a concept tree, and tree quality metrics.

The tree is grown top-down: each node is split by k-means at the k that
maximizes the silhouette, gated by node size, depth, and a minimum silhouette
so degenerate splits become leaves instead. Everything is deterministic for a
given seed, including k-means restarts and tie-breaks.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


@dataclass
class BuildConfig:
    min_split_size: int = 8
    max_depth: int = 6
    k_min: int = 2
    k_max: int = 5
    min_silhouette: float = 0.15
    restarts: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k_min < 2 or self.k_max < self.k_min:
            raise ValueError("need 2 <= k_min <= k_max")
        if self.min_split_size < 2 or self.max_depth < 1 or self.restarts < 1:
            raise ValueError("min_split_size >= 2, max_depth >= 1, restarts >= 1")


@dataclass
class HierarchyNode:
    """A cluster in the tree; members of the children partition the parent's."""

    id: int
    members: tuple[int, ...]
    centroid: np.ndarray
    diversity: float = 0.0
    children: list["HierarchyNode"] = field(default_factory=list)
    majority_label: str | None = None
    accuracy: float | None = None

    @property
    def is_leaf(self) -> bool:
        return not self.children


class HierarchyTree:
    """The clustering result plus the embedding snapshot it was built from."""

    def __init__(self, root: HierarchyNode, embeddings: Mapping[int, np.ndarray]):
        self.root = root
        self.embeddings = dict(embeddings)
        self._nodes: list[HierarchyNode] = []
        self._leaf_of: dict[int, int] = {}

        def walk(node: HierarchyNode) -> None:
            self._nodes.append(node)
            if node.is_leaf:
                for item_id in node.members:
                    self._leaf_of[item_id] = node.id
            for child in node.children:
                walk(child)

        walk(root)
        self._by_id = {n.id: n for n in self._nodes}
        self.validate_partition()

    def nodes(self) -> list[HierarchyNode]:
        """All nodes in preorder."""
        return list(self._nodes)

    def node(self, node_id: int) -> HierarchyNode:
        return self._by_id[node_id]

    def leaves(self) -> list[HierarchyNode]:
        return [n for n in self._nodes if n.is_leaf]

    def leaf_of(self, item_id: int) -> int:
        """The id of the leaf containing an item."""
        return self._leaf_of[item_id]

    def depth(self) -> int:
        def walk(node: HierarchyNode) -> int:
            return 0 if node.is_leaf else 1 + max(walk(c) for c in node.children)

        return walk(self.root)

    def validate_partition(self) -> None:
        """Every node's children must exactly partition its member set."""
        for node in self._nodes:
            if node.is_leaf:
                continue
            combined: list[int] = []
            for child in node.children:
                combined.extend(child.members)
            if sorted(combined) != sorted(node.members) or len(combined) != len(
                set(combined)
            ):
                raise ValueError(f"node {node.id}: children do not partition members")
        leaf_items = [i for n in self.leaves() for i in n.members]
        if sorted(leaf_items) != sorted(self.root.members):
            raise ValueError("leaves do not partition the item set")

    def to_dict(self) -> dict:
        def walk(node: HierarchyNode) -> dict:
            return {
                "id": node.id,
                "members": sorted(node.members),
                "centroid": [float(v) for v in node.centroid],
                "d_H": node.diversity,
                "majority_label": node.majority_label,
                "accuracy": node.accuracy,
                "children": [walk(c) for c in node.children],
            }

        return walk(self.root)

    @classmethod
    def from_dict(
        cls, data: Mapping, embeddings: Mapping[int, np.ndarray] | None = None
    ) -> "HierarchyTree":
        def walk(entry: Mapping) -> HierarchyNode:
            return HierarchyNode(
                id=int(entry["id"]),
                members=tuple(entry["members"]),
                centroid=np.asarray(entry["centroid"], dtype=np.float64),
                diversity=float(entry["d_H"]),
                children=[walk(c) for c in entry.get("children", [])],
                majority_label=entry.get("majority_label"),
                accuracy=entry.get("accuracy"),
            )

        return cls(walk(data), embeddings or {})

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    @classmethod
    def load(
        cls, path: str | Path, embeddings: Mapping[int, np.ndarray] | None = None
    ) -> "HierarchyTree":
        return cls.from_dict(
            json.loads(Path(path).read_text(encoding="utf-8")), embeddings
        )

    def assignments_csv(self) -> str:
        """Flat (item id, leaf id, node path) table for spreadsheets."""
        parents = {self.root.id: None}
        for node in self._nodes:
            for child in node.children:
                parents[child.id] = node.id
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["item_id", "leaf_id", "path"])
        for item_id in sorted(self.root.members):
            leaf_id = self._leaf_of[item_id]
            chain: list[int] = []
            cursor: int | None = leaf_id
            while cursor is not None:
                chain.append(cursor)
                cursor = parents[cursor]
            writer.writerow(
                [item_id, leaf_id, "/".join(str(n) for n in reversed(chain))]
            )
        return buf.getvalue()


# ---------------------------------------------------------------------------
# K-means and silhouette
# ---------------------------------------------------------------------------


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _seed_centroids(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Spread-out seeding: each next centroid is drawn with probability
    proportional to squared distance from the nearest already-chosen one."""
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        chosen.append(idx)
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(axis=1))
    return points[chosen].copy()


def _lloyd(
    points: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = 100
) -> tuple[np.ndarray, np.ndarray, float]:
    n = points.shape[0]
    centroids = _seed_centroids(points, k, rng)
    assignment = np.full(n, -1)
    for _ in range(max_iter):
        dists = _sq_dists(points, centroids)
        new_assignment = dists.argmin(axis=1)
        for j in range(k):
            if not (new_assignment == j).any():
                # steal the point farthest from its centroid, but never empty
                # another cluster doing so
                counts = np.bincount(new_assignment, minlength=k)
                current = dists[np.arange(n), new_assignment]
                eligible = counts[new_assignment] > 1
                far = int(np.where(eligible, current, -1.0).argmax())
                new_assignment[far] = j
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        for j in range(k):
            centroids[j] = points[assignment == j].mean(axis=0)
    inertia = float(
        ((points - centroids[assignment]) ** 2).sum()
    )
    return assignment, centroids, inertia


def kmeans(
    points: np.ndarray, k: int, seed: int, restarts: int = 10
) -> tuple[np.ndarray, np.ndarray]:
    """Best-of-restarts Lloyd's algorithm; strictly lower inertia wins, so the
    earliest restart takes ties and results are deterministic per seed."""
    points = np.asarray(points, dtype=np.float64)
    if k < 2:
        raise ValueError("k must be >= 2")
    if points.shape[0] < k:
        raise ValueError(f"cannot form {k} clusters from {points.shape[0]} points")
    best: tuple[np.ndarray, np.ndarray, float] | None = None
    for r in range(restarts):
        rng = np.random.default_rng((seed, r))
        result = _lloyd(points, k, rng)
        if best is None or result[2] < best[2]:
            best = result
    return best[0], best[1]


def silhouette(points: np.ndarray, assignment: np.ndarray) -> float:
    """Mean silhouette coefficient under Euclidean distance.

    Points in singleton clusters score 0, as does the 0/0 case of coincident
    points.
    """
    points = np.asarray(points, dtype=np.float64)
    assignment = np.asarray(assignment)
    labels = np.unique(assignment)
    if labels.size < 2:
        raise ValueError("silhouette needs at least 2 clusters")
    dists = np.sqrt(np.maximum(_sq_dists(points, points), 0.0))
    onehot = (assignment[:, None] == labels[None, :]).astype(np.float64)
    counts = onehot.sum(axis=0)
    sums = dists @ onehot
    rows = np.arange(points.shape[0])
    own = np.searchsorted(labels, assignment)
    own_counts = counts[own]
    a = sums[rows, own] / np.maximum(own_counts - 1, 1)
    means = sums / counts[None, :]
    means[rows, own] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    safe = np.where(denom == 0.0, 1.0, denom)
    scores = np.where((own_counts > 1) & (denom > 0.0), (b - a) / safe, 0.0)
    return float(scores.mean())


def _best_split(
    points: np.ndarray, config: BuildConfig, seed: int
) -> tuple[int, float, np.ndarray]:
    """The (k, silhouette, assignment) maximizing silhouette; smaller k wins ties."""
    best_k, best_score, best_assignment = 0, -np.inf, np.empty(0)
    upper = min(config.k_max, points.shape[0])
    for k in range(config.k_min, upper + 1):
        assignment, _ = kmeans(points, k, seed, restarts=config.restarts)
        score = silhouette(points, assignment)
        if score > best_score:
            best_k, best_score, best_assignment = k, score, assignment
    return best_k, best_score, best_assignment


def choose_k(points: np.ndarray, k_min: int, k_max: int, seed: int) -> int:
    """The cluster count in [k_min, k_max] with the best silhouette."""
    config = BuildConfig(k_min=k_min, k_max=k_max, seed=seed)
    k, _, _ = _best_split(np.asarray(points, dtype=np.float64), config, seed)
    if k == 0:
        raise ValueError("no viable split in the given range")
    return k


def diversity_factor(node_or_centroids: HierarchyNode | Sequence) -> float:
    """Mean squared distance over ordered distinct centroid pairs; 0 below 2."""
    if isinstance(node_or_centroids, HierarchyNode):
        centroids = [c.centroid for c in node_or_centroids.children]
    else:
        centroids = list(node_or_centroids)
    n = len(centroids)
    if n < 2:
        return 0.0
    c = np.asarray(centroids, dtype=np.float64)
    total = float(_sq_dists(c, c).sum())
    return total / (n * n - n)


def build_hierarchy(
    embeddings: Mapping[int, np.ndarray], config: BuildConfig | None = None
) -> HierarchyTree:
    """Grow the tree top-down by repeated k-means splits.

    A node splits only if it has at least ``min_split_size`` members, sits
    above ``max_depth``, and the best silhouette reaches ``min_silhouette``.
    Node ids are assigned in preorder.
    """
    config = config or BuildConfig()
    if len(embeddings) < 2:
        raise ValueError("need at least 2 embedded items")
    ids = np.array(sorted(embeddings))
    matrix = np.stack([np.asarray(embeddings[i], dtype=np.float64) for i in ids])

    counter = 0

    def grow(item_rows: np.ndarray, depth: int) -> HierarchyNode:
        nonlocal counter
        node_id = counter
        counter += 1
        members = tuple(int(i) for i in ids[item_rows])
        points = matrix[item_rows]
        node = HierarchyNode(node_id, members, points.mean(axis=0))
        if len(members) < config.min_split_size or depth >= config.max_depth:
            return node
        k, score, assignment = _best_split(
            points, config, seed=_subseed(config.seed, node_id)
        )
        if score < config.min_silhouette:
            return node
        for j in range(k):
            node.children.append(grow(item_rows[assignment == j], depth + 1))
        node.diversity = diversity_factor(node)
        return node

    root = grow(np.arange(len(ids)), 0)
    return HierarchyTree(root, embeddings)


def _subseed(seed: int, node_id: int) -> int:
    return int(np.random.SeedSequence((seed, node_id)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def node_accuracy(node: HierarchyNode, labels: Mapping[int, str]) -> tuple[float, str]:
    """Share of members carrying the majority label; label ties break
    lexicographically."""
    if not node.members:
        raise ValueError("node has no members")
    counts: dict[str, int] = {}
    for item_id in node.members:
        label = labels[item_id]
        counts[label] = counts.get(label, 0) + 1
    majority = min(counts, key=lambda lbl: (-counts[lbl], lbl))
    return counts[majority] / len(node.members), majority


def annotate_accuracy(tree: HierarchyTree, labels: Mapping[int, str]) -> None:
    """Fill majority_label and accuracy on every node of the tree."""
    for node in tree.nodes():
        node.accuracy, node.majority_label = node_accuracy(node, labels)


def dendrogram_purity(tree: HierarchyTree, labels: Mapping[int, str]) -> float:
    """Mean purity of the smallest node joining each same-label pair, exactly.

    Accumulated in exact rational arithmetic: a pair first joined at node v
    contributes (members of v sharing the label)/(size of v), and the number
    of pairs joined at v is the pair count of v minus its children's.
    """
    label_totals: dict[str, int] = {}
    for item_id in tree.root.members:
        label = labels[item_id]
        label_totals[label] = label_totals.get(label, 0) + 1
    total_pairs = sum(t * (t - 1) // 2 for t in label_totals.values())
    if total_pairs == 0:
        raise ValueError("no same-label pair to score")

    def count(node: HierarchyNode) -> dict[str, int]:
        counts: dict[str, int] = {}
        for item_id in node.members:
            label = labels[item_id]
            counts[label] = counts.get(label, 0) + 1
        return counts

    acc = Fraction(0)
    for node in tree.nodes():
        counts = count(node)
        child_counts = [count(c) for c in node.children]
        size = len(node.members)
        for label, cnt in counts.items():
            pairs_here = cnt * (cnt - 1) // 2 - sum(
                cc.get(label, 0) * (cc.get(label, 0) - 1) // 2 for cc in child_counts
            )
            if pairs_here:
                acc += Fraction(pairs_here) * Fraction(cnt, size)
    return float(acc / total_pairs)
