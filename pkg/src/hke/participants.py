"""Simulated responders that answer odd-one-out questions from a latent tree.

A participant judges similarity by how deep in its latent hierarchy two items'
leaves share an ancestor: the deepest-related pair are the positives, and the
remaining item is the answer. Ties are resolved uniformly at random from the
participant's own rng, and an optional noise rate flips answers.
"""

from __future__ import annotations

import numpy as np

from .dataset import Dataset, LatentHierarchy, leaf, tree
from .elicitation import Question

CIFAR_CLASSES = (
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
)

ANIMALS = ("bird", "cat", "deer", "dog", "frog", "horse")
TRANSPORT = ("airplane", "automobile", "ship", "truck")


class VirtualParticipant:
    """Answers 3AFC questions by lowest-common-ancestor depth in a latent tree."""

    def __init__(
        self,
        name: str,
        latent: LatentHierarchy,
        dataset: Dataset,
        noise: float = 0.0,
        seed: int = 0,
    ):
        if not 0.0 <= noise < 1.0:
            raise ValueError("noise must lie in [0, 1)")
        self.name = name
        self.latent = latent
        self.noise = noise
        self._rng = np.random.default_rng(seed)
        self._paths = latent.assign_items(dataset)

    def similarity(self, x: int, y: int) -> int:
        """Depth of the lowest common ancestor of two items' leaves; root is 0."""
        px, py = self._paths[x], self._paths[y]
        depth = -1
        for a, b in zip(px, py):
            if a != b:
                break
            depth += 1
        return depth

    def answer(self, question: Question) -> int:
        """The odd one out: the item left over by the most similar pair."""
        i0, i1, i2 = question.ids
        candidates = [
            (self.similarity(i0, i1), i2),
            (self.similarity(i0, i2), i1),
            (self.similarity(i1, i2), i0),
        ]
        best = max(sim for sim, _ in candidates)
        odd_ones = sorted(item for sim, item in candidates if sim == best)
        if len(odd_ones) == 1:
            chosen = odd_ones[0]
        else:
            chosen = int(self._rng.choice(odd_ones))
        if self.noise > 0.0 and self._rng.random() < self.noise:
            others = [i for i in question.ids if i != chosen]
            chosen = int(self._rng.choice(others))
        return chosen

    def leaf_labels(self) -> dict[int, str]:
        """Ground-truth label per item: the item's full latent leaf path."""
        index_names = {}

        def walk(node, trail):
            index_names[self.latent.node_index(node)] = trail
            for child in node.children:
                walk(child, trail + (child.name,))

        walk(self.latent.root, ())
        return {
            item_id: "/".join(index_names[path[-1]])
            for item_id, path in self._paths.items()
        }


def virtual_answer(participant: VirtualParticipant, question: Question) -> int:
    return participant.answer(question)


def cifar_class_tree() -> LatentHierarchy:
    """The 10-class tree used to generate blob datasets: animals vs transport."""
    return LatentHierarchy(
        tree(
            "objects",
            tree("animal", *(leaf(c) for c in ANIMALS)),
            tree("transportation", *(leaf(c) for c in TRANSPORT)),
        )
    )


def _participant_tree(groups: dict[str, tuple[str, ...]]) -> LatentHierarchy:
    """An animals-vs-transportation tree with named subgroups under animal."""
    animal_children = [
        tree(group_name, *(leaf(c) for c in classes))
        for group_name, classes in groups.items()
    ]
    return LatentHierarchy(
        tree(
            "objects",
            tree("animal", *animal_children),
            tree("transportation", *(leaf(c) for c in TRANSPORT)),
        )
    )


PARTICIPANT_GROUPS: dict[str, dict[str, tuple[str, ...]]] = {
    "participant1": {
        "small_animal": ("bird", "cat", "dog", "frog"),
        "big_animal": ("deer", "horse"),
    },
    "participant2": {
        "mammal": ("cat", "deer", "dog", "horse"),
        "non_mammal": ("bird", "frog"),
    },
    "participant3": {
        "pet": ("bird", "cat", "dog"),
        "non_pet": ("deer", "frog", "horse"),
    },
}


def make_paper_participants(
    dataset: Dataset, noise: float = 0.0, seed: int = 0
) -> list[VirtualParticipant]:
    """Three responders sharing leaf classes and the animal/transportation
    split but disagreeing on how the animals group."""
    labels = set(dataset.finest_labels().values())
    missing = set(CIFAR_CLASSES) - labels
    if missing:
        raise ValueError(f"dataset lacks classes: {sorted(missing)}")
    return [
        VirtualParticipant(
            name,
            _participant_tree(groups),
            dataset,
            noise=noise,
            seed=_participant_seed(seed, i),
        )
        for i, (name, groups) in enumerate(PARTICIPANT_GROUPS.items())
    ]


def _participant_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence((seed, index)).generate_state(1)[0])
