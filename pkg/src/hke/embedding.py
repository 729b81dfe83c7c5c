"""The embedding network, its doubled triplet objective, and plain SGD training.

The network is a fully connected stack with rectified hidden layers and an
identity output layer. Inputs are standardized with a shift and scale stored
inside the model so that checkpoints are self-contained. Gradients are derived
by hand; the hinge contributes zero gradient exactly at its kink.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Dataset

CHECKPOINT_VERSION = 1

# Cap on the mean squared standardized input norm; see for_features.
MAX_MEAN_SQ_NORM = 32.0


class TrainingError(RuntimeError):
    """Raised when training cannot proceed or diverges."""


@dataclass(frozen=True)
class AnsweredTriplet:
    """One recorded judgment: p1 and p2 belong together, n is the odd one out.

    The margin is fixed when the question is answered and never recomputed,
    so later retraining replays the same objective for old judgments.
    """

    p1: int
    p2: int
    n: int
    margin: float

    def __post_init__(self) -> None:
        if len({self.p1, self.p2, self.n}) != 3:
            raise ValueError(f"triplet ids must be distinct: {self.p1}, {self.p2}, {self.n}")
        if not self.margin > 0:
            raise ValueError(f"margin must be positive, got {self.margin}")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0
    momentum: float = 0.9
    margin: float = 0.4
    margin_base: float = 0.2
    margin_gain: float = 0.3

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if not (self.margin > 0 and self.margin_base > 0):
            raise ValueError("margins must be > 0")
        if self.margin_gain < 0:
            raise ValueError("margin_gain must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")


class EmbeddingModel:
    """Fully connected embedding network f(x) with explicit parameters.

    ``widths`` runs from the input dimension through hidden widths to the
    embedding dimension. Weight matrix l has shape (widths[l], widths[l+1]).
    """

    def __init__(
        self,
        widths: Sequence[int],
        weights: list[np.ndarray],
        biases: list[np.ndarray],
        input_shift: np.ndarray | None = None,
        input_scale: np.ndarray | None = None,
    ):
        self.widths = list(int(w) for w in widths)
        if len(self.widths) < 2:
            raise ValueError("model needs at least an input and an output width")
        if self.widths[-1] < 2:
            raise ValueError("embedding dimension must be >= 2")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        expected = list(zip(self.widths[:-1], self.widths[1:]))
        got = [w.shape for w in self.weights]
        if got != expected:
            raise ValueError(f"weight shapes {got} do not match widths {self.widths}")
        for i, b in enumerate(self.biases):
            if b.shape != (self.widths[i + 1],):
                raise ValueError(f"bias {i} has shape {b.shape}, expected ({self.widths[i + 1]},)")
        dim = self.widths[0]
        self.input_shift = (
            np.zeros(dim) if input_shift is None else np.asarray(input_shift, dtype=np.float64)
        )
        self.input_scale = (
            np.ones(dim) if input_scale is None else np.asarray(input_scale, dtype=np.float64)
        )
        if self.input_shift.shape != (dim,) or self.input_scale.shape != (dim,):
            raise ValueError("input_shift/input_scale must match the input dimension")
        for arr in (*self.weights, *self.biases, self.input_shift, self.input_scale):
            if not np.all(np.isfinite(arr)):
                raise ValueError("model parameters must be finite")

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def embed_dim(self) -> int:
        return self.widths[-1]

    @classmethod
    def init(
        cls,
        widths: Sequence[int],
        seed: int,
        input_shift: np.ndarray | None = None,
        input_scale: np.ndarray | None = None,
    ) -> "EmbeddingModel":
        """Seeded random initialization: He-scaled hidden layers, small output.

        The output layer starts at a tenth of the usual scale so that initial
        pairwise distances sit below typical margins.  Squared-distance hinge
        gradients grow with the embedding spread, so starting small keeps
        fixed-step training stable while the spread grows toward the margin.
        """
        rng = np.random.default_rng(seed)
        widths = list(widths)
        weights, biases = [], []
        last = len(widths) - 2
        for l, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            scale = 0.1 * np.sqrt(1.0 / fan_in) if l == last else np.sqrt(2.0 / fan_in)
            weights.append(rng.standard_normal((fan_in, fan_out)) * scale)
            biases.append(np.zeros(fan_out))
        return cls(widths, weights, biases, input_shift, input_scale)

    @classmethod
    def for_features(
        cls,
        features: np.ndarray,
        hidden: Sequence[int],
        embed_dim: int,
        seed: int,
    ) -> "EmbeddingModel":
        """Initialize for a feature matrix, with standardization baked in.

        Per-dimension shift is the mean, scale the standard deviation; nearly
        constant dimensions keep scale 1 so they pass through untouched.
        Wide inputs get one extra global factor capping the mean squared
        standardized row norm at ``MAX_MEAN_SQ_NORM``: first-layer gradient
        magnitude grows with that norm, and the fixed training step diverges
        on inputs with thousands of informative dimensions otherwise.
        """
        features = np.asarray(features, dtype=np.float64)
        shift = features.mean(axis=0)
        std = features.std(axis=0)
        live = std > 1e-8
        scale = np.where(live, std, 1.0)
        # After standardization the mean squared row norm equals the number
        # of live dimensions; shrink only, so narrow inputs are untouched.
        mean_sq_norm = float(live.sum())
        if mean_sq_norm > MAX_MEAN_SQ_NORM:
            scale = scale * np.sqrt(mean_sq_norm / MAX_MEAN_SQ_NORM)
        widths = [features.shape[1], *hidden, embed_dim]
        return cls.init(widths, seed, input_shift=shift, input_scale=scale)

    def clone(self) -> "EmbeddingModel":
        return EmbeddingModel(
            self.widths,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.input_shift.copy(),
            self.input_scale.copy(),
        )

    def _forward_cached(self, x: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Forward pass keeping layer inputs and pre-activations for backprop."""
        acts = [(x - self.input_shift) / self.input_scale]
        pres: list[np.ndarray] = []
        out = len(self.weights) - 1
        h = acts[0]
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pres.append(z)
            h = z if l == out else np.maximum(z, 0.0)
            acts.append(h)
        return acts, pres

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Embed a batch (n, input_dim) -> (n, embed_dim); a single vector stays 1-D."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.input_dim:
            raise ValueError(f"expected input dim {self.input_dim}, got {x.shape[1]}")
        acts, _ = self._forward_cached(x)
        return acts[-1][0] if single else acts[-1]

    def save(self, path: str | Path) -> None:
        payload = {
            "version": CHECKPOINT_VERSION,
            "widths": self.widths,
            "weights": [w.reshape(-1).tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "input_shift": self.input_shift.tolist(),
            "input_scale": self.input_scale.tolist(),
        }
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingModel":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if data.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {data.get('version')!r}")
        widths = data["widths"]
        weights = [
            np.array(flat, dtype=np.float64).reshape(fan_in, fan_out)
            for flat, fan_in, fan_out in zip(data["weights"], widths[:-1], widths[1:])
        ]
        biases = [np.array(b, dtype=np.float64) for b in data["biases"]]
        return cls(widths, weights, biases, data["input_shift"], data["input_scale"])


# ---------------------------------------------------------------------------
# Losses and margins
# ---------------------------------------------------------------------------


def _sqdist(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"embedding shapes differ: {a.shape} vs {b.shape}")
    return float(((a - b) ** 2).sum())


def triplet_loss(e_a, e_p, e_n, margin: float) -> float:
    """Hinge on the anchor-positive vs anchor-negative squared-distance gap."""
    return max(0.0, _sqdist(e_a, e_p) - _sqdist(e_a, e_n) + margin)


def dual_triplet_loss(e_p1, e_p2, e_n, margin: float) -> float:
    """Both orderings of the pair act as anchor; symmetric in p1 and p2."""
    d12 = _sqdist(e_p1, e_p2)
    t1 = d12 - _sqdist(e_n, e_p1) + margin
    t2 = d12 - _sqdist(e_n, e_p2) + margin
    return max(0.0, t1) + max(0.0, t2)


def adaptive_margin(base: float, gain: float, diversity: float) -> float:
    """Margin grows with the diversity of the node a question was drawn from."""
    if not base > 0:
        raise ValueError("base margin must be > 0")
    if gain < 0 or diversity < 0:
        raise ValueError("gain and diversity must be >= 0")
    return base + gain * diversity


# ---------------------------------------------------------------------------
# Gradients and training
# ---------------------------------------------------------------------------


def batch_loss_and_grads(
    model: EmbeddingModel,
    x_p1: np.ndarray,
    x_p2: np.ndarray,
    x_n: np.ndarray,
    margins: np.ndarray,
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean dual-triplet loss over a batch and its parameter gradients.

    The three roles share one forward pass; inactive hinges (argument <= 0,
    including exactly 0) contribute nothing to the gradient.
    """
    b = x_p1.shape[0]
    acts, pres = model._forward_cached(np.vstack([x_p1, x_p2, x_n]))
    emb = acts[-1]
    e1, e2, en = emb[:b], emb[b : 2 * b], emb[2 * b :]

    d12 = ((e1 - e2) ** 2).sum(axis=1)
    dn1 = ((en - e1) ** 2).sum(axis=1)
    dn2 = ((en - e2) ** 2).sum(axis=1)
    t1 = d12 - dn1 + margins
    t2 = d12 - dn2 + margins
    loss = float((np.maximum(t1, 0.0) + np.maximum(t2, 0.0)).mean())

    m1 = (t1 > 0.0).astype(np.float64)[:, None]
    m2 = (t2 > 0.0).astype(np.float64)[:, None]
    g1 = 2.0 * (m1 * (en - e2) + m2 * (e1 - e2)) / b
    g2 = 2.0 * (m2 * (en - e1) - m1 * (e1 - e2)) / b
    gn = -2.0 * (m1 * (en - e1) + m2 * (en - e2)) / b

    grad = np.vstack([g1, g2, gn])
    n_layers = len(model.weights)
    grads_w: list[np.ndarray] = [np.empty(0)] * n_layers
    grads_b: list[np.ndarray] = [np.empty(0)] * n_layers
    for l in reversed(range(n_layers)):
        grads_w[l] = acts[l].T @ grad
        grads_b[l] = grad.sum(axis=0)
        if l > 0:
            grad = (grad @ model.weights[l].T) * (pres[l - 1] > 0.0)
    return loss, grads_w, grads_b


def train(
    model: EmbeddingModel,
    answered: Sequence[AnsweredTriplet],
    dataset: Dataset,
    config: TrainConfig,
) -> list[float]:
    """Mini-batch SGD with momentum on the dual-triplet objective.

    Mutates the model in place and returns the per-epoch mean loss, measured
    before each batch update. Deterministic for a given config seed.
    """
    if not answered:
        raise TrainingError("no answered triplets to train on")
    row = {item_id: i for i, item_id in enumerate(dataset.ids())}
    try:
        idx = np.array([[row[t.p1], row[t.p2], row[t.n]] for t in answered])
    except KeyError as exc:
        raise TrainingError(f"triplet references unknown item id {exc.args[0]}") from None
    margins = np.array([t.margin for t in answered], dtype=np.float64)
    feats = dataset.feature_matrix()

    rng = np.random.default_rng(config.seed)
    vel_w = [np.zeros_like(w) for w in model.weights]
    vel_b = [np.zeros_like(b) for b in model.biases]
    trace: list[float] = []
    n = len(answered)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            loss, grads_w, grads_b = batch_loss_and_grads(
                model,
                feats[idx[batch, 0]],
                feats[idx[batch, 1]],
                feats[idx[batch, 2]],
                margins[batch],
            )
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss {loss} at epoch {epoch}, batch offset {start} "
                    f"(learning_rate={config.learning_rate})"
                )
            total += loss * len(batch)
            for l in range(len(model.weights)):
                vel_w[l] = config.momentum * vel_w[l] + grads_w[l]
                vel_b[l] = config.momentum * vel_b[l] + grads_b[l]
                model.weights[l] -= config.learning_rate * vel_w[l]
                model.biases[l] -= config.learning_rate * vel_b[l]
        trace.append(total / n)
    return trace


def embed_all(model: EmbeddingModel, dataset: Dataset) -> dict[int, np.ndarray]:
    """Embeddings for every item, keyed by item id."""
    emb = model.forward(dataset.feature_matrix())
    return {item_id: emb[i] for i, item_id in enumerate(dataset.ids())}
