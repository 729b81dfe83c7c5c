"""Datasets, synthetic stimuli, latent ground-truth hierarchies, and their file formats.

A dataset is a flat list of items with fixed-length feature vectors. Items may
carry an ordered ``label_path`` (coarsest to finest concept) used as ground
truth by simulated responders and by the evaluation metrics, and a renderable
stimulus descriptor used by the annotation UI.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

RASTER_SIZE = 32

SHAPES = ("circle", "rectangle", "triangle")
DEFORMATIONS = ("none", "vstretch", "hstretch")
THICKNESSES = {"thin": 1.2, "medium": 2.4, "thick": 4.0}
COLORS = {
    "red": (220, 50, 47),
    "green": (64, 160, 70),
    "blue": (38, 80, 210),
    "orange": (235, 150, 30),
    "purple": (150, 60, 200),
}
STRETCH = 1.4


class DatasetError(ValueError):
    """Raised for malformed datasets, rows, or hierarchy files."""


@dataclass(frozen=True)
class StimulusSpec:
    """Renderable description of an item: a synthetic shape or an image reference."""

    kind: str
    deformation: str = "none"
    color: str = "red"
    thickness: str = "medium"
    ref: str | None = None

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "deformation": self.deformation,
            "color": self.color,
            "thickness": self.thickness,
        }
        if self.ref is not None:
            d["ref"] = self.ref
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "StimulusSpec":
        return cls(
            kind=d["kind"],
            deformation=d.get("deformation", "none"),
            color=d.get("color", "red"),
            thickness=d.get("thickness", "medium"),
            ref=d.get("ref"),
        )


@dataclass
class Item:
    """One datapoint: integer id, feature vector, optional ground truth and stimulus."""

    id: int
    features: np.ndarray
    label_path: tuple[str, ...] | None = None
    stimulus: StimulusSpec | None = None

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.label_path is not None:
            self.label_path = tuple(self.label_path)
            if not self.label_path:
                raise DatasetError(f"item {self.id}: empty label_path")


@dataclass
class Dataset:
    """An immutable collection of items with a shared feature dimension."""

    name: str
    dim: int
    items: list[Item]

    def __post_init__(self) -> None:
        if len(self.items) < 3:
            raise DatasetError("dataset needs at least 3 items for a ternary question")
        seen: set[int] = set()
        for item in self.items:
            if item.id in seen:
                raise DatasetError(f"duplicate item id {item.id}")
            seen.add(item.id)
            if item.features.shape != (self.dim,):
                raise DatasetError(
                    f"item {item.id}: expected {self.dim} features, got {item.features.shape}"
                )
            if not np.all(np.isfinite(item.features)):
                raise DatasetError(f"item {item.id}: non-finite feature values")
        _check_label_order(self.items)
        self._by_id = {item.id: item for item in self.items}

    def __len__(self) -> int:
        return len(self.items)

    def ids(self) -> list[int]:
        return [item.id for item in self.items]

    def by_id(self, item_id: int) -> Item:
        try:
            return self._by_id[item_id]
        except KeyError:
            raise DatasetError(f"unknown item id {item_id}") from None

    def feature_matrix(self) -> np.ndarray:
        """Features stacked in item order, shape (len(self), dim)."""
        return np.stack([item.features for item in self.items])

    def finest_labels(self) -> dict[int, str]:
        """Map item id to the last label_path entry, for labeled items only."""
        return {
            item.id: item.label_path[-1]
            for item in self.items
            if item.label_path is not None
        }


def _check_label_order(items: Iterable[Item]) -> None:
    """Reject label paths whose concept ordering is inconsistent across items.

    The label paths of a dataset must admit a single coarse-to-fine ordering:
    if any item lists concept A above concept B, no item may list B above A.
    """
    above: dict[tuple[str, str], int] = {}
    for item in items:
        if item.label_path is None:
            continue
        path = item.label_path
        for i in range(len(path)):
            for j in range(i + 1, len(path)):
                pair = (path[i], path[j])
                flipped = (path[j], path[i])
                if flipped in above:
                    raise DatasetError(
                        f"item {item.id}: '{path[i]}' listed above '{path[j]}' "
                        f"but item {above[flipped]} orders them the other way"
                    )
                above.setdefault(pair, item.id)


# ---------------------------------------------------------------------------
# Latent ground-truth hierarchies
# ---------------------------------------------------------------------------


@dataclass
class LatentNode:
    name: str
    children: list["LatentNode"] = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return not self.children


class LatentHierarchy:
    """A named rooted tree whose leaves anchor dataset items via label paths."""

    def __init__(self, root: LatentNode):
        self.root = root
        self._index: dict[int, int] = {}
        self._leaf_names: dict[int, frozenset[str]] = {}
        self._assign_indices()
        if self.depth() < 1:
            raise DatasetError("latent hierarchy must have depth >= 1")

    def _assign_indices(self) -> None:
        counter = 0
        stack = [self.root]
        order: list[LatentNode] = []
        while stack:
            node = stack.pop()
            self._index[id(node)] = counter
            counter += 1
            order.append(node)
            stack.extend(reversed(node.children))
        for node in reversed(order):
            if node.is_leaf:
                self._leaf_names[id(node)] = frozenset([node.name])
            else:
                self._leaf_names[id(node)] = frozenset().union(
                    *(self._leaf_names[id(c)] for c in node.children)
                )

    def depth(self) -> int:
        def walk(node: LatentNode) -> int:
            if node.is_leaf:
                return 0
            return 1 + max(walk(c) for c in node.children)

        return walk(self.root)

    def node_index(self, node: LatentNode) -> int:
        return self._index[id(node)]

    def leaves(self) -> list[LatentNode]:
        out: list[LatentNode] = []

        def walk(node: LatentNode) -> None:
            if node.is_leaf:
                out.append(node)
            for c in node.children:
                walk(c)

        walk(self.root)
        return out

    def resolve(self, label_path: Sequence[str]) -> list[LatentNode]:
        """Walk from the root to the leaf an item with this label path belongs to.

        At each step the child is picked by name match against the label path;
        when no child name appears in the path, the unique child whose subtree
        contains a leaf named in the path is taken instead.
        """
        wanted = set(label_path)
        node = self.root
        path = [node]
        while not node.is_leaf:
            named = [c for c in node.children if c.name in wanted]
            if len(named) == 1:
                node = named[0]
            elif len(named) > 1:
                raise DatasetError(
                    f"label path {'/'.join(label_path)} is ambiguous under "
                    f"'{node.name}': {[c.name for c in named]}"
                )
            else:
                hits = [
                    c
                    for c in node.children
                    if self._leaf_names[id(c)] & wanted
                ]
                if len(hits) != 1:
                    raise DatasetError(
                        f"label path {'/'.join(label_path)} cannot be placed under "
                        f"'{node.name}'"
                    )
                node = hits[0]
            path.append(node)
        return path

    def assign_items(self, dataset: Dataset) -> dict[int, tuple[int, ...]]:
        """Map every item id to its root-to-leaf path of node indices.

        Every item must carry a label path resolvable to exactly one leaf.
        """
        out: dict[int, tuple[int, ...]] = {}
        for item in dataset.items:
            if item.label_path is None:
                raise DatasetError(f"item {item.id} has no label_path to resolve")
            nodes = self.resolve(item.label_path)
            out[item.id] = tuple(self.node_index(n) for n in nodes)
        return out

    def leaf_label(self, label_path: Sequence[str]) -> str:
        """Canonical label for the leaf an item resolves to (root excluded)."""
        nodes = self.resolve(label_path)
        return "/".join(n.name for n in nodes[1:])

    def to_dict(self) -> dict:
        def walk(node: LatentNode) -> dict:
            d: dict = {"name": node.name}
            if node.children:
                d["children"] = [walk(c) for c in node.children]
            return d

        return walk(self.root)

    @classmethod
    def from_dict(cls, d: Mapping) -> "LatentHierarchy":
        def walk(entry: Mapping) -> LatentNode:
            if "name" not in entry:
                raise DatasetError("hierarchy node missing 'name'")
            return LatentNode(
                name=str(entry["name"]),
                children=[walk(c) for c in entry.get("children", [])],
            )

        return cls(walk(d))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "LatentHierarchy":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}: invalid hierarchy JSON: {exc}") from exc
        return cls.from_dict(data)


def tree(name: str, *children: LatentNode) -> LatentNode:
    return LatentNode(name, list(children))


def leaf(name: str) -> LatentNode:
    return LatentNode(name)


# ---------------------------------------------------------------------------
# Synthetic geometric shapes
# ---------------------------------------------------------------------------


def _pixel_grid() -> tuple[np.ndarray, np.ndarray]:
    coords = np.arange(RASTER_SIZE, dtype=np.float64) + 0.5
    return np.meshgrid(coords, coords)


def _segment_distance(px, py, a, b) -> np.ndarray:
    ax, ay = a
    bx, by = b
    vx, vy = bx - ax, by - ay
    norm2 = vx * vx + vy * vy
    t = np.clip(((px - ax) * vx + (py - ay) * vy) / norm2, 0.0, 1.0)
    cx, cy = ax + t * vx, ay + t * vy
    return np.hypot(px - cx, py - cy)


def _shape_geometry(spec: StimulusSpec) -> dict:
    """Shared geometry for the raster and vector renderers, one source of truth."""
    sx = STRETCH if spec.deformation == "hstretch" else 1.0
    sy = STRETCH if spec.deformation == "vstretch" else 1.0
    c = RASTER_SIZE / 2.0
    if spec.kind == "circle":
        return {"center": (c, c), "rx": 9.0 * sx, "ry": 9.0 * sy}
    if spec.kind == "rectangle":
        return {"center": (c, c), "hx": 8.0 * sx, "hy": 8.0 * sy}
    if spec.kind == "triangle":
        r = 10.0
        half = r * np.cos(np.pi / 6.0)
        return {
            "vertices": (
                (c, c - r * sy),
                (c - half * sx, c + 0.5 * r * sy),
                (c + half * sx, c + 0.5 * r * sy),
            )
        }
    raise DatasetError(f"unknown shape kind '{spec.kind}'")


def _boundary_distance(spec: StimulusSpec) -> np.ndarray:
    px, py = _pixel_grid()
    geo = _shape_geometry(spec)
    if spec.kind == "circle":
        cx, cy = geo["center"]
        rx, ry = geo["rx"], geo["ry"]
        rho = np.sqrt(((px - cx) / rx) ** 2 + ((py - cy) / ry) ** 2)
        return np.abs(rho - 1.0) * min(rx, ry)
    if spec.kind == "rectangle":
        cx, cy = geo["center"]
        qx = np.abs(px - cx) - geo["hx"]
        qy = np.abs(py - cy) - geo["hy"]
        outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
        inside = np.minimum(np.maximum(qx, qy), 0.0)
        return np.abs(outside + inside)
    verts = geo["vertices"]
    dists = [
        _segment_distance(px, py, verts[i], verts[(i + 1) % 3]) for i in range(3)
    ]
    return np.minimum(np.minimum(dists[0], dists[1]), dists[2])


def render_raster(spec: StimulusSpec) -> np.ndarray:
    """Deterministic 32x32 RGB raster of a shape stimulus, values in [0, 1]."""
    if spec.kind not in SHAPES:
        raise DatasetError(f"cannot rasterize stimulus kind '{spec.kind}'")
    img = np.ones((RASTER_SIZE, RASTER_SIZE, 3), dtype=np.float64)
    mask = _boundary_distance(spec) <= THICKNESSES[spec.thickness] / 2.0
    rgb = np.array(COLORS[spec.color], dtype=np.float64) / 255.0
    img[mask] = rgb
    return img


def _hex_color(name: str) -> str:
    r, g, b = COLORS[name]
    return f"#{r:02x}{g:02x}{b:02x}"


def render_stimulus(item: Item) -> str:
    """Standalone SVG document for an item, or a placeholder glyph without one."""
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="192" height="192" '
        f'viewBox="0 0 {RASTER_SIZE} {RASTER_SIZE}">'
    )
    spec = item.stimulus
    if spec is None:
        body = (
            '<rect x="1" y="1" width="30" height="30" fill="none" '
            'stroke="#888" stroke-width="1"/>'
            f'<text x="16" y="18" font-size="8" text-anchor="middle" '
            f'fill="#888">#{item.id}</text>'
        )
        return head + body + "</svg>"
    if spec.kind == "image" and spec.ref is not None:
        body = f'<image href="{spec.ref}" x="0" y="0" width="32" height="32"/>'
        return head + body + "</svg>"
    geo = _shape_geometry(spec)
    stroke = THICKNESSES[spec.thickness]
    style = (
        f'fill="none" stroke="{_hex_color(spec.color)}" stroke-width="{stroke:.3f}"'
    )
    if spec.kind == "circle":
        cx, cy = geo["center"]
        body = (
            f'<ellipse cx="{cx:.3f}" cy="{cy:.3f}" rx="{geo["rx"]:.3f}" '
            f'ry="{geo["ry"]:.3f}" {style}/>'
        )
    elif spec.kind == "rectangle":
        cx, cy = geo["center"]
        hx, hy = geo["hx"], geo["hy"]
        body = (
            f'<rect x="{cx - hx:.3f}" y="{cy - hy:.3f}" width="{2 * hx:.3f}" '
            f'height="{2 * hy:.3f}" {style}/>'
        )
    else:
        pts = " ".join(f"{x:.3f},{y:.3f}" for x, y in geo["vertices"])
        body = f'<polygon points="{pts}" {style}/>'
    return head + body + "</svg>"


def shape_hierarchy() -> LatentHierarchy:
    """Ground truth for the shape dataset: shape, then deformation, then thickness.

    Color is deliberately absent: the shape-bias protocol treats it as a
    nuisance property that a responder is expected to ignore.
    """
    root = LatentNode("shapes")
    for shape in SHAPES:
        shape_node = LatentNode(shape)
        for deform in DEFORMATIONS:
            deform_node = LatentNode(deform)
            for thickness in THICKNESSES:
                deform_node.children.append(LatentNode(thickness))
            shape_node.children.append(deform_node)
        root.children.append(shape_node)
    return LatentHierarchy(root)


def generate_shapes(seed: int) -> tuple[Dataset, LatentHierarchy]:
    """The synthetic shape dataset: 3 shapes x 3 deformations x 5 colors x 3 thicknesses.

    The grid is exhaustive and the renderer deterministic, so the result does
    not depend on the seed; the argument is kept for interface symmetry with
    the sampled generators.
    """
    items: list[Item] = []
    next_id = 0
    for shape in SHAPES:
        for deform in DEFORMATIONS:
            for thickness in THICKNESSES:
                for color in COLORS:
                    spec = StimulusSpec(shape, deform, color, thickness)
                    features = render_raster(spec).reshape(-1)
                    items.append(
                        Item(
                            id=next_id,
                            features=features,
                            label_path=(shape, deform, thickness),
                            stimulus=spec,
                        )
                    )
                    next_id += 1
    dataset = Dataset("shapes", RASTER_SIZE * RASTER_SIZE * 3, items)
    return dataset, shape_hierarchy()


# ---------------------------------------------------------------------------
# Gaussian blob datasets from a class tree
# ---------------------------------------------------------------------------


def generate_blobs(
    class_tree: LatentHierarchy,
    per_leaf: int,
    dim: int,
    seed: int,
    *,
    separation: float = 12.0,
    decay: float = 0.5,
    jitter: float = 0.7,
    distractor_dims: int | None = None,
    distractor_scale: float = 7.0,
    name: str = "blobs",
) -> Dataset:
    """Sample Gaussian clusters whose centers mirror a class tree.

    Child centers are offset from their parent by a magnitude that decays with
    depth, so leaves sharing a deep ancestor sit closer together than leaves
    related only near the root. The trailing ``distractor_dims`` coordinates
    carry high-variance noise with no class information; raw Euclidean
    distances are dominated by them, which is what a trained embedding is
    supposed to overcome.
    """
    if per_leaf < 1:
        raise DatasetError("per_leaf must be >= 1")
    if dim < 2:
        raise DatasetError("dim must be >= 2")
    leaves = class_tree.leaves()
    if len(leaves) < 2:
        raise DatasetError("class tree with a single leaf is degenerate")
    if distractor_dims is None:
        distractor_dims = dim // 2
    if not 0 <= distractor_dims < dim:
        raise DatasetError("distractor_dims must leave at least one signal dim")
    signal_dim = dim - distractor_dims

    rng = np.random.default_rng(seed)
    centers: dict[int, np.ndarray] = {class_tree.node_index(class_tree.root): np.zeros(signal_dim)}
    paths: dict[int, tuple[str, ...]] = {}

    def place(node: LatentNode, depth: int, names: tuple[str, ...]) -> None:
        center = centers[class_tree.node_index(node)]
        for child in node.children:
            direction = rng.standard_normal(signal_dim)
            norm = float(np.linalg.norm(direction))
            if norm == 0.0:
                direction = np.ones(signal_dim)
                norm = float(np.linalg.norm(direction))
            offset = separation * decay**depth * direction / norm
            idx = class_tree.node_index(child)
            centers[idx] = center + offset
            child_names = names + (child.name,)
            if child.is_leaf:
                paths[idx] = child_names
            place(child, depth + 1, child_names)

    place(class_tree.root, 0, ())

    items: list[Item] = []
    next_id = 0
    for node in leaves:
        idx = class_tree.node_index(node)
        center = centers[idx]
        for _ in range(per_leaf):
            signal = center + rng.standard_normal(signal_dim) * jitter
            noise = rng.standard_normal(distractor_dims) * distractor_scale
            items.append(
                Item(
                    id=next_id,
                    features=np.concatenate([signal, noise]),
                    label_path=paths[idx],
                )
            )
            next_id += 1
    return Dataset(name, dim, items)


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".stimuli.json")


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset as CSV with an optional stimulus sidecar JSON."""
    path = Path(path)
    header = ["id", "label_path"] + [f"f{i}" for i in range(dataset.dim)]
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for item in dataset.items:
            label = "/".join(item.label_path) if item.label_path else ""
            row = [str(item.id), label] + [repr(float(v)) for v in item.features]
            writer.writerow(row)
    stimuli = {
        str(item.id): item.stimulus.to_dict()
        for item in dataset.items
        if item.stimulus is not None
    }
    sidecar = _sidecar_path(path)
    if stimuli:
        sidecar.write_text(json.dumps(stimuli, indent=2), encoding="utf-8")
    elif sidecar.exists():
        sidecar.unlink()


def load_dataset(path: str | Path) -> Dataset:
    """Read a dataset CSV, reporting the offending row on any malformed input."""
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: no items (empty file)") from None
        if len(header) < 3 or header[0] != "id" or header[1] != "label_path":
            raise DatasetError(f"{path}: bad header, expected id,label_path,f0,...")
        dim = len(header) - 2
        items: list[Item] = []
        seen: set[int] = set()
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 2:
                raise DatasetError(
                    f"{path}: row {row_no}: expected {dim} features, got {len(row) - 2}"
                )
            try:
                item_id = int(row[0])
            except ValueError:
                raise DatasetError(f"{path}: row {row_no}: bad id {row[0]!r}") from None
            if item_id in seen:
                raise DatasetError(f"{path}: row {row_no}: duplicate id {item_id}")
            seen.add(item_id)
            try:
                features = np.array([float(v) for v in row[2:]], dtype=np.float64)
            except ValueError:
                raise DatasetError(
                    f"{path}: row {row_no}: non-numeric feature value"
                ) from None
            if not np.all(np.isfinite(features)):
                raise DatasetError(f"{path}: row {row_no}: non-finite feature value")
            label_path = tuple(row[1].split("/")) if row[1] else None
            items.append(Item(id=item_id, features=features, label_path=label_path))
    if not items:
        raise DatasetError(f"{path}: no items")

    sidecar = _sidecar_path(path)
    if sidecar.exists():
        raw = json.loads(sidecar.read_text(encoding="utf-8"))
        by_id = {item.id: item for item in items}
        for key, entry in raw.items():
            item = by_id.get(int(key))
            if item is not None:
                item.stimulus = StimulusSpec.from_dict(entry)
    return Dataset(path.stem, dim, items)
