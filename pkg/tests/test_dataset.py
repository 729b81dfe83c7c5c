"""Tests for datasets, shape stimuli, blob sampling, and hierarchy files."""

import json

import numpy as np
import pytest

from hke.dataset import (
    COLORS,
    DEFORMATIONS,
    SHAPES,
    THICKNESSES,
    Dataset,
    DatasetError,
    Item,
    LatentHierarchy,
    StimulusSpec,
    generate_blobs,
    generate_shapes,
    leaf,
    load_dataset,
    render_raster,
    render_stimulus,
    save_dataset,
    tree,
)


def small_tree() -> LatentHierarchy:
    return LatentHierarchy(
        tree(
            "root",
            tree("animal", tree("mammal", leaf("cat"), leaf("dog")), leaf("frog")),
            tree("vehicle", leaf("car"), leaf("ship")),
        )
    )


class TestDataset:
    def test_rejects_fewer_than_three_items(self):
        items = [Item(0, np.zeros(2)), Item(1, np.zeros(2))]
        with pytest.raises(DatasetError, match="at least 3"):
            Dataset("tiny", 2, items)

    def test_rejects_duplicate_ids(self):
        items = [Item(0, np.zeros(2)), Item(0, np.zeros(2)), Item(1, np.zeros(2))]
        with pytest.raises(DatasetError, match="duplicate"):
            Dataset("dup", 2, items)

    def test_rejects_wrong_dimension(self):
        items = [Item(0, np.zeros(2)), Item(1, np.zeros(3)), Item(2, np.zeros(2))]
        with pytest.raises(DatasetError, match="expected 2 features"):
            Dataset("bad", 2, items)

    def test_rejects_non_finite_features(self):
        items = [Item(0, np.zeros(2)), Item(1, np.array([np.nan, 0.0])), Item(2, np.zeros(2))]
        with pytest.raises(DatasetError, match="non-finite"):
            Dataset("nan", 2, items)

    def test_rejects_inconsistent_label_order(self):
        """Two items disagreeing on which concept is coarser is a data error."""
        items = [
            Item(0, np.zeros(2), label_path=("a", "b")),
            Item(1, np.zeros(2), label_path=("b", "a")),
            Item(2, np.zeros(2)),
        ]
        with pytest.raises(DatasetError, match="orders them the other way"):
            Dataset("twist", 2, items)

    def test_lookup_and_matrix(self):
        items = [Item(i, np.full(2, float(i))) for i in range(4)]
        ds = Dataset("x", 2, items)
        assert ds.by_id(2).features[0] == 2.0
        assert ds.feature_matrix().shape == (4, 2)
        with pytest.raises(DatasetError, match="unknown item id"):
            ds.by_id(99)


class TestLatentHierarchy:
    def test_resolve_prefers_named_children(self):
        h = small_tree()
        names = [n.name for n in h.resolve(("animal", "mammal", "cat"))]
        assert names == ["root", "animal", "mammal", "cat"]

    def test_resolve_descends_through_unnamed_levels(self):
        """A path may skip levels; the leaf name alone pins the branch."""
        h = small_tree()
        names = [n.name for n in h.resolve(("dog",))]
        assert names == ["root", "animal", "mammal", "dog"]

    def test_resolve_rejects_unplaceable_path(self):
        h = small_tree()
        with pytest.raises(DatasetError, match="cannot be placed"):
            h.resolve(("animal", "unknown-leaf"))

    def test_assign_items_gives_node_index_paths(self):
        h = small_tree()
        items = [
            Item(0, np.zeros(1), label_path=("cat",)),
            Item(1, np.zeros(1), label_path=("dog",)),
            Item(2, np.zeros(1), label_path=("ship",)),
        ]
        ds = Dataset("three", 1, items)
        paths = h.assign_items(ds)
        assert len(paths) == 3
        # all paths start at the root and cat/dog share everything but the leaf
        assert paths[0][0] == paths[2][0]
        assert paths[0][:-1] == paths[1][:-1]
        assert paths[0][-1] != paths[1][-1]

    def test_leaf_label_excludes_root(self):
        h = small_tree()
        assert h.leaf_label(("cat",)) == "animal/mammal/cat"

    def test_round_trip_through_json(self, tmp_path):
        h = small_tree()
        p = tmp_path / "tree.json"
        h.save(p)
        again = LatentHierarchy.load(p)
        assert again.to_dict() == h.to_dict()
        assert [n.name for n in again.leaves()] == [n.name for n in h.leaves()]

    def test_load_rejects_missing_name(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"children": []}), encoding="utf-8")
        with pytest.raises(DatasetError, match="missing 'name'"):
            LatentHierarchy.load(p)


class TestShapes:
    def test_grid_is_exhaustive(self):
        ds, latent = generate_shapes(seed=0)
        assert len(ds) == len(SHAPES) * len(DEFORMATIONS) * len(THICKNESSES) * len(COLORS)
        per_shape = {s: 0 for s in SHAPES}
        for item in ds.items:
            per_shape[item.label_path[0]] += 1
        assert set(per_shape.values()) == {45}
        assert latent.depth() == 3

    def test_color_is_not_a_label(self):
        ds, _ = generate_shapes(seed=0)
        for item in ds.items:
            assert item.label_path == (
                item.stimulus.kind,
                item.stimulus.deformation,
                item.stimulus.thickness,
            )

    def test_seed_does_not_change_the_grid(self):
        a, _ = generate_shapes(seed=0)
        b, _ = generate_shapes(seed=123)
        assert np.array_equal(a.feature_matrix(), b.feature_matrix())

    def test_raster_is_white_with_colored_stroke(self):
        img = render_raster(StimulusSpec("circle", "none", "blue", "medium"))
        assert img.shape == (32, 32, 3)
        assert img.max() <= 1.0 and img.min() >= 0.0
        corner = img[0, 0]
        assert np.array_equal(corner, np.ones(3))
        stroke = (img != 1.0).any(axis=2)
        assert 0 < stroke.sum() < 32 * 32

    def test_thickness_orders_stroke_area(self):
        areas = []
        for thickness in ("thin", "medium", "thick"):
            img = render_raster(StimulusSpec("rectangle", "none", "red", thickness))
            areas.append(int((img != 1.0).any(axis=2).sum()))
        assert areas[0] < areas[1] < areas[2]

    def test_vstretch_makes_taller_not_wider(self):
        plain = render_raster(StimulusSpec("triangle", "none", "green", "thick"))
        tall = render_raster(StimulusSpec("triangle", "vstretch", "green", "thick"))

        def extent(img, axis):
            stroke = (img != 1.0).any(axis=2)
            idx = np.where(stroke.any(axis=axis))[0]
            return idx[-1] - idx[0]

        assert extent(tall, 1) > extent(plain, 1)
        assert extent(tall, 0) == extent(plain, 0)

    def test_svg_circle_has_equal_radii_without_stretch(self):
        ds, _ = generate_shapes(seed=0)
        item = next(
            i for i in ds.items
            if i.stimulus.kind == "circle" and i.stimulus.deformation == "none"
        )
        svg = render_stimulus(item)
        assert '<ellipse' in svg
        assert 'rx="9.000"' in svg and 'ry="9.000"' in svg

    def test_svg_rect_hstretch_is_wider(self):
        item = Item(
            0, np.zeros(1),
            stimulus=StimulusSpec("rectangle", "hstretch", "red", "thin"),
        )
        svg = render_stimulus(item)
        assert 'width="22.400"' in svg and 'height="16.000"' in svg

    def test_svg_placeholder_for_missing_stimulus(self):
        svg = render_stimulus(Item(7, np.zeros(1)))
        assert "#7" in svg and "<svg" in svg

    def test_svg_image_reference(self):
        item = Item(0, np.zeros(1), stimulus=StimulusSpec("image", ref="img/0.png"))
        assert '<image href="img/0.png"' in render_stimulus(item)


class TestBlobs:
    def test_counts_dims_and_labels(self):
        h = small_tree()
        ds = generate_blobs(h, per_leaf=4, dim=10, seed=1)
        assert len(ds) == 4 * 5
        assert ds.dim == 10
        labels = {item.label_path for item in ds.items}
        assert ("animal", "mammal", "cat") in labels
        assert ("vehicle", "ship") in labels

    def test_same_seed_same_bytes(self):
        h = small_tree()
        a = generate_blobs(h, per_leaf=3, dim=8, seed=42)
        b = generate_blobs(h, per_leaf=3, dim=8, seed=42)
        assert np.array_equal(a.feature_matrix(), b.feature_matrix())
        c = generate_blobs(h, per_leaf=3, dim=8, seed=43)
        assert not np.array_equal(a.feature_matrix(), c.feature_matrix())

    def test_siblings_closer_than_cousins_in_signal_dims(self):
        """Tree structure must show up in the signal half of the features."""
        h = small_tree()
        ds = generate_blobs(h, per_leaf=20, dim=16, seed=3, jitter=0.1)
        signal = {
            label: np.stack(
                [i.features[:8] for i in ds.items if i.label_path == label]
            ).mean(axis=0)
            for label in {item.label_path for item in ds.items}
        }
        cat, dog = signal[("animal", "mammal", "cat")], signal[("animal", "mammal", "dog")]
        ship = signal[("vehicle", "ship")]
        assert np.linalg.norm(cat - dog) < np.linalg.norm(cat - ship)

    def test_distractor_dims_dominate_within_class_spread(self):
        h = small_tree()
        ds = generate_blobs(h, per_leaf=10, dim=16, seed=3)
        for label in {item.label_path for item in ds.items}:
            feats = np.stack(
                [i.features for i in ds.items if i.label_path == label]
            )
            per_dim = feats.var(axis=0)
            assert per_dim[8:].mean() > 10 * per_dim[:8].mean()

    def test_rejects_degenerate_tree(self):
        single = LatentHierarchy(tree("root", leaf("only")))
        with pytest.raises(DatasetError, match="single leaf"):
            generate_blobs(single, per_leaf=3, dim=4, seed=0)


class TestFileRoundTrip:
    def test_csv_and_sidecar_round_trip(self, tmp_path):
        ds, _ = generate_shapes(seed=0)
        p = tmp_path / "shapes.csv"
        save_dataset(ds, p)
        again = load_dataset(p)
        assert len(again) == len(ds)
        assert np.array_equal(again.feature_matrix(), ds.feature_matrix())
        for a, b in zip(again.items, ds.items):
            assert a.label_path == b.label_path
            assert a.stimulus == b.stimulus

    def test_unlabeled_items_round_trip(self, tmp_path):
        items = [Item(i, np.arange(3, dtype=float) + i) for i in range(5)]
        ds = Dataset("plain", 3, items)
        p = tmp_path / "plain.csv"
        save_dataset(ds, p)
        again = load_dataset(p)
        assert all(item.label_path is None for item in again.items)
        assert not (tmp_path / "plain.stimuli.json").exists()

    def test_load_rejects_bad_header(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("foo,bar,f0\n1,x,0.0\n", encoding="utf-8")
        with pytest.raises(DatasetError, match="bad header"):
            load_dataset(p)

    def test_load_rejects_short_row_with_row_number(self, tmp_path):
        p = tmp_path / "short.csv"
        p.write_text("id,label_path,f0,f1\n0,a,1.0,2.0\n1,a,1.0\n", encoding="utf-8")
        with pytest.raises(DatasetError, match="row 3"):
            load_dataset(p)

    def test_load_rejects_non_numeric_feature(self, tmp_path):
        p = tmp_path / "alpha.csv"
        p.write_text("id,label_path,f0\n0,a,1.0\n1,a,oops\n2,a,0.5\n", encoding="utf-8")
        with pytest.raises(DatasetError, match="row 3.*non-numeric"):
            load_dataset(p)

    def test_load_rejects_duplicate_id(self, tmp_path):
        p = tmp_path / "dup.csv"
        p.write_text("id,label_path,f0\n0,a,1.0\n0,a,2.0\n", encoding="utf-8")
        with pytest.raises(DatasetError, match="row 3.*duplicate"):
            load_dataset(p)

    def test_features_survive_exactly(self, tmp_path):
        rng = np.random.default_rng(7)
        items = [Item(i, rng.standard_normal(4)) for i in range(6)]
        ds = Dataset("exact", 4, items)
        p = tmp_path / "exact.csv"
        save_dataset(ds, p)
        assert np.array_equal(load_dataset(p).feature_matrix(), ds.feature_matrix())
