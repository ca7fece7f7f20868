import json

import numpy as np
import pytest

from funnybench.dataset import (
    AugmentationPolicy,
    generate_dataset,
    load_manifest,
    manifest_from_dict,
    manifest_to_dict,
    valid_targets,
)
from funnybench.render import RenderConfig
from funnybench.scene import (
    ALL_SLOTS,
    ClassDefinition,
    ClassSpace,
    RemoveParts,
    apply_intervention,
    canonical_scene,
    sample_class_space,
    sample_scene,
)


@pytest.fixture(scope="module")
def space():
    return sample_class_space(7)


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory, space):
    root = tmp_path_factory.mktemp("ds")
    manifest = generate_dataset(
        root, sizes={"train": 60, "test": 20}, seed=7, space=space
    )
    return root, manifest


class TestValidTargets:
    def test_complete_bird_is_singleton(self, space):
        for cid in (0, 17, 49):
            sc = canonical_scene(cid)
            assert valid_targets(space, sc) == {cid}

    def test_no_parts_matches_everything(self, space):
        sc = apply_intervention(canonical_scene(0), RemoveParts(set(ALL_SLOTS)))
        assert valid_targets(space, sc) == set(range(50))

    def test_toy_space_linear_scan(self):
        tuples = [
            (0, 0, 0, 0, 0),
            (1, 0, 0, 0, 0),
            (0, 1, 0, 0, 1),
            (1, 1, 1, 0, 0),
            (0, 0, 1, 1, 2),
        ]
        classes = tuple(
            ClassDefinition(i, {s: t[k] for k, s in enumerate(ALL_SLOTS)}, (frozenset(ALL_SLOTS),))
            for i, t in enumerate(tuples)
        )
        toy = ClassSpace(classes=classes, seed=0)
        # remove the first slot: classes agreeing on the remaining four
        sc = apply_intervention(canonical_scene(0), RemoveParts({ALL_SLOTS[0]}))
        got = valid_targets(toy, sc)
        expect = {
            c.class_id
            for c in toy.classes
            if all(c.assignment[s] == toy[0].assignment[s] for s in ALL_SLOTS[1:])
        }
        assert got == expect == {0, 1}


class TestGenerateDataset:
    def test_layout_and_manifest(self, small_dataset):
        root, manifest = small_dataset
        assert (root / "manifest.json").is_file()
        for s in manifest.train + manifest.test:
            assert (root / s.image_path).is_file()
            assert (root / s.partmap_path).is_file()
        loaded = load_manifest(root)
        assert loaded == manifest

    def test_test_split_complete_and_singleton(self, small_dataset):
        _, manifest = small_dataset
        assert manifest.n_test == len(manifest.test)
        for s in manifest.test:
            assert s.scene.present_parts == frozenset(ALL_SLOTS)
            assert s.valid_target_set == {s.primary_class}

    def test_valid_targets_recompute(self, small_dataset):
        _, manifest = small_dataset
        for s in manifest.train:
            assert valid_targets(manifest.class_space, s.scene) == set(s.valid_target_set)
            assert s.primary_class in s.valid_target_set

    def test_unique_sample_ids(self, small_dataset):
        _, manifest = small_dataset
        ids = [s.sample_id for s in manifest.train + manifest.test]
        assert len(set(ids)) == len(ids)

    def test_fraction_zero_keeps_everything(self, tmp_path, space):
        manifest = generate_dataset(
            tmp_path, sizes={"train": 30, "test": 5}, seed=3,
            policy=AugmentationPolicy(fraction_with_removals=0.0), space=space,
        )
        for s in manifest.train:
            assert s.scene.present_parts == frozenset(ALL_SLOTS)
            assert s.valid_target_set == {s.primary_class}

    def test_byte_identical_regeneration(self, tmp_path, space):
        a = tmp_path / "a"
        b = tmp_path / "b"
        generate_dataset(a, sizes={"train": 12, "test": 6}, seed=11, space=space)
        generate_dataset(b, sizes={"train": 12, "test": 6}, seed=11, space=space)
        for rel in sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file()):
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

    def test_mean_bg_objects_is_direct_count(self, small_dataset):
        _, manifest = small_dataset
        direct = np.mean([len(s.scene.background_objects) for s in manifest.test])
        assert manifest.mean_bg_objects == pytest.approx(float(direct))

    def test_rejects_empty_split(self, tmp_path, space):
        with pytest.raises(ValueError):
            generate_dataset(tmp_path, sizes={"train": 0, "test": 5}, seed=1, space=space)


class TestManifestRoundTrip:
    def test_dict_round_trip(self, small_dataset):
        _, manifest = small_dataset
        d = manifest_to_dict(manifest)
        # through JSON text, as on disk
        again = manifest_from_dict(json.loads(json.dumps(d)))
        assert again == manifest

    def test_rejects_unknown_major_version(self, small_dataset):
        _, manifest = small_dataset
        d = manifest_to_dict(manifest)
        d["schema_version"] = "2.0"
        with pytest.raises(ValueError):
            manifest_from_dict(d)
