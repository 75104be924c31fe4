import json
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dualunc.datahub import (
    MISSING, AnnotationSet, AnnotatorProfile, Dataset, LabelSpace, NoiseSpec, Vote,
    generate_synthetic, inject_noise, read_manifest, round_half_up, simulate_panel, write_manifest,
)
from dualunc.errors import ArgumentError, ParseError, SchemaError, StateError


class TestLabelSpace:
    def test_needs_two_classes(self):
        with pytest.raises(ArgumentError):
            LabelSpace(("only",))

    def test_unique_ids(self):
        with pytest.raises(ArgumentError):
            LabelSpace(("a", "b", "a"))

    def test_order_kept(self):
        assert LabelSpace(("mild", "none", "severe")).classes == ("mild", "none", "severe")


def test_annotator_ids_unique_within_sample():
    with pytest.raises(SchemaError):
        AnnotationSet((Vote("r1", 0), Vote("r1", 1)))


def test_annotation_label_checked_against_space():
    with pytest.raises(SchemaError):
        Dataset(LabelSpace.of_size(2), ["a"], [[0.0, 0.0]], annotations=[AnnotationSet.from_labels([2])])


class TestGenerateSynthetic:
    def test_counts(self):
        ds = generate_synthetic([10, 10], 2, 4.0, seed=0)
        assert ds.z == 20
        assert np.bincount(ds.gold).tolist() == [10, 10]
        assert all(a.n == 0 for a in ds.annotations)

    @pytest.mark.parametrize("kwargs", [
        dict(n_per_class=[10, 10], d=2, separation=0.0),
        dict(n_per_class=[10, 0], d=2, separation=1.0),
        dict(n_per_class=[10], d=2, separation=1.0),
        dict(n_per_class=[10, 10], d=1, separation=1.0),
    ])
    def test_preconditions(self, kwargs):
        with pytest.raises(ArgumentError):
            generate_synthetic(seed=0, **kwargs)

    def test_class_means(self):
        ds = generate_synthetic([4000, 4000], 3, 2.0, seed=3)
        for c in range(2):
            mu = ds.features[ds.gold == c].mean(axis=0)
            expect = 2.0 * np.eye(2, 3)[c]
            assert np.abs(mu - expect).max() < 0.1

    def test_manifest_byte_identical_rerun(self, tmp_path):
        for name in ("a", "b"):
            write_manifest(generate_synthetic([1000, 100], 8, 2.0, seed=7), tmp_path / f"{name}.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


class TestInjectNoise:
    def test_rate_zero(self):
        ds = generate_synthetic([50, 50], 2, 2.0, seed=0)
        out, flipped = inject_noise(ds, NoiseSpec("symmetric", 0.0, 1))
        assert flipped == set()
        assert np.array_equal(out.working, ds.gold)

    def test_symmetric_exact_count(self):
        ds = generate_synthetic([500, 500], 4, 2.0, seed=0)
        _, flipped = inject_noise(ds, NoiseSpec("symmetric", 0.4, 1))
        assert len(flipped) == 400

    def test_round_half_up(self):
        assert round_half_up(2.5) == 3
        assert round_half_up(3.5) == 4
        assert round_half_up(0.49) == 0
        ds = generate_synthetic([3, 2], 2, 2.0, seed=0)
        _, flipped = inject_noise(ds, NoiseSpec("symmetric", 0.5, 0))
        assert len(flipped) == 3

    def test_pair_flip_two_classes(self):
        ds = generate_synthetic([60, 40], 2, 2.0, seed=2)
        out, flipped = inject_noise(ds, NoiseSpec("pair_flip", 0.3, 5))
        pos = out.index_of()
        assert len(flipped) == 30
        for sid in flipped:
            i = pos[sid]
            assert out.working[i] == 1 - out.gold[i]

    def test_pair_flip_follows_confusion_argmax(self):
        conf = [[0.7, 0.1, 0.2], [0.0, 0.6, 0.4], [0.5, 0.3, 0.2]]
        ds = generate_synthetic([30, 30, 30], 3, 2.0, seed=1)
        out, flipped = inject_noise(ds, NoiseSpec("pair_flip", 0.5, 0, confusion=conf))
        target = {0: 2, 1: 2, 2: 0}
        for sid in flipped:
            i = out.index_of()[sid]
            assert out.working[i] == target[int(out.gold[i])]

    def test_tiny_rate_warns(self):
        ds = generate_synthetic([5, 5], 2, 2.0, seed=0)
        with pytest.warns(UserWarning):
            _, flipped = inject_noise(ds, NoiseSpec("symmetric", 0.01, 0))
        assert flipped == set()

    def test_missing_gold(self):
        ds = generate_synthetic([5, 5], 2, 2.0, seed=0)
        gold = ds.gold.copy()
        gold[0] = MISSING
        with pytest.raises(StateError):
            inject_noise(ds.with_columns(gold=gold), NoiseSpec("symmetric", 0.2, 0))

    def test_bad_spec(self):
        with pytest.raises(ArgumentError):
            NoiseSpec("symmetric", 1.5)
        with pytest.raises(ArgumentError):
            NoiseSpec("pair_flip", 0.2, confusion=[[0.5, 0.4], [0.0, 1.0]])
        with pytest.raises(ArgumentError):
            NoiseSpec("gaussian", 0.2)

    def test_loss_ranked_flips_to_top_other_class(self):
        ds = generate_synthetic([150, 50, 50], 4, 1.5, seed=4)
        out, flipped = inject_noise(ds, NoiseSpec("loss_ranked_asymmetric", 0.2, 4, warmup_epochs=2))
        assert len(flipped) == 50
        changed = {out.ids[i] for i in np.flatnonzero(out.working != out.gold)}
        assert changed == flipped

    @pytest.mark.parametrize("kind", ["symmetric", "pair_flip", "loss_ranked_asymmetric"])
    def test_only_working_labels_change(self, kind):
        ds = generate_synthetic([80, 40], 3, 2.0, seed=9)
        out, flipped = inject_noise(ds, NoiseSpec(kind, 0.25, 3, warmup_epochs=1))
        assert out.ids == ds.ids
        assert np.array_equal(out.features, ds.features)
        assert np.array_equal(out.gold, ds.gold)
        diff = {ds.ids[i] for i in np.flatnonzero(out.working != ds.gold)}
        assert diff == flipped
        assert len(flipped) == round_half_up(0.25 * ds.z)

    def test_symmetric_per_class_rate_within_3_sigma(self):
        r = 0.3
        ds = generate_synthetic([4000, 3500, 2500], 3, 1.0, seed=11)
        out, _ = inject_noise(ds, NoiseSpec("symmetric", r, 12))
        for c in range(3):
            m = ds.gold == c
            frac = (out.working[m] != c).mean()
            assert abs(frac - r) <= 3 * np.sqrt(r * (1 - r) / m.sum())

    def test_symmetric_targets_uniform(self):
        ds = generate_synthetic([6000, 6000, 6000], 3, 1.0, seed=2)
        out, _ = inject_noise(ds, NoiseSpec("symmetric", 0.5, 3))
        m = (ds.gold == 0) & (out.working != 0)
        share = (out.working[m] == 1).mean()
        assert abs(share - 0.5) <= 3 * np.sqrt(0.25 / m.sum())


class TestPanel:
    def test_identity_annotators(self):
        ds = generate_synthetic([20, 20, 20], 3, 2.0, seed=0)
        profiles = [AnnotatorProfile(f"r{j}", np.eye(3)) for j in range(4)]
        out = simulate_panel(ds, profiles, seed=1)
        for s in out:
            assert s.annotations.n == 4
            assert set(s.annotations.labels.tolist()) == {s.gold_label}

    def test_uniform_confusion_histogram(self):
        k = 4
        ds = generate_synthetic([1000] * k, 2, 1.0, seed=0)
        prof = [AnnotatorProfile(f"r{j}", np.full((k, k), 1 / k)) for j in range(3)]
        out = simulate_panel(ds, prof, seed=5)
        # votes for gold class 0 only
        votes = np.concatenate([a.labels for a, g in zip(out.annotations, out.gold) if g == 0])
        assert votes.size == 3000
        freq = np.bincount(votes, minlength=k) / votes.size
        sigma = np.sqrt(0.25 * 0.75 / votes.size)
        assert np.all(np.abs(freq - 0.25) <= 3 * sigma)

    def test_coverage(self):
        ds = generate_synthetic([2000, 2000], 2, 1.0, seed=0)
        out = simulate_panel(ds, [AnnotatorProfile("r", np.eye(2), coverage=0.3)], seed=2)
        frac = out.n_votes().mean()
        assert abs(frac - 0.3) <= 3 * np.sqrt(0.21 / ds.z)

    def test_deterministic(self):
        ds = generate_synthetic([30, 30], 2, 1.0, seed=0)
        prof = [AnnotatorProfile.with_accuracy(f"r{j}", 2, 0.7, 0.8) for j in range(5)]
        assert simulate_panel(ds, prof, 3) == simulate_panel(ds, prof, 3)
        assert simulate_panel(ds, prof, 3) != simulate_panel(ds, prof, 4)

    def test_profile_validation(self):
        with pytest.raises(ArgumentError):
            AnnotatorProfile("r", [[0.5, 0.6], [0.0, 1.0]])
        with pytest.raises(ArgumentError):
            AnnotatorProfile("r", np.eye(2), coverage=0.0)

    def test_neighbour_only(self):
        m = AnnotatorProfile.with_accuracy("r", 4, 0.6, neighbour_only=True).matrix
        assert m[0].tolist() == [0.6, 0.4, 0.0, 0.0]
        assert np.allclose(m[2], [0.0, 0.2, 0.6, 0.2])


class TestManifest:
    def test_round_trip(self, tmp_path, tiny_panel):
        ds = tiny_panel.with_columns(working=[0, 1, MISSING, 1, 0], gold=[0, 1, 1, MISSING, 0])
        write_manifest(ds, tmp_path / "m.jsonl")
        back = read_manifest(tmp_path / "m.jsonl")
        assert back == ds
        assert back.features.tobytes() == ds.features.tobytes()

    def test_header_declares_space(self, tmp_path):
        ds = generate_synthetic([2, 2], 3, 1.0, seed=0, label_space=LabelSpace(("benign", "malignant")))
        write_manifest(ds, tmp_path / "m.jsonl")
        head = json.loads((tmp_path / "m.jsonl").read_text().splitlines()[0])
        assert head["classes"] == ["benign", "malignant"]
        assert head["d"] == 3

    def _write(self, path, lines):
        path.write_text("\n".join(json.dumps(x) if not isinstance(x, str) else x for x in lines) + "\n")

    def test_label_outside_space(self, tmp_path):
        p = tmp_path / "m.jsonl"
        self._write(p, [
            {"type": "header", "format": "dualunc-manifest/1", "classes": ["a", "b"], "d": 2},
            {"id": "x", "features": [0.0, 1.0], "gold_label": 5, "working_label": None, "annotations": []},
        ])
        with pytest.raises(SchemaError):
            read_manifest(p)

    def test_parse_error_line_number(self, tmp_path):
        p = tmp_path / "m.jsonl"
        self._write(p, [
            {"type": "header", "format": "dualunc-manifest/1", "classes": ["a", "b"], "d": 2},
            {"id": "x", "features": [0.0, 1.0], "gold_label": 0, "working_label": 0, "annotations": []},
            "{not json",
        ])
        with pytest.raises(ParseError) as e:
            read_manifest(p)
        assert e.value.line == 3

    def test_wrong_dimension(self, tmp_path):
        p = tmp_path / "m.jsonl"
        self._write(p, [
            {"type": "header", "format": "dualunc-manifest/1", "classes": ["a", "b"], "d": 2},
            {"id": "x", "features": [0.0], "gold_label": 0, "working_label": 0, "annotations": []},
        ])
        with pytest.raises((SchemaError, ParseError)):
            read_manifest(p)

    @given(st.lists(st.lists(st.integers(0, 2), max_size=5), min_size=1, max_size=8))
    def test_round_trip_property(self, tmp_path_factory, votes):
        from conftest import panel_dataset

        ds = panel_dataset(votes, k=3)
        p = tmp_path_factory.mktemp("m") / "m.jsonl"
        write_manifest(ds, p)
        assert read_manifest(p) == ds


def test_dataset_is_immutable(tiny_panel):
    with pytest.raises(ValueError):
        tiny_panel.features[0, 0] = 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert tiny_panel.select_ids(["p002", "p000"]).ids == ("p002", "p000")
