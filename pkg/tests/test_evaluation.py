"""Metric and export tests: error rates, ordinal consistency, retrieval, PCA."""

import json

import numpy as np
import pytest

from conftest import make_bank, vec_of
from ordcon.autodiff import NearZeroNormError
from ordcon.errors import DataError, RelationError, ShapeMismatchError
from ordcon.evaluation import (
    Metrics,
    age_probe_accuracy,
    encode_dataset,
    evaluate,
    export_features,
    export_metrics,
    mae,
    order_consistency,
    pca_project,
    rank1_accuracy,
    split_gallery_probe,
)
from ordcon.synth import SyntheticSpec, generate
from ordcon.training import TrainConfig, pretrain_age, train_aifr
from ordcon.encoder import EncoderSpec


class TestMae:
    def test_exact_value(self):
        assert mae([1.0, 2.0, 3.0], [2.0, 2.0, 5.0]) == 1.0

    def test_zero_on_equal(self):
        assert mae([4.0, 4.0], [4.0, 4.0]) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            mae([1.0, 2.0], [1.0])

    def test_two_dimensional_rejected(self):
        with pytest.raises(ShapeMismatchError):
            mae(np.zeros((2, 2)), np.zeros((2, 2)))

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            mae([], [])


class TestOrderConsistency:
    def test_proxy_aligned_features_score_one(self, rng):
        bank = make_bank(rng, 3, 7, 4)
        labels = np.array([3, 4, 5, 6, 7, 4, 6])
        features = np.stack([vec_of(bank, a) for a in labels])
        assert order_consistency(features, labels, bank) == 1.0

    def test_random_features_near_half(self, rng):
        bank = make_bank(rng, 3, 7, 4)
        labels = rng.integers(3, 8, size=60)
        features = rng.normal(size=(60, 4))
        score = order_consistency(features, labels, bank)
        assert 0.3 < score < 0.7

    def test_single_label_rejected(self, rng):
        bank = make_bank(rng, 3, 7, 4)
        with pytest.raises(RelationError):
            order_consistency(rng.normal(size=(4, 4)), np.full(4, 5), bank)

    def test_coincident_features_rejected(self, rng):
        bank = make_bank(rng, 3, 7, 4)
        features = np.zeros((2, 4))
        features[:] = [1.0, 0.0, 0.0, 0.0]
        with pytest.raises(NearZeroNormError):
            order_consistency(features, np.array([3, 4]), bank)


class TestSplitGalleryProbe:
    def test_oldest_per_identity(self):
        y_age = np.array([30, 50, 20, 40, 40])
        y_id = np.array([0, 0, 1, 1, 1])
        gallery, probe = split_gallery_probe(y_age, y_id)
        assert gallery.tolist() == [1, 3]  # age ties resolve to lowest index
        assert probe.tolist() == [0, 2, 4]

    def test_single_sample_identity_is_gallery_only(self):
        gallery, probe = split_gallery_probe(np.array([25]), np.array([7]))
        assert gallery.tolist() == [0]
        assert probe.size == 0

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            split_gallery_probe(np.array([]), np.array([]))


class TestRank1:
    def test_perfect_match(self, rng):
        gallery = rng.normal(size=(3, 5))
        probe = gallery + 0.01 * rng.normal(size=(3, 5))
        ids = np.array([0, 1, 2])
        assert rank1_accuracy(gallery, ids, probe, ids) == 1.0

    def test_systematic_confusion(self):
        gallery = np.array([[1.0, 0.0], [0.0, 1.0]])
        probe = np.array([[0.1, 1.0], [1.0, 0.1]])  # each nearest the other id
        ids = np.array([0, 1])
        assert rank1_accuracy(gallery, ids, probe, ids) == 0.0

    def test_random_features_near_chance(self, rng):
        k = 4
        gallery = rng.normal(size=(k, 6))
        probe = rng.normal(size=(200, 6))
        probe_ids = rng.integers(0, k, size=200)
        score = rank1_accuracy(gallery, np.arange(k), probe, probe_ids)
        assert abs(score - 1.0 / k) < 0.15

    def test_scale_invariance(self, rng):
        gallery = rng.normal(size=(3, 5))
        probe = rng.normal(size=(7, 5))
        ids = np.arange(3)
        probe_ids = np.array([0, 1, 2, 0, 1, 2, 0])
        a = rank1_accuracy(gallery, ids, probe, probe_ids)
        b = rank1_accuracy(gallery * 10.0, ids, probe * 0.1, probe_ids)
        assert a == b

    def test_unknown_probe_identity_rejected(self, rng):
        with pytest.raises(DataError):
            rank1_accuracy(rng.normal(size=(2, 3)), np.array([0, 1]),
                           rng.normal(size=(1, 3)), np.array([5]))

    def test_empty_gallery_rejected(self, rng):
        with pytest.raises(DataError):
            rank1_accuracy(np.zeros((0, 3)), np.array([]),
                           rng.normal(size=(1, 3)), np.array([0]))

    def test_zero_norm_rejected(self, rng):
        with pytest.raises(NearZeroNormError):
            rank1_accuracy(np.zeros((1, 3)), np.array([0]),
                           rng.normal(size=(1, 3)), np.array([0]))


class TestAgeProbeAccuracy:
    def test_one_hot_groups_separable(self):
        labels = np.repeat([0, 1, 2], 20)
        features = np.eye(3)[labels]
        assert age_probe_accuracy(features, labels, seed=0) > 0.95

    def test_constant_features_hit_exact_chance(self):
        labels = np.repeat([0, 1], 20)
        features = np.ones((40, 3))
        assert age_probe_accuracy(features, labels, seed=0) == 0.5

    def test_independent_features_near_chance(self, rng):
        labels = np.repeat([0, 1, 2], 60)
        features = rng.normal(size=(180, 4))
        acc = age_probe_accuracy(features, labels, seed=0)
        assert abs(acc - 1.0 / 3.0) < 0.15

    def test_deterministic_per_seed(self, rng):
        labels = np.repeat([0, 1], 15)
        features = rng.normal(size=(30, 4))
        a = age_probe_accuracy(features, labels, seed=3)
        b = age_probe_accuracy(features, labels, seed=3)
        assert a == b

    def test_single_group_rejected(self, rng):
        with pytest.raises(DataError):
            age_probe_accuracy(rng.normal(size=(10, 2)), np.zeros(10, dtype=int), 0)

    def test_undersized_group_rejected(self, rng):
        labels = np.array([0, 0, 0, 1])
        with pytest.raises(DataError):
            age_probe_accuracy(rng.normal(size=(4, 2)), labels, 0)


class TestPcaProject:
    def test_collinear_data_one_component(self):
        t = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
        x = np.outer(t, [3.0, 4.0])
        proj, ratios = pca_project(x, 2)
        assert np.isclose(ratios[0], 1.0)
        assert ratios[1] == 0.0
        assert np.allclose(proj[:, 1], 0.0)

    def test_isotropic_data_splits_variance(self, rng):
        x = rng.normal(size=(4000, 2))
        _, ratios = pca_project(x, 2)
        assert abs(ratios[0] - 0.5) < 0.1

    def test_projection_is_centered(self, rng):
        x = rng.normal(size=(50, 4)) + 17.0
        proj, _ = pca_project(x, 2)
        assert np.allclose(proj.mean(axis=0), 0.0, atol=1e-12)

    def test_sign_convention_fixed(self):
        # data along -e0: the direction's pivot flips positive, so the
        # projection equals the centered first coordinate
        x = np.array([[2.0, 0.0], [0.0, 0.0], [-2.0, 0.0]])
        proj, _ = pca_project(x, 1)
        assert np.allclose(proj[:, 0], [2.0, 0.0, -2.0])

    def test_rank_deficient_padding(self, rng):
        flat = rng.normal(size=(5, 2)) @ rng.normal(size=(2, 4))
        proj, ratios = pca_project(flat, 4)
        assert ratios[2] == 0.0 and ratios[3] == 0.0
        assert np.allclose(proj[:, 2:], 0.0)

    def test_bit_stable_across_calls(self, rng):
        x = rng.normal(size=(30, 5))
        a, ra = pca_project(x, 3)
        b, rb = pca_project(x, 3)
        assert np.array_equal(a, b) and np.array_equal(ra, rb)

    def test_bad_k_rejected(self, rng):
        with pytest.raises(DataError):
            pca_project(rng.normal(size=(5, 3)), 4)

    def test_single_sample_rejected(self):
        with pytest.raises(DataError):
            pca_project(np.ones((1, 3)), 1)

    def test_one_dimensional_input_rejected(self):
        with pytest.raises(ShapeMismatchError):
            pca_project(np.ones(5), 1)


def small_age_checkpoint():
    data = generate(SyntheticSpec(n_samples=120, n_identities=5, age_lo=16,
                                  age_hi=35, input_dim=6, noise_sigma=0.05,
                                  warp_seed=2, sample_seed=2))
    spec = EncoderSpec(input_dim=6, hidden_dims=(10,), d_age=4, d_id=0,
                       activation="tanh", seed=1)
    cfg = TrainConfig(epochs_pretrain=2, batch_size=40, seed=0)
    return pretrain_age(data, cfg, encoder_spec=spec), data


def small_aifr_checkpoint():
    data = generate(SyntheticSpec(n_samples=96, n_identities=8, age_lo=16,
                                  age_hi=27, input_dim=6, noise_sigma=0.05,
                                  warp_seed=2, sample_seed=2))
    spec = EncoderSpec(input_dim=6, hidden_dims=(10,), d_age=4, d_id=4,
                       activation="tanh", seed=1)
    cfg = TrainConfig(mode="aifr", epochs_pretrain=2, grl_start_epoch=1,
                      batch_size=16, seed=0)
    return train_aifr(data, cfg, encoder_spec=spec), data


class TestEvaluate:
    def test_age_mode_metric_set(self):
        ckpt, data = small_age_checkpoint()
        m = evaluate(ckpt, data)
        assert m.mae is not None and m.order_consistency is not None
        assert m.rank1 is None and m.age_probe_accuracy is None
        assert m.loss_trace["pretrain"] == ckpt.loss_trace["pretrain"]

    def test_aifr_mode_metric_set(self):
        ckpt, data = small_aifr_checkpoint()
        m = evaluate(ckpt, data)
        assert m.mae is None
        assert m.order_consistency is not None
        assert m.rank1 is not None
        assert m.age_probe_accuracy is not None

    def test_encode_dataset_shapes(self):
        ckpt, data = small_age_checkpoint()
        z_age, z_id, preds = encode_dataset(ckpt, data)
        assert z_age.shape == (len(data), 4)
        assert z_id is None
        assert preds.shape == (len(data),)


class TestExports:
    def test_metrics_json_byte_stable(self, tmp_path):
        m = Metrics(mae=2.5, order_consistency=0.75, loss_trace={"pretrain": [1.0]})
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        export_metrics(m, p1)
        export_metrics(m, p2)
        assert p1.read_bytes() == p2.read_bytes()
        loaded = json.loads(p1.read_text())
        assert list(loaded) == sorted(loaded)
        assert loaded["mae"] == 2.5

    def test_feature_export_schema(self, tmp_path):
        ckpt, data = small_age_checkpoint()
        path = tmp_path / "features.csv"
        export_features(ckpt, data, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "y_age,y_id," + ",".join(f"z_{i}" for i in range(4))
        assert len(lines) == len(data) + 1
        first = lines[1].split(",")
        assert int(first[0]) == int(data.y_age[0])

    def test_identity_space_requires_identity_head(self, tmp_path):
        ckpt, data = small_age_checkpoint()
        with pytest.raises(DataError):
            export_features(ckpt, data, tmp_path / "f.csv", space="id")

    def test_identity_space_export(self, tmp_path):
        ckpt, data = small_aifr_checkpoint()
        path = tmp_path / "id.csv"
        export_features(ckpt, data, path, space="id")
        lines = path.read_text().splitlines()
        assert len(lines) == len(data) + 1

    def test_unknown_space_rejected(self, tmp_path):
        ckpt, data = small_age_checkpoint()
        with pytest.raises(DataError):
            export_features(ckpt, data, tmp_path / "f.csv", space="trunk")
