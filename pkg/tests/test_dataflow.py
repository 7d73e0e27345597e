import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtmssl.dataflow import (
    AugmentConfig,
    Dataset,
    ImbalanceSpec,
    balanced_sample,
    class_means,
    generate_synthetic,
    load_csv,
    save_csv,
    strong_augment,
    weak_augment,
)
from dtmssl.errors import ConfigError
from dtmssl.ssl_core import Pools, TrainConfig, train_run


def test_counts_follow_spec():
    lab, unl, held = generate_synthetic(ImbalanceSpec((10, 10)), 2, 3.0, seed=1, n_unlabeled=50)
    assert len(lab) == 20
    np.testing.assert_array_equal(lab.class_counts(), [10, 10])
    assert unl.labels is None and len(unl) == 50
    assert unl.hidden_labels.shape == (50,)


def test_heldout_is_balanced_and_segmented():
    _, _, held = generate_synthetic(ImbalanceSpec((5, 1, 2)), 4, 2.0, seed=3, heldout_runs_per_class=6)
    # balanced by run count; each run length is in [30, 60]
    changes = np.flatnonzero(np.diff(held.labels) != 0)
    runs = np.diff(np.r_[0, changes + 1, len(held)])
    assert runs.min() >= 30
    assert held.segment_ids is not None and held.segment_ids.shape == held.labels.shape
    assert np.all(np.diff(held.segment_ids) >= 0)


def test_same_seed_bit_identical():
    a = generate_synthetic(ImbalanceSpec(), 16, 2.5, seed=9)
    b = generate_synthetic(ImbalanceSpec(), 16, 2.5, seed=9)
    for x, y in zip(a, b):
        assert x.features.tobytes() == y.features.tobytes()
    c = generate_synthetic(ImbalanceSpec(), 16, 2.5, seed=10)
    assert a[0].features.tobytes() != c[0].features.tobytes()


def test_class_means_at_requested_distance():
    means = class_means(5, 7, 3.5, np.random.default_rng(0))
    np.testing.assert_allclose(np.linalg.norm(means, axis=1), 3.5, rtol=1e-12)


@pytest.mark.parametrize("kwargs", [dict(d=1), dict(class_sep=0.0), dict(class_sep=-1.0)])
def test_invalid_generation(kwargs):
    args = dict(spec=ImbalanceSpec((3, 3)), d=4, class_sep=1.0, seed=0) | kwargs
    with pytest.raises(ConfigError):
        generate_synthetic(**args)


def test_invalid_spec():
    with pytest.raises(ConfigError):
        ImbalanceSpec((5, 0, 3))


def test_well_separated_clusters_are_learnable():
    # calibration point: class_sep=8, noise 1, K=2 -> supervised probe >= 0.95 accuracy
    lab, unl, held = generate_synthetic(ImbalanceSpec((40, 40)), 2, 8.0, seed=0, n_unlabeled=10)
    cfg = TrainConfig(use_unlabeled=False, lambda2=0.0, threshold_mode="fixed", epochs=3, steps_per_epoch=100, lr=5e-3)
    result = train_run(cfg, Pools(lab, unl, held))
    accuracy = np.mean(result.final_predictions == held.labels)
    assert accuracy >= 0.95


class TestBalancedSample:
    def _labeled(self, counts):
        y = np.repeat(np.arange(len(counts)), counts)
        return Dataset(np.arange(y.size, dtype=float)[:, None], y, len(counts))

    def test_downsamples_majority(self):
        out = balanced_sample(self._labeled([100, 10]), 10, np.random.default_rng(0))
        np.testing.assert_array_equal(out.class_counts(), [10, 10])
        # minority drawn without replacement when it exactly fits
        minority = out.features[out.labels == 1, 0]
        assert len(set(minority)) == 10

    def test_replacement_for_small_class(self):
        out = balanced_sample(self._labeled([30, 10]), 20, np.random.default_rng(0))
        minority = out.features[out.labels == 1, 0]
        assert minority.size == 20 and len(set(minority)) < 20

    def test_empty_class_is_error(self):
        ds = Dataset(np.zeros((3, 1)), np.array([0, 0, 2]), 3)
        with pytest.raises(ConfigError):
            balanced_sample(ds, 2, np.random.default_rng(0))

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(1, 40), min_size=2, max_size=6), st.integers(1, 30), st.integers(0, 2**31))
    def test_histogram_exactly_uniform(self, counts, n, seed):
        out = balanced_sample(self._labeled(counts), n, np.random.default_rng(seed))
        hist = np.zeros(len(counts), dtype=int)
        for lab in out.labels:
            hist[lab] += 1
        assert hist.tolist() == [n] * len(counts)


class TestAugment:
    def test_weak_zero_sigma_is_identity(self):
        x = np.array([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(weak_augment(x, AugmentConfig(0.0, 0.0, 0.0), np.random.default_rng(0)), x)

    def test_strong_zero_is_identity(self):
        x = np.array([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(strong_augment(x, AugmentConfig(0.0, 0.0, 0.0), np.random.default_rng(0)), x)

    def test_strong_full_dropout_zeroes(self):
        x = np.array([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(strong_augment(x, AugmentConfig(0.1, 0.5, 1.0), np.random.default_rng(0)), 0.0)

    def test_seeded(self):
        cfg = AugmentConfig()
        x = np.ones(8)
        a = strong_augment(x, cfg, np.random.default_rng(4))
        b = strong_augment(x, cfg, np.random.default_rng(4))
        assert a.tobytes() == b.tobytes()
        assert weak_augment(x, cfg, np.random.default_rng(4)).tobytes() == weak_augment(x, cfg, np.random.default_rng(4)).tobytes()

    def test_weak_noise_std_monte_carlo(self):
        sigma = 0.3
        x = np.zeros((100_000, 3)) + np.array([1.0, -1.0, 5.0])
        diff = weak_augment(x, AugmentConfig(sigma, sigma, 0.0), np.random.default_rng(0)) - x
        np.testing.assert_allclose(diff.std(axis=0), sigma, rtol=0.02)

    def test_dropout_fraction_monte_carlo(self):
        x = np.full((100_000, 4), 3.0)
        out = strong_augment(x, AugmentConfig(0.0, 0.0, 0.2), np.random.default_rng(1))
        assert np.mean(out == 0.0) == pytest.approx(0.2, rel=0.02)

    def test_config_ordering_enforced(self):
        with pytest.raises(ConfigError):
            AugmentConfig(weak_noise_sigma=1.0, strong_noise_sigma=0.5)
        with pytest.raises(ConfigError):
            AugmentConfig(strong_dropout_prob=1.5)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 20), st.integers(0, 2**31))
    def test_preserve_shape_and_finiteness(self, d, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((3, d))
        for fn in (weak_augment, strong_augment):
            out = fn(x, AugmentConfig(), rng)
            assert out.shape == x.shape and np.all(np.isfinite(out))

    def test_views_stay_near_own_class_mean(self):
        # expected squared distance of each view to every class mean, averaged over
        # 200 augmentation draws per point
        cfg = AugmentConfig()
        k, d = 4, 16
        means = class_means(k, d, 4.0, np.random.default_rng(0))
        rng = np.random.default_rng(1)
        y = rng.integers(0, k, 300)
        x = means[y] + rng.standard_normal((300, d))
        for fn in (weak_augment, strong_augment):
            views = fn(np.repeat(x[:, None, :], 200, axis=1), cfg, rng)
            sq = ((views[:, :, None, :] - means[None, None]) ** 2).sum(-1).mean(axis=1)
            assert np.mean(sq.argmin(axis=1) == y) > 0.9


def test_views_agree_with_raw_nearest_mean_at_benchmark_separation():
    cfg = AugmentConfig()
    means = class_means(4, 16, 2.5, np.random.default_rng(0))
    rng = np.random.default_rng(2)
    y = rng.integers(0, 4, 500)
    x = means[y] + rng.standard_normal((500, 16))
    raw = ((x[:, None, :] - means[None]) ** 2).sum(-1).argmin(axis=1)
    for fn in (weak_augment, strong_augment):
        views = fn(np.repeat(x[:, None, :], 200, axis=1), cfg, rng)
        sq = ((views[:, :, None, :] - means[None, None]) ** 2).sum(-1).mean(axis=1)
        assert np.mean(sq.argmin(axis=1) == raw) > 0.95


def test_csv_round_trip(tmp_path):
    lab, unl, _ = generate_synthetic(ImbalanceSpec((4, 2)), 3, 2.0, seed=0, n_unlabeled=5)
    save_csv(lab, tmp_path / "lab.csv")
    back = load_csv(tmp_path / "lab.csv", class_count=2)
    assert back.features.tobytes() == lab.features.tobytes()
    np.testing.assert_array_equal(back.labels, lab.labels)
    header = (tmp_path / "lab.csv").read_text().splitlines()[0]
    assert header == "x0,x1,x2,label"

    save_csv(unl, tmp_path / "unl.csv")
    back = load_csv(tmp_path / "unl.csv", class_count=2)
    assert back.labels is None
    assert back.features.tobytes() == unl.features.tobytes()
