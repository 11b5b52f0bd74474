import math

import numpy as np
import pytest

from concm import rng
from concm.augment import (ClassStats, PrototypeRepository, SampleCounts,
                           class_statistics, novel_covariance, sample_augmented,
                           shot_variance, transfer_weights)
from concm.data import FeatureSet
from concm.errors import (DegenerateInput, InsufficientSamples, InvalidConfig,
                          InvalidStats)


def test_two_point_statistics():
    fs = FeatureSet(features=np.array([[0.0, 0.0], [2.0, 2.0]]),
                    labels=np.array([0, 0]), class_names=("c",))
    stats = class_statistics(fs)[0]
    np.testing.assert_allclose(stats.mean, [1.0, 1.0])
    np.testing.assert_allclose(stats.cov_diag, [1.0, 1.0])  # population variance
    assert stats.exact


def test_constant_class_zero_variance():
    fs = FeatureSet(features=np.ones((5, 3)), labels=np.zeros(5, dtype=int),
                    class_names=("c",))
    np.testing.assert_allclose(class_statistics(fs)[0].cov_diag, 0.0)


def test_statistics_recover_planted_covariance():
    true_cov = np.array([0.5, 1.0, 2.0, 0.25])
    gen = rng.stream(14, "cov-fixture")
    feats = 3.0 + rng.gaussian(gen, (600, 4)) * np.sqrt(true_cov)
    fs = FeatureSet(features=feats, labels=np.zeros(600, dtype=int),
                    class_names=("c",))
    stats = class_statistics(fs)[0]
    assert np.all(np.abs(stats.cov_diag - true_cov) <= 0.1 * true_cov)


def test_insufficient_samples():
    fs = FeatureSet(features=np.ones((1, 2)), labels=np.array([0]),
                    class_names=("c",))
    with pytest.raises(InsufficientSamples):
        class_statistics(fs)


def test_shot_variance_single_shot_is_zero():
    np.testing.assert_array_equal(shot_variance(np.ones((1, 4))), np.zeros(4))


def base_fixture():
    return [
        ClassStats(0, "b0", np.array([1.0, 0.0]), np.array([1.0, 1.0]), True),
        ClassStats(1, "b1", np.array([0.0, 1.0]), np.array([2.0, 0.5]), True),
    ]


def test_transfer_weights_sharpness():
    # cosines (1, 0) at gamma = 16: weights e^16/(e^16+1) and 1/(e^16+1)
    w = transfer_weights(np.array([2.0, 0.0]), base_fixture(), gamma=16.0)
    expected_small = 1.0 / (math.exp(16.0) + 1.0)
    assert w[0] == pytest.approx(1.0 - expected_small, rel=1e-12)
    assert w[1] == pytest.approx(expected_small, rel=1e-9)
    assert w.sum() == pytest.approx(1.0)


def test_transfer_weights_uniform_for_equal_cosines():
    base = base_fixture()
    p = np.array([1.0, 1.0])
    w = transfer_weights(p, base, gamma=16.0)
    np.testing.assert_allclose(w, [0.5, 0.5])


def test_transfer_weights_degenerate_prototype():
    with pytest.raises(DegenerateInput):
        transfer_weights(np.zeros(2), base_fixture(), gamma=16.0)


def test_novel_covariance_arithmetic():
    base = base_fixture()
    w = np.array([0.5, 0.5])
    # weighted base sum = (1.5, 0.75); shot cov (1, 1); beta 0.6
    out = novel_covariance(np.array([1.0, 1.0]), base, w, beta=0.6)
    np.testing.assert_allclose(out, 0.6 * np.array([2.5, 1.75]))


def test_novel_covariance_single_shot_positive():
    base = base_fixture()
    w = np.array([1.0, 0.0])
    out = novel_covariance(np.zeros(2), base, w, beta=0.6)
    assert np.all(out > 0.0)


def test_novel_covariance_errors():
    base = base_fixture()
    with pytest.raises(InvalidConfig):
        novel_covariance(np.ones(2), base, np.array([1.0, 0.0]), beta=0.0)
    with pytest.raises(InvalidStats):
        novel_covariance(np.array([-1.0, 0.0]), base, np.array([1.0, 0.0]),
                         beta=0.6)


def repo_fixture():
    repo = PrototypeRepository()
    repo.add(ClassStats(0, "b0", np.array([5.0, -3.0]), np.zeros(2), True))
    repo.add(ClassStats(1, "n0", np.array([0.0, 2.0]), np.array([4.0, 1.0]),
                        False))
    return repo


def test_sampling_zero_covariance_returns_mean():
    repo = repo_fixture()
    fs = sample_augmented(repo, SampleCounts(base=10, novel=5), seed=0)
    rows = fs.features[fs.labels == 0]
    assert rows.shape == (10, 2)
    np.testing.assert_array_equal(rows, np.tile([5.0, -3.0], (10, 1)))


def test_sampling_counts_and_names():
    repo = repo_fixture()
    fs = sample_augmented(repo, SampleCounts(), seed=0)
    assert fs.class_names == ("b0", "n0")
    assert (fs.labels == 0).sum() == 100 and (fs.labels == 1).sum() == 50


def test_sampling_clt_mean_bound():
    repo = PrototypeRepository()
    cov = np.array([4.0, 1.0, 0.25])
    repo.add(ClassStats(0, "c", np.array([1.0, -2.0, 0.5]), cov, True))
    fs = sample_augmented(repo, SampleCounts(base=10000, novel=1), seed=3)
    err = np.abs(fs.features.mean(axis=0) - repo.get(0).mean)
    assert np.all(err <= 3.0 * np.sqrt(cov) / math.sqrt(10000))


def test_resampling_deterministic_per_epoch():
    repo = repo_fixture()
    a = sample_augmented(repo, SampleCounts(), seed=5, epoch=2)
    b = sample_augmented(repo, SampleCounts(), seed=5, epoch=2)
    assert np.array_equal(a.features, b.features)
    c = sample_augmented(repo, SampleCounts(), seed=5, epoch=3)
    assert not np.array_equal(a.features, c.features)


def test_negative_stats_rejected():
    with pytest.raises(InvalidStats):
        ClassStats(0, "c", np.zeros(2), np.array([-0.1, 1.0]), True)


def test_repository_ordering_enforced():
    from concm.errors import MissingClass
    repo = PrototypeRepository()
    with pytest.raises(MissingClass):
        repo.add(ClassStats(3, "c", np.zeros(2), np.zeros(2), True))


def test_mean_and_covariance_similarity_correlate_on_benchmark():
    # classes sharing attributes have similar means and similar variances
    from concm.synth import GenConfig, generate_benchmark
    bench = generate_benchmark(GenConfig(seed=1))
    names = sorted(bench.truth)
    means = np.array([bench.truth[n].mean for n in names])
    covs = np.array([bench.truth[n].cov_diag for n in names])
    means_n = means / np.linalg.norm(means, axis=1, keepdims=True)
    covs_n = covs / np.linalg.norm(covs, axis=1, keepdims=True)
    mc = (means_n @ means_n.T)[np.triu_indices(len(names), k=1)]
    cc = (covs_n @ covs_n.T)[np.triu_indices(len(names), k=1)]
    r = np.corrcoef(mc, cc)[0, 1]
    assert r > 0.0
