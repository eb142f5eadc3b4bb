import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.stats import kstest

from ctclust import errors
from ctclust.outcomes import GAUSSIAN, POISSON
from ctclust.simulate import builtin_example_config, generate_dataset


def test_preset_parameters():
    cfg = builtin_example_config("ex1-poisson", n_obs=50)
    assert len(cfg.clusters) == 3
    assert [c.n_subjects for c in cfg.clusters] == [1000, 1000, 1000]
    assert cfg.family == POISSON
    assert_allclose(cfg.clusters[0].outcome.state_params[:, 0], np.exp([-2.0, 1.2, 3.0]))
    assert_allclose(cfg.clusters[0].gen.rates[0], [-2.5, 2.0, 0.5])
    assert_allclose(cfg.clusters[2].gen.rates[2], [0.01, 0.10, -0.11])
    assert_allclose(cfg.clusters[1].pi, [0.3, 0.5, 0.2])
    assert cfg.level_probs is None

    g = builtin_example_config("ex1-gaussian", n_obs=50)
    assert g.family == GAUSSIAN
    assert_allclose(g.clusters[1].outcome.state_params[:, 0], [-5.5, 0.5, 5.5])
    assert g.clusters[0].outcome.gaussian_sigma == 1.0

    q_only = builtin_example_config("ex2", n_obs=100, sigma=0.5)
    assert_allclose(q_only.clusters[2].outcome.state_params[:, 0], [-4.0, 0.0, 5.0])
    assert_allclose(q_only.clusters[2].pi, [0.5, 0.4, 0.1])
    assert q_only.clusters[1].outcome.gaussian_sigma == 0.5

    cov = builtin_example_config("ex3", n_obs=100)
    assert [c.n_subjects for c in cov.clusters] == [300, 500, 200]
    assert_allclose(cov.level_probs, [0.25, 0.25, 0.5])
    # level-1 cells are the plain intercept rates; level-2 adds its effect
    assert_allclose(cov.clusters[0].outcome.state_params[:, 0], np.exp([-2.0, 1.2, 3.0]))
    assert_allclose(cov.clusters[0].outcome.state_params[:, 1], np.exp([-2.3, 1.2, 3.0]))
    assert_allclose(cov.clusters[1].outcome.state_params[:, 2], np.exp([-1.1, 1.0, 2.1]))


def test_unknown_preset():
    with pytest.raises(errors.UnknownPreset):
        builtin_example_config("nope", n_obs=10)


def test_subject_count_overrides():
    cfg = builtin_example_config("ex1-poisson", n_obs=10, subjects_per_cluster=50)
    assert sum(c.n_subjects for c in cfg.clusters) == 150
    cfg2 = builtin_example_config("ex3", n_obs=10, subjects_per_cluster=(30, 50, 20))
    assert [c.n_subjects for c in cfg2.clusters] == [30, 50, 20]


def test_generated_shapes_and_times():
    cfg = builtin_example_config("ex1-poisson", n_obs=12, subjects_per_cluster=5)
    ds, truth = generate_dataset(cfg, np.random.default_rng(70))
    assert len(ds) == 15
    for s in ds.subjects:
        assert s.times[0] == 0.0
        assert np.all(np.diff(s.times) > 0)
        assert s.times[-1] <= cfg.horizon
        assert s.n_obs == 12
        assert np.all(s.outcomes >= 0)
        assert np.all(s.outcomes == np.round(s.outcomes))
    assert sorted(truth["labels"].values()) == [1] * 5 + [2] * 5 + [3] * 5
    assert set(truth["params"].keys()) == {"1", "2", "3"}


def test_single_observation_at_zero():
    cfg = builtin_example_config("ex1-gaussian", n_obs=1, subjects_per_cluster=2)
    ds, _ = generate_dataset(cfg, np.random.default_rng(71))
    for s in ds.subjects:
        assert s.times.shape == (1,)
        assert s.times[0] == 0.0


def test_fixed_seed_reproducibility():
    cfg = builtin_example_config("ex3", n_obs=6, subjects_per_cluster=(4, 3, 2))
    ds1, t1 = generate_dataset(cfg, np.random.default_rng(72))
    ds2, t2 = generate_dataset(cfg, np.random.default_rng(72))
    for a, b in zip(ds1.subjects, ds2.subjects):
        assert np.array_equal(a.times, b.times)
        assert np.array_equal(a.outcomes, b.outcomes)
        assert np.array_equal(a.levels, b.levels)
    assert t1["labels"] == t2["labels"]


def test_first_state_frequencies_match_pi():
    cfg = builtin_example_config(
        "ex1-poisson", n_obs=1, subjects_per_cluster=(10_000, 1, 1), horizon=0.01
    )
    ds, truth = generate_dataset(cfg, np.random.default_rng(73))
    firsts = np.array([truth["obs_states"][s.subject_id][0] for s in ds.subjects[:10_000]])
    pi = cfg.clusters[0].pi
    n = 10_000
    for k in range(3):
        p_hat = np.mean(firsts == k + 1)
        assert abs(p_hat - pi[k]) <= 3 * np.sqrt(pi[k] * (1 - pi[k]) / n) + 1e-9


def test_observation_times_uniform():
    cfg = builtin_example_config("ex1-poisson", n_obs=21, subjects_per_cluster=(5000, 1, 1))
    ds, _ = generate_dataset(cfg, np.random.default_rng(74))
    pooled = np.concatenate([s.times[1:] for s in ds.subjects[:5000]]) / cfg.horizon
    assert pooled.size == 100_000
    assert kstest(pooled, "uniform").pvalue > 0.01


def test_outcome_means_match_cells():
    cfg = builtin_example_config("ex3", n_obs=40, subjects_per_cluster=(400, 1, 1))
    ds, truth = generate_dataset(cfg, np.random.default_rng(75))
    cells = np.asarray(truth["params"]["1"]["theta_cells"])
    tot = np.zeros_like(cells)
    cnt = np.zeros_like(cells)
    for s in ds.subjects[:400]:
        st = np.array(truth["obs_states"][s.subject_id]) - 1
        np.add.at(tot, (st, s.levels), s.outcomes)
        np.add.at(cnt, (st, s.levels), 1.0)
    seen = cnt > 200
    assert seen.sum() >= 5
    means = tot[seen] / cnt[seen]
    se = np.sqrt(cells[seen] / cnt[seen])
    assert np.all(np.abs(means - cells[seen]) < 4 * se)


def test_latent_paths_recorded():
    cfg = builtin_example_config("ex1-gaussian", n_obs=5, subjects_per_cluster=(2, 1, 1))
    ds, truth = generate_dataset(cfg, np.random.default_rng(76))
    sid = ds.subjects[0].subject_id
    path = truth["paths"][sid]
    assert len(path["states"]) == len(path["jump_times"]) + 1
    assert all(1 <= s <= 3 for s in path["states"])
    assert truth["obs_states"][sid][0] == path["states"][0]
