import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import quad
from scipy.special import gammaln

from ctclust import errors
from ctclust.outcomes import (
    GAUSSIAN,
    POISSON,
    OutcomeModel,
    OutcomeSuffStats,
    PriorSpec,
    accumulate_suffstats,
    cluster_joint_marginal,
    marginal_loglik_pi,
    marginal_loglik_q,
    marginal_loglik_theta,
    outcome_log_density,
    sample_cluster_params,
    subject_marginal_loglik,
    subject_suffstats,
)
from ctclust.paths import PathStats


def test_poisson_log_density_frozen():
    model = OutcomeModel(POISSON, np.exp([[-2.0], [1.2], [3.0]]))
    assert_allclose(outcome_log_density(model, 0, 0), -np.exp(-2.0), rtol=1e-12)
    m1 = OutcomeModel(POISSON, [[1.0]])
    assert_allclose(outcome_log_density(m1, 3, 0), -1.0 - np.log(6.0), rtol=1e-12)


def test_gaussian_log_density_frozen():
    model = OutcomeModel(GAUSSIAN, [[0.0]], gaussian_sigma=1.0)
    assert_allclose(outcome_log_density(model, 0.0, 0), -0.5 * np.log(2 * np.pi), rtol=1e-12)


def test_poisson_negative_count():
    model = OutcomeModel(POISSON, [[1.0]])
    with pytest.raises(errors.NegativeCount):
        outcome_log_density(model, -1, 0)
    with pytest.raises(errors.NegativeCount):
        model.log_density_grid([0.5], [0])


def test_log_density_grid_levels():
    model = OutcomeModel(POISSON, [[1.0, 2.0], [3.0, 4.0]])
    grid = model.log_density_grid([1, 1], [0, 1])
    assert_allclose(grid[0, 0], -1.0)  # rate 1, o=1: log(1) - 1
    assert_allclose(grid[1, 1], np.log(4.0) - 4.0)


def test_coefficients_log_link_contrasts():
    rates = np.exp([[1.0, 1.5, 0.2], [2.0, 2.0, 2.5]]).T  # (K=3? no: K rows)
    model = OutcomeModel(POISSON, np.exp([[1.0, 1.5], [2.0, 2.3]]))
    coef = model.coefficients()
    assert_allclose(coef[0], [1.0, 2.0], atol=1e-12)
    assert_allclose(coef[1], [0.5, 0.3], atol=1e-12)


def prior_poisson(k=2, L=1, **kw):
    return PriorSpec.build(POISSON, k, L, **kw)


def stats_with(prior, **kw):
    st = OutcomeSuffStats.zeros(prior.n_states, prior.n_levels)
    for key, val in kw.items():
        setattr(st, key, np.asarray(val, dtype=float) if key != "log_fact" else float(val))
    return st


def test_subject_suffstats_tally():
    st = subject_suffstats(
        outcomes=[2, 3],
        levels=[0, 0],
        states=[0, 0],
        path_jumps=np.zeros((2, 2)),
        path_holding=np.zeros(2),
        n_states=2,
    )
    assert st.n_obs[0, 0] == 2
    assert st.obs_sum[0, 0] == 5
    assert st.first[0] == 1
    assert_allclose(st.log_fact, gammaln(3) + gammaln(4))


def test_accumulate_additivity():
    rng = np.random.default_rng(40)
    prior = prior_poisson(k=2, L=2)
    subs, states, paths = [], [], []
    for _ in range(6):
        T = rng.integers(2, 6)
        subs.append((rng.poisson(3.0, T), rng.integers(0, 2, T)))
        states.append(rng.integers(0, 2, T))
        paths.append(PathStats(rng.random((2, 2)), rng.random(2), 1.0))
    whole = accumulate_suffstats(subs, states, paths, prior)
    part1 = accumulate_suffstats(subs[:2], states[:2], paths[:2], prior)
    part2 = accumulate_suffstats(subs[2:], states[2:], paths[2:], prior)
    part1.add(part2)
    for name in ("n_obs", "obs_sum", "obs_sumsq", "first", "jumps", "holding"):
        assert_allclose(getattr(part1, name), getattr(whole, name), rtol=1e-12)
    assert_allclose(part1.log_fact, whole.log_fact, rtol=1e-12)
    with pytest.raises(errors.MisalignedInputs):
        accumulate_suffstats(subs, states[:-1], paths, prior)


def test_theta_marginal_simple_half():
    # Gamma(1,1) prior, no others, one o=0 observation: integral e^-t * e^-t dt = 1/2
    prior = prior_poisson(k=1 + 1)  # K=2, only cell (0,0) touched
    subj = stats_with(prior, n_obs=[[1.0], [0.0]], obs_sum=[[0.0], [0.0]])
    others = OutcomeSuffStats.zeros(2, 1)
    assert_allclose(marginal_loglik_theta(others, subj, prior), np.log(0.5), rtol=1e-12)


def test_theta_marginal_empty_subject_is_one():
    prior = prior_poisson()
    z = OutcomeSuffStats.zeros(2, 1)
    assert marginal_loglik_theta(z, z, prior) == 0.0
    assert subject_marginal_loglik(z, z, prior) == pytest.approx(
        marginal_loglik_pi(z, z, prior)
    )


def quad_ratio_oracle(loglik_fn, prior_pdf, others_obs, subj_obs, lo, hi):
    """log of  quad(prior * L_others * L_subj) / quad(prior * L_others);
    independent of any posterior-updating rule."""

    def dens_others(t):
        return prior_pdf(t) * np.exp(loglik_fn(t, others_obs))

    def dens_both(t):
        return prior_pdf(t) * np.exp(loglik_fn(t, others_obs) + loglik_fn(t, subj_obs))

    num, _ = quad(dens_both, lo, hi, epsabs=0, epsrel=1e-11, limit=400)
    den, _ = quad(dens_others, lo, hi, epsabs=0, epsrel=1e-11, limit=400)
    return np.log(num) - np.log(den)


def test_theta_marginal_poisson_quadrature():
    rng = np.random.default_rng(41)
    for _ in range(50):
        a, b = rng.uniform(0.5, 4.0, size=2)
        prior = prior_poisson(theta_shape=a, theta_rate=b)
        n_o = rng.integers(0, 4)
        n_s = rng.integers(1, 4)
        obs_o = rng.poisson(2.0, n_o)
        obs_s = rng.poisson(2.0, n_s)
        others = stats_with(
            prior,
            n_obs=[[n_o], [0]],
            obs_sum=[[obs_o.sum()], [0]],
        )
        subj = stats_with(
            prior,
            n_obs=[[n_s], [0]],
            obs_sum=[[obs_s.sum()], [0]],
            log_fact=gammaln(obs_s + 1.0).sum(),
        )

        def loglik(t, obs):
            return sum(o * np.log(t) - t - gammaln(o + 1.0) for o in obs)

        def prior_pdf(t):
            return b**a / np.exp(gammaln(a)) * t ** (a - 1) * np.exp(-b * t)

        oracle = quad_ratio_oracle(loglik, prior_pdf, obs_o, obs_s, 1e-12, 60.0)
        got = marginal_loglik_theta(others, subj, prior)
        assert_allclose(got, oracle, rtol=1e-6)


def test_theta_marginal_gaussian_quadrature():
    rng = np.random.default_rng(42)
    for _ in range(50):
        m0 = rng.uniform(-2, 2)
        s0 = rng.uniform(0.5, 3.0)
        sigma = rng.uniform(0.4, 2.0)
        prior = PriorSpec.build(
            GAUSSIAN, 2, theta_mean=m0, theta_sd=s0, gaussian_sigma=sigma
        )
        obs_o = rng.normal(1.0, sigma, rng.integers(0, 4))
        obs_s = rng.normal(0.0, sigma, rng.integers(1, 4))
        others = stats_with(
            prior,
            n_obs=[[len(obs_o)], [0]],
            obs_sum=[[obs_o.sum()], [0]],
            obs_sumsq=[[(obs_o**2).sum()], [0]],
        )
        subj = stats_with(
            prior,
            n_obs=[[len(obs_s)], [0]],
            obs_sum=[[obs_s.sum()], [0]],
            obs_sumsq=[[(obs_s**2).sum()], [0]],
        )

        def loglik(t, obs):
            return sum(-0.5 * ((o - t) / sigma) ** 2 - np.log(sigma) - 0.5 * np.log(2 * np.pi) for o in obs)

        def prior_pdf(t):
            return np.exp(-0.5 * ((t - m0) / s0) ** 2) / (s0 * np.sqrt(2 * np.pi))

        oracle = quad_ratio_oracle(loglik, prior_pdf, obs_o, obs_s, -40.0, 40.0)
        got = marginal_loglik_theta(others, subj, prior)
        assert_allclose(got, oracle, rtol=1e-6)


def test_pi_marginal_half_and_rising_factorial_oracle():
    prior = prior_poisson(k=2, pi_conc=1.0)
    subj = stats_with(prior, first=[1.0, 0.0])
    z = OutcomeSuffStats.zeros(2, 1)
    assert_allclose(marginal_loglik_pi(z, subj, prior), np.log(0.5), rtol=1e-12)
    # K=3 with multi-count subject blocks: independent rising-factorial form
    rng = np.random.default_rng(43)
    for _ in range(20):
        conc = rng.uniform(0.5, 3.0, size=3)
        prior3 = PriorSpec.build(POISSON, 3, pi_conc=conc)
        others = stats_with(prior3, first=rng.integers(0, 5, 3).astype(float))
        subj3 = stats_with(prior3, first=rng.integers(0, 4, 3).astype(float))
        a = conc + others.first
        oracle = 0.0
        for k in range(3):
            for i in range(int(subj3.first[k])):
                oracle += np.log(a[k] + i)
        for i in range(int(subj3.first.sum())):
            oracle -= np.log(a.sum() + i)
        assert_allclose(marginal_loglik_pi(others, subj3, prior3), oracle, rtol=1e-10)


def test_pi_marginal_symmetric():
    prior = PriorSpec.build(POISSON, 3, pi_conc=2.0)
    z = OutcomeSuffStats.zeros(3, 1)
    vals = []
    for k in range(3):
        first = np.zeros(3)
        first[k] = 1.0
        subj = stats_with(prior, first=first)
        vals.append(marginal_loglik_pi(z, subj, prior))
    assert_allclose(vals, vals[0], rtol=1e-14)


def test_q_marginal_quarter_and_quadrature():
    prior = prior_poisson(k=2, q_shape=1.0, q_rate=1.0)
    subj = stats_with(prior, jumps=[[0.0, 1.0], [0.0, 0.0]], holding=[1.0, 0.0])
    z = OutcomeSuffStats.zeros(2, 1)
    assert_allclose(marginal_loglik_q(z, subj, prior), np.log(0.25), rtol=1e-12)
    # zero path statistics: marginal 1
    assert marginal_loglik_q(z, z, prior) == 0.0
    rng = np.random.default_rng(44)
    for _ in range(50):
        a, b = rng.uniform(0.5, 4.0, size=2)
        prior1 = PriorSpec.build(POISSON, 2, q_shape=a, q_rate=b)
        n_o, r_o = rng.integers(0, 4), rng.uniform(0, 3)
        n_s, r_s = rng.integers(0, 4), rng.uniform(0.1, 3)
        others = stats_with(prior1, jumps=[[0, n_o], [0, 0]], holding=[r_o, 0.0])
        subj1 = stats_with(prior1, jumps=[[0, n_s], [0, 0]], holding=[r_s, 0.0])

        def loglik(t, obs):
            n, r = obs
            return n * np.log(t) - t * r

        def prior_pdf(t):
            return b**a / np.exp(gammaln(a)) * t ** (a - 1) * np.exp(-b * t)

        oracle = quad_ratio_oracle(loglik, prior_pdf, (n_o, r_o), (n_s, r_s), 1e-12, 80.0)
        got = marginal_loglik_q(others, subj1, prior1)
        assert_allclose(got, oracle, rtol=1e-6)


def random_stats(rng, prior):
    k, L = prior.n_states, prior.n_levels
    st = OutcomeSuffStats.zeros(k, L)
    st.n_obs = rng.integers(0, 5, (k, L)).astype(float)
    st.obs_sum = (st.n_obs * rng.uniform(0, 4, (k, L))).round()
    st.obs_sumsq = st.obs_sum * rng.uniform(1, 3, (k, L))
    st.log_fact = float(rng.uniform(0, 2)) if prior.family == POISSON else 0.0
    st.first = np.zeros(k)
    st.first[rng.integers(0, k)] = 1.0
    st.jumps = rng.integers(0, 4, (k, k)).astype(float)
    np.fill_diagonal(st.jumps, 0.0)
    st.holding = rng.uniform(0.1, 4.0, k)
    return st


@pytest.mark.parametrize("family", [POISSON, GAUSSIAN])
def test_prefix_product_telescopes_to_joint(family):
    rng = np.random.default_rng(45)
    for _ in range(10):
        prior = PriorSpec.build(
            family,
            3,
            2,
            pi_conc=rng.uniform(0.5, 2.0),
            q_shape=rng.uniform(0.5, 2.0),
            q_rate=rng.uniform(0.5, 2.0),
            theta_shape=rng.uniform(0.5, 2.0),
            theta_rate=rng.uniform(0.5, 2.0),
            theta_mean=0.5,
            theta_sd=2.0,
            gaussian_sigma=0.8,
        )
        members = [random_stats(rng, prior) for _ in range(4)]
        prefix = OutcomeSuffStats.zeros(3, 2)
        total = 0.0
        for st in members:
            total += subject_marginal_loglik(prefix, st, prior)
            prefix.add(st)
        joint = cluster_joint_marginal(prefix, prior)
        assert_allclose(total, joint, atol=1e-8)
        # exchangeability: a permuted prefix order gives the same product
        order = rng.permutation(4)
        prefix2 = OutcomeSuffStats.zeros(3, 2)
        total2 = 0.0
        for i in order:
            total2 += subject_marginal_loglik(prefix2, members[i], prior)
            prefix2.add(members[i])
        assert_allclose(total2, joint, atol=1e-8)


def test_sample_cluster_params_prior_and_posterior_moments():
    rng = np.random.default_rng(46)
    prior = PriorSpec.build(POISSON, 2, q_shape=2.0, q_rate=4.0, theta_shape=3.0, theta_rate=1.5)
    z = OutcomeSuffStats.zeros(2, 1)
    n = 20_000
    qdraws = np.zeros(n)
    for i in range(n):
        params = sample_cluster_params(z, prior, rng)
        qdraws[i] = params.gen.rates[0, 1]
        assert abs(params.pi.sum() - 1.0) < 1e-12
    # prior mean a/b = 0.5, var a/b^2
    se = np.sqrt(2.0 / 16.0 / n)
    assert abs(qdraws.mean() - 0.5) < 4 * se
    st = stats_with(prior, jumps=[[0, 6], [2, 0]], holding=[3.0, 5.0])
    qdraws2 = np.array(
        [sample_cluster_params(st, prior, rng).gen.rates[0, 1] for i in range(n)]
    )
    lam, ups = 2.0 + 6.0, 4.0 + 3.0
    assert abs(qdraws2.mean() - lam / ups) < 4 * np.sqrt(lam / ups**2 / n)


def test_gaussian_model_requires_sigma():
    with pytest.raises(ValueError):
        OutcomeModel(GAUSSIAN, [[0.0]])
    with pytest.raises(ValueError):
        OutcomeModel(POISSON, [[-1.0]])
