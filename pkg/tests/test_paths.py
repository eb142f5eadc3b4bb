import numpy as np
import pytest
from numpy.testing import assert_allclose

from ctclust import errors
from ctclust.ctmc import stationary_distribution, validate_generator
from ctclust.paths import (
    PathStats,
    conditioned_stats_batch,
    path_log_likelihood,
    simulate_conditioned_path,
    simulate_forward_path,
    simulate_trajectory,
)

GEN3 = validate_generator(
    [
        [0.0, 2.0, 0.5],
        [0.5, 0.0, 1.0],
        [0.1, 0.9, 0.0],
    ]
)


def rejection_oracle(gen, delta, start, end, rng, n_target, n_max=400_000):
    """Forward-simulate and keep paths landing on `end`; independent of the
    conditioned sampler's forced-first-jump construction."""
    kept_jumps, kept_hold = [], []
    draws = 0
    while len(kept_jumps) < n_target and draws < n_max:
        draws += 1
        path = simulate_forward_path(gen, delta, start, rng)
        if path.end == end:
            kept_jumps.append(path.stats.jumps)
            kept_hold.append(path.stats.holding)
    assert len(kept_jumps) >= n_target, "oracle rejection rate unexpectedly high"
    return np.array(kept_jumps), np.array(kept_hold)


def assert_moments_match(a, b, sigmas, atol=1e-9):
    ma, mb = a.mean(axis=0), b.mean(axis=0)
    se = np.sqrt(a.var(axis=0) / a.shape[0] + b.var(axis=0) / b.shape[0])
    assert np.all(np.abs(ma - mb) <= sigmas * se + atol)


def test_forward_endpoint_distribution():
    # With state 1 absorbing, P(end=1 | start 0, delta) = 1 - exp(-delta).
    gen = validate_generator([[0.0, 1.0], [0.0, 0.0]])
    rng = np.random.default_rng(21)
    delta = 0.7
    n = 20_000
    ends = [simulate_forward_path(gen, delta, 0, rng).end for _ in range(n)]
    p_hat = np.mean(ends)
    p = 1 - np.exp(-delta)
    assert abs(p_hat - p) < 4 * np.sqrt(p * (1 - p) / n)


def test_forward_moments_absorbing_chain():
    # Same chain: E[N01] = 1 - exp(-d) and E[R0] = (1 - exp(-d)) / 1.
    gen = validate_generator([[0.0, 1.0], [0.0, 0.0]])
    rng = np.random.default_rng(22)
    delta = 1.3
    n = 30_000
    jumps = np.zeros(n)
    hold0 = np.zeros(n)
    for i in range(n):
        st = simulate_forward_path(gen, delta, 0, rng).stats
        jumps[i] = st.jumps[0, 1]
        hold0[i] = st.holding[0]
    expect = 1 - np.exp(-delta)
    assert abs(jumps.mean() - expect) < 4 * jumps.std() / np.sqrt(n)
    assert abs(hold0.mean() - expect) < 4 * hold0.std() / np.sqrt(n)


def test_long_run_occupancy_matches_stationary():
    rng = np.random.default_rng(23)
    pi = stationary_distribution(GEN3)
    total = np.zeros(3)
    span = 300.0
    for _ in range(30):
        total += simulate_forward_path(GEN3, span, 0, rng).stats.holding
    assert_allclose(total / total.sum(), pi, atol=0.02)


def test_trajectory_bookkeeping():
    rng = np.random.default_rng(24)
    times, states = simulate_trajectory(GEN3, 10.0, 2, rng)
    assert states[0] == 2
    assert len(times) == len(states) - 1
    assert all(t2 > t1 for t1, t2 in zip(times, times[1:]))
    assert all(a != b for a, b in zip(states, states[1:]))


def conditioned_invariants(stats, delta, start, end):
    assert_allclose(stats.holding.sum(), delta, rtol=1e-9)
    assert np.all(stats.holding >= 0)
    outflow = stats.jumps.sum(axis=1) - stats.jumps.sum(axis=0)
    expected = np.zeros_like(outflow)
    expected[start] += 1
    expected[end] -= 1
    assert_allclose(outflow, expected)


def test_conditioned_structural_invariants():
    rng = np.random.default_rng(25)
    for _ in range(300):
        start, end = rng.integers(0, 3, size=2)
        delta = float(rng.uniform(0.2, 3.0))
        st = simulate_conditioned_path(GEN3, delta, int(start), int(end), rng)
        conditioned_invariants(st, delta, start, end)


def test_conditioned_matches_rejection_oracle():
    rng = np.random.default_rng(26)
    delta = 1.0
    for start, end in [(0, 2), (1, 1), (2, 0)]:
        oj, oh = rejection_oracle(GEN3, delta, start, end, rng, 8_000)
        cj = np.zeros((8_000, 3, 3))
        ch = np.zeros((8_000, 3))
        for i in range(8_000):
            st = simulate_conditioned_path(GEN3, delta, start, end, rng)
            cj[i] = st.jumps
            ch[i] = st.holding
        assert_moments_match(cj.reshape(len(cj), -1), oj.reshape(len(oj), -1), 4)
        assert_moments_match(ch, oh, 4)


def test_uniformization_fallback_matches_oracle():
    # max_rejections=0 forces the exact bridge path.
    rng = np.random.default_rng(27)
    delta = 1.0
    for start, end in [(0, 1), (2, 2)]:
        oj, oh = rejection_oracle(GEN3, delta, start, end, rng, 8_000)
        cj = np.zeros((8_000, 3, 3))
        ch = np.zeros((8_000, 3))
        for i in range(8_000):
            st = simulate_conditioned_path(GEN3, delta, start, end, rng, max_rejections=0)
            conditioned_invariants(st, delta, start, end)
            cj[i] = st.jumps
            ch[i] = st.holding
        assert_moments_match(cj.reshape(len(cj), -1), oj.reshape(len(oj), -1), 4)
        assert_moments_match(ch, oh, 4)


def test_batch_matches_scalar_distribution():
    rng = np.random.default_rng(28)
    n = 12_000
    starts = np.full(n, 0)
    ends = np.full(n, 2)
    deltas = np.full(n, 1.4)
    bj, bh = conditioned_stats_batch(GEN3, deltas, starts, ends, rng)
    for i in range(0, n, 997):
        st = PathStats(bj[i], bh[i], 1.4)
        conditioned_invariants(st, 1.4, 0, 2)
    sj = np.zeros((n, 3, 3))
    sh = np.zeros((n, 3))
    for i in range(n):
        st = simulate_conditioned_path(GEN3, 1.4, 0, 2, rng)
        sj[i] = st.jumps
        sh[i] = st.holding
    assert_moments_match(bj.reshape(n, -1), sj.reshape(n, -1), 4)
    assert_moments_match(bh, sh, 4)


def test_batch_mixed_endpoints_and_fallback():
    rng = np.random.default_rng(29)
    n = 4_000
    starts = rng.integers(0, 3, size=n)
    ends = rng.integers(0, 3, size=n)
    deltas = rng.uniform(0.3, 2.0, size=n)
    bj, bh = conditioned_stats_batch(GEN3, deltas, starts, ends, rng, max_rejections=2)
    for i in range(n):
        st = PathStats(bj[i], bh[i], float(deltas[i]))
        conditioned_invariants(st, deltas[i], starts[i], ends[i])


def test_degenerate_intervals():
    rng = np.random.default_rng(30)
    st = simulate_conditioned_path(GEN3, 1e-13, 1, 1, rng)
    assert st.jumps.sum() == 0 and st.holding.sum() == 0
    with pytest.raises(errors.ImpossibleEndpoint):
        simulate_conditioned_path(GEN3, 1e-13, 0, 1, rng)
    gen = validate_generator([[0.0, 0.0], [1.0, 0.0]])
    with pytest.raises(errors.ImpossibleEndpoint):
        simulate_conditioned_path(gen, 1.0, 0, 1, rng)
    with pytest.raises(errors.ImpossibleEndpoint):
        conditioned_stats_batch(gen, [1.0], [0], [1], rng)


def test_path_log_likelihood_frozen_value():
    gen = validate_generator([[0.0, 2.0], [0.0, 0.0]])
    stats = PathStats(np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([0.5, 0.25]), 0.75)
    # N01 log q01 - q01 R0 = log 2 - 1; the zero-rate reverse channel adds 0.
    assert_allclose(path_log_likelihood(gen, stats), np.log(2.0) - 1.0, rtol=1e-12)


def test_path_log_likelihood_zero_rate_guard():
    gen = validate_generator([[0.0, 0.0], [1.0, 0.0]])
    stats = PathStats(np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([0.5, 0.5]), 1.0)
    with pytest.raises(errors.ZeroRateWithJump):
        path_log_likelihood(gen, stats)


def test_path_log_likelihood_matches_density_decomposition():
    # Against a direct per-sojourn product on a simulated trajectory.
    rng = np.random.default_rng(31)
    delta = 4.0
    times, states = simulate_trajectory(GEN3, delta, 0, rng)
    stats = PathStats.empty(3)
    q = GEN3.jump_rates()
    direct = 0.0
    prev_t = 0.0
    for i in range(1, len(states)):
        a, b = states[i - 1], states[i]
        dt = times[i - 1] - prev_t
        direct += np.log(GEN3.rates[a, b]) - q[a] * dt
        stats.holding[a] += dt
        stats.jumps[a, b] += 1
        prev_t = times[i - 1]
    direct += -q[states[-1]] * (delta - prev_t)
    stats.holding[states[-1]] += delta - prev_t
    stats.span = delta
    assert_allclose(path_log_likelihood(GEN3, stats), direct, rtol=1e-10)
