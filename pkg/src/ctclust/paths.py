"""Simulation of CTMC sample paths and their sufficient statistics.

The chain likelihood depends on a path only through the jump counts
``N[l, m]`` between states and the occupancy times ``R[l]`` per state, so
samplers here return those statistics rather than full trajectories.
Endpoint-conditioned sampling uses modified rejection sampling (the first
jump is drawn from a truncated exponential when the endpoints differ) and
switches to an exact uniformization bridge if an interval rejects too
many times.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .ctmc import GeneratorMatrix, transition_matrix
from .errors import (
    DimensionMismatch,
    ImpossibleEndpoint,
    SamplerExhausted,
    ZeroRateWithJump,
)

__all__ = [
    "PathStats",
    "SampledPath",
    "simulate_trajectory",
    "simulate_forward_path",
    "simulate_conditioned_path",
    "conditioned_stats_batch",
    "path_log_likelihood",
]

# Gaps at or below this width are treated as zero-length intervals.
ZERO_SPAN = 1e-12
DEFAULT_MAX_REJECTIONS = 10_000


@dataclass
class PathStats:
    """Sufficient statistics of a path over one or more intervals.

    Attributes
    ----------
    jumps : ndarray, shape (K, K)
        Integer-valued transition counts, zero diagonal.
    holding : ndarray, shape (K,)
        Time spent in each state; sums to ``span``.
    span : float
        Total elapsed time covered by the statistics.
    """

    jumps: np.ndarray
    holding: np.ndarray
    span: float

    @classmethod
    def empty(cls, k: int) -> "PathStats":
        return cls(np.zeros((k, k)), np.zeros(k), 0.0)

    def add(self, other: "PathStats") -> None:
        self.jumps += other.jumps
        self.holding += other.holding
        self.span += other.span


@dataclass
class SampledPath:
    """Forward-simulated path: endpoints plus sufficient statistics."""

    start: int
    end: int
    stats: PathStats


def _offdiagonal_cumsum(rates: np.ndarray) -> np.ndarray:
    off = rates.copy()
    np.fill_diagonal(off, 0.0)
    return np.cumsum(off, axis=1)


def _draw_destination(cum_row: np.ndarray, rng) -> int:
    u = rng.random() * cum_row[-1]
    return int(np.searchsorted(cum_row, u, side="right"))


def simulate_trajectory(gen: GeneratorMatrix, delta: float, start: int, rng):
    """Gillespie simulation over [0, delta] from ``start``.

    Returns ``(jump_times, states)`` where ``states[0] == start`` and
    ``states[i]`` is occupied from ``jump_times[i-1]`` (0 for i = 0).
    """
    q = gen.jump_rates()
    cum = _offdiagonal_cumsum(gen.rates)
    times: list[float] = []
    states = [int(start)]
    t = 0.0
    s = int(start)
    while q[s] > 0:
        t += rng.exponential(1.0 / q[s])
        if t >= delta:
            break
        s = _draw_destination(cum[s], rng)
        times.append(t)
        states.append(s)
    return times, states


def _stats_from_trajectory(k, delta, times, states) -> PathStats:
    stats = PathStats.empty(k)
    prev_t = 0.0
    for i in range(1, len(states)):
        stats.holding[states[i - 1]] += times[i - 1] - prev_t
        stats.jumps[states[i - 1], states[i]] += 1
        prev_t = times[i - 1]
    stats.holding[states[-1]] += delta - prev_t
    stats.span = delta
    return stats


def simulate_forward_path(gen: GeneratorMatrix, delta: float, start: int, rng) -> SampledPath:
    """Unconditioned path over [0, delta]; returns endpoints and statistics."""
    if delta <= ZERO_SPAN:
        return SampledPath(int(start), int(start), PathStats.empty(gen.dim))
    times, states = simulate_trajectory(gen, delta, start, rng)
    return SampledPath(int(start), states[-1], _stats_from_trajectory(gen.dim, delta, times, states))


def _truncated_first_jump(rate: float, delta: float, rng) -> float:
    # Inverse CDF of an Exp(rate) conditioned to land in (0, delta).
    u = rng.random()
    return -np.log1p(u * np.expm1(-rate * delta)) / rate


def simulate_conditioned_path(
    gen: GeneratorMatrix,
    delta: float,
    start: int,
    end: int,
    rng,
    max_rejections: int = DEFAULT_MAX_REJECTIONS,
) -> PathStats:
    """Path statistics conditioned on both endpoints.

    Modified rejection sampling: when ``start != end`` the first jump time
    is drawn from the exponential truncated to (0, delta), which makes the
    attempt feasible by construction; the remainder is plain forward
    simulation, accepted when it lands on ``end``. After ``max_rejections``
    failed attempts the exact uniformization bridge takes over.
    """
    start = int(start)
    end = int(end)
    if delta <= ZERO_SPAN:
        if start != end:
            raise ImpossibleEndpoint(f"zero-length interval cannot move {start} -> {end}")
        return PathStats.empty(gen.dim)
    q = gen.jump_rates()
    if start != end and q[start] <= 0:
        raise ImpossibleEndpoint(f"state {start} is absorbing, cannot reach {end}")
    cum = _offdiagonal_cumsum(gen.rates)
    for _ in range(max_rejections):
        stats = PathStats.empty(gen.dim)
        t = 0.0
        s = start
        if start != end:
            t = _truncated_first_jump(q[s], delta, rng)
            dest = _draw_destination(cum[s], rng)
            stats.holding[s] += t
            stats.jumps[s, dest] += 1
            s = dest
        while q[s] > 0:
            h = rng.exponential(1.0 / q[s])
            if t + h >= delta:
                break
            t += h
            stats.holding[s] += h
            dest = _draw_destination(cum[s], rng)
            stats.jumps[s, dest] += 1
            s = dest
        if s == end:
            stats.holding[s] += delta - t
            stats.span = delta
            return stats
    return _uniformized_bridge(gen, delta, start, end, rng)


def _uniformized_bridge(gen: GeneratorMatrix, delta: float, start: int, end: int, rng) -> PathStats:
    """Exact endpoint-conditioned draw via the uniformized jump chain."""
    k = gen.dim
    rates = gen.rates
    q = gen.jump_rates()
    mu = float(q.max())
    if mu <= 0:
        if start != end:
            raise ImpossibleEndpoint(f"all states absorbing, cannot move {start} -> {end}")
        stats = PathStats.empty(k)
        stats.holding[start] = delta
        stats.span = delta
        return stats
    p_bridge = transition_matrix(gen, delta).probs[start, end]
    if p_bridge <= 0:
        raise ImpossibleEndpoint(f"endpoint pair ({start}, {end}) has zero probability")
    r = np.eye(k) + rates / mu
    lam = mu * delta
    # Number of uniformized transitions: P(n) prop. to Pois(n; lam) [R^n]_{se}.
    u = rng.random() * p_bridge
    powers = [np.eye(k)]
    weight = np.exp(-lam)
    total = weight * powers[0][start, end]
    n = 0
    while total < u:
        n += 1
        weight *= lam / n
        powers.append(powers[-1] @ r)
        total += weight * powers[n][start, end]
        if n > 100_000:  # pragma: no cover - defensive
            raise SamplerExhausted("uniformization series failed to terminate")
    states = [start]
    for i in range(1, n + 1):
        probs = r[states[-1], :] * powers[n - i][:, end]
        cum = np.cumsum(probs)
        states.append(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")))
    times = np.sort(rng.uniform(0.0, delta, size=n))
    stats = PathStats.empty(k)
    prev_t = 0.0
    cur = start
    for i in range(1, n + 1):
        if states[i] != cur:  # self-loops of the uniformized chain are virtual
            stats.holding[cur] += times[i - 1] - prev_t
            stats.jumps[cur, states[i]] += 1
            prev_t = times[i - 1]
            cur = states[i]
    stats.holding[cur] += delta - prev_t
    stats.span = delta
    return stats


def path_log_likelihood(gen: GeneratorMatrix, stats: PathStats) -> float:
    """log p(path | Q) = sum_lm N_lm log q_lm - sum_lm q_lm R_l."""
    k = gen.dim
    if stats.jumps.shape != (k, k) or stats.holding.shape != (k,):
        raise DimensionMismatch("path statistics do not match generator dimension")
    off = ~np.eye(k, dtype=bool)
    jumps = stats.jumps[off]
    rates = gen.rates[off]
    if np.any((rates <= 0) & (jumps > 0)):
        raise ZeroRateWithJump("positive jump count through a zero-rate channel")
    exposure = np.broadcast_to(stats.holding[:, None], (k, k))[off]
    return float(np.sum(xlogy(jumps, rates)) - np.sum(rates * exposure))


def conditioned_stats_batch(
    gen: GeneratorMatrix,
    deltas,
    starts,
    ends,
    rng,
    max_rejections: int = DEFAULT_MAX_REJECTIONS,
):
    """Endpoint-conditioned statistics for many intervals at once.

    Vectorizes the modified rejection sampler across intervals: every
    round simulates one attempt for each still-unaccepted interval, so an
    interval's attempt count matches the scalar sampler's cap. Leftovers
    after the cap fall back to the exact bridge individually.

    Returns ``(jumps, holding)`` with shapes (B, K, K) and (B, K).
    """
    rates = gen.rates
    k = gen.dim
    q = gen.jump_rates()
    cumrates = _offdiagonal_cumsum(rates)
    deltas = np.asarray(deltas, dtype=float)
    starts = np.asarray(starts, dtype=np.intp)
    ends = np.asarray(ends, dtype=np.intp)
    if not (deltas.shape == starts.shape == ends.shape):
        raise DimensionMismatch("deltas, starts, ends must have equal shapes")
    b = deltas.shape[0]
    jumps_out = np.zeros((b, k, k))
    hold_out = np.zeros((b, k))
    differs = starts != ends
    degenerate = deltas <= ZERO_SPAN
    if np.any(degenerate & differs):
        raise ImpossibleEndpoint("zero-length interval with differing endpoints")
    if np.any(differs & (q[starts] <= 0)):
        raise ImpossibleEndpoint("absorbing start state with differing endpoints")
    hold_out[degenerate & ~differs] = 0.0
    active = np.flatnonzero(~degenerate)

    def draw_dest(cur):
        cum = cumrates[cur]
        u = rng.random(cur.shape[0]) * cum[:, -1]
        dest = (cum <= u[:, None]).sum(axis=1)
        return np.minimum(dest, k - 1)

    for _ in range(max_rejections):
        if active.size == 0:
            break
        na = active.size
        dl = deltas[active]
        tgt = ends[active]
        cur = starts[active].copy()
        t = np.zeros(na)
        hold_t = np.zeros((na, k))
        jumps_t = np.zeros((na, k, k))
        local = np.arange(na)
        forced = np.flatnonzero(cur != tgt)
        if forced.size:
            cs = cur[forced]
            u = rng.random(forced.size)
            tf = -np.log1p(u * np.expm1(-q[cs] * dl[forced])) / q[cs]
            dest = draw_dest(cs)
            hold_t[forced, cs] += tf
            jumps_t[forced, cs, dest] += 1.0
            t[forced] = tf
            cur[forced] = dest
        moving = q[cur] > 0
        done = local[~moving]
        hold_t[done, cur[done]] += dl[done] - t[done]
        run = local[moving]
        while run.size:
            cs = cur[run]
            h = rng.exponential(1.0, run.size) / q[cs]
            tn = t[run] + h
            jump = tn < dl[run]
            ji = run[jump]
            stay = run[~jump]
            hold_t[stay, cur[stay]] += dl[stay] - t[stay]
            if ji.size:
                cj = cur[ji]
                hold_t[ji, cj] += h[jump]
                dest = draw_dest(cj)
                jumps_t[ji, cj, dest] += 1.0
                t[ji] = tn[jump]
                cur[ji] = dest
                moving = q[dest] > 0
                absorbed = ji[~moving]
                hold_t[absorbed, cur[absorbed]] += dl[absorbed] - t[absorbed]
                run = ji[moving]
            else:
                run = ji
        ok = cur == tgt
        rows = active[ok]
        jumps_out[rows] = jumps_t[ok]
        hold_out[rows] = hold_t[ok]
        active = active[~ok]
    for i in active:  # exact bridge for intervals that kept rejecting
        stats = _uniformized_bridge(gen, float(deltas[i]), int(starts[i]), int(ends[i]), rng)
        jumps_out[i] = stats.jumps
        hold_out[i] = stats.holding
    return jumps_out, hold_out
