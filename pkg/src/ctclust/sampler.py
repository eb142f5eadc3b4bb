"""Dirichlet-process mixture sampler over latent-CTMC trajectory models.

The chain alternates four phases per iteration:

1. Latent refresh. Per cluster, smooth every member under the cluster's
   instantiated parameters, draw latent states at the observation times,
   draw interval endpoint pairs, and re-simulate endpoint-conditioned
   paths to refresh the jump/occupancy statistics.
2. Collapsed label sweep. Each subject's cluster label is resampled from
   the Polya-urn conditional with component parameters integrated out.
3. One split-merge Metropolis-Hastings move built from restricted Gibbs
   scans, with fresh generator draws and fresh conditioned paths on the
   proposal side.
4. Parameter refresh. Per cluster, paths are re-simulated under the
   cluster generator and (pi, Q, theta) are redrawn from their conjugate
   posteriors.

The "q-only" variant shares pi and the outcome cells globally across
clusters, keeps only the generator cluster-specific, and restricts all
label conditionals and the split-merge likelihood ratio to the path
block.

Labels are canonical at iteration boundaries: 1..M by order of first
appearance in subject index order. All randomness flows through a single
numpy Generator, so a fixed seed fixes the entire sample stream.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.special import logsumexp

from .ctmc import GeneratorMatrix, transition_matrices, validate_generator
from .dataio import Dataset, read_checkpoint, write_checkpoint
from .errors import CheckpointIOFailure, ConfigError, DimensionTooSmall
from .outcomes import (
    GAUSSIAN,
    POISSON,
    ClusterParams,
    OutcomeModel,
    OutcomeSuffStats,
    PriorSpec,
    cluster_joint_marginal,
    marginal_loglik_q,
    sample_cluster_params,
    sample_generator,
    sample_outcome_model,
    subject_marginal_loglik,
    subject_suffstats,
)
from .paths import conditioned_stats_batch
from .smoothing import forward_backward_stack, sample_pairs_stack, sample_states_stack

__all__ = [
    "VARIANT_FULL",
    "VARIANT_Q_ONLY",
    "INIT_PRIOR",
    "INIT_WARM",
    "SamplerConfig",
    "SamplerState",
    "PosteriorSample",
    "SplitMergeProposal",
    "init_state",
    "label_log_conditional",
    "gibbs_label_sweep",
    "resample_subject_label",
    "build_launch_state",
    "propose_split_merge",
    "accept_or_reject",
    "refresh_cluster_params",
    "split_log_prior_ratio",
    "merge_log_prior_ratio",
    "run_mcmc",
]

VARIANT_FULL = "full"
VARIANT_Q_ONLY = "q-only"
INIT_PRIOR = "prior"
INIT_WARM = "warm"

_WARM_SETTLE_PASSES = 4
_WARM_SCORE_PASSES = 3
_WARM_CEM_PASSES = 2


@dataclass(frozen=True)
class SamplerConfig:
    """Chain length, move mix, and prior for one MCMC run.

    ``initializer`` selects how the first state is built: "prior" draws
    parameters from the prior under uniform random labels, while "warm"
    seeds the chain from an internal classification-EM fit (see
    init_state). The warm start is available for the full variant only.
    """

    prior: PriorSpec
    num_iterations: int = 1000
    burn_in: int = 0
    thin: int = 1
    restricted_scans: int = 3
    initial_clusters: int = 1
    variant: str = VARIANT_FULL
    seed: int = 0
    gibbs_sweeps: int = 1
    split_merge_moves: int = 1
    initializer: str = INIT_PRIOR
    warm_restarts: int = 6
    warm_rounds: int = 10
    checkpoint_interval: int = 0
    checkpoint_path: str | None = None

    def __post_init__(self):
        if self.num_iterations < 0 or self.burn_in < 0:
            raise ConfigError("iteration counts must be nonnegative")
        if self.num_iterations < self.burn_in:
            raise ConfigError("burn_in cannot exceed num_iterations")
        if self.thin < 1:
            raise ConfigError("thinning interval must be >= 1")
        if self.restricted_scans < 1:
            raise ConfigError("restricted_scans must be >= 1")
        if self.initial_clusters < 1:
            raise ConfigError("initial_clusters must be >= 1")
        if self.variant not in (VARIANT_FULL, VARIANT_Q_ONLY):
            raise ConfigError(f"unknown sampler variant {self.variant!r}")
        if self.gibbs_sweeps < 0 or self.split_merge_moves < 0:
            raise ConfigError("per-iteration move counts must be nonnegative")
        if self.initializer not in (INIT_PRIOR, INIT_WARM):
            raise ConfigError(f"unknown initializer {self.initializer!r}")
        if self.initializer == INIT_WARM and self.variant != VARIANT_FULL:
            raise ConfigError("the warm initializer requires the full variant")
        if self.warm_restarts < 1 or self.warm_rounds < 1:
            raise ConfigError("warm-start counts must be >= 1")
        if self.checkpoint_interval < 0:
            raise ConfigError("checkpoint_interval must be nonnegative")
        if self.checkpoint_interval > 0 and not self.checkpoint_path:
            raise ConfigError("checkpointing requires a checkpoint_path")


@dataclass
class SamplerState:
    """Complete mutable chain state.

    Path statistics are stored as per-subject totals next to the interval
    endpoint pairs they were simulated from; every consumer of the
    statistics needs only the totals, and re-simulation needs only the
    endpoints. ``shared_pi`` / ``shared_outcome`` are set in the q-only
    variant, where those blocks are global rather than per cluster.
    """

    labels: np.ndarray
    latent_states: list
    pair_starts: list
    pair_ends: list
    subject_stats: list
    cluster_params: dict
    iteration: int = 0
    shared_pi: np.ndarray | None = None
    shared_outcome: OutcomeModel | None = None

    @property
    def n_subjects(self) -> int:
        return self.labels.shape[0]

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_params)

    def members(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)


@dataclass(frozen=True)
class PosteriorSample:
    """One retained draw: canonical labels plus instantiated parameters."""

    iteration: int
    labels: np.ndarray
    n_clusters: int
    params: dict


def split_log_prior_ratio(alpha: float, n_d: int, n_e: int) -> float:
    """Log prior ratio of a split creating parts of sizes n_d and n_e."""
    return (
        math.log(alpha)
        + math.lgamma(n_d)
        + math.lgamma(n_e)
        - math.lgamma(n_d + n_e)
    )


def merge_log_prior_ratio(alpha: float, n_d: int, n_e: int) -> float:
    """Log prior ratio of merging parts of sizes n_d and n_e; exactly the
    negative of the matching split ratio."""
    return -split_log_prior_ratio(alpha, n_d, n_e)


def _predictive_loglik(others, subj, prior, variant) -> float:
    if variant == VARIANT_Q_ONLY:
        return marginal_loglik_q(others, subj, prior)
    return subject_marginal_loglik(others, subj, prior)


def _group_marginal(stats: OutcomeSuffStats, prior, variant) -> float:
    if variant == VARIANT_Q_ONLY:
        empty = OutcomeSuffStats.zeros(prior.n_states, prior.n_levels)
        return marginal_loglik_q(empty, stats, prior)
    return cluster_joint_marginal(stats, prior)


def _draw_log_categorical(logw: np.ndarray, rng) -> int:
    w = np.exp(logw - logw.max())
    cum = np.cumsum(w)
    idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return min(idx, logw.shape[0] - 1)


def _canonicalize(state: SamplerState) -> None:
    mapping = {}
    for lab in state.labels:
        lab = int(lab)
        if lab not in mapping:
            mapping[lab] = len(mapping) + 1
    if all(old == new for old, new in mapping.items()):
        return
    state.labels = np.array([mapping[int(l)] for l in state.labels], dtype=np.int64)
    state.cluster_params = {
        mapping[lab]: par for lab, par in state.cluster_params.items()
    }


def _cluster_stats(state: SamplerState, prior: PriorSpec) -> dict:
    accs = {}
    for n in range(state.n_subjects):
        lab = int(state.labels[n])
        if lab not in accs:
            accs[lab] = OutcomeSuffStats.zeros(prior.n_states, prior.n_levels)
        accs[lab].add(state.subject_stats[n])
    return accs


def _subject_deltas(record) -> np.ndarray:
    return np.diff(record.times)


def _simulate_member_paths(state, data, members, gen: GeneratorMatrix, rng):
    """Endpoint-conditioned path statistics for the given subjects.

    Returns (jumps, holding) with shapes (len(members), K, K) and
    (len(members), K); endpoints are the state's current interval pairs.
    """
    k = gen.dim
    m = len(members)
    jumps = np.zeros((m, k, k))
    holding = np.zeros((m, k))
    counts = np.array(
        [state.pair_starts[n].shape[0] for n in members], dtype=np.intp
    )
    total = int(counts.sum())
    if total == 0:
        return jumps, holding
    deltas = np.concatenate([_subject_deltas(data.subjects[n]) for n in members])
    starts = np.concatenate([state.pair_starts[n] for n in members])
    ends = np.concatenate([state.pair_ends[n] for n in members])
    seg = np.repeat(np.arange(m), counts)
    j_flat, h_flat = conditioned_stats_batch(gen, deltas, starts, ends, rng)
    np.add.at(jumps, seg, j_flat)
    np.add.at(holding, seg, h_flat)
    return jumps, holding


def _latent_path_pass(state: SamplerState, data: Dataset, prior: PriorSpec, rng):
    """Phase 1: redraw latent states, endpoint pairs, and path statistics
    for every subject under its current cluster's parameters."""
    for label in sorted(state.cluster_params):
        params = state.cluster_params[label]
        members = state.members(label)
        lengths = np.array([data.subjects[n].times.shape[0] for n in members])
        for t_len in np.unique(lengths):
            idx = members[lengths == t_len]
            _latent_pass_group(state, data, prior, params, idx, int(t_len), rng)


def _latent_pass_group(state, data, prior, params, idx, t_len, rng):
    k = prior.n_states
    m = idx.shape[0]
    deltas = np.stack([_subject_deltas(data.subjects[n]) for n in idx])
    logdens = np.stack(
        [
            params.outcome.log_density_grid(
                data.subjects[n].outcomes, data.subjects[n].levels
            )
            for n in idx
        ]
    )
    if t_len > 1:
        uniq, inverse = np.unique(deltas.ravel(), return_inverse=True)
        stack = transition_matrices(params.gen, uniq)
        trans = stack[inverse].reshape(m, t_len - 1, k, k)
    else:
        trans = np.zeros((m, 0, k, k))
    a, b, _, _ = forward_backward_stack(params.pi, trans, logdens)
    states = sample_states_stack(a, rng)
    if t_len > 1:
        starts, ends = sample_pairs_stack(b, rng)
        j_flat, h_flat = conditioned_stats_batch(
            params.gen, deltas.ravel(), starts.ravel(), ends.ravel(), rng
        )
        jumps = j_flat.reshape(m, t_len - 1, k, k).sum(axis=1)
        holding = h_flat.reshape(m, t_len - 1, k).sum(axis=1)
    else:
        starts = np.zeros((m, 0), dtype=np.intp)
        ends = np.zeros((m, 0), dtype=np.intp)
        jumps = np.zeros((m, k, k))
        holding = np.zeros((m, k))
    for row, n in enumerate(idx):
        rec = data.subjects[n]
        state.latent_states[n] = states[row]
        state.pair_starts[n] = starts[row]
        state.pair_ends[n] = ends[row]
        state.subject_stats[n] = subject_suffstats(
            rec.outcomes,
            rec.levels,
            states[row],
            jumps[row],
            holding[row],
            prior.n_states,
            prior.n_levels,
            prior.family,
        )


def _make_params(prior, stats, rng, state, variant) -> ClusterParams:
    """Instantiate parameters for a cluster born outside the refresh step."""
    if variant == VARIANT_Q_ONLY:
        gen = sample_generator(stats, prior, rng)
        return ClusterParams(
            pi=state.shared_pi, gen=gen, outcome=state.shared_outcome
        )
    return sample_cluster_params(stats, prior, rng)


def init_state(data: Dataset, config: SamplerConfig, rng) -> SamplerState:
    """Prior-drawn parameters, random labels, and one latent/path pass."""
    prior = config.prior
    n = len(data.subjects)
    if config.initial_clusters == 1:
        labels = np.ones(n, dtype=np.int64)
    else:
        labels = rng.integers(
            1, config.initial_clusters + 1, size=n
        ).astype(np.int64)
    state = SamplerState(
        labels=labels,
        latent_states=[None] * n,
        pair_starts=[None] * n,
        pair_ends=[None] * n,
        subject_stats=[None] * n,
        cluster_params={},
    )
    _canonicalize(state)
    empty = OutcomeSuffStats.zeros(prior.n_states, prior.n_levels)
    present = sorted(set(int(l) for l in state.labels))
    if config.variant == VARIANT_Q_ONLY:
        state.shared_pi = rng.dirichlet(prior.pi_conc)
        state.shared_outcome = sample_outcome_model(empty, prior, rng)
        for lab in present:
            gen = sample_generator(empty, prior, rng)
            state.cluster_params[lab] = ClusterParams(
                pi=state.shared_pi, gen=gen, outcome=state.shared_outcome
            )
    else:
        for lab in present:
            state.cluster_params[lab] = sample_cluster_params(empty, prior, rng)
    _latent_path_pass(state, data, prior, rng)
    return state


def _conditional_logweights(counts, accs, subj, prior, variant):
    """Polya-urn log weights for one detached subject.

    Returns (candidate labels sorted, log weight array); the last entry
    of the array is the new-cluster weight.
    """
    cand = sorted(counts)
    logw = np.empty(len(cand) + 1)
    for i, lab in enumerate(cand):
        logw[i] = math.log(counts[lab]) + _predictive_loglik(
            accs[lab], subj, prior, variant
        )
    empty = OutcomeSuffStats.zeros(prior.n_states, prior.n_levels)
    logw[-1] = math.log(prior.dp_alpha) + _predictive_loglik(
        empty, subj, prior, variant
    )
    return cand, logw


def label_log_conditional(
    state: SamplerState,
    n: int,
    prior: PriorSpec,
    *,
    variant: str = VARIANT_FULL,
):
    """Normalized log conditional over subject n's candidate labels.

    Read-only: builds the leave-one-out accumulators, evaluates the urn
    weights, and normalizes. Returns (labels, logp) where labels lists
    the surviving existing clusters in ascending order followed by the
    would-be new label, and exp(logp) sums to one.
    """
    accs = _cluster_stats(state, prior)
    counts = {lab: int(np.sum(state.labels == lab)) for lab in accs}
    next_label = max(counts) + 1
    lab = int(state.labels[n])
    subj = state.subject_stats[n]
    counts[lab] -= 1
    if counts[lab] == 0:
        del counts[lab]
        del accs[lab]
    else:
        accs[lab].subtract(subj)
    cand, logw = _conditional_logweights(counts, accs, subj, prior, variant)
    logp = logw - logsumexp(logw)
    return np.array(cand + [next_label], dtype=np.int64), logp


def gibbs_label_sweep(
    state: SamplerState,
    data: Dataset,
    prior: PriorSpec,
    rng,
    *,
    variant: str = VARIANT_FULL,
) -> SamplerState:
    """One collapsed Polya-urn sweep over all subjects in index order."""
    accs = _cluster_stats(state, prior)
    counts = {lab: int(np.sum(state.labels == lab)) for lab in accs}
    next_label = max(counts) + 1
    for n in range(state.n_subjects):
        lab = int(state.labels[n])
        subj = state.subject_stats[n]
        counts[lab] -= 1
        if counts[lab] == 0:
            del counts[lab]
            del accs[lab]
            del state.cluster_params[lab]
        else:
            accs[lab].subtract(subj)
        cand, logw = _conditional_logweights(counts, accs, subj, prior, variant)
        pick = _draw_log_categorical(logw, rng)
        if pick == len(cand):
            new = next_label
            next_label += 1
            state.labels[n] = new
            counts[new] = 1
            accs[new] = subj.copy()
            state.cluster_params[new] = _make_params(
                prior, subj, rng, state, variant
            )
        else:
            chosen = cand[pick]
            state.labels[n] = chosen
            counts[chosen] += 1
            accs[chosen].add(subj)
    _canonicalize(state)
    return state


def resample_subject_label(
    state: SamplerState,
    n: int,
    prior: PriorSpec,
    rng,
    *,
    variant: str = VARIANT_FULL,
) -> int:
    """Resample one subject's label from its full conditional; the state
    is updated in place (without canonicalization) and the raw drawn
    label is returned."""
    accs = _cluster_stats(state, prior)
    counts = {lab: int(np.sum(state.labels == lab)) for lab in accs}
    next_label = max(counts) + 1
    lab = int(state.labels[n])
    subj = state.subject_stats[n]
    counts[lab] -= 1
    if counts[lab] == 0:
        del counts[lab]
        del accs[lab]
        del state.cluster_params[lab]
    else:
        accs[lab].subtract(subj)
    cand, logw = _conditional_logweights(counts, accs, subj, prior, variant)
    pick = _draw_log_categorical(logw, rng)
    if pick == len(cand):
        chosen = next_label
        state.cluster_params[chosen] = _make_params(
            prior, subj, rng, state, variant
        )
    else:
        chosen = cand[pick]
    state.labels[n] = chosen
    return chosen


class _TwoSided:
    """Bookkeeping for restricted two-way label scans.

    Side "new" is the label playing the new-cluster role (weight alpha,
    mirroring the urn's new-label mass); side "old" is the pre-existing
    label (weight = member count). Anchors stay put and are never
    rescanned, so both sides always keep at least one member.
    """

    def __init__(self, stats, on_new, prior, variant, alpha):
        self.stats = stats
        self.prior = prior
        self.variant = variant
        self.log_alpha = math.log(alpha)
        self.on_new = set(on_new)
        self.acc_new = OutcomeSuffStats.zeros(prior.n_states, prior.n_levels)
        self.acc_old = OutcomeSuffStats.zeros(prior.n_states, prior.n_levels)
        self.count_old = 0
        for f, st in stats.items():
            if f in self.on_new:
                self.acc_new.add(st)
            else:
                self.acc_old.add(st)
                self.count_old += 1

    def _detach(self, f):
        st = self.stats[f]
        if f in self.on_new:
            self.acc_new.subtract(st)
        else:
            self.acc_old.subtract(st)
            self.count_old -= 1

    def log_two_way(self, f):
        """(log P(new side), log P(old side)) for detached subject f."""
        self._detach(f)
        st = self.stats[f]
        w_new = self.log_alpha + _predictive_loglik(
            self.acc_new, st, self.prior, self.variant
        )
        w_old = math.log(self.count_old) + _predictive_loglik(
            self.acc_old, st, self.prior, self.variant
        )
        norm = np.logaddexp(w_new, w_old)
        return w_new - norm, w_old - norm

    def place(self, f, to_new: bool):
        st = self.stats[f]
        if to_new:
            self.on_new.add(f)
            self.acc_new.add(st)
        else:
            self.on_new.discard(f)
            self.acc_old.add(st)
            self.count_old += 1


def _restricted_scans(helper: _TwoSided, order, scans: int, rng) -> None:
    for _ in range(scans):
        for f in order:
            log_new, _ = helper.log_two_way(f)
            helper.place(f, math.log(rng.random()) < log_new)


def _final_scan(helper: _TwoSided, order, rng, forced=None):
    """Final urn scan; samples when ``forced`` is None, otherwise walks
    the forced assignment. Returns (total log probability, per-subject
    factors)."""
    total = 0.0
    factors = []
    for f in order:
        log_new, log_old = helper.log_two_way(f)
        if forced is None:
            to_new = math.log(rng.random()) < log_new
        else:
            to_new = forced[f]
        chosen = log_new if to_new else log_old
        total += chosen
        factors.append(chosen)
        helper.place(f, to_new)
    return total, factors


def _build_launch(
    state: SamplerState,
    d: int,
    e: int,
    scans: int,
    rng,
    *,
    prior: PriorSpec,
    variant: str = VARIANT_FULL,
):
    """Restricted-scan launch construction over the clusters of d and e.

    Returns (helper, order): the two-sided bookkeeping object positioned
    at the launch state, plus the scan order of non-anchor subjects. The
    construction is always split-shaped: d alone on the new-role side,
    everyone else (including e) on the old side, then ``scans`` two-way
    sweeps with the urn-amended conditional (the new-role side carries
    weight alpha). The merge move reuses the same construction so its
    reverse probability matches a future split from the merged cluster.
    """
    if d == e:
        raise DimensionTooSmall("anchors must be distinct subjects")
    j_d, j_e = int(state.labels[d]), int(state.labels[e])
    involved = np.flatnonzero(
        (state.labels == j_d) | (state.labels == j_e)
    )
    stats = {int(n): state.subject_stats[int(n)] for n in involved}
    order = [int(n) for n in involved if n != d and n != e]
    helper = _TwoSided(
        stats, {d}, prior, variant, prior.dp_alpha
    )
    _restricted_scans(helper, order, scans, rng)
    return helper, order


def build_launch_state(
    state: SamplerState,
    d: int,
    e: int,
    scans: int,
    rng,
    *,
    prior: PriorSpec,
    variant: str = VARIANT_FULL,
) -> dict:
    """Launch labels for the subjects in the clusters of anchors d and e.

    The new-role side is reported as label max+1 when d and e share a
    cluster (the split case) and as d's current label otherwise."""
    helper, order = _build_launch(
        state, d, e, scans, rng, prior=prior, variant=variant
    )
    j_d, j_e = int(state.labels[d]), int(state.labels[e])
    new_label = int(state.labels.max()) + 1 if j_d == j_e else j_d
    labels = {}
    for f in [d, e, *order]:
        labels[f] = new_label if f in helper.on_new else j_e
    return labels


@dataclass
class SplitMergeProposal:
    """Everything the accept step needs, fresh simulations included."""

    kind: str
    labels: np.ndarray
    moved: np.ndarray
    fresh_jumps: np.ndarray
    fresh_holding: np.ndarray
    gen_updates: dict
    parent_label: int
    drop_label: int | None
    log_forward: float
    log_reverse: float
    log_prior_ratio: float
    log_lik_ratio: float
    forward_factors: list = field(default_factory=list)
    reverse_factors: list = field(default_factory=list)

    @property
    def log_acceptance(self) -> float:
        return min(
            0.0,
            self.log_reverse
            - self.log_forward
            + self.log_prior_ratio
            + self.log_lik_ratio,
        )


def _current_group_marginal(state, members, prior, variant):
    acc = OutcomeSuffStats.zeros(prior.n_states, prior.n_levels)
    for n in members:
        acc.add(state.subject_stats[int(n)])
    return _group_marginal(acc, prior, variant)


def _gamma_posterior_gen(state, members, prior, rng) -> GeneratorMatrix:
    acc = OutcomeSuffStats.zeros(prior.n_states, prior.n_levels)
    for n in members:
        acc.add(state.subject_stats[int(n)])
    return sample_generator(acc, prior, rng)


def propose_split_merge(
    state: SamplerState,
    data: Dataset,
    prior: PriorSpec,
    rng,
    *,
    scans: int = 3,
    variant: str = VARIANT_FULL,
) -> SplitMergeProposal:
    """One split-merge proposal from a uniformly drawn anchor pair."""
    n = state.n_subjects
    if n < 2:
        raise DimensionTooSmall("split-merge needs at least two subjects")
    d = int(rng.integers(n))
    e = int(rng.integers(n - 1))
    if e >= d:
        e += 1
    if int(state.labels[d]) == int(state.labels[e]):
        return _propose_split(state, data, prior, rng, d, e, scans, variant)
    return _propose_merge(state, data, prior, rng, d, e, scans, variant)


def _propose_split(state, data, prior, rng, d, e, scans, variant):
    j_e = int(state.labels[e])
    nu = int(state.labels.max()) + 1
    members = state.members(j_e)
    helper, order = _build_launch(
        state, d, e, scans, rng, prior=prior, variant=variant
    )
    log_forward, forward_factors = _final_scan(helper, order, rng)
    side_d = np.array(sorted(helper.on_new), dtype=np.intp)
    side_e = np.array(
        sorted(set(int(m) for m in members) - helper.on_new), dtype=np.intp
    )
    # The Hastings ratio compares the two label configurations on the
    # same completed data (the subjects' current statistics); the fresh
    # generator draws and conditioned path re-simulations below are the
    # post-acceptance update of the affected clusters, not part of the
    # ratio, which keeps the move's stationary law identical to the
    # collapsed Gibbs sweep's.
    log_split = _current_group_marginal(
        state, side_d, prior, variant
    ) + _current_group_marginal(state, side_e, prior, variant)
    log_current = _current_group_marginal(state, members, prior, variant)
    gen_d = _gamma_posterior_gen(state, side_d, prior, rng)
    gen_e = _gamma_posterior_gen(state, side_e, prior, rng)
    jumps_d, hold_d = _simulate_member_paths(state, data, side_d, gen_d, rng)
    jumps_e, hold_e = _simulate_member_paths(state, data, side_e, gen_e, rng)
    labels = state.labels.copy()
    labels[side_d] = nu
    moved = np.concatenate([side_d, side_e])
    return SplitMergeProposal(
        kind="split",
        labels=labels,
        moved=moved,
        fresh_jumps=np.concatenate([jumps_d, jumps_e]),
        fresh_holding=np.concatenate([hold_d, hold_e]),
        gen_updates={nu: gen_d, j_e: gen_e},
        parent_label=j_e,
        drop_label=None,
        log_forward=log_forward,
        log_reverse=0.0,
        log_prior_ratio=split_log_prior_ratio(
            prior.dp_alpha, side_d.shape[0], side_e.shape[0]
        ),
        log_lik_ratio=log_split - log_current,
        forward_factors=forward_factors,
    )


def _propose_merge(state, data, prior, rng, d, e, scans, variant):
    j_d, j_e = int(state.labels[d]), int(state.labels[e])
    members_d = state.members(j_d)
    members_e = state.members(j_e)
    union = np.concatenate([members_d, members_e])
    union.sort()
    helper, order = _build_launch(
        state, d, e, scans, rng, prior=prior, variant=variant
    )
    forced = {f: int(state.labels[f]) == j_d for f in order}
    log_reverse, reverse_factors = _final_scan(helper, order, rng, forced=forced)
    log_merge = _current_group_marginal(state, union, prior, variant)
    log_current = _current_group_marginal(
        state, members_d, prior, variant
    ) + _current_group_marginal(state, members_e, prior, variant)
    gen_merge = _gamma_posterior_gen(state, union, prior, rng)
    jumps_m, hold_m = _simulate_member_paths(state, data, union, gen_merge, rng)
    labels = state.labels.copy()
    labels[members_d] = j_e
    return SplitMergeProposal(
        kind="merge",
        labels=labels,
        moved=union,
        fresh_jumps=jumps_m,
        fresh_holding=hold_m,
        gen_updates={j_e: gen_merge},
        parent_label=j_e,
        drop_label=j_d,
        log_forward=0.0,
        log_reverse=log_reverse,
        log_prior_ratio=merge_log_prior_ratio(
            prior.dp_alpha, members_d.shape[0], members_e.shape[0]
        ),
        log_lik_ratio=log_merge - log_current,
        reverse_factors=reverse_factors,
    )


def accept_or_reject(
    proposal: SplitMergeProposal, state: SamplerState, rng
) -> SamplerState:
    """Metropolis-Hastings accept step; adopts fresh paths and generators
    on acceptance, leaves the state untouched on rejection."""
    if math.log(rng.random()) >= proposal.log_acceptance:
        return state
    state.labels = proposal.labels
    for row, n in enumerate(proposal.moved):
        st = state.subject_stats[int(n)]
        st.jumps = proposal.fresh_jumps[row].copy()
        st.holding = proposal.fresh_holding[row].copy()
    parent = state.cluster_params[proposal.parent_label]
    for lab, gen in proposal.gen_updates.items():
        state.cluster_params[lab] = ClusterParams(
            pi=parent.pi, gen=gen, outcome=parent.outcome
        )
    if proposal.drop_label is not None:
        del state.cluster_params[proposal.drop_label]
    _canonicalize(state)
    return state


def refresh_cluster_params(
    state: SamplerState,
    data: Dataset,
    prior: PriorSpec,
    rng,
    *,
    variant: str = VARIANT_FULL,
) -> SamplerState:
    """Phase 4: per cluster, re-simulate member paths under the cluster
    generator, then redraw parameters from the conjugate posteriors."""
    for label in sorted(state.cluster_params):
        members = state.members(label)
        gen = state.cluster_params[label].gen
        jumps, holding = _simulate_member_paths(state, data, members, gen, rng)
        for row, n in enumerate(members):
            st = state.subject_stats[int(n)]
            st.jumps = jumps[row]
            st.holding = holding[row]
        acc = OutcomeSuffStats.zeros(prior.n_states, prior.n_levels)
        for n in members:
            acc.add(state.subject_stats[int(n)])
        if variant == VARIANT_Q_ONLY:
            new_gen = sample_generator(acc, prior, rng)
            state.cluster_params[label] = ClusterParams(
                pi=state.shared_pi, gen=new_gen, outcome=state.shared_outcome
            )
        else:
            state.cluster_params[label] = sample_cluster_params(acc, prior, rng)
    return state


def _draw_global_shared(state: SamplerState, prior: PriorSpec, rng) -> None:
    """Q-only variant: conjugate pi and outcome draws over all subjects."""
    total = OutcomeSuffStats.zeros(prior.n_states, prior.n_levels)
    for st in state.subject_stats:
        total.add(st)
    state.shared_pi = rng.dirichlet(prior.pi_conc + total.first)
    state.shared_outcome = sample_outcome_model(total, prior, rng)
    for lab, par in state.cluster_params.items():
        state.cluster_params[lab] = ClusterParams(
            pi=state.shared_pi, gen=par.gen, outcome=state.shared_outcome
        )


def _iterate(state: SamplerState, data: Dataset, config: SamplerConfig, rng):
    prior = config.prior
    _latent_path_pass(state, data, prior, rng)
    if config.variant == VARIANT_Q_ONLY:
        _draw_global_shared(state, prior, rng)
    for _ in range(config.gibbs_sweeps):
        gibbs_label_sweep(state, data, prior, rng, variant=config.variant)
    if state.n_subjects >= 2:
        for _ in range(config.split_merge_moves):
            proposal = propose_split_merge(
                state,
                data,
                prior,
                rng,
                scans=config.restricted_scans,
                variant=config.variant,
            )
            accept_or_reject(proposal, state, rng)
    refresh_cluster_params(state, data, prior, rng, variant=config.variant)
    state.iteration += 1


def _snapshot(state: SamplerState) -> PosteriorSample:
    return PosteriorSample(
        iteration=state.iteration,
        labels=state.labels.copy(),
        n_clusters=state.n_clusters,
        params=dict(state.cluster_params),
    )


def _checkpoint_payload(state, rng, config) -> dict:
    return {
        "iteration": state.iteration,
        "labels": state.labels,
        "latent_states": state.latent_states,
        "pair_starts": state.pair_starts,
        "pair_ends": state.pair_ends,
        "subject_stats": state.subject_stats,
        "cluster_params": state.cluster_params,
        "shared_pi": state.shared_pi,
        "shared_outcome": state.shared_outcome,
        "rng_state": rng.bit_generator.state,
        "variant": config.variant,
        "n_subjects": int(state.labels.shape[0]),
    }


def _restore(payload: dict, config: SamplerConfig, n_subjects: int):
    if payload.get("variant") != config.variant:
        raise CheckpointIOFailure(
            "checkpoint variant does not match the requested configuration"
        )
    if payload.get("n_subjects") != n_subjects:
        raise CheckpointIOFailure(
            "checkpoint subject count does not match the dataset"
        )
    state = SamplerState(
        labels=payload["labels"],
        latent_states=payload["latent_states"],
        pair_starts=payload["pair_starts"],
        pair_ends=payload["pair_ends"],
        subject_stats=payload["subject_stats"],
        cluster_params=payload["cluster_params"],
        iteration=payload["iteration"],
        shared_pi=payload["shared_pi"],
        shared_outcome=payload["shared_outcome"],
    )
    rng = np.random.default_rng()
    rng.bit_generator.state = payload["rng_state"]
    return state, rng


def run_mcmc(
    data: Dataset,
    config: SamplerConfig,
    *,
    resume_from=None,
    progress=None,
):
    """Generate posterior samples; yields one PosteriorSample per kept
    iteration (after burn-in, at the thinning stride).

    ``resume_from`` accepts a checkpoint path written by a previous run
    with the same dataset and configuration; the resumed stream is
    bitwise identical to the uninterrupted one. ``progress`` is called
    as progress(iteration, n_clusters) after every iteration.
    """
    if resume_from is not None:
        payload = read_checkpoint(resume_from)
        state, rng = _restore(payload, config, len(data.subjects))
    else:
        rng = np.random.default_rng(config.seed)
        state = init_state(data, config, rng)
    while state.iteration < config.num_iterations:
        _iterate(state, data, config, rng)
        done = state.iteration
        if config.checkpoint_interval > 0 and (
            done % config.checkpoint_interval == 0
            or done == config.num_iterations
        ):
            write_checkpoint(
                _checkpoint_payload(state, rng, config), config.checkpoint_path
            )
        if progress is not None:
            progress(done, state.n_clusters)
        if done > config.burn_in and (done - config.burn_in - 1) % config.thin == 0:
            yield _snapshot(state)
