"""Posterior summaries for trajectory-clustering chains.

Everything here is pure post-processing: cluster-count traces and their
mode, label alignment across iterations and against ground truth,
effective sample sizes, posterior-mean transition-probability curves,
generator eigenvalue tables, and parameter error norms. No randomness,
no mutation of inputs.

Label switching is resolved in two places with the same convention.
Across iterations, samples whose cluster count equals the posterior
modal count are aligned to the first such sample by greedy maximum
label overlap (ties to the smaller label pair). Against ground truth,
misclassification is the minimum mismatch fraction over injective maps
from estimated to true labels.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .ctmc import transition_matrices, validate_generator
from .errors import (
    ConstantSeries,
    DimensionMismatch,
    DimensionTooSmall,
    EmptySamples,
    EmptyTrace,
    LengthMismatch,
)

__all__ = [
    "ClusterTrace",
    "ParamBlockSummary",
    "FitSummary",
    "modal_cluster_count",
    "align_and_misclassify",
    "best_label_map",
    "effective_sample_size",
    "transition_probability_curves",
    "param_norm_error",
    "align_modal_samples",
    "subject_modal_assignments",
    "generator_eigenvalue_table",
    "summarize_fit",
]


@dataclass(frozen=True)
class ClusterTrace:
    """Per-iteration cluster counts next to the label snapshots."""

    counts: np.ndarray
    labels: list

    def __post_init__(self):
        object.__setattr__(
            self, "counts", np.asarray(self.counts, dtype=np.int64)
        )
        if self.counts.shape[0] != len(self.labels):
            raise LengthMismatch("counts and label snapshots differ in length")

    @classmethod
    def from_samples(cls, samples) -> "ClusterTrace":
        return cls(
            counts=np.array([s.n_clusters for s in samples], dtype=np.int64),
            labels=[np.asarray(s.labels) for s in samples],
        )

    def __len__(self) -> int:
        return int(self.counts.shape[0])


def modal_cluster_count(trace: ClusterTrace) -> tuple:
    """Most frequent cluster count and its fraction; ties break low."""
    if len(trace) == 0:
        raise EmptyTrace("no iterations in trace")
    freq = Counter(int(c) for c in trace.counts)
    best = max(freq.items(), key=lambda kv: (kv[1], -kv[0]))
    return best[0], best[1] / len(trace)


def _confusion(estimate: np.ndarray, truth: np.ndarray):
    est_labels = sorted(set(int(v) for v in estimate))
    true_labels = sorted(set(int(v) for v in truth))
    table = np.zeros((len(est_labels), len(true_labels)), dtype=np.int64)
    e_idx = {lab: i for i, lab in enumerate(est_labels)}
    t_idx = {lab: j for j, lab in enumerate(true_labels)}
    for a, b in zip(estimate, truth):
        table[e_idx[int(a)], t_idx[int(b)]] += 1
    return table


def _best_matching(table: np.ndarray):
    """(matched count, list of (row, col) pairs) maximizing agreement.

    Exhaustive over permutations when both label sets have at most 8
    labels, assignment-problem optimization otherwise; the two agree.
    """
    r, c = table.shape
    if max(r, c) <= 8:
        matched, pairs = -1, []
        if r <= c:
            for perm in itertools.permutations(range(c), r):
                hit = int(table[np.arange(r), perm].sum())
                if hit > matched:
                    matched = hit
                    pairs = list(zip(range(r), perm))
        else:
            for perm in itertools.permutations(range(r), c):
                hit = int(table[perm, np.arange(c)].sum())
                if hit > matched:
                    matched = hit
                    pairs = list(zip(perm, range(c)))
        return matched, pairs
    rows, cols = linear_sum_assignment(-table)
    return int(table[rows, cols].sum()), list(zip(rows.tolist(), cols.tolist()))


def align_and_misclassify(estimate, truth) -> float:
    """Minimum mismatch fraction over injective estimated-to-true maps."""
    estimate = np.asarray(estimate)
    truth = np.asarray(truth)
    if estimate.shape != truth.shape:
        raise LengthMismatch(
            f"estimate has {estimate.shape[0]} labels, truth {truth.shape[0]}"
        )
    table = _confusion(estimate, truth)
    matched, _ = _best_matching(table)
    return 1.0 - matched / estimate.shape[0]


def best_label_map(estimate, truth) -> dict:
    """The estimated-to-true label map behind the misclassification rate.

    Estimated labels left unmatched (more estimated clusters than true
    ones) are absent from the returned dict.
    """
    estimate = np.asarray(estimate)
    truth = np.asarray(truth)
    if estimate.shape != truth.shape:
        raise LengthMismatch(
            f"estimate has {estimate.shape[0]} labels, truth {truth.shape[0]}"
        )
    est_labels = sorted(set(int(v) for v in estimate))
    true_labels = sorted(set(int(v) for v in truth))
    table = _confusion(estimate, truth)
    _, pairs = _best_matching(table)
    return {est_labels[i]: true_labels[j] for i, j in pairs}


def effective_sample_size(series) -> float:
    """ESS with Geyer's initial monotone positive sequence truncation."""
    x = np.asarray(series, dtype=float).ravel()
    n = x.shape[0]
    if n < 10:
        raise DimensionTooSmall("effective sample size needs at least 10 points")
    xc = x - x.mean()
    autocov = np.correlate(xc, xc, mode="full")[n - 1 :] / n
    if autocov[0] <= 0:
        raise ConstantSeries("series has zero variance")
    rho = autocov / autocov[0]
    pair_sums = []
    m = 0
    while 2 * m + 1 < n:
        gamma = rho[2 * m] + rho[2 * m + 1]
        if gamma <= 0:
            break
        if pair_sums and gamma > pair_sums[-1]:
            gamma = pair_sums[-1]
        pair_sums.append(gamma)
        m += 1
    tau = 2.0 * sum(pair_sums) - 1.0
    tau = max(tau, 1.0 / n)
    return float(min(n / tau, n))


def transition_probability_curves(q_samples, horizon: float, grid_points: int):
    """Posterior-mean transition probabilities on a uniform time grid.

    Returns (times, curves) with curves of shape (grid_points, K, K);
    curves[g, k, j] is the sample average of the k-to-j transition
    probability over a gap of times[g].
    """
    if not q_samples:
        raise EmptySamples("no generator samples")
    if grid_points < 1:
        raise DimensionTooSmall("need at least one grid point")
    times = np.linspace(0.0, float(horizon), grid_points)
    total = None
    for gen in q_samples:
        gen = validate_generator(getattr(gen, "rates", gen))
        stack = transition_matrices(gen, times)
        total = stack if total is None else total + stack
    return times, total / len(q_samples)


def _block_norm(name, a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{name} blocks have shapes {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def param_norm_error(truth, estimate) -> dict:
    """Euclidean / Frobenius distances per parameter block."""
    return {
        "pi": _block_norm("pi", truth.pi, estimate.pi),
        "coefficients": _block_norm(
            "coefficient", truth.outcome.coefficients(), estimate.outcome.coefficients()
        ),
        "generator": _block_norm("generator", truth.gen.rates, estimate.gen.rates),
    }


# ------------------------------------------------------------------ alignment


def _greedy_overlap_map(labels, ref_labels, m: int) -> dict:
    """Greedy bijection from this sample's labels onto the reference's,
    by descending subject overlap; ties break to the smaller pair."""
    overlap = np.zeros((m, m), dtype=np.int64)
    for a, b in zip(labels, ref_labels):
        overlap[int(a) - 1, int(b) - 1] += 1
    pairs = sorted(
        ((int(overlap[i, j]), i, j) for i in range(m) for j in range(m)),
        key=lambda t: (-t[0], t[1], t[2]),
    )
    mapping, used_src, used_dst = {}, set(), set()
    for _, i, j in pairs:
        if i in used_src or j in used_dst:
            continue
        mapping[i + 1] = j + 1
        used_src.add(i)
        used_dst.add(j)
        if len(mapping) == m:
            break
    return mapping


def align_modal_samples(samples):
    """Restrict to modal-cluster-count iterations and undo label switching.

    Returns (modal count, modal fraction, kept sample indices, aligned
    label arrays, aligned per-cluster params dicts). The first modal
    iteration is the reference; every other modal iteration's labels are
    remapped onto it by greedy maximum overlap.
    """
    if not samples:
        raise EmptySamples("no posterior samples")
    trace = ClusterTrace.from_samples(samples)
    modal, fraction = modal_cluster_count(trace)
    kept = [i for i, s in enumerate(samples) if s.n_clusters == modal]
    ref = np.asarray(samples[kept[0]].labels)
    aligned_labels, aligned_params = [], []
    for i in kept:
        sample = samples[i]
        labels = np.asarray(sample.labels)
        mapping = _greedy_overlap_map(labels, ref, modal)
        aligned_labels.append(
            np.array([mapping[int(l)] for l in labels], dtype=np.int64)
        )
        aligned_params.append(
            {mapping[lab]: par for lab, par in sample.params.items()}
        )
    return modal, fraction, kept, aligned_labels, aligned_params


def subject_modal_assignments(aligned_labels) -> np.ndarray:
    """Per-subject most frequent aligned label; ties break low."""
    if not aligned_labels:
        raise EmptySamples("no aligned label snapshots")
    stacked = np.stack(aligned_labels)
    n = stacked.shape[1]
    out = np.empty(n, dtype=np.int64)
    for s in range(n):
        freq = Counter(int(v) for v in stacked[:, s])
        out[s] = max(freq.items(), key=lambda kv: (kv[1], -kv[0]))[0]
    return out


def generator_eigenvalue_table(samples) -> list:
    """Rows (iteration, cluster, real, imag) for every generator
    eigenvalue in every modal-count iteration, labels aligned."""
    _, _, kept, _, aligned_params = align_modal_samples(samples)
    rows = []
    for idx, params in zip(kept, aligned_params):
        iteration = samples[idx].iteration
        for lab in sorted(params):
            vals = np.linalg.eigvals(params[lab].gen.rates)
            for v in sorted(vals, key=lambda z: (z.real, z.imag)):
                rows.append((iteration, lab, float(v.real), float(v.imag)))
    return rows


@dataclass(frozen=True)
class ParamBlockSummary:
    """Posterior mean and central credible band for one cluster."""

    pi_mean: np.ndarray
    pi_lower: np.ndarray
    pi_upper: np.ndarray
    gen_mean: np.ndarray
    gen_lower: np.ndarray
    gen_upper: np.ndarray
    coef_mean: np.ndarray
    coef_lower: np.ndarray
    coef_upper: np.ndarray


@dataclass(frozen=True)
class FitSummary:
    """Everything the report stage writes out."""

    modal_count: int
    modal_fraction: float
    n_samples: int
    n_conditional: int
    assignments: np.ndarray
    cluster_summaries: dict
    ess_generator: dict

    def __post_init__(self):
        if not 0.0 <= self.modal_fraction <= 1.0:
            raise DimensionMismatch("modal fraction outside [0, 1]")


def _central_interval(stack: np.ndarray, level: float):
    lo = (1.0 - level) / 2.0
    return (
        np.quantile(stack, lo, axis=0),
        np.quantile(stack, 1.0 - lo, axis=0),
    )


def summarize_fit(samples, credible: float = 0.95) -> FitSummary:
    """Modal-count-conditional posterior summary of a sample stream."""
    modal, fraction, kept, aligned_labels, aligned_params = align_modal_samples(
        samples
    )
    assignments = subject_modal_assignments(aligned_labels)
    summaries = {}
    ess_gen = {}
    for lab in range(1, modal + 1):
        pis = np.stack([p[lab].pi for p in aligned_params])
        gens = np.stack([p[lab].gen.rates for p in aligned_params])
        coefs = np.stack([p[lab].outcome.coefficients() for p in aligned_params])
        pi_lo, pi_hi = _central_interval(pis, credible)
        gen_lo, gen_hi = _central_interval(gens, credible)
        coef_lo, coef_hi = _central_interval(coefs, credible)
        summaries[lab] = ParamBlockSummary(
            pi_mean=pis.mean(axis=0),
            pi_lower=pi_lo,
            pi_upper=pi_hi,
            gen_mean=gens.mean(axis=0),
            gen_lower=gen_lo,
            gen_upper=gen_hi,
            coef_mean=coefs.mean(axis=0),
            coef_lower=coef_lo,
            coef_upper=coef_hi,
        )
        k = gens.shape[1]
        table = np.full((k, k), np.nan)
        for a in range(k):
            for b in range(k):
                if a == b:
                    continue
                series = gens[:, a, b]
                if series.shape[0] >= 10 and series.std() > 0:
                    table[a, b] = effective_sample_size(series)
        ess_gen[lab] = table
    return FitSummary(
        modal_count=modal,
        modal_fraction=fraction,
        n_samples=len(samples),
        n_conditional=len(kept),
        assignments=assignments,
        cluster_summaries=summaries,
        ess_generator=ess_gen,
    )
