"""Scaled forward-backward smoothing on a subject's observation grid.

The forward pass normalizes at every step and stores the normalizers, so
the recursions stay in range for arbitrarily long series; the backward
pass is normalized too, and posterior quantities are formed as ratios in
which all normalizers cancel. ``forward_backward`` handles one subject;
``forward_backward_stack`` runs the same recursions for a stack of
subjects that share a grid length, which is what the sampler's hot loop
uses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ctmc import GeneratorMatrix, InitialDistribution, transition_matrices
from .dataio import SubjectRecord
from .errors import DimensionMismatch, NonMonotoneTimes, ZeroLikelihood
from .outcomes import OutcomeModel

__all__ = [
    "SmoothingResult",
    "forward_backward",
    "forward_backward_stack",
    "sample_latent_states",
    "sample_state_pairs",
    "sample_states_stack",
    "sample_pairs_stack",
]


@dataclass
class SmoothingResult:
    """Posterior summaries of one subject's latent state sequence.

    ``state_marginals[t, k]`` is P(state k at observation t | data);
    ``pair_marginals[t, k, j]`` is P(state k at t, state j at t+1 | data).
    ``scalers`` are the per-step forward normalizers, whose logs sum to
    ``loglik``.
    """

    state_marginals: np.ndarray
    pair_marginals: np.ndarray
    loglik: float
    scalers: np.ndarray
    log_scalers: np.ndarray


def forward_backward_stack(pi, trans, logdens):
    """Smoothing recursions for n subjects sharing a grid length.

    Parameters
    ----------
    pi : ndarray, (K,) or (n, K)
        Initial state distribution, shared or per subject.
    trans : ndarray, (n, T-1, K, K)
        Interval transition matrices.
    logdens : ndarray, (n, T, K)
        Log outcome densities per observation and state.

    Returns
    -------
    a : (n, T, K), b : (n, T-1, K, K), loglik : (n,), log_scalers : (n, T)
    """
    logdens = np.asarray(logdens, dtype=float)
    n, T, k = logdens.shape
    trans = np.asarray(trans, dtype=float)
    if trans.shape != (n, T - 1, k, k) and T > 1:
        raise DimensionMismatch(f"transition stack has shape {trans.shape}")
    pi = np.asarray(pi, dtype=float)
    if pi.ndim == 1:
        pi = np.broadcast_to(pi, (n, k))
    shift = logdens.max(axis=2)
    if not np.all(np.isfinite(shift)):
        raise ZeroLikelihood("an observation has zero density in every state")
    emis = np.exp(logdens - shift[:, :, None])
    log_scalers = np.empty((n, T))
    fwd = np.empty((n, T, k))
    cur = pi * emis[:, 0]
    norm = cur.sum(axis=1)
    if np.any(norm <= 0):
        raise ZeroLikelihood("zero forward mass at the first observation")
    fwd[:, 0] = cur / norm[:, None]
    log_scalers[:, 0] = np.log(norm) + shift[:, 0]
    for t in range(1, T):
        pred = np.einsum("nk,nkj->nj", fwd[:, t - 1], trans[:, t - 1])
        cur = pred * emis[:, t]
        norm = cur.sum(axis=1)
        if np.any(norm <= 0):
            raise ZeroLikelihood(f"zero forward mass at observation {t}")
        fwd[:, t] = cur / norm[:, None]
        log_scalers[:, t] = np.log(norm) + shift[:, t]
    a = np.empty((n, T, k))
    b = np.empty((n, max(T - 1, 0), k, k))
    a[:, T - 1] = fwd[:, T - 1]
    back = np.ones((n, k))
    for t in range(T - 2, -1, -1):
        w = emis[:, t + 1] * back
        pair = fwd[:, t, :, None] * trans[:, t] * w[:, None, :]
        tot = pair.sum(axis=(1, 2))
        if np.any(tot <= 0):
            raise ZeroLikelihood(f"zero smoothing mass at interval {t}")
        b[:, t] = pair / tot[:, None, None]
        a[:, t] = b[:, t].sum(axis=2)
        back = np.einsum("nkj,nj->nk", trans[:, t], w)
        back /= back.sum(axis=1)[:, None]
    loglik = log_scalers.sum(axis=1)
    return a, b, loglik, log_scalers


def forward_backward(
    subject: SubjectRecord,
    pi: InitialDistribution,
    gen: GeneratorMatrix,
    outcome: OutcomeModel,
) -> SmoothingResult:
    """Posterior state and pair marginals for one subject."""
    if np.any(np.diff(subject.times) <= 0):
        raise NonMonotoneTimes(f"subject {subject.subject_id}")
    trans = transition_matrices(gen, subject.deltas)
    logdens = outcome.log_density_grid(subject.outcomes, subject.levels)
    a, b, loglik, log_scalers = forward_backward_stack(
        pi.probs, trans[None, ...], logdens[None, ...]
    )
    return SmoothingResult(
        state_marginals=a[0],
        pair_marginals=b[0],
        loglik=float(loglik[0]),
        scalers=np.exp(log_scalers[0]),
        log_scalers=log_scalers[0],
    )


def _categorical_rows(probs: np.ndarray, rng) -> np.ndarray:
    """One draw per row of a (m, c) nonnegative weight matrix."""
    cum = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1]) * cum[..., -1]
    idx = (cum <= u[..., None]).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def sample_latent_states(sm: SmoothingResult, rng) -> np.ndarray:
    """Independent draws of the state at each observation from a_{t,.}."""
    return _categorical_rows(sm.state_marginals, rng)


def sample_state_pairs(sm: SmoothingResult, t: int, rng):
    """Draw the (state at t, state at t+1) pair from b_{t,.,.}."""
    k = sm.state_marginals.shape[1]
    flat = sm.pair_marginals[t].reshape(1, k * k)
    idx = int(_categorical_rows(flat, rng)[0])
    return idx // k, idx % k


def sample_states_stack(a: np.ndarray, rng) -> np.ndarray:
    """Vectorized sample_latent_states over a (n, T, K) stack."""
    return _categorical_rows(a, rng)


def sample_pairs_stack(b: np.ndarray, rng):
    """Vectorized pair draws over a (n, T-1, K, K) stack.

    Returns (starts, ends), each (n, T-1).
    """
    n, tm1, k, _ = b.shape
    idx = _categorical_rows(b.reshape(n, tm1, k * k), rng)
    return idx // k, idx % k
