"""Finite-state continuous-time Markov chain primitives.

A chain on states ``0..K-1`` is described by a generator matrix whose
off-diagonal entries are non-negative jump rates and whose rows sum to
zero, together with an initial distribution over states. Everything else
in the package (path simulation, smoothing, the cluster sampler) builds
on the two operations here: validating a generator and turning it into
interval transition probabilities via the matrix exponential.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import (
    DimensionTooSmall,
    EigenFailure,
    NegativeRate,
    NonFiniteInput,
    NonSquare,
)

__all__ = [
    "GeneratorMatrix",
    "StochasticMatrix",
    "InitialDistribution",
    "validate_generator",
    "transition_matrix",
    "transition_matrices",
    "generator_eigenvalues",
    "stationary_distribution",
]

# Entries of a computed transition matrix may dip below zero by rounding;
# anything below this is a numerical failure rather than noise.
_NEGATIVE_ENTRY_TOL = 1e-12
# Spectral reconstruction of Q must match to this relative accuracy or we
# fall back to the dense matrix exponential.
_SPECTRAL_RECON_TOL = 1e-10


@dataclass(frozen=True)
class GeneratorMatrix:
    """Validated CTMC generator.

    Attributes
    ----------
    rates : ndarray, shape (K, K)
        Off-diagonal entries are jump rates, diagonal entries are the
        negated row sums of the off-diagonals. The array is read-only.
    """

    rates: np.ndarray

    @property
    def dim(self) -> int:
        return self.rates.shape[0]

    def jump_rates(self) -> np.ndarray:
        """Total rate of leaving each state (negated diagonal)."""
        return -np.diag(self.rates)


@dataclass(frozen=True)
class StochasticMatrix:
    """Row-stochastic matrix of interval transition probabilities."""

    probs: np.ndarray

    @property
    def dim(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True)
class InitialDistribution:
    """Probability vector over the K states at the first observation."""

    probs: np.ndarray

    @property
    def dim(self) -> int:
        return self.probs.shape[0]


def validate_generator(raw) -> GeneratorMatrix:
    """Validate raw rates and return a generator with exact zero row sums.

    Parameters
    ----------
    raw : array_like, shape (K, K)
        Candidate generator. Only the off-diagonal entries are trusted;
        the diagonal is recomputed as minus the off-diagonal row sum.

    Raises
    ------
    NonSquare, DimensionTooSmall, NonFiniteInput, NegativeRate
    """
    rates = np.array(raw, dtype=float)
    if rates.ndim != 2 or rates.shape[0] != rates.shape[1]:
        raise NonSquare(f"generator must be square, got shape {rates.shape}")
    k = rates.shape[0]
    if k < 2:
        raise DimensionTooSmall("generator needs at least two states")
    off = ~np.eye(k, dtype=bool)
    if not np.all(np.isfinite(rates[off])):
        raise NonFiniteInput("generator off-diagonal entries must be finite")
    neg = (rates < 0) & off
    if np.any(neg):
        l, m = np.argwhere(neg)[0]
        raise NegativeRate(f"rate [{l},{m}] = {rates[l, m]} is negative")
    np.fill_diagonal(rates, 0.0)
    np.fill_diagonal(rates, -rates.sum(axis=1))
    rates.setflags(write=False)
    return GeneratorMatrix(rates)


def _clean_stochastic(probs: np.ndarray, tol: float) -> np.ndarray:
    """Clip rounding-level negatives and renormalize rows to sum to one."""
    lo = probs.min()
    if lo < -tol:
        raise EigenFailure(f"transition probability {lo} below -{tol}")
    probs = np.clip(probs, 0.0, 1.0)
    probs /= probs.sum(axis=-1, keepdims=True)
    return probs


def transition_matrix(gen: GeneratorMatrix, delta: float) -> StochasticMatrix:
    """Interval transition probabilities exp(delta * Q).

    ``delta == 0`` returns the exact identity. Uses the scaling-and-squaring
    Pade approximant; see :func:`transition_matrices` for the batched
    spectral path used in hot loops.
    """
    if not np.isfinite(delta):
        raise NonFiniteInput("time gap must be finite")
    if delta < 0:
        raise ValueError("time gap must be non-negative")
    if delta == 0.0:
        return StochasticMatrix(np.eye(gen.dim))
    probs = expm(delta * gen.rates)
    return StochasticMatrix(_clean_stochastic(probs, _NEGATIVE_ENTRY_TOL))


class _Spectral:
    """Eigendecomposition of a generator, or None if not usable."""

    __slots__ = ("eigvals", "vectors", "inverse")

    def __init__(self, eigvals, vectors, inverse):
        self.eigvals = eigvals
        self.vectors = vectors
        self.inverse = inverse


def _spectral_factor(rates: np.ndarray):
    try:
        w, v = np.linalg.eig(rates)
        vinv = np.linalg.inv(v)
    except np.linalg.LinAlgError:
        return None
    recon = (v * w) @ vinv
    scale = max(1.0, float(np.abs(rates).max()))
    if np.abs(recon - rates).max() > _SPECTRAL_RECON_TOL * scale:
        return None
    return _Spectral(w, v, vinv)


def transition_matrices(gen: GeneratorMatrix, deltas) -> np.ndarray:
    """exp(delta * Q) for many gaps at once.

    Diagonalizes Q once and forms every exponential from the shared
    factors; falls back to the dense matrix exponential per gap when the
    eigensystem is defective or poorly conditioned, and whenever the
    spectral result shows more than rounding-level negativity.

    Returns a plain ndarray of shape ``(len(deltas), K, K)``.
    """
    deltas = np.asarray(deltas, dtype=float)
    if not np.all(np.isfinite(deltas)):
        raise NonFiniteInput("time gaps must be finite")
    if np.any(deltas < 0):
        raise ValueError("time gaps must be non-negative")
    spec = _spectral_factor(gen.rates)
    if spec is not None:
        phases = np.exp(np.multiply.outer(deltas, spec.eigvals))
        probs = np.einsum("kl,nl,lm->nkm", spec.vectors, phases, spec.inverse)
        probs = probs.real
        # The looser guard here only decides whether to trust the fast path.
        if probs.min() >= -1e-9:
            probs = np.clip(probs, 0.0, 1.0)
            probs /= probs.sum(axis=-1, keepdims=True)
            probs[deltas == 0.0] = np.eye(gen.dim)
            return probs
    out = np.empty((deltas.shape[0], gen.dim, gen.dim))
    for i, d in enumerate(deltas):
        out[i] = transition_matrix(gen, float(d)).probs
    return out


def generator_eigenvalues(gen: GeneratorMatrix) -> np.ndarray:
    """Eigenvalues of the generator, sorted by descending real part.

    One eigenvalue is always ~0; the rest have non-positive real parts,
    and their magnitudes set the mixing time scale of the chain.
    """
    try:
        w = np.linalg.eigvals(gen.rates)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - hard to trigger
        raise EigenFailure(str(exc)) from exc
    order = np.lexsort((w.imag, -w.real))
    return w[order]


def stationary_distribution(gen: GeneratorMatrix) -> np.ndarray:
    """Long-run occupancy: the probability vector solving pi Q = 0."""
    k = gen.dim
    a = np.vstack([gen.rates.T, np.ones(k)])
    b = np.zeros(k + 1)
    b[-1] = 1.0
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    sol = np.clip(sol, 0.0, None)
    return sol / sol.sum()


def validate_initial_distribution(raw) -> InitialDistribution:
    """Check a probability vector: finite, non-negative, sums to one."""
    probs = np.array(raw, dtype=float)
    if probs.ndim != 1:
        raise NonSquare(f"initial distribution must be a vector, got shape {probs.shape}")
    if probs.shape[0] < 2:
        raise DimensionTooSmall("initial distribution needs at least two states")
    if not np.all(np.isfinite(probs)):
        raise NonFiniteInput("initial distribution must be finite")
    if np.any(probs < 0):
        raise NegativeRate("initial distribution entries must be non-negative")
    total = probs.sum()
    if not np.isclose(total, 1.0, rtol=0, atol=1e-8):
        raise NonFiniteInput(f"initial distribution sums to {total}, expected 1")
    probs = probs / total
    probs.setflags(write=False)
    return InitialDistribution(probs)
