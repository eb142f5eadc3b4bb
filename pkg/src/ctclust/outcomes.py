"""Observation models, conjugate priors, and closed-form marginals.

Two exponential-family outcome models are supported, each with one
parameter cell per (latent state, covariate level):

* Poisson counts with log link; Gamma priors on the rate cells.
* Gaussian with identity link and known standard deviation; Normal
  priors on the mean cells.

Together with Dirichlet-multinomial marginals for the initial state and
per-channel Gamma marginals for the CTMC jump rates, everything a
collapsed sampler needs comes out in closed form. All computation is in
log space; Gamma normalizer ratios go through log-Gamma.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaln, xlogy

from .ctmc import GeneratorMatrix, validate_generator
from .errors import (
    DimensionMismatch,
    MisalignedInputs,
    NegativeCount,
    NonFiniteInput,
)

__all__ = [
    "OutcomeModel",
    "PriorSpec",
    "OutcomeSuffStats",
    "ClusterParams",
    "outcome_log_density",
    "accumulate_suffstats",
    "subject_suffstats",
    "marginal_loglik_theta",
    "marginal_loglik_pi",
    "marginal_loglik_q",
    "subject_marginal_loglik",
    "cluster_joint_marginal",
    "sample_generator",
    "sample_outcome_model",
    "sample_cluster_params",
]

POISSON = "poisson"
GAUSSIAN = "gaussian"
_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class OutcomeModel:
    """Per-state (and per covariate level) observation distribution.

    ``state_params`` has shape (K, L): Poisson rate cells (strictly
    positive) or Gaussian mean cells. ``gaussian_sigma`` is the known
    observation standard deviation, required for the Gaussian family.
    """

    family: str
    state_params: np.ndarray
    gaussian_sigma: float | None = None

    def __post_init__(self):
        params = np.atleast_2d(np.asarray(self.state_params, dtype=float))
        object.__setattr__(self, "state_params", params)
        if self.family not in (POISSON, GAUSSIAN):
            raise ValueError(f"unknown outcome family {self.family!r}")
        if not np.all(np.isfinite(params)):
            raise NonFiniteInput("outcome parameters must be finite")
        if self.family == POISSON and np.any(params <= 0):
            raise ValueError("Poisson rate cells must be strictly positive")
        if self.family == GAUSSIAN:
            if self.gaussian_sigma is None or not self.gaussian_sigma > 0:
                raise ValueError("Gaussian family needs a positive known sigma")

    @property
    def n_states(self) -> int:
        return self.state_params.shape[0]

    @property
    def n_levels(self) -> int:
        return self.state_params.shape[1]

    def log_density_grid(self, outcomes, levels) -> np.ndarray:
        """Log densities for each (observation, state) pair, shape (T, K)."""
        outcomes = np.asarray(outcomes, dtype=float)
        cells = self.state_params[:, levels]  # (K, T)
        if self.family == POISSON:
            if np.any(outcomes < 0) or np.any(outcomes != np.round(outcomes)):
                raise NegativeCount("Poisson outcomes must be nonnegative integers")
            ll = xlogy(outcomes, cells) - cells - gammaln(outcomes + 1.0)
        else:
            sig = float(self.gaussian_sigma)
            z = (outcomes - cells) / sig
            ll = -0.5 * z * z - np.log(sig) - 0.5 * _LOG_2PI
        return ll.T

    def coefficients(self) -> np.ndarray:
        """Link-scale view, shape (L, K): row 0 holds per-state intercepts,
        rows 1.. hold contrasts of each level against level 0."""
        if self.family == POISSON:
            base = np.log(self.state_params)
        else:
            base = self.state_params.copy()
        coef = base.T.copy()
        coef[1:] -= coef[0]
        return coef


def outcome_log_density(model: OutcomeModel, o, k: int, level: int = 0) -> float:
    """Exact log density of outcome ``o`` in state ``k`` at ``level``."""
    grid = model.log_density_grid(np.array([o]), np.array([level]))
    return float(grid[0, k])


def _broadcast(value, shape, name) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(value, dtype=float), shape).copy()
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class PriorSpec:
    """Conjugate prior hyperparameters, materialized to full arrays.

    The Gaussian observation sd is a known model constant per fit; it is
    carried here so marginal-likelihood calls need no extra argument.
    """

    family: str
    n_states: int
    n_levels: int = 1
    dp_alpha: float = 1.0
    pi_conc: np.ndarray = None
    q_shape: np.ndarray = None
    q_rate: np.ndarray = None
    theta_shape: np.ndarray = None
    theta_rate: np.ndarray = None
    theta_mean: np.ndarray = None
    theta_sd: np.ndarray = None
    gaussian_sigma: float = 1.0

    @classmethod
    def build(
        cls,
        family: str,
        n_states: int,
        n_levels: int = 1,
        dp_alpha: float = 1.0,
        pi_conc=1.0,
        q_shape=1.0,
        q_rate=1.0,
        theta_shape=1.0,
        theta_rate=1.0,
        theta_mean=0.0,
        theta_sd=10.0,
        gaussian_sigma: float = 1.0,
    ) -> "PriorSpec":
        k, L = n_states, n_levels
        if family not in (POISSON, GAUSSIAN):
            raise ValueError(f"unknown outcome family {family!r}")
        spec = cls(
            family=family,
            n_states=k,
            n_levels=L,
            dp_alpha=float(dp_alpha),
            pi_conc=_broadcast(pi_conc, (k,), "pi concentration"),
            q_shape=_broadcast(q_shape, (k, k), "q shape"),
            q_rate=_broadcast(q_rate, (k,), "q rate"),
            theta_shape=_broadcast(theta_shape, (k, L), "theta shape"),
            theta_rate=_broadcast(theta_rate, (k, L), "theta rate"),
            theta_mean=_broadcast(theta_mean, (k, L), "theta mean"),
            theta_sd=_broadcast(theta_sd, (k, L), "theta sd"),
            gaussian_sigma=float(gaussian_sigma),
        )
        if spec.dp_alpha <= 0:
            raise ValueError("DP concentration must be positive")
        for arr, name in [
            (spec.pi_conc, "pi concentration"),
            (spec.q_rate, "q rate"),
            (spec.theta_shape, "theta shape"),
            (spec.theta_rate, "theta rate"),
            (spec.theta_sd, "theta sd"),
        ]:
            if np.any(arr <= 0):
                raise ValueError(f"{name} entries must be strictly positive")
        off = ~np.eye(k, dtype=bool)
        if np.any(spec.q_shape[off] <= 0):
            raise ValueError("q shape entries must be strictly positive")
        if family == GAUSSIAN and not spec.gaussian_sigma > 0:
            raise ValueError("known sigma must be positive")
        return spec


@dataclass
class OutcomeSuffStats:
    """Additive sufficient statistics of a subject set.

    Covers all three likelihood blocks: outcome cells (counts, sums,
    sums of squares per state x level), the first-visit state tally, and
    the CTMC path totals (jump counts, occupancy times).
    """

    n_obs: np.ndarray
    obs_sum: np.ndarray
    obs_sumsq: np.ndarray
    log_fact: float
    first: np.ndarray
    jumps: np.ndarray
    holding: np.ndarray

    @classmethod
    def zeros(cls, n_states: int, n_levels: int = 1) -> "OutcomeSuffStats":
        return cls(
            n_obs=np.zeros((n_states, n_levels)),
            obs_sum=np.zeros((n_states, n_levels)),
            obs_sumsq=np.zeros((n_states, n_levels)),
            log_fact=0.0,
            first=np.zeros(n_states),
            jumps=np.zeros((n_states, n_states)),
            holding=np.zeros(n_states),
        )

    def copy(self) -> "OutcomeSuffStats":
        return OutcomeSuffStats(
            self.n_obs.copy(),
            self.obs_sum.copy(),
            self.obs_sumsq.copy(),
            self.log_fact,
            self.first.copy(),
            self.jumps.copy(),
            self.holding.copy(),
        )

    def add(self, other: "OutcomeSuffStats") -> None:
        self.n_obs += other.n_obs
        self.obs_sum += other.obs_sum
        self.obs_sumsq += other.obs_sumsq
        self.log_fact += other.log_fact
        self.first += other.first
        self.jumps += other.jumps
        self.holding += other.holding

    def subtract(self, other: "OutcomeSuffStats") -> None:
        self.n_obs -= other.n_obs
        self.obs_sum -= other.obs_sum
        self.obs_sumsq -= other.obs_sumsq
        self.log_fact -= other.log_fact
        self.first -= other.first
        self.jumps -= other.jumps
        self.holding -= other.holding


def subject_suffstats(
    outcomes,
    levels,
    states,
    path_jumps,
    path_holding,
    n_states: int,
    n_levels: int = 1,
    family: str = POISSON,
) -> OutcomeSuffStats:
    """Statistics of one subject given its latent states and path totals."""
    outcomes = np.asarray(outcomes, dtype=float)
    states = np.asarray(states, dtype=np.intp)
    levels = np.asarray(levels, dtype=np.intp)
    if not (outcomes.shape == states.shape == levels.shape):
        raise MisalignedInputs("outcomes, levels, states must align")
    st = OutcomeSuffStats.zeros(n_states, n_levels)
    np.add.at(st.n_obs, (states, levels), 1.0)
    np.add.at(st.obs_sum, (states, levels), outcomes)
    np.add.at(st.obs_sumsq, (states, levels), outcomes * outcomes)
    if family == POISSON:
        st.log_fact = float(gammaln(outcomes + 1.0).sum())
    st.first[states[0]] = 1.0
    st.jumps += path_jumps
    st.holding += path_holding
    return st


def accumulate_suffstats(subjects, states, paths, prior: PriorSpec) -> OutcomeSuffStats:
    """Tally a slice of subjects into one statistic.

    ``subjects`` yields (outcomes, levels) pairs, ``states`` the aligned
    latent draws, ``paths`` the aligned :class:`PathStats`.
    """
    subjects = list(subjects)
    states = list(states)
    paths = list(paths)
    if not (len(subjects) == len(states) == len(paths)):
        raise MisalignedInputs("subjects, states, paths must have equal length")
    total = OutcomeSuffStats.zeros(prior.n_states, prior.n_levels)
    for (outcomes, levels), st, path in zip(subjects, states, paths):
        total.add(
            subject_suffstats(
                outcomes,
                levels,
                st,
                path.jumps,
                path.holding,
                prior.n_states,
                prior.n_levels,
                prior.family,
            )
        )
    return total


def marginal_loglik_theta(
    stats_others: OutcomeSuffStats, stats_subject: OutcomeSuffStats, prior: PriorSpec
) -> float:
    """log integral of the subject's outcome likelihood under the prior
    updated by the other subjects' statistics; exact by conjugacy."""
    if prior.family == POISSON:
        shape = prior.theta_shape + stats_others.obs_sum
        rate = prior.theta_rate + stats_others.n_obs
        y = stats_subject.obs_sum
        c = stats_subject.n_obs
        out = (
            gammaln(shape + y)
            - gammaln(shape)
            + shape * np.log(rate)
            - (shape + y) * np.log(rate + c)
        )
        return float(out.sum() - stats_subject.log_fact)
    obs_prec = 1.0 / prior.gaussian_sigma**2
    prec = 1.0 / prior.theta_sd**2 + obs_prec * stats_others.n_obs
    mean = (
        prior.theta_mean / prior.theta_sd**2 + obs_prec * stats_others.obs_sum
    ) / prec
    c = stats_subject.n_obs
    s1 = stats_subject.obs_sum
    s2 = stats_subject.obs_sumsq
    prec_post = prec + obs_prec * c
    mean_post = (prec * mean + obs_prec * s1) / prec_post
    out = (
        -0.5 * c * (_LOG_2PI + 2.0 * np.log(prior.gaussian_sigma))
        + 0.5 * (np.log(prec) - np.log(prec_post))
        - 0.5 * (obs_prec * s2 + prec * mean**2 - prec_post * mean_post**2)
    )
    return float(out.sum())


def marginal_loglik_pi(
    stats_others: OutcomeSuffStats, stats_subject: OutcomeSuffStats, prior: PriorSpec
) -> float:
    """Dirichlet-multinomial marginal of the subject's first-visit states."""
    conc = prior.pi_conc + stats_others.first
    s = stats_subject.first
    return float(
        gammaln(conc + s).sum()
        - gammaln(conc).sum()
        + gammaln(conc.sum())
        - gammaln(conc.sum() + s.sum())
    )


def marginal_loglik_q(
    stats_others: OutcomeSuffStats, stats_subject: OutcomeSuffStats, prior: PriorSpec
) -> float:
    """Per-channel Gamma marginal of the subject's path statistics."""
    k = prior.n_states
    off = ~np.eye(k, dtype=bool)
    shape = (prior.q_shape + stats_others.jumps)[off]
    rate = np.broadcast_to(
        (prior.q_rate + stats_others.holding)[:, None], (k, k)
    )[off]
    n = stats_subject.jumps[off]
    r = np.broadcast_to(stats_subject.holding[:, None], (k, k))[off]
    out = (
        gammaln(shape + n)
        - gammaln(shape)
        + shape * np.log(rate)
        - (shape + n) * np.log(rate + r)
    )
    return float(out.sum())


def subject_marginal_loglik(
    stats_others: OutcomeSuffStats, stats_subject: OutcomeSuffStats, prior: PriorSpec
) -> float:
    """Sum of the three separable marginal blocks (outcomes, pi, Q)."""
    return (
        marginal_loglik_theta(stats_others, stats_subject, prior)
        + marginal_loglik_pi(stats_others, stats_subject, prior)
        + marginal_loglik_q(stats_others, stats_subject, prior)
    )


def cluster_joint_marginal(stats: OutcomeSuffStats, prior: PriorSpec) -> float:
    """Joint marginal likelihood of a whole cluster's statistics.

    By conjugacy this equals the telescoped product of per-subject
    marginals taken in any order (each against the prior updated by its
    predecessors)."""
    empty = OutcomeSuffStats.zeros(prior.n_states, prior.n_levels)
    return subject_marginal_loglik(empty, stats, prior)


@dataclass(frozen=True)
class ClusterParams:
    """Instantiated parameters of one mixture component."""

    pi: np.ndarray
    gen: GeneratorMatrix
    outcome: OutcomeModel


def sample_generator(stats: OutcomeSuffStats, prior: PriorSpec, rng) -> GeneratorMatrix:
    """Draw a generator from the per-channel Gamma conditional posterior."""
    rates = rng.gamma(
        prior.q_shape + stats.jumps,
        1.0 / (prior.q_rate + stats.holding)[:, None],
    )
    np.fill_diagonal(rates, 0.0)
    return validate_generator(rates)


def sample_outcome_model(stats: OutcomeSuffStats, prior: PriorSpec, rng) -> OutcomeModel:
    """Draw outcome parameter cells from their conjugate posterior."""
    if prior.family == POISSON:
        cells = rng.gamma(
            prior.theta_shape + stats.obs_sum,
            1.0 / (prior.theta_rate + stats.n_obs),
        )
        cells = np.maximum(cells, 1e-300)
        return OutcomeModel(POISSON, cells)
    obs_prec = 1.0 / prior.gaussian_sigma**2
    prec = 1.0 / prior.theta_sd**2 + obs_prec * stats.n_obs
    mean = (prior.theta_mean / prior.theta_sd**2 + obs_prec * stats.obs_sum) / prec
    cells = rng.normal(mean, np.sqrt(1.0 / prec))
    return OutcomeModel(GAUSSIAN, cells, gaussian_sigma=prior.gaussian_sigma)


def sample_cluster_params(stats: OutcomeSuffStats, prior: PriorSpec, rng) -> ClusterParams:
    """Draw (pi, Q, theta) from their conjugate conditional posteriors."""
    pi = rng.dirichlet(prior.pi_conc + stats.first)
    gen = sample_generator(stats, prior, rng)
    outcome = sample_outcome_model(stats, prior, rng)
    return ClusterParams(pi=pi, gen=gen, outcome=outcome)
