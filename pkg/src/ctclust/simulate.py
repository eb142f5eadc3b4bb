"""Synthetic trajectory generator.

Each subject is assigned to a cluster, a latent continuous-time chain is
simulated over the full horizon from that cluster's generator, and the
outcomes are drawn from the cluster's observation model at the latent
state occupied at each (irregular) observation time. Ground truth
(labels, latent paths, parameters) is returned separately from the
dataset so the fitting path never sees it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ctmc import GeneratorMatrix, validate_generator
from .dataio import Dataset, SubjectRecord
from .errors import UnknownPreset
from .outcomes import GAUSSIAN, POISSON, OutcomeModel
from .paths import simulate_trajectory

__all__ = [
    "ClusterSpec",
    "SimConfig",
    "builtin_example_config",
    "generate_dataset",
    "PRESET_NAMES",
]


@dataclass(frozen=True)
class ClusterSpec:
    """True parameters and size of one simulated cluster."""

    pi: np.ndarray
    gen: GeneratorMatrix
    outcome: OutcomeModel
    n_subjects: int

    def __post_init__(self):
        object.__setattr__(self, "pi", np.asarray(self.pi, dtype=float))
        if self.n_subjects < 1:
            raise ValueError("cluster subject count must be >= 1")
        k = self.gen.dim
        if self.pi.shape != (k,) or self.outcome.n_states != k:
            raise ValueError("cluster parameter dimensions disagree")


@dataclass(frozen=True)
class SimConfig:
    """Full description of a synthetic study."""

    clusters: tuple
    n_obs: int
    horizon: float = 15.0
    level_probs: np.ndarray = None  # None: no covariate column

    def __post_init__(self):
        if self.n_obs < 1:
            raise ValueError("need at least one observation per subject")
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if self.level_probs is not None:
            probs = np.asarray(self.level_probs, dtype=float)
            if probs.ndim != 1 or abs(probs.sum() - 1.0) > 1e-9 or np.any(probs < 0):
                raise ValueError("level probabilities must form a distribution")
            object.__setattr__(self, "level_probs", probs)

    @property
    def family(self) -> str:
        return self.clusters[0].outcome.family


# Three-state generators used across the built-in studies.
_Q_A = [[-2.5, 2.0, 0.5], [0.5, -1.5, 1.0], [0.1, 0.9, -1.0]]
_Q_B = [[-1.20, 1.00, 0.20], [1.40, -1.50, 0.10], [0.05, 0.20, -0.25]]
_Q_C = [[-0.50, 0.49, 0.01], [0.25, -0.30, 0.05], [0.01, 0.10, -0.11]]
_PI = [(0.5, 0.4, 0.1), (0.3, 0.5, 0.2), (0.45, 0.45, 0.1)]
_GAUSS_MEANS = [(-4.0, 0.0, 5.0), (-5.5, 0.5, 5.5), (-5.0, 1.0, 4.8)]
_POIS_LOGRATES = [(-2.0, 1.2, 3.0), (-1.0, 1.0, 2.5), (-1.5, 1.1, 2.8)]
# Factor-covariate study: rows are (intercept, level-2 effect, level-3 effect)
# per state, on the log scale.
_COVARIATE_COEF = [
    [[-2.0, 1.2, 3.0], [-0.3, 0.0, 0.0], [0.5, -0.1, -0.1]],
    [[-1.0, 1.0, 2.5], [0.4, -0.2, -0.5], [-0.1, 0.0, -0.4]],
    [[-1.5, 1.1, 2.8], [1.0, 0.1, -0.1], [-0.5, 0.1, -0.5]],
]
_COVARIATE_SIZES = (300, 500, 200)
_COVARIATE_LEVEL_PROBS = (0.25, 0.25, 0.5)

PRESET_NAMES = ("ex1-gaussian", "ex1-poisson", "ex2", "ex3")


def _rate_cells_from_coef(coef) -> np.ndarray:
    coef = np.asarray(coef, dtype=float)  # (L, K)
    cells = coef.copy()
    cells[1:] += cells[0]
    return np.exp(cells.T)  # (K, L)


def builtin_example_config(
    which: str,
    n_obs: int,
    subjects_per_cluster=None,
    sigma: float = 1.0,
    horizon: float = 15.0,
) -> SimConfig:
    """Named study designs with their published parameter sets.

    ``subjects_per_cluster`` overrides the default sizes (scalar or one
    value per cluster); ``sigma`` applies to the Gaussian studies.
    """
    which = which.lower()
    if which not in PRESET_NAMES:
        raise UnknownPreset(f"unknown preset {which!r}; choose from {PRESET_NAMES}")
    gens = [validate_generator(q) for q in (_Q_A, _Q_B, _Q_C)]
    if which == "ex1-gaussian":
        outcomes = [
            OutcomeModel(GAUSSIAN, np.array(m)[:, None], gaussian_sigma=sigma)
            for m in _GAUSS_MEANS
        ]
        pis, sizes = _PI, (1000, 1000, 1000)
    elif which == "ex1-poisson":
        outcomes = [
            OutcomeModel(POISSON, np.exp(np.array(b))[:, None]) for b in _POIS_LOGRATES
        ]
        pis, sizes = _PI, (1000, 1000, 1000)
    elif which == "ex2":
        # Clusters differ only through Q; observation model and initial
        # distribution are shared.
        outcomes = [
            OutcomeModel(GAUSSIAN, np.array(_GAUSS_MEANS[0])[:, None], gaussian_sigma=sigma)
            for _ in range(3)
        ]
        pis, sizes = (_PI[0],) * 3, (1000, 1000, 1000)
    else:
        outcomes = [OutcomeModel(POISSON, _rate_cells_from_coef(c)) for c in _COVARIATE_COEF]
        pis, sizes = _PI, _COVARIATE_SIZES
    if subjects_per_cluster is not None:
        if np.isscalar(subjects_per_cluster):
            sizes = (int(subjects_per_cluster),) * 3
        else:
            sizes = tuple(int(s) for s in subjects_per_cluster)
    clusters = tuple(
        ClusterSpec(pi=np.array(pi), gen=g, outcome=o, n_subjects=s)
        for pi, g, o, s in zip(pis, gens, outcomes, sizes)
    )
    level_probs = np.array(_COVARIATE_LEVEL_PROBS) if which == "ex3" else None
    return SimConfig(clusters=clusters, n_obs=n_obs, horizon=horizon, level_probs=level_probs)


def _observation_times(n_obs: int, horizon: float, rng) -> np.ndarray:
    if n_obs == 1:
        return np.zeros(1)
    times = np.concatenate([[0.0], np.sort(rng.uniform(0.0, horizon, n_obs - 1))])
    while np.any(np.diff(times) <= 0):  # vanishing-probability duplicates
        dup = np.flatnonzero(np.diff(times) <= 0) + 1
        times[dup] += 1e-9
        times = np.sort(times)
    return times


def _states_at(jump_times, states, query) -> np.ndarray:
    idx = np.searchsorted(np.asarray(jump_times), query, side="right")
    return np.asarray(states)[idx]


def generate_dataset(config: SimConfig, rng):
    """Simulate a dataset; returns (Dataset, truth dict).

    The truth dict records per-subject cluster labels (1-based), the
    latent state at every observation time, the full latent jump path,
    and the per-cluster true parameters.
    """
    total = sum(c.n_subjects for c in config.clusters)
    width = max(4, len(str(total)))
    subjects = []
    labels = {}
    obs_states = {}
    paths = {}
    sid_counter = 0
    n_levels = 1 if config.level_probs is None else config.level_probs.shape[0]
    for ci, cluster in enumerate(config.clusters, start=1):
        for _ in range(cluster.n_subjects):
            sid = f"{sid_counter:0{width}d}"
            sid_counter += 1
            times = _observation_times(config.n_obs, config.horizon, rng)
            start = int(rng.choice(cluster.pi.shape[0], p=cluster.pi))
            jump_times, path_states = simulate_trajectory(
                cluster.gen, config.horizon, start, rng
            )
            states = _states_at(jump_times, path_states, times)
            if config.level_probs is None:
                levels = np.zeros(config.n_obs, dtype=np.intp)
            else:
                levels = rng.choice(n_levels, size=config.n_obs, p=config.level_probs)
            cells = cluster.outcome.state_params[states, levels]
            if cluster.outcome.family == POISSON:
                outcomes = rng.poisson(cells).astype(float)
            else:
                outcomes = rng.normal(cells, cluster.outcome.gaussian_sigma)
            subjects.append(
                SubjectRecord(sid, times, outcomes, levels)
            )
            labels[sid] = ci
            obs_states[sid] = [int(s) + 1 for s in states]
            paths[sid] = {
                "jump_times": [float(t) for t in jump_times],
                "states": [int(s) + 1 for s in path_states],
            }
    truth = {
        "family": config.family,
        "horizon": config.horizon,
        "labels": labels,
        "obs_states": obs_states,
        "paths": paths,
        "params": {
            str(i): {
                "pi": c.pi.tolist(),
                "q": c.gen.rates.tolist(),
                "theta_cells": c.outcome.state_params.tolist(),
                "sigma": c.outcome.gaussian_sigma,
            }
            for i, c in enumerate(config.clusters, start=1)
        },
    }
    return Dataset(subjects), truth
