"""Run configuration from one structured YAML document.

A config file holds up to three sections. Every key is optional unless
stated; defaults are listed next to each key.

``prior`` (required by ``fit`` unless given through flags)::

    family: poisson | gaussian   # required
    states: 3                    # required, number of latent states
    dp_alpha: 1.0                # DP concentration
    pi_concentration: 1.0        # scalar or list of length states
    q_shape: 1.0                 # scalar or states x states
    q_rate: 1.0                  # scalar or list of length states
    q_prior: informative         # preset: shape 20, rate 500
    theta_shape: 1.0             # Poisson cells, scalar or states x levels
    theta_rate: 1.0
    theta_mean: 0.0              # Gaussian cells
    theta_sd: 10.0
    gaussian_sigma: 1.0          # known observation noise scale

``sampler``::

    iterations: 1000             burn_in: 0        thin: 1
    restricted_scans: 3          initial_clusters: 1
    variant: full | q-only       seed: 0
    gibbs_sweeps: 1              split_merge_moves: 1
    checkpoint_interval: 0       # iterations between snapshots, 0 = off

``simulate`` either names a preset::

    preset: ex1-poisson | ex1-gaussian | ex2 | ex3
    n_obs: 50                    # observations per subject
    subjects_per_cluster: 50     # scalar or one entry per cluster
    sigma: 1.0                   # Gaussian presets
    horizon: 15.0
    seed: 0

or spells the clusters out::

    family: poisson | gaussian
    sigma: 1.0
    n_obs: 50
    horizon: 15.0
    seed: 0
    level_probs: [0.6, 0.4]      # optional factor covariate
    clusters:
      - pi: [0.5, 0.5]
        q: [[0.0, 0.3], [0.1, 0.0]]
        theta_cells: [[1.0], [4.0]]
        n_subjects: 30
"""

from __future__ import annotations

import yaml

from .errors import ConfigError, ConfigParse, IOFailure
from .outcomes import GAUSSIAN, POISSON, OutcomeModel, PriorSpec
from .ctmc import validate_generator
from .sampler import SamplerConfig
from .simulate import ClusterSpec, SimConfig, builtin_example_config

__all__ = [
    "load_config_file",
    "build_prior",
    "build_sampler_config",
    "build_sim_config",
    "Q_PRIOR_PRESETS",
]

# the informative generator prior used for the real-data analysis
Q_PRIOR_PRESETS = {"informative": (20.0, 500.0)}

_PRIOR_KEYS = {
    "family", "states", "levels", "dp_alpha", "pi_concentration",
    "q_shape", "q_rate", "q_prior", "theta_shape", "theta_rate",
    "theta_mean", "theta_sd", "gaussian_sigma",
}
_SAMPLER_KEYS = {
    "iterations", "burn_in", "thin", "restricted_scans", "initial_clusters",
    "variant", "seed", "gibbs_sweeps", "split_merge_moves",
    "checkpoint_interval",
}
_SIM_KEYS = {
    "preset", "n_obs", "subjects_per_cluster", "sigma", "horizon", "seed",
    "family", "clusters", "level_probs",
}


def load_config_file(path) -> dict:
    """Parse a YAML config file into a plain dict of sections."""
    try:
        with open(path, encoding="utf-8") as handle:
            doc = yaml.safe_load(handle)
    except OSError as exc:
        raise IOFailure(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigParse(f"{path}: {exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigParse(f"{path}: top level must be a mapping")
    for section, keys in (
        ("prior", _PRIOR_KEYS),
        ("sampler", _SAMPLER_KEYS),
        ("simulate", _SIM_KEYS),
    ):
        body = doc.get(section)
        if body is None:
            continue
        if not isinstance(body, dict):
            raise ConfigParse(f"{path}: section {section!r} must be a mapping")
        unknown = set(body) - keys
        if unknown:
            raise ConfigError(
                f"unknown {section} keys: {', '.join(sorted(unknown))}"
            )
    unknown = set(doc) - {"prior", "sampler", "simulate"}
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(sorted(unknown))}")
    return doc


def build_prior(section: dict, n_levels: int = 1, **overrides) -> PriorSpec:
    """PriorSpec from the ``prior`` section plus keyword overrides."""
    merged = dict(section or {})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    family = merged.get("family")
    states = merged.get("states")
    if family is None or states is None:
        raise ConfigError("prior needs both 'family' and 'states'")
    if family not in (POISSON, GAUSSIAN):
        raise ConfigError(f"unknown outcome family {family!r}")
    q_shape = merged.get("q_shape", 1.0)
    q_rate = merged.get("q_rate", 1.0)
    preset = merged.get("q_prior")
    if preset is not None:
        if preset not in Q_PRIOR_PRESETS:
            raise ConfigError(
                f"unknown q_prior preset {preset!r}; "
                f"choose from {sorted(Q_PRIOR_PRESETS)}"
            )
        q_shape, q_rate = Q_PRIOR_PRESETS[preset]
    try:
        return PriorSpec.build(
            family=family,
            n_states=int(states),
            n_levels=int(merged.get("levels", n_levels)),
            dp_alpha=merged.get("dp_alpha", 1.0),
            pi_conc=merged.get("pi_concentration", 1.0),
            q_shape=q_shape,
            q_rate=q_rate,
            theta_shape=merged.get("theta_shape", 1.0),
            theta_rate=merged.get("theta_rate", 1.0),
            theta_mean=merged.get("theta_mean", 0.0),
            theta_sd=merged.get("theta_sd", 10.0),
            gaussian_sigma=merged.get("gaussian_sigma", 1.0),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid prior: {exc}") from exc


def build_sampler_config(section: dict, prior: PriorSpec, **overrides) -> SamplerConfig:
    """SamplerConfig from the ``sampler`` section plus keyword overrides.

    Override names follow the dataclass fields (num_iterations, burn_in,
    thin, restricted_scans, initial_clusters, variant, seed,
    checkpoint_interval, checkpoint_path); None means "not overridden".
    """
    merged = dict(section or {})
    if "iterations" in merged:
        merged["num_iterations"] = merged.pop("iterations")
    merged.update({k: v for k, v in overrides.items() if v is not None})
    known = {
        "num_iterations", "burn_in", "thin", "restricted_scans",
        "initial_clusters", "variant", "seed", "gibbs_sweeps",
        "split_merge_moves", "checkpoint_interval", "checkpoint_path",
    }
    unknown = set(merged) - known
    if unknown:
        raise ConfigError(f"unknown sampler keys: {', '.join(sorted(unknown))}")
    try:
        return SamplerConfig(prior=prior, **merged)
    except TypeError as exc:
        raise ConfigError(f"invalid sampler config: {exc}") from exc


def _cluster_from_mapping(body: dict, family: str, sigma: float, index: int) -> ClusterSpec:
    for key in ("pi", "q", "theta_cells", "n_subjects"):
        if key not in body:
            raise ConfigError(f"cluster {index}: missing {key!r}")
    try:
        outcome = OutcomeModel(
            family,
            body["theta_cells"],
            gaussian_sigma=sigma if family == GAUSSIAN else None,
        )
        return ClusterSpec(
            pi=body["pi"],
            gen=validate_generator(body["q"]),
            outcome=outcome,
            n_subjects=int(body["n_subjects"]),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"cluster {index}: {exc}") from exc


def build_sim_config(section: dict, **overrides):
    """(SimConfig, seed) from the ``simulate`` section plus overrides."""
    merged = dict(section or {})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    seed = int(merged.get("seed", 0))
    if merged.get("preset"):
        if "n_obs" not in merged:
            raise ConfigError("preset simulation needs 'n_obs'")
        per = merged.get("subjects_per_cluster")
        if isinstance(per, list):
            per = tuple(per)
        config = builtin_example_config(
            merged["preset"],
            n_obs=int(merged["n_obs"]),
            subjects_per_cluster=per,
            sigma=float(merged.get("sigma", 1.0)),
            horizon=float(merged.get("horizon", 15.0)),
        )
        return config, seed
    if "clusters" not in merged:
        raise ConfigError("simulate needs either 'preset' or 'clusters'")
    family = merged.get("family")
    if family not in (POISSON, GAUSSIAN):
        raise ConfigError(f"unknown outcome family {family!r}")
    sigma = float(merged.get("sigma", 1.0))
    clusters = tuple(
        _cluster_from_mapping(body, family, sigma, i)
        for i, body in enumerate(merged["clusters"], start=1)
    )
    if "n_obs" not in merged:
        raise ConfigError("simulate needs 'n_obs'")
    try:
        config = SimConfig(
            clusters=clusters,
            n_obs=int(merged["n_obs"]),
            horizon=float(merged.get("horizon", 15.0)),
            level_probs=merged.get("level_probs"),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid simulation config: {exc}") from exc
    return config, seed
