"""Command-line interface.

Three subcommands cover the whole workflow::

    ctclust simulate --preset ex1-poisson --T 50 --out sim/
    ctclust fit sim/data.csv --family poisson --states 3 \
        --iterations 1000 --burn-in 300 --out run/
    ctclust summarize run/samples.jsonl --truth sim/truth.json --out tables/

``simulate`` writes ``data.csv`` (long format: subject_id, time, outcome
and, with a covariate design, covariate_level), ``truth.json``, and a
manifest. ``fit`` writes ``samples.jsonl`` (first line a meta record,
then one record per retained iteration with the iteration number, the
cluster count M, the label vector, and per-cluster parameters), optional
checkpoints, and a manifest. ``summarize`` writes the summary tables as
CSV (cluster counts, assignments, parameter posteriors with credible
intervals, generator ESS, transition-probability curves, generator
eigenvalues, plus misclassification and parameter error norms when truth
is supplied) and renders PNG figures alongside them unless
``--no-figures`` is given.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime
failure. Setting the environment variable CTCLUST_THREADS caps the
BLAS/OpenMP thread pools (it is applied before numpy is first imported);
it never changes sampling order, so results are identical at any value.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from . import __version__  # package import applies the thread cap

import numpy as np

from .config import (
    build_prior,
    build_sampler_config,
    build_sim_config,
    load_config_file,
)
from .ctmc import validate_generator
from .dataio import (
    atomic_write_text,
    file_sha256,
    load_dataset,
    load_truth,
    read_samples_jsonl,
    write_dataset,
    write_manifest,
    write_samples_jsonl,
    write_truth,
)
from .diagnostics import (
    align_and_misclassify,
    align_modal_samples,
    best_label_map,
    param_norm_error,
    summarize_fit,
    transition_probability_curves,
)
from .errors import ConfigError, CTClustError, DataError
from .outcomes import GAUSSIAN, ClusterParams, OutcomeModel
from .sampler import (
    VARIANT_FULL,
    VARIANT_Q_ONLY,
    PosteriorSample,
    run_mcmc,
)
from .simulate import generate_dataset

__all__ = [
    "main",
    "build_parser",
    "cmd_simulate",
    "cmd_fit",
    "cmd_summarize",
    "sample_to_record",
    "record_to_sample",
]


def sample_to_record(sample: PosteriorSample) -> dict:
    """JSON-ready dict for one retained iteration."""
    params = {}
    for lab, par in sample.params.items():
        entry = {
            "pi": [float(v) for v in par.pi],
            "q": [[float(v) for v in row] for row in par.gen.rates],
            "theta_cells": [[float(v) for v in row] for row in par.outcome.state_params],
        }
        if par.outcome.gaussian_sigma is not None:
            entry["sigma"] = float(par.outcome.gaussian_sigma)
        params[str(lab)] = entry
    return {
        "iteration": int(sample.iteration),
        "M": int(sample.n_clusters),
        "labels": [int(l) for l in sample.labels],
        "params": params,
    }


def record_to_sample(record: dict, family: str) -> PosteriorSample:
    """Inverse of :func:`sample_to_record`."""
    params = {}
    for lab, entry in record["params"].items():
        outcome = OutcomeModel(
            family, entry["theta_cells"], gaussian_sigma=entry.get("sigma")
        )
        params[int(lab)] = ClusterParams(
            pi=np.asarray(entry["pi"], dtype=float),
            gen=validate_generator(entry["q"]),
            outcome=outcome,
        )
    return PosteriorSample(
        iteration=int(record["iteration"]),
        labels=np.asarray(record["labels"], dtype=np.int64),
        n_clusters=int(record["M"]),
        params=params,
    )


def _format_cell(value) -> str:
    if isinstance(value, float):
        if value != value:  # NaN
            return ""
        return repr(value)
    return str(value)


def _write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_format_cell(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


# ----------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    section = {}
    inputs = {}
    if args.config:
        doc = load_config_file(args.config)
        section = doc.get("simulate") or {}
        inputs[args.config] = file_sha256(args.config)
    per = args.subjects_per_cluster
    if per is not None and len(per) == 1:
        per = per[0]
    elif per is not None:
        per = tuple(per)
    sim_config, seed = build_sim_config(
        section,
        preset=args.preset,
        n_obs=args.n_obs,
        subjects_per_cluster=per,
        sigma=args.sigma,
        horizon=args.horizon,
        seed=args.seed,
    )
    rng = np.random.default_rng(seed)
    dataset, truth = generate_dataset(sim_config, rng)
    t1 = time.perf_counter()
    data_path = os.path.join(args.out, "data.csv")
    truth_path = os.path.join(args.out, "truth.json")
    write_dataset(dataset, data_path)
    write_truth(truth, truth_path)
    t2 = time.perf_counter()
    echo = {
        "preset": args.preset or section.get("preset"),
        "n_obs": sim_config.n_obs,
        "horizon": sim_config.horizon,
        "subjects": len(dataset),
        "family": sim_config.family,
        "seed": seed,
    }
    write_manifest(
        os.path.join(args.out, "manifest.json"),
        command="simulate",
        version=__version__,
        seed=seed,
        config=echo,
        inputs=inputs,
        outputs={
            data_path: file_sha256(data_path),
            truth_path: file_sha256(truth_path),
        },
        timings={"simulate": t1 - t0, "write": t2 - t1},
    )
    print(f"wrote {len(dataset)} subjects to {data_path}")
    return 0


# ---------------------------------------------------------------------- fit


def cmd_fit(args) -> int:
    t0 = time.perf_counter()
    sections = {}
    inputs = {args.data: None}
    if args.config:
        sections = load_config_file(args.config)
        inputs[args.config] = file_sha256(args.config)
    dataset = load_dataset(args.data)
    inputs[args.data] = file_sha256(args.data)
    t1 = time.perf_counter()
    prior = build_prior(
        sections.get("prior") or {},
        n_levels=dataset.n_levels,
        family=args.family,
        states=args.states,
        gaussian_sigma=args.gaussian_sigma,
    )
    sampler_section = dict(sections.get("sampler") or {})
    interval = args.checkpoint_interval
    if interval is None:
        interval = sampler_section.get("checkpoint_interval", 0)
    checkpoint_path = None
    if interval and interval > 0:
        checkpoint_path = os.path.join(args.out, "checkpoint.ckpt")
    config = build_sampler_config(
        sampler_section,
        prior,
        num_iterations=args.iterations,
        burn_in=args.burn_in,
        thin=args.thin,
        restricted_scans=args.restricted_scans,
        variant=args.variant,
        seed=args.seed,
        initial_clusters=args.initial_clusters,
        checkpoint_interval=interval if checkpoint_path else None,
        checkpoint_path=checkpoint_path,
    )
    stride = max(1, config.num_iterations // 10)

    def progress(iteration, n_clusters):
        if iteration % stride == 0 or iteration == config.num_iterations:
            print(
                f"iteration {iteration}/{config.num_iterations}: "
                f"{n_clusters} clusters",
                file=sys.stderr,
            )

    records = []
    for sample in run_mcmc(
        dataset, config, resume_from=args.resume, progress=progress
    ):
        records.append(sample_to_record(sample))
    t2 = time.perf_counter()
    meta = {
        "family": prior.family,
        "states": prior.n_states,
        "levels": prior.n_levels,
        "variant": config.variant,
        "seed": config.seed,
        "iterations": config.num_iterations,
        "burn_in": config.burn_in,
        "thin": config.thin,
        "restricted_scans": config.restricted_scans,
        "initial_clusters": config.initial_clusters,
        "dp_alpha": prior.dp_alpha,
        "version": __version__,
        "subject_ids": dataset.ids,
    }
    if prior.family == GAUSSIAN:
        meta["gaussian_sigma"] = prior.gaussian_sigma
    samples_path = os.path.join(args.out, "samples.jsonl")
    write_samples_jsonl(samples_path, meta, records)
    t3 = time.perf_counter()
    outputs = {samples_path: file_sha256(samples_path)}
    if checkpoint_path and os.path.exists(checkpoint_path):
        outputs[checkpoint_path] = file_sha256(checkpoint_path)
    echo = {k: v for k, v in meta.items() if k != "subject_ids"}
    write_manifest(
        os.path.join(args.out, "manifest.json"),
        command="fit",
        version=__version__,
        seed=config.seed,
        config=echo,
        inputs=inputs,
        outputs=outputs,
        timings={"load": t1 - t0, "sample": t2 - t1, "write": t3 - t2},
    )
    print(f"kept {len(records)} samples in {samples_path}")
    return 0


# ----------------------------------------------------------------- summarize


def cmd_summarize(args) -> int:
    t0 = time.perf_counter()
    meta, records = read_samples_jsonl(args.samples)
    family = meta.get("family", "poisson")
    samples = [record_to_sample(r, family) for r in records]
    subject_ids = meta.get("subject_ids")
    if subject_ids is None and samples:
        subject_ids = [str(i) for i in range(samples[0].labels.shape[0])]
    inputs = {args.samples: file_sha256(args.samples)}
    summary = summarize_fit(samples)
    _, _, kept, _, aligned_params = align_modal_samples(samples)
    t1 = time.perf_counter()

    out = args.out
    outputs = {}

    def emit(name, header, rows):
        path = os.path.join(out, name)
        _write_csv(path, header, rows)
        outputs[path] = file_sha256(path)
        return path

    count_freq = {}
    for s in samples:
        count_freq[s.n_clusters] = count_freq.get(s.n_clusters, 0) + 1
    emit(
        "cluster_counts.csv",
        ["n_clusters", "iterations", "fraction"],
        [
            (m, c, c / len(samples))
            for m, c in sorted(count_freq.items())
        ],
    )
    emit(
        "assignments.csv",
        ["subject_id", "cluster"],
        list(zip(subject_ids, summary.assignments.tolist())),
    )

    param_rows = []
    for lab in sorted(summary.cluster_summaries):
        block = summary.cluster_summaries[lab]
        for i, (m, lo, hi) in enumerate(
            zip(block.pi_mean, block.pi_lower, block.pi_upper)
        ):
            param_rows.append((lab, "pi", i + 1, "", float(m), float(lo), float(hi)))
        k = block.gen_mean.shape[0]
        for i in range(k):
            for j in range(k):
                param_rows.append(
                    (
                        lab, "q", i + 1, j + 1,
                        float(block.gen_mean[i, j]),
                        float(block.gen_lower[i, j]),
                        float(block.gen_upper[i, j]),
                    )
                )
        n_lev, _ = block.coef_mean.shape
        for l in range(n_lev):
            for j in range(k):
                param_rows.append(
                    (
                        lab, "coefficients", l + 1, j + 1,
                        float(block.coef_mean[l, j]),
                        float(block.coef_lower[l, j]),
                        float(block.coef_upper[l, j]),
                    )
                )
    emit(
        "parameters.csv",
        ["cluster", "block", "row", "col", "mean", "lower", "upper"],
        param_rows,
    )

    ess_rows = []
    for lab in sorted(summary.ess_generator):
        table = summary.ess_generator[lab]
        k = table.shape[0]
        for i in range(k):
            for j in range(k):
                if i != j:
                    ess_rows.append((lab, i + 1, j + 1, float(table[i, j])))
    emit("ess.csv", ["cluster", "from_state", "to_state", "ess"], ess_rows)

    curve_rows = []
    curves_by_label = {}
    times = None
    for lab in sorted(summary.cluster_summaries):
        gens = [p[lab].gen for p in aligned_params]
        times, curves = transition_probability_curves(
            gens, args.horizon, args.grid_points
        )
        curves_by_label[lab] = curves
        k = curves.shape[1]
        for g, t in enumerate(times):
            for i in range(k):
                for j in range(k):
                    curve_rows.append(
                        (lab, float(t), i + 1, j + 1, float(curves[g, i, j]))
                    )
    emit(
        "curves.csv",
        ["cluster", "time", "from_state", "to_state", "probability"],
        curve_rows,
    )

    from .diagnostics import generator_eigenvalue_table

    eig_rows = generator_eigenvalue_table(samples)
    emit(
        "eigenvalues.csv",
        ["iteration", "cluster", "real", "imag"],
        eig_rows,
    )

    if args.truth:
        truth = load_truth(args.truth)
        inputs[args.truth] = file_sha256(args.truth)
        truth_vec = np.array(
            [int(truth["labels"][sid]) for sid in subject_ids], dtype=np.int64
        )
        rate = align_and_misclassify(summary.assignments, truth_vec)
        emit(
            "misclassification.csv",
            ["n_subjects", "modal_clusters", "misclassification"],
            [(len(subject_ids), summary.modal_count, float(rate))],
        )
        mapping = best_label_map(summary.assignments, truth_vec)
        sigma = truth.get("params", {}).get("1", {}).get("sigma")
        norm_rows = []
        for lab in sorted(mapping):
            true_lab = mapping[lab]
            true_par = truth["params"][str(true_lab)]
            truth_params = ClusterParams(
                pi=np.asarray(true_par["pi"], dtype=float),
                gen=validate_generator(true_par["q"]),
                outcome=OutcomeModel(
                    family, true_par["theta_cells"], gaussian_sigma=sigma
                ),
            )
            cells = np.mean(
                [p[lab].outcome.state_params for p in aligned_params], axis=0
            )
            est_params = ClusterParams(
                pi=summary.cluster_summaries[lab].pi_mean,
                gen=validate_generator(summary.cluster_summaries[lab].gen_mean),
                outcome=OutcomeModel(family, cells, gaussian_sigma=sigma),
            )
            err = param_norm_error(truth_params, est_params)
            norm_rows.append(
                (
                    lab, true_lab,
                    err["pi"], err["coefficients"], err["generator"],
                )
            )
        emit(
            "norm_errors.csv",
            ["cluster", "truth_cluster", "pi", "coefficients", "generator"],
            norm_rows,
        )

    if not args.no_figures:
        from . import report

        fig = report.render_transition_curves(
            times, curves_by_label, os.path.join(out, "transition_curves.png")
        )
        outputs[fig] = file_sha256(fig)
        fig = report.render_eigenvalue_scatter(
            eig_rows, os.path.join(out, "eigenvalues.png")
        )
        outputs[fig] = file_sha256(fig)
        fig = report.render_cluster_count_trace(
            [s.iteration for s in samples],
            [s.n_clusters for s in samples],
            os.path.join(out, "cluster_counts.png"),
        )
        outputs[fig] = file_sha256(fig)

    t2 = time.perf_counter()
    write_manifest(
        os.path.join(out, "manifest.json"),
        command="summarize",
        version=__version__,
        seed=meta.get("seed"),
        config={
            "horizon": args.horizon,
            "grid_points": args.grid_points,
            "figures": not args.no_figures,
            "truth": bool(args.truth),
        },
        inputs=inputs,
        outputs=outputs,
        timings={"summarize": t1 - t0, "write": t2 - t1},
    )
    print(
        f"modal cluster count {summary.modal_count} "
        f"({summary.modal_fraction:.1%} of {summary.n_samples} samples); "
        f"tables in {out}"
    )
    return 0


# ---------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctclust",
        description="Cluster irregularly sampled trajectories with "
        "continuous-time hidden Markov models under a Dirichlet-process "
        "mixture.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic dataset")
    sim.add_argument("--preset", help="named design (ex1-poisson, ex1-gaussian, ex2, ex3)")
    sim.add_argument(
        "--T", "--n-obs", dest="n_obs", type=int,
        help="observations per subject",
    )
    sim.add_argument(
        "--subjects-per-cluster", nargs="+", type=int,
        help="override cluster sizes (one value for all, or one per cluster)",
    )
    sim.add_argument("--sigma", type=float, help="Gaussian noise scale")
    sim.add_argument("--horizon", type=float, help="observation window length")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--config", help="YAML config with a simulate section")
    sim.add_argument("--out", required=True, help="output directory")
    sim.set_defaults(func=cmd_simulate)

    fit = sub.add_parser("fit", help="run the MCMC sampler on a dataset")
    fit.add_argument("data", help="long-format CSV")
    fit.add_argument("--config", help="YAML config with prior/sampler sections")
    fit.add_argument("--family", choices=["poisson", "gaussian"])
    fit.add_argument("--states", type=int, help="number of latent states")
    fit.add_argument("--gaussian-sigma", dest="gaussian_sigma", type=float)
    fit.add_argument("--iterations", type=int)
    fit.add_argument("--burn-in", dest="burn_in", type=int)
    fit.add_argument("--thin", type=int)
    fit.add_argument("--restricted-scans", dest="restricted_scans", type=int)
    fit.add_argument("--variant", choices=[VARIANT_FULL, VARIANT_Q_ONLY])
    fit.add_argument("--seed", type=int)
    fit.add_argument("--initial-clusters", dest="initial_clusters", type=int)
    fit.add_argument(
        "--checkpoint-interval", dest="checkpoint_interval", type=int,
        help="iterations between checkpoint writes (0 disables)",
    )
    fit.add_argument("--resume", help="checkpoint file to continue from")
    fit.add_argument("--out", required=True, help="output directory")
    fit.set_defaults(func=cmd_fit)

    summ = sub.add_parser("summarize", help="summarize a posterior sample file")
    summ.add_argument("samples", help="samples.jsonl from fit")
    summ.add_argument("--truth", help="truth.json from simulate")
    summ.add_argument("--horizon", type=float, default=15.0)
    summ.add_argument("--grid-points", dest="grid_points", type=int, default=50)
    summ.add_argument(
        "--no-figures", action="store_true", help="skip PNG rendering"
    )
    summ.add_argument("--out", required=True, help="output directory")
    summ.set_defaults(func=cmd_summarize)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"ctclust: config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"ctclust: data error: {exc}", file=sys.stderr)
        return 3
    except CTClustError as exc:
        print(f"ctclust: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
