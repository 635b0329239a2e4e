"""Command-line entry point.

Three subcommands share the flags --config/--out/--seed-offset/--threads:

  fit       fit a triangular map to an ensemble table and save it
  wavy      run the bivariate smoothing-profile study
  lorenz63  run twin-experiment filter comparisons

Configs are JSON documents; unknown keys are rejected. Output tables are
tab-separated text with a provenance header (config hash + seed). Exit
codes: 0 success, 2 config error, 3 compute error. Set PSTRANSPORT_LOG
to a level name (e.g. DEBUG) for verbose logging.
"""

import argparse
import concurrent.futures
import hashlib
import json
import logging
import os
import sys

import numpy as np

from .lorenz63 import Lorenz63Params, run_filter
from .tmap import Ensemble, MapFitConfig, fit
from .wavy import WavyConfig, profile_lambda, sample_wavy

logger = logging.getLogger(__name__)

__all__ = ["main", "ConfigError"]


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


def _load_config(path, allowed, required=()):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    missing = sorted(set(required) - set(doc))
    if missing:
        raise ConfigError(f"missing config keys: {', '.join(missing)}")
    return doc


def _config_hash(doc):
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _write_table(path, header_lines, names, rows):
    """Tab-separated table with '#' provenance lines; floats round-trip."""
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("\t".join(names) + "\n")
        for row in rows:
            fh.write("\t".join(
                repr(float(v)) if isinstance(v, (float, np.floating))
                else str(v) for v in row
            ) + "\n")


def _read_ensemble_table(path):
    try:
        with open(path) as fh:
            lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    except OSError as exc:
        raise ConfigError(f"cannot read ensemble table: {exc}") from exc
    if len(lines) < 2:
        raise ConfigError("ensemble table needs a header row and data rows")
    names = lines[0].split()
    try:
        data = np.array([[float(v) for v in ln.split()] for ln in lines[1:]])
    except ValueError as exc:
        raise ConfigError(f"non-numeric entry in ensemble table: {exc}") from exc
    if data.shape[1] != len(names):
        raise ConfigError("ensemble rows do not match the header width")
    return Ensemble(data, names)


def _validate_parent_sets_config(parent_sets, dim):
    if not isinstance(parent_sets, list) or len(parent_sets) != dim:
        raise ConfigError(f"parent_sets must list one entry per variable ({dim})")
    for j, ps in enumerate(parent_sets):
        if not isinstance(ps, list) or any(
            not isinstance(p, int) or not 0 <= p < j for p in ps
        ):
            raise ConfigError(
                f"parent_sets[{j}] must contain integers below {j} (triangularity)"
            )


_FIT_KEYS = ("ensemble", "parent_sets", "degree", "num_real_knots", "adapt",
             "adapt_monotone", "fixed_monotone_log_lambda", "max_outer",
             "standardize", "block_split", "fit_upper", "seed")


def cmd_fit(config_path, out_dir, seed_offset, threads):
    doc = _load_config(config_path, _FIT_KEYS, required=("ensemble", "parent_sets"))
    ensemble = _read_ensemble_table(doc["ensemble"])
    _validate_parent_sets_config(doc["parent_sets"], ensemble.dim)
    cfg = MapFitConfig(
        degree=doc.get("degree", 3),
        num_real_knots=doc.get("num_real_knots"),
        adapt=doc.get("adapt", True),
        adapt_monotone=doc.get("adapt_monotone", True),
        fixed_monotone_log_lambda=doc.get("fixed_monotone_log_lambda", 10.0),
        max_outer=doc.get("max_outer", 50),
        standardize=doc.get("standardize", True),
        block_split=doc.get("block_split", 0),
        fit_upper=doc.get("fit_upper", True),
    )
    chash = _config_hash(doc)
    seed = int(doc.get("seed", 0)) + seed_offset
    tri, reports = fit(ensemble, doc["parent_sets"], cfg)
    tri.save(os.path.join(out_dir, "map.json"))
    rows = []
    for j, r in enumerate(reports):
        if r is None:
            continue
        rows.append([j, r.nll, r.edf, r.aicc,
                     ";".join(repr(float(v)) for v in r.log_lambdas),
                     int(r.converged), r.outer_iters])
    _write_table(
        os.path.join(out_dir, "fit_report.tsv"),
        [f"config_hash={chash} seed={seed}"],
        ["component", "nll", "edf", "aicc", "log_lambdas", "converged",
         "outer_iters"],
        rows,
    )
    return 0


_WAVY_KEYS = ("n", "num_real_knots", "fixed_monotone_log_lambda", "grid",
              "seed", "num_pullback")


def _parse_grid(spec):
    if isinstance(spec, list):
        return np.asarray(spec, dtype=float)
    if isinstance(spec, dict):
        extra = set(spec) - {"start", "stop", "num"}
        if extra:
            raise ConfigError(f"unknown grid keys: {sorted(extra)}")
        return np.linspace(spec.get("start", -10.0), spec.get("stop", 10.0),
                           int(spec.get("num", 41)))
    raise ConfigError("grid must be a list of values or {start, stop, num}")


def cmd_wavy(config_path, out_dir, seed_offset, threads):
    doc = _load_config(config_path, _WAVY_KEYS)
    try:
        wcfg = WavyConfig(
            n=int(doc.get("n", 30)),
            num_real_knots=int(doc.get("num_real_knots", 50)),
            fixed_monotone_log_lambda=doc.get("fixed_monotone_log_lambda", 10.0),
            grid=_parse_grid(doc.get("grid", {"start": -10, "stop": 10, "num": 41})),
            seed=int(doc.get("seed", 0)) + seed_offset,
            num_pullback=int(doc.get("num_pullback", 1000)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    chash = _config_hash(doc)
    header = [f"config_hash={chash} seed={wcfg.seed}"]
    res = profile_lambda(wcfg)
    _write_table(os.path.join(out_dir, "profile.tsv"), header,
                 ["log_lambda", "nll", "edf", "aicc"], res.table)
    _write_table(os.path.join(out_dir, "samples.tsv"), header,
                 res.ensemble.names, res.ensemble.data)
    for logl, cloud in res.clouds.items():
        tag = repr(float(logl)).replace("-", "m").replace(".", "p")
        for kind in ("pushforward", "pullback"):
            _write_table(
                os.path.join(out_dir, f"{kind}_logl_{tag}.tsv"),
                header + [f"log_lambda={logl!r}"],
                ["c1", "c2"], cloud[kind],
            )
    _write_table(os.path.join(out_dir, "optima.tsv"), header,
                 ["grid_argmin_log_lambda", "adapted_log_lambda"],
                 [[res.argmin_log_lambda, res.adapted_log_lambda]])
    return 0


_L63_KEYS = ("methods", "n_grid", "seeds", "steps", "spinup", "dt",
             "obs_interval", "obs_sigma", "max_outer")


def _one_l63_run(args):
    params, n, seed, method, max_outer = args
    fit_cfg = MapFitConfig(max_outer=max_outer)
    return run_filter(params, n, seed, method=method, fit_config=fit_cfg)


def cmd_lorenz63(config_path, out_dir, seed_offset, threads):
    doc = _load_config(config_path, _L63_KEYS)
    methods = doc.get("methods", ["transport", "linear-baseline"])
    if any(m not in ("transport", "linear-baseline") for m in methods):
        raise ConfigError("methods must be transport and/or linear-baseline")
    n_grid = doc.get("n_grid", [50, 250, 1000])
    seeds = [int(s) + seed_offset for s in doc.get("seeds", list(range(10)))]
    try:
        params = Lorenz63Params(
            dt=doc.get("dt", 0.05),
            obs_interval=doc.get("obs_interval", 0.1),
            obs_sigma=doc.get("obs_sigma", 0.25),
            steps=int(doc.get("steps", 1000)),
            spinup=int(doc.get("spinup", 250)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    max_outer = int(doc.get("max_outer", 10))
    chash = _config_hash(doc)

    jobs = [(params, int(n), seed, method, max_outer)
            for method in methods for n in n_grid for seed in seeds]
    if threads > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_one_l63_run, jobs))
    else:
        results = [_one_l63_run(job) for job in jobs]

    summary_rows = []
    for (params_, n, seed, method, _), r in zip(jobs, results):
        header = [f"config_hash={chash} seed={seed}",
                  f"method={method} n={n} steps={params.steps}"]
        rows = [[k, r.rmse_series[k]] + list(r.edf_fractions[k])
                for k in range(params.steps)]
        _write_table(
            os.path.join(out_dir, f"run_{method}_n{n}_seed{seed}.tsv"),
            header, ["step", "rmse", "edf_frac_s2", "edf_frac_s3", "edf_frac_s4"],
            rows,
        )
        summary_rows.append([method, n, seed, r.mean_rmse, int(r.diverged),
                             r.steps_completed])
    _write_table(
        os.path.join(out_dir, "summary.tsv"),
        [f"config_hash={chash} seed_offset={seed_offset}"],
        ["method", "n", "seed", "mean_rmse", "diverged", "steps_completed"],
        summary_rows,
    )
    return 0


_COMMANDS = {"fit": cmd_fit, "wavy": cmd_wavy, "lorenz63": cmd_lorenz63}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pstransport",
        description="Adaptive spline transport maps for ensemble conditioning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed-offset", type=int, default=0)
        p.add_argument("--threads", type=int, default=0,
                       help="worker processes; 1 guarantees bit-reproducible "
                            "output, 0 picks the CPU count")
    return parser


def main(argv=None):
    logging.basicConfig(
        level=os.environ.get("PSTRANSPORT_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    threads = args.threads if args.threads > 0 else (os.cpu_count() or 1)
    try:
        os.makedirs(args.out, exist_ok=True)
    except OSError as exc:
        logger.error("cannot create output directory: %s", exc)
        return 2
    try:
        return _COMMANDS[args.command](args.config, args.out, args.seed_offset,
                                       threads)
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return 2
    except Exception as exc:
        logger.error("compute error: %s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
