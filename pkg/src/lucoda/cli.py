"""Batch command line: ``lucoda <command> --experiment <name> ...``.

Commands
--------
simulate       draw synthetic data for an experiment and write it out
fit            simulate, fit the experiment's model(s), write summaries
consensus-fit  sequential consensus against the unpartitioned fit
stepwise       WAIC stepwise covariate selection on one simulation
report         re-run from a manifest and compare every output digest

Outputs go to ``<out>/<experiment>/<field>__<stat>.csv`` together with a
``manifest.yaml`` recording seeds, the config hash, module versions and
output digests.
"""
import argparse
from dataclasses import asdict, fields, replace
import logging
import os
import sys
import warnings

import numpy as np

from . import io
from .errors import LucodaError, SpecError

log = logging.getLogger("lucoda")

DEFAULT_SEED = 20240

EXPERIMENT_NOTES = {
    "alr-downscale": {
        "covariates": "simulated standard-normal stand-in; the real-data covariate list is not available",
    },
}


# -- experiment registry --------------------------------------------------------
def _experiment_config(name):
    """Parameter dataclass of an experiment (``stepwise`` included)."""
    from .experiments import beta_hurdle, bigdata, coda_hurdle, downscale_beta, stepwise_study

    return {
        "beta-hurdle": beta_hurdle.BetaHurdleConfig,
        "coda-hurdle": coda_hurdle.CodaHurdleConfig,
        "beta-downscale": downscale_beta.DownscaleConfig,
        "alr-downscale": downscale_beta.AlrDownscaleConfig,
        "bigdata-consensus": bigdata.BigDataConfig,
        "stepwise": stepwise_study.StepwiseConfig,
    }[name]


def experiment_params(name, cfg):
    """Experiment config with overrides from every config section.

    Keys of the ``data``, ``geometry``, ``model``, ``fit`` and ``consensus``
    sections are matched against the experiment's parameters; an unknown
    key is an error naming its path.
    """
    base = _experiment_config(name)()
    known = {f.name for f in fields(base)}
    over = {}
    for sec in io.CONFIG_SECTIONS:
        for key, val in (cfg.sections.get(sec) or {}).items():
            if key.endswith("path"):
                continue
            if key not in known:
                raise SpecError(f"{sec}.{key}", f"unknown parameter for experiment {name!r}")
            cur = getattr(base, key)
            if isinstance(cur, tuple):
                val = tuple(tuple(v) if isinstance(v, list) else v for v in val)
            over[key] = val
    return replace(base, **over)


def _write_support(support, graph, out, exp):
    paths = [os.path.join(out, exp, "areas.json")]
    os.makedirs(os.path.dirname(paths[0]), exist_ok=True)
    io.write_geometry(support.areas, paths[0])
    if graph is not None:
        paths.append(io.write_pairs(graph, io.output_path(out, exp, "adjacency", "pairs")))
    return paths


def _simulate(name, p, seed, out):
    """Write simulated data; return ``(paths, data)``."""
    P = []
    if name == "beta-hurdle":
        from .experiments import beta_hurdle as m

        d = m.simulate_data(p, seed)
        P += _write_support(d["support"], d["graph"], out, name)
        P.append(io.write_table(io.output_path(out, name, "data", "table"), ("area", "x", "y", "z"),
                                zip(d["area"], d["x"], d["y"], d["z"])))
        P.append(io.write_field(d["u"], io.output_path(out, name, "u", "truth"), "u"))
    elif name == "coda-hurdle":
        from .experiments import coda_hurdle as m

        d = m.simulate_data(p, seed)
        P += _write_support(d["support"], d["graph"], out, name)
        P.append(io.write_compositions(d["Y"], io.output_path(out, name, "compositions", "table")))
        P.append(io.write_table(io.output_path(out, name, "covariates", "table"), ("area", "x"), zip(d["area"], d["x"])))
        P.append(io.write_table(io.output_path(out, name, "us", "truth"), ("area", "us1", "us2", "us3"),
                                [(i,) + tuple(r) for i, r in enumerate(d["us"])]))
    elif name in ("beta-downscale", "alr-downscale"):
        from .experiments import downscale_beta as m

        d = m.simulate_data(p, seed) if name == "beta-downscale" else m.simulate_alr(p, seed)
        geo = d["geo"]
        P += _write_support(geo["support"], geo["graph"], out, name)
        mesh_path = os.path.join(out, name, "mesh.txt")
        P.append(io.write_mesh(geo["mesh"], mesh_path))
        P.append(io.write_sparse(geo["agg"].A, io.output_path(out, name, "aggregation", "coo")))
        if name == "beta-downscale":
            P.append(io.write_table(io.output_path(out, name, "data", "table"), ("area", "time", "x", "y"),
                                    zip(d["area"], d["time"], d["x"], d["y"])))
            P.append(io.write_field(d["u"], io.output_path(out, name, "u", "truth"), "u"))
        else:
            P.append(io.write_compositions(d["Y"], io.output_path(out, name, "compositions", "table")))
            P.append(io.write_table(io.output_path(out, name, "covariates", "table"), ("area", "x"), enumerate(d["x"])))
            for k, u in enumerate(d["u"]):
                P.append(io.write_field(u, io.output_path(out, name, f"u{k + 1}", "truth"), f"u{k + 1}"))
    elif name == "bigdata-consensus":
        from .experiments import bigdata as m

        d = m.simulate_data(p, seed)
        P.append(io.write_mesh(d["mesh"], os.path.join(out, name, "mesh.txt")))
        P.append(io.write_table(
            io.output_path(out, name, "data", "table"), ("alr", "row", "time", "x", "z"),
            zip(d["obs_alr"], d["obs_row"], d["obs_time"], d["x"][d["obs_row"]], d["z"]),
        ))
        for k, u in enumerate(d["u"]):
            P.append(io.write_field(u, io.output_path(out, name, f"u{k + 1}", "truth"), f"u{k + 1}"))
    elif name == "stepwise":
        from .experiments import stepwise_study as m

        d = m.simulate_data(p, seed)
        cols = m.CANDIDATES
        P.append(io.write_table(io.output_path(out, name, "data", "table"), ("area", "y") + cols,
                                zip(d["area"], d["y"], *[d["columns"][c] for c in cols])))
    else:
        raise SpecError("experiment", f"unknown experiment {name!r}")
    return P, d


def _fit(name, p, seed, out, lattice_n):
    P = []
    if name == "beta-hurdle":
        from .experiments import beta_hurdle as m

        res, data, fits = m.run_replicate(seed, p)
        for key, s in fits.items():
            P += io.write_summary(s, out, name, prefix=f"{key}_")
        rows = []
        for key, s in fits.items():
            tab = {r[0]: r for r in s.fixed_table()}
            for b in ("beta0", "beta1"):
                r = tab[b]
                rows.append((f"{key}:{b}", getattr(p, b), r[1], r[3], r[5]))
        P.append(io.write_truth_table(io.output_path(out, name, "truth", "comparison"), rows))
        P.append(io.write_table(io.output_path(out, name, "u", "rmse"), ("model", "rmse"),
                                [(k, res[f"{k}_rmse_u"]) for k in fits]))
    elif name == "coda-hurdle":
        from .experiments import coda_hurdle as m

        res, data, s = m.run_replicate(seed, p)
        P += io.write_summary(s, out, name)
        rows = [(f"rho{i + 1}{j + 1}", t, res[f"rho{i + 1}{j + 1}"], np.nan, np.nan) for (i, j), t in zip(m.PAIRS, p.rhos)]
        for h in s.hyper_table():
            for r in range(len(rows)):
                if rows[r][0] == h[0]:
                    rows[r] = rows[r][:3] + (h[4], h[5])
        P.append(io.write_truth_table(io.output_path(out, name, "truth", "comparison"), rows))
        P.append(io.write_table(io.output_path(out, name, "clr", "rowsums"), ("max_abs_row_sum",), [(res["clr_max_row_sum"],)]))
    elif name in ("beta-downscale", "alr-downscale"):
        from .experiments import downscale_beta as m
        from .experiments.common import UNIT_BOX

        if name == "beta-downscale":
            res, data, s = m.run_replicate(seed, p)
            fields_ = {"u": data["geo"]["mesh"]}
            stats = [("pearson_r", res["pearson_r"]), ("constant_field_error", res["constant_field_error"])]
        else:
            res, data, s = m.run_alr(seed, p)
            fields_ = {f"u{k + 1}": data["geo"]["mesh"] for k in range(len(data["u"]))}
            stats = [(f"pearson_r_u{k + 1}", r) for k, r in enumerate(res["pearson_r"])]
            stats.append(("covariates", "simulated stand-ins"))
        P += io.write_summary(s, out, name)
        P += io.emit_plot_data(s, fields_, UNIT_BOX, lattice_n, out, name)
        P.append(io.write_table(io.output_path(out, name, "recovery", "summary"), ("statistic", "value"), stats))
    else:
        raise SpecError("experiment", f"command 'fit' does not support experiment {name!r}")
    return P


def _consensus(name, p, seed, out):
    if name != "bigdata-consensus":
        raise SpecError("experiment", "consensus-fit runs the bigdata-consensus experiment")
    from .consensus import consensus_vs_full_report, merge_random_effects, plan_partitions, sequential_fit
    from .experiments import bigdata as m
    from .inference import optimize_hyperparameters

    data = m.simulate_data(p, seed)
    builder = m.make_builder(data, p)
    plan = plan_partitions(data["obs_time"], "by-time-blocks", p.n_partitions)
    state = sequential_fit(builder, plan, layout=m.layout_model(data, p), strategy=p.strategy)
    merged = merge_random_effects(state, p.merge)
    full = optimize_hyperparameters(builder(np.arange(data["z"].size)).model, strategy=p.strategy)
    rep = consensus_vs_full_report(merged, full)
    P = [io.write_plan(plan, io.output_path(out, name, "plan", "partitions"))]
    for t in merged.layout.terms:
        mu, sd = merged.slice(t.name)
        P.append(io.write_table(io.output_path(out, name, t.name, "consensus"), ("index", "mean", "sd"),
                                [(i, a, b) for i, (a, b) in enumerate(zip(mu, sd))]))
    P += io.write_summary(full, out, name, prefix="full_")
    tab = rep.table()
    P.append(io.write_table(io.output_path(out, name, "consensus", "report"), tab[0], tab[1:]))
    return P


def _stepwise(p, seed, out):
    from .experiments import stepwise_study as m

    res = m.run_replicate(seed, p)
    rows = [("selected", " ".join(res["selected"])), ("exact", res["exact"]), ("waic", res["waic"]),
            ("evaluations", res["evaluations"]), ("prefiltered", " ".join(res["prefiltered"]))]
    return [io.write_table(io.output_path(out, "stepwise", "selection", "summary"), ("field", "value"), rows)]


def run_experiment(cfg):
    """Execute ``cfg.command`` for ``cfg.experiment`` and write a manifest.

    Returns the manifest dictionary.
    """
    seed = DEFAULT_SEED if cfg.seed is None else int(cfg.seed)
    name = "stepwise" if cfg.command == "stepwise" else cfg.experiment
    if name is None:
        raise SpecError("experiment", f"command {cfg.command!r} needs --experiment")
    p = experiment_params(name, cfg)
    lattice_n = int((cfg.sections.get("geometry") or {}).get("lattice_n", getattr(p, "lattice_n", 30)))
    log.info("running %s for %s (seed %d)", cfg.command, name, seed)
    try:
        if cfg.command == "simulate":
            paths, _ = _simulate(name, p, seed, cfg.out)
        elif cfg.command == "fit":
            paths = _fit(name, p, seed, cfg.out, lattice_n)
        elif cfg.command == "consensus-fit":
            paths = _consensus(name, p, seed, cfg.out)
        elif cfg.command == "stepwise":
            paths = _stepwise(p, seed, cfg.out)
        else:
            raise SpecError("command", f"{cfg.command!r} is not an experiment command")
    except LucodaError:
        log.error("experiment %s failed during %s", name, cfg.command)
        raise
    params = os.path.join(cfg.out, name, "parameters.yaml")
    with open(params, "w") as f:
        io.yaml.safe_dump(_plain(asdict(p)), f, sort_keys=True)
    paths.append(params)
    man = io.build_manifest(replace(cfg, seed=seed), [seed], paths, root=cfg.out, notes=EXPERIMENT_NOTES.get(name))
    io.write_manifest(man, os.path.join(cfg.out, name, "manifest.yaml"))
    return man


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def rerun_from_manifest(manifest_path, out):
    """Re-run the command recorded in a manifest into ``out``.

    Returns ``(identical, differences)`` where ``differences`` lists output
    files whose digest changed or that are missing.
    """
    man = io.read_manifest(manifest_path)
    cfg = io.RunConfig.from_dict(man["config"])
    cfg = replace(cfg, out=out)
    new = run_experiment(cfg)
    diffs = [k for k, v in man["outputs"].items() if new["outputs"].get(k) != v]
    diffs += [k for k in new["outputs"] if k not in man["outputs"]]
    return not diffs, diffs


# -- argument parsing -----------------------------------------------------------
def build_parser():
    ap = argparse.ArgumentParser(prog="lucoda", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for cmd in io.COMMANDS:
        sp_ = sub.add_parser(cmd)
        sp_.add_argument("--config", help="YAML config with sections data, geometry, model, fit, consensus")
        sp_.add_argument("--seed", type=int, help="unsigned 64-bit seed")
        sp_.add_argument("--out", help="output directory")
        sp_.add_argument("--threads", type=int, help="worker threads for compiled kernels")
        sp_.add_argument("--experiment", choices=io.EXPERIMENTS)
        sp_.add_argument("-v", "--verbose", action="count", default=0)
        if cmd == "report":
            sp_.add_argument("--manifest", required=True, help="manifest.yaml of the run to reproduce")
    return ap


def _set_threads(n):
    try:
        import numba
    except ImportError:  # pragma: no cover
        return
    with warnings.catch_warnings():
        # probing the threading layers warns about an old TBB even when unused
        warnings.simplefilter("ignore", numba.NumbaWarning)
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        cfg = io.load_config(args.config, validate=False) if args.config else io.RunConfig()
        cfg = replace(
            cfg,
            command=args.command,
            experiment=args.experiment or cfg.experiment,
            seed=args.seed if args.seed is not None else cfg.seed,
            out=args.out or cfg.out,
            threads=args.threads or cfg.threads,
            verbosity=args.verbose or cfg.verbosity,
        )
        _set_threads(cfg.threads)
        if args.command == "report":
            ok, diffs = rerun_from_manifest(args.manifest, cfg.out)
            for d in diffs:
                print(f"DIFFERS {d}")
            print("identical" if ok else f"{len(diffs)} output(s) differ")
            return 0 if ok else 1
        cfg.validate()
        man = run_experiment(cfg)
        for k in sorted(man["outputs"]):
            print(os.path.join(cfg.out, k))
        return 0
    except LucodaError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
