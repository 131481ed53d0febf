"""``dgss`` command line: simulate, fit, summarize, metrics, preprocess, validate.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure,
5 validation failure.
"""

import argparse
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import gibbs, inference, io, oracle, preprocess, simulation
from .errors import DataError, DGSSError, EmptyChain, InvalidParam, NumericalFailure, ValidationFailure
from .model import Dataset, HyperParams

log = logging.getLogger("dgss")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4
EXIT_VALIDATION = 5


def _node_names(p):
    return [f"y{i + 1}" for i in range(p)]


def _cov_names(q):
    return [f"x{k + 1}" for k in range(q)]


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _write_replicate(args):
    cfg, rep, out = args
    data, truth = simulation.simulate_replicate(cfg, rep)
    d = io.ensure_dir(Path(out) / f"rep_{rep + 1:03d}")
    io.write_matrix(d / "y.csv", _node_names(cfg.p), data.y)
    io.write_matrix(d / "x.csv", _cov_names(cfg.q), data.x)
    io.write_long(d / "truth_beta.csv", truth.beta_true, skip_zero=True)
    io.write_matrix(d / "truth_graph.csv", _node_names(cfg.p), truth.graph_true)
    io.write_json(d / "manifest.json", {
        "kind": "simulation",
        "config": cfg.to_dict(),
        "replicate": rep + 1,
        "rng_stream": [cfg.seed, rep],
        "n_shrinks": truth.n_shrinks,
        "min_eigenvalue": truth.min_eigenvalue,
        "n_edges": int(np.triu(truth.graph_true, 1).sum()),
        "cov_active": truth.cov_active,
        "files": ["y.csv", "x.csv", "truth_beta.csv", "truth_graph.csv"],
        "versions": io.versions(),
    })
    return truth.min_eigenvalue


def cmd_simulate(args):
    cfg = simulation.SimConfig(
        p=args.p, q=args.q, n_active_covs=args.n_active, n=args.n, sparsity=args.sparsity,
        coef_low=args.coef_low, coef_high=args.coef_high, seed=args.seed,
        n_replicates=args.replicates,
    )
    out = io.ensure_dir(args.out)
    jobs = [(cfg, r, str(out)) for r in range(cfg.n_replicates)]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as ex:
            eigs = list(ex.map(_write_replicate, jobs))
    else:
        eigs = [_write_replicate(j) for j in jobs]
    log.info("wrote %d replicates to %s (min eigenvalue %.4g)", len(eigs), out, min(eigs))
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def _load_dataset(args):
    ypath = Path(args.y) if args.y else Path(args.data) / "y.csv"
    xpath = Path(args.x) if args.x else Path(args.data) / "x.csv"
    _, y = io.read_matrix(ypath)
    _, x = io.read_matrix(xpath)
    if y.shape[0] != x.shape[0]:
        raise DataError(f"{ypath} has {y.shape[0]} rows but {xpath} has {x.shape[0]}")
    centered = bool(np.max(np.abs(y.mean(axis=0))) > 1e-8)
    if centered:
        log.info("centering outcome columns")
    return Dataset.centered(y, x), centered, ypath, xpath


def _trace_table(out):
    tr = out.traces
    n = len(tr["t"])
    chain = tr.get("chain", np.full(n, out.chain_id))
    q = tr["pi_cov"].shape[1]
    p = tr["pi_node"].shape[1]
    header = ["iteration", "chain", "t", "n_active", "n_node_active", "n_cov_active"]
    header += [f"pi_cov_{k + 1}" for k in range(q)] + [f"s2_{k + 1}" for k in range(q)]
    header += [f"pi_node_{i + 1}" for i in range(p)] + [f"sigma2_{i + 1}" for i in range(p)]
    it = np.concatenate([np.arange(1, np.sum(chain == c) + 1) for c in dict.fromkeys(chain)])
    rows = []
    for r in range(n):
        rows.append(
            [int(it[r]), int(chain[r]), tr["t"][r], int(tr["n_active"][r]),
             int(tr["n_node_active"][r]), int(tr["n_cov_active"][r])]
            + tr["pi_cov"][r].tolist() + tr["s2"][r].tolist()
            + tr["pi_node"][r].tolist() + tr["sigma2"][r].tolist()
        )
    return header, rows


def cmd_fit(args):
    data, centered, ypath, xpath = _load_dataset(args)
    p, q = data.n_nodes, data.n_covs
    intercept = None
    if args.intercept_column is not None:
        if not 1 <= args.intercept_column <= q:
            raise InvalidParam(f"--intercept-column must lie in 1..{q}")
        intercept = args.intercept_column - 1
    h = HyperParams.default(p, q, d=args.dk, intercept=intercept,
                            a_sigma=args.a_sigma, b_sigma=args.b_sigma,
                            a_t=args.a_t, b_t=args.b_t)
    cfg = gibbs.SweepConfig(n_iter=args.iters, burn_in=args.burnin, thin=args.thin,
                            init=args.init)
    out_dir = io.ensure_dir(args.out)
    t0 = time.perf_counter()
    out = gibbs.run_chains(data, h, cfg, args.seed, n_chains=args.chains, workers=args.workers)
    elapsed = time.perf_counter() - t0
    io.write_long(out_dir / "mppi.csv", out.mppi.values, "mppi")
    io.write_long(out_dir / "beta_mean.csv", out.beta_mean, "value")
    io.write_rows(out_dir / "mppi_cov.csv", ["k", "mppi"],
                  [(k + 1, v) for k, v in enumerate(out.mppi_cov)])
    header, rows = _trace_table(out)
    io.write_rows(out_dir / "traces.csv", header, rows)
    io.write_json(out_dir / "fit_manifest.json", {
        "kind": "fit",
        "inputs": {"y": str(ypath), "x": str(xpath), "centered_on_load": centered},
        "n_nodes": p,
        "n_covs": q,
        "n_obs": data.n_obs,
        "seed": args.seed,
        "chains": args.chains,
        "sweeps": {"n_iter": cfg.n_iter, "burn_in": cfg.burn_in, "thin": cfg.thin,
                   "recompute_period": cfg.recompute_period, "init": cfg.init},
        "n_samples": out.n_samples,
        "hyperparameters": h.to_dict(),
        "intercept_column": args.intercept_column,
        "max_cache_drift": float(out.cache_drift.max(initial=0.0)),
        "files": ["mppi.csv", "beta_mean.csv", "mppi_cov.csv", "traces.csv"],
        "versions": io.versions(),
    })
    log.info("fit %d sweeps x %d chain(s) in %.1fs", cfg.n_iter, args.chains, elapsed)
    return EXIT_OK


# ---------------------------------------------------------------------------
# summarize / metrics
# ---------------------------------------------------------------------------


def _report_json(report, cutoff, n_samples):
    p, _, q = report.edge_cov.shape
    iu = np.triu_indices(p, 1)
    edges = [
        {"i": int(i) + 1, "j": int(j) + 1, "k": int(k) + 1}
        for i, j in zip(*iu)
        for k in range(q)
        if report.edge_cov[i, j, k]
    ]
    overall = [[int(i) + 1, int(j) + 1] for i, j in zip(*iu) if report.overall_graph[i, j]]
    directed = [
        {"i": int(i) + 1, "j": int(j) + 1, "k": int(k) + 1}
        for i, j, k in zip(*np.nonzero(report.kappa))
    ]
    return {
        "kind": "selection_report",
        "cutoff": cutoff,
        "n_nodes": p,
        "n_covs": q,
        "n_samples": n_samples,
        "edges": edges,
        "directed_selections": directed,
        "overall_graph": overall,
        "covariates_selected": [int(k) + 1 for k in np.flatnonzero(report.covariates_selected)],
        "counts": report.counts(),
        "versions": io.versions(),
    }


def report_from_json(obj):
    p, q = int(obj["n_nodes"]), int(obj["n_covs"])
    kappa = np.zeros((p, p, q), dtype=np.int8)
    for e in obj["directed_selections"]:
        kappa[e["i"] - 1, e["j"] - 1, e["k"] - 1] = 1
    return inference.symmetrize_or(kappa)


def cmd_summarize(args):
    fit_dir = Path(args.fit) if args.fit else None
    mppi_path = Path(args.mppi) if args.mppi else fit_dir / "mppi.csv"
    p = q = None
    n_samples = 1
    manifest_path = mppi_path.parent / "fit_manifest.json"
    if manifest_path.is_file():
        man = io.read_json(manifest_path)
        p, q, n_samples = man["n_nodes"], man["n_covs"], man["n_samples"]
    values = io.read_long(mppi_path, p, q)
    mppi = inference.MppiArray(values, n_samples)
    beta_path = mppi_path.parent / "beta_mean.csv"
    beta_mean = io.read_long(beta_path, *values.shape[1:]) if beta_path.is_file() else np.zeros_like(values)
    chain = gibbs.ChainOutput(mppi, None, None, beta_mean, {})
    report = inference.summarize(chain, args.cutoff)
    out = io.ensure_dir(args.out)
    io.write_json(out / "selection_report.json", _report_json(report, args.cutoff, n_samples))
    p, _, q = values.shape
    names = _node_names(p)
    for k in range(q):
        io.write_matrix(out / f"adjacency_cov_{k + 1}.csv", names, report.edge_cov[:, :, k])
    io.write_matrix(out / "overall_graph.csv", names, report.overall_graph)
    io.write_long(out / "beta_sparse.csv", report.beta_sparse, skip_zero=True)
    log.info("%d edges, %d covariates selected", report.n_edges,
             int(report.covariates_selected.sum()))
    return EXIT_OK


def load_truth(truth_dir, p, q):
    truth_dir = Path(truth_dir)
    beta = io.read_long(truth_dir / "truth_beta.csv", p, q)
    _, graph = io.read_matrix(truth_dir / "truth_graph.csv")
    if graph.shape != (p, p):
        raise DataError(f"{truth_dir / 'truth_graph.csv'} is not {p} x {p}")
    cov_active = (np.abs(beta).sum(axis=(0, 1)) > 0).astype(np.int8)
    return simulation.GroundTruth(beta, graph.astype(np.int8), cov_active)


def cmd_metrics(args):
    rpath = Path(args.report)
    if rpath.is_dir():
        rpath = rpath / "selection_report.json"
    obj = io.read_json(rpath)
    report = report_from_json(obj)
    truth = load_truth(args.truth, obj["n_nodes"], obj["n_covs"])
    rows = []
    for domain, unordered in (("ordered", False), ("unordered", True)):
        res = simulation.evaluate_tasks(truth, report, unordered=unordered)
        for task in simulation.TASKS:
            if task == "covariate" and unordered:
                continue
            m = res[task]
            rows.append([task, domain, m.tpr, m.fpr, m.f1, m.mcc, m.tp, m.fp, m.tn, m.fn])
    out = io.ensure_dir(args.out)
    io.write_rows(out / "metrics.csv",
                  ["task", "domain", "tpr", "fpr", "f1", "mcc", "tp", "fp", "tn", "fn"], rows)
    for r in rows:
        log.info("%-15s %-9s tpr=%.3f fpr=%.3f f1=%.3f mcc=%s", r[0], r[1], r[2], r[3], r[4],
                 "NA" if np.isnan(r[5]) else f"{r[5]:.3f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# preprocess / validate
# ---------------------------------------------------------------------------

_ID_COLUMNS = ("sample", "sample_id", "id")


def _read_labelled(path):
    header, rows = io.read_table(path, numeric=False)
    ids = None
    if header and header[0].lower() in _ID_COLUMNS:
        ids = [r[0] for r in rows]
        header = header[1:]
        rows = [r[1:] for r in rows]
    mat = np.empty((len(rows), len(header)))
    for r, row in enumerate(rows):
        for c, cell in enumerate(row):
            try:
                mat[r, c] = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}:{r + 2}: column {header[c]!r} has non-numeric value {cell!r}"
                ) from None
    return header, ids, mat


def cmd_preprocess(args):
    names, ids, counts = _read_labelled(args.counts)
    table = preprocess.CountTable(counts, names, ids)
    kept = preprocess.filter_prevalence(table, args.min_count, args.min_fraction)
    if len(kept.features) < 2:
        raise DataError("fewer than two features survive the prevalence filter")
    y = preprocess.clr_transform(kept, args.pseudocount)
    out = io.ensure_dir(args.out)
    io.write_matrix(out / "y.csv", kept.features, y)
    manifest = {
        "kind": "preprocess",
        "counts": str(args.counts),
        "pseudocount": args.pseudocount,
        "min_count": args.min_count,
        "min_fraction": args.min_fraction,
        "features_kept": kept.features,
        "n_dropped": len(table.features) - len(kept.features),
        "versions": io.versions(),
    }
    if args.covariates:
        cnames, cids, cov = _read_labelled(args.covariates)
        if cov.shape[0] != counts.shape[0]:
            raise DataError("counts and covariates have different numbers of rows")
        x, constant = preprocess.log_minmax(cov, args.log_offset, strict=args.strict)
        if not args.no_intercept:
            x = preprocess.add_intercept(x)
            cnames = ["intercept"] + cnames
        io.write_matrix(out / "x.csv", cnames, x)
        manifest.update(log_offset=args.log_offset, intercept=not args.no_intercept,
                        constant_columns=[n for n, c in zip(cnames[-len(constant):], constant) if c])
    io.write_json(out / "preprocess_manifest.json", manifest)
    return EXIT_OK


def cmd_validate(args):
    checks = oracle.run_validation(seed=args.seed, quick=args.quick)
    width = max(len(c.name) for c in checks)
    for c in checks:
        status = "ok  " if c.passed else "FAIL"
        print(f"{status} {c.name:<{width}}  max_error={c.max_error:.3e}  "
              f"tol={c.tolerance:.1e} ({c.metric})  n={c.n_cases}  {c.seconds:.1f}s")
    if args.out:
        out = io.ensure_dir(args.out)
        io.write_json(out / "validation_report.json", {
            "kind": "validation",
            "seed": args.seed,
            "quick": args.quick,
            "checks": [c.row() for c in checks],
            "versions": io.versions(),
        })
    failed = [c.name for c in checks if not c.passed]
    if failed:
        raise ValidationFailure("tolerance breached: " + ", ".join(failed))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="dgss", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate synthetic replicates")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--p", type=int, default=25)
    s.add_argument("--q", type=int, default=10)
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--n-active", type=int, default=4)
    s.add_argument("--sparsity", type=float, default=0.4)
    s.add_argument("--coef-low", type=float, default=0.35)
    s.add_argument("--coef-high", type=float, default=0.5)
    s.add_argument("--replicates", type=int, default=50)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="run the Gibbs sampler")
    f.add_argument("--data", help="directory holding y.csv and x.csv")
    f.add_argument("--y")
    f.add_argument("--x")
    f.add_argument("--out", required=True)
    f.add_argument("--seed", type=int, required=True)
    f.add_argument("--iters", type=int, default=20000)
    f.add_argument("--burnin", type=int, default=10000)
    f.add_argument("--thin", type=int, default=1)
    f.add_argument("--dk", type=float, default=0.05)
    f.add_argument("--intercept-column", type=int, help="1-based covariate index with d = 0")
    f.add_argument("--chains", type=int, default=1)
    f.add_argument("--workers", type=int, default=1)
    f.add_argument("--init", choices=("prior", "zero"), default="prior")
    f.add_argument("--a-sigma", type=float, default=1.0)
    f.add_argument("--b-sigma", type=float, default=1.0)
    f.add_argument("--a-t", type=float, default=0.0, help="Gamma shape on t; 0 with --b-t 0 is flat")
    f.add_argument("--b-t", type=float, default=0.0)
    f.set_defaults(func=cmd_fit)

    m = sub.add_parser("summarize", help="threshold MPPIs into a selection report")
    m.add_argument("--fit", help="fit output directory")
    m.add_argument("--mppi", help="path to mppi.csv")
    m.add_argument("--cutoff", type=float, default=0.5)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_summarize)

    e = sub.add_parser("metrics", help="score a selection report against the truth")
    e.add_argument("--truth", required=True, help="replicate directory with truth files")
    e.add_argument("--report", required=True, help="selection_report.json or its directory")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_metrics)

    r = sub.add_parser("preprocess", help="CLR counts and log/min-max covariates")
    r.add_argument("--counts", required=True)
    r.add_argument("--covariates")
    r.add_argument("--out", required=True)
    r.add_argument("--pseudocount", type=float, default=preprocess.DEFAULT_PSEUDOCOUNT)
    r.add_argument("--log-offset", type=float, default=preprocess.DEFAULT_LOG_OFFSET)
    r.add_argument("--min-count", type=float, default=1)
    r.add_argument("--min-fraction", type=float, default=0.1)
    r.add_argument("--no-intercept", action="store_true")
    r.add_argument("--strict", action="store_true")
    r.set_defaults(func=cmd_preprocess)

    v = sub.add_parser("validate", help="run the oracle suite")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--quick", action="store_true", help="fewer Monte Carlo draws")
    v.add_argument("--out")
    v.set_defaults(func=cmd_validate)
    return ap


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "fit" and not (args.data or (args.y and args.x)):
        parser.error("fit needs --data or both --y and --x")
    if args.command == "summarize" and not (args.fit or args.mppi):
        parser.error("summarize needs --fit or --mppi")
    try:
        return args.func(args)
    except (InvalidParam, NotImplementedError) as exc:
        print(f"dgss: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, EmptyChain, OSError) as exc:
        print(f"dgss: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalFailure as exc:
        print(f"dgss: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValidationFailure as exc:
        print(f"dgss: validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DGSSError as exc:
        print(f"dgss: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
