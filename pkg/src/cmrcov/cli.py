"""Command-line shell: dataset/design ingestion, run persistence, result CSVs.

Exit codes: 0 success, 2 malformed input, 3 dimension mismatch, 4 sampler
failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__, designs, estimators, inference, simharness
from .model import ColumnFullyCensored, center_dataset, default_hyperparams
from .sampler import ChainConfig, SamplerError, run_chain

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_DIM_MISMATCH = 3
EXIT_SAMPLER = 4

FLOAT_FMT = "%.17g"


class InputError(Exception):
    pass


def _read_csv_matrix(path: str) -> tuple[list[str], np.ndarray]:
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if len(rows) < 2:
        raise InputError(f"{path}: need a header row plus data")
    header = rows[0]
    try:
        data = np.array([[float(v) for v in row] for row in rows[1:]])
    except ValueError as exc:
        raise InputError(f"{path}: non-numeric cell ({exc})") from exc
    if data.ndim != 2 or data.shape[1] != len(header):
        raise InputError(f"{path}: ragged rows")
    return header, data


def _write_csv_matrix(path: str, header: list[str], data: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in np.atleast_2d(data):
            writer.writerow([FLOAT_FMT % v for v in row])
        fh.flush()
        os.fsync(fh.fileno())


def _write_csv_rows(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [FLOAT_FMT % v if isinstance(v, float) else v for v in row]
            )
        fh.flush()
        os.fsync(fh.fileno())


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    def __init__(self, out_dir: str, command: str, config: dict, inputs: list[str]):
        os.makedirs(out_dir, exist_ok=True)
        self.path = os.path.join(out_dir, "manifest.json")
        self.body = {
            "tool_version": __version__,
            "command": command,
            "config": config,
            "input_digests": {p: _sha256(p) for p in inputs},
            "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "finished": None,
            "outputs": [],
        }
        self._flush()

    def _flush(self) -> None:
        with open(self.path, "w") as fh:
            json.dump(self.body, fh, indent=2)
            fh.write("\n")
            fh.flush()
            os.fsync(fh.fileno())

    def finish(self, outputs: list[str]) -> None:
        self.body["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        self.body["outputs"] = outputs
        self._flush()


def _chain_config(args) -> ChainConfig:
    iters, burn = args.iters, args.burn
    if getattr(args, "preset", None) == "full":
        iters, burn = 20_000, 10_000
    return ChainConfig(
        n_iter=iters,
        burn_in=burn,
        thin=args.thin,
        seed=args.seed,
        save_chain=getattr(args, "save_chain", False),
        ci_level=args.ci_level,
    )


def _load_design(args, p: int, names: list[str]):
    chosen = [bool(args.intercept), args.groups is not None, args.meta_table is not None]
    if sum(chosen) != 1:
        raise InputError("choose exactly one of --intercept, --groups, --meta-table")
    if args.intercept:
        return designs.build_intercept(p)
    if args.groups is not None:
        _, g = _read_csv_matrix(args.groups)
        g = g.ravel().astype(int)
        if g.size != p:
            raise _dim_error(f"--groups lists {g.size} labels for p={p} columns")
        return designs.build_categorical(g)
    if args.types is None:
        raise InputError("--meta-table requires a --types sidecar")
    header, table = _read_csv_matrix(args.meta_table)
    if table.shape[0] != p:
        raise _dim_error(f"--meta-table has {table.shape[0]} rows for p={p} columns")
    kinds = {}
    with open(args.types, newline="") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            name, _, kind = line.partition(",")
            if kind not in ("categorical", "continuous", "drop"):
                raise InputError(f"--types: unknown kind {kind!r} for {name!r}")
            kinds[name] = kind
    columns = []
    for k, name in enumerate(header):
        kind = kinds.get(name)
        if kind is None:
            raise InputError(f"--types: no declaration for column {name!r}")
        if kind == "drop":
            continue
        columns.append((name, kind, table[:, k]))
    if not columns:
        raise InputError("--types dropped every column")
    return designs.build_general(columns, standardize=True)


class _DimError(Exception):
    pass


def _dim_error(msg: str) -> _DimError:
    return _DimError(msg)


def cmd_fit(args) -> int:
    header, y = _read_csv_matrix(args.data)
    n, p = y.shape
    inputs = [args.data]
    censored = None
    lod = None
    if args.censored is not None:
        _, mask = _read_csv_matrix(args.censored)
        if mask.shape != y.shape:
            raise _dim_error("--censored mask shape differs from --data")
        censored = mask.astype(bool)
        inputs.append(args.censored)
    if args.lod is not None:
        _, lod_mat = _read_csv_matrix(args.lod)
        lod = lod_mat.ravel()
        if lod.size != p:
            raise _dim_error(f"--lod lists {lod.size} limits for p={p} columns")
        inputs.append(args.lod)
    for extra in (args.groups, args.meta_table, args.types):
        if extra is not None:
            inputs.append(extra)

    design = _load_design(args, p, header)
    cfg = _chain_config(args)
    hp = default_hyperparams(p, ridge_enabled=args.ridge)
    if args.rank is not None:
        hp.r = args.rank
        hp.validate(p)

    manifest = Manifest(
        args.out,
        "fit",
        {
            "n": n,
            "p": p,
            "chain": vars(cfg).copy(),
            "hyperparams": vars(hp).copy(),
        },
        inputs,
    )

    data = center_dataset(y, censored, lod)
    summary, chain = run_chain(data, design, hp, cfg)

    est = estimators.stein_bayes_estimate(summary)
    inclusion = inference.ci_zero_inclusion(summary)

    out = args.out
    paths = {
        "corr": os.path.join(out, "posterior_correlation.csv"),
        "cov": os.path.join(out, "stein_bayes_covariance.csv"),
        "incl": os.path.join(out, "zero_inclusion.csv"),
        "active": os.path.join(out, "active_factors.csv"),
    }
    _write_csv_matrix(paths["corr"], header, summary.mean_corr)
    _write_csv_matrix(paths["cov"], header, est)
    _write_csv_rows(
        paths["incl"], header, [[int(v) for v in row] for row in inclusion]
    )
    _write_csv_rows(
        paths["active"],
        ["kept_draw", "active_factors"],
        [[i, int(v)] for i, v in enumerate(summary.active_factors_trace)],
    )
    outputs = list(paths.values())
    if chain is not None:
        chain_path = os.path.join(out, "chain.npz")
        np.savez_compressed(
            chain_path,
            **{
                key: np.stack([draw[key] for draw in chain])
                for key in ("lam", "gamma", "d", "theta", "tau2", "omega", "z")
            },
        )
        outputs.append(chain_path)
    if summary.imputed_mean:
        imp_path = os.path.join(out, "imputed_means.csv")
        _write_csv_rows(
            imp_path,
            ["row", "column", "posterior_mean"],
            [[i, j, v] for (i, j), v in sorted(summary.imputed_mean.items())],
        )
        outputs.append(imp_path)
    manifest.finish(outputs)
    return EXIT_OK


def cmd_simulate(args) -> int:
    methods = args.methods
    p_list = args.p
    n_rules = args.n_rule
    reps = args.reps
    if args.preset == "full":
        p_list = [9, 16, 50]
        n_rules = ["p+1", "1.5p", "3p"]
        reps = 25
    for m in methods:
        if m not in simharness.METHODS:
            raise InputError(
                f"unknown method {m!r}; valid: {', '.join(simharness.METHODS)}"
            )
    regime = _make_regime(args)
    cfg = _chain_config(args)
    workers = args.threads or int(os.environ.get("CMR_THREADS", "1"))
    manifest = Manifest(
        args.out,
        "simulate",
        {
            "regime": args.regime,
            "p": p_list,
            "n_rule": n_rules,
            "methods": methods,
            "reps": reps,
            "master_seed": args.master_seed,
            "chain": vars(cfg).copy(),
            "workers": workers,
        },
        [],
    )
    records = simharness.run_grid(
        args.master_seed, [regime], methods, p_list, n_rules, reps, cfg, workers
    )
    rec_path = os.path.join(args.out, "records.csv")
    _write_csv_rows(
        rec_path,
        [
            "regime",
            "method",
            "p",
            "n",
            "replicate",
            "seed",
            "stein_loss",
            "active_factors",
            "error",
        ],
        # wall-clock timings stay out of the CSV so reruns are byte-identical
        [
            [
                r.regime,
                r.method,
                r.p,
                r.n,
                r.replicate,
                r.seed,
                "" if r.stein_loss is None else FLOAT_FMT % r.stein_loss,
                "" if r.active_factors is None else FLOAT_FMT % r.active_factors,
                r.error or "",
            ]
            for r in records
        ],
    )
    sum_path = os.path.join(args.out, "summary.json")
    with open(sum_path, "w") as fh:
        json.dump(simharness.summarize_records(records), fh, indent=2)
        fh.write("\n")
        fh.flush()
        os.fsync(fh.fileno())
    manifest.finish([rec_path, sum_path])
    if all(r.error for r in records):
        print("every grid cell failed", file=sys.stderr)
        return EXIT_SAMPLER
    return EXIT_OK


def _make_regime(args) -> simharness.Regime:
    if args.regime == "cor":
        return simharness.Regime("exchangeable", {"rho": args.rho})
    if args.regime == "block":
        return simharness.Regime(
            "block", {"within": args.within, "between": args.between}
        )
    if args.regime == "kron":
        if args.p1 is None or args.p2 is None:
            raise InputError("kron regime needs --p1 and --p2")
        return simharness.Regime(
            "kronecker",
            {"p1": args.p1, "p2": args.p2, "rho1": args.rho1, "rho2": args.rho2},
        )
    raise InputError(f"unknown regime {args.regime!r}")


def cmd_impute_lod(args) -> int:
    header, y = _read_csv_matrix(args.data)
    n, p = y.shape
    for m in args.methods:
        if m not in ("cmr", "cmr-intercept", "naive"):
            raise InputError(
                f"unknown method {m!r}; valid: cmr, cmr-intercept, naive"
            )
    for n_test in args.n_test:
        if not 1 <= n_test < n / 2:
            raise InputError(f"--n-test {n_test} not in [1, n/2) for n={n}")
    design = None
    if "cmr" in args.methods:
        design = _load_design(args, p, header)
    cfg = _chain_config(args)
    manifest = Manifest(
        args.out,
        "impute-lod",
        {
            "n_test": args.n_test,
            "methods": args.methods,
            "chain": vars(cfg).copy(),
        },
        [args.data],
    )
    results = simharness.lod_experiment(
        y, args.n_test, args.methods, cfg, design=design, master_seed=args.seed
    )
    rmse_path = os.path.join(args.out, "rmse.csv")
    _write_csv_rows(
        rmse_path,
        ["pct_detected", "n_test", "method", "rmse"],
        [
            [FLOAT_FMT % r["pct_detected"], r["n_test"], r["method"], r["rmse"]]
            for r in results
        ],
    )
    outputs = [rmse_path]
    # held-out truth per n_test, for downstream verification
    for n_test in args.n_test:
        mask, lod, truth = simharness.make_lod_holdout(y, n_test)
        tpath = os.path.join(args.out, f"heldout_truth_ntest{n_test}.csv")
        rows = []
        k = 0
        for j in range(p):
            for i in np.flatnonzero(mask[:, j]):
                rows.append([int(i), int(j), float(truth[k]), float(lod[j])])
                k += 1
        _write_csv_rows(tpath, ["row", "column", "value", "lod"], rows)
        outputs.append(tpath)
    manifest.finish(outputs)
    return EXIT_OK


def cmd_analyze(args) -> int:
    header, y = _read_csv_matrix(args.data)
    manifest = Manifest(
        args.out, "analyze", {"level": args.level}, [args.data]
    )
    y = y - y.mean(axis=0)
    sig = inference.significance_matrix(y, args.level)
    corr = np.corrcoef(y, rowvar=False)
    paths = [
        os.path.join(args.out, "sample_correlation.csv"),
        os.path.join(args.out, "adjusted_pvalues.csv"),
        os.path.join(args.out, "by_reject.csv"),
    ]
    _write_csv_matrix(paths[0], header, corr)
    _write_csv_matrix(paths[1], header, sig.p_adjusted)
    _write_csv_rows(paths[2], header, [[int(v) for v in row] for row in sig.reject])
    manifest.finish(paths)
    return EXIT_OK


def _add_chain_flags(sp, default_iters=4000, default_burn=2000):
    sp.add_argument("--iters", type=int, default=default_iters)
    sp.add_argument("--burn", type=int, default=default_burn)
    sp.add_argument("--thin", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--ci-level", type=float, default=0.95)
    sp.add_argument(
        "--preset", choices=["full"], default=None, help="long-chain, full-grid settings"
    )


def _add_design_flags(sp):
    sp.add_argument("--intercept", action="store_true", help="all-ones design")
    sp.add_argument("--groups", help="CSV of group labels, one per variable")
    sp.add_argument("--meta-table", help="CSV of meta covariates, one row per variable")
    sp.add_argument("--types", help="sidecar: one 'name,kind' line per column")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="cmrcov",
        description="Meta-covariate-informed Bayesian covariance estimation",
    )
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    fit = sub.add_parser("fit", help="fit the model to a dataset")
    fit.add_argument("--data", required=True, help="CSV with header, n rows x p cols")
    fit.add_argument("--lod", help="CSV of per-column detection limits")
    fit.add_argument("--censored", help="CSV 0/1 mask of below-limit entries")
    fit.add_argument("--out", required=True)
    fit.add_argument("--ridge", action="store_true", help="group ridge on coefficients")
    fit.add_argument("--rank", type=int, default=None, help="truncation rank override")
    fit.add_argument("--save-chain", action="store_true")
    _add_design_flags(fit)
    _add_chain_flags(fit)
    fit.set_defaults(func=cmd_fit)

    sim = sub.add_parser("simulate", help="run the loss-comparison grid")
    sim.add_argument("--regime", required=True, choices=["cor", "block", "kron"])
    sim.add_argument("--p", type=int, nargs="+", default=[9])
    sim.add_argument("--n-rule", nargs="+", default=["3p"])
    sim.add_argument("--methods", nargs="+", default=["MLE", "MR.I"])
    sim.add_argument("--reps", type=int, default=10)
    sim.add_argument("--master-seed", type=int, default=0)
    sim.add_argument("--out", required=True)
    sim.add_argument("--rho", type=float, default=0.9)
    sim.add_argument("--within", type=float, default=0.8)
    sim.add_argument("--between", type=float, default=0.3)
    sim.add_argument("--p1", type=int, default=None)
    sim.add_argument("--p2", type=int, default=None)
    sim.add_argument("--rho1", type=float, default=0.9)
    sim.add_argument("--rho2", type=float, default=0.6)
    sim.add_argument("--threads", type=int, default=None)
    _add_chain_flags(sim)
    sim.set_defaults(func=cmd_simulate)

    lod = sub.add_parser("impute-lod", help="detection-limit hold-out experiment")
    lod.add_argument("--data", required=True)
    lod.add_argument("--n-test", type=int, nargs="+", required=True)
    lod.add_argument("--methods", nargs="+", default=["naive", "cmr-intercept"])
    lod.add_argument("--out", required=True)
    _add_design_flags(lod)
    _add_chain_flags(lod)
    lod.set_defaults(func=cmd_impute_lod)

    ana = sub.add_parser("analyze", help="pairwise zero-correlation tests with FDR")
    ana.add_argument("--data", required=True)
    ana.add_argument("--level", type=float, default=0.05)
    ana.add_argument("--out", required=True)
    ana.set_defaults(func=cmd_analyze)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ColumnFullyCensored, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except _DimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIM_MISMATCH
    except SamplerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SAMPLER


if __name__ == "__main__":
    sys.exit(main())
