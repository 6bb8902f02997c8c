#!/usr/bin/env python3
"""Run the loss-comparison grid over all three population regimes.

Each regime is dispatched through the `cmrcov simulate` subcommand so the run
leaves the same manifests and CSV artifacts a user would get from the CLI.
Pass --quick for a smoke-scale run, otherwise the full preset is used.
"""
import argparse
import sys

from cmrcov.cli import main as cli_main

REGIMES = {
    "cor": ["--regime", "cor", "--rho", "0.9", "--methods", "MLE", "MR.I", "CUSP"],
    "block": ["--regime", "block", "--methods", "MLE", "MR.I", "MR.D", "CUSP"],
    "kron": [
        "--regime", "kron", "--p1", "2", "--p2", "4", "--p", "8",
        "--methods", "MLE", "MR.I", "MR.D", "Kron",
    ],
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/loss_grid")
    ap.add_argument("--master-seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--quick", action="store_true", help="small chains, 3 replicates")
    args = ap.parse_args(argv)

    for name, regime_args in REGIMES.items():
        cmd = [
            "simulate", *regime_args,
            "--out", f"{args.out}/{name}",
            "--master-seed", str(args.master_seed),
            "--threads", str(args.threads),
        ]
        if args.quick:
            cmd += ["--iters", "600", "--burn", "200", "--reps", "3",
                    "--p", "9" if name != "kron" else "8", "--n-rule", "3p"]
        else:
            cmd += ["--preset", "full"]
        print(f"== {name}: cmrcov {' '.join(cmd)}", flush=True)
        code = cli_main(cmd)
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
