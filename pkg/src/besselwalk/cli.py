"""Command-line entry point: ``besselwalk <subcommand> --config run.ini``.

Exit status is 0 when every check passes, 1 when any check fails and 2 on
configuration or resource-limit errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from typing import Optional, Sequence

from .config import ConfigError, load_config
from .exact import ResourceLimitError
from .harness import SUBCOMMANDS, resource_estimate, run

__all__ = ["main", "build_parser"]

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="besselwalk",
        description="Exact, asymptotic and Monte-Carlo experiments for Bessel-like walks.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    helps = {
        "audit": "identity and inequality audits",
        "converge": "tail and point law convergence tables",
        "hit-regimes": "hitting-time laws across the three height bands",
        "llt": "occupancy and location local limit tables",
        "couple": "coupling study and Monte-Carlo fidelity",
        "bessel-check": "Bessel exit moments against their limits",
        "estimate-k0": "slowly varying constant K0 per spec",
    }
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True, help="INI run configuration")
        p.add_argument("--out", default=None, help="output directory (overrides out_path)")
        p.add_argument("--seed", type=_u64, default=None, help="override the config seed")
        p.add_argument("--threads", type=_positive, default=1,
                       help="worker threads for sampling (results do not depend on it)")
        p.add_argument("--dry-run", action="store_true",
                       help="print the resource estimate and exit")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    experiments = SUBCOMMANDS[args.command]
    if args.dry_run:
        for exp in experiments:
            est = resource_estimate(cfg, exp)
            print(f"{exp}: cells={est.cells} bytes={est.bytes} est_seconds={est.est_seconds:.3g}")
        return EXIT_PASS
    try:
        result = run(cfg, experiments, out_dir=args.out, threads=args.threads)
    except ResourceLimitError as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for out in result.outputs:
        counts = {}
        for r in out.summary:
            counts[r["status"]] = counts.get(r["status"], 0) + 1
        tally = ", ".join(f"{k}={v}" for k, v in sorted(counts.items()))
        print(f"{out.experiment}: {'PASS' if out.passed else 'FAIL'} ({tally})")
        for r in out.summary:
            if r["status"] == "FAIL":
                print(f"  FAIL {r['spec_id']} {r['formula_id']} {r['series']} {r['note']}".rstrip())
    for path in result.files:
        print(f"wrote {path}")
    return result.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
