"""Command-line front end: ``cgostab <experiment> --config cfg.json --out dir``."""

from __future__ import annotations

import argparse
import logging
import sys

from .harness import KINDS, execute, verify_run


def build_parser():
    p = argparse.ArgumentParser(prog="cgostab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        s = sub.add_parser(kind, help=f"run the {kind} experiment")
        s.add_argument("--config", help="JSON configuration file")
        s.add_argument("--out", help="run directory (default: <root>/<kind>-<hash>)")
        s.add_argument("--seed", type=int, help="master seed")
        s.add_argument("--threads", type=int, help="worker threads for transforms and tasks")
    v = sub.add_parser("verify", help="re-check the hashes recorded in a run manifest")
    v.add_argument("run_dir")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "verify":
        problems = verify_run(args.run_dir)
        for line in problems:
            print(line)
        print("ok" if not problems else f"{len(problems)} problem(s)")
        return 0 if not problems else 1
    code, run_dir = execute(args.command, args.config, args.out, args.seed, args.threads)
    print(f"{'passed' if code == 0 else 'FAILED'}: {run_dir}")
    return code


if __name__ == "__main__":
    sys.exit(main())
