"""Command line front end.

Two subcommands: `sll run --config c.json` executes one experiment, and
`sll sweep --config c.json --axis defense.sigma --values 0,1,2,5` fans a
single config out across one axis. Process exit codes: 0 completed,
2 detector-aborted, 3 error (including invalid configs).

Output directory resolution order: --output flag, then run.output_dir in the
config, then $SLL_OUTPUT_ROOT/<config stem> (root defaults to ./runs).
"""

import argparse
import json
import os
import sys

from .experiment import (ConfigError, load_config, run_experiment, run_sweep)

OUTPUT_ROOT_ENV = "SLL_OUTPUT_ROOT"

_EXIT_BY_STATUS = {"completed": 0, "detector-aborted": 2, "error": 3}


def build_parser():
    p = argparse.ArgumentParser(
        prog="sll", description="split-learning laboratory experiment runner")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute one experiment config")
    sweep = sub.add_parser("sweep", help="vary one config path over values")
    for cmd in (run, sweep):
        cmd.add_argument("--config", required=True, help="JSON config path")
        cmd.add_argument("--output", default=None, help="artifact directory")
        cmd.add_argument("--seed-override", type=int, default=None,
                         help="replace run.seed before hashing")
        cmd.add_argument("--threads", type=int, default=1,
                         help="sweep worker threads (sub-runs stay "
                              "single-threaded)")
    sweep.add_argument("--axis", required=True,
                       help="dotted config path, e.g. defense.sigma")
    sweep.add_argument("--values", required=True,
                       help="comma-separated axis values")
    return p


def parse_values(text):
    """Comma list -> typed values (JSON literals, falling back to strings)."""
    values = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            values.append(json.loads(tok))
        except json.JSONDecodeError:
            values.append(tok)
    return values


def _resolve_output(args, cfg):
    if args.output:
        return args.output
    configured = (cfg.get("run") or {}).get("output_dir")
    if configured:
        return configured
    root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
    stem = os.path.splitext(os.path.basename(args.config))[0]
    return os.path.join(root, stem)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except (OSError, json.JSONDecodeError) as e:
        print(f"sll: cannot read config: {e}", file=sys.stderr)
        return 3
    out_dir = _resolve_output(args, cfg)

    try:
        if args.command == "run":
            res = run_experiment(cfg, output_dir=out_dir,
                                 seed_override=args.seed_override)
            line = f"{res.status}  {res.output_dir}  cfg={res.config_hash[:12]}"
            print(line, file=sys.stderr if res.exit_code else sys.stdout)
            if res.error:
                print(res.error.strip().splitlines()[-1], file=sys.stderr)
            return res.exit_code

        values = parse_values(args.values)
        if args.seed_override is not None:
            cfg.setdefault("run", {})["seed"] = args.seed_override
        rows = run_sweep(cfg, args.axis, values, output_dir=out_dir,
                         threads=max(1, args.threads))
        worst = 0
        for row in rows:
            print(f"{args.axis}={row['value']}  {row['status']}")
            worst = max(worst, _EXIT_BY_STATUS.get(row["status"], 3))
        print(f"sweep table: {os.path.join(out_dir, 'sweep.csv')}")
        return worst
    except ConfigError as e:
        print(f"sll: invalid config: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
