"""Command-line entry point.

Four subcommands: ``run`` (build or resume a ladder, then sample),
``ladder`` (build and save only), ``eff`` (cost table), ``oracle``
(independent reference samples).  Failures leave a machine-readable
``error.json`` in the output directory; exit status 2 means the target
looks empty or too small (infeasible), 1 any other error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

from .config import load_config
from .errors import EmptyTargetError, IdemcError, InfeasibleError
from .harness import command_eff, command_ladder, command_oracle, command_run

__all__ = ["main"]


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="idemc",
        description="Uniform sampling from implausibility-bounded regions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "run": "build (or resume) a ladder and sample the target level",
        "ladder": "build the ladder and save it, without sampling",
        "eff": "tabulate expected evaluation costs",
        "oracle": "draw reference samples by an independent route",
    }
    for name, help_text in specs.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="configuration file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the configured seed")
        p.add_argument("--out", default=None,
                       help="override the configured output directory")
        if name == "run":
            p.add_argument("--ladder", default=None,
                           help="resume from a saved ladder file")
    return parser


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _write_error(out_dir, exc, code):
    payload = {
        "error": type(exc).__name__,
        "message": str(exc),
        "exit_code": code,
    }
    for attr in ("volume_bound", "levels", "diagnostics"):
        value = getattr(exc, attr, None)
        if value is not None:
            payload[attr] = value
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "error.json"), "w", encoding="utf-8") as fh:
            json.dump(_json_safe(payload), fh, indent=2)
            fh.write("\n")
    except OSError:
        pass


def main(argv=None):
    """Entry point; returns the process exit status."""
    args = _build_parser().parse_args(argv)
    out_dir = args.out if args.out is not None else "out"
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is None:
            out_dir = cfg.output_dir
        if args.command == "run":
            command_run(cfg, out_dir, ladder_path=args.ladder)
        elif args.command == "ladder":
            command_ladder(cfg, out_dir)
        elif args.command == "eff":
            command_eff(cfg, out_dir)
        else:
            command_oracle(cfg, out_dir)
    except (InfeasibleError, EmptyTargetError) as exc:
        _write_error(out_dir, exc, 2)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except IdemcError as exc:
        _write_error(out_dir, exc, 1)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps({"ok": True, "out": out_dir,
                      "report": os.path.join(out_dir, "report.json")}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
