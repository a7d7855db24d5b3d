"""Command-line driver.

`run` simulates a scene file into an output directory of frame CSVs plus
a manifest; `diff` compares two such directories frame by frame.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import json
import sys

from .errors import MpmError
from .io import diff_runs, run_to_dir
from .scene import build_state, parse_config


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="mpm2d",
        description="2D MPM simulator with explicit and pseudo-implicit integrators",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a scene file")
    run.add_argument("scene", help="scene JSON file")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument(
        "--integrator", choices=("explicit", "secant_lumped", "secant_full_ls")
    )
    run.add_argument("--macro-dt", type=float, help="macro step / frame interval (s)")
    run.add_argument("--substeps", type=int, help="fixed substep count per step")
    run.add_argument("--cfl", type=float, help="CFL number for substep sizing")
    run.add_argument("--frames", type=int, help="number of frames")
    run.add_argument(
        "--lambda", dest="lam", type=float, help="gradient weight in the full LS solve"
    )
    run.add_argument("--seed", type=int, help="particle seeding RNG seed")
    run.add_argument("--cg-tol", type=float, default=1e-10, help="CG relative tolerance")

    diff = sub.add_parser("diff", help="compare two run directories")
    diff.add_argument("dir_a")
    diff.add_argument("dir_b")
    return parser


def _apply_overrides(doc, args):
    if args.integrator is not None:
        doc["integrator"] = args.integrator
    if args.macro_dt is not None:
        doc.pop("frame_dt", None)
        doc["macro_dt"] = args.macro_dt
    if args.frames is not None:
        doc["frames"] = args.frames
    if args.seed is not None:
        doc["rng_seed"] = args.seed
    if args.substeps is not None:
        policy = {"mode": "fixed", "count": args.substeps}
        old = doc.get("substeps")
        if isinstance(old, dict) and "cfl" in old:
            policy["cfl"] = old["cfl"]
        doc["substeps"] = policy
    if args.cfl is not None:
        policy = doc.get("substeps")
        if isinstance(policy, dict) and policy.get("mode") == "fixed":
            policy["cfl"] = args.cfl
        else:
            doc["substeps"] = {"mode": "auto_cfl", "cfl": args.cfl}
    return doc


def _cmd_run(args):
    try:
        with open(args.scene) as f:
            text = f.read()
    except OSError as e:
        print(f"mpm2d: {e}", file=sys.stderr)
        return 1
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        print(f"mpm2d: {args.scene}: invalid JSON: {e}", file=sys.stderr)
        return 1
    if not isinstance(doc, dict):
        print(f"mpm2d: {args.scene}: expected a JSON object", file=sys.stderr)
        return 1
    doc = _apply_overrides(doc, args)
    try:
        cfg = parse_config(doc)
        state = build_state(cfg)
        manifest = run_to_dir(cfg, state, args.out, lam=args.lam, cg_tol=args.cg_tol)
    except (MpmError, OSError) as e:
        print(f"mpm2d: {e}", file=sys.stderr)
        return 1
    print(f"wrote {cfg.frames} frames and {manifest}")
    return 0


def _cmd_diff(args):
    try:
        rows = diff_runs(args.dir_a, args.dir_b)
    except (OSError, ValueError) as e:
        print(f"mpm2d: {e}", file=sys.stderr)
        return 1
    print("frame,rms,max")
    for index, rms, dmax in rows:
        print("%d,%.17g,%.17g" % (index, rms, dmax))
    return 0


def main(argv=None):
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    return _cmd_diff(args)


if __name__ == "__main__":
    sys.exit(main())
