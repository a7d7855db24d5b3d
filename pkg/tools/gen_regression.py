"""Record the desk-scale block-drop regression baseline.

Runs the pseudo-implicit block drop (macro step = 10x the rest-state
stable explicit step, S = 10) and a matched explicit run, measures the
per-frame RMS position deviation between them, and freezes twice that
curve as the regression limit in tests/data/regression_block_drop.json.
Rerun only to re-baseline after an intentional algorithm change.
"""

import json
import os
import sys
import tempfile
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from mpm2d.io import diff_runs, run_to_dir
from mpm2d.scene import build_state, parse_config

STABLE_DT_REST = 0.0021293285745913964  # E=1e4, nu=0.3, rho=1000, dx=1/64, cfl=0.5

SCENE = {
    "grid": {"dx": 1.0 / 64, "nx": 64, "ny": 64},
    "material": {"E": 1e4, "nu": 0.3, "rho": 1000.0},
    "gravity": [0.0, -9.8],
    "regions": [{"min": [0.25, 0.25], "max": [0.75, 0.75], "ppc": 4}],
    "integrator": "secant_lumped",
    "macro_dt": 10 * STABLE_DT_REST,
    "substeps": {"mode": "fixed", "count": 10},
    "frames": 120,
    "rng_seed": 4,
}


def main():
    out_path = os.path.join(
        os.path.dirname(__file__), "..", "tests", "data", "regression_block_drop.json"
    )
    with tempfile.TemporaryDirectory() as tmp:
        t0 = time.perf_counter()
        cfg = parse_config(dict(SCENE))
        run_to_dir(cfg, build_state(cfg), os.path.join(tmp, "secant"))
        t_secant = time.perf_counter() - t0
        print(f"secant_lumped run: {t_secant:.1f} s")

        t0 = time.perf_counter()
        doc = dict(SCENE)
        doc["integrator"] = "explicit"
        doc["substeps"] = {"mode": "auto_cfl", "cfl": 0.5}
        cfg = parse_config(doc)
        run_to_dir(cfg, build_state(cfg), os.path.join(tmp, "explicit"))
        t_explicit = time.perf_counter() - t0
        print(f"explicit run: {t_explicit:.1f} s")

        rows = diff_runs(os.path.join(tmp, "secant"), os.path.join(tmp, "explicit"))

    measured = [rms for _, rms, _ in rows]
    limit = [max(2.0 * rms, 1e-12) for rms in measured]
    print(f"rms: first={measured[0]:.3e} max={max(measured):.3e} last={measured[-1]:.3e}")

    record = {
        "scene": SCENE,
        "explicit_substeps": {"mode": "auto_cfl", "cfl": 0.5},
        "measured_rms": measured,
        "rms_limit": limit,
        "baseline_seconds": {"secant": t_secant, "explicit": t_explicit},
    }
    with open(out_path, "w") as f:
        json.dump(record, f, indent=2)
        f.write("\n")
    print(f"wrote {os.path.normpath(out_path)}")


if __name__ == "__main__":
    main()
