"""Frame files and run manifest.

Frames are plain CSV, one particle per row, floats printed with 17
significant digits so values round-trip exactly. The manifest echoes the
validated config and records per-frame diagnostics.
"""

import dataclasses
import json
import os

import numpy as np

FRAME_HEADER = "id,x,y,vx,vy,Fxx,Fxy,Fyx,Fyy"
FRAME_PATTERN = "frame_%04d.csv"
MANIFEST_NAME = "manifest.json"


def frame_path(out_dir, index):
    return os.path.join(out_dir, FRAME_PATTERN % index)


def write_frame(frame, out_dir):
    """Write one frame CSV; returns the file path."""
    p = frame.state.particles
    path = frame_path(out_dir, frame.index)
    cols = np.column_stack(
        [p.x, p.v, p.F.reshape(len(p), 4)]
    )
    with open(path, "w") as f:
        f.write(FRAME_HEADER + "\n")
        for i, row in enumerate(cols):
            f.write("%d,%s\n" % (i, ",".join("%.17g" % c for c in row)))
    return path


def read_frame(path):
    """Read a frame CSV back into (ids, x, v, F) arrays."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    ids = data[:, 0].astype(int)
    x = data[:, 1:3]
    v = data[:, 3:5]
    F = data[:, 5:9].reshape(-1, 2, 2)
    return ids, x, v, F


def _frame_entry(frame, path):
    entry = {
        "index": frame.index,
        "time": frame.time,
        "file": os.path.basename(path),
        "diagnostics": frame.diagnostics.as_dict(),
    }
    if frame.report is not None:
        entry["macro_step"] = dataclasses.asdict(frame.report)
    return entry


def write_manifest(cfg, options, entries, out_dir):
    """Write manifest.json: config echo, driver options, per-frame records."""
    doc = {
        "config": cfg.raw,
        "options": options,
        "frames": entries,
    }
    path = os.path.join(out_dir, MANIFEST_NAME)
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def run_to_dir(cfg, state, out_dir, lam=None, cg_tol=1e-10, progress=None):
    """Drive all frames of a run, writing frame files and the manifest."""
    from .driver import run_frames

    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for frame in run_frames(cfg, state, lam=lam, cg_tol=cg_tol):
        path = write_frame(frame, out_dir)
        entries.append(_frame_entry(frame, path))
        if progress is not None:
            progress(frame)
    options = {"lambda": lam, "cg_tol": cg_tol}
    return write_manifest(cfg, options, entries, out_dir)


def list_frames(run_dir):
    """Sorted frame file paths in a run directory."""
    names = sorted(
        n for n in os.listdir(run_dir) if n.startswith("frame_") and n.endswith(".csv")
    )
    return [os.path.join(run_dir, n) for n in names]


def diff_runs(dir_a, dir_b):
    """Per-frame position deviation between two runs.

    Returns a list of (index, rms, max) tuples where rms is the root mean
    square of per-particle position deviation norms and max the largest.
    """
    frames_a = list_frames(dir_a)
    frames_b = list_frames(dir_b)
    if len(frames_a) != len(frames_b):
        raise ValueError(
            f"frame count mismatch: {len(frames_a)} in {dir_a}, {len(frames_b)} in {dir_b}"
        )
    if not frames_a:
        raise ValueError(f"no frame files found in {dir_a}")
    out = []
    for index, (pa, pb) in enumerate(zip(frames_a, frames_b)):
        _, xa, _, _ = read_frame(pa)
        _, xb, _, _ = read_frame(pb)
        if xa.shape != xb.shape:
            raise ValueError(
                f"particle count mismatch at frame {index}: {xa.shape[0]} vs {xb.shape[0]}"
            )
        d = np.linalg.norm(xa - xb, axis=1)
        out.append((index, float(np.sqrt(np.mean(d * d))), float(d.max())))
    return out
