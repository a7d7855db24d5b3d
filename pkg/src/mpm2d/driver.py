"""Frame-level simulation driver.

Advances a state frame by frame with the integrator named in the config:
plain explicit substepping, or one pseudo-implicit macro step per frame
in lumped or full least-squares mode.
"""

import math
from dataclasses import dataclass

from .explicit import stable_dt, substep
from .scene import compute_diagnostics
from .secant import macro_step


@dataclass
class FrameResult:
    """State snapshot after one frame interval."""

    index: int
    time: float
    state: object
    diagnostics: object
    report: object = None  # MacroStepReport for secant integrators


def advance_explicit(state, frame_dt, policy):
    """Advance frame_dt with explicit substeps.

    auto_cfl recomputes the stable step before every substep and clips
    the last one to land exactly on the frame boundary; fixed takes
    policy.count equal substeps.
    """
    t0 = state.time
    if policy.mode == "fixed":
        dt = frame_dt / policy.count
        for _ in range(policy.count):
            state = substep(state, dt)
    else:
        done = 0.0
        while done < frame_dt:
            dt = min(stable_dt(state, policy.cfl), frame_dt - done)
            state = substep(state, dt)
            done += dt
    state.time = t0 + frame_dt
    return state


def substep_count(state, macro_dt, policy):
    """Substep count S for one macro step under the substep policy."""
    if policy.mode == "fixed":
        return policy.count
    return max(1, math.ceil(macro_dt / stable_dt(state, policy.cfl)))


def run_frames(cfg, state, lam=None, cg_tol=1e-10):
    """Yield a FrameResult after each of cfg.frames frame intervals.

    lam and cg_tol tune the full least-squares reconstruction and are
    ignored by the other integrators.
    """
    mode = {"secant_lumped": "lumped", "secant_full_ls": "full_ls"}.get(cfg.integrator)
    for index in range(cfg.frames):
        report = None
        if mode is None:
            state = advance_explicit(state, cfg.frame_dt, cfg.substeps)
        else:
            S = substep_count(state, cfg.frame_dt, cfg.substeps)
            state, _, report = macro_step(
                state,
                cfg.frame_dt,
                S,
                mode=mode,
                lam=lam,
                cfl=cfg.substeps.cfl,
                cfl_policy="warn",
                cg_tol=cg_tol,
            )
        yield FrameResult(
            index=index,
            time=state.time,
            state=state,
            diagnostics=compute_diagnostics(state),
            report=report,
        )
