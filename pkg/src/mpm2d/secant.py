"""Pseudo-implicit macro stepping: run S explicit substeps, form secant
particle targets from the before/after states, and reconstruct a macro-step
grid velocity field on the reference-configuration grid.

Two reconstructions are provided: the closed-form lumped APIC transfer of
the targets, and the full weighted least-squares normal equations solved
with preconditioned conjugate gradient. The lumped path uses the APIC
gradient approximation (1/D) w (x_k - x_p); the full system keeps exact
B-spline gradients.
"""

import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .errors import CflViolationError, CgConvergenceError, DegenerateDeformationError, EmptySystemError
from .explicit import Particles, apic_gather, apic_scatter, grid_update, stable_dt, substep
from .kernels import MASS_EPS_REL, Grid, apply_boundary, check_interior, stencil
from .materials import DET_F_MIN, det2, inv2


@dataclass
class Snapshot:
    """Reference-configuration particle state at the start of a macro step."""

    x: np.ndarray
    F: np.ndarray
    m: np.ndarray


@dataclass
class SecantTargets:
    """Per-particle macro-step velocity and velocity-gradient targets,
    anchored at the snapshot positions."""

    v_star: np.ndarray
    C_star: np.ndarray


@dataclass
class LsSystem:
    """Normal equations of the grid velocity fit, restricted to active nodes.

    nodes: flat node ids of the active set (i*ny + j, sorted).
    A: sparse SPD coefficient matrix, one scalar per node pair, applied
    identically to both velocity components. b: right-hand side (nact, 2).
    node_mass: lumped node masses of the active set.
    """

    nodes: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    lam: float
    spec: object
    node_mass: np.ndarray

    @property
    def size(self):
        return self.nodes.shape[0]


@dataclass
class CgResult:
    grid: Grid
    iterations: int
    residual: float


@dataclass
class MacroStepReport:
    """Per-macro-step instrumentation."""

    S: int
    dt_sub: float
    mode: str
    lam: float
    objective: float
    cg_iterations: int = 0
    cg_residual: float = 0.0
    target_ke: float = 0.0
    grid_ke: float = 0.0
    particle_ke: float = None
    dissipation: float = None


def run_substeps(state, macro_dt, S, cfl=0.5, cfl_policy="warn"):
    """Advance S explicit substeps of size macro_dt / S.

    Returns (substepped state, snapshot of the starting positions,
    deformation gradients, and masses). The substep size is checked against
    the stable explicit step of the starting state; cfl_policy selects
    whether a violation warns or raises.
    """
    if S < 1:
        raise ValueError(f"S must be >= 1, got {S}")
    if not macro_dt > 0:
        raise ValueError(f"macro_dt must be positive, got {macro_dt}")
    if cfl_policy not in ("warn", "error"):
        raise ValueError(f"cfl_policy must be warn or error, got {cfl_policy!r}")
    p = state.particles
    snap = Snapshot(x=p.x.copy(), F=p.F.copy(), m=p.m.copy())
    dt_sub = macro_dt / S
    dt_ok = stable_dt(state, cfl)
    if dt_sub > dt_ok:
        if cfl_policy == "error":
            raise CflViolationError(dt_sub, dt_ok)
        warnings.warn(
            f"substep dt={dt_sub:.6g} exceeds stable dt={dt_ok:.6g}", stacklevel=2
        )
    t0 = state.time
    for _ in range(S):
        state = substep(state, dt_sub)
    state.time = t0 + macro_dt
    return state, snap


def secant_targets(before, after, macro_dt):
    """Secant velocity and velocity-gradient targets over the macro step:
    v* = (x_after - x_before) / dt and C* = (F_after F_before^{-1} - I) / dt."""
    p = after.particles if hasattr(after, "particles") else after
    J = det2(before.F)
    if np.any(J <= DET_F_MIN):
        idx = int(np.argmax(J <= DET_F_MIN))
        raise DegenerateDeformationError(idx, J[idx])
    v_star = (p.x - before.x) / macro_dt
    C_star = (p.F @ inv2(before.F) - np.eye(2)) / macro_dt
    return SecantTargets(v_star=v_star, C_star=C_star)


def reconstruct_lumped(targets, snapshot, spec):
    """Closed-form reconstruction: APIC scatter of the targets on the
    reference grid, division by node mass, then wall projection."""
    grid = apic_scatter(snapshot.x, snapshot.m, targets.v_star, targets.C_star, spec)
    return grid_update(grid, 0.0, (0.0, 0.0))


def _active_set(st, m, spec):
    """Lumped node masses, active flat ids, and flat -> active index map."""
    d = np.arange(3)
    gi = st.base[:, 0, None, None] + d[:, None]
    gj = st.base[:, 1, None, None] + d[None, :]
    flat = (gi * spec.ny + gj).ravel()
    mass = np.bincount(flat, weights=(st.w * m[:, None, None]).ravel(), minlength=spec.node_count)
    eps = MASS_EPS_REL * mass.sum() / spec.node_count
    nodes = np.flatnonzero(mass > eps)
    index_of = np.full(spec.node_count, -1, dtype=np.int64)
    index_of[nodes] = np.arange(nodes.shape[0])
    return mass, nodes, index_of, flat


def assemble_ls_system(targets, snapshot, spec, lam, gradient_mode="exact"):
    """Assemble the sparse SPD normal equations over active nodes.

    A_kj = sum_p m_p w_kp w_jp + lam * sum_p m_p grad_kp . grad_jp and
    b_k = sum_p m_p w_kp v*_p + lam * sum_p m_p C*_p grad_kp.
    gradient_mode "exact" uses analytic B-spline gradients; "apic"
    substitutes (1/D) w (x_k - x_p), which with lam = D collapses the
    right-hand side to the lumped transfer (useful for validation).
    """
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    if gradient_mode not in ("exact", "apic"):
        raise ValueError(f"unknown gradient_mode {gradient_mode!r}")
    m = snapshot.m
    st = stencil(snapshot.x, spec)
    mass, nodes, index_of, flat = _active_set(st, m, spec)
    if nodes.size == 0:
        raise EmptySystemError("no active grid nodes")

    n = m.shape[0]
    if gradient_mode == "exact":
        grad = st.grad
    else:
        grad = st.w[..., None] * st.offsets / spec.inertia

    w = st.w.reshape(n, 9)
    g = grad.reshape(n, 9, 2)
    ids = index_of[flat].reshape(n, 9)

    # per-particle 9x9 pair values: m (w_s w_t + lam g_s . g_t)
    vals = m[:, None, None] * (
        w[:, :, None] * w[:, None, :] + lam * np.einsum("psa,pta->pst", g, g)
    )
    rows = np.broadcast_to(ids[:, :, None], (n, 9, 9)).ravel()
    cols = np.broadcast_to(ids[:, None, :], (n, 9, 9)).ravel()
    vals = vals.ravel()
    # keep one entry per unordered pair, mirror afterwards for exact symmetry
    keep = rows <= cols
    nact = nodes.shape[0]
    upper = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(nact, nact)).tocsr()
    A = upper + upper.T - sp.diags(upper.diagonal())
    A = sp.csr_matrix(A)

    rhs = m[:, None, None] * (
        w[..., None] * targets.v_star[:, None, :]
        + lam * np.einsum("pab,psb->psa", targets.C_star, g)
    )
    b = np.empty((nact, 2))
    for c in range(2):
        b[:, c] = np.bincount(ids.ravel(), weights=rhs[..., c].ravel(), minlength=nact)

    return LsSystem(
        nodes=nodes, A=A, b=b, lam=float(lam), spec=spec, node_mass=mass[nodes]
    )


def grid_from_nodes(spec, nodes, velocity, node_mass):
    """Place active-node values onto a fresh Grid."""
    grid = Grid.zeros(spec)
    i, j = np.divmod(nodes, spec.ny)
    grid.mass[i, j] = node_mass
    grid.velocity[i, j] = velocity
    grid.momentum[i, j] = node_mass[:, None] * velocity
    grid.active[i, j] = True
    return grid


def solve_cg(system, tol=1e-10, max_iter=None, x0=None):
    """Jacobi-preconditioned conjugate gradient, one solve per component.

    Stops when ||A v - b|| / ||b|| <= tol; raises CgConvergenceError past
    max_iter (default 10x the active node count). The result is placed on a
    grid and wall-projected. x0 warm-starts the iteration; CG then lowers
    the least-squares objective monotonically from that field.
    """
    A = system.A
    nact = system.size
    if nact == 0:
        raise EmptySystemError("cannot solve an empty system")
    if max_iter is None:
        max_iter = 10 * nact
    inv_diag = 1.0 / A.diagonal()
    v = np.zeros((nact, 2))
    iters_max = 0
    resid_max = 0.0
    for c in range(2):
        b = system.b[:, c]
        b_norm = float(np.linalg.norm(b))
        if b_norm == 0.0:
            continue
        x = np.zeros(nact) if x0 is None else x0[:, c].copy()
        r = b - A @ x
        it = 0
        res = float(np.linalg.norm(r)) / b_norm
        if res > tol:
            z = inv_diag * r
            p = z.copy()
            rz = float(r @ z)
            while True:
                it += 1
                Ap = A @ p
                alpha = rz / float(p @ Ap)
                x += alpha * p
                r -= alpha * Ap
                res = float(np.linalg.norm(r)) / b_norm
                if res <= tol:
                    break
                if it >= max_iter:
                    raise CgConvergenceError(it, res, tol)
                z = inv_diag * r
                rz_new = float(r @ z)
                p = z + (rz_new / rz) * p
                rz = rz_new
        v[:, c] = x
        iters_max = max(iters_max, it)
        resid_max = max(resid_max, res)
    grid = grid_from_nodes(system.spec, system.nodes, v, system.node_mass)
    apply_boundary(grid)
    return CgResult(grid=grid, iterations=iters_max, residual=resid_max)


def ls_objective(grid, targets, snapshot, lam):
    """Weighted least-squares misfit of a grid field against the targets:
    sum_p m_p ||sum_i w v_i - v*||^2 + lam sum_p m_p ||sum_i v_i grad^T - C*||_F^2,
    with exact B-spline gradients."""
    spec = grid.spec
    st = stencil(snapshot.x, spec)
    d = np.arange(3)
    gi = st.base[:, 0, None, None] + d[:, None]
    gj = st.base[:, 1, None, None] + d[None, :]
    vk = grid.velocity[gi, gj]
    v_p = np.einsum("pij,pija->pa", st.w, vk)
    grad_p = np.einsum("pija,pijb->pab", vk, st.grad)
    dv = v_p - targets.v_star
    dC = grad_p - targets.C_star
    return float(
        np.sum(snapshot.m * np.sum(dv * dv, axis=-1))
        + lam * np.sum(snapshot.m * np.sum(dC * dC, axis=(-1, -2)))
    )


def scattered_target_ke(targets, snapshot, spec):
    """Kinetic energy of the raw scattered target contributions:
    sum_k sum_p (1/2) m_p w_kp |v* + C* (x_k - x_p)|^2."""
    st = stencil(snapshot.x, spec)
    vals = targets.v_star[:, None, None, :] + np.einsum(
        "pab,pijb->pija", targets.C_star, st.offsets
    )
    return 0.5 * float(
        np.sum(snapshot.m[:, None, None] * st.w * np.sum(vals * vals, axis=-1))
    )


def reconstruct_macro_field(
    state,
    macro_dt,
    S,
    mode="lumped",
    lam=None,
    cfl=0.5,
    cfl_policy="warn",
    cg_tol=1e-10,
    cg_max_iter=None,
):
    """Substep, form targets, and reconstruct the macro grid field.

    Returns (snapshot, grid, report) without touching the particles: the
    caller may inspect or overwrite the grid field (e.g. for coupling)
    before finish_macro_transfer. The substepped particle state is
    discarded once the targets are formed. lam defaults to the natural
    scaling D = dx^2 / 4.
    """
    if mode not in ("lumped", "full_ls"):
        raise ValueError(f"unknown reconstruction mode {mode!r}")
    lam = state.spec.inertia if lam is None else float(lam)
    after, snap = run_substeps(state, macro_dt, S, cfl=cfl, cfl_policy=cfl_policy)
    targets = secant_targets(snap, after, macro_dt)

    lumped = reconstruct_lumped(targets, snap, state.spec)
    cg_iterations = 0
    cg_residual = 0.0
    if mode == "lumped":
        grid = lumped
    else:
        system = assemble_ls_system(targets, snap, state.spec, lam)
        i, j = np.divmod(system.nodes, state.spec.ny)
        result = solve_cg(system, tol=cg_tol, max_iter=cg_max_iter, x0=lumped.velocity[i, j])
        grid = result.grid
        cg_iterations = result.iterations
        cg_residual = result.residual

    report = MacroStepReport(
        S=S,
        dt_sub=macro_dt / S,
        mode=mode,
        lam=lam,
        objective=ls_objective(grid, targets, snap, lam),
        cg_iterations=cg_iterations,
        cg_residual=cg_residual,
        target_ke=scattered_target_ke(targets, snap, state.spec),
        grid_ke=grid.kinetic_energy(),
    )
    return snap, grid, report


def finish_macro_transfer(state, snapshot, grid, macro_dt):
    """APIC transfer of the macro field back to the snapshot particles:
    v_p, C_p from the field, x_p = x^n + dt v_p, F_p = (I + dt C_p) F^n."""
    v, C = apic_gather(grid, snapshot.x)
    x = snapshot.x + macro_dt * v
    F = (np.eye(2) + macro_dt * C) @ snapshot.F
    check_interior(x, state.spec)
    particles = Particles(
        x=x, v=v, m=snapshot.m.copy(), V0=state.particles.V0.copy(), F=F, C=C
    )
    return replace(state, particles=particles, time=state.time + macro_dt)


def macro_step(
    state,
    macro_dt,
    S,
    mode="lumped",
    lam=None,
    cfl=0.5,
    cfl_policy="warn",
    cg_tol=1e-10,
    cg_max_iter=None,
):
    """One pseudo-implicit macro step.

    Pipeline: S explicit substeps -> secant targets -> grid reconstruction
    (lumped or full least squares) -> wall projection -> APIC transfer back
    to the reference-configuration particles. Returns the advanced state,
    the reconstructed grid field, and the step report.
    """
    snap, grid, report = reconstruct_macro_field(
        state,
        macro_dt,
        S,
        mode=mode,
        lam=lam,
        cfl=cfl,
        cfl_policy=cfl_policy,
        cg_tol=cg_tol,
        cg_max_iter=cg_max_iter,
    )
    new_state = finish_macro_transfer(state, snap, grid, macro_dt)
    p = new_state.particles
    report.particle_ke = 0.5 * float(np.sum(p.m * np.sum(p.v * p.v, axis=-1)))
    report.dissipation = report.target_ke - report.particle_ke
    return new_state, grid, report
