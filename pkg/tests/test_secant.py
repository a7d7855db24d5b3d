"""Pseudo-implicit macro step: secant targets, lumped and full
least-squares grid reconstruction, CG solve, and the macro transfer."""

import numpy as np
import pytest

from mpm2d.errors import CflViolationError, CgConvergenceError, EmptySystemError
from mpm2d.explicit import Particles, SimState, apic_gather, substep
from mpm2d.kernels import GridSpec, stencil
from mpm2d.materials import Material, inv2
from mpm2d.secant import (
    Snapshot,
    SecantTargets,
    assemble_ls_system,
    finish_macro_transfer,
    ls_objective,
    macro_step,
    reconstruct_lumped,
    reconstruct_macro_field,
    run_substeps,
    scattered_target_ke,
    secant_targets,
    solve_cg,
)

MAT = Material(E=1e4, nu=0.3, rho=1000.0)


def make_state(cells=8, ppc=4, seed=0, spec=None, gravity=(0.0, 0.0), v=None):
    """Dense stratified block of cells x cells cells, ppc particles each,
    centered in the grid; dense coverage keeps the LS system regular."""
    spec = spec or GridSpec(dx=1.0 / 64, nx=64, ny=64)
    rng = np.random.default_rng(seed)
    c0x = spec.nx // 2 - cells // 2
    c0y = spec.ny // 2 - cells // 2
    ci, cj = np.meshgrid(np.arange(cells), np.arange(cells), indexing="ij")
    cell = np.column_stack([(c0x + ci).ravel(), (c0y + cj).ravel()])
    cell = np.repeat(cell, ppc, axis=0)
    x = np.asarray(spec.origin) + (cell + rng.random(cell.shape)) * spec.dx
    n = x.shape[0]
    vol = spec.dx**2 / ppc
    particles = Particles(
        x=x,
        v=np.tile(np.asarray(v, dtype=float), (n, 1)) if v is not None else np.zeros((n, 2)),
        m=np.full(n, MAT.rho * vol),
        V0=np.full(n, vol),
        F=np.tile(np.eye(2), (n, 1, 1)),
        C=np.zeros((n, 2, 2)),
    )
    return SimState(
        particles=particles, spec=spec, mat=MAT, gravity=np.asarray(gravity, float), time=0.0
    )


def random_targets(state, seed=1, scale=1.0):
    rng = np.random.default_rng(seed)
    n = len(state.particles)
    return SecantTargets(
        v_star=scale * rng.normal(size=(n, 2)),
        C_star=scale * rng.normal(size=(n, 2, 2)),
    )


def snapshot_of(state):
    p = state.particles
    return Snapshot(x=p.x.copy(), F=p.F.copy(), m=p.m.copy())


def affine_targets(state, c, A):
    """Targets consistent with the global field v(x) = c + A(x - x0)."""
    x = state.particles.x
    n = len(state.particles)
    return SecantTargets(
        v_star=c + x @ A.T,
        C_star=np.tile(A, (n, 1, 1)),
    )


def test_run_substeps_time_and_snapshot():
    state = make_state(seed=1, gravity=(0.0, -9.8))
    state.time = 0.5
    after, snap = run_substeps(state, macro_dt=1e-3, S=4)
    assert after.time == 0.5 + 1e-3
    np.testing.assert_array_equal(snap.x, state.particles.x)
    np.testing.assert_array_equal(snap.F, state.particles.F)
    # snapshot is a copy, not a view
    assert not np.shares_memory(snap.x, after.particles.x)


def test_run_substeps_cfl_policy():
    state = make_state(seed=2)
    with pytest.raises(CflViolationError):
        run_substeps(state, macro_dt=1.0, S=1, cfl_policy="error")
    with pytest.warns(UserWarning):
        run_substeps(state, macro_dt=1.0, S=1, cfl_policy="warn")


def test_secant_targets_definition():
    """dt v* = x_after - x_before and dt C* = F_after F_before^{-1} - I,
    checked against a directly computed oracle."""
    state = make_state(seed=3, gravity=(0.0, -9.8), v=(0.2, 0.0))
    dt = 1e-3
    after, snap = run_substeps(state, dt, S=5)
    t = secant_targets(snap, after, dt)
    np.testing.assert_allclose(
        t.v_star, (after.particles.x - snap.x) / dt, rtol=0, atol=1e-15
    )
    expect_C = (after.particles.F @ inv2(snap.F) - np.eye(2)) / dt
    np.testing.assert_allclose(t.C_star, expect_C, rtol=0, atol=1e-12)


def test_single_substep_targets_match_apic():
    """S = 1: the secant targets coincide with the substep's own APIC
    (v_p, C_p) outputs."""
    state = make_state(seed=4, gravity=(0.0, -9.8))
    dt = 5e-4
    after, snap = run_substeps(state, dt, S=1)
    t = secant_targets(snap, after, dt)
    np.testing.assert_allclose(t.v_star - after.particles.v, 0.0, rtol=0, atol=1e-11)
    np.testing.assert_allclose(t.C_star - after.particles.C, 0.0, rtol=0, atol=1e-9)


def test_lumped_single_particle_oracle():
    """One particle: node velocity is exactly v* + C* (x_k - x_p) on the
    whole stencil, independent of mass."""
    spec = GridSpec(dx=1.0 / 32, nx=32, ny=32)
    x = np.array([[0.5 + 0.3 * spec.dx, 0.5 - 0.2 * spec.dx]])
    snap = Snapshot(x=x, F=np.tile(np.eye(2), (1, 1, 1)), m=np.array([2.5]))
    v_star = np.array([[0.7, -0.3]])
    C_star = np.array([[[0.1, 0.8], [-0.5, 0.2]]])
    grid = reconstruct_lumped(SecantTargets(v_star, C_star), snap, spec)

    st = stencil(x, spec)
    for a in range(3):
        for b in range(3):
            i, j = st.base[0] + (a, b)
            expect = v_star[0] + C_star[0] @ st.offsets[0, a, b]
            np.testing.assert_allclose(
                grid.velocity[i, j], expect, rtol=0, atol=1e-13
            )


def test_lumped_respects_walls():
    """Targets pointing into a sticky wall are zeroed over the band."""
    spec = GridSpec(dx=1.0 / 32, nx=32, ny=32)
    x = np.array([[3.2 * spec.dx, 0.5]])  # stencil touches the band
    snap = Snapshot(x=x, F=np.tile(np.eye(2), (1, 1, 1)), m=np.array([1.0]))
    t = SecantTargets(np.array([[-1.0, 0.0]]), np.zeros((1, 2, 2)))
    grid = reconstruct_lumped(t, snap, spec)
    np.testing.assert_array_equal(grid.velocity[:2, :], 0.0)
    assert np.any(grid.velocity[2:, :, 0] != 0.0)


def test_ls_system_shape_and_symmetry():
    state = make_state(seed=5)
    t = random_targets(state, seed=6)
    sys_ = assemble_ls_system(t, snapshot_of(state), state.spec, lam=state.spec.inertia)
    assert sys_.A.shape == (sys_.size, sys_.size)
    assert sys_.b.shape == (sys_.size, 2)
    # bitwise symmetry by construction
    assert (sys_.A != sys_.A.T).nnz == 0
    # strictly positive diagonal on the active set
    assert np.all(sys_.A.diagonal() > 0)
    # positive definite on a few random directions
    rng = np.random.default_rng(7)
    for _ in range(5):
        z = rng.normal(size=sys_.size)
        assert z @ (sys_.A @ z) > 0


def test_row_sums_equal_lumped_masses():
    """With lam = 0 the consistent matrix rows sum to the lumped node
    masses (partition of unity)."""
    state = make_state(seed=8)
    t = random_targets(state, seed=9)
    sys_ = assemble_ls_system(t, snapshot_of(state), state.spec, lam=0.0)
    rows = np.asarray(sys_.A.sum(axis=1)).ravel()
    np.testing.assert_allclose(rows, sys_.node_mass, rtol=1e-12, atol=1e-15)


def test_apic_gradient_rhs_equals_lumped_momentum():
    """Replacing exact gradients by (1/D) w (x_k - x_p) with lam = D makes
    the full-LS right-hand side identical to the lumped transfer's
    momentum."""
    state = make_state(cells=11, seed=10)
    t = random_targets(state, seed=11)
    snap = snapshot_of(state)
    spec = state.spec
    sys_ = assemble_ls_system(t, snap, spec, lam=spec.inertia, gradient_mode="apic")
    grid = reconstruct_lumped(t, snap, spec)
    flat = sys_.nodes
    lumped_momentum = grid.momentum.reshape(-1, 2)[flat]
    np.testing.assert_allclose(sys_.b, lumped_momentum, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(
        sys_.node_mass, grid.mass.ravel()[flat], rtol=1e-13, atol=1e-15
    )


def test_solve_cg_against_dense_oracle():
    """CG solution matches numpy.linalg.solve on both components."""
    state = make_state(cells=4, seed=12, spec=GridSpec(dx=1.0 / 16, nx=16, ny=16))
    t = random_targets(state, seed=13)
    sys_ = assemble_ls_system(t, snapshot_of(state), state.spec, lam=state.spec.inertia)
    res = solve_cg(sys_, tol=1e-12)
    dense = np.linalg.solve(sys_.A.toarray(), sys_.b)
    got = res.grid.velocity.reshape(-1, 2)[sys_.nodes]
    np.testing.assert_allclose(got, dense, rtol=1e-7, atol=1e-10)
    assert 0 < res.iterations <= 10 * sys_.size
    assert res.residual <= 1e-12


def test_solve_cg_zero_rhs():
    state = make_state(cells=3, seed=14, spec=GridSpec(dx=1.0 / 16, nx=16, ny=16))
    n = len(state.particles)
    t = SecantTargets(np.zeros((n, 2)), np.zeros((n, 2, 2)))
    sys_ = assemble_ls_system(t, snapshot_of(state), state.spec, lam=state.spec.inertia)
    res = solve_cg(sys_)
    assert res.iterations == 0
    np.testing.assert_array_equal(res.grid.velocity, 0.0)


def test_solve_cg_iteration_cap():
    state = make_state(cells=7, seed=15)
    t = random_targets(state, seed=16)
    sys_ = assemble_ls_system(t, snapshot_of(state), state.spec, lam=state.spec.inertia)
    with pytest.raises(CgConvergenceError):
        solve_cg(sys_, tol=1e-14, max_iter=1)


def test_empty_system():
    state = make_state(cells=1, ppc=1, seed=17)
    state.particles.m[:] = 0.0
    t = random_targets(state, seed=18)
    with pytest.raises(EmptySystemError):
        assemble_ls_system(t, snapshot_of(state), state.spec, lam=state.spec.inertia)


def test_affine_reproduction_both_modes():
    """Globally affine targets are reproduced exactly: v_k = c + A(x_k - x0)
    on every active node, in lumped and full-LS mode."""
    state = make_state(cells=10, seed=19)
    spec = state.spec
    c = np.array([0.4, -0.2])
    A = np.array([[0.3, -0.6], [0.5, -0.1]])
    t = affine_targets(state, c, A)
    snap = snapshot_of(state)
    nodes = spec.node_grid()
    expect = c + nodes @ A.T

    grid_l = reconstruct_lumped(t, snap, spec)
    err_l = np.abs(grid_l.velocity - expect)[grid_l.active]
    assert err_l.max() < 1e-12

    # full LS, warm started with the lumped field as in production use
    sys_ = assemble_ls_system(t, snap, spec, lam=spec.inertia)
    x0 = grid_l.velocity.reshape(-1, 2)[sys_.nodes]
    res = solve_cg(sys_, tol=1e-12, x0=x0)
    flat = sys_.nodes
    err_f = np.abs(res.grid.velocity.reshape(-1, 2)[flat] - expect.reshape(-1, 2)[flat])
    assert err_f.max() < 1e-12


def test_full_ls_objective_not_worse_than_lumped():
    """The CG solution of the consistent system never has a larger
    least-squares objective than the lumped closed form."""
    for seed in range(5):
        state = make_state(cells=10, seed=20 + seed)
        t = random_targets(state, seed=40 + seed, scale=0.5)
        snap = snapshot_of(state)
        spec = state.spec
        lam = spec.inertia
        grid_l = reconstruct_lumped(t, snap, spec)
        sys_ = assemble_ls_system(t, snap, spec, lam=lam)
        res = solve_cg(sys_, tol=1e-10, x0=grid_l.velocity.reshape(-1, 2)[sys_.nodes])
        obj_l = ls_objective(grid_l, t, snap, lam)
        obj_f = ls_objective(res.grid, t, snap, lam)
        assert obj_f <= obj_l + 1e-12 * max(1.0, obj_l)


def test_finish_macro_transfer_updates():
    """x = x^n + dt v_p and F = (I + dt C_p) F^n with (v_p, C_p) gathered
    at the snapshot positions."""
    state = make_state(seed=26, gravity=(0.0, -9.8))
    dt = 1e-3
    snap, grid, report = reconstruct_macro_field(state, dt, S=3)
    out = finish_macro_transfer(state, snap, grid, dt)
    v, C = apic_gather(grid, snap.x)
    np.testing.assert_array_equal(out.particles.v, v)
    np.testing.assert_array_equal(out.particles.x, snap.x + dt * v)
    np.testing.assert_allclose(
        out.particles.F, (np.eye(2) + dt * C) @ snap.F, rtol=0, atol=1e-16
    )
    assert out.time == pytest.approx(dt)
    assert len(out.particles) == len(state.particles)


def test_macro_step_report():
    state = make_state(seed=27, gravity=(0.0, -9.8))
    out, grid, rep = macro_step(state, 2e-3, S=4, mode="full_ls")
    assert rep.S == 4
    assert rep.dt_sub == pytest.approx(5e-4)
    assert rep.mode == "full_ls"
    assert rep.lam == pytest.approx(state.spec.inertia)
    assert rep.cg_iterations >= 0
    assert rep.dissipation == pytest.approx(rep.target_ke - rep.particle_ke, abs=1e-18)
    assert out.time == pytest.approx(2e-3)


def test_dissipation_chain_lumped():
    """particle KE <= grid KE <= scattered target KE for the lumped mode;
    each inequality is a Cauchy-Schwarz averaging step."""
    for seed in range(3):
        state = make_state(cells=11, seed=30 + seed, gravity=(0.0, -9.8))
        rng = np.random.default_rng(60 + seed)
        state.particles.v[:] = 0.5 * rng.normal(size=(len(state.particles), 2))
        dt = 1e-3
        snap, grid, rep = reconstruct_macro_field(state, dt, S=2, mode="lumped")
        out = finish_macro_transfer(state, snap, grid, dt)
        p = out.particles
        ke_p = 0.5 * float(np.sum(p.m * np.sum(p.v**2, axis=-1)))
        assert ke_p <= rep.grid_ke + 1e-10 * max(1.0, rep.grid_ke)
        assert rep.grid_ke <= rep.target_ke + 1e-10 * max(1.0, rep.target_ke)


def test_macro_step_mass_conserved():
    state = make_state(seed=33, gravity=(0.0, -9.8))
    m0 = state.particles.m.sum()
    for _ in range(5):
        state, _, _ = macro_step(state, 2e-3, S=5)
    assert state.particles.m.sum() == pytest.approx(m0, rel=1e-14)


def test_scattered_target_ke_uniform_oracle():
    """Uniform v*, zero C*: target KE is exactly (1/2) M |v|^2."""
    state = make_state(cells=5, seed=34)
    n = len(state.particles)
    t = SecantTargets(np.tile([0.3, -0.4], (n, 1)), np.zeros((n, 2, 2)))
    ke = scattered_target_ke(t, snapshot_of(state), state.spec)
    expect = 0.5 * state.particles.m.sum() * 0.25
    assert ke == pytest.approx(expect, rel=1e-12)
