"""One explicit MLS-MPM/APIC substep: P2G scatter with fused internal force,
grid momentum update with gravity and wall projection, APIC G2P gather with
advection and deformation-gradient update, plus CFL step-size control."""

from dataclasses import dataclass, replace

import numpy as np

from .kernels import Grid, GridSpec, apply_boundary, check_interior, stencil
from .materials import Material, pk1_fixed_corotated


@dataclass
class Particles:
    """Structure-of-arrays particle storage (n particles).

    x: positions (n, 2) m. v: velocities (n, 2) m/s. m: masses (n,) kg.
    V0: initial volumes (n,) m^2. F: deformation gradients (n, 2, 2).
    C: APIC affine velocity matrices (n, 2, 2) 1/s.
    """

    x: np.ndarray
    v: np.ndarray
    m: np.ndarray
    V0: np.ndarray
    F: np.ndarray
    C: np.ndarray

    def __len__(self):
        return self.x.shape[0]

    def copy(self):
        return Particles(
            x=self.x.copy(),
            v=self.v.copy(),
            m=self.m.copy(),
            V0=self.V0.copy(),
            F=self.F.copy(),
            C=self.C.copy(),
        )

    @classmethod
    def concatenate(cls, parts):
        return cls(
            x=np.concatenate([p.x for p in parts]),
            v=np.concatenate([p.v for p in parts]),
            m=np.concatenate([p.m for p in parts]),
            V0=np.concatenate([p.V0 for p in parts]),
            F=np.concatenate([p.F for p in parts]),
            C=np.concatenate([p.C for p in parts]),
        )


@dataclass
class SimState:
    particles: Particles
    spec: GridSpec
    mat: Material
    gravity: np.ndarray
    time: float = 0.0

    def copy(self):
        return replace(self, particles=self.particles.copy(), gravity=self.gravity.copy())


def _flat_node_index(st, spec):
    """Flat node ids for every stencil entry, shape (n, 3, 3)."""
    d = np.arange(3)
    gi = st.base[:, 0, None, None] + d[:, None]
    gj = st.base[:, 1, None, None] + d[None, :]
    return gi * spec.ny + gj


def apic_scatter(x, m, v, C, spec, extra_affine=None):
    """Scatter APIC mass and momentum onto a fresh grid.

    Node mass m_k = sum_p m_p w_kp. Node momentum gets
    w_kp [m_p (v_p + C_p (x_k - x_p)) + extra_affine_p (x_k - x_p)];
    extra_affine carries the fused MLS-MPM force impulse when present.
    Active mask is set from the scattered mass. Deterministic: bincount
    accumulation in particle order.
    """
    st = stencil(x, spec)
    flat = _flat_node_index(st, spec).ravel()

    affine = m[:, None, None] * C
    if extra_affine is not None:
        affine = affine + extra_affine
    mom = st.w[..., None] * (
        (m[:, None] * v)[:, None, None, :]
        + np.einsum("pab,pijb->pija", affine, st.offsets)
    )

    grid = Grid.zeros(spec)
    n_nodes = spec.node_count
    grid.mass = np.bincount(
        flat, weights=(st.w * m[:, None, None]).ravel(), minlength=n_nodes
    ).reshape(spec.nx, spec.ny)
    for c in range(2):
        grid.momentum[..., c] = np.bincount(
            flat, weights=mom[..., c].ravel(), minlength=n_nodes
        ).reshape(spec.nx, spec.ny)
    grid.update_active()
    return grid


def apic_gather(grid, x):
    """Gather APIC velocity and affine matrix at positions x from a grid.

    Returns (v, C) with v_p = sum w v_k and
    C_p = (1/D) sum w v_k (x_k - x_p)^T, D the quadratic-spline inertia.
    """
    spec = grid.spec
    st = stencil(x, spec)
    d = np.arange(3)
    gi = st.base[:, 0, None, None] + d[:, None]
    gj = st.base[:, 1, None, None] + d[None, :]
    vk = grid.velocity[gi, gj]
    v = np.einsum("pij,pija->pa", st.w, vk)
    C = np.einsum("pij,pija,pijb->pab", st.w, vk, st.offsets) / spec.inertia
    return v, C


def p2g(state, dt):
    """Particle-to-grid transfer with the fused MLS-MPM internal force.

    The stress impulse enters as the affine term
    -dt (1/D) V0 P(F) F^T applied to (x_k - x_p).
    """
    p = state.particles
    P = pk1_fixed_corotated(p.F, state.mat)
    stress_affine = (
        (-dt / state.spec.inertia * p.V0)[:, None, None]
        * (P @ np.swapaxes(p.F, -1, -2))
    )
    return apic_scatter(p.x, p.m, p.v, p.C, state.spec, extra_affine=stress_affine)


def grid_update(grid, dt, gravity):
    """Momentum -> velocity on active nodes, gravity kick, wall projection."""
    act = grid.active
    grid.velocity[:] = 0.0
    grid.velocity[act] = grid.momentum[act] / grid.mass[act, None]
    grid.velocity[act] += dt * np.asarray(gravity)
    return apply_boundary(grid)


def g2p(state, grid, dt):
    """APIC gather, deformation-gradient update, and advection.

    Returns a new SimState; raises OutOfDomainError if advection pushes a
    particle outside the valid interior.
    """
    p = state.particles
    v, C = apic_gather(grid, p.x)
    F = (np.eye(2) + dt * C) @ p.F
    x = p.x + dt * v
    check_interior(x, state.spec)
    new_p = Particles(x=x, v=v, m=p.m.copy(), V0=p.V0.copy(), F=F, C=C)
    return replace(state, particles=new_p, time=state.time + dt)


def stable_dt(state, cfl=0.5):
    """CFL-limited explicit step: cfl * dx / (sound speed + max particle speed)."""
    if not 0.0 < cfl <= 1.0:
        raise ValueError(f"cfl must be in (0, 1], got {cfl}")
    v = state.particles.v
    v_max = float(np.sqrt((v * v).sum(axis=-1).max())) if len(state.particles) else 0.0
    return cfl * state.spec.dx / (state.mat.sound_speed + v_max)


def substep(state, dt):
    """One explicit step: p2g -> grid_update -> g2p."""
    grid = p2g(state, dt)
    grid_update(grid, dt, state.gravity)
    return g2p(state, grid, dt)
