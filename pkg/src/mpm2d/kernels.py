"""Quadratic B-spline kernels, background grid storage, and wall projection.

The grid is a dense uniform 2D node array; node (i, j) sits at
``origin + (i*dx, j*dx)``. Particles interact with a 3x3 node stencil.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfDomainError

WALLS = ("left", "right", "bottom", "top")
BC_KINDS = ("sticky", "slip")

# relative factor for the active-node mass threshold
MASS_EPS_REL = 1e-12


def _default_bc():
    return {w: "sticky" for w in WALLS}


@dataclass(frozen=True)
class GridSpec:
    """Geometry of the background grid.

    dx: cell width (m). nx, ny: node counts per axis. origin: position of
    node (0, 0). boundary_band: node-width of the wall region (>= 2, the
    quadratic stencil radius). bc: wall name -> "sticky" | "slip".
    """

    dx: float
    nx: int
    ny: int
    origin: tuple = (0.0, 0.0)
    boundary_band: int = 2
    bc: dict = field(default_factory=_default_bc)

    def __post_init__(self):
        if not self.dx > 0:
            raise ValueError(f"dx must be positive, got {self.dx}")
        if self.nx < 8 or self.ny < 8:
            raise ValueError(f"node counts must be >= 8, got ({self.nx}, {self.ny})")
        if self.boundary_band < 2:
            raise ValueError(f"boundary_band must be >= 2, got {self.boundary_band}")
        if len(self.origin) != 2:
            raise ValueError("origin must be a 2-vector")
        missing = [w for w in WALLS if w not in self.bc]
        if missing:
            raise ValueError(f"bc missing walls: {missing}")
        bad = {w: k for w, k in self.bc.items() if k not in BC_KINDS}
        if bad:
            raise ValueError(f"bc kinds must be one of {BC_KINDS}, got {bad}")

    @property
    def node_count(self):
        return self.nx * self.ny

    @property
    def inertia(self):
        """APIC inertia scalar for quadratic B-splines (m^2)."""
        return 0.25 * self.dx * self.dx

    @property
    def interior_min(self):
        """Lower corner of the region where particles may live.

        Half a cell inside the outermost node layer, the limit where a
        3x3 stencil still fits the node array. Wall contact decelerates
        particles inside the band well before they reach this line: at
        the limit the sticky band carries the entire stencil weight.
        """
        return np.array([self.origin[0] + 0.5 * self.dx, self.origin[1] + 0.5 * self.dx])

    @property
    def interior_max(self):
        """Upper residence corner (exclusive; see interior_min)."""
        return np.array(
            [
                self.origin[0] + (self.nx - 1.5) * self.dx,
                self.origin[1] + (self.ny - 1.5) * self.dx,
            ]
        )

    def node_position(self, i, j):
        return np.array([self.origin[0] + i * self.dx, self.origin[1] + j * self.dx])

    def node_grid(self):
        """All node positions as an (nx, ny, 2) array."""
        xs = self.origin[0] + self.dx * np.arange(self.nx)
        ys = self.origin[1] + self.dx * np.arange(self.ny)
        out = np.empty((self.nx, self.ny, 2))
        out[..., 0] = xs[:, None]
        out[..., 1] = ys[None, :]
        return out


@dataclass
class Grid:
    """Node storage: mass, raw momentum from scatter, velocity, active mask.

    ``momentum`` always holds the un-projected scatter result; wall
    projection modifies ``velocity`` only.
    """

    spec: GridSpec
    mass: np.ndarray
    momentum: np.ndarray
    velocity: np.ndarray
    active: np.ndarray

    @classmethod
    def zeros(cls, spec):
        return cls(
            spec=spec,
            mass=np.zeros((spec.nx, spec.ny)),
            momentum=np.zeros((spec.nx, spec.ny, 2)),
            velocity=np.zeros((spec.nx, spec.ny, 2)),
            active=np.zeros((spec.nx, spec.ny), dtype=bool),
        )

    def update_active(self):
        """Set the active mask from the mass field (relative threshold)."""
        eps = MASS_EPS_REL * self.mass.sum() / self.spec.node_count
        self.active = self.mass > eps
        return self

    def kinetic_energy(self):
        return 0.5 * float(np.einsum("ij,ija,ija->", self.mass, self.velocity, self.velocity))


@dataclass
class Stencil:
    """3x3 interpolation stencil for one particle or a batch.

    base: corner node index, (..., 2) int. w: weights (..., 3, 3).
    grad: exact kernel gradients wrt the evaluation point, (..., 3, 3, 2),
    units 1/m. offsets: node position minus particle position, (..., 3, 3, 2).
    """

    base: np.ndarray
    w: np.ndarray
    grad: np.ndarray
    offsets: np.ndarray


def bspline_weights_1d(fx):
    """Quadratic B-spline weights and derivatives on a 3-node 1D stencil.

    fx is the normalized particle offset from the leftmost stencil node and
    must lie in [0.5, 1.5). Returns (w, dw), each shaped (..., 3); dw is the
    derivative with respect to fx (divide by dx for a physical gradient).
    """
    fx = np.asarray(fx, dtype=np.float64)
    if np.any(fx < 0.5) or np.any(fx >= 1.5):
        bad = fx[(fx < 0.5) | (fx >= 1.5)].ravel()
        raise ValueError(f"fx must be in [0.5, 1.5), got {bad[:5]}")
    w = np.empty(fx.shape + (3,))
    dw = np.empty(fx.shape + (3,))
    w[..., 0] = 0.5 * (1.5 - fx) ** 2
    w[..., 1] = 0.75 - (fx - 1.0) ** 2
    w[..., 2] = 0.5 * (fx - 0.5) ** 2
    dw[..., 0] = fx - 1.5
    dw[..., 1] = -2.0 * (fx - 1.0)
    dw[..., 2] = fx - 0.5
    return w, dw


def check_interior(x, spec):
    """Raise OutOfDomainError if any position cannot form a full stencil
    (valid residence is interior_min <= x < interior_max per axis)."""
    x = np.asarray(x, dtype=np.float64)
    lo = spec.interior_min
    hi = spec.interior_max
    bad = np.any(x < lo, axis=-1) | np.any(x >= hi, axis=-1)
    if np.any(bad):
        idx = int(np.argmax(np.atleast_1d(bad)))
        pos = x.reshape(-1, 2)[idx]
        raise OutOfDomainError(idx, pos)


def stencil(x, spec):
    """Build the 3x3 quadratic stencil(s) for position(s) x, shape (..., 2).

    Positions must lie in the valid residence interior so the stencil
    never leaves the node array.
    """
    x = np.asarray(x, dtype=np.float64)
    check_interior(x, spec)
    xn = (x - np.asarray(spec.origin)) / spec.dx
    base = np.floor(xn - 0.5).astype(np.int64)
    fx = xn - base
    wx, dwx = bspline_weights_1d(fx[..., 0])
    wy, dwy = bspline_weights_1d(fx[..., 1])

    w = wx[..., :, None] * wy[..., None, :]
    grad = np.empty(w.shape + (2,))
    grad[..., 0] = dwx[..., :, None] * wy[..., None, :] / spec.dx
    grad[..., 1] = wx[..., :, None] * dwy[..., None, :] / spec.dx

    off = np.empty(w.shape + (2,))
    d = np.arange(3, dtype=np.float64)
    off[..., 0] = (d[:, None] - fx[..., 0, None, None]) * spec.dx
    off[..., 1] = (d[None, :] - fx[..., 1, None, None]) * spec.dx
    return Stencil(base=base, w=w, grad=grad, offsets=off)


def apply_boundary(grid):
    """Project wall conditions onto grid velocities (idempotent, in place).

    Sticky walls zero the full velocity over the boundary band; slip walls
    zero only the wall-normal component. Momentum is left untouched.
    """
    b = grid.spec.boundary_band
    v = grid.velocity
    bc = grid.spec.bc
    for wall, sl, normal in (
        ("left", np.s_[:b, :], 0),
        ("right", np.s_[-b:, :], 0),
        ("bottom", np.s_[:, :b], 1),
        ("top", np.s_[:, -b:], 1),
    ):
        if bc[wall] == "sticky":
            v[sl] = 0.0
        else:
            v[sl + (normal,)] = 0.0
    return grid
