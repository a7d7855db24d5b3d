"""Scene configuration ingestion, particle seeding, and diagnostics.

Scene files are JSON documents with a fixed key set; unknown keys and
out-of-range values are rejected with the offending key path.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SceneValidationError
from .explicit import Particles, SimState
from .kernels import BC_KINDS, WALLS, GridSpec
from .materials import Material, elastic_energy_density

INTEGRATORS = ("explicit", "secant_lumped", "secant_full_ls")

_U64 = np.uint64
_CELL_EPS = 1e-9  # slack in cell units when rasterizing region boxes


@dataclass
class Region:
    """Axis-aligned seeding box."""

    lo: np.ndarray
    hi: np.ndarray
    ppc: int
    velocity: np.ndarray
    affine: np.ndarray = None


@dataclass
class SubstepPolicy:
    """Either CFL-derived substep counts or a fixed count per step."""

    mode: str  # "auto_cfl" | "fixed"
    cfl: float = 0.5
    count: int = 1


@dataclass
class SceneConfig:
    spec: GridSpec
    material: Material
    gravity: np.ndarray
    regions: list
    integrator: str
    frame_dt: float
    substeps: SubstepPolicy
    frames: int
    rng_seed: int
    raw: dict = field(default_factory=dict, repr=False)


def _fail(path, msg):
    raise SceneValidationError(path, msg)


def _check_keys(d, allowed, path):
    if not isinstance(d, dict):
        _fail(path, f"expected an object, got {type(d).__name__}")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        _fail(path, f"unknown keys: {', '.join(unknown)}")


def _get(d, key, path, required=True, default=None):
    if key not in d:
        if required:
            _fail(f"{path}.{key}" if path else key, "missing required key")
        return default
    return d[key]


def _as_number(v, path):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(path, f"expected a number, got {v!r}")
    return float(v)


def _as_int(v, path):
    if isinstance(v, bool) or not isinstance(v, int):
        _fail(path, f"expected an integer, got {v!r}")
    return v


def _as_vec2(v, path):
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        _fail(path, f"expected a 2-vector, got {v!r}")
    return np.array([_as_number(c, f"{path}[{i}]") for i, c in enumerate(v)])


def _as_mat2(v, path):
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        _fail(path, f"expected a 2x2 matrix, got {v!r}")
    return np.array([_as_vec2(row, f"{path}[{i}]") for i, row in enumerate(v)])


def _parse_grid(d, path):
    _check_keys(d, ("dx", "nx", "ny", "origin", "boundary_band", "bc"), path)
    dx = _as_number(_get(d, "dx", path), f"{path}.dx")
    nx = _as_int(_get(d, "nx", path), f"{path}.nx")
    ny = _as_int(_get(d, "ny", path), f"{path}.ny")
    origin = d.get("origin", [0.0, 0.0])
    origin = tuple(_as_vec2(origin, f"{path}.origin"))
    band = d.get("boundary_band", 2)
    band = _as_int(band, f"{path}.boundary_band")
    bc_in = d.get("bc", {})
    _check_keys(bc_in, WALLS, f"{path}.bc")
    bc = {w: "sticky" for w in WALLS}
    for w, kind in bc_in.items():
        if kind not in BC_KINDS:
            _fail(f"{path}.bc.{w}", f"must be one of {BC_KINDS}, got {kind!r}")
        bc[w] = kind
    try:
        return GridSpec(dx=dx, nx=nx, ny=ny, origin=origin, boundary_band=band, bc=bc)
    except ValueError as e:
        _fail(path, str(e))


def _parse_material(d, path):
    _check_keys(d, ("E", "nu", "rho"), path)
    try:
        return Material(
            E=_as_number(_get(d, "E", path), f"{path}.E"),
            nu=_as_number(_get(d, "nu", path), f"{path}.nu"),
            rho=_as_number(_get(d, "rho", path), f"{path}.rho"),
        )
    except ValueError as e:
        _fail(path, str(e))


def region_cells(region, spec):
    """Index ranges (i0, i1, j0, j1), half-open, of grid cells overlapping
    the region box. Cell (i, j) spans node i..i+1 by node j..j+1."""
    out = []
    for axis in range(2):
        lo = (region.lo[axis] - spec.origin[axis]) / spec.dx
        hi = (region.hi[axis] - spec.origin[axis]) / spec.dx
        c0 = int(math.floor(lo + _CELL_EPS))
        c1 = int(math.ceil(hi - _CELL_EPS))
        out.extend((c0, c1))
    return tuple(out)


def _parse_region(d, path, spec):
    _check_keys(d, ("min", "max", "ppc", "velocity", "affine"), path)
    lo = _as_vec2(_get(d, "min", path), f"{path}.min")
    hi = _as_vec2(_get(d, "max", path), f"{path}.max")
    if not np.all(hi > lo):
        _fail(path, f"min {lo.tolist()} must be strictly below max {hi.tolist()}")
    ppc = _as_int(_get(d, "ppc", path), f"{path}.ppc")
    if ppc < 1:
        _fail(f"{path}.ppc", f"must be >= 1, got {ppc}")
    vel = _as_vec2(d.get("velocity", [0.0, 0.0]), f"{path}.velocity")
    affine = _as_mat2(d["affine"], f"{path}.affine") if "affine" in d else None
    region = Region(lo=lo, hi=hi, ppc=ppc, velocity=vel, affine=affine)

    i0, i1, j0, j1 = region_cells(region, spec)
    b = spec.boundary_band
    if i0 < b or j0 < b or i1 > spec.nx - 1 - b or j1 > spec.ny - 1 - b:
        _fail(path, "region overlaps the boundary band or leaves the grid")
    return region


def _parse_substeps(d, path):
    _check_keys(d, ("mode", "cfl", "count"), path)
    mode = _get(d, "mode", path)
    if mode == "auto_cfl":
        cfl = _as_number(d.get("cfl", 0.5), f"{path}.cfl")
        if not 0.0 < cfl <= 1.0:
            _fail(f"{path}.cfl", f"must be in (0, 1], got {cfl}")
        if "count" in d:
            _fail(f"{path}.count", "not allowed with mode auto_cfl")
        return SubstepPolicy(mode="auto_cfl", cfl=cfl)
    if mode == "fixed":
        count = _as_int(_get(d, "count", path), f"{path}.count")
        if count < 1:
            _fail(f"{path}.count", f"must be >= 1, got {count}")
        cfl = _as_number(d.get("cfl", 0.5), f"{path}.cfl")
        return SubstepPolicy(mode="fixed", cfl=cfl, count=count)
    _fail(f"{path}.mode", f"must be auto_cfl or fixed, got {mode!r}")


def parse_config(doc):
    """Validate a scene document (dict) into a SceneConfig."""
    _check_keys(
        doc,
        (
            "grid",
            "material",
            "gravity",
            "regions",
            "integrator",
            "macro_dt",
            "frame_dt",
            "substeps",
            "frames",
            "rng_seed",
        ),
        "",
    )
    spec = _parse_grid(_get(doc, "grid", ""), "grid")
    material = _parse_material(_get(doc, "material", ""), "material")
    gravity = _as_vec2(doc.get("gravity", [0.0, 0.0]), "gravity")

    regions_in = _get(doc, "regions", "")
    if not isinstance(regions_in, list) or not regions_in:
        _fail("regions", "expected a non-empty list")
    regions = [_parse_region(r, f"regions[{i}]", spec) for i, r in enumerate(regions_in)]

    integrator = _get(doc, "integrator", "")
    if integrator not in INTEGRATORS:
        _fail("integrator", f"must be one of {INTEGRATORS}, got {integrator!r}")

    if ("macro_dt" in doc) == ("frame_dt" in doc):
        _fail("", "exactly one of macro_dt or frame_dt is required")
    key = "macro_dt" if "macro_dt" in doc else "frame_dt"
    frame_dt = _as_number(doc[key], key)
    if not frame_dt > 0:
        _fail(key, f"must be positive, got {frame_dt}")

    substeps = _parse_substeps(doc.get("substeps", {"mode": "auto_cfl", "cfl": 0.5}), "substeps")
    frames = _as_int(_get(doc, "frames", ""), "frames")
    if frames < 1:
        _fail("frames", f"must be >= 1, got {frames}")
    rng_seed = _as_int(doc.get("rng_seed", 0), "rng_seed")
    if rng_seed < 0:
        _fail("rng_seed", f"must be >= 0, got {rng_seed}")

    return SceneConfig(
        spec=spec,
        material=material,
        gravity=gravity,
        regions=regions,
        integrator=integrator,
        frame_dt=frame_dt,
        substeps=substeps,
        frames=frames,
        rng_seed=rng_seed,
        raw=doc,
    )


def _mix64(z):
    """splitmix64 finalizer, vectorized over uint64 arrays."""
    z = z + _U64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
    return z ^ (z >> _U64(31))


def _counter_uniform(seed, cell_i, cell_j, slot, axis):
    """Uniform [0, 1) from (seed, cell, slot, axis); independent of order."""
    shape = np.shape(cell_i)
    h = _mix64(np.full(shape, seed & 0xFFFFFFFFFFFFFFFF, dtype=np.uint64))
    for part in (cell_i, cell_j, slot, axis):
        h = _mix64(h ^ np.asarray(part, dtype=np.uint64))
    return (h >> _U64(11)).astype(np.float64) * 2.0**-53


def sample_particles(region, spec, material, rng_seed):
    """Stratified jittered seeding of one region.

    Every cell overlapping the region receives ppc particles, each placed
    uniformly inside the cell by a counter-based hash of
    (seed, cell index, particle slot), so the particle set is independent
    of iteration order. m = rho dx^2 / ppc, V0 = dx^2 / ppc, F = I,
    C = affine or 0, v = region velocity (+ affine (x - center) if given).
    """
    i0, i1, j0, j1 = region_cells(region, spec)
    ci, cj = np.meshgrid(np.arange(i0, i1), np.arange(j0, j1), indexing="ij")
    ci = np.repeat(ci.ravel(), region.ppc)
    cj = np.repeat(cj.ravel(), region.ppc)
    slot = np.tile(np.arange(region.ppc), (i1 - i0) * (j1 - j0))
    n = ci.shape[0]

    x = np.empty((n, 2))
    for axis, cell in enumerate((ci, cj)):
        jitter = _counter_uniform(rng_seed, ci, cj, slot, np.full(n, axis))
        x[:, axis] = spec.origin[axis] + (cell + jitter) * spec.dx

    v = np.tile(region.velocity, (n, 1))
    C = np.zeros((n, 2, 2))
    if region.affine is not None:
        center = 0.5 * (region.lo + region.hi)
        v = v + (x - center) @ region.affine.T
        C[:] = region.affine
    cell_mass = material.rho * spec.dx**2 / region.ppc
    return Particles(
        x=x,
        v=v,
        m=np.full(n, cell_mass),
        V0=np.full(n, spec.dx**2 / region.ppc),
        F=np.tile(np.eye(2), (n, 1, 1)),
        C=C,
    )


def build_state(cfg):
    """Seed all regions and assemble the initial simulation state."""
    parts = [sample_particles(r, cfg.spec, cfg.material, cfg.rng_seed) for r in cfg.regions]
    particles = parts[0] if len(parts) == 1 else Particles.concatenate(parts)
    return SimState(
        particles=particles,
        spec=cfg.spec,
        mat=cfg.material,
        gravity=cfg.gravity.copy(),
        time=0.0,
    )


def load_scene(text):
    """Parse scene JSON text into (SceneConfig, initial SimState)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SceneValidationError("", f"invalid JSON: {e}") from e
    cfg = parse_config(doc)
    return cfg, build_state(cfg)


@dataclass
class Diagnostics:
    """Conserved-quantity and energy summary of a state."""

    mass: float
    momentum: tuple
    kinetic_energy: float
    elastic_energy: float
    gravitational_energy: float

    @property
    def total_energy(self):
        return self.kinetic_energy + self.elastic_energy + self.gravitational_energy

    def as_dict(self):
        return {
            "mass": self.mass,
            "momentum": list(self.momentum),
            "kinetic_energy": self.kinetic_energy,
            "elastic_energy": self.elastic_energy,
            "gravitational_energy": self.gravitational_energy,
            "total_energy": self.total_energy,
        }


def compute_diagnostics(state):
    p = state.particles
    psi = elastic_energy_density(p.F, state.mat)
    return Diagnostics(
        mass=float(p.m.sum()),
        momentum=tuple((p.m[:, None] * p.v).sum(axis=0)),
        kinetic_energy=0.5 * float(np.sum(p.m * np.sum(p.v * p.v, axis=-1))),
        elastic_energy=float(np.sum(p.V0 * psi)),
        gravitational_energy=-float(np.sum(p.m * (p.x @ state.gravity))),
    )
