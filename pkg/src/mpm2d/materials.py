"""Fixed corotated hyperelasticity: 2x2 SVD, first Piola-Kirchhoff stress,
and elastic energy density. All operations accept a single 2x2 matrix or a
batch shaped (..., 2, 2)."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDeformationError

DET_F_MIN = 1e-10


@dataclass(frozen=True)
class Material:
    """Elastic constants. E: Young's modulus (Pa), nu: Poisson ratio,
    rho: density (kg/m^2). Lame parameters are derived."""

    E: float
    nu: float
    rho: float
    mu: float = field(init=False)
    lambda_lame: float = field(init=False)

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError(f"E must be positive, got {self.E}")
        if not 0.0 <= self.nu < 0.5:
            raise ValueError(f"nu must be in [0, 0.5), got {self.nu}")
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        object.__setattr__(self, "mu", self.E / (2.0 * (1.0 + self.nu)))
        object.__setattr__(
            self,
            "lambda_lame",
            self.E * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu)),
        )

    @classmethod
    def from_lame(cls, mu, lam, rho):
        """Construct from Lame parameters instead of (E, nu)."""
        nu = lam / (2.0 * (lam + mu))
        return cls(E=2.0 * mu * (1.0 + nu), nu=nu, rho=rho)

    @property
    def sound_speed(self):
        """P-wave speed sqrt((lambda + 2 mu) / rho)."""
        return float(np.sqrt((self.lambda_lame + 2.0 * self.mu) / self.rho))


@dataclass
class Svd2:
    """SVD of 2x2 matrices with rotation-only U, V.

    det(U) = det(V) = +1; any reflection sign is folded into sigma, so
    sigma[..., 1] may be negative for inverted inputs. sigma is descending.
    """

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    def reconstruct(self):
        return self.U @ (self.sigma[..., :, None] * _transpose(self.V))

    def rotation(self):
        """The closest rotation R = U V^T."""
        return self.U @ _transpose(self.V)


def _transpose(M):
    return np.swapaxes(M, -1, -2)


def _rot(angle):
    c, s = np.cos(angle), np.sin(angle)
    R = np.empty(np.shape(angle) + (2, 2))
    R[..., 0, 0] = c
    R[..., 0, 1] = -s
    R[..., 1, 0] = s
    R[..., 1, 1] = c
    return R


def det2(M):
    """Determinant of (..., 2, 2)."""
    return M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]


def cofactor2(M):
    """Cofactor matrix, equal to det(M) * M^{-T} for 2x2."""
    out = np.empty_like(M)
    out[..., 0, 0] = M[..., 1, 1]
    out[..., 0, 1] = -M[..., 1, 0]
    out[..., 1, 0] = -M[..., 0, 1]
    out[..., 1, 1] = M[..., 0, 0]
    return out


def inv2(M):
    """Inverse of (..., 2, 2) via the adjugate."""
    d = det2(M)
    out = np.empty_like(M)
    out[..., 0, 0] = M[..., 1, 1]
    out[..., 0, 1] = -M[..., 0, 1]
    out[..., 1, 0] = -M[..., 1, 0]
    out[..., 1, 1] = M[..., 0, 0]
    return out / d[..., None, None]


def svd2x2(F):
    """Closed-form SVD of 2x2 matrices (batched).

    Decomposes F into rotations U, V and singular values via the
    symmetric/antisymmetric split: with E = (F00+F11)/2, H = (F10-F01)/2,
    P = (F00-F11)/2, G = (F10+F01)/2 the values are hypot(E,H) +- hypot(P,G)
    and the rotation angles come from the two atan2 pairs.
    """
    F = np.asarray(F, dtype=np.float64)
    if not np.all(np.isfinite(F)):
        raise ValueError("svd2x2 requires finite entries")
    E = 0.5 * (F[..., 0, 0] + F[..., 1, 1])
    H = 0.5 * (F[..., 1, 0] - F[..., 0, 1])
    P = 0.5 * (F[..., 0, 0] - F[..., 1, 1])
    G = 0.5 * (F[..., 1, 0] + F[..., 0, 1])
    q = np.hypot(E, H)
    r = np.hypot(P, G)
    a1 = np.arctan2(G, P)
    a2 = np.arctan2(H, E)
    u_angle = 0.5 * (a1 + a2)
    v_angle = 0.5 * (a1 - a2)
    sigma = np.stack([q + r, q - r], axis=-1)
    return Svd2(U=_rot(u_angle), sigma=sigma, V=_rot(v_angle))


def _check_det(J):
    if np.any(J <= DET_F_MIN):
        idx = int(np.argmax(np.atleast_1d(J <= DET_F_MIN)))
        raise DegenerateDeformationError(idx, np.ravel(J)[idx])


def pk1_fixed_corotated(F, mat):
    """First Piola-Kirchhoff stress P = 2 mu (F - R) + lambda (J - 1) J F^{-T}."""
    F = np.asarray(F, dtype=np.float64)
    J = det2(F)
    _check_det(J)
    R = svd2x2(F).rotation()
    # (J - 1) J F^{-T} = (J - 1) cof(F), no division needed
    return 2.0 * mat.mu * (F - R) + mat.lambda_lame * (J - 1.0)[..., None, None] * cofactor2(F)


def elastic_energy_density(F, mat):
    """Energy density psi = mu sum (sigma_i - 1)^2 + lambda/2 (J - 1)^2 (Pa)."""
    F = np.asarray(F, dtype=np.float64)
    J = det2(F)
    _check_det(J)
    sigma = svd2x2(F).sigma
    return mat.mu * np.sum((sigma - 1.0) ** 2, axis=-1) + 0.5 * mat.lambda_lame * (J - 1.0) ** 2
