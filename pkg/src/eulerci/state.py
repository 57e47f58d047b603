"""State-space algebra for the relaxed isentropic Euler system.

A relaxed state is z = (rho, m, M, Q): density, momentum, a symmetric
trace-free matrix standing in for the traceless momentum flux, and a
generalized pressure.  The constitutive set K pins M and Q to the values
induced by an actual momentum field; its convex hull (at fixed rho) is the
sublevel set {F <= 0} of the hull functional implemented here.
"""
from __future__ import annotations

import dataclasses

import numpy as np

__all__ = [
    "PressureLaw",
    "EulerState",
    "state_space_dim",
    "circ_product",
    "lambda_max_sym",
    "e_kin",
    "e_kin_components",
    "hull_functional",
    "in_K",
    "in_hull",
    "K_point",
]

#: relative tolerance used when validating symmetry / trace-freeness of M
SYM_TOL = 1e-12


def state_space_dim(d):
    """Dimension of the (m, M) slice variables: d momentum + d(d+1)/2 - 1 matrix entries + Q."""
    return (d + 2) * (d + 1) // 2


@dataclasses.dataclass(frozen=True)
class PressureLaw:
    """Polytropic pressure p(rho) = rho**gamma with gamma > 1."""

    gamma: float = 2.0

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise ValueError(f"gamma must exceed 1, got {self.gamma}")

    def p(self, rho):
        return np.asarray(rho, dtype=float) ** self.gamma

    def dp(self, rho):
        return self.gamma * np.asarray(rho, dtype=float) ** (self.gamma - 1.0)

    def potential(self, rho):
        """Pressure potential rho * integral_0^rho p(r)/r^2 dr = rho**gamma/(gamma-1)."""
        return np.asarray(rho, dtype=float) ** self.gamma / (self.gamma - 1.0)


def circ_product(m, d=None):
    """Trace-free tensor square m (x) m - (|m|^2/d) Id of a momentum vector."""
    m = np.asarray(m, dtype=float)
    if d is None:
        d = m.shape[-1]
    if m.shape[-1] != d or d < 2:
        raise ValueError(f"momentum must have dimension d >= 2, got shape {m.shape} with d={d}")
    outer = m[..., :, None] * m[..., None, :]
    tr = np.einsum("...ii->...", outer) / d
    out = outer.copy()
    idx = np.arange(d)
    out[..., idx, idx] -= tr[..., None]
    return out


def lambda_max_sym(S):
    """Largest eigenvalue of a symmetric matrix (closed form for 2x2, eigvalsh otherwise)."""
    S = np.asarray(S, dtype=float)
    if S.shape[-1] == 2:
        a = S[..., 0, 0]
        b = S[..., 0, 1]
        c = S[..., 1, 1]
        return 0.5 * (a + c) + np.hypot(0.5 * (a - c), b)
    return np.linalg.eigvalsh(S)[..., -1]


def _check_matrix(M, d, norm=None):
    if M.shape[-2:] != (d, d):
        raise ValueError(f"M must be {d}x{d}, got {M.shape}")
    if norm is None:
        norm = np.max(np.abs(M))
    tol = SYM_TOL * (1.0 + norm)
    if np.max(np.abs(M - np.swapaxes(M, -1, -2))) > tol:
        raise ValueError("M must be symmetric")
    if np.max(np.abs(np.einsum("...ii->...", M))) > tol:
        raise ValueError("M must be trace-free")


def e_kin(rho, m, M, *, validate=True):
    """Relaxed kinetic energy density (d/2) * lambda_max(m (x) m / rho - M).

    Convex in (rho, m, M); coincides with |m|^2/(2 rho) exactly on K.
    """
    rho = np.asarray(rho, dtype=float)
    m = np.asarray(m, dtype=float)
    M = np.asarray(M, dtype=float)
    d = m.shape[-1]
    if validate:
        if np.any(rho <= 0.0):
            raise ValueError("rho must be positive")
        _check_matrix(M, d)
    A = m[..., :, None] * m[..., None, :] / rho[..., None, None] - M
    return 0.5 * d * lambda_max_sym(A)


def e_kin_components(rho, m1, m2, M11, M12):
    """Planar relaxed kinetic energy from component arrays (no validation; hot path)."""
    a = m1 * m1 / rho - M11
    b = m1 * m2 / rho - M12
    c = m2 * m2 / rho + M11
    return 0.5 * (a + c) + np.hypot(0.5 * (a - c), b)


@dataclasses.dataclass
class EulerState:
    """One relaxed state z = (rho, m, M, Q) in d space dimensions."""

    rho: float
    m: np.ndarray
    M: np.ndarray
    Q: float

    def __post_init__(self):
        self.m = np.atleast_1d(np.asarray(self.m, dtype=float))
        self.M = np.asarray(self.M, dtype=float)
        self.rho = float(self.rho)
        self.Q = float(self.Q)
        if self.m.ndim != 1 or self.M.shape != (self.d, self.d):
            raise ValueError(f"inconsistent shapes: m {self.m.shape}, M {self.M.shape}")

    @property
    def d(self):
        return self.m.shape[0]

    def validate(self):
        if self.rho <= 0.0:
            raise ValueError("rho must be positive")
        _check_matrix(self.M, self.d)
        return self

    def e_kin(self):
        return float(e_kin(self.rho, self.m, self.M, validate=False))

    def copy(self):
        return EulerState(self.rho, self.m.copy(), self.M.copy(), self.Q)


def hull_functional(z, law):
    """F(z) = p(rho) + (2/d) e_kin(z) - Q; the hull of K is {F <= 0, rho > 0}."""
    ek = e_kin(z.rho, z.m, z.M, validate=False)
    return float(law.p(z.rho) + (2.0 / z.d) * ek - z.Q)


def in_hull(z, law, tol=1e-9):
    """Membership in the convex hull (per fixed rho slice): F(z) <= tol and rho > 0."""
    return z.rho > 0.0 and hull_functional(z, law) <= tol


def in_K(z, law, tol=1e-9):
    """Membership in the constitutive set: M = m (x) m / rho and Q = p + |m|^2/(d rho)."""
    if z.rho <= 0.0:
        return False
    scale = 1.0 + np.max(np.abs(z.M)) + np.dot(z.m, z.m) / z.rho
    if np.max(np.abs(z.M - circ_product(z.m) / z.rho)) > tol * scale:
        return False
    q_target = float(law.p(z.rho)) + np.dot(z.m, z.m) / (z.d * z.rho)
    return abs(z.Q - q_target) <= tol * (1.0 + abs(q_target))


def K_point(rho, m, law):
    """The unique state in K with the given density and momentum."""
    m = np.atleast_1d(np.asarray(m, dtype=float))
    d = m.shape[0]
    if rho <= 0.0:
        raise ValueError("rho must be positive")
    M = circ_product(m) / rho
    Q = float(law.p(rho)) + float(np.dot(m, m)) / (d * rho)
    return EulerState(rho, m, M, Q)
