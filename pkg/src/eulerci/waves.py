"""Plane-wave analysis and localized high-frequency perturbations.

A segment direction zbar = (0, m_bar, M_bar, 0) admits plane-wave solutions
of the linearized relaxed system exactly when the space-time flux matrix it
induces is singular; the kernel vector supplies the oscillation direction.
Localization multiplies a third antiderivative of the oscillation profile by
a C^3 space-time cutoff and takes exact third derivatives, so the perturbed
fields solve the linear equations identically and match the plateau
plane wave up to O(1/j).
"""
from __future__ import annotations

import dataclasses

import numpy as np

from .smoothing import PiecewisePoly

__all__ = [
    "WaveDirection",
    "OscillationProfile",
    "LocalizedWave",
    "TimeParallelKernel",
    "relaxed_flux_matrix",
    "spacetime_symbol",
    "wave_cone_test",
    "find_direction",
    "localize",
    "pack_waves",
    "concat_packs",
    "young_measure_check",
]


class TimeParallelKernel(RuntimeError):
    """The singular direction has (numerically) no spatial component."""


@dataclasses.dataclass(frozen=True)
class WaveDirection:
    """Unit space-time direction xi = (xi_x, xi_t) ordered (x1, ..., xd, t)."""

    xi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=float))

    @property
    def spatial(self):
        return self.xi[:-1]

    @property
    def temporal(self):
        return float(self.xi[-1])


def relaxed_flux_matrix(rho, m, M, Q):
    """Space-time flux [[m | M + Q Id], [rho | m^T]] whose row divergence is the system."""
    m = np.asarray(m, dtype=float)
    d = m.shape[0]
    U = np.zeros((d + 1, d + 1))
    U[:d, 0] = m
    U[:d, 1:] = np.asarray(M, dtype=float) + Q * np.eye(d)
    U[d, 0] = rho
    U[d, 1:] = m
    return U

def spacetime_symbol(rho, m, M, Q):
    """Symmetric symbol [[M + Q Id | m], [m^T | rho]] acting on xi = (xi_x, xi_t)."""
    m = np.asarray(m, dtype=float)
    d = m.shape[0]
    V = np.zeros((d + 1, d + 1))
    V[:d, :d] = np.asarray(M, dtype=float) + Q * np.eye(d)
    V[:d, d] = m
    V[d, :d] = m
    V[d, d] = rho
    return V


def wave_cone_test(zbar, tol=1e-9):
    """Whether the direction zbar = (rho, m, M, Q) supports plane waves: det U = 0."""
    rho, m, M, Q = zbar
    m = np.asarray(m, dtype=float)
    M = np.asarray(M, dtype=float)
    U = relaxed_flux_matrix(rho, m, M, Q)
    scale = np.sqrt(float(rho) ** 2 + m @ m + np.sum(M * M) + float(Q) ** 2)
    if scale == 0.0:
        raise ValueError("zero direction")
    return abs(np.linalg.det(U)) <= tol * scale ** (m.shape[0] + 1)


def find_direction(segment, tol=1e-9):
    """Kernel direction of the segment's space-time symbol, normalized and sign-fixed."""
    V = spacetime_symbol(0.0, segment.m_bar, segment.M_bar, 0.0)
    scale = np.linalg.norm(V)
    if scale == 0.0:
        raise ValueError("zero segment")
    _, s, vt = np.linalg.svd(V)
    xi = vt[-1]
    if s[-1] > tol * max(1.0, scale):
        raise ValueError(f"segment symbol is not singular (smallest singular value {s[-1]:.3e})")
    d = xi.shape[0] - 1
    if np.linalg.norm(xi[:d]) < 1e-8:
        raise TimeParallelKernel("kernel direction parallel to the time axis")
    for comp in xi:
        if abs(comp) > 1e-12:
            if comp < 0.0:
                xi = -xi
            break
    return WaveDirection(xi / np.linalg.norm(xi))


class OscillationProfile:
    """1-periodic C^3 square-wave profile h with antiderivatives H1, H2, H3.

    h is -1 on most of the first half period and +1 on most of the second,
    with C^3 transitions of half-width eps0 at 0 and 1/2; all antiderivatives
    are chosen mean-zero so they stay 1-periodic.
    """

    def __init__(self, eps0):
        if not 0.0 < eps0 <= 0.125:
            raise ValueError(f"transition half-width must lie in (0, 1/8], got {eps0}")
        self.eps0 = float(eps0)
        self._funcs = [_build_profile_poly(self.eps0)]
        for _ in range(3):
            self._funcs.append(self._funcs[-1].antiderivative(mean_zero=True))

    def h(self, x):
        return self._funcs[0](x)

    def H(self, x, k):
        """k-th mean-zero antiderivative of h evaluated 1-periodically (k = 1..3)."""
        return self._funcs[k](x)

    def mean(self):
        return self._funcs[0].mean()

    def mean_square(self):
        return self._funcs[0].mean_square()

    def tables(self):
        """(breaks, coefs) arrays for the kernels: coefs[k, piece, power]."""
        breaks = self._funcs[0].breaks
        deg = max(f.degree for f in self._funcs)
        coefs = np.zeros((4, breaks.size - 1, deg + 1))
        for k, f in enumerate(self._funcs):
            coefs[k, :, : f.degree + 1] = f.coefs
        return breaks, coefs


def _build_profile_poly(eps0):
    from .smoothing import _S7  # septic smoothstep coefficients (ascending)

    breaks = np.array([0.0, eps0, 0.5 - eps0, 0.5 + eps0, 1.0 - eps0, 1.0])
    deg = 7
    coefs = np.zeros((5, deg + 1))
    s7 = np.polynomial.Polynomial(_S7)

    def compose_affine(poly, a, b):
        # poly((u - a) / b) as ascending coefficients in the local coordinate u
        q = poly(np.polynomial.Polynomial([-a / b, 1.0 / b]))
        out = np.zeros(deg + 1)
        out[: q.coef.size] = q.coef
        return out

    # local coordinate u = x - break[i] on each piece
    # piece 0: x in [0, eps0]: h = 1 - 2 S7((x + eps0) / (2 eps0))
    coefs[0] = -2.0 * compose_affine(s7, -eps0, 2.0 * eps0)
    coefs[0, 0] += 1.0
    # piece 1: plateau -1
    coefs[1, 0] = -1.0
    # piece 2: x in [1/2 - eps0, 1/2 + eps0]: h = -1 + 2 S7(u / (2 eps0))
    coefs[2] = 2.0 * compose_affine(s7, 0.0, 2.0 * eps0)
    coefs[2, 0] += -1.0
    # piece 3: plateau +1
    coefs[3, 0] = 1.0
    # piece 4: x in [1 - eps0, 1]: h = 1 - 2 S7(u / (2 eps0))
    coefs[4] = -2.0 * compose_affine(s7, 0.0, 2.0 * eps0)
    coefs[4, 0] += 1.0
    return PiecewisePoly(breaks, coefs)


@dataclasses.dataclass
class LocalizedWave:
    """One localized oscillation: cutoff cell, direction, frequency, and amplitudes."""

    center: np.ndarray  # (x1, x2, t)
    h_cell: float
    xi: np.ndarray  # (xi1, xi2, xi_t), |xi| = 1
    j: int
    scale: float  # potential scale c
    m_bar: np.ndarray
    M_bar: np.ndarray
    profile: OscillationProfile

    def pack_row(self):
        return np.concatenate(
            [
                self.center,
                [self.h_cell, float(self.j)],
                self.xi,
                [self.scale, self.m_bar[0], self.m_bar[1], self.M_bar[0, 0], self.M_bar[0, 1]],
            ]
        )

    def field(self, points):
        """Exact perturbation fields (m1, m2, M11, M12) at (N, 3) points (x1, x2, t)."""
        from . import kernels

        pts = np.asarray(points, dtype=float)
        pack = _single_pack(self)
        return kernels.eval_waves_points(pts[:, 0], pts[:, 1], pts[:, 2], **pack)


def pack_waves(waves, gens=None):
    """Flatten a wave list into the array bundle the kernels consume."""
    W = len(waves)
    prof_index = {}
    tables = []
    prof_ids = np.empty(W, dtype=np.int64)
    for k, w in enumerate(waves):
        key = id(w.profile)
        if key not in prof_index:
            prof_index[key] = len(tables)
            tables.append(w.profile.tables())
        prof_ids[k] = prof_index[key]
    maxdeg = max(c.shape[-1] for _, c in tables)
    prof_breaks = np.stack([b for b, _ in tables])
    prof_coefs = np.zeros((len(tables), 4, prof_breaks.shape[1] - 1, maxdeg))
    for i, (_, c) in enumerate(tables):
        prof_coefs[i, :, :, : c.shape[-1]] = c
    return {
        "centers": np.array([w.center for w in waves], dtype=float).reshape(W, 3),
        "hs": np.array([w.h_cell for w in waves], dtype=float),
        "js": np.array([float(w.j) for w in waves]),
        "xis": np.array([w.xi for w in waves], dtype=float).reshape(W, 3),
        "scales": np.array([w.scale for w in waves], dtype=float),
        "mbars": np.array([w.m_bar for w in waves], dtype=float).reshape(W, 2),
        "Mbars": np.array([[w.M_bar[0, 0], w.M_bar[0, 1]] for w in waves], dtype=float).reshape(W, 2),
        "prof_ids": prof_ids,
        "prof_breaks": prof_breaks,
        "prof_coefs": prof_coefs,
        "gens": np.zeros(W, dtype=np.int64) if gens is None else np.asarray(gens, dtype=np.int64),
    }


def _single_pack(wave):
    return pack_waves([wave])


def concat_packs(a, b):
    """Concatenate two kernel bundles (profile tables deduplicated by content)."""
    if a is None:
        return b
    if b is None:
        return a
    da, db = a["prof_coefs"].shape[-1], b["prof_coefs"].shape[-1]
    deg = max(da, db)

    def padded(p, d):
        if d == deg:
            return p["prof_breaks"], p["prof_coefs"]
        c = np.zeros(p["prof_coefs"].shape[:-1] + (deg,))
        c[..., :d] = p["prof_coefs"]
        return p["prof_breaks"], c

    br_a, co_a = padded(a, da)
    br_b, co_b = padded(b, db)
    remap = np.empty(br_b.shape[0], dtype=np.int64)
    new_rows = []
    for i in range(br_b.shape[0]):
        hit = next((k for k in range(br_a.shape[0])
                    if np.array_equal(br_a[k], br_b[i]) and np.array_equal(co_a[k], co_b[i])),
                   -1)
        if hit >= 0:
            remap[i] = hit
        else:
            remap[i] = br_a.shape[0] + len(new_rows)
            new_rows.append(i)
    prof_breaks = np.concatenate([br_a, br_b[new_rows]]) if new_rows else br_a
    prof_coefs = np.concatenate([co_a, co_b[new_rows]]) if new_rows else co_a
    out = {}
    for key in ("centers", "hs", "js", "xis", "scales", "mbars", "Mbars", "gens"):
        out[key] = np.concatenate([a[key], b[key]])
    out["prof_ids"] = np.concatenate([a["prof_ids"], remap[b["prof_ids"]]])
    out["prof_breaks"] = prof_breaks
    out["prof_coefs"] = prof_coefs
    return out


def localize(segment, xi, j, cutoff, profile=None):
    """Build the localized wave for a segment on a cutoff cell at frequency j.

    The returned fields are exact derivatives of a compactly supported
    potential, hence solve the linear relaxed system identically, and equal
    chi(y) * (m_bar, M_bar) * h(j y.xi) on the cutoff plateau.
    """
    xi_vec = xi.xi if isinstance(xi, WaveDirection) else np.asarray(xi, dtype=float)
    if profile is None:
        profile = OscillationProfile(1.0 / (8.0 * j))
    if j < 1 or int(j) != j:
        raise ValueError("frequency j must be a positive integer")
    V = spacetime_symbol(0.0, segment.m_bar, segment.M_bar, 0.0)
    if np.linalg.norm(V @ xi_vec) > 1e-8 * max(1.0, np.linalg.norm(V)):
        raise ValueError("direction is not in the kernel of the segment symbol")
    xi_x = xi_vec[:2]
    nx2 = float(xi_x @ xi_x)
    if nx2 < 1e-16:
        raise TimeParallelKernel("cannot localize along a time-parallel direction")
    perp = np.array([-xi_x[1], xi_x[0]])
    c = float(segment.m_bar @ perp) / nx2**2
    return LocalizedWave(
        center=np.asarray(cutoff.center, dtype=float),
        h_cell=float(cutoff.h),
        xi=xi_vec,
        j=int(j),
        scale=c,
        m_bar=np.asarray(segment.m_bar, dtype=float),
        M_bar=np.asarray(segment.M_bar, dtype=float),
        profile=profile,
    )


def young_measure_check(profile, xi, f, phi, frequencies, n_x=None, t_samples=8, seed=0):
    """Deviation of phase averages from the two-point limit measure.

    For each frequency n, measures
      sup_t | mean_x phi(x) f(h(n (x, t).xi)) - mean_x phi(x) * int_0^1 f(h(s)) ds |
    over the unit square, against the limit law of h under the uniform phase.
    """
    xi_vec = xi.xi if isinstance(xi, WaveDirection) else np.asarray(xi, dtype=float)
    out = {}
    limit = None
    for n in sorted(frequencies):
        nx = n_x or max(64, 8 * int(np.ceil(n * max(abs(xi_vec[0]), abs(xi_vec[1]), 0.25))))
        xs = (np.arange(nx) + 0.5) / nx
        X1, X2 = np.meshgrid(xs, xs, indexing="ij")
        w = phi(X1, X2)
        wbar = float(np.mean(w))
        if limit is None:
            s = (np.arange(65536) + 0.5) / 65536
            limit = float(np.mean(f(profile.h(s))))
        dev = 0.0
        for t in (np.arange(t_samples) + 0.5) / t_samples:
            theta = n * (xi_vec[0] * X1 + xi_vec[1] * X2 + xi_vec[2] * t)
            emp = float(np.mean(w * f(profile.h(theta))))
            dev = max(dev, abs(emp - wbar * limit))
        out[int(n)] = dev
    return out
