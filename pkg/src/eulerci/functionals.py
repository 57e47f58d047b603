"""Deficiency functional, strict-subsolution margins, and weak-form residuals.

Field objects are duck typed.  Anything with the following surface works:

    T, epsilon, omega0, period                     scenario geometry
    sample_block(x1, x2, t, need_M=True)           -> (rho, m1, m2, M11, M12, Q)
                                                   2-D arrays on the tensor grid
                                                   (M22 = -M11 throughout)
    sample_points(t, x1, x2)                       -> same tuple, flat arrays
    max_frequencies()                              -> (f_space, f_time), cycles/unit
    boundary_times()                               -> 1-D array of cell edge times

With need_M=False a block may return the base M (waves omitted); callers that
set it promise not to read the M channels.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .smoothing import bump1d
from .state import e_kin_components

__all__ = [
    "RHO_FLOOR",
    "POINTS_PER_PERIOD",
    "BATTERY_VERSION",
    "QuadratureUnderresolved",
    "DensityTooSmall",
    "QuadratureSpec",
    "SubsolutionReport",
    "TestFunction",
    "ResidualEntry",
    "midpoints",
    "merge_time_samples",
    "default_time_samples",
    "deficiency_integrand",
    "I_functional",
    "solution_deficit",
    "subsolution_check",
    "weak_residual",
    "default_battery",
]

RHO_FLOOR = 1e-6
POINTS_PER_PERIOD = 8
BATTERY_VERSION = "v1"

_BLOCK_FLOATS = 1 << 19  # row-block streaming budget (~4 MiB of float64 per field)
_KIN_MARGIN_TOL = 1e-10  # eigenvalue roundoff allowance for the kinetic margin


class QuadratureUnderresolved(RuntimeError):
    """Requested quadrature cannot resolve the finest active oscillation."""


class DensityTooSmall(RuntimeError):
    """A sampled density fell below the hard floor RHO_FLOOR."""


def _round_up(v, k=64):
    return int(k * math.ceil(float(v) / k - 1e-12))


def midpoints(lo, hi, n):
    """Composite-midpoint nodes of [lo, hi] with n cells."""
    return lo + (np.arange(int(n)) + 0.5) * ((hi - lo) / int(n))


@dataclass(frozen=True)
class QuadratureSpec:
    """Composite-midpoint resolution; n_x=None sizes the spatial grid automatically."""

    n_t: int = 64
    n_x: int | None = None
    threads: int = 1

    def spatial_counts(self, f_space, widths):
        # >= POINTS_PER_PERIOD samples per finest active period along each axis
        counts = []
        for width in widths:
            need = POINTS_PER_PERIOD * float(f_space) * float(width)
            if self.n_x is not None:
                if self.n_x < need - 1e-9:
                    raise QuadratureUnderresolved(
                        f"n_x={self.n_x} below {POINTS_PER_PERIOD} samples per finest "
                        f"period (need >= {int(math.ceil(need))})"
                    )
                counts.append(int(self.n_x))
            else:
                counts.append(_round_up(max(128.0, need)))
        return tuple(counts)


def merge_time_samples(a, b, tol=1e-12):
    """Sorted union of two sample sets, collapsing near-duplicates."""
    t = np.sort(np.concatenate([np.atleast_1d(np.asarray(a, float)),
                                np.atleast_1d(np.asarray(b, float))]))
    if t.size == 0:
        return t
    keep = np.ones(t.size, dtype=bool)
    keep[1:] = np.diff(t) > tol
    return t[keep]


def default_time_samples(fields, n_t=64, epsilon=None):
    """n_t uniform times on [eps, T-eps] plus every cell boundary time inside it."""
    eps = float(fields.epsilon if epsilon is None else epsilon)
    hi = float(fields.T) - eps
    base = np.linspace(eps, hi, int(n_t))
    edges = np.asarray(fields.boundary_times(), dtype=float)
    if edges.size:
        edges = edges[(edges >= eps - 1e-12) & (edges <= hi + 1e-12)]
    return merge_time_samples(base, edges)


def deficiency_integrand(law, rho, m1, m2, Q):
    """p(rho) + |m|^2/(d rho) - Q with d = 2; nonpositive iff below generalized pressure."""
    return law.p(rho) + (m1 * m1 + m2 * m2) / (2.0 * rho) - Q


def _check_rho(rho, t):
    if np.min(rho) < RHO_FLOOR:
        raise DensityTooSmall(f"rho={float(np.min(rho)):.3e} < {RHO_FLOOR:g} at t={t:.6f}")


def _sweep(fn, items, threads):
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=int(threads)) as ex:
        return list(ex.map(fn, items))


def _slice_integral(fields, law, t, x1, x2, absolute):
    """Row-block streamed midpoint sum of the deficiency integrand at one time."""
    n2 = x2.size
    rows = max(1, _BLOCK_FLOATS // max(1, n2))
    parts = []
    for a in range(0, x1.size, rows):
        blk = x1[a:a + rows]
        rho, m1, m2, _, _, Q = fields.sample_block(blk, x2, t, need_M=False)
        _check_rho(rho, t)
        g = deficiency_integrand(law, rho, m1, m2, Q)
        if absolute:
            g = np.abs(g)
        parts.append(float(np.sum(np.broadcast_to(g, (blk.size, n2)))))
    return math.fsum(parts)


def _spatial_grid(fields, quad, omega0=None):
    box = fields.omega0 if omega0 is None else omega0
    (a1, b1), (a2, b2) = box
    f_space, _ = fields.max_frequencies()
    n1, n2 = quad.spatial_counts(f_space, (b1 - a1, b2 - a2))
    x1 = midpoints(a1, b1, n1)
    x2 = midpoints(a2, b2, n2)
    return x1, x2, ((b1 - a1) / n1) * ((b2 - a2) / n2)


def I_functional(fields, law, epsilon=None, omega0=None, quad=None,
                 times=None, return_profile=False):
    """Deficiency functional: inf over sampled times of the spatial deficiency integral.

    Nonpositive on validated subsolutions; zero exactly on solutions of the
    constitutive relation.  The time sample defaults to n_t uniform times plus
    all cell boundary times.
    """
    quad = quad or QuadratureSpec()
    x1, x2, area = _spatial_grid(fields, quad, omega0)
    if times is None:
        times = default_time_samples(fields, quad.n_t, epsilon)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    vals = _sweep(lambda t: area * _slice_integral(fields, law, t, x1, x2, False),
                  times, quad.threads)
    vals = np.asarray(vals)
    if return_profile:
        return float(vals.min()), times, vals
    return float(vals.min())


def solution_deficit(fields, law, epsilon=None, omega0=None, quad=None):
    """Space-time integral of |Q - p(rho) - |m|^2/(d rho)|; zero exactly on solutions."""
    quad = quad or QuadratureSpec()
    eps = float(fields.epsilon if epsilon is None else epsilon)
    x1, x2, area = _spatial_grid(fields, quad, omega0)
    times = midpoints(eps, fields.T - eps, quad.n_t)
    vals = _sweep(lambda t: area * _slice_integral(fields, law, t, x1, x2, True),
                  times, quad.threads)
    dt = (fields.T - 2.0 * eps) / quad.n_t
    return dt * math.fsum(vals)


@dataclass
class SubsolutionReport:
    """Strictness margins, optional residual norms, and the membership verdict."""

    delta: float
    margin_hull: float      # min of Q - p(rho) - (2/d) e_kin
    margin_kinetic: float   # min of (2/d) e_kin - |m|^2/(d rho)
    n_samples: int
    residuals: list | None
    residual_ok: bool | None
    verdict: bool


def _margins_block(fields, law, t, x1, x2):
    n2 = x2.size
    rows = max(1, _BLOCK_FLOATS // max(1, n2))
    m_hull = math.inf
    m_kin = math.inf
    for a in range(0, x1.size, rows):
        blk = x1[a:a + rows]
        rho, m1, m2, M11, M12, Q = fields.sample_block(blk, x2, t, need_M=True)
        _check_rho(rho, t)
        ek = e_kin_components(rho, m1, m2, M11, M12)  # equals (2/d) e_kin for d = 2
        m_hull = min(m_hull, float(np.min(Q - law.p(rho) - ek)))
        m_kin = min(m_kin, float(np.min(ek - (m1 * m1 + m2 * m2) / (2.0 * rho))))
    return m_hull, m_kin


def subsolution_check(fields, law, delta, samples=None, battery=None, quad=None):
    """Strict relaxed-membership check at margin delta over a sample set.

    samples may be a (t, x1, x2) triple of flat arrays; by default a modest
    space-time lattice is swept.  Passing a battery also runs weak_residual.
    """
    quad = quad or QuadratureSpec(n_t=48)
    if samples is not None:
        t, x1, x2 = (np.atleast_1d(np.asarray(s, dtype=float)) for s in samples)
        rho, m1, m2, M11, M12, Q = fields.sample_points(t, x1, x2)
        _check_rho(rho, t[int(np.argmin(rho))] if t.size else 0.0)
        ek = e_kin_components(rho, m1, m2, M11, M12)
        margin_hull = float(np.min(Q - law.p(rho) - ek))
        margin_kin = float(np.min(ek - (m1 * m1 + m2 * m2) / (2.0 * rho)))
        n_samples = int(t.size)
    else:
        times = default_time_samples(fields, quad.n_t)
        (a1, b1), (a2, b2) = fields.omega0
        x1 = midpoints(a1, b1, 64)
        x2 = midpoints(a2, b2, 64)
        pairs = _sweep(lambda t: _margins_block(fields, law, t, x1, x2),
                       times, quad.threads)
        margin_hull = min(p[0] for p in pairs)
        margin_kin = min(p[1] for p in pairs)
        n_samples = int(times.size) * x1.size * x2.size
    residuals = None
    residual_ok = None
    if battery is not None:
        residuals = weak_residual(fields, battery, quad)
        residual_ok = all(e.passed for e in residuals)
    verdict = (margin_hull >= delta and margin_kin >= -_KIN_MARGIN_TOL
               and residual_ok is not False)
    return SubsolutionReport(float(delta), margin_hull, margin_kin, n_samples,
                             residuals, residual_ok, verdict)


@dataclass(frozen=True)
class TestFunction:
    """Tensor-product test function psi = e_row * w(t) g1(x1) g2(x2).

    Each factor is a C^3 bump, optionally modulated by cos(2 pi k (x - c))
    (even about the center, so constant fields integrate to zero exactly on
    the symmetric midpoint lattice).
    """

    name: str
    row: int  # 0 mass, 1 momentum-1, 2 momentum-2
    t_center: float
    t_half: float
    x1_center: float
    x1_half: float
    x2_center: float
    x2_half: float
    k1: int = 0
    k2: int = 0
    plateau_frac: float = 0.5

    def factor(self, x, axis):
        """Values and first derivatives of the axis factor on points x."""
        c, half, k = {
            "t": (self.t_center, self.t_half, 0),
            "x1": (self.x1_center, self.x1_half, self.k1),
            "x2": (self.x2_center, self.x2_half, self.k2),
        }[axis]
        u = np.asarray(x, dtype=float) - c
        B = bump1d(u, self.plateau_frac * half, half, max_deriv=1)
        g, gp = B[..., 0], B[..., 1]
        if k:
            w = 2.0 * np.pi * k
            cos, sin = np.cos(w * u), np.sin(w * u)
            return g * cos, gp * cos - g * w * sin
        return g, gp


@dataclass(frozen=True)
class ResidualEntry:
    """One weak-form residual |∫∫ fields : grad psi| with its quadrature tolerance."""

    name: str
    row: int
    value: float
    coarse: float
    tol: float
    passed: bool
    n_t: int
    n_x: tuple


def default_battery():
    """Fixed residual battery v1: 21 compact tensor tests, rows cycling."""
    out = []
    th, xh = 0.02, 0.02
    spots = [
        (0.5, 0.5, 0.5), (0.5, 0.5, 0.5), (0.5, 0.5, 0.5),
        (0.25, 0.25, 0.5), (0.25, 0.5, 0.25), (0.25, 0.25, 0.25),
        (0.75, 0.75, 0.5), (0.75, 0.5, 0.75), (0.75, 0.75, 0.75),
        (0.375, 0.625, 0.375), (0.625, 0.375, 0.625), (0.375, 0.375, 0.625),
    ]
    rows = ("mass", "mom1", "mom2")
    for i, (tc, c1, c2) in enumerate(spots):
        out.append(TestFunction(f"{BATTERY_VERSION}/{rows[i % 3]}_{i:02d}", i % 3,
                                tc, th, c1, xh, c2, xh))
    mods = [
        (0.5, 0.5, 0.5, 1, 0), (0.5, 0.5, 0.5, 0, 1), (0.5, 0.5, 0.5, 1, 1),
        (0.4375, 0.5625, 0.4375, 2, 0), (0.5625, 0.4375, 0.5625, 0, 2),
        (0.4375, 0.4375, 0.5625, 2, 1), (0.625, 0.5, 0.375, 1, 2),
        (0.375, 0.625, 0.5, 2, 2), (0.5625, 0.5, 0.5, 1, 0),
    ]
    for i, (tc, c1, c2, k1, k2) in enumerate(mods):
        j = len(spots) + i
        out.append(TestFunction(f"{BATTERY_VERSION}/{rows[j % 3]}_trig_{j:02d}",
                                j % 3, tc, th, c1, xh, c2, xh, k1=k1, k2=k2))
    return tuple(out)


def _residual_once(fields, tf, n_t, n1, n2, threads):
    """Midpoint quadrature of the weak-form pairing over the test support box."""
    t = midpoints(tf.t_center - tf.t_half, tf.t_center + tf.t_half, n_t)
    x1 = midpoints(tf.x1_center - tf.x1_half, tf.x1_center + tf.x1_half, n1)
    x2 = midpoints(tf.x2_center - tf.x2_half, tf.x2_center + tf.x2_half, n2)
    w, wp = tf.factor(t, "t")
    g1, g1p = tf.factor(x1, "x1")
    g2, g2p = tf.factor(x2, "x2")
    G = g1[:, None] * g2[None, :]
    G1 = g1p[:, None] * g2[None, :]
    G2 = g1[:, None] * g2p[None, :]
    need_M = tf.row != 0

    def one(i):
        rho, m1, m2, M11, M12, Q = fields.sample_block(x1, x2, t[i], need_M=need_M)
        if tf.row == 0:
            integ = rho * (wp[i] * G) + m1 * (w[i] * G1) + m2 * (w[i] * G2)
        elif tf.row == 1:
            integ = m1 * (wp[i] * G) + (M11 + Q) * (w[i] * G1) + M12 * (w[i] * G2)
        else:
            integ = m2 * (wp[i] * G) + M12 * (w[i] * G1) + (Q - M11) * (w[i] * G2)
        integ = np.broadcast_to(integ, (x1.size, x2.size))
        return float(np.sum(integ)), float(np.max(np.abs(integ)))

    pairs = _sweep(one, range(t.size), threads)
    vol = (2.0 * tf.t_half / n_t) * (2.0 * tf.x1_half / n1) * (2.0 * tf.x2_half / n2)
    total = vol * math.fsum(p[0] for p in pairs)
    peak = max(p[1] for p in pairs)
    support = 8.0 * tf.t_half * tf.x1_half * tf.x2_half
    return total, peak * support


def weak_residual(fields, battery=None, quad=None):
    """Residual of the space-time divergence form against each battery entry.

    Reports the fine-grid value together with a Richardson tolerance
    (4/3)|fine - coarse| + floor; entries pass when |value| <= tol, which holds
    exactly when the residual is quadrature error only.
    """
    battery = default_battery() if battery is None else battery
    threads = quad.threads if quad is not None else 1
    f_space, f_time = fields.max_frequencies()
    out = []
    for tf in battery:
        n_t = _round_up(max(64.0, POINTS_PER_PERIOD * f_time * 2.0 * tf.t_half))
        n1 = _round_up(max(64.0, POINTS_PER_PERIOD * f_space * 2.0 * tf.x1_half))
        n2 = _round_up(max(64.0, POINTS_PER_PERIOD * f_space * 2.0 * tf.x2_half))
        # a 4x refinement escapes the correlated pre-asymptotic plateau that a
        # 2x pair can share when the profile transitions are far below the grid
        coarse, _ = _residual_once(fields, tf, n_t, n1, n2, threads)
        fine, scale = _residual_once(fields, tf, 4 * n_t, 4 * n1, 4 * n2, threads)
        tol = 0.5 * abs(fine - coarse) + 1e-10 * (1.0 + scale)
        out.append(ResidualEntry(tf.name, tf.row, fine, coarse, tol,
                                 abs(fine) <= tol, 4 * n_t, (4 * n1, 4 * n2)))
    return out
