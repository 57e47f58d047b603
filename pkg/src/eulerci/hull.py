"""Convex geometry of the momentum slice hull and oscillation segments.

At fixed density rho and radius r, states (m, M) inside the hull slice are
finite convex combinations of extreme points (r e, r e (x) r e / rho) with
|e| = 1.  This module finds such decompositions (planar case), removes
antipodal atom pairs, and turns a decomposition into an admissible
oscillation segment with a quantified momentum amplitude.
"""
from __future__ import annotations

import dataclasses

import numpy as np
from scipy.optimize import linprog

from .state import EulerState, e_kin_components, state_space_dim

__all__ = [
    "SliceParams",
    "ConvexDecomposition",
    "OscillationSegment",
    "InfeasibleDecomposition",
    "PerturbationFailed",
    "DegenerateSegment",
    "slice_radius",
    "caratheodory_decompose",
    "caratheodory_reduce",
    "perturb_antipodal",
    "build_segment",
    "build_segments_batch",
]


class InfeasibleDecomposition(ValueError):
    """The state admits no interior decomposition at the requested radius."""


class PerturbationFailed(RuntimeError):
    """Antipodal atom pairs could not be removed within the iteration budget."""


class DegenerateSegment(RuntimeError):
    """No oscillation segment with positive amplitude exists for this state."""


#: feasibility margins for scanned three-atom decompositions
_W_MIN = 0.02
_SEP_MIN = 0.05
_ANTI_MIN = 0.05


@dataclasses.dataclass(frozen=True)
class SliceParams:
    """Fixed-density slice data: density, atom radius, dimension, interior margin."""

    rho: float
    r: float
    d: int = 2
    delta: float = 1e-3

    def __post_init__(self):
        if self.rho <= 0.0 or self.r <= 0.0:
            raise ValueError("rho and r must be positive")
        if self.d != 2:
            raise NotImplementedError("decompositions are implemented for d = 2")


@dataclasses.dataclass
class ConvexDecomposition:
    """Convex combination (m, M) = sum_i w_i (m_i, m_i (x) m_i / rho), |m_i| = r."""

    weights: np.ndarray
    momenta: np.ndarray
    params: SliceParams

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.momenta = np.asarray(self.momenta, dtype=float)

    @property
    def size(self):
        return self.weights.size

    def matrices(self):
        rho = self.params.rho
        outer = self.momenta[:, :, None] * self.momenta[:, None, :]
        tr = np.einsum("kii->k", outer) / self.params.d
        outer[:, np.arange(self.params.d), np.arange(self.params.d)] -= tr[:, None]
        return outer / rho

    def reconstruct(self):
        m = np.einsum("k,ki->i", self.weights, self.momenta)
        M = np.einsum("k,kij->ij", self.weights, self.matrices())
        return m, M

    def validate(self, m, M, tol=1e-9):
        scale = 1.0 + self.params.r**2 / self.params.rho
        mm, MM = self.reconstruct()
        if abs(np.sum(self.weights) - 1.0) > tol:
            raise AssertionError("weights do not sum to one")
        if np.any(self.weights < -tol):
            raise AssertionError("negative weight")
        err = np.max(np.abs(mm - m)) / (1.0 + self.params.r) + np.max(np.abs(MM - M)) / scale
        if err > tol:
            raise AssertionError(f"decomposition does not reconstruct the state (err={err:.3e})")
        radii = np.linalg.norm(self.momenta, axis=1)
        if np.max(np.abs(radii - self.params.r)) > tol * self.params.r:
            raise AssertionError("atom off the slice sphere")
        return True

    def antipodal_pairs(self, eta):
        out = []
        unit = self.momenta / self.params.r
        for i in range(self.size):
            for j in range(i + 1, self.size):
                if np.linalg.norm(unit[i] + unit[j]) < eta:
                    out.append((i, j))
        return out


@dataclasses.dataclass
class OscillationSegment:
    """Admissible momentum-space line segment [z - zbar, z + zbar] through a state z."""

    m_bar: np.ndarray
    M_bar: np.ndarray
    atom_a: np.ndarray
    atom_b: np.ndarray
    rho: float
    r: float
    amplitude_bound: float
    endpoint_margins: tuple
    decomposition: ConvexDecomposition | None = None

    @property
    def amplitude(self):
        return float(np.linalg.norm(self.m_bar))


def slice_radius(z, law):
    """Radius r with Q = p(rho) + r^2/(d rho): the momentum budget the hull slice allows."""
    gap = z.Q - float(law.p(z.rho))
    if gap <= 0.0:
        raise InfeasibleDecomposition(
            f"generalized pressure {z.Q} does not exceed p(rho) = {float(law.p(z.rho)):.6g}; "
            "the state lies outside every slice hull"
        )
    return float(np.sqrt(z.d * z.rho * gap))


def _moments(params, m, M):
    r, rho = params.r, params.rho
    c1 = complex(m[0], m[1]) / r
    c2 = 2.0 * rho * complex(M[0, 0], M[0, 1]) / r**2
    return c1, c2


def _family_scan(c1, c2, n_w=24, w_min=_W_MIN, sep=_SEP_MIN, anti=_ANTI_MIN):
    """Three-atom circle quadratures matching the moments (1, c1, c2).

    Atoms are the roots of the para-orthogonal polynomial
    z phi_2(z) - conj(w) phi_2^*(z) for a scanned unimodular parameter w,
    weights the Christoffel numbers; every candidate reproduces the moments
    exactly.  Returns (found (C,), atoms (C, 3) complex, weights (C, 3)) with
    the max-amplitude admissible candidate per state.

    c1, c2: (C,) complex arrays of normalized first/second trigonometric
    moments (|assumed| strictly inside the moment body; infeasible entries
    simply come back not-found).
    """
    c1 = np.atleast_1d(np.asarray(c1, dtype=complex))
    c2 = np.atleast_1d(np.asarray(c2, dtype=complex))
    C = c1.shape[0]
    d1 = 1.0 - np.abs(c1) ** 2  # ||phi_1||^2
    with np.errstate(invalid="ignore", divide="ignore"):
        a1c = (c2 - c1**2) / np.where(d1 < 1e-14, np.nan, d1)  # conj(alpha_1)
    d2 = d1 * (1.0 - np.abs(a1c) ** 2)  # ||phi_2||^2
    feas = np.isfinite(a1c) & (d1 > 1e-12) & (d2 > 1e-12)
    a1c = np.where(feas, a1c, 0.0)
    d2 = np.where(feas, d2, 1.0)
    # phi_2(z) = z^2 + p z + q; B(z) = z^3 + (p - wb conj(q)) z^2 + (q - wb conj(p)) z - wb
    p = -c1 + a1c * np.conj(c1)
    q = -a1c
    wb = np.conj(np.exp(1j * (2.0 * np.pi * np.arange(n_w) / n_w + 0.37)))[None, :]
    comp = np.zeros((C, n_w, 3, 3), dtype=complex)
    comp[..., 1, 0] = 1.0
    comp[..., 2, 1] = 1.0
    comp[..., 0, 2] = wb + 0.0 * p[:, None]
    comp[..., 1, 2] = -(q[:, None] - wb * np.conj(p)[:, None])
    comp[..., 2, 2] = -(p[:, None] - wb * np.conj(q)[:, None])
    atoms = np.linalg.eigvals(comp)  # (C, n_w, 3)
    atoms /= np.abs(atoms)
    phi1 = atoms - c1[:, None, None]
    phi2 = atoms**2 + p[:, None, None] * atoms + q[:, None, None]
    kernel = (1.0 + np.abs(phi1) ** 2 / d1[:, None, None]
              + np.abs(phi2) ** 2 / d2[:, None, None])
    weights = 1.0 / kernel
    weights /= np.sum(weights, axis=-1, keepdims=True)
    recon1 = np.sum(weights * atoms, axis=-1)
    recon2 = np.sum(weights * atoms**2, axis=-1)
    ok = (feas[:, None]
          & (np.abs(recon1 - c1[:, None]) + np.abs(recon2 - c2[:, None]) <= 1e-9)
          & np.all(weights >= w_min, axis=-1))
    for i in range(3):
        for j in range(i + 1, 3):
            ok &= np.abs(atoms[..., i] - atoms[..., j]) >= sep
            ok &= np.abs(atoms[..., i] + atoms[..., j]) >= anti
    amp = np.where(ok, _segment_amplitude_complex(weights, atoms), -np.inf)
    best = np.argmax(amp, axis=1)
    rows = np.arange(C)
    found = np.isfinite(amp[rows, best])
    return found, atoms[rows, best], weights[rows, best]


def _segment_amplitude_complex(weights, atoms):
    """Half the best weighted chord ½ max_j w_j |a_j - a_1| with a_1 the heaviest atom."""
    i1 = np.argmax(weights, axis=-1)
    a1 = np.take_along_axis(atoms, i1[..., None], axis=-1)
    scaled = weights * np.abs(atoms - a1)
    return 0.5 * np.max(scaled, axis=-1)


def _pentagon(c1, c2, n_theta=64):
    """Regular five-atom decomposition with orientation chosen to maximize the least weight."""
    th0 = np.linspace(0.0, 2.0 * np.pi / 5.0, n_theta, endpoint=False)
    k = np.arange(5)
    omega = np.exp(2j * np.pi / 5.0)
    c1t = c1 * np.exp(-1j * th0)[:, None]
    c2t = c2 * np.exp(-2j * th0)[:, None]
    lam = (1.0 + 2.0 * np.real(c1t * omega ** (-k)[None, :]) + 2.0 * np.real(c2t * omega ** (-2 * k)[None, :])) / 5.0
    best = np.argmax(np.min(lam, axis=1))
    angles = th0[best] + 2.0 * np.pi * k / 5.0
    return np.exp(1j * angles), lam[best]


def _lp_atoms(c1, c2, sizes=(65, 129, 257, 513, 1025), w_floor=1e-12):
    """Feasibility LP over odd angle dictionaries; returns (atoms, weights) or None."""
    for n in sizes:
        th = 2.0 * np.pi * np.arange(n) / n
        A_eq = np.stack(
            [np.ones(n), np.cos(th), np.sin(th), np.cos(2 * th), np.sin(2 * th)]
        )
        b_eq = np.array([1.0, c1.real, c1.imag, c2.real, c2.imag])
        res = linprog(np.zeros(n), A_eq=A_eq, b_eq=b_eq, bounds=(0.0, None), method="highs")
        if res.status == 0:
            keep = res.x > w_floor
            w = res.x[keep]
            return np.exp(1j * th[keep]), w / np.sum(w)
    return None


def caratheodory_decompose(params, m, M, tol=1e-9):
    """Decompose (m, M) into at most N-1 slice extreme points with |m_i| = params.r.

    Requires the state to sit strictly inside the slice hull:
    e_kin <= (1 - delta) r^2 / (2 rho).  A state on the constitutive set at the
    slice radius collapses to the single-atom decomposition.
    """
    m = np.asarray(m, dtype=float)
    M = np.asarray(M, dtype=float)
    r, rho, d = params.r, params.rho, params.d
    c1, c2 = _moments(params, m, M)

    # extreme point of the slice: exactly one atom, checked before interiority
    if abs(abs(c1) - 1.0) <= tol and abs(c2 - c1**2) <= tol:
        return ConvexDecomposition(np.array([1.0]), r * np.array([[c1.real, c1.imag]]), params)

    ek = float(e_kin_components(np.asarray(rho), m[0], m[1], M[0, 0], M[0, 1]))
    budget = r**2 / (2.0 * rho)
    if ek > (1.0 - params.delta) * budget:
        raise InfeasibleDecomposition(
            f"kinetic density {ek:.6g} exceeds (1-delta) x slice budget {budget:.6g}; "
            "state too close to the hull boundary for an interior decomposition"
        )

    found, atoms, weights = _family_scan(np.array([c1]), np.array([c2]))
    if found[0]:
        mom = r * np.stack([atoms[0].real, atoms[0].imag], axis=1)
        dec = ConvexDecomposition(weights[0], mom, params)
        dec.validate(m, M, tol=max(tol, 1e-9))
        return dec

    atoms5, w5 = _pentagon(c1, c2)
    if np.min(w5) >= 1e-9:
        mom = r * np.stack([atoms5.real, atoms5.imag], axis=1)
        dec = ConvexDecomposition(w5, mom, params)
        dec.validate(m, M, tol=max(tol, 1e-9))
        return dec

    lp = _lp_atoms(c1, c2)
    if lp is None:
        raise InfeasibleDecomposition("no nonnegative atom weights found on any dictionary")
    atoms_lp, w_lp = lp
    mom = r * np.stack([atoms_lp.real, atoms_lp.imag], axis=1)
    dec = ConvexDecomposition(w_lp, mom, params)
    if dec.size > state_space_dim(d) - 1:
        dec = caratheodory_reduce(dec)
    dec.validate(m, M, tol=max(tol, 1e-8))
    return dec


def _moment_rows(dec):
    unit = dec.momenta / dec.params.r
    th = np.arctan2(unit[:, 1], unit[:, 0])
    return np.stack([np.ones(dec.size), np.cos(th), np.sin(th), np.cos(2 * th), np.sin(2 * th)])


def caratheodory_reduce(dec, target=None):
    """Prune a decomposition to at most target atoms by null-space weight shifts."""
    if target is None:
        target = state_space_dim(dec.params.d) - 1
    weights = dec.weights.copy()
    momenta = dec.momenta.copy()
    while weights.size > target:
        rows = _moment_rows(ConvexDecomposition(weights, momenta, dec.params))
        _, s, vt = np.linalg.svd(rows)
        null = vt[-1]
        if weights.size <= rows.shape[0] and s[-1] > 1e-12:
            break  # moment matrix has full column rank: nothing left to prune
        neg = null < -1e-15
        pos = null > 1e-15
        if not np.any(neg) and not np.any(pos):
            break
        if np.any(neg):
            t = np.min(weights[neg] / -null[neg])
        else:
            null = -null
            neg = null < -1e-15
            t = np.min(weights[neg] / -null[neg])
        weights = weights + t * null
        keep = weights > 1e-13
        weights = weights[keep]
        momenta = momenta[keep]
        weights /= np.sum(weights)
    return ConvexDecomposition(weights, momenta, dec.params)


def perturb_antipodal(dec, eta=0.05, seed=0, budget=64):
    """Rotate near-antipodal atoms apart and re-solve nonnegative weights.

    Returns a decomposition of the same state with every atom pair at angular
    chord at least eta, or raises PerturbationFailed.
    """
    rng = np.random.default_rng(seed)
    m, M = dec.reconstruct()
    c1, c2 = _moments(dec.params, m, M)
    r = dec.params.r
    unit = (dec.momenta[:, 0] + 1j * dec.momenta[:, 1]) / r
    weights = dec.weights.copy()
    for _ in range(budget):
        cur = ConvexDecomposition(weights, r * np.stack([unit.real, unit.imag], axis=1), dec.params)
        pairs = cur.antipodal_pairs(eta)
        if not pairs:
            return cur
        i, j = pairs[0]
        light = j if weights[j] <= weights[i] else i
        angle = (eta * (1.0 + rng.random())) * (1.0 if rng.random() < 0.5 else -1.0)
        cand = unit.copy()
        cand[light] *= np.exp(1j * angle)
        th = np.angle(cand)
        A_eq = np.stack([np.ones(th.size), np.cos(th), np.sin(th), np.cos(2 * th), np.sin(2 * th)])
        b_eq = np.array([1.0, c1.real, c1.imag, c2.real, c2.imag])
        res = linprog(np.zeros(th.size), A_eq=A_eq, b_eq=b_eq, bounds=(0.0, None), method="highs")
        if res.status == 0 and np.max(np.abs(A_eq @ res.x - b_eq)) < 1e-9:
            unit = cand
            weights = res.x
    raise PerturbationFailed(f"antipodal pairs persist after {budget} rotations")


def _segment_from_atoms(weights, momenta, rho):
    i1 = int(np.argmax(weights))
    b = momenta[i1]
    chord = weights * np.linalg.norm(momenta - b, axis=1)
    chord[i1] = -1.0
    j = int(np.argmax(chord))
    if chord[j] <= 1e-14:
        raise DegenerateSegment("all atoms coincide; zero-amplitude segment")
    a = momenta[j]
    m_bar = 0.5 * weights[j] * (a - b)
    M_bar = 0.5 * weights[j] * (np.outer(a, a) - np.outer(b, b)) / rho
    return m_bar, M_bar, a, b


def build_segment(z, law, delta=1e-3, seed=0, tol=1e-9):
    """Oscillation segment through an interior state: direction, amplitude, and bound.

    The amplitude satisfies |m_bar| >= (r^2 - |m|^2) / (4 r N) with
    N = state_space_dim(d), and both endpoints z +- zbar stay strictly inside
    the hull.
    """
    z = z if isinstance(z, EulerState) else EulerState(*z)
    r = slice_radius(z, law)
    params = SliceParams(z.rho, r, z.d, delta)
    dec = caratheodory_decompose(params, z.m, z.M, tol=tol)
    if dec.size == 1:
        raise DegenerateSegment("state is an extreme point of the slice; nothing to oscillate")
    if dec.antipodal_pairs(_ANTI_MIN):
        dec = perturb_antipodal(dec, eta=_ANTI_MIN, seed=seed)
    m_bar, M_bar, a, b = _segment_from_atoms(dec.weights, dec.momenta, z.rho)

    N = state_space_dim(z.d)
    bound = (r**2 - float(np.dot(z.m, z.m))) / (4.0 * r * N)
    if np.linalg.norm(m_bar) + 1e-12 < bound:
        raise DegenerateSegment(
            f"amplitude {np.linalg.norm(m_bar):.3e} below the guaranteed bound {bound:.3e}"
        )
    margins = []
    for sgn in (+1.0, -1.0):
        me = z.m + sgn * m_bar
        Me = z.M + sgn * M_bar
        ek = float(e_kin_components(np.asarray(z.rho), me[0], me[1], Me[0, 0], Me[0, 1]))
        margins.append(r**2 / (2.0 * z.rho) - ek)
    if min(margins) <= 0.0:
        raise DegenerateSegment("segment endpoint escaped the hull slice")
    return OscillationSegment(
        m_bar=m_bar,
        M_bar=M_bar,
        atom_a=a,
        atom_b=b,
        rho=z.rho,
        r=r,
        amplitude_bound=bound,
        endpoint_margins=(margins[0], margins[1]),
        decomposition=dec,
    )


def build_segments_batch(rho, m1, m2, M11, M12, Q, law, delta=1e-3, seed=0):
    """Vectorized build_segment over arrays of planar states (engine hot path).

    Returns dict of arrays with the segment data; cells whose closed-form scan
    fails are routed through the scalar path.
    """
    rho = np.asarray(rho, dtype=float)
    C = rho.shape[0]
    Q = np.broadcast_to(np.asarray(Q, dtype=float), rho.shape)
    gap = Q - law.p(rho)
    if np.any(gap <= 0.0):
        raise InfeasibleDecomposition("a cell state has Q <= p(rho)")
    r = np.sqrt(2.0 * rho * gap)
    ek = e_kin_components(rho, m1, m2, M11, M12)
    bad = ek > (1.0 - delta) * r**2 / (2.0 * rho)
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise InfeasibleDecomposition(
            f"cell {idx}: kinetic density {ek[idx]:.6g} too close to the slice budget"
        )
    c1 = (m1 + 1j * m2) / r
    c2 = 2.0 * rho * (M11 + 1j * M12) / r**2

    mbar = np.zeros((C, 2))
    Mbar11 = np.zeros(C)
    Mbar12 = np.zeros(C)
    atom_a = np.zeros((C, 2))
    atom_b = np.zeros((C, 2))

    chunk = 2048
    for lo in range(0, C, chunk):
        hi = min(lo + chunk, C)
        found, atoms, weights = _family_scan(c1[lo:hi], c2[lo:hi])
        ratoms = r[lo:hi, None] * atoms
        for off in range(hi - lo):
            i = lo + off
            if found[off]:
                mom = np.stack([ratoms[off].real, ratoms[off].imag], axis=1)
                mb, Mb, a, b = _segment_from_atoms(weights[off], mom, rho[i])
            else:
                z = EulerState(rho[i], np.array([m1[i], m2[i]]),
                               np.array([[M11[i], M12[i]], [M12[i], -M11[i]]]), Q[i])
                seg = build_segment(z, law, delta=delta, seed=seed + i)
                mb, Mb, a, b = seg.m_bar, seg.M_bar, seg.atom_a, seg.atom_b
            mbar[i] = mb
            Mbar11[i] = Mb[0, 0]
            Mbar12[i] = Mb[0, 1]
            atom_a[i] = a
            atom_b[i] = b

    bound = (r**2 - (m1**2 + m2**2)) / (4.0 * r * state_space_dim(2))
    return {
        "m_bar": mbar,
        "M_bar11": Mbar11,
        "M_bar12": Mbar12,
        "atom_a": atom_a,
        "atom_b": atom_b,
        "r": r,
        "amplitude_bound": bound,
    }
