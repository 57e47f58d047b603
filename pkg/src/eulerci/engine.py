"""Perturbation step and iteration driver for the planar relaxed system.

A FieldEnsemble is a constant (or closed-form) strict subsolution plus the
localized oscillation waves accumulated over perturbation steps.  Each step
picks a cell size h (halving until the step-function and cell-continuity
controls hold), builds one admissible momentum segment per feasible cell,
localizes all of them at a common frequency j (doubling until the sampled
membership margin and the measured deficiency gain are achieved), and returns
the enlarged ensemble.  Density and generalized pressure are never touched.
"""

import dataclasses
import math
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np

from . import kernels
from .functionals import (
    QuadratureSpec,
    I_functional,
    default_battery,
    default_time_samples,
    deficiency_integrand,
    merge_time_samples,
    solution_deficit,
    subsolution_check,
)
from .grid import GridSpec, build_grid
from .hull import (
    DegenerateSegment,
    InfeasibleDecomposition,
    build_segment,
    build_segments_batch,
)
from .smoothing import bump1d, bump_square_integral
from .state import EulerState, PressureLaw, e_kin_components, state_space_dim
from .waves import (
    OscillationProfile,
    TimeParallelKernel,
    concat_packs,
    find_direction,
    localize,
    pack_waves,
)

__all__ = [
    "NotStrictSubsolution",
    "NotStrict",
    "StepFailed",
    "Scenario",
    "FieldEnsemble",
    "StepReport",
    "IterationResult",
    "default_subsolution",
    "ensemble_from_scenario",
    "kinetic_gain_prediction",
    "perturbation_step",
    "iterate",
]

_DEC_DELTA = 1e-3  # interiority margin handed to the segment decomposition
_RNG_POINTS = 4    # interior sample points per cell for the continuity controls


class NotStrictSubsolution(ValueError):
    """Base fields or step precondition are not strictly inside the relaxed hull."""


NotStrict = NotStrictSubsolution


class StepFailed(RuntimeError):
    """A perturbation step could not satisfy its controls; diagnostics attached."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class Scenario:
    """Planar torus scenario: base subsolution, geometry, margins, and engine knobs."""

    rho0: float = 1.0
    m0: tuple = (0.0, 0.0)
    M0: tuple = ((0.0, 0.0), (0.0, 0.0))
    Q0: float = 2.0
    gamma: float = 2.0
    T: float = 1.0
    epsilon: float = 0.1
    omega0: tuple = ((0.0, 1.0), (0.0, 1.0))
    period: float = 1.0
    d: int = 2
    delta: float = 1e-3          # strictness margin for base validation
    seed: int = 0
    alphas: tuple | None = None  # explicit step targets; None -> 0.9 |I_k|
    h0: float | None = None      # first cell-size candidate; None -> 0.45 epsilon
    max_halvings: int = 8
    j0: int = 64
    j_cap: int = 2 ** 14
    c_min: float = 0.05
    gain_fraction: float = 0.5
    n_t: int = 64
    n_t_coarse: int = 17
    n_t_deficit: int = 48
    threads: int = 1
    stop_tol: float = 1e-9
    max_steps: int = 6
    max_cells: int = 250_000
    check_residuals: bool = True

    def __post_init__(self):
        if self.d != 2:
            raise ValueError("only the planar (d = 2) engine is implemented")
        if not self.gamma > 1.0:
            raise ValueError(f"pressure exponent must exceed 1, got {self.gamma}")
        if not 0.0 < 2.0 * self.epsilon < self.T:
            raise ValueError("need 0 < 2 epsilon < T")

    @property
    def law(self):
        return PressureLaw(self.gamma)


class FieldEnsemble:
    """Base fields plus localized waves; rho and Q come from the base alone.

    rho0 and Q0 may be floats or closed-form callables f(x1, x2, t); the base
    momentum m0 and trace-free M0 are constants.
    """

    def __init__(self, law, T, epsilon, omega0, period, rho0, m0, M0, Q0,
                 waves=(), gens=None):
        self.law = law
        self.T = float(T)
        self.epsilon = float(epsilon)
        self.omega0 = tuple((float(a), float(b)) for a, b in omega0)
        self.period = float(period)
        self.rho0 = rho0
        self.Q0 = Q0
        self.m0 = np.asarray(m0, dtype=float).reshape(2)
        self.M0 = np.asarray(M0, dtype=float).reshape(2, 2)
        if abs(self.M0[0, 0] + self.M0[1, 1]) > 1e-12 or abs(self.M0[0, 1] - self.M0[1, 0]) > 1e-12:
            raise ValueError("base M must be symmetric and trace-free")
        self.waves = list(waves)
        if gens is None:
            gens = np.zeros(len(self.waves), dtype=np.int64)
        self.gens = np.asarray(gens, dtype=np.int64)
        self._pack = pack_waves(self.waves, self.gens) if self.waves else None

    # -- construction ------------------------------------------------------

    def with_waves(self, new_waves, gen):
        gens = np.concatenate([self.gens, np.full(len(new_waves), gen, dtype=np.int64)])
        out = FieldEnsemble(self.law, self.T, self.epsilon, self.omega0, self.period,
                            self.rho0, self.m0, self.M0, self.Q0,
                            waves=self.waves + list(new_waves), gens=gens)
        return out

    def _with_pack(self, pack):
        # evaluation-only clone used for ladder trials (wave list not extended)
        clone = object.__new__(FieldEnsemble)
        clone.__dict__.update(self.__dict__)
        clone._pack = pack
        return clone

    def next_gen(self):
        return int(self.gens.max()) + 1 if self.gens.size else 0

    # -- evaluation --------------------------------------------------------

    @staticmethod
    def _base_val(v, x1, x2, t):
        if callable(v):
            return np.asarray(v(x1, x2, t), dtype=float)
        return float(v)

    def sample_block(self, x1, x2, t, need_M=True):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        t = float(t)
        rho = self._base_val(self.rho0, x1[:, None], x2[None, :], t)
        Q = self._base_val(self.Q0, x1[:, None], x2[None, :], t)
        m1, m2 = self.m0
        M11, M12 = self.M0[0, 0], self.M0[0, 1]
        if self._pack is not None:
            out = np.zeros((4, x1.size, x2.size))
            kernels.eval_waves_block(x1, x2, t, out=out,
                                     channels=15 if need_M else 3, **self._pack)
            m1 = m1 + out[0]
            m2 = m2 + out[1]
            if need_M:
                M11 = M11 + out[2]
                M12 = M12 + out[3]
        return rho, m1, m2, M11, M12, Q

    def sample_points(self, t, x1, x2):
        t, x1, x2 = np.broadcast_arrays(np.asarray(t, dtype=float),
                                        np.asarray(x1, dtype=float),
                                        np.asarray(x2, dtype=float))
        rho = np.broadcast_to(np.asarray(self._base_val(self.rho0, x1, x2, t),
                                         dtype=float), x1.shape).copy()
        Q = np.broadcast_to(np.asarray(self._base_val(self.Q0, x1, x2, t),
                                       dtype=float), x1.shape).copy()
        m1 = np.full(x1.shape, self.m0[0])
        m2 = np.full(x1.shape, self.m0[1])
        M11 = np.full(x1.shape, self.M0[0, 0])
        M12 = np.full(x1.shape, self.M0[0, 1])
        if self._pack is not None:
            f = kernels.eval_waves_points(x1, x2, t, **self._pack)
            m1 += f["m1"]
            m2 += f["m2"]
            M11 += f["M11"]
            M12 += f["M12"]
        return rho, m1, m2, M11, M12, Q

    def max_frequencies(self):
        if self._pack is None:
            return 0.0, 0.0
        p = self._pack
        fx = float(np.max(p["js"] * np.max(np.abs(p["xis"][:, :2]), axis=1)))
        ft = float(np.max(p["js"] * np.abs(p["xis"][:, 2])))
        return fx, ft

    def boundary_times(self):
        if self._pack is None:
            return np.empty(0)
        tc = self._pack["centers"][:, 2]
        half = 0.5 * self._pack["hs"]
        return merge_time_samples(tc - half, tc + half)


@dataclass
class StepReport:
    """Everything one perturbation step measured and chose."""

    alpha: float
    h: float
    j: int
    n_cells: int
    n_feasible: int
    n_skipped: int
    I_before: float
    I_after: float
    gain: float
    prediction: float
    c_measured: float
    A: float
    C_prime: float
    beta: float
    delta_cc: float
    delta_j: float
    continuity_worst: float
    final_margin_worst: float
    segment_r: np.ndarray
    segment_amplitude: np.ndarray
    segment_bound: np.ndarray
    bound_ok: bool
    subsolution: object
    h_trials: list = field(default_factory=list)
    j_trials: list = field(default_factory=list)


@dataclass
class IterationResult:
    """Trace of an iteration run; on a failed step the prefix is preserved."""

    reports: list
    ensemble: FieldEnsemble
    I_trace: np.ndarray
    deficits: np.ndarray
    failed: bool
    failure: str | None


def default_subsolution(rho_bar, Q_bar, law, scenario=None):
    """Constant strict subsolution (rho, 0, 0, Q) on the torus."""
    margin = float(Q_bar) - float(law.p(rho_bar))
    if margin <= 0.0:
        raise NotStrict(
            f"Q = {Q_bar} does not exceed p(rho) = {float(law.p(rho_bar)):.6g}"
        )
    sc = scenario or Scenario(rho0=rho_bar, Q0=Q_bar, gamma=law.gamma)
    return FieldEnsemble(law, sc.T, sc.epsilon, sc.omega0, sc.period,
                         rho_bar, (0.0, 0.0), ((0.0, 0.0), (0.0, 0.0)), Q_bar)


def ensemble_from_scenario(scenario):
    """Wave-free ensemble carrying the scenario's base fields."""
    return FieldEnsemble(scenario.law, scenario.T, scenario.epsilon,
                         scenario.omega0, scenario.period, scenario.rho0,
                         scenario.m0, scenario.M0, scenario.Q0)


# ---------------------------------------------------------------------------
# step internals


def _slab_negativity(t0, Eh, h, alpha):
    """Plateau-weighted step-function sums per time slab; measured constant c."""
    key = np.rint(2.0 * np.asarray(t0) / h).astype(np.int64)
    _, inv = np.unique(key, return_inverse=True)
    sums = np.bincount(inv, weights=Eh) * (0.75 * h) ** 2
    c = float(np.min(-sums)) / alpha
    return bool(np.all(sums < 0.0)), c


def _segments_for_cells(rho, m1, m2, M11, M12, Q, law, seed):
    """Per-cell oscillation segments; cells without one are masked out."""
    C = rho.size
    gap = Q - law.p(rho)
    pos = gap > 0.0
    r = np.zeros(C)
    r[pos] = np.sqrt(2.0 * rho[pos] * gap[pos])
    ek = e_kin_components(rho, m1, m2, M11, M12)
    feas = np.zeros(C, dtype=bool)
    feas[pos] = ek[pos] <= (1.0 - 2.0 * _DEC_DELTA) * r[pos] ** 2 / (2.0 * rho[pos])
    idx = np.nonzero(feas)[0]
    if idx.size == 0:
        return idx, None

    def scalar_pass(rows):
        keep, mb, Mb11, Mb12 = [], [], [], []
        for i in rows:
            z = EulerState(rho[i], np.array([m1[i], m2[i]]),
                           np.array([[M11[i], M12[i]], [M12[i], -M11[i]]]), Q[i])
            try:
                seg = build_segment(z, law, delta=_DEC_DELTA, seed=seed + int(i))
            except (InfeasibleDecomposition, DegenerateSegment, ValueError):
                continue
            keep.append(i)
            mb.append(seg.m_bar)
            Mb11.append(seg.M_bar[0, 0])
            Mb12.append(seg.M_bar[0, 1])
        return np.array(keep, dtype=int), np.array(mb).reshape(-1, 2), np.array(Mb11), np.array(Mb12)

    try:
        seg = build_segments_batch(rho[idx], m1[idx], m2[idx], M11[idx], M12[idx],
                                   Q[idx], law, delta=_DEC_DELTA, seed=seed)
        m_bar, Mb11, Mb12 = seg["m_bar"], seg["M_bar11"], seg["M_bar12"]
    except (InfeasibleDecomposition, DegenerateSegment, ValueError):
        idx, m_bar, Mb11, Mb12 = scalar_pass(idx)
        if idx.size == 0:
            return idx, None

    N = state_space_dim(2)
    amp = np.hypot(m_bar[:, 0], m_bar[:, 1])
    bound = (r[idx] ** 2 - (m1[idx] ** 2 + m2[idx] ** 2)) / (4.0 * r[idx] * N)
    low = amp + 1e-12 < bound
    if np.any(low):
        # route amplitude-deficient cells through the guaranteed scalar builder
        fix_rows, fm, f11, f12 = scalar_pass(idx[low])
        ok = ~low
        keep = np.concatenate([idx[ok], fix_rows])
        order = np.argsort(keep, kind="stable")
        m_bar = np.concatenate([m_bar[ok], fm])[order]
        Mb11 = np.concatenate([Mb11[ok], f11])[order]
        Mb12 = np.concatenate([Mb12[ok], f12])[order]
        idx = keep[order]
        amp = np.hypot(m_bar[:, 0], m_bar[:, 1])
        bound = (r[idx] ** 2 - (m1[idx] ** 2 + m2[idx] ** 2)) / (4.0 * r[idx] * N)
    return idx, {
        "m_bar": m_bar, "M_bar11": Mb11, "M_bar12": Mb12,
        "r": r[idx], "bound": bound, "amplitude": amp,
    }


def _cell_sample_points(centers, t0, t1, h, rng):
    """Center, the 8 space-time cell corners, and rng interior points per cell."""
    C = centers.shape[0]
    half = 0.5 * h
    t_parts = [centers[:, 2]]
    x1_parts = [centers[:, 0]]
    x2_parts = [centers[:, 1]]
    for te in (t0, t1):
        for s1 in (-half, half):
            for s2 in (-half, half):
                t_parts.append(te)
                x1_parts.append(centers[:, 0] + s1)
                x2_parts.append(centers[:, 1] + s2)
    for _ in range(_RNG_POINTS):
        u = rng.random((3, C))
        t_parts.append(t0 + (t1 - t0) * u[0])
        x1_parts.append(centers[:, 0] + h * (u[1] - 0.5))
        x2_parts.append(centers[:, 1] + h * (u[2] - 0.5))
    groups = len(t_parts)
    cell_idx = np.tile(np.arange(C), groups)
    return (np.concatenate(t_parts), np.concatenate(x1_parts),
            np.concatenate(x2_parts), cell_idx)


def _hull_values(law, rho, m1, m2, M11, M12, Q):
    return law.p(rho) + e_kin_components(rho, m1, m2, M11, M12) - Q


def _continuity_worst(fields, law, pts, cell_idx, seg):
    """Worst hull value of z(y) +- zbar over the cell sample points."""
    t, x1, x2 = pts
    rho, m1, m2, M11, M12, Q = fields.sample_points(t, x1, x2)
    worst = -math.inf
    for s in (1.0, -1.0):
        F = _hull_values(law, rho,
                         m1 + s * seg["m_bar"][cell_idx, 0],
                         m2 + s * seg["m_bar"][cell_idx, 1],
                         M11 + s * seg["M_bar11"][cell_idx],
                         M12 + s * seg["M_bar12"][cell_idx], Q)
        worst = max(worst, float(np.max(F)))
    return worst


def kinetic_gain_prediction(tc, h, m_bar, rho_c, profile, times):
    """Predicted deficiency gain at each time: plateau-weighted wave kinetic energy."""
    B = bump_square_integral(0.375 * h, 0.5 * h)
    w = profile.mean_square() * B * B * (m_bar[:, 0] ** 2 + m_bar[:, 1] ** 2) / (2.0 * rho_c)
    u = (np.atleast_1d(np.asarray(times, dtype=float))[:, None] - tc[None, :]).ravel()
    bt = bump1d(u, 0.375 * h, 0.5 * h, max_deriv=0)[:, 0].reshape(-1, tc.size)
    return (bt * bt) @ w


def perturbation_step(fields, scenario, alpha, quad=None):
    """One convex-integration step: returns (new ensemble, StepReport)."""
    law = fields.law
    alpha = float(alpha)
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    quad_full = quad or QuadratureSpec(n_t=scenario.n_t, threads=scenario.threads)
    pre = subsolution_check(fields, law, 0.0,
                            quad=QuadratureSpec(n_t=24, threads=scenario.threads))
    if not pre.verdict:
        raise NotStrictSubsolution(
            f"margins {pre.margin_hull:.3e}/{pre.margin_kinetic:.3e} not strictly positive"
        )
    I0, times0, vals0 = I_functional(fields, law, quad=quad_full, return_profile=True)
    if not I0 < -alpha:
        raise NotStrictSubsolution(f"deficiency {I0:.6f} is not below -alpha = {-alpha:.6f}")

    delta_cc = min(scenario.delta, 0.02 * abs(I0))
    delta_j = 0.5 * delta_cc
    gen = fields.next_gen()
    rng = np.random.default_rng((scenario.seed, gen, 1))

    # -- stage 1: cell size by halving -------------------------------------
    h = scenario.h0 if scenario.h0 is not None else 0.45 * scenario.epsilon
    slab = (scenario.epsilon / 2.0, fields.T - scenario.epsilon / 2.0)
    h_trials = []
    chosen = None
    for _ in range(scenario.max_halvings + 1):
        (a1, b1), (a2, b2) = fields.omega0
        est = (b1 - a1) * (b2 - a2) * (slab[1] - slab[0]) / h ** 3 + 2.0 / h
        if est > scenario.max_cells:
            raise StepFailed(
                f"cell size h = {h:.3e} would need ~{est:.0f} cells "
                f"(cap {scenario.max_cells})",
                {"h_trials": h_trials, "alpha": alpha, "I0": I0},
            )
        spec = GridSpec(h, scenario.epsilon, fields.T, fields.omega0, fields.period)
        cells = build_grid(spec, slab=slab)
        centers = np.array([c.center for c in cells])
        t0 = np.array([c.t0 for c in cells])
        t1 = np.array([c.t1 for c in cells])
        rho, m1, m2, M11, M12, Q = fields.sample_points(
            centers[:, 2], centers[:, 0], centers[:, 1])
        Eh = deficiency_integrand(law, rho, m1, m2, Q)
        neg_ok, c_meas = _slab_negativity(t0, Eh, h, alpha)
        trial = {"h": h, "cells": len(cells), "negativity_ok": neg_ok, "c": c_meas}
        if not (neg_ok and c_meas >= scenario.c_min):
            h_trials.append({**trial, "continuity_ok": None})
            h *= 0.5
            continue
        idx, seg = _segments_for_cells(rho, m1, m2, M11, M12, Q, law, scenario.seed)
        if idx.size == 0:
            h_trials.append({**trial, "continuity_ok": None, "feasible": 0})
            h *= 0.5
            continue
        pts = _cell_sample_points(centers[idx], t0[idx], t1[idx], h, rng)
        worst = _continuity_worst(fields, law, pts[:3], pts[3], seg)
        cont_ok = worst <= -delta_cc
        h_trials.append({**trial, "continuity_ok": cont_ok, "worst": worst,
                         "feasible": int(idx.size)})
        if cont_ok:
            chosen = (cells, centers, t0, t1, rho, Q, idx, seg, pts, worst)
            break
        h *= 0.5
    if chosen is None:
        raise StepFailed("no cell size satisfied the step controls",
                         {"h_trials": h_trials, "alpha": alpha, "I0": I0})
    cells, centers, t0, t1, rho_c, Q_c, idx, seg, pts, cont_worst = chosen
    c_meas = h_trials[-1]["c"]

    # -- directions and base waves ------------------------------------------
    F = idx.size
    xis = np.zeros((F, 3))
    good = np.ones(F, dtype=bool)
    for k in range(F):
        Mb = np.array([[seg["M_bar11"][k], seg["M_bar12"][k]],
                       [seg["M_bar12"][k], -seg["M_bar11"][k]]])
        try:
            xis[k] = find_direction(SimpleNamespace(m_bar=seg["m_bar"][k], M_bar=Mb)).xi
        except (ValueError, TimeParallelKernel):
            good[k] = False
    if not np.all(good):
        keep = np.nonzero(good)[0]
        idx = idx[keep]
        xis = xis[keep]
        seg = {k: v[keep] for k, v in seg.items()}
        pts = _cell_sample_points(centers[idx], t0[idx], t1[idx], h, rng)
        F = idx.size
    if F == 0:
        raise StepFailed("no cell admits a localizable segment",
                         {"h_trials": h_trials, "alpha": alpha, "I0": I0})

    profile0 = OscillationProfile(1.0 / (8.0 * scenario.j0))
    base_waves = []
    for k in range(F):
        Mb = np.array([[seg["M_bar11"][k], seg["M_bar12"][k]],
                       [seg["M_bar12"][k], -seg["M_bar11"][k]]])
        base_waves.append(localize(
            SimpleNamespace(m_bar=seg["m_bar"][k], M_bar=Mb),
            xis[k], scenario.j0, cells[idx[k]].cutoff(), profile0))
    pack0 = pack_waves(base_waves, np.full(F, gen, dtype=np.int64))

    # -- stage 2: common frequency by doubling ------------------------------
    coarse_sel = np.unique(np.concatenate([
        np.linspace(0, times0.size - 1, scenario.n_t_coarse).round().astype(int),
        [int(np.argmin(vals0))],
    ]))
    coarse_times = times0[coarse_sel]
    I0_coarse = float(np.min(vals0[coarse_sel]))
    tc_w = centers[idx, 2]
    rho_w = rho_c[idx]

    j = int(scenario.j0)
    j_trials = []
    accepted = None
    while j <= scenario.j_cap:
        profile = OscillationProfile(1.0 / (8.0 * j))
        pack_j = dict(pack0)
        pack_j["js"] = np.full(F, float(j))
        breaks, coefs = profile.tables()
        pack_j["prof_breaks"] = breaks[None, :]
        pack_j["prof_coefs"] = coefs[None, ...]
        pack_j["prof_ids"] = np.zeros(F, dtype=np.int64)
        trial = fields._with_pack(concat_packs(fields._pack, pack_j))

        rho_s, m1_s, m2_s, M11_s, M12_s, Q_s = trial.sample_points(*pts[:3])
        margin_worst = float(np.max(_hull_values(law, rho_s, m1_s, m2_s,
                                                 M11_s, M12_s, Q_s)))
        entry = {"j": j, "margin_worst": margin_worst}
        if margin_worst <= -delta_j:
            pred = float(np.min(kinetic_gain_prediction(
                tc_w, h, seg["m_bar"], rho_w, profile, coarse_times)))
            gain_c = I_functional(trial, law, quad=QuadratureSpec(threads=scenario.threads),
                                  times=coarse_times) - I0_coarse
            entry.update(prediction=pred, gain=gain_c)
            if gain_c >= scenario.gain_fraction * pred:
                j_trials.append(entry)
                accepted = (j, profile, pred)
                break
        j_trials.append(entry)
        j *= 2
    if accepted is None:
        raise StepFailed(
            f"no frequency up to {scenario.j_cap} met the margin and gain targets",
            {"h": h, "j_trials": j_trials, "alpha": alpha, "I0": I0},
        )
    j_star, profile_star, prediction = accepted

    # -- materialize and measure --------------------------------------------
    final_waves = [dataclasses.replace(w, j=j_star, profile=profile_star)
                   for w in base_waves]
    new_ens = fields.with_waves(final_waves, gen)
    I1 = I_functional(new_ens, law, quad=quad_full)
    gain = I1 - I0
    if not gain > 0.0:
        raise StepFailed(f"measured gain {gain:.3e} is not positive",
                         {"h": h, "j": j_star, "I0": I0, "I1": I1,
                          "j_trials": j_trials})

    rho_f, m1_f, m2_f, M11_f, M12_f, Q_f = new_ens.sample_points(*pts[:3])
    final_margin = float(np.max(_hull_values(law, rho_f, m1_f, m2_f,
                                             M11_f, M12_f, Q_f)))
    battery = default_battery() if scenario.check_residuals else None
    sub = subsolution_check(new_ens, law, delta_j, battery=battery,
                            quad=QuadratureSpec(n_t=24, threads=scenario.threads))
    A = float(np.max(Q_c))
    (a1, b1), (a2, b2) = fields.omega0
    area = (b1 - a1) * (b2 - a2)
    C_prime = gain * A * area / alpha ** 2
    report = StepReport(
        alpha=alpha, h=h, j=j_star, n_cells=len(cells), n_feasible=int(idx.size),
        n_skipped=len(cells) - int(idx.size), I_before=I0, I_after=I1, gain=gain,
        prediction=prediction, c_measured=c_meas, A=A, C_prime=C_prime,
        beta=gain / abs(I0), delta_cc=delta_cc, delta_j=delta_j,
        continuity_worst=cont_worst, final_margin_worst=final_margin,
        segment_r=seg["r"], segment_amplitude=seg["amplitude"],
        segment_bound=seg["bound"],
        bound_ok=bool(np.all(seg["amplitude"] + 1e-12 >= seg["bound"])),
        subsolution=sub, h_trials=h_trials, j_trials=j_trials,
    )
    return new_ens, report


def iterate(scenario, max_steps=None, quad=None):
    """Run perturbation steps until the deficiency is negligible or a step fails."""
    law = scenario.law
    ens = ensemble_from_scenario(scenario)
    quad_full = quad or QuadratureSpec(n_t=scenario.n_t, threads=scenario.threads)
    quad_def = QuadratureSpec(n_t=scenario.n_t_deficit, threads=scenario.threads)
    steps = scenario.max_steps if max_steps is None else int(max_steps)
    I = I_functional(ens, law, quad=quad_full)
    I_trace = [I]
    deficits = [solution_deficit(ens, law, quad=quad_def)]
    reports = []
    failed = False
    failure = None
    for k in range(steps):
        if abs(I) < scenario.stop_tol:
            break
        alpha = (scenario.alphas[k] if scenario.alphas is not None
                 else 0.9 * abs(I))
        try:
            ens, rep = perturbation_step(ens, scenario, alpha, quad=quad_full)
        except StepFailed as err:
            failed = True
            failure = str(err)
            break
        reports.append(rep)
        I = rep.I_after
        I_trace.append(I)
        deficits.append(solution_deficit(ens, law, quad=quad_def))
    return IterationResult(reports, ens, np.asarray(I_trace),
                           np.asarray(deficits), failed, failure)
