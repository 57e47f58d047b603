"""Parity-staggered space-time grid and plateau cutoffs.

Spatial boxes sit on the integer lattice zeta * h; a cell's time slab is
[i h, (i+1) h] when |zeta| is even and [(i-1/2) h, (i+1/2) h] when odd, so the
two parities alternate in time.  Each cell carries a C^3 product cutoff equal
to 1 on the middle-3/4 plateau box and supported in the cell.  At any
space-time point at most one cutoff is nonzero, and for every time in the
working slab one parity's plateaus cover its region completely.
"""
from __future__ import annotations

import dataclasses
import itertools

import numpy as np

from .smoothing import bump1d

__all__ = [
    "GridSpec",
    "Cell",
    "PlateauCutoff",
    "OmegaRegion",
    "EmptyGrid",
    "build_grid",
    "cell_arrays",
    "omega_region",
    "step_function_Eh",
]


class EmptyGrid(RuntimeError):
    """No cell fits in the requested slab/region at this resolution."""


@dataclasses.dataclass(frozen=True)
class GridSpec:
    """Grid parameters: cell size h, waiting time epsilon, horizon T, spatial box."""

    h: float
    epsilon: float
    T: float
    omega0: tuple = ((0.0, 1.0), (0.0, 1.0))
    period: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.h < 0.5 * self.epsilon:
            raise ValueError(f"need 0 < h < epsilon/2, got h={self.h}, epsilon={self.epsilon}")
        if not self.epsilon < 0.5 * self.T:
            raise ValueError(f"need epsilon < T/2, got epsilon={self.epsilon}, T={self.T}")
        for lo, hi in self.omega0:
            if not (0.0 <= lo < hi <= self.period):
                raise ValueError("omega0 must be a nonempty box inside one period")


@dataclasses.dataclass(frozen=True)
class PlateauCutoff:
    """C^3 product window: 1 on the plateau box (side 3h/4), 0 outside the cell."""

    center: tuple  # (x1, x2, t)
    h: float

    def value(self, x1, x2, t, derivs=False):
        h = self.h
        parts = []
        for u, c in ((x1, self.center[0]), (x2, self.center[1]), (t, self.center[2])):
            parts.append(bump1d(np.asarray(u, dtype=float) - c, 3.0 * h / 8.0, h / 2.0))
        if derivs:
            return parts
        return parts[0][..., 0] * parts[1][..., 0] * parts[2][..., 0]


@dataclasses.dataclass(frozen=True)
class Cell:
    """One space-time cell: spatial box around zeta*h, parity-staggered time slab."""

    i: int
    zeta: tuple
    parity: int
    h: float

    @property
    def t0(self):
        return (self.i - 0.5 * self.parity) * self.h

    @property
    def t1(self):
        return self.t0 + self.h

    @property
    def t_center(self):
        return 0.5 * (self.t0 + self.t1)

    @property
    def x_center(self):
        return (self.zeta[0] * self.h, self.zeta[1] * self.h)

    @property
    def center(self):
        return (*self.x_center, self.t_center)

    def cutoff(self):
        return PlateauCutoff(self.center, self.h)

    def box(self):
        lo = np.array([self.zeta[0] * self.h - self.h / 2, self.zeta[1] * self.h - self.h / 2, self.t0])
        hi = lo + self.h
        return lo, hi


def _spatial_indices(spec):
    out = []
    h = spec.h
    for k in range(2):
        lo, hi = spec.omega0[k]
        z_min = int(np.ceil((lo + h / 2) / h - 1e-12))
        z_max = int(np.floor((hi - h / 2) / h + 1e-12))
        out.append(range(z_min, z_max + 1))
    return out


def build_grid(spec, slab=None):
    """All cells whose space-time closure fits in omega0 x slab (default [eps, T-eps])."""
    t_lo, t_hi = slab if slab is not None else (spec.epsilon, spec.T - spec.epsilon)
    h = spec.h
    z1_range, z2_range = _spatial_indices(spec)
    cells = []
    for z1, z2 in itertools.product(z1_range, z2_range):
        parity = (z1 + z2) & 1
        # even: [i h, (i+1) h]; odd: [(i - 1/2) h, (i + 1/2) h]
        i_min = int(np.ceil(t_lo / h + 0.5 * parity - 1e-12))
        i_max = int(np.floor(t_hi / h + 0.5 * parity - 1.0 + 1e-12))
        for i in range(i_min, i_max + 1):
            cells.append(Cell(i, (z1, z2), parity, h))
    if not cells:
        raise EmptyGrid(f"no cell of size h={h} fits in {spec.omega0} x [{t_lo}, {t_hi}]")
    return cells


def cell_arrays(cells):
    """Vectorized view of a cell list: centers (C, 3), slab bounds, parities."""
    C = len(cells)
    centers = np.empty((C, 3))
    t0 = np.empty(C)
    t1 = np.empty(C)
    parity = np.empty(C, dtype=np.int64)
    for k, c in enumerate(cells):
        centers[k] = c.center
        t0[k] = c.t0
        t1[k] = c.t1
        parity[k] = c.parity
    return {"centers": centers, "t0": t0, "t1": t1, "parity": parity}


@dataclasses.dataclass(frozen=True)
class OmegaRegion:
    """Union of the parity-s plateau boxes (side 3h/4) inside omega0."""

    parity: int
    h: float
    zetas: tuple

    def area(self):
        return len(self.zetas) * (0.75 * self.h) ** 2

    def contains(self, x1, x2):
        h = self.h
        z1 = np.rint(np.asarray(x1) / h).astype(np.int64)
        z2 = np.rint(np.asarray(x2) / h).astype(np.int64)
        near = (np.abs(x1 - z1 * h) <= 3.0 * h / 8.0) & (np.abs(x2 - z2 * h) <= 3.0 * h / 8.0)
        parity_ok = ((z1 + z2) & 1) == self.parity
        zset = set(self.zetas)
        listed = np.array([(a, b) in zset for a, b in zip(z1.ravel(), z2.ravel())]).reshape(z1.shape)
        return near & parity_ok & listed


def omega_region(spec, parity):
    z1_range, z2_range = _spatial_indices(spec)
    zetas = tuple(
        (z1, z2)
        for z1, z2 in itertools.product(z1_range, z2_range)
        if ((z1 + z2) & 1) == parity
    )
    if not zetas:
        raise EmptyGrid(f"no parity-{parity} spatial box fits in {spec.omega0}")
    return OmegaRegion(parity, spec.h, zetas)


def step_function_Eh(fields, law, cells):
    """Deficiency E = p(rho) + |m|^2/(d rho) - Q sampled at each cell's center."""
    arr = cell_arrays(cells)
    c = arr["centers"]
    rho, m1, m2, _, _, Q = fields.sample_points(c[:, 2], c[:, 0], c[:, 1])
    return law.p(rho) + (m1 ** 2 + m2 ** 2) / (2.0 * rho) - Q
