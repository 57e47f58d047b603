"""Scalar miniature of the oscillation-gain iteration: |u| + |v| <= 1 on [0, 1].

A pair of functions plays the role of the relaxed state, the constraint set
is the L^infty diamond |u| + |v| <= 1, the deficiency functional is
I(u, v) = int (|u| + |v|)^2 - 1 dx, and one perturbation adds a sine in u
modulated by the pointwise slack.  Every quantity has a closed form, so the
gain accounting of the full engine can be cross-checked end to end.
"""
from __future__ import annotations

import dataclasses
import math

import numpy as np

__all__ = [
    "GRID_N",
    "DEPTH_CAP",
    "FREQ_CAP",
    "NotStrictPair",
    "ToyPair",
    "ToyTrace",
    "I_toy",
    "perturb_toy",
    "cross_term",
    "doubling_schedule",
    "iterate_toy",
]

GRID_N = 1 << 16      # midpoint samples; sum sin^2(2 pi n x) is exactly 1/2 for n < GRID_N // 2
DEPTH_CAP = 8         # symbolic nesting depth before flattening to samples
FREQ_CAP = 8192       # largest admitted integer frequency (8 samples per period)

_TWO_PI = 2.0 * math.pi
_XGRID = (np.arange(GRID_N) + 0.5) / GRID_N


class NotStrictPair(ValueError):
    """The perturbation needs |u| + |v| < 1 everywhere but the pair touches the boundary."""


def _freq_index(k):
    """Angular frequency k -> integer n with k = 2 pi n, validated."""
    n = k / _TWO_PI
    n_int = int(round(n))
    if not math.isfinite(n) or abs(n - n_int) > 1e-9 * max(1.0, abs(n)) or n_int < 1:
        raise ValueError(f"frequency must be 2*pi*n with integer n >= 1, got k = {k!r}")
    if n_int > FREQ_CAP:
        raise ValueError(f"frequency index {n_int} above cap {FREQ_CAP}")
    return n_int


def _apply_terms(u, v, terms, x):
    """Fold the accumulated sine perturbations on top of base samples u."""
    for n in terms:
        slack = 1.0 - (np.abs(u) + np.abs(v)) ** 2
        u = u + 0.5 * np.sin(_TWO_PI * n * x) * slack
    return u


@dataclasses.dataclass(frozen=True)
class ToyPair:
    """Pair (u, v) on [0, 1]: base midpoint samples plus symbolic sine terms on u."""

    u_base: np.ndarray
    v: np.ndarray
    terms: tuple = ()

    def __post_init__(self):
        u = np.asarray(self.u_base, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if u.shape != (GRID_N,) or v.shape != (GRID_N,):
            raise ValueError("u_base and v must be sampled on the standard grid")
        object.__setattr__(self, "u_base", u)
        object.__setattr__(self, "v", v)
        s = np.abs(self.samples()[0]) + np.abs(v)
        if s.max() > 1.0 + 1e-9:
            raise ValueError(f"|u| + |v| exceeds 1 by {s.max() - 1.0:.3e}")

    @classmethod
    def constant(cls, u0=0.0, v0=0.0):
        """Pair of constant functions."""
        return cls(np.full(GRID_N, float(u0)), np.full(GRID_N, float(v0)))

    @classmethod
    def from_functions(cls, fu, fv):
        """Sample two callables on the standard midpoint grid."""
        return cls(np.asarray(fu(_XGRID), dtype=float) + np.zeros(GRID_N),
                   np.asarray(fv(_XGRID), dtype=float) + np.zeros(GRID_N))

    def samples(self):
        """(u, v) on the standard midpoint grid."""
        return _apply_terms(self.u_base, self.v, self.terms, _XGRID), self.v

    def eval(self, x):
        """(u(x), v(x)) at arbitrary points: interpolated base, closed-form terms."""
        x = np.asarray(x, dtype=float)
        u = np.interp(x, _XGRID, self.u_base, period=1.0)
        v = np.interp(x, _XGRID, self.v, period=1.0)
        return _apply_terms(u, v, self.terms, x), v

    def flattened(self):
        """Bake the symbolic terms into base samples."""
        u, _ = self.samples()
        return ToyPair(u, self.v)


def I_toy(pair, n=None):
    """Deficiency functional int_0^1 (|u| + |v|)^2 - 1 dx by midpoint quadrature."""
    if n is None:
        u, v = pair.samples()
    else:
        x = (np.arange(int(n)) + 0.5) / int(n)
        u, v = pair.eval(x)
    s = np.abs(u) + np.abs(v)
    return float(np.mean(s * s) - 1.0)


def perturb_toy(pair, k):
    """Add 1/2 sin(kx) (1 - (|u|+|v|)^2) to u; v untouched."""
    n = _freq_index(k)
    u, v = pair.samples()
    s = np.abs(u) + np.abs(v)
    if not s.max() < 1.0:
        if np.all(np.abs(s - 1.0) <= 1e-12):
            return pair  # slack factor is identically zero
        raise NotStrictPair("pair touches |u| + |v| = 1; no strict slack to oscillate in")
    if len(pair.terms) >= DEPTH_CAP:
        pair = pair.flattened()
    return ToyPair(pair.u_base, pair.v, pair.terms + (n,))


def cross_term(pair, k):
    """int u sin(kx) (1 - (|u|+|v|)^2) dx, the part of the gain that dies as k grows."""
    n = _freq_index(k)
    u, v = pair.samples()
    slack = 1.0 - (np.abs(u) + np.abs(v)) ** 2
    return float(np.mean(u * np.sin(_TWO_PI * n * _XGRID) * slack))


def doubling_schedule(steps, n0=8, cap=FREQ_CAP):
    """Angular frequencies 2 pi n with n doubling from n0, clamped at cap."""
    ns = np.minimum(n0 * (1 << np.arange(int(steps), dtype=np.int64)), cap)
    return _TWO_PI * ns


@dataclasses.dataclass(frozen=True)
class ToyTrace:
    """Record of one toy iteration run."""

    I: np.ndarray
    ns: tuple
    pair: ToyPair

    @property
    def gains(self):
        return np.diff(self.I)


def iterate_toy(pair, schedule, stop_tol=0.0):
    """Apply the perturbation along the frequency schedule until |I| < stop_tol."""
    trace = [I_toy(pair)]
    ns = []
    for k in np.asarray(schedule, dtype=float):
        if abs(trace[-1]) < stop_tol:
            break
        pair = perturb_toy(pair, k)
        ns.append(_freq_index(k))
        trace.append(I_toy(pair))
    return ToyTrace(np.asarray(trace), tuple(ns), pair)
