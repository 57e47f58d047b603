"""C^3 transition polynomials, compactly supported bump windows, piecewise polynomials.

Everything here is closed-form polynomial algebra shared by the oscillation
profile and the space-time cutoffs.  Piecewise polynomials store coefficients
in coordinates local to each piece so that razor-thin transition pieces stay
numerically stable.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "septic_smoothstep",
    "bump1d",
    "bump1d_scalar",
    "bump_square_integral",
    "PiecewisePoly",
]

# s7(s) = 35 s^4 - 84 s^5 + 70 s^6 - 20 s^7: the C^3 monotone step on [0, 1]
_S7 = np.array([0.0, 0.0, 0.0, 0.0, 35.0, -84.0, 70.0, -20.0])
_S7_DERIVS = [_S7]
for _ in range(3):
    _S7_DERIVS.append(np.polynomial.polynomial.polyder(_S7_DERIVS[-1]))


def septic_smoothstep(s, deriv=0):
    """C^3 smoothstep (0 at s<=0, 1 at s>=1) or one of its first three derivatives."""
    s = np.asarray(s, dtype=float)
    inside = (s > 0.0) & (s < 1.0)
    out = np.zeros_like(s)
    if deriv == 0:
        out = np.where(s >= 1.0, 1.0, out)
    sv = np.where(inside, s, 0.5)
    out = np.where(inside, np.polynomial.polynomial.polyval(sv, _S7_DERIVS[deriv]), out)
    return out


def bump1d(u, plateau_half, support_half, max_deriv=3):
    """Even C^3 window: 1 on [-a, a], 0 outside [-b, b], smoothstep in between.

    Returns an array of shape u.shape + (max_deriv+1,) holding the value and
    derivatives with respect to u.
    """
    u = np.asarray(u, dtype=float)
    w = support_half - plateau_half
    if not w > 0.0:
        raise ValueError("support must strictly contain the plateau")
    out = np.zeros(u.shape + (max_deriv + 1,))
    au = np.abs(u)
    plateau = au <= plateau_half
    out[..., 0] = np.where(plateau, 1.0, 0.0)
    trans = (au > plateau_half) & (au < support_half)
    if np.any(trans):
        s = (support_half - au[trans]) / w
        sgn = np.where(u[trans] >= 0.0, 1.0, -1.0)
        for k in range(max_deriv + 1):
            out[..., k][trans] = septic_smoothstep(s, k) * (-sgn / w) ** k
    return out


def bump1d_scalar(u, plateau_half, support_half, max_deriv=3):
    return bump1d(np.asarray([u]), plateau_half, support_half, max_deriv)[0]


def bump_square_integral(plateau_half, support_half):
    """Exact integral of bump1d(u)^2 over the real line."""
    sq = np.convolve(_S7, _S7)
    int_s7_sq = np.sum(sq / np.arange(1, sq.size + 1))
    return 2.0 * plateau_half + 2.0 * (support_half - plateau_half) * int_s7_sq


class PiecewisePoly:
    """1-periodic piecewise polynomial with per-piece local coordinates.

    coefs[i, k] multiplies (x - breaks[i])**k on the piece [breaks[i], breaks[i+1]).
    """

    def __init__(self, breaks, coefs):
        self.breaks = np.asarray(breaks, dtype=float)
        self.coefs = np.asarray(coefs, dtype=float)
        if self.breaks[0] != 0.0 or abs(self.breaks[-1] - 1.0) > 1e-15:
            raise ValueError("breaks must span [0, 1]")
        if self.coefs.shape[0] != self.breaks.size - 1:
            raise ValueError("one coefficient row per piece required")

    @property
    def degree(self):
        return self.coefs.shape[1] - 1

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        xm = x - np.floor(x)
        idx = np.clip(np.searchsorted(self.breaks, xm, side="right") - 1, 0, self.coefs.shape[0] - 1)
        u = xm - self.breaks[idx]
        out = np.zeros_like(xm)
        for k in range(self.coefs.shape[1] - 1, -1, -1):
            out = out * u + self.coefs[idx, k]
        return out

    def piece_integrals(self):
        widths = np.diff(self.breaks)
        deg = self.coefs.shape[1]
        pows = widths[:, None] ** np.arange(1, deg + 1)[None, :]
        return np.sum(self.coefs * pows / np.arange(1, deg + 1)[None, :], axis=1)

    def mean(self):
        return float(np.sum(self.piece_integrals()))

    def antiderivative(self, mean_zero=True):
        """Continuous 1-periodic antiderivative (requires zero mean to stay periodic)."""
        deg = self.coefs.shape[1]
        new = np.zeros((self.coefs.shape[0], deg + 1))
        new[:, 1:] = self.coefs / np.arange(1, deg + 1)[None, :]
        consts = np.concatenate([[0.0], np.cumsum(self.piece_integrals())[:-1]])
        new[:, 0] = consts
        out = PiecewisePoly(self.breaks, new)
        if mean_zero:
            out = PiecewisePoly(self.breaks, new - np.eye(1, deg + 1, 0) * out.mean())
        return out

    def mean_square(self):
        sq = PiecewisePoly(self.breaks, _poly_rows_square(self.coefs))
        return sq.mean()


def _poly_rows_square(coefs):
    n, deg = coefs.shape
    out = np.zeros((n, 2 * deg - 1))
    for i in range(n):
        out[i] = np.convolve(coefs[i], coefs[i])
    return out
