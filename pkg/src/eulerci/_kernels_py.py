"""Pure-numpy evaluation of summed localized-wave fields (reference backend).

Each wave is the third derivative tensor of a scalar potential
c * chi(y - center) * H3(j * y.xi) / j^3, expanded by the Leibniz rule into
products (d^a chi_1)(d^b chi_2)(d^c chi_t) * H_k(j theta) / j^k.  The four
output channels are the momentum perturbation (m1, m2) and the trace-free
symmetric matrix entries (M11, M12); density and energy channels vanish
identically.
"""
from __future__ import annotations

import numpy as np

from .smoothing import bump1d

__all__ = ["eval_waves_points", "eval_waves_block"]

_NCHAN = 4  # m1, m2, M11, M12


def _profile_P(breaks, coefs, j, theta):
    """Stack P_k = H_k(j * theta) / j**k for k = 0..3, 1-periodically."""
    y = j * theta
    y = y - np.floor(y)
    idx = np.clip(np.searchsorted(breaks, y, side="right") - 1, 0, breaks.size - 2)
    u = y - breaks[idx]
    P = np.empty((4,) + y.shape)
    for k in range(4):
        rows = coefs[k][idx]  # (..., deg+1) gathered per point
        acc = np.zeros_like(y)
        for p in range(rows.shape[-1] - 1, -1, -1):
            acc = acc * u + rows[..., p]
        P[k] = acc / j**k
    return P


def _coef_entries(x1, x2, xt, scale):
    """Sparse Leibniz-expansion tensor: list of (channel, d1, d2, dt, k, coef).

    channel 0 = m1 = -(T210 + T030), 1 = m2 = T300 + T120,
    2 = M11 = 2 T111, 3 = M12 = T021 - T201.  Arguments may be scalars or
    aligned arrays; coefs broadcast accordingly.
    """
    one = np.ones_like(x1)
    raw = [
        # T300 -> m2
        (1, 0, 0, 0, 0, x1**3), (1, 1, 0, 0, 1, 3 * x1**2),
        (1, 2, 0, 0, 2, 3 * x1), (1, 3, 0, 0, 3, one),
        # T120 -> m2
        (1, 0, 0, 0, 0, x1 * x2**2), (1, 1, 0, 0, 1, x2**2),
        (1, 0, 1, 0, 1, 2 * x1 * x2), (1, 0, 2, 0, 2, x1),
        (1, 1, 1, 0, 2, 2 * x2), (1, 1, 2, 0, 3, one),
        # -T210 -> m1
        (0, 0, 0, 0, 0, -(x1**2) * x2), (0, 0, 1, 0, 1, -(x1**2)),
        (0, 1, 0, 0, 1, -2 * x1 * x2), (0, 2, 0, 0, 2, -x2),
        (0, 1, 1, 0, 2, -2 * x1), (0, 2, 1, 0, 3, -one),
        # -T030 -> m1
        (0, 0, 0, 0, 0, -(x2**3)), (0, 0, 1, 0, 1, -3 * x2**2),
        (0, 0, 2, 0, 2, -3 * x2), (0, 0, 3, 0, 3, -one),
        # 2 T111 -> M11
        (2, 0, 0, 0, 0, 2 * x1 * x2 * xt), (2, 1, 0, 0, 1, 2 * x2 * xt),
        (2, 0, 1, 0, 1, 2 * x1 * xt), (2, 0, 0, 1, 1, 2 * x1 * x2),
        (2, 1, 1, 0, 2, 2 * xt), (2, 1, 0, 1, 2, 2 * x2),
        (2, 0, 1, 1, 2, 2 * x1), (2, 1, 1, 1, 3, 2 * one),
        # T021 -> M12
        (3, 0, 0, 0, 0, x2**2 * xt), (3, 0, 1, 0, 1, 2 * x2 * xt),
        (3, 0, 0, 1, 1, x2**2), (3, 0, 2, 0, 2, xt),
        (3, 0, 1, 1, 2, 2 * x2), (3, 0, 2, 1, 3, one),
        # -T201 -> M12
        (3, 0, 0, 0, 0, -(x1**2) * xt), (3, 1, 0, 0, 1, -2 * x1 * xt),
        (3, 0, 0, 1, 1, -(x1**2)), (3, 2, 0, 0, 2, -xt),
        (3, 1, 0, 1, 2, -2 * x1), (3, 2, 0, 1, 3, -one),
    ]
    merged = {}
    for ch, d1, d2, dt, k, coef in raw:
        key = (ch, d1, d2, dt, k)
        merged[key] = coef if key not in merged else merged[key] + coef
    return [key + (scale * v,) for key, v in merged.items()]


def _eval_pairs(pt_x1, pt_x2, pt_t, rows, out, centers, hs, js, xis, scales,
                prof_ids, prof_breaks, prof_coefs, pt_idx):
    """Add each (point, wave-row) pair's contribution into out (4, N).

    All rows must share one cell size h.
    """
    half = 0.5 * float(hs[rows[0]])
    B1 = bump1d(pt_x1 - centers[rows, 0], 0.75 * half, half)
    B2 = bump1d(pt_x2 - centers[rows, 1], 0.75 * half, half)
    BT = bump1d(pt_t - centers[rows, 2], 0.75 * half, half)
    x1, x2, xt = xis[rows, 0], xis[rows, 1], xis[rows, 2]
    theta = x1 * pt_x1 + x2 * pt_x2 + xt * pt_t
    P = np.empty((4, rows.size))
    for pid in np.unique(prof_ids[rows]):
        m = prof_ids[rows] == pid
        P[:, m] = _profile_P(prof_breaks[pid], prof_coefs[pid], 1.0, js[rows][m] * theta[m])
        for k in range(1, 4):
            P[k, m] /= js[rows][m] ** k
    for ch, d1, d2, dt, k, coef in _coef_entries(x1, x2, xt, scales[rows]):
        np.add.at(out[ch], pt_idx, coef * B1[:, d1] * B2[:, d2] * BT[:, dt] * P[k])


def _lattice_keys(centers, hs):
    """Cell keys for a same-h wave group, or None if not lattice-aligned."""
    h = hs[0]
    if not np.all(hs == h):
        return None
    z = np.rint(centers[:, :2] / h).astype(np.int64)
    if np.max(np.abs(centers[:, :2] - z * h)) > 1e-9 * h:
        return None
    parity = (z[:, 0] + z[:, 1]) & 1
    # even cells are centered at (i + 1/2) h in time, odd cells at i h
    ti = np.rint(centers[:, 2] / h - 0.5 * (1 - parity)).astype(np.int64)
    tc = (ti + 0.5 * (1 - parity)) * h
    if np.max(np.abs(centers[:, 2] - tc)) > 1e-9 * h:
        return None
    return z[:, 0], z[:, 1], ti


def _pack_key(z1, z2, ti, ranges):
    z1min, nz1, z2min, nz2, timin, nti = ranges
    return ((ti - timin) * nz1 + (z1 - z1min)) * nz2 + (z2 - z2min)


def eval_waves_points(
    x1, x2, t, centers, hs, js, xis, scales, mbars, Mbars,
    prof_ids, prof_breaks, prof_coefs, gens=None,
):
    """Summed wave fields at scattered space-time points (broadcast shapes)."""
    x1, x2, t = np.broadcast_arrays(
        np.asarray(x1, dtype=float), np.asarray(x2, dtype=float), np.asarray(t, dtype=float)
    )
    shape = x1.shape
    x1f = np.ascontiguousarray(x1, dtype=float).ravel()
    x2f = np.ascontiguousarray(x2, dtype=float).ravel()
    tf = np.ascontiguousarray(t, dtype=float).ravel()
    out = np.zeros((_NCHAN, x1f.size))
    W = len(hs)
    if gens is None:
        gens = np.zeros(W, dtype=np.int64)
    args = (centers, hs, js, xis, scales, prof_ids, prof_breaks, prof_coefs)

    def scan(rows):
        # direct scan: mask points inside each wave's support
        for w in rows:
            half = 0.5 * hs[w]
            sel = (
                (np.abs(x1f - centers[w, 0]) < half)
                & (np.abs(x2f - centers[w, 1]) < half)
                & (np.abs(tf - centers[w, 2]) < half)
            )
            idx = np.nonzero(sel)[0]
            if idx.size:
                _eval_pairs(x1f[idx], x2f[idx], tf[idx],
                            np.full(idx.size, w), out, *args, idx)

    for g in np.unique(gens):
        rows = np.nonzero(gens == g)[0]
        keys = _lattice_keys(centers[rows], hs[rows]) if rows.size >= 64 else None
        if keys is None:
            scan(rows)
            continue
        z1, z2, ti = keys
        h = hs[rows[0]]
        ranges = (z1.min(), np.ptp(z1) + 1, z2.min(), np.ptp(z2) + 1, ti.min(), np.ptp(ti) + 1)
        wkeys = _pack_key(z1, z2, ti, ranges)
        if np.unique(wkeys).size != wkeys.size:
            scan(rows)  # duplicated cells: no unique lattice address
            continue
        order = np.argsort(wkeys, kind="stable")
        wkeys_sorted = wkeys[order]
        # the only candidate cell for a point: round to the spatial lattice,
        # then the parity of that site fixes the time-slab convention
        qz1 = np.rint(x1f / h).astype(np.int64)
        qz2 = np.rint(x2f / h).astype(np.int64)
        qpar = (qz1 + qz2) & 1
        qti = np.where(qpar == 1, np.rint(tf / h), np.floor(tf / h)).astype(np.int64)
        z1min, nz1, z2min, nz2, timin, nti = ranges
        in_range = (
            (qz1 >= z1min) & (qz1 < z1min + nz1)
            & (qz2 >= z2min) & (qz2 < z2min + nz2)
            & (qti >= timin) & (qti < timin + nti)
        )
        qkeys = _pack_key(qz1, qz2, qti, ranges)
        pos = np.searchsorted(wkeys_sorted, np.where(in_range, qkeys, 0))
        pos_ok = in_range & (pos < wkeys_sorted.size)
        hit = np.zeros(x1f.size, dtype=bool)
        hit[pos_ok] = wkeys_sorted[pos[pos_ok]] == qkeys[pos_ok]
        if not np.any(hit):
            continue
        idx = np.nonzero(hit)[0]
        wrows = rows[order[pos[idx]]]
        half = 0.5 * h
        inside = (
            (np.abs(x1f[idx] - centers[wrows, 0]) < half)
            & (np.abs(x2f[idx] - centers[wrows, 1]) < half)
            & (np.abs(tf[idx] - centers[wrows, 2]) < half)
        )
        idx, wrows = idx[inside], wrows[inside]
        if idx.size:
            _eval_pairs(x1f[idx], x2f[idx], tf[idx], wrows, out, *args, idx)
    return {
        "m1": out[0].reshape(shape),
        "m2": out[1].reshape(shape),
        "M11": out[2].reshape(shape),
        "M12": out[3].reshape(shape),
    }


def eval_waves_block(
    x1, x2, t, centers, hs, js, xis, scales, mbars, Mbars,
    prof_ids, prof_breaks, prof_coefs, gens=None, out=None, channels=15,
):
    """Accumulate wave fields on a tensor grid x1 (n1,) x x2 (n2,) at time t.

    Both axes must be ascending.  Returns (and adds into) out with shape
    (4, n1, n2) in channel order m1, m2, M11, M12; channels is a bitmask
    (bit per channel) letting momentum-only sweeps skip the M work.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    t = float(t)
    if out is None:
        out = np.zeros((_NCHAN, x1.size, x2.size))
    for w in range(len(hs)):
        h = hs[w]
        half = 0.5 * h
        ut = t - centers[w, 2]
        if not abs(ut) < half:
            continue
        a1 = np.searchsorted(x1, centers[w, 0] - half, side="right")
        b1 = np.searchsorted(x1, centers[w, 0] + half, side="left")
        a2 = np.searchsorted(x2, centers[w, 1] - half, side="right")
        b2 = np.searchsorted(x2, centers[w, 1] + half, side="left")
        if a1 >= b1 or a2 >= b2:
            continue
        s1 = x1[a1:b1]
        s2 = x2[a2:b2]
        B1 = bump1d(s1 - centers[w, 0], 0.75 * half, half)
        B2 = bump1d(s2 - centers[w, 1], 0.75 * half, half)
        BT = bump1d(np.asarray([ut]), 0.75 * half, half)[0]
        theta = xis[w, 0] * s1[:, None] + xis[w, 1] * s2[None, :] + xis[w, 2] * t
        pid = prof_ids[w]
        P = _profile_P(prof_breaks[pid], prof_coefs[pid], js[w], theta)
        block = out[:, a1:b1, a2:b2]
        for ch, d1, d2, dt, k, coef in _coef_entries(
            xis[w, 0], xis[w, 1], xis[w, 2], scales[w]
        ):
            if not (channels >> ch) & 1:
                continue
            block[ch] += (coef * BT[dt]) * B1[:, d1, None] * B2[None, :, d2] * P[k]
    return out
