# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled evaluation of summed localized-wave fields on tensor grids.

Same contract as the pure-numpy backend: each wave adds the Leibniz expansion
of the third derivative tensor of c * chi(y - center) * H3(j y.xi) / j^3 into
the (m1, m2, M11, M12) channels.  The sweep over waves runs without the GIL so
slice-parallel callers scale across threads.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, floor
from libc.stdlib cimport free, malloc

cnp.import_array()

__all__ = ["eval_waves_block"]

# Leibniz entries (channel, d1, d2, dt, k); coefficient formulas live in
# _fill_coefs.  Channel 0 = m1, 1 = m2, 2 = M11, 3 = M12.
cdef int _ECH[40]
cdef int _ED1[40]
cdef int _ED2[40]
cdef int _EDT[40]
cdef int _EK[40]

_ENTRIES = [
    (1, 0, 0, 0, 0), (1, 1, 0, 0, 1), (1, 2, 0, 0, 2), (1, 3, 0, 0, 3),
    (1, 0, 0, 0, 0), (1, 1, 0, 0, 1), (1, 0, 1, 0, 1), (1, 0, 2, 0, 2),
    (1, 1, 1, 0, 2), (1, 1, 2, 0, 3),
    (0, 0, 0, 0, 0), (0, 0, 1, 0, 1), (0, 1, 0, 0, 1), (0, 2, 0, 0, 2),
    (0, 1, 1, 0, 2), (0, 2, 1, 0, 3),
    (0, 0, 0, 0, 0), (0, 0, 1, 0, 1), (0, 0, 2, 0, 2), (0, 0, 3, 0, 3),
    (2, 0, 0, 0, 0), (2, 1, 0, 0, 1), (2, 0, 1, 0, 1), (2, 0, 0, 1, 1),
    (2, 1, 1, 0, 2), (2, 1, 0, 1, 2), (2, 0, 1, 1, 2), (2, 1, 1, 1, 3),
    (3, 0, 0, 0, 0), (3, 0, 1, 0, 1), (3, 0, 0, 1, 1), (3, 0, 2, 0, 2),
    (3, 0, 1, 1, 2), (3, 0, 2, 1, 3),
    (3, 0, 0, 0, 0), (3, 1, 0, 0, 1), (3, 0, 0, 1, 1), (3, 2, 0, 0, 2),
    (3, 1, 0, 1, 2), (3, 2, 0, 1, 3),
]

for _i, (_c, _a, _b, _d, _k) in enumerate(_ENTRIES):
    _ECH[_i] = _c
    _ED1[_i] = _a
    _ED2[_i] = _b
    _EDT[_i] = _d
    _EK[_i] = _k


cdef inline void _fill_coefs(double x1, double x2, double xt, double s,
                             double* cf) noexcept nogil:
    # m2: T300 then T120
    cf[0] = s * x1 * x1 * x1
    cf[1] = s * 3.0 * x1 * x1
    cf[2] = s * 3.0 * x1
    cf[3] = s
    cf[4] = s * x1 * x2 * x2
    cf[5] = s * x2 * x2
    cf[6] = s * 2.0 * x1 * x2
    cf[7] = s * x1
    cf[8] = s * 2.0 * x2
    cf[9] = s
    # m1: -T210 then -T030
    cf[10] = -s * x1 * x1 * x2
    cf[11] = -s * x1 * x1
    cf[12] = -s * 2.0 * x1 * x2
    cf[13] = -s * x2
    cf[14] = -s * 2.0 * x1
    cf[15] = -s
    cf[16] = -s * x2 * x2 * x2
    cf[17] = -s * 3.0 * x2 * x2
    cf[18] = -s * 3.0 * x2
    cf[19] = -s
    # M11: 2 T111
    cf[20] = s * 2.0 * x1 * x2 * xt
    cf[21] = s * 2.0 * x2 * xt
    cf[22] = s * 2.0 * x1 * xt
    cf[23] = s * 2.0 * x1 * x2
    cf[24] = s * 2.0 * xt
    cf[25] = s * 2.0 * x2
    cf[26] = s * 2.0 * x1
    cf[27] = s * 2.0
    # M12: T021 then -T201
    cf[28] = s * x2 * x2 * xt
    cf[29] = s * 2.0 * x2 * xt
    cf[30] = s * x2 * x2
    cf[31] = s * xt
    cf[32] = s * 2.0 * x2
    cf[33] = s
    cf[34] = -s * x1 * x1 * xt
    cf[35] = -s * 2.0 * x1 * xt
    cf[36] = -s * x1 * x1
    cf[37] = -s * xt
    cf[38] = -s * 2.0 * x1
    cf[39] = -s


cdef inline double _s7(double s, int deriv) noexcept nogil:
    # septic smoothstep 35 s^4 - 84 s^5 + 70 s^6 - 20 s^7 and derivatives
    if deriv == 0:
        return ((((-20.0 * s + 70.0) * s - 84.0) * s + 35.0) * s) * s * s * s
    if deriv == 1:
        return (((-140.0 * s + 420.0) * s - 420.0) * s + 140.0) * s * s * s
    if deriv == 2:
        return (((-840.0 * s + 2100.0) * s - 1680.0) * s + 420.0) * s * s
    return (((-4200.0 * s + 8400.0) * s - 5040.0) * s + 840.0) * s


cdef inline void _bump4(double u, double ph, double sh, double* o) noexcept nogil:
    cdef double au = fabs(u)
    cdef double w, s, base
    o[0] = 0.0
    o[1] = 0.0
    o[2] = 0.0
    o[3] = 0.0
    if au <= ph:
        o[0] = 1.0
        return
    if au >= sh:
        return
    w = sh - ph
    s = (sh - au) / w
    base = (-1.0 / w) if u >= 0.0 else (1.0 / w)
    o[0] = _s7(s, 0)
    o[1] = _s7(s, 1) * base
    o[2] = _s7(s, 2) * base * base
    o[3] = _s7(s, 3) * base * base * base


cdef inline Py_ssize_t _bisect_right(const double* x, Py_ssize_t n,
                                     double v) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = n, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if x[mid] <= v:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef inline Py_ssize_t _bisect_left(const double* x, Py_ssize_t n,
                                    double v) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = n, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if x[mid] < v:
            lo = mid + 1
        else:
            hi = mid
    return lo


def eval_waves_block(x1, x2, t, centers, hs, js, xis, scales, mbars, Mbars,
                     prof_ids, prof_breaks, prof_coefs, gens=None, out=None,
                     channels=15):
    """Accumulate wave fields on a tensor grid x1 (n1,) x x2 (n2,) at time t.

    Both axes must be ascending.  Returns (and adds into) out with shape
    (4, n1, n2) in channel order m1, m2, M11, M12; channels is a bitmask
    (bit per channel) letting momentum-only sweeps skip the M work.
    """
    cdef double[::1] xv1 = np.ascontiguousarray(x1, dtype=np.float64)
    cdef double[::1] xv2 = np.ascontiguousarray(x2, dtype=np.float64)
    cdef double tcur = float(t)
    cdef double[:, ::1] cen = np.ascontiguousarray(centers, dtype=np.float64)
    cdef double[::1] hv = np.ascontiguousarray(hs, dtype=np.float64)
    cdef double[::1] jv = np.ascontiguousarray(js, dtype=np.float64)
    cdef double[:, ::1] xiv = np.ascontiguousarray(xis, dtype=np.float64)
    cdef double[::1] sv = np.ascontiguousarray(scales, dtype=np.float64)
    cdef cnp.int64_t[::1] pid = np.ascontiguousarray(prof_ids, dtype=np.int64)
    cdef double[:, ::1] brk = np.ascontiguousarray(prof_breaks, dtype=np.float64)
    cdef double[:, :, :, ::1] pcf = np.ascontiguousarray(prof_coefs, dtype=np.float64)
    if out is None:
        out = np.zeros((4, xv1.shape[0], xv2.shape[0]))
    elif not (isinstance(out, np.ndarray) and out.dtype == np.float64
              and out.flags["C_CONTIGUOUS"]):
        raise ValueError("out must be a C-contiguous float64 array")
    cdef double[:, :, ::1] ov = out
    if ov.shape[0] != 4 or ov.shape[1] != xv1.shape[0] or ov.shape[2] != xv2.shape[0]:
        raise ValueError("out must have shape (4, x1.size, x2.size)")

    cdef int chmask = channels
    cdef int act[40]
    cdef int nact = 0
    cdef int e
    for e in range(40):
        if (chmask >> _ECH[e]) & 1:
            act[nact] = e
            nact += 1
    if nact == 0 or hv.shape[0] == 0:
        return out

    cdef Py_ssize_t W = hv.shape[0]
    cdef Py_ssize_t n1 = xv1.shape[0], n2 = xv2.shape[0]
    cdef Py_ssize_t nbrk = brk.shape[1]
    cdef Py_ssize_t npiece = nbrk - 1
    cdef Py_ssize_t deg = pcf.shape[3]
    cdef double* B1 = <double*> malloc(4 * n1 * sizeof(double))
    cdef double* B2 = <double*> malloc(4 * n2 * sizeof(double))
    cdef double* P = <double*> malloc(4 * n2 * sizeof(double))
    if B1 == NULL or B2 == NULL or P == NULL:
        free(B1); free(B2); free(P)
        raise MemoryError()

    cdef Py_ssize_t w, a1, b1, a2, b2, i, jj, q, piece, n2w
    cdef double h, half, ph, ut, cx1, cx2, jfreq, xi1, xi2, xit
    cdef double btv[4]
    cdef double cf[40]
    cdef double jk[4]
    cdef double theta0, y, u, acc, c2
    cdef const double* crow
    cdef double* orow
    cdef double* prow
    cdef Py_ssize_t pw, ei, ch, d1, d2, dt, kk

    with nogil:
        for w in range(W):
            h = hv[w]
            half = 0.5 * h
            ph = 0.75 * half
            ut = tcur - cen[w, 2]
            if not fabs(ut) < half:
                continue
            cx1 = cen[w, 0]
            cx2 = cen[w, 1]
            a1 = _bisect_right(&xv1[0], n1, cx1 - half)
            b1 = _bisect_left(&xv1[0], n1, cx1 + half)
            a2 = _bisect_right(&xv2[0], n2, cx2 - half)
            b2 = _bisect_left(&xv2[0], n2, cx2 + half)
            if a1 >= b1 or a2 >= b2:
                continue
            n2w = b2 - a2
            for i in range(b1 - a1):
                _bump4(xv1[a1 + i] - cx1, ph, half, B1 + 4 * i)
            for jj in range(n2w):
                _bump4(xv2[a2 + jj] - cx2, ph, half, B2 + 4 * jj)
            _bump4(ut, ph, half, btv)
            xi1 = xiv[w, 0]
            xi2 = xiv[w, 1]
            xit = xiv[w, 2]
            _fill_coefs(xi1, xi2, xit, sv[w], cf)
            jfreq = jv[w]
            jk[0] = 1.0
            jk[1] = jfreq
            jk[2] = jfreq * jfreq
            jk[3] = jk[2] * jfreq
            pw = pid[w]
            for i in range(b1 - a1):
                theta0 = xi1 * xv1[a1 + i]
                for jj in range(n2w):
                    # match the reference backend's evaluation order bit for bit
                    y = jfreq * ((theta0 + xi2 * xv2[a2 + jj]) + xit * tcur)
                    y = y - floor(y)
                    piece = npiece - 1
                    for q in range(1, npiece):
                        if y < brk[pw, q]:
                            piece = q - 1
                            break
                    u = y - brk[pw, piece]
                    for kk in range(4):
                        crow = &pcf[pw, kk, piece, 0]
                        acc = crow[deg - 1]
                        for q in range(deg - 2, -1, -1):
                            acc = acc * u + crow[q]
                        P[kk * n2 + jj] = acc / jk[kk]
                for ei in range(nact):
                    e = act[ei]
                    c2 = cf[e] * B1[4 * i + _ED1[e]] * btv[_EDT[e]]
                    if c2 == 0.0:
                        continue
                    ch = _ECH[e]
                    d2 = _ED2[e]
                    kk = _EK[e]
                    orow = &ov[ch, a1 + i, a2]
                    prow = P + kk * n2
                    for jj in range(n2w):
                        orow[jj] += c2 * B2[4 * jj + d2] * prow[jj]
    free(B1)
    free(B2)
    free(P)
    return out
