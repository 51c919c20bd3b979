# cython: language_level=3
"""Compiled inner loops: the lattice integrand of the MVN rectangle
probability and the machine-cycle simulation."""

import numpy as np

from libc.math cimport INFINITY, NAN, M_SQRT1_2, erfc, fabs, floor, log, sqrt

# keeps ndtri away from 0 and 1
cdef double _TINY = 1e-300


cdef inline double ndtr(double x) noexcept nogil:
    return 0.5 * erfc(-x * M_SQRT1_2)


cdef double ndtri(double p) noexcept nogil:
    # Wichura (1988), algorithm AS 241 (PPND16), relative error about 1e-16
    cdef double q = p - 0.5, r, v
    if fabs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * (((((((2509.0809287301226727 * r + 33430.575583588128105) * r
                         + 67265.770927008700853) * r + 45921.953931549871457) * r
                       + 13731.693765509461125) * r + 1971.5909503065514427) * r
                     + 133.14166789178437745) * r + 3.387132872796366608) / \
            (((((((5226.495278852545925 * r + 28729.085735721942674) * r
                  + 39307.89580009271061) * r + 21213.794301586595867) * r
                + 5394.1960214247511077) * r + 687.1870074920579083) * r
              + 42.313330701600911252) * r + 1.0)
    r = p if q < 0.0 else 1.0 - p
    if r <= 0.0:
        return -INFINITY if q < 0.0 else INFINITY
    r = sqrt(-log(r))
    if r <= 5.0:
        r -= 1.6
        v = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r
                  + 0.24178072517745061177) * r + 1.27045825245236838258) * r
                + 3.64784832476320460504) * r + 5.7694972214606914055) * r
              + 4.6303378461565452959) * r + 1.42343711074968357734) / \
            (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r
                  + 0.0151986665636164571966) * r + 0.14810397642748007459) * r
                + 0.68976733498510000455) * r + 1.6763848301838038494) * r
              + 2.05319162663775882187) * r + 1.0)
    else:
        r -= 5.0
        v = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                  + 0.0012426609473880784386) * r + 0.026532189526576123093) * r
                + 0.29656057182850489123) * r + 1.7848265399172913358) * r
              + 5.4637849111641143699) * r + 6.6579046435011037772) / \
            (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r
                  + 1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r
                + 0.0148753612908506148525) * r + 0.13692988092273580531) * r
              + 0.59983220655588793769) * r + 1.0)
    return -v if q < 0.0 else v


def _ndtri(double p):
    """Python access to the inverse normal CDF used by the kernel (for tests)."""
    return ndtri(p)


cdef inline double _frac(double x) nogil:
    return x - floor(x)


cdef double _integrand(const double* L, const double* b, double* y, const double* u,
                       double e0, Py_ssize_t m) noexcept nogil:
    # L is C-contiguous m x m
    cdef Py_ssize_t i, j
    cdef double f = e0, e = e0, t, q, lii
    for i in range(1, m):
        q = u[i - 1] * e
        if q < _TINY:
            q = _TINY
        y[i - 1] = ndtri(q)
        t = 0.0
        for j in range(i):
            t += L[i * m + j] * y[j]
        lii = L[i * m + i]
        if lii > 0.0:
            e = ndtr((b[i] - t) / lii)
        else:
            e = 1.0 if t <= b[i] else 0.0
        f *= e
        if f == 0.0:
            break
    return f


def lattice_means(const double[:, ::1] L, const double[::1] b, const double[::1] gen,
                  const double[:, ::1] shifts, long n_points):
    """Mean of the integrand over a shifted rank-1 lattice, one value per shift.

    Each lattice point is used twice (baker-transformed and antithetic).
    """
    cdef Py_ssize_t m = b.shape[0]
    cdef Py_ssize_t ns = shifts.shape[0]
    cdef Py_ssize_t s, d
    cdef long k
    cdef double total, e0, v
    out = np.empty(ns)
    cdef double[::1] out_v = out
    cdef double[::1] y = np.zeros(max(m, 1))
    cdef double[::1] u = np.zeros(max(m, 1))
    cdef double[::1] ua = np.zeros(max(m, 1))
    cdef const double* Lp = &L[0, 0]
    cdef const double* bp = &b[0]
    cdef double* yp = &y[0]
    cdef double* up = &u[0]
    cdef double* uap = &ua[0]
    e0 = ndtr(b[0] / L[0, 0])
    with nogil:
        for s in range(ns):
            total = 0.0
            for k in range(1, n_points + 1):
                for d in range(m - 1):
                    v = _frac(k * gen[d] + shifts[s, d])
                    v = fabs(2.0 * v - 1.0)
                    up[d] = v
                    uap[d] = 1.0 - v
                total += _integrand(Lp, bp, yp, up, e0, m)
                total += _integrand(Lp, bp, yp, uap, e0, m)
            out_v[s] = total / (2.0 * n_points)
    return out


def simulate_cycles(const unsigned char[:, ::1] P, const double[:, ::1] wbuf,
                    double target, bint fresh):
    """Run ``wbuf.shape[1] - 1`` machine cycles.

    ``wbuf[j]`` is hopper ``j``'s supply of positive weights.  In fresh mode
    cycle ``c`` uses column ``c``; otherwise column 0 is the initial fill and
    each refill of hopper ``j`` consumes its next unused entry.

    Returns ``(packages, chosen, discharged, count, mean, m2)``; ``packages``
    is NaN and ``chosen`` is -1 on cycles with no combination above target.
    """
    cdef Py_ssize_t K = P.shape[0]
    cdef Py_ssize_t H = P.shape[1]
    cdef Py_ssize_t n = wbuf.shape[1] - 1
    cdef Py_ssize_t c, i, j, best, heaviest
    cdef double v, best_v, heavy_v, delta
    cdef double mean = 0.0, m2 = 0.0
    cdef long count = 0

    packages = np.full(n, np.nan)
    chosen = np.full(n, -1, dtype=np.int64)
    discharged = np.empty(n, dtype=np.int64)
    cdef double[::1] pk = packages
    cdef long long[::1] ch = chosen
    cdef long long[::1] dis = discharged
    cdef double[::1] w = np.array(wbuf[:, 0], dtype=float)
    cdef long long[::1] nxt = np.ones(H, dtype=np.int64)

    with nogil:
        for c in range(n):
            if fresh:
                for j in range(H):
                    w[j] = wbuf[j, c]
            best = -1
            best_v = INFINITY
            heaviest = 0
            heavy_v = -INFINITY
            for i in range(K):
                v = 0.0
                for j in range(H):
                    if P[i, j]:
                        v += w[j]
                if v > target and v < best_v:
                    best = i
                    best_v = v
                if v > heavy_v:
                    heaviest = i
                    heavy_v = v
            if best >= 0:
                pk[c] = best_v
                ch[c] = best
                dis[c] = best
                count += 1
                delta = best_v - mean
                mean += delta / count
                m2 += delta * (best_v - mean)
            else:
                dis[c] = heaviest
            if not fresh:
                for j in range(H):
                    if P[dis[c], j]:
                        w[j] = wbuf[j, nxt[j]]
                        nxt[j] += 1
    return packages, chosen, discharged, count, mean, m2
