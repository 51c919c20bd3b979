"""Pure numpy versions of the compiled kernels (same arithmetic, same results)."""

import numpy as np
from scipy.special import ndtr, ndtri

_TINY = 1e-300


def _integrand(L, b, u, e0):
    m = b.shape[0]
    n = u.shape[0]
    f = np.full(n, e0)
    e = np.full(n, e0)
    y = np.zeros((n, m))
    for i in range(1, m):
        q = np.maximum(u[:, i - 1] * e, _TINY)
        y[:, i - 1] = ndtri(q)
        t = np.zeros(n)
        for j in range(i):
            t += L[i, j] * y[:, j]
        if L[i, i] > 0.0:
            e = ndtr((b[i] - t) / L[i, i])
        else:
            e = (t <= b[i]).astype(float)
        f *= e
    return f


def lattice_means(L, b, gen, shifts, n_points):
    m = b.shape[0]
    e0 = float(ndtr(b[0] / L[0, 0]))
    k = np.arange(1, n_points + 1, dtype=float)[:, None]
    out = np.empty(shifts.shape[0])
    for s in range(shifts.shape[0]):
        v = k * gen[: m - 1] + shifts[s, : m - 1]
        v = np.abs(2.0 * (v - np.floor(v)) - 1.0)
        total = _integrand(L, b, v, e0).sum() + _integrand(L, b, 1.0 - v, e0).sum()
        out[s] = total / (2.0 * n_points)
    return out


def _welford(values):
    count, mean, m2 = 0, 0.0, 0.0
    for v in values.tolist():
        count += 1
        delta = v - mean
        mean += delta / count
        m2 += delta * (v - mean)
    return count, mean, m2


def _combination_weights(P, w):
    # accumulate hopper by hopper so rounding matches the compiled loop
    x = np.zeros(w.shape[:-1] + (P.shape[0],))
    for j in range(P.shape[1]):
        x += w[..., j, None] * P[:, j]
    return x


def simulate_cycles(P, wbuf, target, fresh):
    P = np.asarray(P, dtype=np.uint8)
    Pf = P.astype(float)
    H, n1 = wbuf.shape
    n = n1 - 1
    packages = np.full(n, np.nan)
    chosen = np.full(n, -1, dtype=np.int64)
    discharged = np.empty(n, dtype=np.int64)
    if fresh:
        x = _combination_weights(Pf, wbuf[:, :n].T)
        masked = np.where(x > target, x, np.inf)
        best = masked.argmin(axis=1)
        ok = np.isfinite(masked[np.arange(n), best])
        packages[ok] = masked[ok, best[ok]]
        chosen[ok] = best[ok]
        discharged[:] = np.where(ok, best, x.argmax(axis=1))
    else:
        w = wbuf[:, 0].copy()
        nxt = np.ones(H, dtype=np.int64)
        for c in range(n):
            x = _combination_weights(Pf, w)
            masked = np.where(x > target, x, np.inf)
            i = int(masked.argmin())
            if np.isfinite(masked[i]):
                packages[c] = masked[i]
                chosen[c] = i
            else:
                i = int(x.argmax())
            discharged[c] = i
            opened = np.flatnonzero(P[i])
            w[opened] = wbuf[opened, nxt[opened]]
            nxt[opened] += 1
    count, mean, m2 = _welford(packages[chosen >= 0])
    return packages, chosen, discharged, count, mean, m2
