"""Compare the compiled and pure-Python kernels on the two hot loops.

    python benchmarks/bench_kernels.py [--repeat 3]

Prints best-of-N wall times and the speed-up.  The lattice kernel is
bound by erfc/log cost, so its gain is mostly per-call overhead and shows
at the small point counts the MVN routine starts from.  Both backends must give the
same simulation output bit for bit; the lattice means agree to rounding.
"""

import argparse
import time

import numpy as np

from mwm import kernels
from mwm.machine import MachineConfig, enumerate_combinations
from mwm.mvn import pivoted_factor
from mwm.simulator import _hopper_streams, draw_weights


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--cycles", type=int, default=50_000)
    ap.add_argument("--points", type=int, default=8192)
    args = ap.parse_args()

    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)}")

    # cycle simulation, 9 hoppers with up to 3 shut (K=130)
    config = MachineConfig(9, max_shut=3, f=0.3)
    P = enumerate_combinations(config)
    mu = np.linspace(100, 60, 9)
    wbuf, _ = draw_weights(mu, config.alpha, args.cycles + 1, _hopper_streams(0, 9))
    sim = {}
    for name, mod in backends.items():
        dt, out = best_of(lambda: mod.simulate_cycles(P, wbuf, 500.0, True), args.repeat)
        sim[name] = (dt, out)
        print(f"simulate_cycles  K={P.shape[0]:<4d} n={args.cycles:<7d} {name:>8}: {dt * 1e3:9.1f} ms")

    # lattice integrand, dimension 10
    rng = np.random.default_rng(0)
    A = rng.normal(size=(10, 10))
    S = A @ A.T + np.eye(10)
    d = np.sqrt(np.diag(S))
    L, b = pivoted_factor(rng.normal(0.5, 1, size=10), S / np.outer(d, d))
    gen = np.sqrt(np.array([2, 3, 5, 7, 11, 13, 17, 19, 23], dtype=float)) % 1.0
    shifts = rng.random((12, 9))
    lat = {}
    for n_pts in (256, args.points):
        for name, mod in backends.items():
            dt, out = best_of(lambda: mod.lattice_means(L, b, gen, shifts, n_pts), args.repeat)
            lat[name, n_pts] = (dt, out)
            print(f"lattice_means    dim=10   n={n_pts * 12:<7d} {name:>8}: {dt * 1e3:9.1f} ms")

    if "compiled" in backends:
        c, p = sim["compiled"], sim["python"]
        same = all(np.array_equal(x, y, equal_nan=True) if isinstance(x, np.ndarray) else x == y
                   for x, y in zip(c[1], p[1]))
        print(f"simulate_cycles speed-up {p[0] / c[0]:6.1f}x, identical output: {same}")
        for n_pts in (256, args.points):
            c, p = lat["compiled", n_pts], lat["python", n_pts]
            diff = float(np.max(np.abs(c[1] - p[1])))
            print(f"lattice_means n={n_pts:<5d} speed-up {p[0] / c[0]:6.1f}x, max abs difference {diff:.1e}")

if __name__ == "__main__":
    main()
