"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5]

Both backends are called directly, so the environment flag does not matter.
"""

import argparse
import time

import numpy as np

from etconsensus import _kernels
from etconsensus.graph import five_agent_digraph
from etconsensus.scenario import bundled_scenario
from etconsensus.simulator import run


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def euler_args(horizon, dt):
    g = five_agent_digraph()
    src, dst, w = g.edge_arrays()
    x0 = np.array([-1.0, 0.0, 2.0, 1.0, 2.0])
    sigma = np.array([0.9, 0.4, 0.4, 0.3, 0.6])
    return (x0, x0.copy(), np.zeros(5), src.astype(np.int64), dst.astype(np.int64), w, sigma,
            horizon, dt, 1e-12, 1_000_000, 2**62)


def sample_args(n_samples):
    tr = run(bundled_scenario("paper_fig1").config)
    s = tr.segments
    ts = np.linspace(0.0, tr.config.horizon, n_samples)
    return (s.t, s.x, s.xhat, s.chi, s.timer, s.zhat, s.rate, ts)


def same_events(p, q, atol=1e-9):
    """Per-agent event times match; record order may differ for near-simultaneous events."""
    if p[2] != q[2]:
        return False
    for i in np.union1d(p[1], q[1]):
        a, b = np.sort(p[0][p[1] == i]), np.sort(q[0][q[1] == i])
        if a.size != b.size or not np.allclose(a, b, rtol=0, atol=atol):
            return False
    return True


def same_arrays(p, q, atol=1e-9):
    return all(np.allclose(u, v, rtol=0, atol=atol) for u, v in zip(p, q))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--horizon", type=float, default=2.0, help="Euler reference horizon")
    ap.add_argument("--dt", type=float, default=1e-6)
    ap.add_argument("--samples", type=int, default=200_001)
    args = ap.parse_args()
    if _kernels.euler_events_numba is None:
        raise SystemExit("numba is not installed")

    cases = [
        ("euler_events", euler_args(args.horizon, args.dt), _kernels.euler_events_numba, _kernels.euler_events_numpy, same_events),
        ("sample_segments", sample_args(args.samples), _kernels.sample_segments_numba, _kernels.sample_segments_numpy, same_arrays),
    ]
    print(f"{'kernel':<16} {'numba [s]':>10} {'numpy [s]':>10} {'speedup':>8}  agree")
    for name, a, f_nb, f_np, cmp in cases:
        out_nb = f_nb(*a)  # compile outside the timed region
        out_np = f_np(*a)
        agree = cmp(out_nb, out_np)
        t_nb = best_of(lambda: f_nb(*a), args.repeat)
        t_np = best_of(lambda: f_np(*a), args.repeat)
        print(f"{name:<16} {t_nb:>10.4f} {t_np:>10.4f} {t_np / t_nb:>8.1f}  {agree}")


if __name__ == "__main__":
    main()
