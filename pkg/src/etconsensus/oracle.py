"""Independent fixed-step reference for nominal event times.

The event-driven engine solves the flow in closed form; the reference here
integrates the same hybrid system with explicit Euler at a tiny step and
localises clock zero-crossings by bisection. It shares no code with the
engine beyond the graph description.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dynamics import E_TOL, make_params
from .graph import WeightedDigraph, is_strongly_connected
from .simulator import Mode, NetworkState, Segments, SimConfig, flow_segment_exact

ORACLE_DT = 1e-6


def reference_events(config: SimConfig, horizon: float | None = None, dt: float = ORACLE_DT) -> list[tuple[float, int]]:
    """``(t, agent)`` broadcast list of the nominal system from the Euler reference."""
    horizon = config.horizon if horizon is None else horizon
    src, dst, w = config.graph.edge_arrays()
    sigma = np.array([p.sigma for p in config.params])
    t, a, count = _kernels.euler_events(config.x0, src, dst, w, sigma, horizon, dt, config.e_tol)
    keep = t <= horizon
    return list(zip(t[keep].tolist(), a[keep].tolist()))


def reference_next_event(
    state: NetworkState, config: SimConfig, t0: float, t_limit: float, dt: float = ORACLE_DT
) -> tuple[float | None, tuple[int, ...]]:
    """Next broadcast instant after ``t0`` from ``state`` according to the Euler reference."""
    src, dst, w = config.graph.edge_arrays()
    sigma = np.array([p.sigma for p in config.params])
    t, a, _ = _kernels.euler_events(
        state.x, src, dst, w, sigma, t_limit - t0, dt, config.e_tol,
        xhat0=state.xhat, chi0=state.chi, max_groups=1,
    )
    if t.size == 0 or t[0] > t_limit - t0:
        return None, ()
    return t0 + float(t[0]), tuple(int(i) for i in a)


@dataclass
class EquivalenceReport:
    ok: bool
    max_abs_diff: float
    n_events: int
    message: str = ""


def compare_event_lists(
    engine: list[tuple[float, int]],
    reference: list[tuple[float, int]],
    n_agents: int,
    horizon: float,
    tol: float = 1e-5,
    edge_margin: float = 1e-4,
) -> EquivalenceReport:
    """Match per-agent event sequences; events within ``edge_margin`` of the horizon are ignored."""
    worst = 0.0
    total = 0
    for i in range(n_agents):
        a = np.array([t for t, k in engine if k == i and t <= horizon - edge_margin])
        b = np.array([t for t, k in reference if k == i and t <= horizon - edge_margin])
        if a.size != b.size:
            return EquivalenceReport(False, np.inf, total, f"agent {i}: {a.size} engine events vs {b.size} reference")
        total += a.size
        if a.size:
            diff = np.abs(a - b)
            j = int(np.argmax(diff))
            worst = max(worst, float(diff[j]))
            if diff[j] > tol:
                return EquivalenceReport(
                    False, worst, total, f"agent {i} event {j}: t = {a[j]:.9f} vs reference {b[j]:.9f}"
                )
    return EquivalenceReport(True, worst, total)


def segmentwise_equivalence(
    config: SimConfig, segments: Segments, tol: float = 1e-5, dt: float = ORACLE_DT, max_segments: int | None = None
) -> EquivalenceReport:
    """Check every flow interval of a nominal run (``trajectory.segments``) against the Euler reference.

    From each recorded segment start the closed-form step
    (:func:`flow_segment_exact`) and the reference integrator each find the
    next event; instants and triggering agents must agree.
    """
    cfg = config
    seg = segments
    worst = 0.0
    count = 0
    last = seg.t.size if max_segments is None else min(seg.t.size, max_segments)
    for k in range(last):
        t0 = float(seg.t[k])
        state = NetworkState(seg.x[k].copy(), seg.xhat[k].copy(), seg.chi[k].copy(), seg.timer[k].copy())
        exact = flow_segment_exact(state, cfg.graph, cfg.params, t0, cfg.horizon, Mode.NOMINAL, e_tol=cfg.e_tol)
        t_ref, agents_ref = reference_next_event(state, cfg, t0, cfg.horizon, dt)
        if exact.t_event is None and t_ref is None:
            continue
        if exact.t_event is None or t_ref is None:
            # an event right at the horizon can fall on either side
            t_any = exact.t_event if exact.t_event is not None else t_ref
            if cfg.horizon - t_any <= tol:
                continue
            return EquivalenceReport(False, np.inf, count, f"segment {k} at t = {t0:.9f}: engine {exact.t_event} vs reference {t_ref}")
        diff = abs(exact.t_event - t_ref)
        worst = max(worst, diff)
        count += 1
        # near-simultaneous groups may split differently; one shared agent suffices
        if diff > tol or not set(agents_ref) & set(exact.agents):
            return EquivalenceReport(
                False, worst, count,
                f"segment {k} at t = {t0:.9f}: engine t = {exact.t_event:.9f} {exact.agents} "
                f"vs reference t = {t_ref:.9f} {agents_ref}",
            )
    return EquivalenceReport(True, worst, count)


def random_three_agent_config(rng: np.random.Generator, horizon: float = 2.0) -> SimConfig:
    """A random weight-balanced, strongly connected 3-agent nominal scenario.

    The graph is a positive combination of the two directed 3-cycles and the
    three 2-cycles, which is always weight-balanced; the forward 3-cycle has
    a positive weight, which makes it strongly connected.
    """
    while True:
        w = {}
        fwd = rng.uniform(0.5, 2.0)
        rev = rng.uniform(0.5, 2.0) if rng.random() < 0.5 else 0.0
        for i in range(3):
            w[(i, (i + 1) % 3)] = w.get((i, (i + 1) % 3), 0.0) + fwd
            if rev:
                w[((i + 1) % 3, i)] = w.get(((i + 1) % 3, i), 0.0) + rev
        for i, j in ((0, 1), (1, 2), (0, 2)):
            if rng.random() < 0.3:
                c = rng.uniform(0.2, 1.0)
                w[(i, j)] = w.get((i, j), 0.0) + c
                w[(j, i)] = w.get((j, i), 0.0) + c
        g = WeightedDigraph(3, tuple((i, j, v) for (i, j), v in sorted(w.items())))
        if is_strongly_connected(g):
            break
    sigma = rng.uniform(0.2, 0.9, size=3)
    x0 = rng.uniform(-2.0, 2.0, size=3)
    return SimConfig(g, make_params(g, sigma), x0, horizon, e_tol=E_TOL)
