"""Diagnostics and verification experiments over completed trajectories."""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .dynamics import AgentParams, AgentState, NeighborView, clock_rate, local_sums, make_params, network_sums
from .graph import WeightedDigraph
from .simulator import ROOT_TOL, Mode, SimConfig, Trajectory, run


@dataclass
class LyapunovTraces:
    t: np.ndarray
    v: np.ndarray
    vp: np.ndarray
    vc: np.ndarray


def lyapunov(trajectory: Trajectory, graph: WeightedDigraph | None = None) -> LyapunovTraces:
    """Physical part ``||x - mean(x0)||^2``, clock part ``sum(chi)`` and their sum."""
    xbar = trajectory.x_bar0
    vp = np.sum((trajectory.x - xbar) ** 2, axis=1)
    vc = np.sum(trajectory.chi, axis=1)
    return LyapunovTraces(trajectory.t, vp + vc, vp, vc)


def lyapunov_rate(graph: WeightedDigraph, params: Sequence[AgentParams], xhat) -> float:
    """Closed-form flow derivative ``-sum((1 - sigma_i) * phihat_i)``."""
    _, phihat = network_sums(graph, np.asarray(xhat, dtype=float))
    sigma = np.array([p.sigma for p in params])
    return float(-np.sum((1.0 - sigma) * phihat))


def h2_cost(trajectory: Trajectory) -> float:
    """Trapezoidal integral of the squared disagreement over the sampled horizon."""
    dev = np.sum((trajectory.x - trajectory.x_bar0) ** 2, axis=1)
    return float(np.trapezoid(dev, trajectory.t))


@dataclass
class MietEntry:
    agent: int
    n_events: int
    min_gap: float | None
    bound: float
    margin: float | None
    violated: bool


def miet_bounds(config: SimConfig) -> np.ndarray:
    return config.guaranteed_miet()


def miet_report(trajectory: Trajectory, tol: float = ROOT_TOL) -> list[MietEntry]:
    bounds = miet_bounds(trajectory.config)
    out = []
    for i, bound in enumerate(bounds):
        gaps = trajectory.inter_event_gaps(i)
        n_ev = gaps.size + 1 if gaps.size else len(trajectory.event_times(i))
        if gaps.size == 0:
            out.append(MietEntry(i, n_ev, None, float(bound), None, False))
            continue
        g = float(gaps.min())
        out.append(MietEntry(i, n_ev, g, float(bound), g - float(bound), bool(g < bound - tol)))
    return out


# ---------------------------------------------------------------------------
# worst-case neighbour input
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdversarialScenario:
    """One agent, just after a broadcast, whose neighbours hold constant offsets.

    Every neighbour ``j`` sits at ``xhat_i - mu_j`` with the same
    ``mu_j = -e_T / (d * T)``; this drives the agent's clock back to zero
    with error ``e_T`` as fast as any neighbour configuration can.
    """

    sigma: float
    weights: tuple[float, ...]
    e_T: float
    agent: int = 0

    def __post_init__(self):
        if self.e_T == 0:
            raise ValueError("e_T must be nonzero")
        if not self.weights or min(self.weights) <= 0:
            raise ValueError("weights must be a non-empty list of positive numbers")

    @classmethod
    def for_agent(cls, graph: WeightedDigraph, params: Sequence[AgentParams], agent: int, e_T: float) -> "AdversarialScenario":
        return cls(params[agent].sigma, tuple(graph.out_weights[agent].tolist()), e_T, agent)

    @property
    def d(self) -> float:
        return float(sum(self.weights))

    @property
    def miet(self) -> float:
        return self.sigma / self.d

    @property
    def mu(self) -> np.ndarray:
        return np.full(len(self.weights), -self.e_T / (self.d * self.miet))


def adversarial_miet_run(scenario: AdversarialScenario, rtol: float = 1e-12, atol: float = 1e-14) -> float:
    """Integrate the agent's local system under the worst-case input; return the first event time.

    The agent starts at ``chi = 0, e = 0`` with ``xhat_i = 0``. The run is an
    adaptive ODE integration with event location, so it checks the closed-form
    minimum inter-event time rather than reusing it.
    """
    xhat_i = 0.0
    view = NeighborView(xhat_i, tuple((w, xhat_i - m) for w, m in zip(scenario.weights, scenario.mu)))
    params = AgentParams(sigma=scenario.sigma, d=scenario.d)
    zhat, _ = local_sums(view)

    def rhs(t, y):
        return [-zhat, clock_rate(AgentState(y[0], xhat_i, y[1]), view, params)]

    def clock_zero(t, y):
        return y[1]

    clock_zero.terminal = True
    clock_zero.direction = -1

    sol = solve_ivp(rhs, (0.0, 4.0 * scenario.miet), [xhat_i, 0.0], method="DOP853",
                    events=clock_zero, rtol=rtol, atol=atol, dense_output=False)
    hits = sol.t_events[0]
    if hits.size == 0:
        raise RuntimeError("clock never returned to zero under the adversarial input")
    e_end = sol.y_events[0][0][0] - xhat_i
    if e_end == 0.0:
        raise RuntimeError("clock returned to zero with zero error")
    return float(hits[0])


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


@dataclass
class SweepRow:
    sigma: float
    r_com: float
    cost: float
    n_events: int


def _with_sigma(base: SimConfig, sigma: float) -> SimConfig:
    if not 0.0 < sigma < 1.0:
        raise ValueError(f"sigma {sigma} outside (0, 1)")
    params = make_params(
        base.graph, sigma,
        tau=[p.tau for p in base.params],
        delta=[p.delta for p in base.params],
    )
    return dataclasses.replace(base, params=params)


def _sweep_one(args) -> SweepRow:
    base, sigma = args
    tr = run(_with_sigma(base, sigma))
    return SweepRow(float(sigma), len(tr.events) / tr.config.horizon, h2_cost(tr), len(tr.events))


def sigma_sweep(base: SimConfig, sigmas: Sequence[float], workers: int = 1) -> list[SweepRow]:
    """One run per sigma (applied to every agent) with identical x0 and seed."""
    sigmas = [float(s) for s in sigmas]
    if not sigmas:
        raise ValueError("empty sigma grid")
    for s in sigmas:
        _with_sigma(base, s)
    jobs = [(base, s) for s in sigmas]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    return rows


def count_inversions(values: Sequence[float], increasing: bool) -> int:
    """Adjacent pairs that go against the expected direction."""
    d = np.diff(np.asarray(values, dtype=float))
    return int(np.sum(d < 0) if increasing else np.sum(d > 0))


@dataclass
class WienerCheck:
    passed: bool
    n_seeds: int
    mean: float
    variance: float
    target_variance: float
    expected_mean: float
    std_error: float
    min_gap_margin: float


def wiener_band_check(config: SimConfig, n_seeds: int = 100) -> WienerCheck:
    """Spread of the network average at the horizon across seeds.

    With i.i.d. white noise of intensity ``v`` on each of ``N`` agents the
    average performs a Brownian motion with variance ``T * v / N``. Passes when
    the sample variance is within a factor two of that and the sample mean is
    within three standard errors of the initial average.
    """
    if config.mode is not Mode.NOISY or config.noise is None:
        raise ValueError("wiener_band_check needs a noisy-mode configuration")
    if n_seeds < 30:
        raise ValueError(f"n_seeds = {n_seeds} is too few; need at least 30")
    n = config.n
    xbar0 = float(np.mean(config.x0))
    target = config.horizon * config.noise.variance / n
    finals = np.empty(n_seeds)
    margin = np.inf
    bounds = config.guaranteed_miet()
    for k in range(n_seeds):
        tr = run(dataclasses.replace(config, rng_seed=config.rng_seed + k))
        finals[k] = float(np.mean(tr.x[-1]))
        for i in range(n):
            gaps = tr.inter_event_gaps(i)
            if gaps.size:
                margin = min(margin, float(gaps.min() - bounds[i]))
    mean = float(finals.mean())
    var = float(finals.var(ddof=1))
    se = float(np.sqrt(var / n_seeds))
    if target == 0.0:
        passed = bool(np.all(np.abs(finals - xbar0) <= 1e-9))
    else:
        passed = bool(0.5 * target <= var <= 2.0 * target and abs(mean - xbar0) <= 3.0 * se)
    return WienerCheck(passed, n_seeds, mean, var, target, xbar0, se, margin)


# ---------------------------------------------------------------------------
# summary record
# ---------------------------------------------------------------------------


@dataclass
class Metrics:
    v_trace: np.ndarray
    vp_trace: np.ndarray
    vc_trace: np.ndarray
    inter_event: list[np.ndarray]
    r_com: float
    r_com_per_agent: list[float]
    cost: float
    conservation_residual: float
    miet: list[MietEntry]

    @property
    def miet_margin(self) -> list[float | None]:
        return [m.margin for m in self.miet]

    def to_dict(self) -> dict:
        """JSON-ready summary; the full traces stay in the trajectory CSV."""
        dv = np.diff(self.v_trace)
        return {
            "r_com": self.r_com,
            "r_com_per_agent": self.r_com_per_agent,
            "cost": self.cost,
            "conservation_residual": self.conservation_residual,
            "lyapunov": {
                "v_initial": float(self.v_trace[0]),
                "v_final": float(self.v_trace[-1]),
                "max_increase": float(dv.max()) if dv.size else 0.0,
                "vc_min": float(self.vc_trace.min()),
            },
            "inter_event": [
                {
                    "agent": m.agent,
                    "n_events": m.n_events,
                    "min_gap": m.min_gap,
                    "mean_gap": float(g.mean()) if g.size else None,
                    "bound": m.bound,
                    "margin": m.margin,
                    "violated": m.violated,
                    "gaps": g.tolist(),
                }
                for m, g in zip(self.miet, self.inter_event)
            ],
        }


def compute_metrics(trajectory: Trajectory) -> Metrics:
    cfg = trajectory.config
    lv = lyapunov(trajectory)
    counts = [len(trajectory.event_times(i)) for i in range(cfg.n)]
    return Metrics(
        v_trace=lv.v,
        vp_trace=lv.vp,
        vc_trace=lv.vc,
        inter_event=[np.sort(trajectory.inter_event_gaps(i)) for i in range(cfg.n)],
        r_com=len(trajectory.events) / cfg.horizon,
        r_com_per_agent=[c / cfg.horizon for c in counts],
        cost=h2_cost(trajectory),
        conservation_residual=float(np.max(np.abs(trajectory.x.mean(axis=1) - trajectory.x_bar0))),
        miet=miet_report(trajectory),
    )
