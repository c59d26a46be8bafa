"""Per-agent model: local sums, clock dynamics, trigger predicates, jump map.

Scalar functions here operate on one agent's :class:`AgentState` and its
:class:`NeighborView`. The ``*_vec`` helpers compute the same quantities for
every agent at once and are what the simulator uses.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .graph import WeightedDigraph

E_TOL = 1e-12
EPS_CHI = 1e-10
# relative slack for comparing design constants against sigma/d, which is rarely exact in binary
FEAS_RTOL = 1e-12
DEFAULT_TMAX_FACTOR = 10.0


class ConfigError(ValueError):
    """Raised for parameter choices that violate a design constraint."""


@dataclass(frozen=True)
class AgentParams:
    """Design constants of one agent.

    ``miet`` is the guaranteed minimum inter-event time ``sigma / d``; in the
    delayed-detection variant the guarantee drops to ``miet - delta``.
    """

    sigma: float
    d: float
    tau: float = 0.0
    delta: float = 0.0
    t_max: float | None = None
    agent: int | None = None  # only used to label error messages

    def __post_init__(self):
        name = "agent" if self.agent is None else f"agent {self.agent}"
        if not 0.0 < self.sigma < 1.0:
            raise ConfigError(f"{name}: sigma = {self.sigma} must lie in (0, 1)")
        if not self.d > 0.0:
            raise ConfigError(f"{name}: out-degree d = {self.d} must be positive")
        miet = self.sigma / self.d
        if self.tau < 0:
            raise ConfigError(f"{name}: tau = {self.tau} must be non-negative")
        if self.tau > miet * (1.0 + FEAS_RTOL):
            raise ConfigError(
                f"{name}: tau = {self.tau:g} > sigma/d = {miet:g}: the required minimum period "
                f"cannot be guaranteed; raise sigma or lower the out-degree"
            )
        if not 0.0 <= self.delta < miet:
            raise ConfigError(
                f"{name}: detection delay bound delta = {self.delta:g} must lie in [0, sigma/d = {miet:g})"
            )
        if self.t_max is None:
            object.__setattr__(self, "t_max", DEFAULT_TMAX_FACTOR * miet)
        elif self.t_max < miet * (1.0 - FEAS_RTOL):
            raise ConfigError(f"{name}: t_max = {self.t_max:g} must be >= sigma/d = {miet:g}")

    @property
    def miet(self) -> float:
        return self.sigma / self.d

    @property
    def robust_miet(self) -> float:
        return self.sigma / self.d - self.delta


def make_params(
    graph: WeightedDigraph,
    sigma: Sequence[float] | float,
    tau: Sequence[float] | float = 0.0,
    delta: Sequence[float] | float = 0.0,
    t_max: Sequence[float] | float | None = None,
) -> tuple[AgentParams, ...]:
    """Per-agent parameters with the out-degree taken from ``graph``."""
    n = graph.n

    def per_agent(v, label):
        if v is None:
            return [None] * n
        arr = np.broadcast_to(np.asarray(v, dtype=float), (n,)) if np.ndim(v) == 0 else np.asarray(v, float)
        if arr.shape != (n,):
            raise ConfigError(f"{label} has {arr.size} entries, expected {n}")
        return [float(a) for a in arr]

    sig, ta, de, tm = per_agent(sigma, "sigma"), per_agent(tau, "tau"), per_agent(delta, "delta"), per_agent(t_max, "t_max")
    d = graph.out_degree
    return tuple(
        AgentParams(sigma=sig[i], d=float(d[i]), tau=ta[i], delta=de[i], t_max=tm[i], agent=i)
        for i in range(n)
    )


@dataclass(frozen=True)
class AgentState:
    x: float
    xhat: float
    chi: float = 0.0
    timer: float = 0.0

    @property
    def e(self) -> float:
        return self.x - self.xhat


@dataclass(frozen=True)
class NeighborView:
    xhat_self: float
    xhat_neighbors: tuple[tuple[float, float], ...]  # (w_ij, xhat_j)

    @classmethod
    def of(cls, graph: WeightedDigraph, xhat, i: int) -> "NeighborView":
        xhat = np.asarray(xhat, dtype=float)
        pairs = tuple(
            (float(w), float(xhat[j])) for j, w in zip(graph.out_neighbors[i], graph.out_weights[i])
        )
        return cls(float(xhat[i]), pairs)


def local_sums(view: NeighborView) -> tuple[float, float]:
    zhat = 0.0
    phihat = 0.0
    for w, xj in view.xhat_neighbors:
        diff = view.xhat_self - xj
        zhat += w * diff
        phihat += w * diff * diff
    return zhat, phihat


def control_input(view: NeighborView) -> float:
    return -local_sums(view)[0]


def clock_rate(state: AgentState, view: NeighborView, params: AgentParams) -> float:
    zhat, phihat = local_sums(view)
    return params.sigma * phihat + 2.0 * state.e * zhat


def trigger_nominal(state: AgentState, e_tol: float = E_TOL, eps_chi: float = EPS_CHI) -> bool:
    return state.chi <= eps_chi and abs(state.e) > e_tol


def time_to_event_bound(state: AgentState, params: AgentParams) -> float:
    """Lower bound on the time left before the clock can next reach zero with nonzero error."""
    if state.chi < -EPS_CHI:
        raise ValueError(f"chi = {state.chi} is outside the flow set")
    return float(time_to_event_bound_vec(state.chi, state.e, params.miet))


def trigger_robust(state: AgentState, params: AgentParams, e_tol: float = E_TOL) -> bool:
    # same nonzero-error gate as the nominal trigger
    return time_to_event_bound(state, params) <= params.delta and abs(state.e) > e_tol


def trigger_maxtime(state: AgentState, params: AgentParams, e_tol: float = E_TOL) -> bool:
    return state.timer >= params.t_max and abs(state.e) > e_tol


def apply_broadcast(state: AgentState) -> AgentState:
    return replace(state, xhat=state.x, timer=0.0)


# vectorised forms used by the engine


def network_sums(graph: WeightedDigraph, xhat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(zhat, phihat)`` for every agent."""
    src, dst, w = graph.edge_arrays()
    diff = xhat[src] - xhat[dst]
    zhat = np.bincount(src, weights=w * diff, minlength=graph.n)
    phihat = np.bincount(src, weights=w * diff * diff, minlength=graph.n)
    return zhat, phihat


def time_to_event_bound_vec(chi, e, miet):
    """Vectorised ``(sigma/d) * chi / (chi + e^2)`` with the (0, 0) branch equal to ``sigma/d``.

    Slightly negative ``chi`` from rounding is clamped to zero.
    """
    chi = np.maximum(np.asarray(chi, dtype=float), 0.0)
    e2 = np.asarray(e, dtype=float) ** 2
    den = chi + e2
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(den > 0, chi / np.where(den > 0, den, 1.0), 1.0)
    return np.asarray(miet) * frac
