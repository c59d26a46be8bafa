"""Event-driven simulation of the hybrid consensus system.

Between broadcasts every ``xhat`` is frozen, so each agent's input is
constant, its error is affine in time and its clock is an exact quadratic.
The engine therefore jumps from event to event by solving quadratics instead
of integrating; the only fixed-step integration is for the noise path (and
in the separate reference integrator in :mod:`etconsensus.oracle`).
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels
from .dynamics import E_TOL, EPS_CHI, FEAS_RTOL, AgentParams, ConfigError, network_sums
from .graph import WeightedDigraph, is_strongly_connected, is_weight_balanced

log = logging.getLogger(__name__)

EPS_T = 1e-12
ROOT_TOL = 1e-9


class Mode(str, enum.Enum):
    NOMINAL = "nominal"
    ROBUST = "robust"
    MAXTIME = "maxtime"
    NOISY = "noisy"


class EventKind(str, enum.Enum):
    CLOCK_ZERO = "clock_zero"
    ROBUST_WINDOW = "robust_window"
    MAX_TIME = "max_time"


class FlowSetViolation(RuntimeError):
    """A clock variable went below ``-EPS_CHI``; the hybrid flow set was left."""

    def __init__(self, t: float, agent: int, chi: float):
        super().__init__(f"chi[{agent}] = {chi:.3e} < -{EPS_CHI:g} at t = {t:.12g}")
        self.t = t
        self.agent = agent
        self.chi = chi


@dataclass(frozen=True)
class NoiseModel:
    variance: float
    dt_noise: float = 1e-3

    def __post_init__(self):
        if self.variance < 0:
            raise ConfigError(f"noise variance {self.variance} must be >= 0")
        if not self.dt_noise > 0:
            raise ConfigError(f"dt_noise {self.dt_noise} must be > 0")


DELAY_LAWS = ("uniform", "zero", "max")


@dataclass(frozen=True)
class SimConfig:
    graph: WeightedDigraph
    params: tuple[AgentParams, ...]
    x0: np.ndarray
    horizon: float
    mode: Mode = Mode.NOMINAL
    noise: NoiseModel | None = None
    sample_dt: float = 1e-3
    rng_seed: int = 0
    delay_law: str = "uniform"
    # stack the max-time trigger on top of the selected mode
    max_time: bool = False
    e_tol: float = E_TOL

    def __post_init__(self):
        object.__setattr__(self, "x0", np.array(self.x0, dtype=float))
        object.__setattr__(self, "params", tuple(self.params))
        object.__setattr__(self, "mode", Mode(self.mode))

    def validate(self) -> "SimConfig":
        g = self.graph
        if not is_weight_balanced(g):
            raise ConfigError("graph is not weight-balanced: in-degree differs from out-degree")
        if not is_strongly_connected(g):
            raise ConfigError("graph is not strongly connected")
        if len(self.params) != g.n:
            raise ConfigError(f"{len(self.params)} agent parameter sets for {g.n} agents")
        d = g.out_degree
        for i, p in enumerate(self.params):
            if abs(p.d - d[i]) > 1e-12 * max(1.0, d[i]):
                raise ConfigError(f"agent {i}: cached degree {p.d} != graph out-degree {d[i]}")
            if self.mode is Mode.ROBUST and p.tau > p.robust_miet * (1.0 + FEAS_RTOL):
                raise ConfigError(
                    f"agent {i}: tau = {p.tau:g} > sigma/d - delta = {p.robust_miet:g}; "
                    "the delayed-detection guarantee cannot meet the required period"
                )
        if self.x0.shape != (g.n,) or not np.all(np.isfinite(self.x0)):
            raise ConfigError(f"x0 must be {g.n} finite values")
        if not self.horizon > 0:
            raise ConfigError(f"horizon {self.horizon} must be > 0")
        if not self.sample_dt > 0:
            raise ConfigError(f"sample_dt {self.sample_dt} must be > 0")
        if self.mode is Mode.NOISY:
            if self.noise is None:
                raise ConfigError("noisy mode requires a noise model")
            if self.noise.dt_noise >= self.sample_dt:
                raise ConfigError(
                    f"dt_noise = {self.noise.dt_noise:g} must be smaller than sample_dt = {self.sample_dt:g}"
                )
        elif self.noise is not None:
            raise ConfigError(f"mode {self.mode.value!r} does not accept a noise model")
        if self.delay_law not in DELAY_LAWS:
            raise ConfigError(f"delay_law must be one of {DELAY_LAWS}, got {self.delay_law!r}")
        return self

    @property
    def n(self) -> int:
        return self.graph.n

    def gates(self) -> np.ndarray:
        return np.array([dwell_gate_value(p, self.mode) for p in self.params])

    def guaranteed_miet(self) -> np.ndarray:
        if self.mode is Mode.ROBUST:
            return np.array([p.robust_miet for p in self.params])
        return np.array([p.miet for p in self.params])


@dataclass
class NetworkState:
    x: np.ndarray
    xhat: np.ndarray
    chi: np.ndarray
    timer: np.ndarray
    # noise-free model of the error, propagated only in self-triggered (noisy) mode
    e_model: np.ndarray | None = None

    @classmethod
    def initial(cls, x0, with_model: bool = False) -> "NetworkState":
        x0 = np.array(x0, dtype=float)
        n = x0.size
        return cls(x0.copy(), x0.copy(), np.zeros(n), np.zeros(n), np.zeros(n) if with_model else None)

    def copy(self) -> "NetworkState":
        return NetworkState(
            self.x.copy(),
            self.xhat.copy(),
            self.chi.copy(),
            self.timer.copy(),
            None if self.e_model is None else self.e_model.copy(),
        )

    @property
    def e(self) -> np.ndarray:
        """Error the triggers act on (the model error in self-triggered mode)."""
        return self.x - self.xhat if self.e_model is None else self.e_model

    def snapshot(self, i: int) -> tuple[float, float, float, float]:
        return (float(self.x[i]), float(self.xhat[i]), float(self.chi[i]), float(self.timer[i]))


@dataclass(frozen=True)
class EventRecord:
    t: float
    agent: int
    kind: EventKind
    pre: tuple[float, float, float, float]  # (x, xhat, chi, timer)
    post: tuple[float, float, float, float]
    delay: float = 0.0
    t_detect: float | None = None


@dataclass
class Segments:
    """Network state at the start of every flow interval plus its constant rates."""

    t: np.ndarray
    x: np.ndarray
    xhat: np.ndarray
    chi: np.ndarray
    timer: np.ndarray
    zhat: np.ndarray
    rate: np.ndarray  # clock rate at segment start; chi(s) = chi + rate*s - zhat^2*s^2


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    xhat: np.ndarray
    chi: np.ndarray
    timer: np.ndarray
    is_event: np.ndarray
    events: list[EventRecord]
    segments: Segments
    terminal: NetworkState
    config: SimConfig
    brownian: "BrownianPaths | None" = field(default=None, repr=False)

    @property
    def x_bar0(self) -> float:
        return float(np.mean(self.config.x0))

    def event_times(self, agent: int) -> np.ndarray:
        return np.array([ev.t for ev in self.events if ev.agent == agent])

    def inter_event_gaps(self, agent: int) -> np.ndarray:
        return np.diff(self.event_times(agent))

    def state_at(self, ts) -> tuple[np.ndarray, ...]:
        """``(x, xhat, chi, timer)`` at arbitrary sorted times, post-jump at event instants."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        return _sample(self.segments, ts, self.brownian)


# ---------------------------------------------------------------------------
# stochastic input
# ---------------------------------------------------------------------------


class BrownianPaths:
    """Per-agent Wiener paths on a uniform grid, linearly interpolated between nodes.

    Node increments are ``sqrt(variance * dt) * N(0, 1)``, each agent drawing
    from its own generator, so the realised path of one agent does not depend
    on how many agents there are or in which order they are processed.
    """

    def __init__(self, variance: float, dt: float, horizon: float, generators: Sequence[np.random.Generator]):
        self.dt = float(dt)
        steps = int(np.ceil(horizon / dt - 1e-9)) + 1
        scale = np.sqrt(variance * dt)
        w = np.zeros((len(generators), steps + 1))
        for i, gen in enumerate(generators):
            w[i, 1:] = np.cumsum(gen.standard_normal(steps) * scale)
        self.nodes = w

    def at(self, ts) -> np.ndarray:
        """Path values, shape ``(len(ts), n)``."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        pos = ts / self.dt
        k = np.clip(np.floor(pos).astype(np.int64), 0, self.nodes.shape[1] - 2)
        frac = (pos - k)[:, None]
        return self.nodes[:, k].T * (1.0 - frac) + self.nodes[:, k + 1].T * frac


def agent_streams(seed: int, n: int) -> tuple[list[np.random.Generator], list[np.random.Generator]]:
    """Independent Philox streams per agent: ``(noise, detection_delay)``."""
    noise_ss, delay_ss = np.random.SeedSequence(seed).spawn(2)
    noise = [np.random.Generator(np.random.Philox(s)) for s in noise_ss.spawn(n)]
    delay = [np.random.Generator(np.random.Philox(s)) for s in delay_ss.spawn(n)]
    return noise, delay


# ---------------------------------------------------------------------------
# closed-form flow pieces
# ---------------------------------------------------------------------------


def first_nonpositive(c0, c1, c2, allow_now) -> np.ndarray:
    """Earliest ``s >= 0`` with ``c0 + c1*s - c2*s**2 <= 0`` (``c2 >= 0``), elementwise.

    Where ``allow_now`` is false the instant ``s = 0`` is excluded and the
    next downward crossing is returned instead. ``inf`` means never.
    """
    c0 = np.asarray(c0, dtype=float)
    c1 = np.broadcast_to(np.asarray(c1, dtype=float), c0.shape)
    c2 = np.broadcast_to(np.asarray(c2, dtype=float), c0.shape)
    now = np.asarray(allow_now) & (c0 <= 0.0)
    c0p = np.maximum(c0, 0.0)
    out = np.full(c0.shape, np.inf)
    quad = c2 > 0.0
    disc = np.sqrt(np.where(quad, c1 * c1 + 4.0 * c2 * c0p, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        # numerically stable larger root of c2*s^2 - c1*s - c0 = 0
        big = np.where(c1 >= 0.0, (c1 + disc) / (2.0 * c2), 2.0 * c0p / (disc - c1))
    big = np.where(np.isfinite(big), big, 0.0)
    out = np.where(quad, big, out)
    lin = ~quad & (c1 < 0.0)
    with np.errstate(divide="ignore"):
        out = np.where(lin, c0p / np.where(lin, -c1, 1.0), out)
    return np.where(now, 0.0, out)


def dwell_gate_value(params: AgentParams, mode: Mode) -> float:
    return params.robust_miet if Mode(mode) is Mode.ROBUST else params.miet


def dwell_gate(timer: float, params: AgentParams, mode: Mode = Mode.NOMINAL) -> bool:
    """Whether the trigger of an agent whose own timer reads ``timer`` may be evaluated."""
    return timer >= dwell_gate_value(params, mode)


def _gate_open_time(t_last: np.ndarray, gate: np.ndarray) -> np.ndarray:
    # smallest float t with t - t_last >= gate, so gaps never round below the gate
    t_open = t_last + gate
    low = (t_open - t_last) < gate
    while np.any(low):
        t_open = np.where(low, np.nextafter(t_open, np.inf), t_open)
        low = (t_open - t_last) < gate
    return t_open


class _Arrays(NamedTuple):
    sigma: np.ndarray
    d: np.ndarray
    delta: np.ndarray
    t_max: np.ndarray


def _param_arrays(params: Sequence[AgentParams]) -> _Arrays:
    return _Arrays(
        np.array([p.sigma for p in params]),
        np.array([p.d for p in params]),
        np.array([p.delta for p in params]),
        np.array([p.t_max for p in params]),
    )


def _leave_band(e, zhat, s, e_tol) -> np.ndarray:
    """First offset ``>= s`` at which the affine error ``e - zhat*t`` has ``|.| > e_tol``."""
    finite = np.isfinite(s)
    e_s = e - zhat * np.where(finite, s, 0.0)
    out = np.where(finite & (np.abs(e_s) > e_tol), s, np.inf)
    moving = ~(np.abs(e_s) > e_tol) & (zhat != 0.0) & finite
    with np.errstate(divide="ignore", invalid="ignore"):
        exit_ = (e + np.sign(zhat) * e_tol) / np.where(moving, zhat, 1.0)
    return np.where(moving, np.maximum(exit_, s), out)


def _trigger_offsets(state: NetworkState, zhat, rate, pa: _Arrays, mode: Mode, e_tol: float) -> tuple[np.ndarray, EventKind]:
    """Time from now until each agent's primary trigger condition holds.

    The clock (or robust window) condition is permanent once its quadratic
    crosses zero, so the trigger instant is the later of that crossing and
    the moment the error leaves the ``e_tol`` band.
    """
    e = state.e
    a = zhat * zhat
    chi = state.chi
    armed_now = np.abs(e) > e_tol
    if mode is Mode.ROBUST:
        # h <= delta  <=>  chi*(sigma - delta*d) <= delta*d*e^2
        k = pa.sigma - pa.delta * pa.d
        dd = pa.delta * pa.d
        c0 = k * np.maximum(chi, 0.0) - dd * e * e
        c1 = k * rate + 2.0 * dd * e * zhat
        c2 = pa.sigma * a
        root, kind = first_nonpositive(c0, c1, c2, armed_now), EventKind.ROBUST_WINDOW
    else:
        root, kind = first_nonpositive(chi, rate, a, armed_now), EventKind.CLOCK_ZERO
    return _leave_band(e, zhat, root, e_tol), kind


def _maxtime_offsets(state: NetworkState, zhat, pa: _Arrays, e_tol: float) -> np.ndarray:
    # error still inside the band when the timer expires: wait until it leaves
    return _leave_band(state.e, zhat, np.maximum(pa.t_max - state.timer, 0.0), e_tol)


def _advance(state: NetworkState, zhat, rate, s: float, dw: np.ndarray | None = None) -> None:
    """Flow every agent forward by ``s`` in place."""
    state.x -= zhat * s
    if dw is not None:
        state.x += dw
    state.chi += rate * s - zhat * zhat * s * s
    state.timer += s
    if state.e_model is not None:
        state.e_model -= zhat * s


def _check_flow_set(state: NetworkState, t: float) -> None:
    bad = np.flatnonzero(state.chi < -EPS_CHI)
    if bad.size:
        i = int(bad[0])
        raise FlowSetViolation(t, i, float(state.chi[i]))
    np.maximum(state.chi, 0.0, out=state.chi)


class SegmentResult(NamedTuple):
    t_event: float | None
    state: NetworkState
    agents: tuple[int, ...]


def flow_segment_exact(
    state: NetworkState,
    graph: WeightedDigraph,
    params: Sequence[AgentParams],
    t0: float,
    t_limit: float,
    mode: Mode = Mode.NOMINAL,
    max_time: bool = False,
    t_last: np.ndarray | None = None,
    e_tol: float = E_TOL,
) -> SegmentResult:
    """Flow from ``t0`` to the next trigger instant (or ``t_limit``).

    Returns the event time (``None`` if nothing triggers in ``(t0, t_limit]``),
    the state at that time and the agents whose condition holds there. The
    input ``state`` is not modified. ``t_last`` holds each agent's last event
    time for the dwell gate and defaults to ``t0 - timer``.
    """
    mode = Mode(mode)
    if np.any(state.chi < -EPS_CHI):
        i = int(np.argmin(state.chi))
        raise FlowSetViolation(t0, i, float(state.chi[i]))
    pa = _param_arrays(params)
    zhat, phihat = network_sums(graph, state.xhat)
    rate = pa.sigma * phihat + 2.0 * state.e * zhat
    off, _ = _trigger_offsets(state, zhat, rate, pa, mode, e_tol)
    if max_time or mode is Mode.MAXTIME:
        off = np.minimum(off, _maxtime_offsets(state, zhat, pa, e_tol))
    if t_last is None:
        t_last = t0 - state.timer
    gate = np.array([dwell_gate_value(p, mode) for p in params])
    cand = np.maximum(t0 + off, _gate_open_time(t_last, gate))
    t_next = float(cand.min())
    new = state.copy()
    if not np.isfinite(t_next) or t_next > t_limit:
        _advance(new, zhat, rate, t_limit - t0)
        _check_flow_set(new, t_limit)
        return SegmentResult(None, new, ())
    _advance(new, zhat, rate, t_next - t0)
    _check_flow_set(new, t_next)
    due = (cand <= t_next + EPS_T) & (t_next - t_last >= gate)
    agents = tuple(int(i) for i in np.flatnonzero(due))
    return SegmentResult(t_next, new, agents)


def apply_jumps(state: NetworkState, triggered: Sequence[int], t: float = float("nan")) -> NetworkState:
    """Broadcast for every agent in ``triggered`` (ascending order) and return the new state.

    Each broadcast copies ``x_i`` into ``xhat_i`` and zeroes the agent's timer
    (and model error); clocks and physical states are untouched.
    """
    new = state.copy()
    for i in sorted(set(int(a) for a in triggered)):
        if new.chi[i] < -EPS_CHI:
            raise FlowSetViolation(t, i, float(new.chi[i]))
        new.chi[i] = max(new.chi[i], 0.0)
        new.xhat[i] = new.x[i]
        new.timer[i] = 0.0
        if new.e_model is not None:
            new.e_model[i] = 0.0
    return new


# ---------------------------------------------------------------------------
# full run
# ---------------------------------------------------------------------------


def run(config: SimConfig, max_events: int = 5_000_000) -> Trajectory:
    """Simulate ``config`` from t = 0 to its horizon."""
    config.validate()
    g = config.graph
    n = g.n
    mode = config.mode
    pa = _param_arrays(config.params)
    use_maxtime = config.max_time or mode is Mode.MAXTIME
    gate = config.gates()

    noise_gens, delay_gens = agent_streams(config.rng_seed, n)
    brownian = None
    if mode is Mode.NOISY:
        brownian = BrownianPaths(config.noise.variance, config.noise.dt_noise, config.horizon, noise_gens)

    state = NetworkState.initial(config.x0, with_model=mode is Mode.NOISY)
    t = 0.0
    t_last = np.zeros(n)
    pending = np.full(n, np.inf)
    pending_detect = np.full(n, np.nan)
    pending_kind: list[EventKind | None] = [None] * n
    events: list[EventRecord] = []
    seg_rows: list[tuple] = []
    w_now = brownian.at([0.0])[0] if brownian is not None else None

    zhat, phihat = network_sums(g, state.xhat)
    rate = pa.sigma * phihat + 2.0 * state.e * zhat
    seg_rows.append((t, state.x.copy(), state.xhat.copy(), state.chi.copy(), state.timer.copy(), zhat, rate))

    stalls = 0
    while True:
        trig_off, trig_kind = _trigger_offsets(state, zhat, rate, pa, mode, config.e_tol)
        cand = t + trig_off
        kinds = np.full(n, trig_kind.value, dtype=object)
        if use_maxtime:
            mt = t + _maxtime_offsets(state, zhat, pa, config.e_tol)
            use_mt = mt < cand
            cand = np.where(use_mt, mt, cand)
            kinds[use_mt] = EventKind.MAX_TIME.value
        cand = np.maximum(cand, _gate_open_time(t_last, gate))
        is_pending = np.isfinite(pending)
        cand = np.where(is_pending, pending, cand)

        t_next = float(cand.min())
        if not np.isfinite(t_next) or t_next > config.horizon:
            break
        s = t_next - t
        stalls = stalls + 1 if s == 0.0 else 0
        if stalls > 4 * n + 4:
            raise RuntimeError(f"event loop made no progress at t = {t}")
        dw = None
        if brownian is not None:
            w_next = brownian.at([t_next])[0]
            dw = w_next - w_now
            w_now = w_next
        _advance(state, zhat, rate, s, dw)
        t = t_next
        _check_flow_set(state, t)

        broadcast: list[tuple[int, EventKind, float, float | None]] = []
        # grouping never lets an agent fire before its own dwell gate opens
        due = (cand <= t + EPS_T) & (is_pending | (t - t_last >= gate))
        for i in np.flatnonzero(due):
            i = int(i)
            if is_pending[i]:
                broadcast.append((i, pending_kind[i], t - pending_detect[i], float(pending_detect[i])))
                continue
            kind = EventKind(kinds[i])
            if kind is EventKind.ROBUST_WINDOW:
                delay = _draw_delay(delay_gens[i], pa.delta[i], config.delay_law)
                if delay > 0.0:
                    pending[i] = t + delay
                    pending_detect[i] = t
                    pending_kind[i] = kind
                    continue
                broadcast.append((i, kind, 0.0, t))
            else:
                broadcast.append((i, kind, 0.0, None))

        if not broadcast:
            # x and e moved, so the clock rate at the new instant differs
            rate = pa.sigma * phihat + 2.0 * state.e * zhat
            continue
        for i, kind, delay, t_detect in broadcast:
            pre = state.snapshot(i)
            if state.chi[i] < -EPS_CHI:
                raise FlowSetViolation(t, i, float(state.chi[i]))
            state.xhat[i] = state.x[i]
            state.timer[i] = 0.0
            if state.e_model is not None:
                state.e_model[i] = 0.0
            t_last[i] = t
            pending[i] = np.inf
            pending_detect[i] = np.nan
            pending_kind[i] = None
            events.append(EventRecord(t, i, kind, pre, state.snapshot(i), float(delay), t_detect))
        if len(events) > max_events:
            raise RuntimeError(f"more than {max_events} events before t = {t}")
        zhat, phihat = network_sums(g, state.xhat)
        rate = pa.sigma * phihat + 2.0 * state.e * zhat
        seg_rows.append((t, state.x.copy(), state.xhat.copy(), state.chi.copy(), state.timer.copy(), zhat, rate))

    segments = Segments(*(np.array([r[k] for r in seg_rows]) for k in range(7)))
    event_times = np.unique(segments.t[1:]) if len(seg_rows) > 1 else np.empty(0)
    n_grid = int(np.floor(config.horizon / config.sample_dt + 1e-9))
    grid = np.arange(n_grid + 1) * config.sample_dt
    if grid[-1] < config.horizon:
        grid = np.append(grid, config.horizon)
    ts = np.union1d(grid, event_times)
    is_event = np.isin(ts, event_times)
    x, xhat, chi, timer = _sample(segments, ts, brownian)
    terminal = NetworkState(
        x[-1].copy(), xhat[-1].copy(), chi[-1].copy(), timer[-1].copy(),
        None if state.e_model is None else state.e_model - zhat * (config.horizon - t),
    )
    log.debug("run finished: %d events, %d samples", len(events), ts.size)
    return Trajectory(ts, x, xhat, chi, timer, is_event, events, segments, terminal, config, brownian)


def _draw_delay(gen: np.random.Generator, delta: float, law: str) -> float:
    if law == "zero" or delta == 0.0:
        return 0.0
    if law == "max":
        return float(delta)
    return float(gen.uniform(0.0, delta))


def _sample(segments: Segments, ts: np.ndarray, brownian: BrownianPaths | None):
    x, xhat, chi, timer = _kernels.sample_segments(
        segments.t, segments.x, segments.xhat, segments.chi, segments.timer, segments.zhat, segments.rate, ts
    )
    if brownian is not None:
        idx = np.clip(np.searchsorted(segments.t, ts, side="right") - 1, 0, segments.t.size - 1)
        x = x + (brownian.at(ts) - brownian.at(segments.t)[idx])
    return x, xhat, chi, timer
