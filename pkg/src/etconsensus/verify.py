"""Invariant checks over a completed run, in memory or reloaded from disk.

Both entry points reduce their input to :class:`RunData` and run the same
checks, so a saved run and the live run it came from get identical verdicts.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import outputs
from .dynamics import EPS_CHI, time_to_event_bound_vec
from .oracle import ORACLE_DT, segmentwise_equivalence
from .scenario import Scenario, parse_scenario
from .simulator import ROOT_TOL, Mode, NetworkState, Segments, SimConfig, apply_jumps

CONSERVATION_TOL = 1e-9
LYAPUNOV_TOL = 1e-8
ORACLE_TOL = 1e-5
MAX_PERMUTED_GROUPS = 50


@dataclass
class RunData:
    config: SimConfig
    t: np.ndarray
    is_event: np.ndarray
    x: np.ndarray
    xhat: np.ndarray
    chi: np.ndarray
    timer: np.ndarray
    ev_t: np.ndarray
    ev_agent: np.ndarray
    ev_kind: list[str]
    ev_delay: np.ndarray
    ev_pre: np.ndarray  # (m, 4): x, xhat, chi, timer
    ev_post: np.ndarray

    @classmethod
    def from_trajectory(cls, tr) -> "RunData":
        m = len(tr.events)
        return cls(
            tr.config, tr.t, tr.is_event, tr.x, tr.xhat, tr.chi, tr.timer,
            np.array([e.t for e in tr.events]), np.array([e.agent for e in tr.events], dtype=int),
            [e.kind.value for e in tr.events],
            np.array([e.delay for e in tr.events]),
            np.array([e.pre for e in tr.events]).reshape(m, 4),
            np.array([e.post for e in tr.events]).reshape(m, 4),
        )

    def segments(self) -> Segments:
        """Flow-interval starts: t = 0 and every post-jump event row."""
        rows = np.flatnonzero(self.is_event)
        rows = np.concatenate([[0], rows[rows > 0]])
        zeros = np.zeros((rows.size, self.x.shape[1]))
        return Segments(self.t[rows], self.x[rows], self.xhat[rows], self.chi[rows], self.timer[rows], zeros, zeros)


@dataclass
class CheckResult:
    name: str
    status: str  # "pass" | "fail" | "skip"
    detail: str

    @property
    def ok(self) -> bool:
        return self.status != "fail"


def _pass(name, detail=""):
    return CheckResult(name, "pass", detail)


def _fail(name, detail):
    return CheckResult(name, "fail", detail)


def _skip(name, detail):
    return CheckResult(name, "skip", detail)


def check_conservation(d: RunData) -> CheckResult:
    name = "conservation"
    if d.config.mode is Mode.NOISY:
        return _skip(name, "noise moves the average")
    dev = np.abs(d.x.mean(axis=1) - np.mean(d.config.x0))
    k = int(np.argmax(dev))
    if dev[k] > CONSERVATION_TOL:
        return _fail(name, f"|mean(x) - mean(x0)| = {dev[k]:.3e} at t = {d.t[k]:.9g}")
    return _pass(name, f"max residual {dev[k]:.2e}")


def check_lyapunov(d: RunData) -> CheckResult:
    name = "lyapunov"
    if d.config.mode is Mode.NOISY:
        return _skip(name, "V is not monotone under noise")
    xbar = np.mean(d.config.x0)
    v = np.sum((d.x - xbar) ** 2, axis=1) + np.sum(d.chi, axis=1)
    dv = np.diff(v)
    if dv.size:
        k = int(np.argmax(dv))
        if dv[k] > LYAPUNOV_TOL:
            return _fail(name, f"V rises by {dv[k]:.3e} between t = {d.t[k]:.9g} and {d.t[k + 1]:.9g}")
    # jumps must leave x and chi untouched, so V is unchanged across them
    for j in range(d.ev_t.size):
        if d.ev_pre[j, 0] != d.ev_post[j, 0] or d.ev_pre[j, 2] != d.ev_post[j, 2]:
            return _fail(name, f"event at t = {d.ev_t[j]:.9g} (agent {d.ev_agent[j]}) changed x or chi")
    if np.any(d.chi < -EPS_CHI):
        k, i = np.argwhere(d.chi < -EPS_CHI)[0]
        return _fail(name, f"chi[{i}] = {d.chi[k, i]:.3e} < 0 at t = {d.t[k]:.9g}")
    return _pass(name, f"max step increase {max(dv.max(), 0.0) if dv.size else 0.0:.2e}")


def check_miet(d: RunData) -> CheckResult:
    name = "miet"
    cfg = d.config
    bounds = cfg.guaranteed_miet()
    tau = np.array([p.tau for p in cfg.params])
    # the dwell gate makes the noisy-mode bound exact
    tol = 0.0 if cfg.mode is Mode.NOISY else ROOT_TOL
    worst = np.inf
    for i in range(cfg.n):
        times = d.ev_t[d.ev_agent == i]
        gaps = np.diff(times)
        if gaps.size == 0:
            continue
        k = int(np.argmin(gaps))
        worst = min(worst, gaps[k] - bounds[i])
        if gaps[k] < bounds[i] - tol or gaps[k] < tau[i] - tol:
            return _fail(
                name,
                f"agent {i}: gap {gaps[k]:.12g} after t = {times[k]:.9g} is below bound {bounds[i]:.12g} (tau {tau[i]:g})",
            )
    return _pass(name, f"min margin {worst:.3e}" if np.isfinite(worst) else "fewer than two events per agent")


def check_time_to_event(d: RunData) -> CheckResult:
    """Realised time to each agent's next trigger is at least the time-to-event bound.

    In robust mode the trigger instant is the detection (broadcast time minus
    its delay) and the bound is ``h - delta``.
    """
    name = "time_to_event"
    cfg = d.config
    if cfg.mode is Mode.NOISY:
        return _skip(name, "triggers act on the unrecorded model error")
    miet = np.array([p.miet for p in cfg.params])
    slack = np.array([p.delta for p in cfg.params]) if cfg.mode is Mode.ROBUST else np.zeros(cfg.n)
    checked = 0
    for i in range(cfg.n):
        mask = d.ev_agent == i
        times = d.ev_t[mask] - d.ev_delay[mask]
        kinds = np.array(d.ev_kind, dtype=object)[mask]
        nxt = np.searchsorted(times, d.t, side="right")
        # samples with no later event are censored
        valid = nxt < times.size
        if not np.any(valid):
            continue
        idx = np.flatnonzero(valid)
        t_next = times[nxt[idx]]
        # max-time broadcasts may fire early by design
        keep = kinds[nxt[idx]] != "max_time"
        idx, t_next = idx[keep], t_next[keep]
        # e = x - xhat is only known to a few ulps of |x|; take the largest
        # consistent |e|, which gives the smallest bound
        e = np.abs(d.x[idx, i] - d.xhat[idx, i])
        e_res = 4.0 * np.spacing(np.maximum(np.abs(d.x[idx, i]), np.abs(d.xhat[idx, i])))
        h = time_to_event_bound_vec(d.chi[idx, i], e + e_res, miet[i])
        slackness = (t_next - d.t[idx]) - (h - slack[i])
        checked += idx.size
        if idx.size and slackness.min() < -ROOT_TOL:
            k = int(np.argmin(slackness))
            return _fail(
                name,
                f"agent {i} at t = {d.t[idx[k]]:.9g}: next event after {t_next[k] - d.t[idx[k]]:.9g} "
                f"but bound is {h[k]:.9g}",
            )
    return _pass(name, f"{checked} sample-agent pairs")


def _state_before(d: RunData, row: int, agents: np.ndarray, pre: np.ndarray) -> NetworkState:
    st = NetworkState(d.x[row].copy(), d.xhat[row].copy(), d.chi[row].copy(), d.timer[row].copy())
    for a, p in zip(agents, pre):
        st.xhat[a] = p[1]
        st.timer[a] = p[3]
    return st


def check_jump_commutativity(d: RunData) -> CheckResult:
    """Permuting the broadcast order within an event instant never changes the result.

    Instants where only one agent broadcast are still exercised with a
    synthetic group of every agent, since each jump map is defined anywhere.
    """
    name = "jump_commutativity"
    instants = np.unique(d.ev_t)[:MAX_PERMUTED_GROUPS]
    n = d.config.n
    for t in instants:
        rows = np.flatnonzero((d.t == t) & d.is_event)
        if rows.size == 0:
            return _fail(name, f"event instant t = {t:.17g} missing from the sampled trajectory")
        row = int(rows[0])
        sel = np.flatnonzero(d.ev_t == t)
        st = _state_before(d, row, d.ev_agent[sel], d.ev_pre[sel])
        group = d.ev_agent[sel] if sel.size > 1 else np.arange(n)
        orders = list(itertools.permutations(group.tolist()))
        if len(orders) > 24:
            rng = np.random.default_rng(0)
            orders = [tuple(rng.permutation(group)) for _ in range(24)]
        ref = None
        for order in orders:
            s = st
            for a in order:
                s = apply_jumps(s, [a], t)
            out = np.concatenate([s.x, s.xhat, s.chi, s.timer])
            if ref is None:
                ref = out
            elif not np.array_equal(out, ref):
                return _fail(name, f"t = {t:.9g}: order {order} gives a different state")
        # the recorded post-jump state must equal the jump map applied to the pre-state
        post = apply_jumps(st, d.ev_agent[sel], t)
        rec = np.concatenate([d.x[row], d.xhat[row], d.chi[row], d.timer[row]])
        got = np.concatenate([post.x, post.xhat, post.chi, post.timer])
        if not np.array_equal(got, rec):
            return _fail(name, f"t = {t:.9g}: recorded post-jump state differs from the jump map")
    return _pass(name, f"{instants.size} event instants")


def check_oracle(d: RunData, dt: float = ORACLE_DT, tol: float = ORACLE_TOL) -> CheckResult:
    name = "oracle_equivalence"
    cfg = d.config
    if cfg.mode is not Mode.NOMINAL or cfg.max_time:
        return _skip(name, "reference integrator covers the nominal trigger only")
    rep = segmentwise_equivalence(cfg, d.segments(), tol=tol, dt=dt)
    if not rep.ok:
        return _fail(name, rep.message)
    return _pass(name, f"{rep.n_events} segments, max |dt| {rep.max_abs_diff:.2e}")


CHECKS = (check_conservation, check_lyapunov, check_miet, check_time_to_event, check_jump_commutativity, check_oracle)


def verify_data(d: RunData, oracle: bool = True) -> list[CheckResult]:
    out = []
    for chk in CHECKS:
        if chk is check_oracle and not oracle:
            out.append(_skip("oracle_equivalence", "disabled"))
            continue
        out.append(chk(d))
    return out


def verify_trajectory(tr, oracle: bool = True) -> list[CheckResult]:
    return verify_data(RunData.from_trajectory(tr), oracle)


def load_run(directory: Path) -> tuple[Scenario, RunData]:
    """Rebuild :class:`RunData` from a results directory written by :func:`outputs.write_run`."""
    directory = Path(directory)
    for f in (outputs.SCENARIO_JSON, outputs.TRAJECTORY_CSV, outputs.EVENTS_CSV):
        if not (directory / f).is_file():
            raise FileNotFoundError(f"missing results file: {directory / f}")
    doc = outputs.read_json(directory / outputs.SCENARIO_JSON)
    scen = parse_scenario(doc["definition"], source=str(directory / outputs.SCENARIO_JSON))
    if doc.get("scenario_hash") != scen.hash:
        raise outputs.OutputFormatError(f"{directory / outputs.SCENARIO_JSON}: scenario hash does not match its definition")
    tr = outputs.read_trajectory(directory / outputs.TRAJECTORY_CSV, scen.config.n)
    hdr, events = outputs.read_events(directory / outputs.EVENTS_CSV)
    for path, h in ((outputs.TRAJECTORY_CSV, tr.header), (outputs.EVENTS_CSV, hdr)):
        if h.get("hash") != scen.hash:
            raise outputs.OutputFormatError(f"{directory / path}:1: hash {h.get('hash')} != scenario hash {scen.hash}")
    m = len(events)
    data = RunData(
        scen.config, tr.t, tr.is_event, tr.x, tr.xhat, tr.chi, tr.timer,
        np.array([e.t for e in events]), np.array([e.agent for e in events], dtype=int),
        [e.kind for e in events],
        np.array([e.delay for e in events]),
        np.array([e.pre for e in events]).reshape(m, 4),
        np.array([e.post for e in events]).reshape(m, 4),
    )
    return scen, data


def verify_directory(directory: Path, oracle: bool = True) -> list[CheckResult]:
    _, data = load_run(directory)
    return verify_data(data, oracle)


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    return "\n".join(f"{r.name:<{width}}  {r.status.upper():<4}  {r.detail}" for r in results)
