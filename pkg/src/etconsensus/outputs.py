"""Serialisation of runs: CSV/JSON writers, matching readers and a plot script.

Every file starts with a provenance line carrying the scenario name, hash and
seed. Floats are written with 17 significant digits so that reading a file
back gives the exact doubles that were simulated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis import Metrics
from .scenario import Scenario
from .simulator import Trajectory

TRAJECTORY_CSV = "trajectory.csv"
EVENTS_CSV = "events.csv"
METRICS_JSON = "metrics.json"
SCENARIO_JSON = "scenario.json"
PLOT_SCRIPT = "plot.py"
OUTPUT_FILES = (TRAJECTORY_CSV, EVENTS_CSV, METRICS_JSON, SCENARIO_JSON, PLOT_SCRIPT)

EVENT_COLUMNS = (
    "t", "agent", "kind", "delay",
    "x_pre", "xhat_pre", "chi_pre", "timer_pre",
    "x_post", "xhat_post", "chi_post", "timer_post",
)


class OutputFormatError(ValueError):
    """A results file could not be parsed; the message names file and line."""


def fmt(v: float) -> str:
    return format(float(v), ".17g")


def provenance(scenario: Scenario) -> str:
    return f"# scenario={scenario.name} hash={scenario.hash} seed={scenario.config.rng_seed}"


def trajectory_columns(n: int) -> list[str]:
    cols = ["t", "is_event"]
    for name in ("x", "xhat", "chi", "timer"):
        cols += [f"{name}{i}" for i in range(n)]
    return cols


def write_trajectory(path: Path, scenario: Scenario, tr: Trajectory) -> None:
    n = tr.x.shape[1]
    lines = [provenance(scenario), ",".join(trajectory_columns(n))]
    for k in range(tr.t.size):
        vals = [fmt(tr.t[k]), "1" if tr.is_event[k] else "0"]
        for arr in (tr.x, tr.xhat, tr.chi, tr.timer):
            vals += [fmt(v) for v in arr[k]]
        lines.append(",".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


def write_events(path: Path, scenario: Scenario, tr: Trajectory) -> None:
    lines = [provenance(scenario), ",".join(EVENT_COLUMNS)]
    for ev in tr.events:
        vals = [fmt(ev.t), str(ev.agent), ev.kind.value, fmt(ev.delay)]
        vals += [fmt(v) for v in ev.pre] + [fmt(v) for v in ev.post]
        lines.append(",".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


def write_json(path: Path, scenario: Scenario, payload: dict) -> None:
    doc = {"scenario": scenario.name, "scenario_hash": scenario.hash, "rng_seed": scenario.config.rng_seed}
    doc.update(payload)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_run(out: Path, scenario: Scenario, tr: Trajectory, metrics: Metrics) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory(out / TRAJECTORY_CSV, scenario, tr)
    write_events(out / EVENTS_CSV, scenario, tr)
    write_json(out / METRICS_JSON, scenario, {"metrics": metrics.to_dict()})
    write_json(out / SCENARIO_JSON, scenario, {"definition": scenario.data})
    (out / PLOT_SCRIPT).write_text(PLOT_SOURCE)


# ---------------------------------------------------------------------------
# readers
# ---------------------------------------------------------------------------


def _parse_header(path: Path, line: str) -> dict[str, str]:
    if not line.startswith("# "):
        raise OutputFormatError(f"{path}:1: missing provenance header")
    try:
        return dict(item.split("=", 1) for item in line[2:].split())
    except ValueError:
        raise OutputFormatError(f"{path}:1: malformed provenance header {line!r}") from None


@dataclass
class SavedTrajectory:
    header: dict[str, str]
    t: np.ndarray
    is_event: np.ndarray
    x: np.ndarray
    xhat: np.ndarray
    chi: np.ndarray
    timer: np.ndarray


@dataclass
class SavedEvent:
    t: float
    agent: int
    kind: str
    delay: float
    pre: tuple[float, float, float, float]
    post: tuple[float, float, float, float]


def read_trajectory(path: Path, n: int) -> SavedTrajectory:
    path = Path(path)
    lines = path.read_text().splitlines()
    if len(lines) < 3:
        raise OutputFormatError(f"{path}: truncated (no data rows)")
    header = _parse_header(path, lines[0])
    cols = trajectory_columns(n)
    if lines[1].split(",") != cols:
        raise OutputFormatError(f"{path}:2: unexpected columns, expected {n}-agent layout")
    rows = np.empty((len(lines) - 2, len(cols)))
    for k, line in enumerate(lines[2:]):
        parts = line.split(",")
        if len(parts) != len(cols):
            raise OutputFormatError(f"{path}:{k + 3}: expected {len(cols)} fields, found {len(parts)}")
        try:
            rows[k] = [float(p) for p in parts]
        except ValueError:
            raise OutputFormatError(f"{path}:{k + 3}: non-numeric field in {line[:60]!r}") from None
    blocks = [rows[:, 2 + b * n: 2 + (b + 1) * n] for b in range(4)]
    return SavedTrajectory(header, rows[:, 0], rows[:, 1] != 0, *blocks)


def read_events(path: Path) -> tuple[dict[str, str], list[SavedEvent]]:
    path = Path(path)
    lines = path.read_text().splitlines()
    if len(lines) < 2:
        raise OutputFormatError(f"{path}: truncated")
    header = _parse_header(path, lines[0])
    if tuple(lines[1].split(",")) != EVENT_COLUMNS:
        raise OutputFormatError(f"{path}:2: unexpected columns")
    events = []
    for k, line in enumerate(lines[2:]):
        parts = line.split(",")
        if len(parts) != len(EVENT_COLUMNS):
            raise OutputFormatError(f"{path}:{k + 3}: expected {len(EVENT_COLUMNS)} fields, found {len(parts)}")
        try:
            nums = [float(p) for p in parts[4:]]
            events.append(SavedEvent(float(parts[0]), int(parts[1]), parts[2], float(parts[3]),
                                     tuple(nums[:4]), tuple(nums[4:])))
        except ValueError:
            raise OutputFormatError(f"{path}:{k + 3}: malformed event row {line[:60]!r}") from None
    return header, events


def read_json(path: Path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise OutputFormatError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None


def write_sweep(path: Path, scenario: Scenario, rows) -> None:
    lines = [provenance(scenario), "sigma,r_com,cost,n_events"]
    lines += [f"{fmt(r.sigma)},{fmt(r.r_com)},{fmt(r.cost)},{r.n_events}" for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")


PLOT_SOURCE = '''"""Render figures from trajectory.csv / events.csv / metrics.json in this directory.

Usage: python plot.py   (needs matplotlib; writes three PNG files)
"""
import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = Path(__file__).resolve().parent


def read_csv(name):
    with open(here / name) as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    return rows[0], rows[1:]


cols, rows = read_csv("trajectory.csv")
data = {c: [float(r[k]) if c != "kind" else r[k] for r in rows] for k, c in enumerate(cols)}
n = sum(1 for c in cols if c.startswith("xhat"))
t = data["t"]
x = [data[f"x{i}"] for i in range(n)]
chi = [data[f"chi{i}"] for i in range(n)]
xbar = sum(col[0] for col in x) / n
v = [sum((x[i][k] - xbar) ** 2 + chi[i][k] for i in range(n)) for k in range(len(t))]

ecols, erows = read_csv("events.csv")
ev_t = [float(r[0]) for r in erows]
ev_a = [int(r[1]) for r in erows]
metrics = json.loads((here / "metrics.json").read_text())["metrics"]

fig, ax = plt.subplots(2, 1, sharex=True, figsize=(7, 6))
for i in range(n):
    ax[0].plot(t, x[i], label=f"agent {i}")
ax[0].set_ylabel("x")
ax[0].legend(fontsize="small")
ax[1].semilogy(t, [max(val, 1e-300) for val in v])
ax[1].set_ylabel("V")
ax[1].set_xlabel("t")
fig.savefig(here / "trajectories.png", dpi=150)

fig, ax = plt.subplots(2, 1, sharex=True, figsize=(7, 6))
for i in range(n):
    ax[0].plot(t, chi[i], label=f"agent {i}")
ax[0].set_ylabel("chi")
ax[1].scatter(ev_t, ev_a, marker="|", s=80)
ax[1].set_ylabel("agent")
ax[1].set_xlabel("t")
fig.savefig(here / "clocks_events.png", dpi=150)

fig, ax = plt.subplots(figsize=(7, 4))
for entry in metrics["inter_event"]:
    i = entry["agent"]
    times = [tt for tt, a in zip(ev_t, ev_a) if a == i]
    gaps = [b - a for a, b in zip(times, times[1:])]
    pts = ax.scatter(times[1:], gaps, s=8, label=f"agent {i}")
    ax.axhline(entry["bound"], color=pts.get_facecolor()[0], ls="--", lw=0.8)
ax.set_yscale("log")
ax.set_xlabel("t")
ax.set_ylabel("inter-event time")
ax.legend(fontsize="small")
fig.savefig(here / "inter_event.png", dpi=150)
'''
