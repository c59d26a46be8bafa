"""Scenario files: TOML schema, validation and bundled examples.

A scenario looks like::

    name = "two_agent_tight"
    mode = "nominal"            # nominal | robust | maxtime | noisy
    horizon = 2.0
    x0 = [1.0, -1.0]

    [graph]
    edges = [[0, 1, 1.0], [1, 0, 1.0]]    # or: laplacian = [[...], ...]

    [agents]
    sigma = 0.5                 # scalar or one value per agent
    tau = 0.0
    delta = 0.0

    [noise]                     # noisy mode only
    variance = 0.1
    dt_noise = 1e-3
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dynamics import ConfigError, make_params
from .graph import GraphError, WeightedDigraph
from .simulator import DELAY_LAWS, Mode, NoiseModel, SimConfig

TOP_KEYS = {"name", "mode", "horizon", "sample_dt", "rng_seed", "x0", "max_time", "delay_law", "e_tol", "graph", "agents", "noise"}
GRAPH_KEYS = {"n", "edges", "laplacian"}
AGENT_KEYS = {"sigma", "tau", "delta", "t_max"}
NOISE_KEYS = {"variance", "dt_noise"}

DEFAULT_HORIZON = 20.0


class ScenarioError(ValueError):
    """Invalid scenario file; the message says which key is wrong and why."""


@dataclass(frozen=True)
class Scenario:
    name: str
    config: SimConfig
    data: dict  # normalised form; hashing and round-tripping use this

    @property
    def hash(self) -> str:
        return scenario_hash(self.data)

    def with_overrides(self, seed: int | None = None, horizon: float | None = None) -> "Scenario":
        data = json.loads(json.dumps(self.data))
        if seed is not None:
            data["rng_seed"] = int(seed)
        if horizon is not None:
            data["horizon"] = float(horizon)
        return parse_scenario(data, source=self.name)


def scenario_hash(data: dict) -> str:
    blob = json.dumps(data, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _fail(source: str, msg: str):
    raise ScenarioError(f"{source}: {msg}")


def _check_keys(source: str, table: dict, allowed: set[str], where: str) -> None:
    extra = sorted(set(table) - allowed)
    if extra:
        _fail(source, f"unknown key(s) {extra} in {where}; allowed: {sorted(allowed)}")


def _number(source: str, value: Any, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(source, f"{key} must be a number, got {value!r}")
    if not math.isfinite(value):
        _fail(source, f"{key} must be finite, got {value!r}")
    return float(value)


def _vector(source: str, value: Any, key: str, n: int | None = None, scalar_ok: bool = False) -> list[float] | float:
    if scalar_ok and not isinstance(value, list):
        return _number(source, value, key)
    if not isinstance(value, list):
        _fail(source, f"{key} must be a list of numbers")
    out = [_number(source, v, f"{key}[{k}]") for k, v in enumerate(value)]
    if n is not None and len(out) != n:
        _fail(source, f"{key} has {len(out)} entries, expected {n} (one per agent)")
    return out


def _parse_graph(source: str, table: Any) -> WeightedDigraph:
    if not isinstance(table, dict):
        _fail(source, "[graph] table is required")
    _check_keys(source, table, GRAPH_KEYS, "[graph]")
    has_e, has_l = "edges" in table, "laplacian" in table
    if has_e == has_l:
        _fail(source, "[graph] needs exactly one of 'edges' or 'laplacian'")
    try:
        if has_l:
            rows = table["laplacian"]
            if not isinstance(rows, list) or not rows:
                _fail(source, "graph.laplacian must be a non-empty list of rows")
            lap = [_vector(source, r, f"graph.laplacian[{k}]", len(rows)) for k, r in enumerate(rows)]
            g = WeightedDigraph.from_laplacian(lap)
            if "n" in table and table["n"] != g.n:
                _fail(source, f"graph.n = {table['n']} but the Laplacian is {g.n}x{g.n}")
            return g
        edges = table["edges"]
        if not isinstance(edges, list) or not edges:
            _fail(source, "graph.edges must be a non-empty list of [i, j, w] triples")
        triples = []
        for k, e in enumerate(edges):
            if not isinstance(e, list) or len(e) != 3:
                _fail(source, f"graph.edges[{k}] must be [i, j, w]")
            i, j, w = e
            if isinstance(i, bool) or isinstance(j, bool) or not isinstance(i, int) or not isinstance(j, int):
                _fail(source, f"graph.edges[{k}]: agent indices must be integers")
            triples.append((i, j, _number(source, w, f"graph.edges[{k}] weight")))
        n = table.get("n", 1 + max(max(i, j) for i, j, _ in triples))
        if isinstance(n, bool) or not isinstance(n, int):
            _fail(source, f"graph.n must be an integer, got {n!r}")
        return WeightedDigraph(n, tuple(triples))
    except GraphError as exc:
        _fail(source, f"graph: {exc}")


def parse_scenario(data: dict, source: str = "<scenario>") -> Scenario:
    """Validate a decoded scenario table and build its :class:`SimConfig`."""
    if not isinstance(data, dict):
        _fail(source, "scenario must be a table")
    _check_keys(source, data, TOP_KEYS, "the top level")
    g = _parse_graph(source, data.get("graph"))
    n = g.n

    if "x0" not in data:
        _fail(source, "x0 is required")
    x0 = _vector(source, data["x0"], "x0", n)

    mode_raw = data.get("mode", "nominal")
    try:
        mode = Mode(mode_raw)
    except ValueError:
        _fail(source, f"mode {mode_raw!r} is not one of {[m.value for m in Mode]}")

    agents = data.get("agents")
    if not isinstance(agents, dict) or "sigma" not in agents:
        _fail(source, "[agents] table with at least 'sigma' is required")
    _check_keys(source, agents, AGENT_KEYS, "[agents]")
    per_agent = {k: _vector(source, v, f"agents.{k}", n, scalar_ok=True) for k, v in agents.items()}

    horizon = _number(source, data.get("horizon", DEFAULT_HORIZON), "horizon")
    sample_dt = _number(source, data.get("sample_dt", 1e-3), "sample_dt")
    e_tol = _number(source, data.get("e_tol", 1e-12), "e_tol")
    seed = data.get("rng_seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        _fail(source, f"rng_seed must be a non-negative integer, got {seed!r}")
    max_time = data.get("max_time", False)
    if not isinstance(max_time, bool):
        _fail(source, f"max_time must be true or false, got {max_time!r}")
    delay_law = data.get("delay_law", "uniform")
    if delay_law not in DELAY_LAWS:
        _fail(source, f"delay_law {delay_law!r} is not one of {list(DELAY_LAWS)}")

    noise = None
    noise_tab = data.get("noise")
    if noise_tab is not None:
        if not isinstance(noise_tab, dict) or "variance" not in noise_tab:
            _fail(source, "[noise] needs 'variance'")
        _check_keys(source, noise_tab, NOISE_KEYS, "[noise]")
        noise_kw = {k: _number(source, v, f"noise.{k}") for k, v in noise_tab.items()}

    try:
        params = make_params(
            g, per_agent["sigma"], per_agent.get("tau", 0.0), per_agent.get("delta", 0.0), per_agent.get("t_max")
        )
        if noise_tab is not None:
            noise = NoiseModel(**noise_kw)
        cfg = SimConfig(
            g, params, x0, horizon, mode=mode, noise=noise, sample_dt=sample_dt, rng_seed=seed,
            delay_law=delay_law, max_time=max_time, e_tol=e_tol,
        ).validate()
    except ConfigError as exc:
        _fail(source, str(exc))

    norm = {
        "name": str(data.get("name", Path(source).stem)),
        "mode": mode.value,
        "horizon": horizon,
        "sample_dt": sample_dt,
        "rng_seed": seed,
        "x0": x0,
        "max_time": max_time,
        "delay_law": delay_law,
        "e_tol": e_tol,
        "graph": g.to_dict(),
        "agents": per_agent,
    }
    if noise is not None:
        norm["noise"] = dataclasses.asdict(noise)
    return Scenario(norm["name"], cfg, norm)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"scenario file not found: {path}")
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: not valid TOML: {exc}") from None
    return parse_scenario(data, source=str(path))


def bundled_names() -> list[str]:
    root = resources.files("etconsensus") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def bundled_path(name: str) -> Path:
    p = resources.files("etconsensus") / "scenarios" / f"{name}.toml"
    if not p.is_file():
        raise FileNotFoundError(f"no bundled scenario named {name!r}; available: {bundled_names()}")
    return Path(str(p))


def bundled_scenario(name: str) -> Scenario:
    return load_scenario(bundled_path(name))


def resolve(name_or_path: str) -> Scenario:
    """Load from a path, or from a bundled name when no such file exists."""
    p = Path(name_or_path)
    if p.suffix == ".toml" or p.exists() or name_or_path not in bundled_names():
        return load_scenario(p)
    return bundled_scenario(name_or_path)
