"""Command-line entry point: ``etconsensus run|verify|sweep``.

Exit codes: 0 success, 1 an invariant check failed, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, outputs, verify
from .scenario import Scenario, ScenarioError, resolve
from .simulator import FlowSetViolation, Mode, run

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_USAGE = 2

log = logging.getLogger("etconsensus")


class UsageError(Exception):
    pass


def parse_grid(text: str) -> list[float]:
    """``"0.1,0.2,0.5"`` or ``"start:step:stop"`` (inclusive stop)."""
    text = text.strip()
    if not text:
        raise UsageError("empty sigma grid")
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) != 3 or parts[1] <= 0:
                raise UsageError(f"range grid must be start:step:stop with step > 0, got {text!r}")
            start, step, stop = parts
            count = int(np.floor((stop - start) / step + 1e-9)) + 1
            values = [round(start + k * step, 12) for k in range(max(count, 0))]
        else:
            values = [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise UsageError(f"cannot parse sigma grid {text!r}") from None
    if not values:
        raise UsageError("empty sigma grid")
    bad = [v for v in values if not 0.0 < v < 1.0]
    if bad:
        raise UsageError(f"sigma values must lie in (0, 1), got {bad}")
    return values


def _load(args) -> Scenario:
    scen = resolve(args.scenario)
    return scen.with_overrides(seed=getattr(args, "seed", None), horizon=getattr(args, "horizon", None))


def _prepare_out(out: Path, force: bool, names) -> None:
    if out.exists() and not out.is_dir():
        raise UsageError(f"output path {out} exists and is not a directory")
    if out.is_dir() and any((out / f).exists() for f in names) and not force:
        raise UsageError(f"output directory {out} already holds results; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)


def cmd_run(args) -> int:
    scen = _load(args)
    out = Path(args.out)
    _prepare_out(out, args.force, outputs.OUTPUT_FILES)
    tr = run(scen.config)
    metrics = analysis.compute_metrics(tr)
    outputs.write_run(out, scen, tr, metrics)
    print(f"{scen.name}: {len(tr.events)} events, r_com = {metrics.r_com:.6g}, cost = {metrics.cost:.6g} -> {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    target = Path(args.scenario)
    if target.is_dir():
        results = verify.verify_directory(target, oracle=not args.no_oracle)
        label = str(target)
    else:
        scen = _load(args)
        results = verify.verify_trajectory(run(scen.config), oracle=not args.no_oracle)
        label = scen.name
    print(f"verify {label}")
    print(verify.format_table(results))
    return EXIT_OK if all(r.ok for r in results) else EXIT_INVARIANT


def cmd_sweep(args) -> int:
    scen = _load(args)
    grid = parse_grid(args.sigma_grid)
    out = Path(args.out)
    _prepare_out(out, args.force, ("sweep.csv", "wiener_check.json"))
    rows = analysis.sigma_sweep(scen.config, grid, workers=args.workers)
    outputs.write_sweep(out / "sweep.csv", scen, rows)
    for r in rows:
        print(f"sigma = {r.sigma:<5g} r_com = {r.r_com:<10.6g} cost = {r.cost:.6g}")
    status = EXIT_OK
    if scen.config.mode is Mode.NOISY:
        chk = analysis.wiener_band_check(scen.config, n_seeds=args.seeds)
        outputs.write_json(out / "wiener_check.json", scen, {"wiener_check": dataclasses.asdict(chk)})
        print(
            f"wiener band: variance {chk.variance:.4g} (target {chk.target_variance:.4g}), "
            f"mean {chk.mean:.4g} -> {'PASS' if chk.passed else 'FAIL'}"
        )
        status = EXIT_OK if chk.passed else EXIT_INVARIANT
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="etconsensus", description="Event-triggered average consensus simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("scenario", help="scenario TOML file or bundled scenario name")
        sp.add_argument("--seed", type=int, help="override rng_seed")
        sp.add_argument("--horizon", type=float, help="override the simulated horizon")

    r = sub.add_parser("run", help="simulate and write trajectory, events, metrics and a plot script")
    common(r)
    r.add_argument("--out", required=True)
    r.add_argument("--force", action="store_true", help="overwrite existing results")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="run invariant checks on a scenario or a results directory")
    common(v)
    v.add_argument("--no-oracle", action="store_true", help="skip the fixed-step reference comparison")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("sweep", help="sweep a common sigma over all agents")
    common(s)
    s.add_argument("--sigma-grid", default="0.1:0.1:0.9")
    s.add_argument("--seeds", type=int, default=100, help="seeds for the noise band check")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True)
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors already
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (outputs.OutputFormatError, FlowSetViolation) as exc:
        print(f"FAIL: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ScenarioError, UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
