"""Command-line front end: validate a config, run one episode, or sweep mu x seeds x schemes."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .harness import SCHEMES, EpisodeMetrics, EpisodeOptions, run_episode, sweep_mu
from .planner import PlannerSettings
from .risk import RiskConfig
from .scenario import Scenario, ScenarioError, SchemaError, scenario_from_dict, scenario_to_dict, validate_scenario

log = logging.getLogger(__name__)

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3

PER_SLOT_HEADER = ["scheme", "mu", "seed", "slot", "sum_rate", "user_id", "user_rate"]
PER_EPISODE_HEADER = ["scheme", "mu", "seed", "avg_rate_p1", "avg_rate_p2", "variance", "jain", "iterations"]
TRACE_HEADER = ["call", "iteration", "objective", "block", "status"]


@dataclass(frozen=True)
class RunConfig:
    """Everything a config file fixes besides the scenario."""

    mus: tuple[float, ...] = (0.0, -2.0, -5.0, -10.0)
    planner: PlannerSettings = field(default_factory=PlannerSettings)
    expected_fading: bool = False

    def options(self) -> EpisodeOptions:
        return EpisodeOptions(planner=self.planner, expected_fading=self.expected_fading)


class SolverFailure(RuntimeError):
    """An experiment stopped inside the planner or a baseline."""


def _guarded(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except OSError:
        raise
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        raise SolverFailure(str(exc)) from exc


class ConfigError(ValueError):
    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


_SETTINGS_KEYS = {"mu", "max_iterations", "tolerance", "history_in_objective", "expected_fading", "rate_unit"}


def _parse_settings(raw: Any, problems: list[str]) -> RunConfig:
    if raw is None:
        return RunConfig()
    if not isinstance(raw, dict):
        problems.append(f"settings: expected an object, got {type(raw).__name__}")
        return RunConfig()
    for key in raw:
        if key not in _SETTINGS_KEYS:
            problems.append(f"settings.{key}: unknown field")
    d = PlannerSettings()

    def number(key, default):
        v = raw.get(key, default)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            problems.append(f"settings.{key}: type mismatch, expected number, got {type(v).__name__}")
            return default
        return float(v)

    def flag(key, default):
        v = raw.get(key, default)
        if not isinstance(v, bool):
            problems.append(f"settings.{key}: type mismatch, expected boolean, got {type(v).__name__}")
            return default
        return v

    mus = raw.get("mu", list(RunConfig().mus))
    if isinstance(mus, (int, float)) and not isinstance(mus, bool):
        mus = [mus]
    if not isinstance(mus, list) or any(isinstance(m, bool) or not isinstance(m, (int, float)) for m in mus):
        problems.append("settings.mu: type mismatch, expected a number or a list of numbers")
        mus = list(RunConfig().mus)
    for m in mus:
        if m > 0:
            problems.append(f"settings.mu: must be <= 0 ({m})")
    iters = raw.get("max_iterations", d.max_iterations)
    if isinstance(iters, bool) or not isinstance(iters, int):
        problems.append(f"settings.max_iterations: type mismatch, expected integer, got {type(iters).__name__}")
        iters = d.max_iterations
    tol = number("tolerance", d.tolerance)
    unit = number("rate_unit", d.rate_unit)
    history = flag("history_in_objective", d.history_in_objective)
    expected = flag("expected_fading", False)
    try:
        planner = PlannerSettings(max_iterations=iters, tolerance=tol, history_in_objective=history, rate_unit=unit)
    except ValueError as exc:
        problems.append(f"settings: {exc}")
        planner = d
    return RunConfig(mus=tuple(float(m) for m in mus), planner=planner, expected_fading=expected)


def parse_config(path) -> tuple[Scenario, RunConfig]:
    """Strict parse of a scenario file with an optional ``settings`` block.

    Raises ConfigError listing every problem found.
    """
    text = Path(path).read_text()
    if not text.strip():
        raise ConfigError([f"{path}: empty file"])
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: parse error: {exc}"]) from None
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: expected a JSON object"])
    data = dict(data)
    problems: list[str] = []
    cfg = _parse_settings(data.pop("settings", None), problems)
    scenario = None
    try:
        scenario = validate_scenario(scenario_from_dict(data))
    except (SchemaError, ScenarioError) as exc:
        problems = exc.problems + problems
    if problems:
        raise ConfigError(problems)
    return scenario, cfg


def config_to_dict(scenario: Scenario, cfg: RunConfig) -> dict:
    out = scenario_to_dict(scenario)
    out["settings"] = {
        "mu": list(cfg.mus),
        "max_iterations": cfg.planner.max_iterations,
        "tolerance": cfg.planner.tolerance,
        "history_in_objective": cfg.planner.history_in_objective,
        "expected_fading": cfg.expected_fading,
        "rate_unit": cfg.planner.rate_unit,
    }
    return out


def paper_config_path() -> Path:
    return Path(str(resources.files("resilient_uav") / "data" / "paper_setup.json"))


# ---------------------------------------------------------------------------
# result files
# ---------------------------------------------------------------------------

def scheme_label(m: EpisodeMetrics) -> str:
    return f"pro_alg(mu={m.mu:g})" if m.scheme == "pro_alg" else m.scheme


def _order_key(m: EpisodeMetrics):
    return (SCHEMES.index(m.scheme), -m.mu, m.seed)


def summarize(metrics: Sequence[EpisodeMetrics]) -> dict:
    """Per-scheme means over seeds and the scheme orderings they imply."""
    groups: dict[str, list[EpisodeMetrics]] = {}
    for m in sorted(metrics, key=_order_key):
        groups.setdefault(scheme_label(m), []).append(m)
    schemes = {}
    for label, ms in groups.items():
        var = np.array([m.variance for m in ms])
        schemes[label] = {
            "episodes": len(ms),
            "seeds": [m.seed for m in ms],
            "avg_rate_p1": float(np.mean([m.avg_rate_p1 for m in ms])),
            "avg_rate_p2": float(np.mean([m.avg_rate_p2 for m in ms])),
            "variance": float(var.mean()),
            "variance_std": float(var.std()),
            "jain": float(np.mean([m.jain for m in ms])),
            "iterations": float(np.mean([m.iterations for m in ms])),
        }
    labels = list(schemes)
    return {
        "schemes": schemes,
        "orderings": {
            "avg_rate_p1_desc": sorted(labels, key=lambda s: -schemes[s]["avg_rate_p1"]),
            "variance_asc": sorted(labels, key=lambda s: schemes[s]["variance"]),
            "jain_desc": sorted(labels, key=lambda s: -schemes[s]["jain"]),
        },
    }


def emit_results(metrics: Sequence[EpisodeMetrics], out_dir, user_ids: Sequence[int] | None = None) -> list[Path]:
    """Write per_slot.csv, per_episode.csv, summary.json and traces/*.csv; returns the top-level files."""
    if not metrics:
        raise ValueError("no episodes to write")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ordered = sorted(metrics, key=_order_key)
    per_slot, per_episode, summary = out / "per_slot.csv", out / "per_episode.csv", out / "summary.json"
    with open(per_slot, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PER_SLOT_HEADER)
        for m in ordered:
            K, N = m.user_rates.shape
            ids = list(user_ids) if user_ids is not None else list(range(1, K + 1))
            for n in range(N):
                for k in range(K):
                    w.writerow([m.scheme, repr(m.mu), m.seed, n + 1, repr(float(m.slot_sums[n])), ids[k],
                                repr(float(m.user_rates[k, n]))])
    with open(per_episode, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PER_EPISODE_HEADER)
        for m in ordered:
            w.writerow([m.scheme, repr(m.mu), m.seed, repr(m.avg_rate_p1), repr(m.avg_rate_p2), repr(m.variance),
                        repr(m.jain), m.iterations])
    with open(summary, "w") as fh:
        json.dump(summarize(ordered), fh, indent=2, sort_keys=True)
        fh.write("\n")
    traces = out / "traces"
    traces.mkdir(exist_ok=True)
    for m in ordered:
        path = traces / f"{m.scheme}_mu{m.mu:g}_seed{m.seed}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_HEADER)
            for call, tr in enumerate(m.traces, start=1):
                by_iter: dict[int, list[tuple[str, str]]] = {}
                for it, block, rep in tr.reports:
                    by_iter.setdefault(it, []).append((block, rep.status))
                for it, obj in enumerate(tr.objectives):
                    for block, status in by_iter.get(it, [("init", "")]):
                        w.writerow([call, it, repr(float(obj)), block, status])
                if tr.rounded_objective is not None:
                    for block, status in by_iter.get(-1, [("final", "")]):
                        w.writerow([call, "final", repr(float(tr.rounded_objective)), block, status])
    return [per_slot, per_episode, summary]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _options(cfg: RunConfig, args) -> EpisodeOptions:
    opts = cfg.options()
    planner = opts.planner
    if args.no_history:
        planner = PlannerSettings(max_iterations=planner.max_iterations, tolerance=planner.tolerance,
                                  risk=planner.risk, history_in_objective=False, rate_unit=planner.rate_unit,
                                  solver=planner.solver)
    return EpisodeOptions(planner=planner, expected_fading=opts.expected_fading or args.expected_fading)


def _cmd_validate(args) -> int:
    scenario, cfg = parse_config(args.config)
    print(f"ok: {scenario.n_uavs} UAVs, {scenario.n_users} users, {scenario.n_slots} slots, "
          f"failures at {scenario.failure_slots() or 'none'}; mu grid {list(cfg.mus)}")
    return EXIT_OK


def _cmd_run(args) -> int:
    scenario, cfg = parse_config(args.config)
    mu = args.mu[0] if args.mu else (cfg.mus[-1] if args.scheme == "pro_alg" else 0.0)
    RiskConfig(mu)
    seed = scenario.seed + args.seed
    m = _guarded(run_episode, scenario, args.scheme, seed, mu, _options(cfg, args))
    files = emit_results([m], args.out, [k.id for k in scenario.users])
    print(f"{scheme_label(m)} seed {seed}: p1 {m.avg_rate_p1:.6g} bits/s, p2 {m.avg_rate_p2:.6g} bits/s, "
          f"variance {m.variance:.6g}, jain {m.jain:.4f}; wrote {', '.join(str(f) for f in files)}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    scenario, cfg = parse_config(args.config)
    mus = tuple(args.mu) if args.mu else cfg.mus
    for mu in mus:
        RiskConfig(mu)
    seeds = [scenario.seed + i for i in range(args.seeds)]
    metrics = _guarded(sweep_mu, scenario, mus, seeds, _options(cfg, args), workers=args.workers)
    if args.scheme:
        metrics = [m for m in metrics if m.scheme in args.scheme]
    files = emit_results(metrics, args.out, [k.id for k in scenario.users] if scenario.random_users is None else None)
    summary = summarize(metrics)
    for label, row in summary["schemes"].items():
        print(f"{label:>18}: p1 {row['avg_rate_p1']:.6g}  p2 {row['avg_rate_p2']:.6g}  "
              f"var {row['variance']:.6g}  jain {row['jain']:.4f}")
    print("wrote " + ", ".join(str(f) for f in files))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="resilient-uav", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", nargs="?", default=None, help="scenario JSON (default: shipped paper setup)")

    def experiment(sp):
        sp.add_argument("--mu", type=float, nargs="+", help="risk sensitivity value(s), each <= 0")
        sp.add_argument("--out", default="results", help="output directory")
        sp.add_argument("--expected-fading", action="store_true", help="plan with unit fading instead of the draws")
        sp.add_argument("--no-history", action="store_true", help="replan without realized rates in the utility")

    v = sub.add_parser("validate", help="check a config file and exit")
    common(v)
    v.set_defaults(func=_cmd_validate)

    r = sub.add_parser("run", help="one scheme, one seed")
    common(r)
    experiment(r)
    r.add_argument("--scheme", choices=SCHEMES, default="pro_alg")
    r.add_argument("--seed", type=int, default=0, help="offset added to the scenario seed")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("sweep", help="mu grid x seeds x schemes")
    common(s)
    experiment(s)
    s.add_argument("--seeds", type=int, default=10, help="number of seeds (scenario seed + index)")
    s.add_argument("--scheme", choices=SCHEMES, nargs="+", help="keep only these schemes in the output")
    s.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: RESILIENT_UAV_WORKERS or the CPU count)")
    s.set_defaults(func=_cmd_sweep)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.config is None:
        args.config = str(paper_config_path())
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return EXIT_VALIDATION
    except SolverFailure as exc:
        print(f"error: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"error: I/O failure at {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
