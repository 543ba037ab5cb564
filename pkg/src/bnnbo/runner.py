"""Experiment execution behind the command line: run, resume, report."""
from __future__ import annotations

import json
import logging
import statistics
import time
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import persistence as io
from .config import RunConfig
from .de import DifferentialEvolution
from .errors import ConfigError, CorruptCheckpoint, EvaluatorFailure, NoResults
from .evaluators import SubprocessEvaluator, make_benchmark
from .evaluators.base import Evaluator
from .optimizer import BnnBo
from .problem import Fidelity, ProblemSpec

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1

Driver = BnnBo | DifferentialEvolution
IterationHook = Callable[[Driver, Path], None]


def build_evaluator(cfg: RunConfig) -> tuple[ProblemSpec, Evaluator]:
    ev = cfg.evaluator
    if ev["type"] == "synthetic":
        try:
            bench = make_benchmark(ev["name"], **ev.get("params", {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"evaluator: {exc}") from exc
        if cfg.problem is not None and cfg.problem != bench.problem:
            raise ConfigError(f"problem definition does not match synthetic benchmark {ev['name']!r}")
        return bench.problem, bench
    try:
        client = SubprocessEvaluator(ev["command"], cfg.problem, ev.get("timeout", 300.0),
                                     cost_ratio=ev.get("cost_ratio", 1.0))
    except OSError as exc:
        raise EvaluatorFailure(f"cannot start simulator {ev['command']}: {exc}") from exc
    return cfg.problem, client


def make_driver(cfg: RunConfig, seed: int, problem: ProblemSpec, evaluator: Evaluator, state=None) -> Driver:
    if cfg.algorithm == "de":
        return DifferentialEvolution(problem, evaluator, replace(cfg.de, seed=seed), state)
    return BnnBo(problem, evaluator, replace(cfg.optimizer, seed=seed), state)


def apply_overrides(cfg: RunConfig, seed: int | None = None, budget: int | None = None,
                    out: str | None = None) -> RunConfig:
    data = cfg.to_dict()
    if seed is not None:
        data["seeds"] = [seed]
    if budget is not None:
        data["optimizer"]["budget"] = budget
        data["de"]["budget"] = budget
    if out is not None:
        data["output_dir"] = out
    return RunConfig.from_dict(data)


def _checkpoint_payload(cfg: RunConfig, seed: int, driver: Driver, written: int, elapsed: float) -> dict:
    return {"format": CHECKPOINT_FORMAT, "config": cfg.to_dict(), "seed": seed, "state": driver.state,
            "written": written, "elapsed": elapsed}


def _drive(cfg: RunConfig, seed: int, seed_dir: Path, driver: Driver, written: int, elapsed: float,
           on_iteration: IterationHook | None) -> dict[str, Any]:
    history = seed_dir / io.HISTORY
    t0 = time.perf_counter()

    def persist():
        nonlocal written
        db = driver.state.database
        io.append_history(history, db.records[written:])
        written = len(db)
        io.save_checkpoint(seed_dir / io.CHECKPOINT,
                           _checkpoint_payload(cfg, seed, driver, written, elapsed + time.perf_counter() - t0))

    while not driver.done:
        driver.step()
        persist()
        if on_iteration is not None:
            on_iteration(driver, seed_dir)

    result = driver.result()
    total = elapsed + time.perf_counter() - t0
    io.write_convergence(seed_dir / io.CONVERGENCE, result.database)
    summary = io.build_summary(cfg.algorithm, seed, result.database, result.diagnostics, total)
    io.write_summary(seed_dir / io.SUMMARY, summary)
    io.save_checkpoint(seed_dir / io.CHECKPOINT, _checkpoint_payload(cfg, seed, driver, written, total))
    log.info("seed %d finished: success=%s evals_to_feasible=%s best_objective=%s", seed,
             summary["success"], summary["evals_to_feasible"], summary["best_objective"])
    return summary


def run_seed(cfg: RunConfig, seed: int, on_iteration: IterationHook | None = None) -> dict[str, Any]:
    seed_dir = Path(cfg.output_dir) / str(seed)
    seed_dir.mkdir(parents=True, exist_ok=True)
    (seed_dir / io.HISTORY).write_text("", encoding="utf-8")
    problem, evaluator = build_evaluator(cfg)
    with evaluator:
        driver = make_driver(cfg, seed, problem, evaluator)
        return _drive(cfg, seed, seed_dir, driver, 0, 0.0, on_iteration)


def run_all(cfg: RunConfig, on_iteration: IterationHook | None = None) -> list[dict[str, Any]]:
    return [run_seed(cfg, seed, on_iteration) for seed in cfg.seeds]


def resume(checkpoint: str | Path, on_iteration: IterationHook | None = None) -> dict[str, Any] | None:
    """Continue a checkpointed run; returns None if it had already finished."""
    checkpoint = Path(checkpoint)
    payload = io.load_checkpoint(checkpoint)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise CorruptCheckpoint(f"{checkpoint}: unknown payload format {payload.get('format')!r}")
    state = payload["state"]
    seed_dir = checkpoint.parent
    if state.done and (seed_dir / io.SUMMARY).exists():
        log.info("run in %s already complete", seed_dir)
        return None
    cfg = RunConfig.from_dict(payload["config"])
    io.truncate_history(seed_dir / io.HISTORY, payload["written"])
    problem, evaluator = build_evaluator(cfg)
    with evaluator:
        driver = make_driver(cfg, payload["seed"], problem, evaluator, state)
        return _drive(cfg, payload["seed"], seed_dir, driver, payload["written"], payload["elapsed"],
                      on_iteration)


# -- reporting ----------------------------------------------------------------

def _mean_curve(csv_paths: list[Path]) -> np.ndarray:
    """Mean best-FoM-so-far over runs, truncated to the shortest run."""
    curves = []
    for path in csv_paths:
        rows = [r for r in io.read_convergence(path) if r["fidelity"] == int(Fidelity.HIGH)]
        if rows:
            curves.append([r["best_fom_so_far"] for r in rows])
    if not curves:
        return np.empty(0)
    n = min(len(c) for c in curves)
    return np.mean([c[:n] for c in curves], axis=0)


def curve_auc(curve: np.ndarray, n: int | None = None) -> float:
    """Trapezoidal area under a per-evaluation curve over its first ``n`` points."""
    y = np.asarray(curve, dtype=float)[:n]
    if len(y) < 2:
        return 0.0
    return float(np.trapezoid(y, np.arange(1, len(y) + 1)))


def collect(results_dir: str | Path) -> dict[str, list[tuple[dict[str, Any], Path]]]:
    groups: dict[str, list[tuple[dict[str, Any], Path]]] = {}
    for path in sorted(Path(results_dir).rglob(io.SUMMARY)):
        summary = json.loads(path.read_text(encoding="utf-8"))
        groups.setdefault(summary["algorithm"], []).append((summary, path.parent / io.CONVERGENCE))
    if not groups:
        raise NoResults(f"no {io.SUMMARY} under {results_dir}")
    return groups


def _stat(values, fn, fmt="{:.6g}"):
    return fmt.format(fn(values)) if values else "n/a"


def report(results_dir: str | Path) -> str:
    groups = collect(results_dir)
    lines = []
    curves = {}
    for alg, runs in groups.items():
        sums = [s for s, _ in runs]
        ok = [s for s in sums if s["success"]]
        objs = [s["best_objective"] for s in ok]
        curves[alg] = _mean_curve([p for _, p in runs if p.exists()])
        lines += [
            f"algorithm {alg}",
            f"  success rate               {len(ok)}/{len(sums)}",
            f"  median evals-to-feasible   {_stat([s['evals_to_feasible'] for s in ok], statistics.median, '{:g}')}",
            f"    after initialization     "
            f"{_stat([s['evals_to_feasible_after_init'] for s in ok], statistics.median, '{:g}')}",
            f"  best objective min         {_stat(objs, min)}",
            f"  best objective max         {_stat(objs, max)}",
            f"  best objective mean        {_stat(objs, statistics.fmean)}",
            f"  mean modeling time [s]     {statistics.fmean(s['modeling_time'] for s in sums):.3f}",
            f"  mean evaluation time [s]   {statistics.fmean(s['evaluation_time'] for s in sums):.3f}",
            f"  AUC of mean FoM curve      {curve_auc(curves[alg]):.6g} over {len(curves[alg])} evaluations",
        ]
    names = sorted(curves)
    pairs = [(a, b) for i, a in enumerate(names) for b in names[i + 1:]]
    if pairs:
        lines.append("pairwise AUC (common evaluation range)")
    for a, b in pairs:
        n = min(len(curves[a]), len(curves[b]))
        auc_a, auc_b = curve_auc(curves[a], n), curve_auc(curves[b], n)
        rel = f"{100.0 * (1.0 - auc_a / auc_b):+.1f}%" if auc_b else "n/a"
        lines.append(f"  {a} vs {b}: {auc_a:.6g} vs {auc_b:.6g} over {n} evaluations ({a} smaller by {rel})")
    return "\n".join(lines)
