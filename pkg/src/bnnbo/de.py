"""DE/rand/1/bin baseline ranked by the same FoM as the BNN loops."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, asdict
from typing import Any, Callable

import numpy as np

from .evaluators.base import Evaluator
from .optimizer import EvaluationDatabase, EvaluationRecord, RunResult, convergence_curve
from .problem import Fidelity, ProblemSpec

log = logging.getLogger(__name__)


@dataclass
class DeConfig:
    population: int | None = None
    F: float = 0.8
    CR: float = 0.9
    budget: int = 5000
    seed: int = 0
    stop_on_feasible: bool = False

    def resolved_population(self, d: int) -> int:
        return self.population if self.population else max(4, min(10 * d, 100))

    def validate(self, d: int) -> None:
        np_ = self.resolved_population(d)
        if np_ < 4:
            raise ValueError("population must be >= 4")
        if not 0.0 < self.F <= 2.0:
            raise ValueError("F must be in (0, 2]")
        if not 0.0 <= self.CR <= 1.0:
            raise ValueError("CR must be in [0, 1]")
        if self.budget < np_:
            raise ValueError("budget must cover at least one population")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class DeState:
    rng: np.random.Generator
    database: EvaluationDatabase = field(default_factory=EvaluationDatabase)
    population: np.ndarray | None = None
    members: list[EvaluationRecord | None] = field(default_factory=list)
    generation: int = 0
    done: bool = False
    stop_reason: str = ""
    evaluation_time: float = 0.0
    trace: list[dict[str, Any]] = field(default_factory=list)


def _better_or_equal(trial: EvaluationRecord, member: EvaluationRecord | None) -> bool:
    return member is None or trial.fom <= member.fom


class DifferentialEvolution:
    name = "de"

    def __init__(self, problem: ProblemSpec, evaluator: Evaluator, config: DeConfig,
                 state: DeState | None = None):
        config.validate(problem.space.dims)
        self.problem = problem
        self.evaluator = evaluator
        self.config = config
        self.np = config.resolved_population(problem.space.dims)
        self.state = state if state is not None else DeState(np.random.default_rng(config.seed))

    @property
    def done(self) -> bool:
        return self.state.done

    def _evaluate(self, Z: np.ndarray) -> list[EvaluationRecord | None]:
        st = self.state
        t0 = time.perf_counter()
        results = self.evaluator.evaluate_batch([(z, Fidelity.HIGH) for z in Z])
        elapsed = time.perf_counter() - t0
        st.evaluation_time += elapsed
        out = []
        for z, res in zip(Z, results):
            if isinstance(res, Exception):
                log.warning("evaluation failed in generation %d: %s", st.generation, res)
                out.append(None)
            else:
                out.append(st.database.add(self.problem, z, res, st.generation, None, elapsed / len(Z)))
        return out

    def step(self) -> None:
        st, cfg = self.state, self.config
        if st.done:
            return
        d = self.problem.space.dims
        if st.population is None:
            st.population = st.rng.random((self.np, d))
            st.members = self._evaluate(st.population)
        else:
            st.generation += 1
            pop = st.population
            trials = np.empty_like(pop)
            for i in range(self.np):
                others = [j for j in range(self.np) if j != i]
                r1, r2, r3 = st.rng.choice(others, size=3, replace=False)
                mutant = np.clip(pop[r1] + cfg.F * (pop[r2] - pop[r3]), 0.0, 1.0)
                cross = st.rng.random(d) < cfg.CR
                cross[st.rng.integers(d)] = True
                trials[i] = np.where(cross, mutant, pop[i])
            recs = self._evaluate(trials)
            for i, rec in enumerate(recs):
                if rec is not None and _better_or_equal(rec, st.members[i]):
                    st.population[i] = trials[i]
                    st.members[i] = rec
        best = st.database.best(Fidelity.HIGH)
        st.trace.append({"iteration": st.generation, "n_high": len(st.database),
                         "best_fom": best.fom if best else math.inf})
        if len(st.database) + self.np > cfg.budget:
            st.done, st.stop_reason = True, "budget"
        elif cfg.stop_on_feasible and st.database.best_feasible(Fidelity.HIGH) is not None:
            st.done, st.stop_reason = True, "feasible"

    def run(self, callback: Callable[["DifferentialEvolution"], None] | None = None) -> RunResult:
        while not self.state.done:
            self.step()
            if callback is not None:
                callback(self)
        return self.result()

    def result(self) -> RunResult:
        st = self.state
        db = st.database
        diag = {
            "algorithm": self.name,
            "iterations": st.generation,
            "n_high": len(db),
            "n_low": 0,
            "n_high_new": len(db),
            "restarts": 0,
            "modeling_time": 0.0,
            "evaluation_time": st.evaluation_time,
            "stop_reason": st.stop_reason,
        }
        return RunResult(db.result_best(Fidelity.HIGH), {Fidelity.LOW: None, Fidelity.HIGH: db.best()},
                         db, convergence_curve(db), st.trace, diag)


def run_de(problem: ProblemSpec, evaluator: Evaluator, config: DeConfig) -> RunResult:
    return DifferentialEvolution(problem, evaluator, config).run()
