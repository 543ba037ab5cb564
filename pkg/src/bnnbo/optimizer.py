"""BNN-based constrained Bayesian optimization loops.

:class:`BnnBo` runs either the single-fidelity loop (one single-head BNN per
metric, constrained Thompson sampling inside a trust region) or the
two-fidelity loop (two-head BNNs trained on both sources, conservative
shifted utility, random fidelity per pick, trust region driven by
high-fidelity results only).

The loop is a stepper: all mutable state lives in :class:`LoopState`, which
is what gets checkpointed, so a resumed run continues bit-identically.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, asdict, replace
from typing import Any, Callable, Iterable

import numpy as np

from . import bnn, trust_region as tr
from .acquisition import AcquisitionConfig, fom_delta, select_multi_fidelity, select_single_fidelity
from .bnn import BnnArchitecture, BnnParams, GammaPrior
from .errors import Divergence, EvaluatorFailure
from .evaluators.base import Evaluator
from .hmc import HmcConfig
from .problem import Fidelity, PerformanceVector, ProblemSpec, denormalize, fom, is_feasible, rank_key
from .trust_region import TrustRegionConfig, TrustRegionState

log = logging.getLogger(__name__)

SINGLE = "single_fidelity"
MULTI = "multi_fidelity"


@dataclass(frozen=True)
class EvaluationRecord:
    index: int
    z: tuple[float, ...]
    values: tuple[float, ...]
    fidelity: Fidelity
    perf: PerformanceVector
    fom: float
    feasible: bool
    iteration: int
    tr_length: float | None = None
    eval_seconds: float = 0.0

    @property
    def f(self) -> tuple[float, ...]:
        return self.perf.f

    def to_dict(self) -> dict[str, Any]:
        # wall-clock time is left out so that serialized histories are reproducible
        return {
            "index": self.index,
            "iteration": self.iteration,
            "fidelity": int(self.fidelity),
            "z": list(self.z),
            "values": list(self.values),
            "f": list(self.perf.f),
            "fom": self.fom,
            "feasible": self.feasible,
            "tr_length": self.tr_length,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EvaluationRecord":
        fid = Fidelity(d["fidelity"])
        return cls(d["index"], tuple(d["z"]), tuple(d["values"]), fid, PerformanceVector(tuple(d["f"]), fid),
                   d["fom"], d["feasible"], d["iteration"], d.get("tr_length"))


class EvaluationDatabase:
    """Append-only list of evaluation records."""

    def __init__(self, records: Iterable[EvaluationRecord] = ()):
        self._records: list[EvaluationRecord] = list(records)

    def __len__(self):
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    def __getitem__(self, i):
        return self._records[i]

    @property
    def records(self) -> tuple[EvaluationRecord, ...]:
        return tuple(self._records)

    def add(self, problem: ProblemSpec, z: np.ndarray, perf: PerformanceVector, iteration: int,
            tr_length: float | None = None, eval_seconds: float = 0.0) -> EvaluationRecord:
        rec = EvaluationRecord(
            index=len(self._records),
            z=tuple(float(v) for v in z),
            values=tuple(float(v) for v in denormalize(problem.space, np.asarray(z))),
            fidelity=perf.fidelity,
            perf=perf,
            fom=fom(problem, perf),
            feasible=is_feasible(problem, perf),
            iteration=iteration,
            tr_length=tr_length,
            eval_seconds=eval_seconds,
        )
        self._records.append(rec)
        return rec

    def of(self, fidelity: Fidelity) -> list[EvaluationRecord]:
        return [r for r in self._records if r.fidelity == fidelity]

    def count(self, fidelity: Fidelity) -> int:
        return sum(1 for r in self._records if r.fidelity == fidelity)

    def best(self, fidelity: Fidelity = Fidelity.HIGH) -> EvaluationRecord | None:
        recs = self.of(fidelity)
        return min(recs, key=rank_key) if recs else None

    def best_feasible(self, fidelity: Fidelity = Fidelity.HIGH) -> EvaluationRecord | None:
        recs = [r for r in self.of(fidelity) if r.feasible]
        return min(recs, key=rank_key) if recs else None

    def result_best(self, fidelity: Fidelity = Fidelity.HIGH) -> EvaluationRecord | None:
        """Best feasible record if any, else the lowest-FoM record."""
        return self.best_feasible(fidelity) or self.best(fidelity)

    def arrays(self, fidelities: Iterable[Fidelity] = (Fidelity.HIGH,)):
        recs = [r for r in self._records if r.fidelity in tuple(fidelities)]
        Z = np.array([r.z for r in recs], dtype=float)
        F = np.array([r.perf.f for r in recs], dtype=float)
        fid = np.array([int(r.fidelity) for r in recs], dtype=int)
        return Z, F, fid


def convergence_curve(db: EvaluationDatabase, fidelity: Fidelity = Fidelity.HIGH) -> list[tuple[int, float]]:
    """(evaluation count at this fidelity, best FoM so far) per record."""
    best = math.inf
    curve = []
    for k, rec in enumerate(db.of(fidelity), start=1):
        best = min(best, rec.fom)
        curve.append((k, best))
    return curve


def evals_to_feasible(db: EvaluationDatabase, fidelity: Fidelity = Fidelity.HIGH) -> int | None:
    for k, rec in enumerate(db.of(fidelity), start=1):
        if rec.feasible:
            return k
    return None


@dataclass
class OptimizerConfig:
    n_init: int = 50
    batch_size: int = 8
    budget: int = 500
    mode: str = SINGLE
    seed: int = 0
    hidden: tuple[int, ...] = (100, 100)
    prior_a0: float = 1.0
    prior_b0: float = 1.0
    n_low_init: int | None = None
    asynchronous: bool = False
    stop_on_feasible: bool = False
    target_fom: float | None = None
    max_failed_batches: int = 3
    hmc: HmcConfig = field(default_factory=HmcConfig)
    trust_region: TrustRegionConfig = field(default_factory=TrustRegionConfig)
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if self.batch_size < 1 or self.n_init < 1:
            raise ValueError("batch_size and n_init must be >= 1")
        if self.budget < 0:
            raise ValueError("budget must be >= 0")
        if self.mode not in (SINGLE, MULTI):
            raise ValueError(f"mode must be {SINGLE!r} or {MULTI!r}")

    @property
    def low_init(self) -> int:
        return self.n_init if self.n_low_init is None else self.n_low_init

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "OptimizerConfig":
        d = dict(d)
        d["hmc"] = HmcConfig(**d.get("hmc", {}))
        d["trust_region"] = TrustRegionConfig(**d.get("trust_region", {}))
        d["acquisition"] = AcquisitionConfig(**d.get("acquisition", {}))
        return cls(**d)


@dataclass
class LoopState:
    rng: np.random.Generator
    database: EvaluationDatabase = field(default_factory=EvaluationDatabase)
    iteration: int = 0
    region: TrustRegionState | None = None
    region_best: EvaluationRecord | None = None
    warm: list[BnnParams | None] = field(default_factory=list)
    step_sizes: np.ndarray | None = None
    initialized: bool = False
    done: bool = False
    stop_reason: str = ""
    failed_batches: int = 0
    modeling_time: float = 0.0
    evaluation_time: float = 0.0
    trace: list[dict[str, Any]] = field(default_factory=list)


@dataclass
class RunResult:
    best: EvaluationRecord | None
    incumbents: dict[Fidelity, EvaluationRecord | None]
    database: EvaluationDatabase
    convergence: list[tuple[int, float]]
    trace: list[dict[str, Any]]
    diagnostics: dict[str, Any]

    @property
    def history(self) -> tuple[EvaluationRecord, ...]:
        return self.database.records


class BnnBo:
    """Algorithm driver; call :meth:`run` or drive :meth:`step` manually."""

    name = "bnn-bo"

    def __init__(self, problem: ProblemSpec, evaluator: Evaluator, config: OptimizerConfig,
                 state: LoopState | None = None):
        self.problem = problem
        self.evaluator = evaluator
        self.config = config
        if config.mode == MULTI:
            self.name = "mf-bnn-bo"
            missing = {Fidelity.LOW, Fidelity.HIGH} - set(evaluator.fidelities)
            if missing:
                raise ValueError("multi-fidelity mode needs an evaluator with both fidelities")
        self.arch = BnnArchitecture(problem.space.dims, config.hidden, 2 if config.mode == MULTI else 1)
        self.prior = GammaPrior(config.prior_a0, config.prior_b0)
        self.state = state if state is not None else LoopState(np.random.default_rng(config.seed))

    # -- bookkeeping -------------------------------------------------------

    @property
    def multi(self) -> bool:
        return self.config.mode == MULTI

    @property
    def done(self) -> bool:
        return self.state.done

    def new_high_evals(self) -> int:
        return sum(1 for r in self.state.database if r.fidelity == Fidelity.HIGH and r.iteration > 0)

    def remaining(self) -> int:
        return self.config.budget - self.new_high_evals()

    def _evaluate(self, requests: list[tuple[np.ndarray, Fidelity]], iteration: int,
                  tr_length: float | None) -> list[EvaluationRecord]:
        """Evaluate, then append successes in request order."""
        if not requests:
            return []
        t0 = time.perf_counter()
        results = self.evaluator.evaluate_batch(requests)
        elapsed = time.perf_counter() - t0
        self.state.evaluation_time += elapsed
        per_eval = elapsed / len(requests)
        added = []
        for (z, _), res in zip(requests, results):
            if isinstance(res, Exception):
                log.warning("evaluation failed at iteration %d: %s", iteration, res)
                continue
            added.append(self.state.database.add(self.problem, z, res, iteration, tr_length, per_eval))
        return added

    def _check_stop(self) -> None:
        st, cfg = self.state, self.config
        inc = st.database.best(Fidelity.HIGH)
        if self.remaining() <= 0:
            st.done, st.stop_reason = True, "budget"
        elif cfg.stop_on_feasible and st.database.best_feasible(Fidelity.HIGH) is not None:
            st.done, st.stop_reason = True, "feasible"
        elif cfg.target_fom is not None and inc is not None and inc.fom <= cfg.target_fom:
            st.done, st.stop_reason = True, "target"

    # -- phases ------------------------------------------------------------

    def initialize(self) -> None:
        st, cfg = self.state, self.config
        d = self.problem.space.dims
        n_low = cfg.low_init if self.multi else 0
        pts = tr.sobol(cfg.n_init + n_low, d, st.rng)
        requests = [(z, Fidelity.HIGH) for z in pts[:cfg.n_init]]
        requests += [(z, Fidelity.LOW) for z in pts[cfg.n_init:]]
        self._evaluate(requests, 0, None)
        inc = st.database.best(Fidelity.HIGH)
        if inc is None:
            raise EvaluatorFailure("no successful high-fidelity evaluation in the initial design")
        st.region = tr.init(inc.z, cfg.trust_region)
        st.region_best = inc
        st.warm = [None] * (self.problem.m + 1)
        st.initialized = True
        st.trace.append(self._trace_row())
        self._check_stop()

    def _fit(self):
        st, cfg = self.state, self.config
        fids = (Fidelity.LOW, Fidelity.HIGH) if self.multi else (Fidelity.HIGH,)
        Z, F, fid = st.database.arrays(fids)
        heads = fid if self.multi else np.ones(len(fid), dtype=int)
        step = st.step_sizes
        for attempt in range(2):
            try:
                posts = bnn.fit_many(self.arch, Z, F.T, heads, cfg.hmc, self.prior, st.rng,
                                     init=st.warm, step_size=step)
                break
            except Divergence:
                if attempt:
                    raise
                log.warning("HMC diverged; retrying with half the step size")
                base = cfg.hmc.step_size if step is None else step
                step = np.asarray(base) / 2.0
        st.warm = [p.last() for p in posts]
        st.step_sizes = np.array([p.diagnostics.step_size for p in posts])
        return posts

    def step(self) -> None:
        """One iteration: fit, select a batch, evaluate, update the trust region."""
        st, cfg = self.state, self.config
        if not st.initialized:
            self.initialize()
            return
        if st.done:
            return
        st.iteration += 1
        it = st.iteration

        t0 = time.perf_counter()
        posts = self._fit()
        region = st.region
        r = cfg.trust_region.candidate_count(self.problem.space.dims)
        candidates = tr.generate_candidates(region, r, st.rng)
        q = min(cfg.batch_size, len(candidates))
        if self.multi:
            db = st.database
            delta = fom_delta([x.fom for x in db.of(Fidelity.LOW)], [x.fom for x in db.of(Fidelity.HIGH)])
            picks = select_multi_fidelity(posts, candidates, q, self.problem.weights, delta, st.rng,
                                          cfg.acquisition.p_low, cfg.acquisition.realization_noise)
        else:
            delta = None
            idx = select_single_fidelity(posts, candidates, q, self.problem.weights, st.rng,
                                         cfg.acquisition.realization_noise)
            picks = [(int(i), Fidelity.HIGH) for i in idx]
        st.modeling_time += time.perf_counter() - t0

        # never exceed the high-fidelity budget
        requests, n_high = [], 0
        for i, fidelity in picks:
            if fidelity == Fidelity.HIGH:
                if n_high >= self.remaining():
                    continue
                n_high += 1
            requests.append((candidates[i], fidelity))
        if self.multi and cfg.asynchronous:
            # low-fidelity results land in the database before the slow calls
            added = self._evaluate([rq for rq in requests if rq[1] == Fidelity.LOW], it, region.length)
            added += self._evaluate([rq for rq in requests if rq[1] == Fidelity.HIGH], it, region.length)
        else:
            added = self._evaluate(requests, it, region.length)

        if requests and not added:
            st.failed_batches += 1
            if st.failed_batches >= cfg.max_failed_batches:
                raise EvaluatorFailure(f"{st.failed_batches} consecutive batches failed completely")
        else:
            st.failed_batches = 0

        self._update_region([a for a in added if a.fidelity == Fidelity.HIGH])
        st.trace.append(self._trace_row(posts, delta))
        inc = st.database.best(Fidelity.HIGH)
        log.info("iteration %d: incumbent FoM %.6g, L=%.4g, high=%d low=%d", it, inc.fom,
                 st.region.length, st.database.count(Fidelity.HIGH), st.database.count(Fidelity.LOW))
        self._check_stop()

    def _update_region(self, high_added: list[EvaluationRecord]) -> None:
        st = self.state
        if not high_added:
            # no ground-truth information this round
            return
        batch_best = min(high_added, key=rank_key)
        improved = rank_key(batch_best) < rank_key(st.region_best)
        if improved:
            st.region_best = batch_best
        st.region = tr.record_batch(st.region, improved, batch_best.z if improved else None)
        if st.region.needs_restart:
            self._restart()

    def _restart(self) -> None:
        st, cfg = self.state, self.config
        n = min(max(cfg.n_init // 2, 1), self.remaining())
        log.info("trust region collapsed (L=%.4g); restarting with %d fresh points", st.region.length, n)
        fresh = self._evaluate([(z, Fidelity.HIGH) for z in tr.sobol(n, self.problem.space.dims, st.rng)],
                               st.iteration, st.region.length) if n > 0 else []
        center = min(fresh, key=rank_key) if fresh else st.database.best(Fidelity.HIGH)
        st.region = tr.init(center.z, cfg.trust_region, previous=st.region)
        st.region_best = center

    def _trace_row(self, posts=None, delta=None) -> dict[str, Any]:
        st = self.state
        inc = st.database.best(Fidelity.HIGH)
        row = {
            "iteration": st.iteration,
            "length": st.region.length,
            "restarts": st.region.restarts,
            "n_high": st.database.count(Fidelity.HIGH),
            "n_low": st.database.count(Fidelity.LOW),
            "best_fom": inc.fom,
        }
        if posts is not None:
            row["acceptance"] = [p.diagnostics.acceptance_rate for p in posts]
        if delta is not None:
            row["delta"] = delta
        return row

    # -- driver ------------------------------------------------------------

    def run(self, callback: Callable[["BnnBo"], None] | None = None) -> RunResult:
        while not self.state.done:
            self.step()
            if callback is not None:
                callback(self)
        return self.result()

    def result(self) -> RunResult:
        st = self.state
        db = st.database
        incumbents = {f: db.best(f) for f in (Fidelity.LOW, Fidelity.HIGH)}
        diag = {
            "algorithm": self.name,
            "iterations": st.iteration,
            "n_high": db.count(Fidelity.HIGH),
            "n_low": db.count(Fidelity.LOW),
            "n_high_new": self.new_high_evals(),
            "restarts": st.region.restarts if st.region else 0,
            "modeling_time": st.modeling_time,
            "evaluation_time": st.evaluation_time,
            "stop_reason": st.stop_reason,
        }
        return RunResult(db.result_best(Fidelity.HIGH), incumbents, db, convergence_curve(db), st.trace, diag)


def run_bnn_bo(problem: ProblemSpec, evaluator: Evaluator, config: OptimizerConfig) -> RunResult:
    return BnnBo(problem, evaluator, replace(config, mode=SINGLE)).run()


def run_mf_bnn_bo(problem: ProblemSpec, evaluator: Evaluator, config: OptimizerConfig) -> RunResult:
    return BnnBo(problem, evaluator, replace(config, mode=MULTI)).run()


def initialize(problem: ProblemSpec, evaluator: Evaluator, config: OptimizerConfig) -> EvaluationDatabase:
    opt = BnnBo(problem, evaluator, config)
    opt.initialize()
    return opt.state.database
