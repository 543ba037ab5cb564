import numpy as np
import pytest

from bnnbo import bnn
from bnnbo import optimizer as opt_mod
from bnnbo.errors import Divergence, EvaluatorFailure
from bnnbo.evaluators import c_sphere, toy_ota
from bnnbo.evaluators.base import Evaluator
from bnnbo.hmc import HmcConfig
from bnnbo.optimizer import (
    MULTI,
    BnnBo,
    EvaluationRecord,
    OptimizerConfig,
    convergence_curve,
    initialize,
    run_bnn_bo,
    run_mf_bnn_bo,
)
from bnnbo.acquisition import AcquisitionConfig
from bnnbo.problem import Fidelity, PerformanceVector, fom

FAST_HMC = HmcConfig(step_size=0.01, leapfrog_steps=5, burn_in=10, num_samples=10)


def small(**kw):
    base = dict(n_init=8, batch_size=4, budget=8, hidden=(8, 8), hmc=FAST_HMC, seed=0)
    base.update(kw)
    return OptimizerConfig(**base)


class FailingEvaluator(Evaluator):
    def __init__(self, inner, fail_after):
        self.inner, self.problem, self.fidelities = inner, inner.problem, inner.fidelities
        self.calls, self.fail_after = 0, fail_after

    def evaluate(self, z, fidelity=Fidelity.HIGH):
        self.calls += 1
        if self.calls > self.fail_after:
            raise EvaluatorFailure("simulator crashed")
        return self.inner.evaluate(z, fidelity)


def test_initial_design():
    bench = c_sphere(d=2, m=1)
    db = initialize(bench.problem, bench, small(n_init=4))
    assert len(db) == 4
    Z = np.array([r.z for r in db])
    assert np.all((Z >= 0) & (Z <= 1))


def test_initial_design_two_fidelity():
    bench = toy_ota(two_fidelity=True)
    db = initialize(bench.problem, bench, small(n_init=50, mode=MULTI))
    assert db.count(Fidelity.HIGH) == 50 and db.count(Fidelity.LOW) == 50


def test_incumbent_tie_break_on_objective():
    bench = c_sphere(d=2, m=1)
    db = opt_mod.EvaluationDatabase()
    # capped violation: -0.5 + 1 ties with the feasible 0.5, the lower objective wins
    db.add(bench.problem, np.array([0.1, 0.1]), PerformanceVector((0.5, 0.0)), 0)
    db.add(bench.problem, np.array([0.2, 0.2]), PerformanceVector((-0.5, 3.0)), 0)
    db.add(bench.problem, np.array([0.3, 0.3]), PerformanceVector((0.75, -1.0)), 0)
    assert db[0].fom == db[1].fom == 0.5
    assert db.best().index == 1
    assert db.best_feasible().index == 0


def test_zero_budget_returns_initial_best():
    bench = c_sphere(d=3, m=2)
    res = run_bnn_bo(bench.problem, bench, small(budget=0))
    assert res.diagnostics["iterations"] == 0
    assert len(res.database) == 8
    assert res.best is res.database.result_best()


def test_run_respects_budget_and_invariants():
    bench = c_sphere(d=3, m=2)
    cfg = small(budget=10, batch_size=4)
    opt = BnnBo(bench.problem, bench, cfg)
    regions = {}

    def watch(o):
        regions[o.state.iteration + 1] = (o.state.region, o.state.region.restarts)
    opt.initialize()
    watch(opt)
    while not opt.done:
        opt.step()
        region, restarts = regions[opt.state.iteration]
        if opt.state.region.restarts == restarts:
            for rec in opt.state.database:
                if rec.iteration == opt.state.iteration:
                    assert region.contains(rec.z)
        watch(opt)
    res = opt.result()
    assert res.diagnostics["n_high_new"] == 10
    assert sum(1 for r in res.database if r.iteration > 0) == 10
    curve = [v for _, v in convergence_curve(res.database)]
    assert all(b <= a for a, b in zip(curve, curve[1:]))
    trace = [row["best_fom"] for row in res.trace]
    assert all(b <= a for a, b in zip(trace, trace[1:]))
    for rec in res.database:
        assert fom(bench.problem, rec.perf) == rec.fom


def test_fixed_seed_reproduces_run():
    bench = c_sphere(d=3, m=1)
    a = run_bnn_bo(bench.problem, bench, small())
    b = run_bnn_bo(bench.problem, bench, small())
    assert [r.to_dict() for r in a.database] == [r.to_dict() for r in b.database]
    assert a.trace == b.trace


def test_record_round_trip():
    bench = c_sphere(d=2, m=1)
    db = initialize(bench.problem, bench, small(n_init=3))
    for rec in db:
        assert EvaluationRecord.from_dict(rec.to_dict()).to_dict() == rec.to_dict()


def test_multi_fidelity_run():
    bench = toy_ota(two_fidelity=True)
    res = run_mf_bnn_bo(bench.problem, bench, small(budget=6, n_low_init=8))
    assert res.diagnostics["n_high_new"] <= 6
    assert res.database.count(Fidelity.LOW) >= 8
    assert all("delta" in row for row in res.trace[1:])


def test_identical_fidelities_give_identical_values():
    bench = toy_ota(two_fidelity=True, beta=0.0, gamma=0.0)
    res = run_mf_bnn_bo(bench.problem, bench, small(budget=4))
    high = res.database.of(Fidelity.HIGH)
    assert [r.fom for r in high] == [fom(bench.problem, bench.evaluate(r.z, Fidelity.LOW)) for r in high]


def test_low_fidelity_batches_do_not_move_region():
    bench = toy_ota(two_fidelity=True)
    cfg = small(budget=8, mode=MULTI, acquisition=AcquisitionConfig(p_low=1.0))
    opt = BnnBo(bench.problem, bench, cfg)
    opt.initialize()
    before = opt.state.region
    for _ in range(3):
        opt.step()
    after = opt.state.region
    assert opt.state.database.count(Fidelity.LOW) == 8 + 3 * 4
    np.testing.assert_array_equal(after.center, before.center)
    assert (after.length, after.n_success, after.n_failure) == (before.length, 0, 0)


def test_divergence_retries_with_half_step(monkeypatch):
    bench = c_sphere(d=2, m=1)
    calls = []
    real = bnn.fit_many

    def flaky(*args, step_size=None, **kw):
        calls.append(step_size)
        if len(calls) == 1:
            raise Divergence("boom")
        return real(*args, step_size=step_size, **kw)
    monkeypatch.setattr(bnn, "fit_many", flaky)
    opt = BnnBo(bench.problem, bench, small(budget=4))
    opt.initialize()
    opt.step()
    assert calls[0] is None
    np.testing.assert_allclose(calls[1], FAST_HMC.step_size / 2)


def test_persistent_divergence_aborts(monkeypatch):
    bench = c_sphere(d=2, m=1)

    def broken(*a, **k):
        raise Divergence("always")
    monkeypatch.setattr(bnn, "fit_many", broken)
    opt = BnnBo(bench.problem, bench, small())
    opt.initialize()
    with pytest.raises(Divergence):
        opt.step()


def test_failed_initial_design_raises():
    bench = c_sphere(d=2, m=1)
    with pytest.raises(EvaluatorFailure):
        initialize(bench.problem, FailingEvaluator(bench, 0), small())


def test_isolated_failures_are_skipped():
    bench = c_sphere(d=2, m=1)

    class Flaky(FailingEvaluator):
        def evaluate(self, z, fidelity=Fidelity.HIGH):
            self.calls += 1
            if self.calls % 3 == 0:
                raise EvaluatorFailure("transient")
            return self.inner.evaluate(z, fidelity)
    res = run_bnn_bo(bench.problem, Flaky(bench, 0), small(budget=6))
    assert len(res.database) < 8 + 6 + 8


def test_repeated_batch_failures_abort():
    bench = c_sphere(d=2, m=1)
    opt = BnnBo(bench.problem, FailingEvaluator(bench, 8), small(budget=100, max_failed_batches=2))
    with pytest.raises(EvaluatorFailure):
        opt.run()
    assert len(opt.state.database) == 8


def test_stop_on_feasible():
    bench = c_sphere(d=3, m=2)
    res = run_bnn_bo(bench.problem, bench, small(budget=100, stop_on_feasible=True))
    assert res.diagnostics["stop_reason"] == "feasible"
    assert res.best.feasible


def test_config_round_trip():
    cfg = small(mode=MULTI, target_fom=0.1)
    assert OptimizerConfig.from_dict(cfg.to_dict()) == cfg


def test_mode_requires_two_fidelities():
    bench = toy_ota()
    with pytest.raises(ValueError):
        BnnBo(bench.problem, bench, small(mode=MULTI))
