"""Acceptance checks, one test per criterion, each timed against its limit.

The end-to-end criteria run at desk scale: a 50-50 tanh network and a short
HMC chain stand in for the full-size surrogate, and runs stop as soon as the
quantity being measured is known (first feasible point, target FoM).
"""
import itertools
import json
import math
import statistics
import sys
import time

import numpy as np
import pytest

from bnnbo import persistence as io, runner
from bnnbo import trust_region as tr
from bnnbo.acquisition import pick_constrained
from bnnbo.bnn import BnnArchitecture, BnnParams, BnnPosterior, Dataset, GammaPrior, grad_log_joint, log_joint, predict
from bnnbo.config import RunConfig
from bnnbo.de import DeConfig, run_de
from bnnbo.errors import EvaluatorTimeout, ProtocolError
from bnnbo.evaluators import SubprocessEvaluator, echo, toy_ota
from bnnbo.hmc import HmcConfig, leapfrog, sample
from bnnbo.optimizer import MULTI, BnnBo, OptimizerConfig, evals_to_feasible
from bnnbo.problem import DesignSpace, Fidelity, PerformanceVector, ProblemSpec, fom

SEEDS = range(10)
DESK_HMC = HmcConfig(step_size=0.005, leapfrog_steps=20, burn_in=50, num_samples=50)
DESK_HIDDEN = (50, 50)


def timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


# -- 1 ------------------------------------------------------------------------

def test_c01_fom_exact(acceptance):
    def run():
        space = DesignSpace.unit(1)
        cases = [
            # (weights, f, hand value)
            ((1.0, 1.0, 1.0), (0.5, -1.0, 0.0), 0.5),          # feasible, both terms clip to 0
            ((1.0, 1.0), (0.0, 5.0), 1.0),                     # w f = 5 capped at 1
            ((0.1, 1.0, 1.0), (2.0, 0.3, -1.0), 0.5),          # 0.2 + 0.3 + 0
            ((0.5, 2.0, 0.25), (-1.0, 0.2, 8.0), 0.9),         # -0.5 + 0.4 + 1
            ((1.0, 1.0), (3.0, 1.0), 4.0),                     # exactly at the cap
        ]
        errs = []
        for w, f, want in cases:
            spec = ProblemSpec.from_slacks(space, len(f) - 1, list(w))
            errs.append(abs(fom(spec, PerformanceVector(f)) - want))
        return max(errs)
    err, dt = timed(run)
    ok = err <= 1e-12 and dt < 1.0
    acceptance(1, ok, f"FoM unit suite max error {err:.1e} (tol 1e-12), {dt:.3f} s (< 1 s)")
    assert ok


# -- 2 ------------------------------------------------------------------------

def test_c02_predict_exact(acceptance):
    def run():
        arch = BnnArchitecture(1, ())
        x = np.array([0.3])
        one = BnnPosterior(arch, np.array([[0.0, 0.7]]), np.array([math.log(4.0)]))
        mu1, var1 = predict(one, x)
        a = 1.7
        two = BnnPosterior(arch, np.array([[0.0, a], [0.0, -a]]), np.zeros(2))
        mu2, var2 = predict(two, x)
        return max(abs(mu1 - 0.7), abs(var1 - 0.25), abs(mu2), abs(var2 - (a * a + 1)))
    err, dt = timed(run)
    ok = err <= 1e-12 and dt < 1.0
    acceptance(2, ok, f"predictive closed forms max error {err:.1e} (tol 1e-12), {dt:.3f} s (< 1 s)")
    assert ok


# -- 3 ------------------------------------------------------------------------

def _fd_gradient(arch, params, data, prior, h=1e-5):
    z = np.append(params.theta, params.log_tau)
    g = np.empty_like(z)
    for i in range(len(z)):
        zp, zm = z.copy(), z.copy()
        zp[i] += h
        zm[i] -= h
        g[i] = (log_joint(arch, BnnParams(zp[:-1], zp[-1]), data, prior)
                - log_joint(arch, BnnParams(zm[:-1], zm[-1]), data, prior)) / (2 * h)
    return g


def test_c03_gradient(acceptance):
    def run():
        worst = 0.0
        rng = np.random.default_rng(2024)
        prior = GammaPrior(2.0, 0.5)
        for _ in range(20):
            d = int(rng.integers(1, 6))
            hidden = tuple(int(v) for v in rng.integers(1, 9, size=2))
            heads = int(rng.integers(1, 3))
            arch = BnnArchitecture(d, hidden, heads)
            n = int(rng.integers(1, 15))
            data = Dataset(rng.uniform(-1, 1, (n, d)), rng.normal(size=n), rng.integers(1, heads + 1, n))
            params = BnnParams(rng.normal(0, 0.7, arch.n_params), float(rng.normal(0, 0.5)))
            g = grad_log_joint(arch, params, data, prior)
            fd = _fd_gradient(arch, params, data, prior)
            rel = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-12)
            worst = max(worst, float(rel.max()))
        return worst
    err, dt = timed(run)
    ok = err < 1e-4 and dt < 10.0
    acceptance(3, ok, f"gradient vs central differences, 20 networks, max rel error {err:.1e} (< 1e-4), "
                      f"{dt:.2f} s (< 10 s)")
    assert ok


# -- 4 ------------------------------------------------------------------------

def test_c04_hmc(acceptance):
    def run():
        cov = np.array([[1.0, 0.8], [0.8, 1.0]])
        prec = np.linalg.inv(cov)
        target = lambda q: (-0.5 * float(q @ prec @ q), -prec @ q)
        cfg = HmcConfig(step_size=0.2, leapfrog_steps=15, burn_in=300, num_samples=2000, seed=7)
        s, _ = sample(target, np.array([1.0, -1.0]), cfg)
        mean_err = float(np.max(np.abs(s.mean(axis=0))))
        var_err = float(np.max(np.abs(s.var(axis=0) - 1.0)))
        corr_err = abs(float(np.corrcoef(s.T)[0, 1]) - 0.8)
        grad = lambda q: -q ** 3 - q
        q0, p0 = np.array([0.7, -0.2]), np.array([0.1, 1.3])
        q1, p1 = leapfrog(q0, p0, grad, 0.05, 25)
        q2, p2 = leapfrog(q1, -p1, grad, 0.05, 25)
        rev = float(max(np.max(np.abs(q2 - q0)), np.max(np.abs(p2 + p0))))
        qh, ph = leapfrog(np.array([1.0]), np.array([0.5]), lambda q: -q, 0.1, 10)
        dH = abs(0.5 * (qh @ qh + ph @ ph) - 0.5 * (1.0 + 0.25))
        return mean_err, var_err, corr_err, rev, float(dH)
    (mean_err, var_err, corr_err, rev, dH), dt = timed(run)
    ok = mean_err < 0.1 and var_err < 0.2 and corr_err < 0.1 and rev < 1e-10 and dH < 1e-3 and dt < 60
    acceptance(4, ok, f"HMC |mean| {mean_err:.3f} (<0.1), |var-1| {var_err:.3f} (<0.2), |rho-0.8| {corr_err:.3f} "
                      f"(<0.1), reversibility {rev:.1e} (<1e-10), |dH| {dH:.1e} (<1e-3), {dt:.1f} s (< 60 s)")
    assert ok


# -- 5 ------------------------------------------------------------------------

def test_c05_trust_region(acceptance):
    def oracle(seq):
        L, ns, nf, out = 0.8, 0, 0, []
        for success in seq:
            if success:
                ns, nf = ns + 1, 0
            else:
                nf, ns = nf + 1, 0
            if ns == 3:
                L, ns = min(2 * L, 1.6), 0
            if nf == 2:
                L, nf = L / 2, 0
            out.append((L, ns, nf, L < 0.0625))
            if L < 0.0625:
                break
        return out

    def run():
        mismatches = checked = 0
        for n in range(1, 9):
            for seq in itertools.product((True, False), repeat=n):
                state = tr.init(np.full(2, 0.5))
                got = []
                for success in seq:
                    state = tr.record_batch(state, success)
                    got.append((state.length, state.n_success, state.n_failure, state.needs_restart))
                    if state.needs_restart:
                        break
                mismatches += got != oracle(seq)
                checked += 1
        return mismatches, checked
    (mismatches, checked), dt = timed(run)
    ok = mismatches == 0 and dt < 5
    acceptance(5, ok, f"trust-region state machine: {mismatches} mismatches over {checked} sequences, {dt:.2f} s (< 5 s)")
    assert ok


# -- 6 ------------------------------------------------------------------------

def test_c06_selection(acceptance):
    def brute(real, w):
        feas = [i for i, row in enumerate(real) if all(v <= 0 for v in row[1:])]
        if feas:
            return min(feas, key=lambda i: (real[i][0], i))
        f = [w[0] * row[0] + sum(min(1.0, max(0.0, wi * v)) for wi, v in zip(w[1:], row[1:])) for row in real]
        return min(range(len(real)), key=lambda i: (f[i], i))

    def run():
        rng = np.random.default_rng(6)
        bad = 0
        for trial in range(1000):
            m = int(rng.integers(0, 5))
            real = rng.normal(0.5, 1.0, (50, m + 1))
            if trial % 5 == 0:
                real = np.round(real)
            w = rng.uniform(0.1, 3.0, m + 1)
            bad += pick_constrained(real, w) != brute(real.tolist(), w.tolist())
        return bad
    bad, dt = timed(run)
    ok = bad == 0 and dt < 10
    acceptance(6, ok, f"constrained Thompson pick vs brute force: {bad}/1000 mismatches, {dt:.2f} s (< 10 s)")
    assert ok


# -- 7 ------------------------------------------------------------------------

@pytest.mark.slow
def test_c07_bnn_bo_vs_de(acceptance):
    bench = toy_ota()

    def run():
        bnn_evals, de_evals = [], []
        for s in SEEDS:
            cfg = OptimizerConfig(n_init=50, batch_size=8, budget=500, hidden=DESK_HIDDEN, hmc=DESK_HMC,
                                  seed=s, stop_on_feasible=True)
            res = BnnBo(bench.problem, bench, cfg).run()
            bnn_evals.append(evals_to_feasible(res.database))
            de = run_de(bench.problem, bench, DeConfig(budget=5000, seed=s, stop_on_feasible=True))
            de_evals.append(evals_to_feasible(de.database))
        return bnn_evals, de_evals
    (bnn_evals, de_evals), dt = timed(run)
    succ = sum(e is not None for e in bnn_evals)
    med_bnn = statistics.median(e if e is not None else math.inf for e in bnn_evals)
    med_de = statistics.median(e if e is not None else math.inf for e in de_evals)
    ok = succ >= 8 and med_bnn <= 0.5 * med_de and dt < 1800
    acceptance(7, ok, f"toy-ota BNN-BO feasible {succ}/10 (>= 8), median evals-to-feasible {med_bnn:g} vs DE "
                      f"{med_de:g} (ratio {med_bnn / med_de:.3f} <= 0.5), {dt / 60:.1f} min (< 30 min); "
                      f"BNN-BO {bnn_evals}, DE {de_evals}")
    assert ok


# -- 8 ------------------------------------------------------------------------

def _high_evals_to_reach(db, target, n_init):
    for k, rec in enumerate(db.of(Fidelity.HIGH), start=1):
        if rec.fom <= target:
            return max(k - n_init, 0)
    return None


@pytest.mark.slow
def test_c08_multi_fidelity(acceptance):
    single = toy_ota()
    pair = toy_ota(two_fidelity=True, beta=0.15, gamma=0.1)
    n_init, horizon = 50, 150

    def run():
        mf_evals, targets = [], []
        for s in SEEDS:
            base = dict(n_init=n_init, batch_size=8, budget=horizon, hidden=DESK_HIDDEN, hmc=DESK_HMC, seed=s)
            ref = BnnBo(single.problem, single, OptimizerConfig(**base)).run()
            target = ref.database.best(Fidelity.HIGH).fom
            mf = BnnBo(pair.problem, pair, OptimizerConfig(**base, mode=MULTI, target_fom=target)).run()
            targets.append(target)
            mf_evals.append(_high_evals_to_reach(mf.database, target, n_init))
        return mf_evals, targets
    (mf_evals, targets), dt = timed(run)
    med = statistics.median(e if e is not None else math.inf for e in mf_evals)
    ok = med <= 0.8 * horizon and dt < 2700
    acceptance(8, ok, f"MF-BNN-BO reaches BNN-BO's {horizon}-eval incumbent with median {med:g} High evals "
                      f"(<= {0.8 * horizon:g}), {dt / 60:.1f} min (< 45 min); per seed {mf_evals}")
    assert ok


# -- 9 ------------------------------------------------------------------------

class _Interrupt(Exception):
    pass


def test_c09_determinism_and_resume(acceptance, tmp_path):
    data = {"algorithm": "bnn-bo", "evaluator": {"type": "synthetic", "name": "toy-ota"},
            "optimizer": {"n_init": 20, "batch_size": 8, "budget": 40, "hidden": [20, 20],
                          "hmc": {"leapfrog_steps": 10, "burn_in": 20, "num_samples": 20}},
            "seeds": [3]}

    def run():
        outs = []
        for name in ("a", "b", "c"):
            cfg = RunConfig.from_dict({**data, "output_dir": str(tmp_path / name)})
            if name == "c":
                def stop(driver, _):
                    if driver.state.iteration == 3:
                        raise _Interrupt
                try:
                    runner.run_all(cfg, stop)
                except _Interrupt:
                    pass
                runner.resume(tmp_path / name / "3" / io.CHECKPOINT)
            else:
                runner.run_all(cfg)
            d = tmp_path / name / "3"
            outs.append(((d / io.CONVERGENCE).read_bytes(), (d / io.HISTORY).read_bytes()))
        return outs
    outs, dt = timed(run)
    same_csv = outs[0][0] == outs[1][0]
    resumed = outs[2] == outs[0]
    ok = same_csv and resumed and dt < 300
    acceptance(9, ok, f"byte-identical convergence.csv across reruns: {same_csv}; resumed history and curve equal "
                      f"to the uninterrupted run: {resumed}; {dt:.1f} s (< 5 min)")
    assert ok


# -- 10 -----------------------------------------------------------------------

def test_c10_subprocess(acceptance):
    bench = echo(d=3, m=2)
    cmd = [sys.executable, "-m", "bnnbo.evaluators.echo_child", "--metrics", "3", "--group", "4"]
    cfg = OptimizerConfig(n_init=20, batch_size=8, budget=80, hidden=(16, 16), seed=1,
                          hmc=HmcConfig(leapfrog_steps=10, burn_in=20, num_samples=20))

    def run():
        local = BnnBo(bench.problem, bench, cfg).run().database
        with SubprocessEvaluator(cmd, bench.problem) as ev:
            remote = BnnBo(bench.problem, ev, cfg).run().database
        same = len(local) == 100 and [json.dumps(r.to_dict()) for r in local] == \
            [json.dumps(r.to_dict()) for r in remote]
        errors = []
        with SubprocessEvaluator(cmd[:-2] + ["--malformed"], bench.problem) as ev:
            try:
                ev.evaluate(np.full(3, 0.5))
            except ProtocolError:
                errors.append("ProtocolError")
        with SubprocessEvaluator(cmd[:-2] + ["--delay", "0.5"], bench.problem, timeout=30.0) as ev:
            ev.timeout = 0.2
            res = ev.evaluate_batch([(np.full(3, 0.5), Fidelity.HIGH)])
            if isinstance(res[0], EvaluatorTimeout):
                errors.append("EvaluatorTimeout")
        return same, len(local), errors
    (same, n, errors), dt = timed(run)
    ok = same and errors == ["ProtocolError", "EvaluatorTimeout"] and dt < 120
    acceptance(10, ok, f"in-process vs subprocess echo over {n} evaluations identical: {same}; error paths "
                       f"{errors}; {dt:.1f} s (< 2 min)")
    assert ok
