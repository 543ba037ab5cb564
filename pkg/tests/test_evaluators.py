import json
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bnnbo.errors import ChildExit, EvaluatorFailure, EvaluatorTimeout, ProtocolError
from bnnbo.evaluators import SubprocessEvaluator, c_sphere, echo, eval_subprocess, eval_synthetic, toy_ota
from bnnbo.evaluators.subprocess_client import decode_response, encode_request
from bnnbo.evaluators.synthetic import BENCHMARKS, feasible_fraction
from bnnbo.problem import DesignSpace, Fidelity, PerformanceVector, ProblemSpec


def child(*flags, metrics=3):
    return [sys.executable, "-m", "bnnbo.evaluators.echo_child", "--metrics", str(metrics), *flags]


def slack_problem(d, m):
    return ProblemSpec.from_slacks(DesignSpace.unit(d), m)


# -- synthetic ----------------------------------------------------------------

def test_c_sphere_hand_values():
    bench = c_sphere(d=2, m=2)
    perf = eval_synthetic(bench, np.array([0.5, 0.5]))
    np.testing.assert_allclose(perf.f, [0.5, -0.25, -0.25], atol=1e-15)


def test_zero_gap_means_identical_fidelities():
    bench = toy_ota(two_fidelity=True, beta=0.0, gamma=0.0)
    z = np.random.default_rng(0).random(10)
    assert bench.evaluate(z, Fidelity.LOW).f == bench.evaluate(z, Fidelity.HIGH).f


def test_gap_is_present_by_default():
    bench = toy_ota(two_fidelity=True)
    z = np.random.default_rng(0).random(10)
    assert bench.evaluate(z, Fidelity.LOW).f != bench.evaluate(z, Fidelity.HIGH).f


def test_noise_free_is_pure():
    bench = toy_ota()
    z = np.random.default_rng(1).random(10)
    assert bench.evaluate(z) == bench.evaluate(z)


def test_noisy_benchmark_is_still_a_function_of_the_point():
    bench = c_sphere(d=3, m=1, noise_std=0.1, noise_seed=4)
    z = np.array([0.1, 0.2, 0.3])
    a, b = bench.evaluate(z), bench.evaluate(z)
    assert a == b
    assert a.f != c_sphere(d=3, m=1).evaluate(z).f


def test_single_fidelity_rejects_low():
    with pytest.raises(ValueError):
        toy_ota().evaluate(np.full(10, 0.5), Fidelity.LOW)


@pytest.mark.parametrize("name", sorted(BENCHMARKS))
def test_shipped_benchmarks_have_feasible_points(name):
    bench = BENCHMARKS[name]()
    if bench.problem.m:
        assert feasible_fraction(bench, n=200_000) > 0


def test_toy_ota_is_hard_but_feasible():
    frac = feasible_fraction(toy_ota(), n=400_000)
    assert 0 < frac < 1e-2


def test_echo_metrics_are_padded_coordinates():
    perf = echo(d=2, m=3).evaluate(np.array([0.25, 0.75]))
    # constraints are value <= 0.5, so slacks are value - 0.5
    assert perf.f == (0.25, 0.25, -0.5, -0.5)


# -- wire format ---------------------------------------------------------------

def test_request_response_round_trip():
    req = json.loads(encode_request(7, [0.5], 2))
    assert req == {"id": 7, "x": [0.5], "fidelity": 2}
    rid, metrics = decode_response('{"id": 7, "metrics": [1.0, -0.2]}', 2)
    assert rid == 7
    perf = slack_problem(1, 1).performance(metrics, Fidelity.HIGH)
    assert perf == PerformanceVector((1.0, -0.2), Fidelity.HIGH)


@pytest.mark.parametrize("line", ["{not json", '{"metrics": [1, 2, 3]}', '{"id": 1, "metrics": [1, 2]}',
                                  '{"id": 1, "metrics": "abc"}', '{"id": true, "metrics": [1, 2, 3]}'])
def test_bad_responses(line):
    with pytest.raises(ProtocolError):
        decode_response(line, 3)


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=8))
def test_transport_preserves_floats(values):
    line = json.dumps({"id": 1, "metrics": values})
    _, got = decode_response(line, len(values))
    assert got == [float(v) for v in values]


# -- subprocess client ------------------------------------------------------------

def test_subprocess_echo_matches_in_process():
    bench = echo(d=2, m=2)
    z = np.array([0.125, 0.7])
    with SubprocessEvaluator(child(), bench.problem) as ev:
        assert ev.evaluate(z) == bench.evaluate(z)
        assert eval_subprocess(ev, z, Fidelity.LOW, timeout=5).fidelity == Fidelity.LOW


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=2))
def test_subprocess_transport_exact(z):
    with SubprocessEvaluator(child(metrics=2), slack_problem(2, 1)) as ev:
        assert ev.evaluate(np.array(z)).f == tuple(z)


def test_out_of_order_responses_are_matched_by_id():
    problem = slack_problem(1, 1)
    zs = [np.array([v]) for v in (0.1, 0.2, 0.3, 0.4)]
    with SubprocessEvaluator(child("--group", "4", metrics=2), problem) as ev:
        res = ev.evaluate_batch([(z, Fidelity.HIGH) for z in zs])
    assert [r.f[0] for r in res] == [0.1, 0.2, 0.3, 0.4]


def test_malformed_line_raises():
    with SubprocessEvaluator(child("--malformed", metrics=2), slack_problem(1, 1)) as ev:
        with pytest.raises(ProtocolError):
            ev.evaluate(np.array([0.5]))


def test_wrong_metric_count_raises():
    with SubprocessEvaluator(child("--short", metrics=2), slack_problem(1, 1)) as ev:
        with pytest.raises(ProtocolError):
            ev.evaluate(np.array([0.5]))


def test_handshake_metric_mismatch():
    with pytest.raises(ProtocolError):
        SubprocessEvaluator(child(metrics=2), slack_problem(1, 2))


def test_timeout_marks_pending_and_skips_late_answers():
    with SubprocessEvaluator(child("--delay", "0.6", metrics=2), slack_problem(1, 1), timeout=0.3) as ev:
        res = ev.evaluate_batch([(np.array([0.1]), Fidelity.HIGH)])
        assert isinstance(res[0], EvaluatorTimeout)
        ev.timeout = 5.0
        # the late answer for the abandoned request must not be mistaken for this one
        assert ev.evaluate(np.array([0.9])).f == (0.9, 0.0)


def test_error_response_is_an_evaluation_failure():
    with SubprocessEvaluator(child("--fail-every", "2", metrics=2), slack_problem(1, 1)) as ev:
        res = ev.evaluate_batch([(np.array([v]), Fidelity.HIGH) for v in (0.1, 0.2, 0.3)])
    assert isinstance(res[0], PerformanceVector)
    assert isinstance(res[1], EvaluatorFailure)
    assert isinstance(res[2], PerformanceVector)


def test_child_exit_is_reported():
    with SubprocessEvaluator(child("--exit-after", "1", metrics=2), slack_problem(1, 1)) as ev:
        ev.evaluate(np.array([0.1]))
        with pytest.raises(ChildExit):
            ev.evaluate(np.array([0.2]))
