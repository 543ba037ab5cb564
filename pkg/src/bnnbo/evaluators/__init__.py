from .base import Evaluator
from .synthetic import (
    BENCHMARKS,
    SyntheticBenchmark,
    c_sphere,
    echo,
    echo_problem,
    eval_synthetic,
    feasible_fraction,
    make_benchmark,
    sphere,
    toy_ota,
)
from .subprocess_client import SubprocessEvaluator, eval_subprocess

__all__ = [
    "BENCHMARKS",
    "Evaluator",
    "SubprocessEvaluator",
    "SyntheticBenchmark",
    "c_sphere",
    "echo",
    "echo_problem",
    "eval_subprocess",
    "eval_synthetic",
    "feasible_fraction",
    "make_benchmark",
    "sphere",
    "toy_ota",
]
