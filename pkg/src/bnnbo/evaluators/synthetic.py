"""Analytic constrained benchmarks with optional two-fidelity variants.

A low-fidelity value differs from the high-fidelity one by a smooth bias and
a linear tilt, scaled per metric::

    f_low_i(z) = f_high_i(z) + s_i * (beta * sin(a_i . z + c_i) + gamma * a_i . (z - 1/2))
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from ..problem import DesignSpace, Fidelity, Metric, PerformanceVector, ProblemSpec
from .base import Evaluator

FEASIBILITY_DRAWS = 1_000_000
GAP_SEED = 20220414


@dataclass(eq=False)
class SyntheticBenchmark(Evaluator):
    name: str
    problem: ProblemSpec
    raw_fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    scales: tuple[float, ...] = ()
    beta: float = 0.0
    gamma: float = 0.0
    noise_std: float = 0.0
    noise_seed: int = 0
    two_fidelity: bool = False
    cost_ratio: float = 1.0
    check_feasible: bool = True

    def __post_init__(self):
        n_metrics = self.problem.m + 1
        d = self.problem.space.dims
        self.scales = tuple(self.scales) or (1.0,) * n_metrics
        if len(self.scales) != n_metrics:
            raise ValueError("need one scale per metric")
        gap_rng = np.random.default_rng(GAP_SEED)
        self.gap_a = gap_rng.normal(0.0, 3.0 / np.sqrt(d), size=(n_metrics, d))
        self.gap_c = gap_rng.uniform(0.0, 2.0 * np.pi, size=n_metrics)
        self.fidelities = (Fidelity.LOW, Fidelity.HIGH) if self.two_fidelity else (Fidelity.HIGH,)
        if self.check_feasible and self.problem.m > 0:
            if not _has_feasible_point(self):
                raise ValueError(f"benchmark {self.name!r} has no feasible point in "
                                 f"{FEASIBILITY_DRAWS} uniform draws")

    def slacks(self, Z: np.ndarray, fidelity: Fidelity = Fidelity.HIGH) -> np.ndarray:
        """Noise-free objective and constraint slacks for rows of ``Z`` (n, d)."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        f = _slack_form(self.problem, self.raw_fn(Z))
        if Fidelity(fidelity) == Fidelity.LOW and (self.beta or self.gamma):
            proj = Z @ self.gap_a.T
            tilt = (Z - 0.5) @ self.gap_a.T
            f = f + np.asarray(self.scales) * (self.beta * np.sin(proj + self.gap_c) + self.gamma * tilt)
        return f

    def _noise(self, z: np.ndarray, fidelity: Fidelity) -> np.ndarray:
        # pure function of (point, fidelity, noise seed)
        digest = hashlib.sha256(np.ascontiguousarray(z, dtype=float).tobytes()).digest()
        key = int.from_bytes(digest[:8], "little")
        rng = np.random.default_rng([self.noise_seed, int(fidelity), key])
        return self.noise_std * np.asarray(self.scales) * rng.standard_normal(len(self.scales))

    def evaluate(self, z, fidelity: Fidelity = Fidelity.HIGH) -> PerformanceVector:
        fidelity = self.check_fidelity(fidelity)
        z = np.asarray(z, dtype=float).reshape(-1)
        if z.shape[0] != self.problem.space.dims:
            raise ValueError(f"expected {self.problem.space.dims} coordinates, got {z.shape[0]}")
        f = self.slacks(z[None, :], fidelity)[0]
        if self.noise_std:
            f = f + self._noise(z, fidelity)
        return PerformanceVector(tuple(f), fidelity)


def eval_synthetic(benchmark: SyntheticBenchmark, point, fidelity: Fidelity = Fidelity.HIGH) -> PerformanceVector:
    z = point.z if hasattr(point, "z") else point
    return benchmark.evaluate(z, fidelity)


def _slack_form(problem: ProblemSpec, raw: np.ndarray) -> np.ndarray:
    f = np.empty_like(raw)
    for j, mt in enumerate(problem.metrics):
        if mt.sense == "<=":
            f[:, j] = raw[:, j] - mt.threshold
        elif mt.sense == ">=":
            f[:, j] = mt.threshold - raw[:, j]
        else:
            f[:, j] = raw[:, j]
    return f


def _has_feasible_point(bench: SyntheticBenchmark) -> bool:
    return _cached_feasible(bench.problem, bench.raw_fn)


@lru_cache(maxsize=None)
def _cached_feasible(problem: ProblemSpec, raw_fn) -> bool:
    rng = np.random.default_rng(0)
    chunk = 100_000
    for _ in range(FEASIBILITY_DRAWS // chunk):
        f = _slack_form(problem, raw_fn(rng.random((chunk, problem.space.dims))))
        if np.any(np.all(f[:, 1:] <= 0.0, axis=1)):
            return True
    return False


# -- shipped benchmarks ------------------------------------------------------

def _sphere_raw(Z):
    return np.sum(Z * Z, axis=1, keepdims=True)


def _c_sphere_raw(m: int):
    def raw(Z):
        cols = [np.sum(Z * Z, axis=1)]
        for i in range(m):
            # odd constraints bound a coordinate from below, even ones from above
            cols.append(0.25 - Z[:, i] if i % 2 == 0 else Z[:, i] - 0.75)
        return np.stack(cols, axis=1)
    return raw


_C_SPHERE_RAW = {m: _c_sphere_raw(m) for m in range(0, 21)}


def c_sphere(d: int = 10, m: int = 2, **kwargs) -> SyntheticBenchmark:
    """Sum of squares with box-like constraints 0.25 <= z_1, z_2 <= 0.75, ..."""
    if m > d:
        raise ValueError("c-sphere needs m <= d")
    problem = ProblemSpec.from_slacks(DesignSpace.unit(d), m)
    return SyntheticBenchmark(f"c-sphere", problem, _C_SPHERE_RAW[m], **kwargs)


def sphere(d: int = 5, **kwargs) -> SyntheticBenchmark:
    problem = ProblemSpec.from_slacks(DesignSpace.unit(d), 0)
    return SyntheticBenchmark("sphere", problem, _sphere_raw, **kwargs)


def _echo_raw(m: int):
    def raw(Z):
        out = np.zeros((len(Z), m + 1))
        k = min(m + 1, Z.shape[1])
        out[:, :k] = Z[:, :k]
        return out
    return raw


_ECHO_RAW = {m: _echo_raw(m) for m in range(0, 21)}


def echo_problem(d: int = 2, m: int = 1) -> ProblemSpec:
    """Objective plus ``m`` constraints ``value <= 0.5`` over the unit cube."""
    metrics = [Metric("f0", "min")] + [Metric(f"g{i}", "<=", 0.5) for i in range(1, m + 1)]
    return ProblemSpec(DesignSpace.unit(d), tuple(metrics))


def echo(d: int = 2, m: int = 1, **kwargs) -> SyntheticBenchmark:
    """Raw metrics are the coordinates themselves, zero-padded to m+1 entries.

    The same values come back from the ``echo_child`` process, which makes the
    pair a differential test of the subprocess transport.
    """
    return SyntheticBenchmark("echo", echo_problem(d, m), _ECHO_RAW[m], **kwargs)


def _toy_ota_raw(Z):
    z = Z.T
    i1 = 0.05 + 0.95 * z[0]
    i2 = 0.05 + 1.95 * z[1]
    l1 = 0.2 + 1.8 * z[2]
    l2 = 0.2 + 1.8 * z[3]
    w1 = 1.0 + 49.0 * z[4]
    cc = 0.3 + 2.7 * z[5]
    w2 = 1.0 + 99.0 * z[6]
    vb = z[7]
    rz = z[8]
    lt = 0.2 + 1.8 * z[9]
    gm1 = np.sqrt(2.0 * w1 * i1 / l1)
    gm2 = np.sqrt(4.0 * w2 * i2)
    gain = 20.0 * np.log10(gm1 * l1 / i1 * gm2 * l2 / i2) + 2.0 * np.log10(lt)
    gbw = 12.0 * gm1 / cc
    p2 = 40.0 * gm2 / (1.0 + 0.02 * w2)
    pm = 90.0 - np.degrees(np.arctan(gbw / p2)) - 100.0 * (rz - 0.6) ** 2 / (1.0 + cc)
    vds1 = np.sqrt(2.0 * i1 * l1 / w1)
    vds2 = np.sqrt(i2 / w2)
    swing = 1.8 - 1.5 * vds1 - 1.5 * vds2 - 0.3 * (1.0 - vb)
    noise = 40.0 / np.sqrt(gm1) * (1.0 + 0.3 * (1.0 - lt / 2.0))
    settle = 100.0 / gbw + 8.0 * cc / i1
    power = 1.8 * (i1 + i2)
    return np.stack([power, gain, gbw, pm, swing, noise, settle], axis=1)


TOY_OTA_METRICS = (
    Metric("power", "min", 0.0, 0.01),
    Metric("dc_gain", ">=", 58.0),
    Metric("ugf", ">=", 40.0),
    Metric("phase_margin", ">=", 60.0),
    Metric("output_swing", ">=", 1.1),
    Metric("noise", "<=", 25.0),
    Metric("settling_time", "<=", 20.0),
)
TOY_OTA_SCALES = (1.0, 10.0, 20.0, 10.0, 0.2, 5.0, 10.0)
TOY_OTA_SPACE = DesignSpace(
    lower=(0.05, 0.05, 0.2, 0.2, 1.0, 0.3, 1.0, 0.0, 0.0, 0.2),
    upper=(1.0, 2.0, 2.0, 2.0, 50.0, 3.0, 100.0, 1.0, 1.0, 2.0),
    names=("i_bias1", "i_bias2", "l_in", "l_load", "w_in", "c_comp", "w_out", "v_bias", "r_zero", "l_tail"),
)


def toy_ota(two_fidelity: bool = False, beta: float = 0.15, gamma: float = 0.1, **kwargs) -> SyntheticBenchmark:
    """Smooth 10-D amplifier-shaped problem: minimize power under 6 specs.

    Currents raise power but are needed for bandwidth, noise and settling;
    long devices buy gain at the cost of swing and bandwidth; the
    compensation capacitor trades phase margin for bandwidth.
    """
    problem = ProblemSpec(TOY_OTA_SPACE, TOY_OTA_METRICS)
    if two_fidelity:
        kwargs.setdefault("cost_ratio", 9.0)
    else:
        beta = gamma = 0.0
    return SyntheticBenchmark("toy-ota", problem, _toy_ota_raw, TOY_OTA_SCALES, beta, gamma,
                              two_fidelity=two_fidelity, **kwargs)


BENCHMARKS = {
    "c-sphere": c_sphere,
    "sphere": sphere,
    "echo": echo,
    "toy-ota": toy_ota,
}


def make_benchmark(name: str, **params) -> SyntheticBenchmark:
    try:
        factory = BENCHMARKS[name]
    except KeyError:
        raise ValueError(f"unknown benchmark {name!r}; known: {sorted(BENCHMARKS)}") from None
    return factory(**params)


def feasible_fraction(bench: SyntheticBenchmark, n: int = 100_000, seed: int = 0) -> float:
    f = bench.slacks(np.random.default_rng(seed).random((n, bench.problem.space.dims)))
    return float(np.mean(np.all(f[:, 1:] <= 0.0, axis=1)))

