"""Design space, constrained problem definition and FoM scalarization.

Constraints are stored in slack form, ``f_i(x) <= 0`` for ``i = 1..m``, and
``f_0`` is the objective to minimize.  The figure of merit is

    FoM = w_0 * f_0 + sum_i min(1, max(0, w_i * f_i))

so that feasible designs are ranked by objective alone and no single
violated constraint can contribute more than 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, NonFinite, OutOfBounds


class Fidelity(IntEnum):
    LOW = 1
    HIGH = 2


CONTINUOUS = "continuous"
INTEGER = "integer"


@dataclass(frozen=True)
class DesignSpace:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    kinds: tuple[str, ...] = ()
    names: tuple[str, ...] = ()

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) < 1 or len(lo) != len(hi):
            raise ConfigError("design space needs d >= 1 matching lower/upper bounds")
        if any(not a < b for a, b in zip(lo, hi)):
            raise ConfigError("every dimension needs lower < upper")
        kinds = tuple(self.kinds) or (CONTINUOUS,) * len(lo)
        if len(kinds) != len(lo) or any(k not in (CONTINUOUS, INTEGER) for k in kinds):
            raise ConfigError(f"bad dimension kinds: {kinds!r}")
        names = tuple(self.names) or tuple(f"x{i}" for i in range(len(lo)))
        if len(names) != len(lo):
            raise ConfigError("names must match dimension count")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "names", names)

    @property
    def dims(self) -> int:
        return len(self.lower)

    @classmethod
    def unit(cls, d: int) -> "DesignSpace":
        return cls((0.0,) * d, (1.0,) * d)

    def to_dict(self) -> list[dict[str, Any]]:
        return [
            {"name": n, "lower": lo, "upper": hi, "kind": k}
            for n, lo, hi, k in zip(self.names, self.lower, self.upper, self.kinds)
        ]

    @classmethod
    def from_dict(cls, dims: Sequence[dict[str, Any]]) -> "DesignSpace":
        return cls(
            lower=tuple(d["lower"] for d in dims),
            upper=tuple(d["upper"] for d in dims),
            kinds=tuple(d.get("kind", CONTINUOUS) for d in dims),
            names=tuple(d.get("name", f"x{i}") for i, d in enumerate(dims)),
        )


@dataclass(frozen=True)
class DesignPoint:
    """Normalized coordinates in the unit hypercube, tied to a space."""

    space: DesignSpace
    z: np.ndarray = field(compare=False)

    def __post_init__(self):
        z = np.array(self.z, dtype=float).reshape(-1)
        if z.shape[0] != self.space.dims:
            raise ValueError(f"expected {self.space.dims} coordinates, got {z.shape[0]}")
        if np.any(~np.isfinite(z)) or np.any(z < 0.0) or np.any(z > 1.0):
            raise OutOfBounds("normalized coordinates must lie in [0, 1]")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)

    def values(self) -> np.ndarray:
        return denormalize(self.space, self)

    def __eq__(self, other):
        return (
            isinstance(other, DesignPoint)
            and self.space == other.space
            and np.array_equal(self.z, other.z)
        )

    def __hash__(self):
        return hash((self.space, self.z.tobytes()))


def normalize(space: DesignSpace, values: Sequence[float]) -> DesignPoint:
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.shape[0] != space.dims:
        raise ValueError(f"expected {space.dims} values, got {v.shape[0]}")
    lo = np.asarray(space.lower)
    hi = np.asarray(space.upper)
    if np.any(~np.isfinite(v)) or np.any(v < lo) or np.any(v > hi):
        raise OutOfBounds(f"values {v.tolist()} outside bounds")
    return DesignPoint(space, (v - lo) / (hi - lo))


def denormalize(space: DesignSpace, point: DesignPoint | np.ndarray) -> np.ndarray:
    z = point.z if isinstance(point, DesignPoint) else np.asarray(point, dtype=float)
    lo = np.asarray(space.lower)
    hi = np.asarray(space.upper)
    v = lo + z * (hi - lo)
    is_int = np.array([k == INTEGER for k in space.kinds])
    if is_int.any():
        # round half up, then keep inside the bounds
        v[is_int] = np.clip(np.floor(v[is_int] + 0.5), lo[is_int], hi[is_int])
    return v


@dataclass(frozen=True)
class Metric:
    """A performance metric as declared by the user.

    ``sense`` is ``"min"`` for the objective, ``"<="`` / ``">="`` for a
    constraint against ``threshold``.  Raw values are converted to slack
    form by :meth:`slack`.
    """

    name: str
    sense: str = "<="
    threshold: float = 0.0
    weight: float | None = None

    def __post_init__(self):
        if self.sense not in ("min", "<=", ">="):
            raise ConfigError(f"metric {self.name!r}: unknown sense {self.sense!r}")

    @property
    def resolved_weight(self) -> float:
        if self.weight is not None:
            return float(self.weight)
        if self.sense == "min" or self.threshold == 0.0:
            return 1.0
        return 1.0 / abs(self.threshold)

    def slack(self, raw: float) -> float:
        if self.sense == "min":
            return raw
        if self.sense == "<=":
            return raw - self.threshold
        return self.threshold - raw

    def to_dict(self) -> dict[str, Any]:
        out = {"name": self.name, "sense": self.sense, "threshold": self.threshold}
        if self.weight is not None:
            out["weight"] = self.weight
        return out


@dataclass(frozen=True)
class ProblemSpec:
    space: DesignSpace
    metrics: tuple[Metric, ...]

    def __post_init__(self):
        metrics = tuple(self.metrics)
        object.__setattr__(self, "metrics", metrics)
        if len(metrics) < 1:
            raise ConfigError("need at least an objective metric")
        if metrics[0].sense != "min" or any(mt.sense == "min" for mt in metrics[1:]):
            raise ConfigError("first metric must be the objective, the rest constraints")
        if any(not w > 0 for w in self.weights):
            raise ConfigError("all weights must be positive")

    @property
    def m(self) -> int:
        return len(self.metrics) - 1

    @property
    def weights(self) -> tuple[float, ...]:
        return tuple(mt.resolved_weight for mt in self.metrics)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(mt.name for mt in self.metrics)

    @classmethod
    def from_slacks(cls, space: DesignSpace, m: int, weights: Sequence[float] | None = None,
                    names: Sequence[str] | None = None) -> "ProblemSpec":
        """Problem whose metrics are already objective + slacks."""
        weights = weights if weights is not None else [1.0] * (m + 1)
        names = names or ["f0"] + [f"g{i}" for i in range(1, m + 1)]
        metrics = [Metric(names[0], "min", 0.0, weights[0])]
        metrics += [Metric(names[i], "<=", 0.0, weights[i]) for i in range(1, m + 1)]
        return cls(space, tuple(metrics))

    def performance(self, raw: Sequence[float], fidelity: Fidelity = Fidelity.HIGH) -> "PerformanceVector":
        raw = [float(v) for v in raw]
        if len(raw) != len(self.metrics):
            raise ValueError(f"expected {len(self.metrics)} metrics, got {len(raw)}")
        return PerformanceVector(tuple(mt.slack(v) for mt, v in zip(self.metrics, raw)), Fidelity(fidelity))

    def to_dict(self) -> dict[str, Any]:
        return {"space": self.space.to_dict(), "metrics": [mt.to_dict() for mt in self.metrics]}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ProblemSpec":
        return cls(
            DesignSpace.from_dict(data["space"]),
            tuple(Metric(**mt) for mt in data["metrics"]),
        )


@dataclass(frozen=True)
class PerformanceVector:
    f: tuple[float, ...]
    fidelity: Fidelity = Fidelity.HIGH

    def __post_init__(self):
        f = tuple(float(v) for v in self.f)
        if not f:
            raise ValueError("empty performance vector")
        if not all(math.isfinite(v) for v in f):
            raise NonFinite(f"non-finite metric values {f}")
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "fidelity", Fidelity(self.fidelity))

    @property
    def objective(self) -> float:
        return self.f[0]


def _check_len(spec: ProblemSpec, perf: PerformanceVector) -> None:
    if len(perf.f) != spec.m + 1:
        raise ValueError(f"expected {spec.m + 1} metrics, got {len(perf.f)}")


def fom_values(weights: Sequence[float], f: Sequence[float]) -> float:
    total = weights[0] * f[0]
    for w, v in zip(weights[1:], f[1:]):
        total += min(1.0, max(0.0, w * v))
    return total


def fom(spec: ProblemSpec, perf: PerformanceVector) -> float:
    _check_len(spec, perf)
    return fom_values(spec.weights, perf.f)


def fom_array(weights: Sequence[float], f: np.ndarray) -> np.ndarray:
    """Vectorized FoM; ``f`` has shape (..., m+1)."""
    w = np.asarray(weights, dtype=float)
    f = np.asarray(f, dtype=float)
    return w[0] * f[..., 0] + np.clip(w[1:] * f[..., 1:], 0.0, 1.0).sum(axis=-1)


def is_feasible(spec: ProblemSpec, perf: PerformanceVector) -> bool:
    _check_len(spec, perf)
    return all(v <= 0.0 for v in perf.f[1:])


class Ranked(NamedTuple):
    perf: PerformanceVector
    fom: float
    index: int


def rank_key(item) -> tuple[float, float, int]:
    """Sort key: lower FoM, then lower objective, then earlier insertion."""
    return (item.fom, item.perf.f[0], item.index)


def compare(spec: ProblemSpec, a, b) -> int:
    """-1 if ``a`` precedes ``b``, 1 if it follows, 0 only for the same item."""
    ka, kb = rank_key(a), rank_key(b)
    return (ka > kb) - (ka < kb)
