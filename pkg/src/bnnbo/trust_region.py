"""Hypercube trust region: side-length schedule, restarts and candidates."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace, asdict

import numpy as np
from scipy.stats import qmc


@dataclass(frozen=True)
class TrustRegionConfig:
    length_init: float = 0.8
    length_min: float = 0.5 ** 4
    length_max: float = 1.6
    success_tolerance: int = 3
    failure_tolerance: int = 2
    n_candidates: int | None = None
    perturb_budget: float = 20.0

    def __post_init__(self):
        if not 0 < self.length_min <= self.length_init <= self.length_max:
            raise ValueError("need 0 < length_min <= length_init <= length_max")
        if self.success_tolerance < 1 or self.failure_tolerance < 1:
            raise ValueError("tolerances must be >= 1")

    def candidate_count(self, d: int) -> int:
        return self.n_candidates if self.n_candidates else min(100 * d, 5000)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrustRegionState:
    center: np.ndarray = field(compare=False)
    length: float
    n_success: int = 0
    n_failure: int = 0
    restarts: int = 0
    config: TrustRegionConfig = TrustRegionConfig()

    def __post_init__(self):
        c = np.array(self.center, dtype=float).reshape(-1)
        c.setflags(write=False)
        object.__setattr__(self, "center", c)

    @property
    def needs_restart(self) -> bool:
        return self.length < self.config.length_min

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        half = 0.5 * self.length
        return np.clip(self.center - half, 0.0, 1.0), np.clip(self.center + half, 0.0, 1.0)

    def contains(self, z, atol: float = 1e-12) -> bool:
        lo, hi = self.bounds()
        z = np.asarray(z, dtype=float)
        return bool(np.all(z >= lo - atol) and np.all(z <= hi + atol))


def init(center, config: TrustRegionConfig = TrustRegionConfig(),
         previous: TrustRegionState | None = None) -> TrustRegionState:
    """Fresh region around ``center``; pass the collapsed ``previous`` state on restart."""
    center = np.asarray(center, dtype=float)
    if np.any(center < 0.0) or np.any(center > 1.0):
        raise ValueError("center must lie in the unit cube")
    restarts = previous.restarts + 1 if previous is not None else 0
    return TrustRegionState(center, config.length_init, 0, 0, restarts, config)


def record_batch(state: TrustRegionState, improved: bool, new_best=None) -> TrustRegionState:
    """Advance the success/failure counters after one evaluated batch.

    The returned state has ``needs_restart`` set when the side length fell
    below the minimum; the caller decides where the new region goes.
    """
    cfg = state.config
    if improved:
        n_s, n_f = state.n_success + 1, 0
        center = state.center if new_best is None else np.asarray(getattr(new_best, "z", new_best))
    else:
        n_s, n_f = 0, state.n_failure + 1
        center = state.center
    length = state.length
    if n_s == cfg.success_tolerance:
        length = min(2.0 * length, cfg.length_max)
        n_s = 0
    if n_f == cfg.failure_tolerance:
        length = length / 2.0
        n_f = 0
    return replace(state, center=center, length=length, n_success=n_s, n_failure=n_f)


def sobol(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` scrambled Sobol points in [0, 1)^d."""
    sampler = qmc.Sobol(d, scramble=True, seed=rng)
    with warnings.catch_warnings():
        # non power-of-two sizes only lose the balance property
        warnings.simplefilter("ignore", UserWarning)
        return sampler.random(n)


def generate_candidates(state: TrustRegionState, r: int, rng: np.random.Generator) -> np.ndarray:
    """``r`` points in the region intersected with the unit cube, shape (r, d).

    Each coordinate is perturbed away from the center with probability
    ``min(1, perturb_budget / d)`` (at least one per point); the rest copy the
    center, which keeps candidates local in high dimension.
    """
    if r < 1:
        raise ValueError("r must be >= 1")
    d = state.center.shape[0]
    lo, hi = state.bounds()
    pert = lo + (hi - lo) * sobol(r, d, rng)
    prob = min(1.0, state.config.perturb_budget / d)
    mask = rng.random((r, d)) <= prob
    empty = ~mask.any(axis=1)
    if empty.any():
        mask[np.flatnonzero(empty), rng.integers(0, d, size=int(empty.sum()))] = True
    return np.where(mask, pert, state.center)
