"""Thompson-sampling batch selection, single- and multi-fidelity.

Every batch slot draws a fresh posterior sample index per metric, realizes
all metrics over the remaining candidate pool and removes the pick from the
pool, so a batch never contains the same candidate twice.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np

from .bnn import BnnPosterior
from .errors import InsufficientCandidates
from .problem import Fidelity, fom_array

NOISE_MODES = ("none", "full")


@dataclass(frozen=True)
class AcquisitionConfig:
    realization_noise: str = "none"
    p_low: float = 0.5

    def __post_init__(self):
        if self.realization_noise not in NOISE_MODES:
            raise ValueError(f"realization_noise must be one of {NOISE_MODES}")
        if not 0.0 <= self.p_low <= 1.0:
            raise ValueError("p_low must be in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def realize(posteriors: Sequence[BnnPosterior], x: np.ndarray, rng: np.random.Generator,
            noise: str = "none", heads: Sequence[int] = (1,)) -> np.ndarray:
    """One joint Thompson realization, shape (len(heads), n, m+1), raw units.

    Each metric uses one posterior sample index for every candidate and every
    head.  Aleatoric noise goes on the objective always and on the
    constraints only in ``"full"`` mode.
    """
    n = len(x)
    out = np.empty((len(heads), n, len(posteriors)))
    for j, post in enumerate(posteriors):
        i = int(rng.integers(post.num_samples))
        phi = np.stack([post.head_outputs(x, h, i) for h in heads])
        if j == 0 or noise == "full":
            phi = phi + rng.standard_normal(phi.shape) * math.exp(-0.5 * post.log_taus[i])
        out[:, :, j] = phi * post.std + post.mean
    return out


def pick_constrained(realization: np.ndarray, weights: Sequence[float]) -> int:
    """Index of the best candidate in one realization (n, m+1).

    Candidates whose realized constraints are all <= 0 compete on the
    objective; if there are none, the lowest FoM wins.  Ties go to the
    lowest index.
    """
    feasible = np.all(realization[:, 1:] <= 0.0, axis=1)
    if feasible.any():
        obj = np.where(feasible, realization[:, 0], np.inf)
        return int(np.argmin(obj))
    return int(np.argmin(fom_array(weights, realization)))


def mf_utility(fom_low, fom_high, delta):
    """Conservative utility: the worse of the shifted low and the high FoM."""
    return np.maximum(np.asarray(fom_low) - delta, fom_high)


def pick_multi_fidelity(fom_low: np.ndarray, fom_high: np.ndarray, delta: float) -> int:
    return int(np.argmin(mf_utility(fom_low, fom_high, delta)))


def fom_delta(low_foms: Sequence[float], high_foms: Sequence[float]) -> float:
    """Best low-fidelity FoM minus best high-fidelity FoM (0 if either is missing)."""
    if len(low_foms) == 0 or len(high_foms) == 0:
        return 0.0
    return float(min(low_foms) - min(high_foms))


def _check_pool(n: int, q: int) -> None:
    if q < 1:
        raise ValueError("q must be >= 1")
    if q > n:
        raise InsufficientCandidates(f"cannot select {q} points from {n} candidates")


def select_single_fidelity(posteriors: Sequence[BnnPosterior], candidates: np.ndarray, q: int,
                           weights: Sequence[float], rng: np.random.Generator,
                           noise: str = "none") -> np.ndarray:
    """Indices into ``candidates`` of the ``q`` selected points, in pick order."""
    candidates = np.asarray(candidates, dtype=float)
    _check_pool(len(candidates), q)
    pool = np.arange(len(candidates))
    picks = []
    for _ in range(q):
        real = realize(posteriors, candidates[pool], rng, noise)[0]
        k = pick_constrained(real, weights)
        picks.append(int(pool[k]))
        pool = np.delete(pool, k)
    return np.array(picks, dtype=int)


def select_multi_fidelity(posteriors: Sequence[BnnPosterior], candidates: np.ndarray, q: int,
                          weights: Sequence[float], delta: float, rng: np.random.Generator,
                          p_low: float = 0.5, noise: str = "none") -> list[tuple[int, Fidelity]]:
    """``q`` (candidate index, fidelity) pairs from two-head posteriors."""
    candidates = np.asarray(candidates, dtype=float)
    _check_pool(len(candidates), q)
    pool = np.arange(len(candidates))
    picks = []
    for _ in range(q):
        real = realize(posteriors, candidates[pool], rng, noise, heads=(1, 2))
        k = pick_multi_fidelity(fom_array(weights, real[0]), fom_array(weights, real[1]), delta)
        fidelity = Fidelity.LOW if rng.random() < p_low else Fidelity.HIGH
        picks.append((int(pool[k]), fidelity))
        pool = np.delete(pool, k)
    return picks
