"""The evaluation boundary shared by in-process and external evaluators."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import EvaluatorFailure, NonFinite
from ..problem import Fidelity, PerformanceVector, ProblemSpec


class Evaluator:
    """Maps normalized design coordinates to a full performance vector.

    Subclasses implement :meth:`evaluate`; :meth:`evaluate_batch` may be
    overridden to run the requests of a batch concurrently.  Results come back
    in request order regardless of completion order.
    """

    problem: ProblemSpec
    fidelities: tuple[Fidelity, ...] = (Fidelity.HIGH,)
    cost_ratio: float = 1.0

    def evaluate(self, z, fidelity: Fidelity = Fidelity.HIGH) -> PerformanceVector:
        raise NotImplementedError

    def evaluate_batch(self, requests: Sequence[tuple[np.ndarray, Fidelity]]) -> list:
        """One entry per request: a PerformanceVector or the EvaluatorFailure it raised."""
        out = []
        for z, fidelity in requests:
            try:
                out.append(self.evaluate(z, fidelity))
            except NonFinite as exc:
                out.append(EvaluatorFailure(str(exc)))
            except EvaluatorFailure as exc:
                out.append(exc)
        return out

    def check_fidelity(self, fidelity) -> Fidelity:
        fidelity = Fidelity(fidelity)
        if fidelity not in self.fidelities:
            raise ValueError(f"fidelity {fidelity.name} not supported by {type(self).__name__}")
        return fidelity

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
