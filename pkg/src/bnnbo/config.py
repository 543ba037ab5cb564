"""Run configuration files.

A run config is one JSON document::

    {
      "algorithm": "bnn-bo" | "mf-bnn-bo" | "de",
      "evaluator": {"type": "synthetic", "name": "toy-ota", "params": {...}}
                 | {"type": "subprocess", "command": ["python", "sim.py"], "timeout": 300},
      "problem": {"space": [...], "metrics": [...]},      # required for subprocess evaluators
      "optimizer": {...}, "de": {...},
      "seeds": [0, 1, 2],
      "output_dir": "results/toy-ota"
    }

Unknown keys are rejected so that typos fail before any evaluation runs.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema

from .de import DeConfig
from .errors import ConfigError
from .optimizer import MULTI, SINGLE, OptimizerConfig
from .problem import ProblemSpec

ALGORITHMS = ("bnn-bo", "mf-bnn-bo", "de")

_NUM = {"type": "number"}
_INT = {"type": "integer"}

SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "required": ["algorithm", "evaluator"],
    "properties": {
        "algorithm": {"enum": list(ALGORITHMS)},
        "evaluator": {
            "oneOf": [
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["type", "name"],
                    "properties": {
                        "type": {"const": "synthetic"},
                        "name": {"type": "string"},
                        "params": {"type": "object"},
                    },
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["type", "command"],
                    "properties": {
                        "type": {"const": "subprocess"},
                        "command": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                        "timeout": {"type": "number", "exclusiveMinimum": 0},
                        "cost_ratio": _NUM,
                    },
                },
            ]
        },
        "problem": {
            "type": "object",
            "additionalProperties": False,
            "required": ["space", "metrics"],
            "properties": {
                "space": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["lower", "upper"],
                        "properties": {
                            "name": {"type": "string"},
                            "lower": _NUM,
                            "upper": _NUM,
                            "kind": {"enum": ["continuous", "integer"]},
                        },
                    },
                },
                "metrics": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["name", "sense"],
                        "properties": {
                            "name": {"type": "string"},
                            "sense": {"enum": ["min", "<=", ">="]},
                            "threshold": _NUM,
                            "weight": {"type": "number", "exclusiveMinimum": 0},
                        },
                    },
                },
            },
        },
        "optimizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_init": {"type": "integer", "minimum": 1},
                "batch_size": {"type": "integer", "minimum": 1},
                "budget": {"type": "integer", "minimum": 0},
                "mode": {"enum": [SINGLE, MULTI]},
                "seed": _INT,
                "hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "prior_a0": {"type": "number", "exclusiveMinimum": 0},
                "prior_b0": {"type": "number", "exclusiveMinimum": 0},
                "n_low_init": {"type": ["integer", "null"], "minimum": 0},
                "asynchronous": {"type": "boolean"},
                "stop_on_feasible": {"type": "boolean"},
                "target_fom": {"type": ["number", "null"]},
                "max_failed_batches": {"type": "integer", "minimum": 1},
                "hmc": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "step_size": {"type": "number", "exclusiveMinimum": 0},
                        "leapfrog_steps": {"type": "integer", "minimum": 1},
                        "burn_in": {"type": "integer", "minimum": 0},
                        "num_samples": {"type": "integer", "minimum": 1},
                        "seed": {"type": ["integer", "null"]},
                        "adapt": {"type": "boolean"},
                        "target_accept": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                    },
                },
                "trust_region": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "length_init": {"type": "number", "exclusiveMinimum": 0},
                        "length_min": {"type": "number", "exclusiveMinimum": 0},
                        "length_max": {"type": "number", "exclusiveMinimum": 0},
                        "success_tolerance": {"type": "integer", "minimum": 1},
                        "failure_tolerance": {"type": "integer", "minimum": 1},
                        "n_candidates": {"type": ["integer", "null"], "minimum": 1},
                        "perturb_budget": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
                "acquisition": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "realization_noise": {"enum": ["none", "full"]},
                        "p_low": {"type": "number", "minimum": 0, "maximum": 1},
                    },
                },
            },
        },
        "de": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "population": {"type": ["integer", "null"], "minimum": 4},
                "F": {"type": "number", "exclusiveMinimum": 0, "maximum": 2},
                "CR": {"type": "number", "minimum": 0, "maximum": 1},
                "budget": {"type": "integer", "minimum": 1},
                "seed": _INT,
                "stop_on_feasible": {"type": "boolean"},
            },
        },
        "seeds": {"type": "array", "items": _INT, "minItems": 1},
        "output_dir": {"type": "string"},
    },
}


@dataclass
class RunConfig:
    algorithm: str
    evaluator: dict[str, Any]
    problem: ProblemSpec | None = None
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    de: DeConfig = field(default_factory=DeConfig)
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str = "results"

    def __post_init__(self):
        if self.evaluator.get("type") == "subprocess" and self.problem is None:
            raise ConfigError("a subprocess evaluator needs an explicit problem definition")
        if self.algorithm == "mf-bnn-bo":
            self.optimizer.mode = MULTI
        elif self.algorithm == "bnn-bo":
            self.optimizer.mode = SINGLE

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        try:
            jsonschema.validate(data, SCHEMA)
        except jsonschema.ValidationError as exc:
            path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"invalid config at {path}: {exc.message}") from None
        data = copy.deepcopy(data)
        try:
            problem = ProblemSpec.from_dict(data["problem"]) if "problem" in data else None
            return cls(
                algorithm=data["algorithm"],
                evaluator=data["evaluator"],
                problem=problem,
                optimizer=OptimizerConfig.from_dict(data.get("optimizer", {})),
                de=DeConfig(**data.get("de", {})),
                seeds=list(data.get("seeds", [0])),
                output_dir=data.get("output_dir", "results"),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "algorithm": self.algorithm,
            "evaluator": copy.deepcopy(self.evaluator),
            "optimizer": self.optimizer.to_dict(),
            "de": self.de.to_dict(),
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
        }
        if self.problem is not None:
            out["problem"] = self.problem.to_dict()
        return out


def load_config(path: str | Path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return RunConfig.from_dict(data)
