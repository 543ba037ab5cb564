"""Client side of the newline-delimited JSON simulator protocol.

The child speaks UTF-8 JSON objects, one per line, on stdin/stdout::

    child -> {"protocol": 1, "metrics": <m+1>, "fidelities": [1, 2]}    (once, at startup)
    parent -> {"id": 7, "x": [0.5, ...], "fidelity": 2}
    child -> {"id": 7, "metrics": [1.0, -0.2]}  or  {"id": 7, "error": "..."}

Responses may come back in any order; they are matched by id.  All requests
of a batch are written before any response is read, so a child that serves
requests concurrently overlaps them.
"""
from __future__ import annotations

import json
import math
import queue
import subprocess
import threading
import time
from typing import Sequence

import numpy as np

from ..errors import ChildExit, EvaluatorFailure, EvaluatorTimeout, ProtocolError
from ..problem import Fidelity, PerformanceVector, ProblemSpec
from .base import Evaluator

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT = 300.0
_EOF = object()


def encode_request(req_id: int, z, fidelity) -> str:
    return json.dumps({"id": int(req_id), "x": [float(v) for v in z], "fidelity": int(fidelity)})


def decode_response(line: str, n_metrics: int) -> tuple[int, list[float] | str]:
    """``(id, metrics)`` or ``(id, error message)``; raises ProtocolError on bad lines."""
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed response line {line!r}") from exc
    if not isinstance(msg, dict) or not isinstance(msg.get("id"), int) or isinstance(msg.get("id"), bool):
        raise ProtocolError(f"response without integer id: {line!r}")
    if "error" in msg:
        return msg["id"], str(msg["error"])
    metrics = msg.get("metrics")
    if not isinstance(metrics, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                                for v in metrics):
        raise ProtocolError(f"response {msg['id']} has no numeric metrics list")
    if len(metrics) != n_metrics:
        raise ProtocolError(f"response {msg['id']} has {len(metrics)} metrics, expected {n_metrics}")
    return msg["id"], [float(v) for v in metrics]


class SubprocessEvaluator(Evaluator):
    """Evaluates designs in an external process speaking the JSON-lines protocol.

    The child's metrics are raw values; they are converted to slack form with
    the problem's metric declarations.
    """

    def __init__(self, command: Sequence[str], problem: ProblemSpec, timeout: float = DEFAULT_TIMEOUT,
                 cwd=None, env=None, cost_ratio: float = 1.0):
        self.problem = problem
        self.timeout = float(timeout)
        self.cost_ratio = cost_ratio
        self.command = list(command)
        self._next_id = 0
        self._abandoned: set[int] = set()
        self._write_lock = threading.Lock()
        self._lines: queue.Queue = queue.Queue()
        self._proc = subprocess.Popen(
            self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, cwd=cwd, env=env,
            text=True, encoding="utf-8", bufsize=1,
        )
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        self._handshake()

    def _read_loop(self):
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(_EOF)

    def _next_line(self, deadline: float) -> str:
        remaining = deadline - time.monotonic()
        try:
            line = self._lines.get(timeout=max(remaining, 0.0))
        except queue.Empty:
            raise EvaluatorTimeout(f"no response within {self.timeout} s") from None
        if line is _EOF:
            self._lines.put(_EOF)
            raise ChildExit(f"simulator exited with code {self._proc.poll()}")
        return line

    def _handshake(self):
        line = self._next_line(time.monotonic() + self.timeout)
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"bad handshake {line!r}") from exc
        if not isinstance(msg, dict) or msg.get("protocol") != PROTOCOL_VERSION:
            raise ProtocolError(f"unsupported handshake {line!r}")
        if msg.get("metrics") != self.problem.m + 1:
            raise ProtocolError(f"child reports {msg.get('metrics')} metrics, problem has {self.problem.m + 1}")
        try:
            self.fidelities = tuple(sorted(Fidelity(int(f)) for f in msg.get("fidelities", [2])))
        except (TypeError, ValueError) as exc:
            raise ProtocolError(f"bad fidelity list in handshake {line!r}") from exc

    def _send(self, z, fidelity) -> int:
        req_id = self._next_id
        self._next_id += 1
        with self._write_lock:
            try:
                self._proc.stdin.write(encode_request(req_id, z, fidelity) + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise ChildExit(f"cannot write to simulator: {exc}") from exc
        return req_id

    def evaluate_batch(self, requests) -> list:
        requests = [(np.asarray(z, dtype=float), self.check_fidelity(f)) for z, f in requests]
        ids = [self._send(z, f) for z, f in requests]
        slot = {req_id: i for i, req_id in enumerate(ids)}
        results: list = [None] * len(ids)
        pending = set(ids)
        deadline = time.monotonic() + self.timeout
        while pending:
            try:
                line = self._next_line(deadline)
            except EvaluatorTimeout as exc:
                self._abandoned |= pending
                for req_id in pending:
                    results[slot[req_id]] = EvaluatorTimeout(f"request {req_id}: {exc}")
                break
            req_id, payload = decode_response(line, self.problem.m + 1)
            if req_id in self._abandoned:
                self._abandoned.discard(req_id)
                continue
            if req_id not in pending:
                raise ProtocolError(f"response for unknown id {req_id}")
            pending.discard(req_id)
            fidelity = requests[slot[req_id]][1]
            if isinstance(payload, str):
                results[slot[req_id]] = EvaluatorFailure(f"request {req_id}: {payload}")
            elif not all(math.isfinite(v) for v in payload):
                results[slot[req_id]] = EvaluatorFailure(f"request {req_id}: non-finite metrics {payload}")
            else:
                results[slot[req_id]] = self.problem.performance(payload, fidelity)
        return results

    def evaluate(self, z, fidelity: Fidelity = Fidelity.HIGH) -> PerformanceVector:
        result = self.evaluate_batch([(z, fidelity)])[0]
        if isinstance(result, Exception):
            raise result
        return result

    def close(self):
        proc = self._proc
        if proc.poll() is None:
            try:
                proc.stdin.close()
            except OSError:
                pass
            try:
                proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()


def eval_subprocess(client: SubprocessEvaluator, point, fidelity: Fidelity = Fidelity.HIGH,
                    timeout: float | None = None) -> PerformanceVector:
    z = point.z if hasattr(point, "z") else point
    if timeout is None:
        return client.evaluate(z, fidelity)
    saved, client.timeout = client.timeout, float(timeout)
    try:
        return client.evaluate(z, fidelity)
    finally:
        client.timeout = saved

