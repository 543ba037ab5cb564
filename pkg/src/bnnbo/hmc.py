"""Hamiltonian Monte Carlo with a leapfrog integrator.

The sampler is vectorized over independent chains: a state of shape
``(C, P)`` holds ``C`` chains that share nothing except the wall clock.
Each chain has its own step size, Metropolis decision and divergence count,
so running the per-metric surrogate chains together is equivalent to running
them one after another (up to the random stream).
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Callable

import numpy as np

from .errors import Divergence, NonFinite

STEP_MIN = 1e-5
STEP_MAX = 1.0
ADAPT_UP = 1.02
ADAPT_DOWN = 0.98


@dataclass
class HmcConfig:
    step_size: float = 0.005
    leapfrog_steps: int = 30
    burn_in: int = 200
    num_samples: int = 200
    seed: int | None = None
    adapt: bool = True
    target_accept: float = 0.75

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if self.leapfrog_steps < 1:
            raise ValueError("leapfrog_steps must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must be in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class HmcDiagnostics:
    acceptance_rate: float | np.ndarray
    step_size: float | np.ndarray
    divergences: int | np.ndarray


def leapfrog(q, p, grad_fn: Callable, step_size: float, n_steps: int):
    """Integrate H(q, p) = -log pi(q) + |p|^2 / 2 for ``n_steps`` steps.

    ``grad_fn`` returns the gradient of log pi.  Raises NonFinite when the
    trajectory leaves the representable range.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    q = np.array(q, dtype=float)
    p = np.array(p, dtype=float)
    with np.errstate(all="ignore"):
        g = grad_fn(q)
        p = p + 0.5 * step_size * g
        for i in range(n_steps):
            q = q + step_size * p
            g = grad_fn(q)
            if i < n_steps - 1:
                p = p + step_size * g
            if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
                raise NonFinite(f"leapfrog diverged at step {i + 1}")
        p = p + 0.5 * step_size * g
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p)) and np.all(np.isfinite(g))):
        raise NonFinite("leapfrog diverged at the final half step")
    return q, p


def _trajectory(q, p, log_prob_and_grad, grad, eps, n_steps):
    # eps has shape (C, 1); non-finite values stay confined to their chain row
    p = p + 0.5 * eps * grad
    for i in range(n_steps):
        q = q + eps * p
        logp, grad = log_prob_and_grad(q)
        if i < n_steps - 1:
            p = p + eps * grad
    p = p + 0.5 * eps * grad
    return q, p, logp, grad


def sample(log_prob_and_grad: Callable, init, config: HmcConfig, rng: np.random.Generator | None = None,
           step_size=None, gibbs: Callable | None = None):
    """Draw ``config.num_samples`` states after ``config.burn_in`` warm-up steps.

    ``log_prob_and_grad(q)`` maps ``q`` of shape (C, P) to ``(logp (C,), grad (C, P))``.
    A 1-D ``init`` is treated as a single chain and the callable then takes and
    returns unbatched values.  ``gibbs(q, rng, keep)``, if given, runs after every
    HMC transition and may change the target (e.g. resample a noise precision);
    ``keep`` tells it whether the current iteration is retained.

    Returns ``(samples, diagnostics)`` with samples of shape (M, P) or (M, C, P).
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    init = np.asarray(init, dtype=float)
    single = init.ndim == 1
    if single:
        fn = log_prob_and_grad

        def log_prob_and_grad(q):
            lp, g = fn(q[0])
            return np.atleast_1d(np.asarray(lp, dtype=float)), np.asarray(g, dtype=float)[None]

        init = init[None]
    if not np.all(np.isfinite(init)):
        raise ValueError("init must be finite")

    C, P = init.shape
    eps = np.full(C, config.step_size, dtype=float) if step_size is None else \
        np.broadcast_to(np.asarray(step_size, dtype=float), (C,)).copy()
    q = init.copy()
    logp, grad = log_prob_and_grad(q)
    if not (np.all(np.isfinite(logp)) and np.all(np.isfinite(grad))):
        raise ValueError("log density is not finite at init")

    total = config.burn_in + config.num_samples
    samples = np.empty((config.num_samples, C, P))
    accepted = np.zeros(C)
    burn_bad = np.zeros(C, dtype=int)
    divergences = np.zeros(C, dtype=int)

    for it in range(total):
        warm = it < config.burn_in
        p0 = rng.standard_normal((C, P))
        h_old = -logp + 0.5 * np.sum(p0 * p0, axis=1)
        with np.errstate(all="ignore"):
            q_new, p_new, logp_new, grad_new = _trajectory(q, p0, log_prob_and_grad, grad, eps[:, None],
                                                           config.leapfrog_steps)
            h_new = -logp_new + 0.5 * np.sum(p_new * p_new, axis=1)
            finite = np.isfinite(h_new) & np.all(np.isfinite(q_new), axis=1) & \
                np.all(np.isfinite(grad_new), axis=1)
            log_alpha = np.where(finite, np.minimum(0.0, h_old - h_new), -np.inf)
        log_u = np.log(rng.uniform(size=C))
        accept = log_u < log_alpha

        q = np.where(accept[:, None], q_new, q)
        logp = np.where(accept, logp_new, logp)
        grad = np.where(accept[:, None], grad_new, grad)

        divergences += ~finite
        if warm:
            burn_bad += ~finite
            if config.adapt:
                alpha = np.exp(log_alpha)
                eps = np.where(alpha >= config.target_accept, eps * ADAPT_UP, eps * ADAPT_DOWN)
                eps = np.clip(eps, STEP_MIN, STEP_MAX)
            if it == config.burn_in - 1 and np.any(burn_bad > 0.5 * config.burn_in):
                raise Divergence(f"{int(burn_bad.max())} of {config.burn_in} burn-in proposals non-finite")
        else:
            accepted += accept

        if gibbs is not None:
            gibbs(q, rng, not warm)
            logp, grad = log_prob_and_grad(q)
        if not warm:
            samples[it - config.burn_in] = q

    rate = accepted / config.num_samples
    if single:
        return samples[:, 0, :], HmcDiagnostics(float(rate[0]), float(eps[0]), int(divergences[0]))
    return samples, HmcDiagnostics(rate, eps, divergences)
