"""Bayesian MLP regression with HMC posterior sampling.

Model, per metric::

    theta ~ N(0, I),  tau ~ Gamma(a0, b0)  (rate parametrization)
    y_n | x_n ~ N(phi(x_n; theta)[k_n], 1 / tau)

where ``k_n`` is the output head of row ``n`` (always 1 for a single-output
network; 1 = low fidelity, 2 = high fidelity for the two-head network).  The
two heads share every hidden layer and differ only in the last layer.

Targets are standardized per fit.  ``theta`` is sampled with HMC and ``tau``
is refreshed from its conjugate Gamma conditional after every HMC transition.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import hmc
from .hmc import HmcConfig, HmcDiagnostics

LOG_2PI = math.log(2.0 * math.pi)
STD_FLOOR = 1e-12
INIT_SCALE = 0.1


@dataclass(frozen=True)
class BnnArchitecture:
    input_dim: int
    hidden: tuple[int, ...] = (100, 100)
    heads: int = 1
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("layer widths must be >= 1")
        if self.heads not in (1, 2):
            raise ValueError("heads must be 1 or 2")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @cached_property
    def layer_shapes(self) -> list[tuple[int, int]]:
        widths = (self.input_dim, *self.hidden, self.heads)
        return list(zip(widths[:-1], widths[1:]))

    @cached_property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes)

    def unpack(self, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views ``(W (C, in, out), b (C, out))`` per layer of ``theta`` (C, P)."""
        layers = []
        pos = 0
        for i, o in self.layer_shapes:
            W = theta[:, pos:pos + i * o].reshape(-1, i, o)
            pos += i * o
            b = theta[:, pos:pos + o]
            pos += o
            layers.append((W, b))
        return layers


@dataclass(frozen=True)
class BnnParams:
    theta: np.ndarray
    log_tau: float = 0.0

    @property
    def tau(self) -> float:
        return math.exp(self.log_tau)


@dataclass(frozen=True)
class GammaPrior:
    a0: float = 1.0
    b0: float = 1.0

    def log_pdf(self, tau: float) -> float:
        a, b = self.a0, self.b0
        return a * math.log(b) - math.lgamma(a) + (a - 1.0) * math.log(tau) - b * tau


@dataclass
class Dataset:
    """Standardized training rows; ``fidelity`` is the 1-based output head per row."""

    x: np.ndarray
    y: np.ndarray
    fidelity: np.ndarray
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        self.fidelity = np.asarray(self.fidelity, dtype=int).reshape(-1)
        if not (len(self.x) == len(self.y) == len(self.fidelity)):
            raise ValueError("x, y and fidelity must have the same number of rows")
        if np.any((self.fidelity != 1) & (self.fidelity != 2)):
            raise ValueError("fidelity must be 1 or 2")
        if not self.std > 0:
            raise ValueError("std must be positive")

    def __len__(self):
        return len(self.y)

    @classmethod
    def from_raw(cls, x, y_raw, fidelity=None) -> "Dataset":
        y_raw = np.asarray(y_raw, dtype=float).reshape(-1)
        mean, std = standardization(y_raw)
        fidelity = np.ones(len(y_raw), dtype=int) if fidelity is None else fidelity
        return cls(x, (y_raw - mean) / std, fidelity, mean, std)


def standardization(y_raw: np.ndarray) -> tuple[float, float]:
    if y_raw.size == 0:
        return 0.0, 1.0
    mean = float(np.mean(y_raw))
    std = float(np.std(y_raw))
    if std < STD_FLOOR:
        std = 1.0
    return mean, std


# -- batched network core ----------------------------------------------------

def _forward(arch: BnnArchitecture, theta: np.ndarray, x: np.ndarray):
    """Outputs (C, N, K) for ``theta`` (C, P) and shared inputs ``x`` (N, d)."""
    layers = arch.unpack(theta)
    acts = [x]
    h = x
    for W, b in layers[:-1]:
        h = np.tanh(np.matmul(h, W) + b[:, None, :])
        acts.append(h)
    W, b = layers[-1]
    out = np.matmul(h, W) + b[:, None, :]
    return out, acts


def _backward(arch: BnnArchitecture, theta: np.ndarray, acts, dout: np.ndarray) -> np.ndarray:
    layers = arch.unpack(theta)
    grads = []
    delta = dout
    for li in range(len(layers) - 1, -1, -1):
        a_in = acts[li]
        if a_in.ndim == 2:
            gW = np.einsum("ni,cno->cio", a_in, delta, optimize=True)
        else:
            gW = np.matmul(a_in.transpose(0, 2, 1), delta)
        gb = delta.sum(axis=1)
        grads.append((gW, gb))
        if li > 0:
            W = layers[li][0]
            delta = np.matmul(delta, W.transpose(0, 2, 1)) * (1.0 - a_in * a_in)
    flat = []
    for gW, gb in reversed(grads):
        flat.append(gW.reshape(gW.shape[0], -1))
        flat.append(gb)
    return np.concatenate(flat, axis=1)


def _head_outputs(out: np.ndarray, heads: np.ndarray) -> np.ndarray:
    return out[:, np.arange(out.shape[1]), heads - 1]


def _check_x(arch: BnnArchitecture, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != arch.input_dim:
        raise ValueError(f"expected inputs of dimension {arch.input_dim}, got {x.shape[1]}")
    return x, single


# -- single-model API --------------------------------------------------------

def forward(arch: BnnArchitecture, params: BnnParams | np.ndarray, x) -> np.ndarray:
    """Head outputs, shape (K,) for one input or (N, K) for a batch."""
    theta = params.theta if isinstance(params, BnnParams) else params
    theta = np.asarray(theta, dtype=float).reshape(1, -1)
    if theta.shape[1] != arch.n_params:
        raise ValueError(f"expected {arch.n_params} parameters, got {theta.shape[1]}")
    x, single = _check_x(arch, x)
    out = _forward(arch, theta, x)[0][0]
    return out[0] if single else out


def _residuals(arch, theta, dataset):
    out, acts = _forward(arch, theta.reshape(1, -1), dataset.x)
    return dataset.y - _head_outputs(out, dataset.fidelity)[0], out, acts


def log_joint(arch: BnnArchitecture, params: BnnParams, dataset: Dataset,
              prior: GammaPrior = GammaPrior()) -> float:
    """Log joint density over (theta, log tau), including the log-tau Jacobian."""
    theta = np.asarray(params.theta, dtype=float)
    tau = params.tau
    n = len(dataset)
    lp = -0.5 * float(theta @ theta) - 0.5 * theta.size * LOG_2PI
    lp += prior.log_pdf(tau) + params.log_tau
    if n:
        r = _residuals(arch, theta, dataset)[0]
        lp += 0.5 * n * (params.log_tau - LOG_2PI) - 0.5 * tau * float(r @ r)
    return lp


def grad_log_joint(arch: BnnArchitecture, params: BnnParams, dataset: Dataset,
                   prior: GammaPrior = GammaPrior()) -> np.ndarray:
    """Gradient of :func:`log_joint`; the last entry is d/d(log tau)."""
    theta = np.asarray(params.theta, dtype=float)
    tau = params.tau
    n = len(dataset)
    g_theta = -theta.copy()
    # (a0 - 1) from the Gamma density, +1 from the log-tau Jacobian
    g_log_tau = prior.a0 - prior.b0 * tau
    if n:
        r, out, acts = _residuals(arch, theta, dataset)
        dout = np.zeros_like(out)
        dout[0, np.arange(n), dataset.fidelity - 1] = tau * r
        g_theta += _backward(arch, theta.reshape(1, -1), acts, dout)[0]
        g_log_tau += 0.5 * n - 0.5 * tau * float(r @ r)
    return np.append(g_theta, g_log_tau)


@dataclass
class BnnPosterior:
    arch: BnnArchitecture
    thetas: np.ndarray
    log_taus: np.ndarray
    mean: float = 0.0
    std: float = 1.0
    diagnostics: HmcDiagnostics | None = field(default=None, repr=False)

    def __post_init__(self):
        self.thetas = np.atleast_2d(np.asarray(self.thetas, dtype=float))
        self.log_taus = np.asarray(self.log_taus, dtype=float).reshape(-1)
        if len(self.thetas) < 1 or len(self.thetas) != len(self.log_taus):
            raise ValueError("need M >= 1 parameter samples with matching noise samples")

    @property
    def num_samples(self) -> int:
        return len(self.thetas)

    def last(self) -> BnnParams:
        return BnnParams(self.thetas[-1].copy(), float(self.log_taus[-1]))

    def head_outputs(self, x, head: int = 1, index=None) -> np.ndarray:
        """Standardized head outputs, (M, N) for all samples or (N,) for one."""
        x, _ = _check_x(self.arch, x)
        if not 1 <= head <= self.arch.heads:
            raise ValueError(f"head {head} not in 1..{self.arch.heads}")
        thetas = self.thetas if index is None else self.thetas[index:index + 1]
        out = _forward(self.arch, thetas, x)[0][..., head - 1]
        return out if index is None else out[0]


def predict(posterior: BnnPosterior, x, head: int = 1):
    """Predictive mean and variance in raw target units.

    The variance is the spread of the per-sample network outputs plus the
    mean aleatoric variance ``1/tau`` over samples.
    """
    phi = posterior.head_outputs(x, head)
    mu = phi.mean(axis=0)
    var = ((phi - mu) ** 2).mean(axis=0) + np.mean(np.exp(-posterior.log_taus))
    mu = mu * posterior.std + posterior.mean
    var = var * posterior.std ** 2
    if np.ndim(x) == 1:
        return float(mu[0]), float(var[0])
    return mu, var


def sample_realization(posterior: BnnPosterior, x, head: int, index: int,
                       rng: np.random.Generator | None = None, noise: bool = True):
    """One Thompson draw from posterior sample ``index`` in raw units.

    The same ``index`` over many inputs gives a coherent function draw; the
    aleatoric term is added independently per input when ``noise`` is set.
    """
    if not 0 <= index < posterior.num_samples:
        raise IndexError(f"sample index {index} out of range")
    phi = posterior.head_outputs(x, head, index)
    if noise:
        rng = rng if rng is not None else np.random.default_rng()
        phi = phi + rng.standard_normal(phi.shape) * math.exp(-0.5 * posterior.log_taus[index])
    val = phi * posterior.std + posterior.mean
    return float(val[0]) if np.ndim(x) == 1 else val


def init_params(arch: BnnArchitecture, rng: np.random.Generator, count: int = 1) -> np.ndarray:
    return rng.normal(0.0, INIT_SCALE, size=(count, arch.n_params))


def fit_many(arch: BnnArchitecture, x, y_raw, fidelity, config: HmcConfig,
             prior: GammaPrior = GammaPrior(), rng: np.random.Generator | None = None,
             init: list[BnnParams | None] | None = None, step_size=None) -> list[BnnPosterior]:
    """Fit one independent posterior per row of ``y_raw`` (C, N) on shared inputs.

    The chains are advanced together for speed but share no parameters,
    noise precisions, step sizes or accept decisions.
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y_raw = np.atleast_2d(np.asarray(y_raw, dtype=float))
    C, N = y_raw.shape
    if N < 1:
        raise ValueError("dataset must be non-empty")
    if x.shape != (N, arch.input_dim):
        raise ValueError(f"x must have shape ({N}, {arch.input_dim})")
    heads = np.ones(N, dtype=int) if fidelity is None else np.asarray(fidelity, dtype=int).reshape(-1)
    if arch.heads == 1 and np.any(heads != 1):
        raise ValueError("single-head network needs every row on head 1")

    stats = [standardization(row) for row in y_raw]
    means = np.array([s[0] for s in stats])
    stds = np.array([s[1] for s in stats])
    Y = (y_raw - means[:, None]) / stds[:, None]

    theta0 = init_params(arch, rng, C)
    tau = np.ones(C)
    for c, p in enumerate(init or []):
        if p is not None and np.shape(p.theta) == (arch.n_params,):
            theta0[c] = p.theta
            tau[c] = p.tau
    rows = np.arange(N)
    a_post = prior.a0 + 0.5 * N
    kept_log_tau = []

    def log_prob_and_grad(theta):
        out, acts = _forward(arch, theta, x)
        r = Y - out[:, rows, heads - 1]
        lp = -0.5 * np.sum(theta * theta, axis=1) - 0.5 * tau * np.sum(r * r, axis=1)
        dout = np.zeros_like(out)
        dout[:, rows, heads - 1] = tau[:, None] * r
        return lp, _backward(arch, theta, acts, dout) - theta

    def gibbs(theta, rng, keep):
        out = _forward(arch, theta, x)[0]
        r = Y - out[:, rows, heads - 1]
        tau[:] = rng.gamma(a_post, 1.0 / (prior.b0 + 0.5 * np.sum(r * r, axis=1)))
        if keep:
            kept_log_tau.append(np.log(tau))

    samples, diag = hmc.sample(log_prob_and_grad, theta0, config, rng, step_size=step_size, gibbs=gibbs)
    log_taus = np.array(kept_log_tau)
    posts = []
    for c in range(C):
        d = HmcDiagnostics(float(diag.acceptance_rate[c]), float(diag.step_size[c]), int(diag.divergences[c]))
        posts.append(BnnPosterior(arch, samples[:, c, :], log_taus[:, c], float(means[c]), float(stds[c]), d))
    return posts


def fit(arch: BnnArchitecture, dataset: Dataset, config: HmcConfig, prior: GammaPrior = GammaPrior(),
        rng: np.random.Generator | None = None, init: BnnParams | None = None, step_size=None) -> BnnPosterior:
    """Fit a single posterior on a (standardized) dataset.

    The returned posterior reports predictions in the dataset's raw units.
    """
    y_raw = dataset.y * dataset.std + dataset.mean
    post = fit_many(arch, dataset.x, y_raw[None, :], dataset.fidelity, config, prior, rng,
                    init=[init], step_size=step_size)[0]
    return post
