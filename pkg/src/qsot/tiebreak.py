"""Entropy-dual tie-breaking: fit softmax weights that restore the marginals.

A choice set is stored as an integer bitmask (bit ``k`` = facility ``k``).
The dual objective over a list of masks is

    L(theta) = p . theta - mean_n log sum_{k in mask_n} exp(theta_k)

and is maximized by stochastic approximation on bootstrap draws of the masks
with Polyak averaging. ``theta[K-1]`` is pinned to zero throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .otcore import RngStream, as_generator
from .quantile_solver import CostMatrix


class UnreachableMarginalError(ValueError):
    """Some facility belongs to no choice set, so its marginal cannot be met."""


@dataclass(frozen=True)
class SAConfig:
    a: float = 1.0
    b: float = 1000.0
    kappa: float = 0.6
    tol: float = 1e-4
    max_iters: int | None = None  # default 500 * N
    check_every: int | None = None  # default 10 * N
    polyak: bool = True
    burn_in: int | None = None  # default check_every; averaging starts after it

    def step(self, m: int) -> float:
        return self.a / (1.0 + m / self.b) ** self.kappa

    def resolved(self, n: int) -> tuple[int, int]:
        max_iters = self.max_iters if self.max_iters is not None else 500 * n
        check = self.check_every if self.check_every is not None else 10 * n
        return int(max_iters), max(1, int(check))


@dataclass(frozen=True)
class TieBreakModel:
    theta: np.ndarray = field(repr=False)
    theta_last: np.ndarray = field(repr=False)
    iterations: int
    grad_norm: float
    converged: bool
    step_a: float
    step_b: float
    step_kappa: float

    @property
    def K(self) -> int:
        return self.theta.size


@dataclass(frozen=True)
class ChoiceDistribution:
    mask: int
    probs: np.ndarray = field(repr=False)


def _bit_weights(K: int) -> np.ndarray:
    return np.left_shift(np.int64(1), np.arange(K, dtype=np.int64))


def choice_mask(t: float, psi: int, costs_row) -> int:
    """Argmax set of the integer scores ``1{c_k <= t} + psi_k``."""
    c = np.asarray(costs_row, dtype=float)
    scores = [int(c[k] <= t) + ((psi >> k) & 1) for k in range(c.size)]
    top = max(scores)
    return sum(1 << k for k, s in enumerate(scores) if s == top)


def precompute_masks(C: CostMatrix | np.ndarray, t: float, psi: int) -> np.ndarray:
    entries = C.entries if isinstance(C, CostMatrix) else np.asarray(C, dtype=float)
    K = entries.shape[1]
    psi_vec = ((psi >> np.arange(K)) & 1).astype(np.int64)
    scores = (entries <= t).astype(np.int64) + psi_vec
    top = scores.max(axis=1, keepdims=True)
    return (scores == top).astype(np.int64) @ _bit_weights(K)


def _members(masks: np.ndarray, K: int) -> np.ndarray:
    return ((np.asarray(masks, dtype=np.int64)[:, None] >> np.arange(K)) & 1).astype(bool)


def _grouped(masks: np.ndarray, K: int):
    uniq, counts = np.unique(np.asarray(masks, dtype=np.int64), return_counts=True)
    return _members(uniq, K), counts / counts.sum()


def _softmax_rows(theta: np.ndarray, members: np.ndarray) -> np.ndarray:
    z = np.where(members, theta[None, :], -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    w = np.where(members, np.exp(z), 0.0)
    return w / w.sum(axis=1, keepdims=True)


def choice_prob_matrix(theta: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Row ``n`` is the softmax of ``theta`` restricted to ``masks[n]``."""
    theta = np.asarray(theta, dtype=float)
    return _softmax_rows(theta, _members(masks, theta.size))


def choice_probs(theta, mask: int) -> ChoiceDistribution:
    if mask <= 0:
        raise ValueError("choice set must be nonempty")
    probs = choice_prob_matrix(np.asarray(theta, dtype=float), np.array([mask]))[0]
    return ChoiceDistribution(int(mask), probs)


def mean_choice_probs(masks: np.ndarray, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    members, weights = _grouped(masks, theta.size)
    return weights @ _softmax_rows(theta, members)


def dual_gradient(masks: np.ndarray, theta, p) -> np.ndarray:
    """Gradient of the sample dual objective: ``p - mean softmax``."""
    return np.asarray(p, dtype=float) - mean_choice_probs(masks, theta)


def dual_objective(masks: np.ndarray, theta, p) -> float:
    theta = np.asarray(theta, dtype=float)
    members, weights = _grouped(masks, theta.size)
    z = np.where(members, theta[None, :], -np.inf)
    mx = z.max(axis=1)
    lse = mx + np.log(np.exp(z - mx[:, None]).sum(axis=1))
    return float(np.dot(p, theta) - weights @ lse)


def hessian_sigma(masks: np.ndarray, theta) -> tuple[np.ndarray, np.ndarray]:
    """Mean choice probabilities and ``diag(sigma) - sigma sigma^T`` on k < K-1."""
    sigma = mean_choice_probs(masks, theta)
    s = sigma[:-1]
    return sigma, np.diag(s) - np.outer(s, s)


@numba.njit(cache=True)
def _sa_chunk(theta, theta_bar, m0, draws, masks, p, a, b, kappa, polyak, burn_in):
    K = theta.size
    g = np.empty(K)
    for s in range(draws.size):
        m = m0 + s
        gamma = a / (1.0 + m / b) ** kappa
        bits = masks[draws[s]]
        mx = -np.inf
        for k in range(K):
            if (bits >> k) & 1 and theta[k] > mx:
                mx = theta[k]
        denom = 0.0
        for k in range(K):
            if (bits >> k) & 1:
                denom += math.exp(theta[k] - mx)
        for k in range(K):
            if (bits >> k) & 1:
                g[k] = p[k] - math.exp(theta[k] - mx) / denom
            else:
                g[k] = p[k]
        for k in range(K - 1):
            theta[k] += gamma * g[k]
        if polyak and m >= burn_in:
            inv = 1.0 / (m - burn_in + 1)
            for k in range(K - 1):
                theta_bar[k] += (theta[k] - theta_bar[k]) * inv
        else:
            for k in range(K - 1):
                theta_bar[k] = theta[k]


def sa_fit(masks: np.ndarray, p, config: SAConfig | None = None, rng: RngStream | np.random.Generator = None,
           theta0=None) -> TieBreakModel:
    """Fit ``theta`` by bootstrap stochastic approximation.

    Each step draws a sample index uniformly with replacement and moves
    ``theta`` along ``p - softmax(theta; mask)``. Every ``check_every`` steps the
    full-sample gradient at the returned iterate is measured; the fit stops once
    its norm is at most ``config.tol`` or after ``max_iters`` steps. Hitting the
    cap is reported through ``converged=False``, not raised.
    """
    config = config or SAConfig()
    masks = np.ascontiguousarray(masks, dtype=np.int64)
    p = np.asarray(p, dtype=float)
    K = p.size
    if masks.size == 0:
        raise ValueError("need at least one choice set")
    if np.any(masks <= 0) or np.any(masks >> K):
        raise ValueError("choice sets must be nonempty subsets of the K facilities")
    covered = int(np.bitwise_or.reduce(masks))
    if covered != (1 << K) - 1:
        missing = [k for k in range(K) if not (covered >> k) & 1]
        raise UnreachableMarginalError(f"facilities {missing} appear in no choice set")

    zeros = np.zeros(K)
    if K == 1:
        return TieBreakModel(zeros, zeros.copy(), 0, 0.0, True, config.a, config.b, config.kappa)

    gen = as_generator(rng if rng is not None else RngStream(0, 0))
    n = masks.size
    max_iters, check = config.resolved(n)
    burn = config.burn_in if config.burn_in is not None else check
    theta = np.zeros(K) if theta0 is None else np.array(theta0, dtype=float)
    theta[-1] = 0.0
    theta_bar = theta.copy()
    m = 0
    grad = float(np.linalg.norm(dual_gradient(masks, theta_bar, p)))
    while m < max_iters and grad > config.tol:
        chunk = min(check, max_iters - m)
        draws = gen.integers(0, n, size=chunk)
        _sa_chunk(theta, theta_bar, m, draws, masks, p, config.a, config.b, config.kappa, config.polyak, burn)
        m += chunk
        grad = float(np.linalg.norm(dual_gradient(masks, theta_bar, p)))
    return TieBreakModel(
        theta=theta_bar,
        theta_last=theta,
        iterations=m,
        grad_norm=grad,
        converged=grad <= config.tol,
        step_a=config.a,
        step_b=config.b,
        step_kappa=config.kappa,
    )
