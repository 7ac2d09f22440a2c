"""Executable transport plans, Monte Carlo evaluation and the mean baseline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .otcore import CostSpec, ProblemInstance, RngStream, as_generator, cost_matrix, sample_points
from .quantile_solver import QuantileSolution
from .tiebreak import SAConfig, TieBreakModel, choice_prob_matrix, precompute_masks

N_BINS = 100
BASELINE_HOLDOUT = 100_000
# g lives in cost units; a unit step scale makes the iterates jitter across whole cells
BASELINE_SA = SAConfig(a=0.1)


@dataclass(frozen=True)
class TransportPlan:
    t: float
    psi: int
    theta: np.ndarray = field(repr=False)
    cost: CostSpec = field(repr=False)
    p: np.ndarray = field(repr=False)

    def __post_init__(self):
        K = self.cost.K
        theta = np.array(self.theta, dtype=float)
        p = np.array(self.p, dtype=float)
        if theta.shape != (K,) or p.shape != (K,):
            raise ValueError(f"theta and p must have length K={K}")
        if not np.isfinite(self.t) or not np.all(np.isfinite(theta)):
            raise ValueError("t and theta must be finite")
        if not (0 <= self.psi < (1 << K)):
            raise ValueError("psi must be a bitmask over the K facilities")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "p", p)

    @property
    def K(self) -> int:
        return self.cost.K

    def masks_at(self, points: np.ndarray) -> np.ndarray:
        return precompute_masks(cost_matrix(self.cost, points), self.t, self.psi)

    def probs_at(self, points: np.ndarray) -> np.ndarray:
        return choice_prob_matrix(self.theta, self.masks_at(points))


@dataclass(frozen=True)
class PlanStats:
    marginals: np.ndarray = field(repr=False)
    coverage_at_t: float
    mean_cost: float
    median_cost: float
    q95_cost: float
    bin_edges: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)
    m_samples: int


@dataclass(frozen=True)
class VoronoiWeights:
    g: np.ndarray = field(repr=False)
    iterations: int
    grad_norm: float
    converged: bool = True


def assemble_plan(solution: QuantileSolution, model: TieBreakModel, instance: ProblemInstance) -> TransportPlan:
    if model.K != instance.K or instance.cost.K != instance.K:
        raise ValueError(f"K mismatch: model has {model.K}, instance has {instance.K}")
    if solution.psi_hat >> instance.K:
        raise ValueError("psi_hat has bits beyond K")
    return TransportPlan(solution.t_hat, solution.psi_hat, model.theta, instance.cost, instance.p)


def draw_from_probs(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-cdf draw per row; off-support entries are never selected."""
    cum = np.cumsum(probs, axis=1)
    cum /= cum[:, -1:]
    y = (cum <= u[:, None]).sum(axis=1)
    return np.minimum(y, probs.shape[1] - 1)


def assign(plan: TransportPlan, x, rng: RngStream | np.random.Generator) -> int:
    """Draw a facility for point ``x`` from the plan's choice distribution."""
    gen = as_generator(rng)
    probs = plan.probs_at(np.asarray(x, dtype=float).reshape(1, 2))
    return int(draw_from_probs(probs, gen.random(1))[0])


def assign_many(plan: TransportPlan, points: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    probs = plan.probs_at(points)
    return draw_from_probs(probs, gen.random(len(probs)))


def summarize(costs: np.ndarray, y: np.ndarray, K: int, t: float | None = None) -> PlanStats:
    m = costs.size
    hi = float(costs.max())
    edges = np.linspace(0.0, hi if hi > 0 else 1.0, N_BINS + 1)
    counts, _ = np.histogram(costs, bins=edges)
    return PlanStats(
        marginals=np.bincount(y, minlength=K) / m,
        coverage_at_t=float(np.mean(costs <= t)) if t is not None else float("nan"),
        mean_cost=float(costs.mean()),
        median_cost=float(np.quantile(costs, 0.5, method="inverted_cdf")),
        q95_cost=float(np.quantile(costs, 0.95, method="inverted_cdf")),
        bin_edges=edges,
        counts=counts.astype(np.int64),
        m_samples=m,
    )


def evaluate(plan: TransportPlan, instance: ProblemInstance, m_samples: int, rng: RngStream) -> PlanStats:
    """Monte Carlo statistics of ``c(X, Y)`` on fresh draws of ``X``.

    Percentiles use the inverted-cdf definition, matching the quantile being
    optimized.
    """
    costs, y = evaluation_draws(plan, instance, m_samples, rng)
    return summarize(costs, y, plan.K, plan.t)


def evaluation_draws(plan: TransportPlan, instance: ProblemInstance, m_samples: int,
                     rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Realized ``(c(X, Y), Y)`` pairs behind :func:`evaluate`."""
    if m_samples < 1:
        raise ValueError("m_samples must be at least 1")
    gen = as_generator(rng)
    pts = sample_points(instance.sampler, m_samples, gen)
    C = cost_matrix(plan.cost, pts)
    probs = choice_prob_matrix(plan.theta, precompute_masks(C, plan.t, plan.psi))
    y = draw_from_probs(probs, gen.random(m_samples))
    return C[np.arange(m_samples), y], y


def assign_baseline(weights: VoronoiWeights, cost: CostSpec, x) -> int:
    c = cost_matrix(cost, np.asarray(x, dtype=float).reshape(1, 2))[0]
    return int(np.argmin(c - weights.g))


def assign_baseline_many(weights: VoronoiWeights, cost: CostSpec, points: np.ndarray) -> np.ndarray:
    return np.argmin(cost_matrix(cost, points) - weights.g[None, :], axis=1)


def evaluate_baseline(weights: VoronoiWeights, instance: ProblemInstance, m_samples: int,
                      rng: RngStream) -> PlanStats:
    costs, y = baseline_draws(weights, instance, m_samples, rng)
    return summarize(costs, y, instance.K)


def baseline_draws(weights: VoronoiWeights, instance: ProblemInstance, m_samples: int,
                   rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    if m_samples < 1:
        raise ValueError("m_samples must be at least 1")
    gen = as_generator(rng)
    pts = sample_points(instance.sampler, m_samples, gen)
    C = cost_matrix(instance.cost, pts)
    y = np.argmin(C - weights.g[None, :], axis=1)
    return C[np.arange(m_samples), y], y


@numba.njit(cache=True)
def _baseline_chunk(g, g_bar, m0, C, p, a, b, kappa, polyak, burn_in):
    K = g.size
    for s in range(C.shape[0]):
        m = m0 + s
        gamma = a / (1.0 + m / b) ** kappa
        j = 0
        best = C[s, 0] - g[0]
        for k in range(1, K):
            v = C[s, k] - g[k]
            if v < best:
                best = v
                j = k
        for k in range(K - 1):
            g[k] += gamma * (p[k] - (1.0 if k == j else 0.0))
        if polyak and m >= burn_in:
            inv = 1.0 / (m - burn_in + 1)
            for k in range(K - 1):
                g_bar[k] += (g[k] - g_bar[k]) * inv
        else:
            for k in range(K - 1):
                g_bar[k] = g[k]


def baseline_noise_floor(p: np.ndarray, n_holdout: int) -> float:
    """Three standard errors of the held-out cell-frequency vector norm."""
    return 3.0 * float(np.sqrt(np.sum(p * (1 - p)) / n_holdout))


def solve_mean_baseline(instance: ProblemInstance, config: SAConfig | None = None,
                        rng: RngStream | np.random.Generator = None, n_ref: int = 10_000,
                        n_holdout: int = BASELINE_HOLDOUT) -> VoronoiWeights:
    """Weights of the additively weighted Voronoi partition with cell masses ``p``.

    Semidual ascent on fresh draws: ``g += step * (p - e_j)`` where ``j`` is the
    cell of the drawn point. ``n_ref`` sets the default iteration budget the same
    way the training size does for tie-break fitting. Stationarity is measured
    on ``n_holdout`` held-out points; the run stops once that norm is within the
    tolerance plus the holdout's own sampling noise.
    """
    config = config or BASELINE_SA
    K = instance.K
    p = np.asarray(instance.p, dtype=float)
    if K == 1:
        return VoronoiWeights(np.zeros(1), 0, 0.0, True)
    gen = as_generator(rng if rng is not None else RngStream(0, 0))
    max_iters, check = config.resolved(n_ref)
    burn = config.burn_in if config.burn_in is not None else check
    holdout = cost_matrix(instance.cost, sample_points(instance.sampler, n_holdout, gen))
    threshold = config.tol + baseline_noise_floor(p, n_holdout)

    def held_out_norm(g):
        y = np.argmin(holdout - g[None, :], axis=1)
        return float(np.linalg.norm(p - np.bincount(y, minlength=K) / n_holdout))

    g = np.zeros(K)
    g_bar = g.copy()
    m = 0
    grad = held_out_norm(g_bar)
    chunk_cap = 200_000
    while m < max_iters and grad > threshold:
        todo = min(check, max_iters - m)
        while todo > 0:
            n = min(todo, chunk_cap)
            C = cost_matrix(instance.cost, sample_points(instance.sampler, n, gen))
            _baseline_chunk(g, g_bar, m, C, p, config.a, config.b, config.kappa, config.polyak, burn)
            m += n
            todo -= n
        grad = held_out_norm(g_bar)
    return VoronoiWeights(g_bar, m, grad, grad <= threshold)
