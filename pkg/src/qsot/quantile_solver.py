"""Sample-average root finding for the optimal cost quantile.

For a threshold ``t`` every sample ``n`` has a hit mask
``m_n = {k : C[n, k] <= t}``. With ``A`` the set of facilities whose binary
offset is 1, the empirical objective is

* ``A = {}``:  ``#{n : m_n nonempty} / N``
* ``A != {}``: ``2 - #{n : m_n & A == 0} / N - p(A)``

so one histogram of hit masks plus a subset-sum transform gives the objective
for all ``2**K`` offsets at once. Minimizer ties are resolved in exact rational
arithmetic: counts are integers and ``p`` is read as decimal fractions with the
last entry set to ``1 - sum(rest)`` so the offsets stay translation invariant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np

from .otcore import ProblemInstance, RngStream, ValidationError, cost_matrix, sample_points

# float pre-screen window; exact comparison decides among the survivors
_SCREEN = 1e-9


@dataclass(frozen=True)
class CostMatrix:
    entries: np.ndarray = field(repr=False)
    sorted_unique: np.ndarray = field(repr=False)

    @classmethod
    def from_entries(cls, entries) -> "CostMatrix":
        c = np.array(entries, dtype=float)
        if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
            raise ValidationError("cost matrix must be a nonempty N x K array")
        if not np.all(np.isfinite(c)):
            raise ValidationError("cost matrix entries must be finite")
        if np.any(c < 0):
            raise ValidationError("cost matrix entries must be nonnegative")
        c.setflags(write=False)
        u = np.unique(c)
        u.setflags(write=False)
        return cls(c, u)

    @property
    def n_samples(self) -> int:
        return self.entries.shape[0]

    @property
    def K(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True)
class AlphaCurveEval:
    t: float
    alpha_hat: float
    minimizers: tuple[int, ...]
    alpha_exact: Fraction = field(repr=False)


@dataclass(frozen=True)
class QuantileSolution:
    t_hat: float
    alpha_at_t: float
    psi_hat: int
    curve_evals: int


@dataclass(frozen=True)
class FeasibleInterval:
    lower: float
    upper: float


def build_cost_matrix(instance: ProblemInstance, n_samples: int, rng: RngStream) -> CostMatrix:
    pts = sample_points(instance.sampler, n_samples, rng)
    return CostMatrix.from_entries(cost_matrix(instance.cost, pts))


def exact_marginals(p: Sequence) -> tuple[Fraction, ...]:
    """Rational copy of ``p`` whose entries sum to exactly 1."""
    fr = [x if isinstance(x, Fraction) else Fraction(repr(float(x))) for x in p]
    fr[-1] = 1 - sum(fr[:-1], Fraction(0))
    return tuple(fr)


class _Marginals:
    def __init__(self, p):
        self.exact = exact_marginals(p)
        self.K = len(self.exact)
        self.float = np.array([float(x) for x in self.exact])
        self.subset = subset_values(self.float)

    @lru_cache(maxsize=None)
    def exact_sum(self, mask: int) -> Fraction:
        return sum((self.exact[k] for k in range(self.K) if mask >> k & 1), Fraction(0))


@lru_cache(maxsize=8)
def _marginals_cached(key: tuple) -> _Marginals:
    return _Marginals(key)


def _marginals(p) -> _Marginals:
    return _marginals_cached(tuple(p.tolist() if isinstance(p, np.ndarray) else p))


def subset_values(v: np.ndarray) -> np.ndarray:
    """``out[A] = sum(v[k] for k in A)`` for every bitmask ``A``."""
    K = len(v)
    out = np.zeros(1 << K)
    for i in range(K):
        out.reshape(-1, 2, 1 << i)[:, 1, :] += v[i]
    return out


def subset_sums(f: np.ndarray, K: int) -> np.ndarray:
    """Zeta transform over subsets: ``out[S] = sum(f[m] for m subset of S)``."""
    out = np.array(f, dtype=np.int64)
    for i in range(K):
        v = out.reshape(-1, 2, 1 << i)
        v[:, 1, :] += v[:, 0, :]
    return out


def superset_sums(f: np.ndarray, K: int) -> np.ndarray:
    """``out[S] = sum(f[m] for m superset of S)``."""
    out = np.array(f, dtype=np.int64)
    for i in range(K):
        v = out.reshape(-1, 2, 1 << i)
        v[:, 0, :] += v[:, 1, :]
    return out


def hit_masks(entries: np.ndarray, t: float) -> np.ndarray:
    hits = entries <= t
    weights = np.left_shift(np.int64(1), np.arange(entries.shape[1], dtype=np.int64))
    return hits.astype(np.int64) @ weights


def mask_histogram(masks: np.ndarray, K: int) -> np.ndarray:
    return np.bincount(masks, minlength=1 << K).astype(np.int64)


def _upper_numerators(hist: np.ndarray, K: int, N: int) -> np.ndarray:
    """Integer ``num[A]`` with objective ``num[A] / N - p(A)``."""
    full = (1 << K) - 1
    sub = subset_sums(hist, K)
    # zero[A] = #{n : m_n inside complement(A)}
    zero = sub[full ^ np.arange(1 << K)]
    num = 2 * N - zero
    num[0] = N - hist[0]
    return num


def _exact_argmin(num: np.ndarray, N: int, marg: _Marginals, maximize: bool = False):
    vals = num / N - marg.subset
    if maximize:
        best = vals.max()
        cand = np.flatnonzero(vals >= best - _SCREEN)
    else:
        best = vals.min()
        cand = np.flatnonzero(vals <= best + _SCREEN)
    exact = {int(a): Fraction(int(num[a]), N) - marg.exact_sum(int(a)) for a in cand}
    target = max(exact.values()) if maximize else min(exact.values())
    winners = tuple(sorted(a for a, v in exact.items() if v == target))
    return target, winners


def _eval_from_hist(hist: np.ndarray, N: int, marg: _Marginals, t: float) -> AlphaCurveEval:
    num = _upper_numerators(hist, marg.K, N)
    value, winners = _exact_argmin(num, N, marg)
    return AlphaCurveEval(float(t), float(value), winners, value)


def _check_p(C: CostMatrix, p) -> None:
    if len(p) != C.K:
        raise ValidationError(f"p has length {len(p)} but the cost matrix has {C.K} columns")


def alpha_hat(C: CostMatrix, p, t: float) -> AlphaCurveEval:
    """Exact empirical value of the largest feasible level at threshold ``t``.

    Minimizes the sample objective over all ``2**K`` binary offset vectors and
    returns the optimum together with every minimizing bitmask (bit ``k`` set
    means facility ``k`` has offset 1).
    """
    _check_p(C, p)
    marg = _marginals(p)
    hist = mask_histogram(hit_masks(C.entries, t), C.K)
    return _eval_from_hist(hist, C.n_samples, marg, t)


def alpha_curve(C: CostMatrix, p) -> list[AlphaCurveEval]:
    """``alpha_hat`` at every distinct sample cost, swept incrementally."""
    _check_p(C, p)
    marg = _marginals(p)
    N, K = C.entries.shape
    flat = C.entries.ravel()
    order = np.argsort(flat, kind="stable")
    vals = flat[order]
    rows = order // K
    bits = np.left_shift(np.int64(1), (order % K).astype(np.int64))
    masks = np.zeros(N, dtype=np.int64)
    hist = np.zeros(1 << K, dtype=np.int64)
    hist[0] = N
    out = []
    i = 0
    total = vals.size
    while i < total:
        j = i
        v = vals[i]
        while j < total and vals[j] == v:
            n = rows[j]
            hist[masks[n]] -= 1
            masks[n] |= bits[j]
            hist[masks[n]] += 1
            j += 1
        out.append(_eval_from_hist(hist, N, marg, float(v)))
        i = j
    return out


def solve_root(C: CostMatrix, p, alpha: float) -> QuantileSolution:
    """Smallest sample cost ``t`` with ``alpha_hat(t) >= alpha``.

    The empirical curve is a nondecreasing right-continuous step function that
    only moves at sample costs, so binary search over the sorted distinct
    costs returns the infimum exactly.
    """
    if not (0.0 < alpha < 1.0):
        raise ValidationError("alpha must lie in (0, 1)")
    _check_p(C, p)
    target = Fraction(repr(float(alpha)))
    grid = C.sorted_unique
    evals = 0
    cache: dict[int, AlphaCurveEval] = {}

    def at(i: int) -> AlphaCurveEval:
        nonlocal evals
        if i not in cache:
            cache[i] = alpha_hat(C, p, float(grid[i]))
            evals += 1
        return cache[i]

    hi = grid.size - 1
    if at(hi).alpha_exact < target:
        raise RuntimeError("empirical curve below alpha at the largest cost; this cannot happen")
    lo = -1  # invariant: at(lo) < target (virtual at -1), at(hi) >= target
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if at(mid).alpha_exact >= target:
            hi = mid
        else:
            lo = mid
    best = at(hi)
    return QuantileSolution(
        t_hat=float(grid[hi]),
        alpha_at_t=best.alpha_hat,
        psi_hat=min(best.minimizers),
        curve_evals=evals,
    )


def feasible_interval(C: CostMatrix, p, t: float) -> FeasibleInterval:
    """Range of levels ``alpha`` attainable with ``t`` as the quantile.

    The upper end is ``alpha_hat``. The lower end is maximized over binary
    offsets only, so it is a binary-restricted lower bound.
    """
    _check_p(C, p)
    marg = _marginals(p)
    N, K = C.entries.shape
    full = (1 << K) - 1
    hist = mask_histogram(hit_masks(C.entries, t), K)
    upper, _ = _exact_argmin(_upper_numerators(hist, K, N), N, marg)
    sup = superset_sums(hist, K)
    # A proper: P(every k outside A hit) - p(A); A full: P(all hit)
    num = sup[full ^ np.arange(1 << K)]
    num[full] = sup[full]
    vals = num / N - marg.subset
    vals[full] = sup[full] / N
    best = vals.max()
    cand = np.flatnonzero(vals >= best - _SCREEN)
    exact = []
    for a in cand:
        a = int(a)
        if a == full:
            exact.append(Fraction(int(sup[full]), N))
        else:
            exact.append(Fraction(int(num[a]), N) - marg.exact_sum(a))
    lower = max(exact)
    return FeasibleInterval(float(lower), float(upper))


def sample_objective(C: CostMatrix, p, t: float, psi) -> float:
    """Sample objective ``mean_n max_k(1{C[n,k] <= t} + psi_k) - p . psi`` for real ``psi``.

    ``alpha_hat`` is its minimum over binary ``psi``; this direct form exists
    for checks on arbitrary offsets.
    """
    _check_p(C, p)
    psi = np.asarray(psi, dtype=float)
    scores = (C.entries <= t).astype(float) + psi[None, :]
    return float(scores.max(axis=1).mean() - np.dot(np.asarray(p, dtype=float), psi))


def psi_bits(mask: int, K: int) -> tuple[int, ...]:
    """Offset vector ``(psi_0, ..., psi_{K-1})`` of a bitmask."""
    return tuple((mask >> k) & 1 for k in range(K))


def psi_mask(bits: Sequence[int]) -> int:
    return sum(1 << k for k, b in enumerate(bits) if b)
