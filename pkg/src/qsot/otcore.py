"""Problem definition: samplers, cost functions and the RNG contract.

Facilities are indexed from 0 in code. Every random draw in the package goes
through :class:`RngStream`, which maps ``(seed, stream_id)`` to a PCG64
generator seeded by ``numpy.random.SeedSequence(seed, spawn_key=(stream_id,))``.
Distinct stream ids therefore give independent streams, and the same pair
always reproduces the same draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MAX_FACILITIES = 24
MAX_REJECTIONS = 1_000_000

COST_KINDS = ("euclidean", "l1", "squared_euclidean")
SAMPLER_KINDS = ("uniform_rect", "gaussian_mixture_truncated")


class ValidationError(ValueError):
    """An input violates a documented invariant."""


class SamplingError(RuntimeError):
    """Rejection sampling exceeded its retry cap."""


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not (0 <= int(v) < 2**64):
                raise ValidationError(f"{name} must be an unsigned 64-bit integer, got {v}")

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(ss))

    def with_stream(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)


def as_generator(rng: RngStream | np.random.Generator) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return rng.generator()


@dataclass(frozen=True)
class Rect:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        vals = (self.xmin, self.ymin, self.xmax, self.ymax)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError("rect coordinates must be finite")
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValidationError("rect must have positive area")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return (
            (pts[..., 0] >= self.xmin)
            & (pts[..., 0] <= self.xmax)
            & (pts[..., 1] >= self.ymin)
            & (pts[..., 1] <= self.ymax)
        )

    def as_list(self) -> list[float]:
        return [self.xmin, self.ymin, self.xmax, self.ymax]


UNIT_SQUARE = Rect(0.0, 0.0, 1.0, 1.0)


@dataclass(frozen=True)
class MixtureComponent:
    weight: float
    mean: tuple[float, float]
    std: float


@dataclass(frozen=True)
class SamplerSpec:
    """Distribution of demand points ``X``.

    ``uniform_rect`` draws uniformly on ``rect``. ``gaussian_mixture_truncated``
    draws from an isotropic Gaussian mixture conditioned on lying in ``rect``.
    """

    kind: str = "uniform_rect"
    rect: Rect = UNIT_SQUARE
    components: tuple[MixtureComponent, ...] = ()

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ValidationError(f"sampler kind must be one of {SAMPLER_KINDS}, got {self.kind!r}")
        if self.kind == "gaussian_mixture_truncated":
            if not self.components:
                raise ValidationError("mixture sampler needs at least one component")
            w = [c.weight for c in self.components]
            if any(not (x > 0) for x in w):
                raise ValidationError("mixture weights must be positive")
            if abs(sum(w) - 1.0) > 1e-9:
                raise ValidationError("mixture weights must sum to 1")
            if any(not (c.std > 0) for c in self.components):
                raise ValidationError("mixture std-devs must be positive")
            for c in self.components:
                if len(c.mean) != 2 or not all(math.isfinite(v) for v in c.mean):
                    raise ValidationError("mixture means must be finite 2D points")


@dataclass(frozen=True)
class CostSpec:
    kind: str
    facilities: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.kind not in COST_KINDS:
            raise ValidationError(f"cost kind must be one of {COST_KINDS}, got {self.kind!r}")
        fac = np.array(self.facilities, dtype=float)
        if fac.ndim != 2 or fac.shape[1] != 2 or fac.shape[0] < 1:
            raise ValidationError("facilities must be a nonempty list of 2D points")
        if not np.all(np.isfinite(fac)):
            raise ValidationError("facility coordinates must be finite")
        fac.setflags(write=False)
        object.__setattr__(self, "facilities", fac)

    @property
    def K(self) -> int:
        return self.facilities.shape[0]

    def __eq__(self, other):
        if not isinstance(other, CostSpec):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.facilities, other.facilities)

    def __hash__(self):
        return hash((self.kind, self.facilities.tobytes()))


@dataclass(frozen=True)
class ProblemInstance:
    p: np.ndarray = field(repr=False)
    cost: CostSpec
    sampler: SamplerSpec
    alpha: float

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        if p.ndim != 1 or p.size < 1:
            raise ValidationError("p must be a nonempty vector")
        if p.size > MAX_FACILITIES:
            raise ValidationError(f"K must be at most {MAX_FACILITIES}")
        if p.size != self.cost.K:
            raise ValidationError(f"p has length {p.size} but there are {self.cost.K} facilities")
        if not np.all(np.isfinite(p)) or np.any(p <= 0):
            raise ValidationError("every p_k must be positive")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValidationError("p must sum to 1")
        if not (0.0 < self.alpha < 1.0):
            raise ValidationError("alpha must lie in (0, 1)")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @property
    def K(self) -> int:
        return self.p.size

    def __eq__(self, other):
        if not isinstance(other, ProblemInstance):
            return NotImplemented
        return (
            np.array_equal(self.p, other.p)
            and self.cost == other.cost
            and self.sampler == other.sampler
            and self.alpha == other.alpha
        )

    def __hash__(self):
        return hash((self.p.tobytes(), self.cost, self.sampler, self.alpha))


def sample_points(sampler: SamplerSpec, n: int, rng: RngStream | np.random.Generator) -> np.ndarray:
    """Draw ``n`` points from ``sampler`` as an ``(n, 2)`` array."""
    if n < 1:
        raise ValidationError("n must be at least 1")
    gen = as_generator(rng)
    r = sampler.rect
    if sampler.kind == "uniform_rect":
        u = gen.random((n, 2))
        out = np.empty((n, 2))
        out[:, 0] = r.xmin + u[:, 0] * r.width
        out[:, 1] = r.ymin + u[:, 1] * r.height
        # guard against xmin + 1.0*width rounding past xmax
        np.clip(out[:, 0], r.xmin, r.xmax, out=out[:, 0])
        np.clip(out[:, 1], r.ymin, r.ymax, out=out[:, 1])
        return out
    return _sample_truncated_mixture(sampler, n, gen)


def _sample_truncated_mixture(sampler: SamplerSpec, n: int, gen: np.random.Generator) -> np.ndarray:
    comps = sampler.components
    weights = np.array([c.weight for c in comps])
    weights = weights / weights.sum()
    means = np.array([c.mean for c in comps], dtype=float)
    stds = np.array([c.std for c in comps], dtype=float)

    out = np.empty((n, 2))
    filled = 0
    run = 0  # consecutive rejections since the last accepted point
    while filled < n:
        batch = max(2 * (n - filled), 1024)
        idx = gen.choice(len(comps), size=batch, p=weights)
        cand = means[idx] + stds[idx, None] * gen.standard_normal((batch, 2))
        ok = sampler.rect.contains(cand)
        acc = np.flatnonzero(ok)
        if acc.size == 0:
            run += batch
        else:
            gaps = np.diff(np.concatenate(([-1], acc))) - 1
            gaps[0] += run
            if gaps.max() >= MAX_REJECTIONS:
                raise SamplingError("truncated mixture rejected too many candidates; mass lies outside the rect")
            run = batch - 1 - acc[-1]
        if run >= MAX_REJECTIONS:
            raise SamplingError("truncated mixture rejected too many candidates; mass lies outside the rect")
        take = acc[: n - filled]
        out[filled : filled + take.size] = cand[take]
        filled += take.size
    return out


def cost_matrix(cost: CostSpec, points: np.ndarray) -> np.ndarray:
    """Costs ``c(x_n, k)`` for every point row and facility, shape ``(n, K)``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    diff = pts[:, None, :] - cost.facilities[None, :, :]
    if cost.kind == "euclidean":
        return np.sqrt(diff[..., 0] ** 2 + diff[..., 1] ** 2)
    if cost.kind == "l1":
        return np.abs(diff[..., 0]) + np.abs(diff[..., 1])
    return diff[..., 0] ** 2 + diff[..., 1] ** 2


def cost(spec: CostSpec, x: Sequence[float], k: int) -> float:
    """Cost of serving point ``x`` from facility ``k`` (0-based)."""
    if not (0 <= k < spec.K):
        raise IndexError(f"facility index {k} out of range for K={spec.K}")
    return float(cost_matrix(spec, np.asarray(x, dtype=float))[0, k])
