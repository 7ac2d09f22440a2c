"""End-to-end orchestration and result bundles.

Stream ids used with the run seed: 1 training sample, 2 tie-break SA,
3 plan evaluation, 4 baseline SA (its holdout comes first on the same stream),
5 baseline evaluation. Quantile plans for different levels share streams 1-3.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .config import RunConfig, config_to_dict, instance_from_dict, instance_to_dict
from .otcore import CostSpec, ProblemInstance, RngStream
from .plan import (
    PlanStats,
    TransportPlan,
    VoronoiWeights,
    assemble_plan,
    evaluate,
    evaluate_baseline,
    solve_mean_baseline,
)
from .quantile_solver import (
    CostMatrix,
    FeasibleInterval,
    QuantileSolution,
    build_cost_matrix,
    feasible_interval,
    psi_bits,
    solve_root,
)
from .tiebreak import TieBreakModel, precompute_masks, sa_fit

STREAM_TRAIN = 1
STREAM_TIEBREAK = 2
STREAM_EVAL = 3
STREAM_BASELINE = 4
STREAM_BASELINE_EVAL = 5

FORMAT = "qsot-result/1"


@dataclass
class SolveResult:
    instance: ProblemInstance
    solution: QuantileSolution
    interval: FeasibleInterval
    model: TieBreakModel
    plan: TransportPlan
    stats: PlanStats | None
    warnings: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)


@dataclass
class BaselineResult:
    weights: VoronoiWeights
    stats: PlanStats | None
    warnings: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)


def training_matrix(cfg: RunConfig) -> CostMatrix:
    return build_cost_matrix(cfg.instance, cfg.n_train, RngStream(cfg.seed, STREAM_TRAIN))


def solve(cfg: RunConfig, C: CostMatrix | None = None, do_eval: bool = True) -> SolveResult:
    inst = cfg.instance
    timings = {}
    t0 = time.perf_counter()
    if C is None:
        C = training_matrix(cfg)
    timings["sample"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    sol = solve_root(C, inst.p, inst.alpha)
    interval = feasible_interval(C, inst.p, sol.t_hat)
    timings["root"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    masks = precompute_masks(C, sol.t_hat, sol.psi_hat)
    model = sa_fit(masks, inst.p, cfg.sa, RngStream(cfg.seed, STREAM_TIEBREAK))
    timings["tiebreak"] = time.perf_counter() - t0

    plan = assemble_plan(sol, model, inst)
    warnings = []
    if not model.converged:
        warnings.append(
            f"tie-break SA stopped at {model.iterations} iterations with gradient norm "
            f"{model.grad_norm:.3g} > tol {cfg.sa.tol:g}"
        )
    stats = None
    if do_eval:
        t0 = time.perf_counter()
        stats = evaluate(plan, inst, cfg.m_eval, RngStream(cfg.seed, STREAM_EVAL))
        timings["evaluate"] = time.perf_counter() - t0
    return SolveResult(inst, sol, interval, model, plan, stats, warnings, timings)


def baseline(cfg: RunConfig, do_eval: bool = True) -> BaselineResult:
    t0 = time.perf_counter()
    w = solve_mean_baseline(cfg.instance, cfg.baseline_sa, RngStream(cfg.seed, STREAM_BASELINE), n_ref=cfg.n_train)
    timings = {"baseline": time.perf_counter() - t0}
    warnings = []
    if not w.converged:
        warnings.append(f"baseline SA stopped at {w.iterations} iterations with held-out norm {w.grad_norm:.3g}")
    stats = None
    if do_eval:
        t0 = time.perf_counter()
        stats = evaluate_baseline(w, cfg.instance, cfg.m_eval, RngStream(cfg.seed, STREAM_BASELINE_EVAL))
        timings["baseline_evaluate"] = time.perf_counter() - t0
    return BaselineResult(w, stats, warnings, timings)


def with_alpha(cfg: RunConfig, alpha: float) -> RunConfig:
    return replace(cfg, instance=replace(cfg.instance, alpha=alpha))


# ---------------------------------------------------------------- serialization

def stats_to_dict(s: PlanStats) -> dict:
    return {
        "marginals": s.marginals,
        "coverage_at_t": s.coverage_at_t,
        "mean_cost": s.mean_cost,
        "median_cost": s.median_cost,
        "q95_cost": s.q95_cost,
        "m_samples": s.m_samples,
        "histogram": {"edges": s.bin_edges, "counts": s.counts},
    }


def stats_from_dict(d: dict) -> PlanStats:
    return PlanStats(
        marginals=np.array(d["marginals"], dtype=float),
        coverage_at_t=float(d["coverage_at_t"]) if d["coverage_at_t"] is not None else float("nan"),
        mean_cost=d["mean_cost"],
        median_cost=d["median_cost"],
        q95_cost=d["q95_cost"],
        bin_edges=np.array(d["histogram"]["edges"], dtype=float),
        counts=np.array(d["histogram"]["counts"], dtype=np.int64),
        m_samples=int(d["m_samples"]),
    )


def plan_to_dict(plan: TransportPlan) -> dict:
    return {
        "t": plan.t,
        "psi": plan.psi,
        "psi_bits": list(psi_bits(plan.psi, plan.K)),
        "theta": plan.theta,
        "p": plan.p,
        "cost": {"kind": plan.cost.kind, "facilities": plan.cost.facilities},
    }


def plan_from_dict(d: dict) -> TransportPlan:
    cost = CostSpec(d["cost"]["kind"], d["cost"]["facilities"])
    return TransportPlan(float(d["t"]), int(d["psi"]), np.array(d["theta"], dtype=float), cost,
                         np.array(d["p"], dtype=float))


def weights_to_dict(w: VoronoiWeights) -> dict:
    return {"g": w.g, "iterations": w.iterations, "grad_norm": w.grad_norm, "converged": w.converged}


def weights_from_dict(d: dict) -> VoronoiWeights:
    return VoronoiWeights(np.array(d["g"], dtype=float), int(d["iterations"]), float(d["grad_norm"]),
                          bool(d["converged"]))


def versions() -> dict:
    import numba

    return {"qsot": __version__, "numpy": np.__version__, "numba": numba.__version__}


def result_bundle(cfg: RunConfig, res: SolveResult, base: BaselineResult | None = None) -> dict:
    sol, m = res.solution, res.model
    d = {
        "format": FORMAT,
        "versions": versions(),
        "config": config_to_dict(cfg, relative_to=cfg.output_dir.parent),
        "instance": instance_to_dict(res.instance),
        "solution": {
            "t_hat": sol.t_hat,
            "alpha_at_t": sol.alpha_at_t,
            "psi_hat": sol.psi_hat,
            "psi_bits": list(psi_bits(sol.psi_hat, res.instance.K)),
            "curve_evals": sol.curve_evals,
            "feasible_interval": {"lower": res.interval.lower, "upper": res.interval.upper,
                                  "lower_kind": "binary-restricted"},
        },
        "model": {
            "theta": m.theta,
            "theta_last": m.theta_last,
            "iterations": m.iterations,
            "grad_norm": m.grad_norm,
            "converged": m.converged,
            "step_a": m.step_a,
            "step_b": m.step_b,
            "step_kappa": m.step_kappa,
        },
        "plan": plan_to_dict(res.plan),
        "stats": stats_to_dict(res.stats) if res.stats is not None else None,
        "baseline": None,
        "warnings": list(res.warnings),
    }
    if base is not None:
        d["baseline"] = baseline_bundle(base)
        d["warnings"] += base.warnings
    return d


def baseline_bundle(base: BaselineResult) -> dict:
    return {
        "weights": weights_to_dict(base.weights),
        "stats": stats_to_dict(base.stats) if base.stats is not None else None,
    }


def check_bundle(d: dict) -> None:
    if d.get("format") != FORMAT:
        raise ValueError(f"not a {FORMAT} result file")


def bundle_instance(d: dict) -> ProblemInstance:
    return instance_from_dict(d["instance"])
