"""Acceptance suite: nine criteria, each printed as one PASS/FAIL line.

Run under pytest (the lines appear in the terminal output even when captured)
or directly with ``python3 tests/test_acceptance.py`` for the summary alone.
Seeds are fixed up front; no criterion retries with other seeds.
"""

from __future__ import annotations

import json
import math
import sys
import tempfile
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import line_instance, unit_instance  # noqa: E402
from oracles import brute_alpha_hat, quantile_ci_halfwidth, three_case_mask  # noqa: E402
from qsot import pipeline  # noqa: E402
from qsot.cli import run  # noqa: E402
from qsot.config import RunConfig  # noqa: E402
from qsot.otcore import RngStream, cost_matrix  # noqa: E402
from qsot.plan import baseline_draws, evaluate, evaluation_draws  # noqa: E402
from qsot.quantile_solver import (  # noqa: E402
    CostMatrix,
    alpha_hat,
    build_cost_matrix,
    feasible_interval,
    psi_bits,
    psi_mask,
    sample_objective,
    solve_root,
)
from qsot.render import Palette, marker_mask, pixel_centers, pixel_masks, read_ppm  # noqa: E402
from qsot.tiebreak import choice_probs, dual_gradient, dual_objective, hessian_sigma  # noqa: E402

N_TRAIN = 10_000
M_EVAL = 100_000
SEEDS = range(20)
LN5 = math.log(5)
DEMO_SEED = 7
DEMO_ALPHAS = ("0.25", "0.5", "0.95")


def emit(n: int, ok: bool, detail: str, capsys=None) -> None:
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    if capsys is not None:
        with capsys.disabled():
            print("\n" + line, flush=True)
    else:
        print(line, flush=True)


def root(inst, seed, n=N_TRAIN):
    C = build_cost_matrix(inst, n, RngStream(seed, pipeline.STREAM_TRAIN))
    return solve_root(C, inst.p, inst.alpha)


# ---------------------------------------------------------------- criteria

def criterion_1():
    inst = unit_instance(0.7)
    hits, worst = 0, 0.0
    for seed in SEEDS:
        t0 = time.perf_counter()
        res = pipeline.solve(RunConfig(inst, n_train=N_TRAIN, seed=seed), do_eval=False)
        worst = max(worst, time.perf_counter() - t0)
        hits += abs(res.solution.t_hat - 0.7) <= 0.02
    ok = hits >= 18 and worst < 1.0
    return ok, f"K=1 root within 0.02 of 0.7 in {hits}/20 seeds; slowest seed {worst:.3f}s"


def criterion_2():
    inst = line_instance(0.5, 0.5)
    errs = [abs(root(inst, seed).t_hat - 0.25) for seed in SEEDS]
    hits = sum(e <= 0.02 for e in errs)
    return hits >= 18, f"symmetric root within 0.02 of 0.25 in {hits}/20 seeds; max error {max(errs):.4f}"


_fits: dict = {}


def fitted(name):
    """Full pipeline fits on the two line instances at seed 0 (shared by criteria 3 and 6)."""
    if name not in _fits:
        inst = line_instance(0.5, 0.5) if name == "symmetric" else line_instance(0.25, 0.55)
        cfg = RunConfig(inst, n_train=N_TRAIN, m_eval=M_EVAL, seed=0)
        _fits[name] = pipeline.solve(cfg)
    return _fits[name]


def criterion_3():
    res = fitted("asymmetric")
    psi = psi_bits(res.solution.psi_hat, 2)
    t = res.solution.t_hat
    th = float(res.model.theta[0])
    v1 = float(choice_probs(res.model.theta, 0b11).probs[0])
    ok = psi == (0, 1) and abs(t - 0.3) <= 0.02 and abs(th - LN5) <= 0.1 and abs(v1 - 5 / 6) <= 0.03
    return ok, (f"psi={psi} t={t:.4f} (|err| {abs(t - 0.3):.4f}) theta_0={th:.4f} (|err| {abs(th - LN5):.4f}) "
                f"tie prob={v1:.4f} (|err| {abs(v1 - 5 / 6):.4f}); SA grad {res.model.grad_norm:.2e}")


def random_instance(rng):
    K = int(rng.integers(1, 7))
    N = int(rng.integers(1, 129))
    if rng.random() < 0.5:
        C = rng.integers(0, 8, (N, K)) / 8  # heavy ties
    else:
        C = rng.random((N, K))
    # decimal p (exact as both repr and Fraction), every entry positive
    units = rng.multinomial(1000 - K, rng.dirichlet(np.ones(K))) + 1
    p = [int(u) / 1000 for u in units]
    return CostMatrix.from_entries(C), p, [Fraction(int(u), 1000) for u in units]


def criterion_4():
    rng = np.random.default_rng(2024)
    mismatches, elapsed, evals = 0, 0.0, 0
    for _ in range(200):
        C, p, pf = random_instance(rng)
        ts = list(rng.choice(C.sorted_unique, size=min(3, C.sorted_unique.size), replace=False))
        ts.append(float(rng.uniform(-0.1, 1.1)))
        for t in ts:
            t0 = time.perf_counter()
            ev = alpha_hat(C, p, float(t))
            elapsed += time.perf_counter() - t0
            evals += 1
            val, mins = brute_alpha_hat(C.entries.tolist(), pf, float(t))
            mismatches += (ev.alpha_exact != val) or (ev.minimizers != mins)
    ok = mismatches == 0 and elapsed < 10.0
    return ok, f"{evals} evaluations on 200 instances, {mismatches} mismatches; solver time {elapsed:.2f}s"


def criterion_5():
    rng = np.random.default_rng(55)
    fails = []
    # monotonicity, translation invariance, interval ordering
    for _ in range(100):
        C, p, _ = random_instance(rng)
        t1, t2 = np.sort(rng.uniform(-0.1, 1.1, 2))
        if alpha_hat(C, p, t1).alpha_exact > alpha_hat(C, p, t2).alpha_exact:
            fails.append("monotone")
        psi = rng.normal(0, 2, len(p))
        shift = float(rng.integers(-5, 6))
        a = sample_objective(C, p, t1, psi)
        b = sample_objective(C, p, t1, psi + shift)
        if abs(a - b) > 1e-12:
            fails.append("translation")
        iv = feasible_interval(C, p, t2)
        if not iv.lower <= iv.upper:
            fails.append("interval")
    # finite differences at 50 random theta
    worst_fd = 0.0
    for _ in range(50):
        K = int(rng.integers(2, 7))
        p = rng.dirichlet(np.ones(K))
        theta = rng.normal(0, 1.5, K)
        theta[-1] = 0
        masks = rng.integers(1, 1 << K, 80)
        g = dual_gradient(masks, theta, p)[:-1]
        fd = np.empty(K - 1)
        for k in range(K - 1):
            e = np.zeros(K)
            e[k] = 1e-5
            fd[k] = (dual_objective(masks, theta + e, p) - dual_objective(masks, theta - e, p)) / 2e-5
        rel = np.linalg.norm(fd - g) / max(np.linalg.norm(g), 1e-12)
        worst_fd = max(worst_fd, rel)
    if worst_fd > 1e-6:
        fails.append("gradient")
    # Hessian bound at 100 random theta
    worst_gap = np.inf
    for _ in range(100):
        K = int(rng.integers(2, 7))
        theta = rng.normal(0, 2, K)
        theta[-1] = 0
        masks = rng.integers(1, 1 << K, 60)
        sigma, H = hessian_sigma(masks, theta)
        lam = rng.normal(size=K - 1)
        lam /= np.linalg.norm(lam)
        worst_gap = min(worst_gap, lam @ H @ lam - sigma[:-1].min() * sigma[-1])
    if worst_gap < -1e-10:
        fails.append("hessian")
    ok = not fails
    return ok, (f"failures={sorted(set(fails)) or 'none'}; worst gradient rel err {worst_fd:.1e}; "
                f"min Hessian margin {worst_gap:.2e}")


def criterion_6():
    parts, ok = [], True
    for name in ("symmetric", "asymmetric"):
        res = fitted(name)
        inst = res.instance
        s = res.stats
        m = s.m_samples
        p = np.asarray(inst.p)
        marg_tol = 3 * np.sqrt(p * (1 - p) / m)
        marg_err = np.abs(s.marginals - p)
        a_hat = res.solution.alpha_at_t
        cov_tol = 3 * math.sqrt(inst.alpha * (1 - inst.alpha) / m) + inst.K * 1e-4
        cov_err = abs(s.coverage_at_t - a_hat)
        good = bool(np.all(marg_err <= marg_tol)) and cov_err <= cov_tol
        ok &= good
        parts.append(f"{name}: marginal err {np.round(marg_err, 5).tolist()} vs {np.round(marg_tol, 5).tolist()}, "
                     f"coverage err {cov_err:.5f} vs {cov_tol:.5f}")
    return ok, "; ".join(parts)


_demo: dict = {}


def demo_runs():
    """Two independent CLI demo runs at the bundled settings (seed 7)."""
    if not _demo:
        base = Path(tempfile.mkdtemp(prefix="qsot_accept_"))
        codes = [run(["demo", "--seed", str(DEMO_SEED), "--out", str(base / name)]) for name in ("run1", "run2")]
        _demo.update(base=base, codes=codes)
    return _demo


def load_result(alpha: str):
    d = json.loads((demo_runs()["base"] / "run1" / f"result_alpha{alpha}.json").read_text())
    return d, pipeline.bundle_instance(d), pipeline.plan_from_dict(d["plan"])


def criterion_7():
    base_dir = demo_runs()["base"] / "run1"
    d, inst, _ = load_result("0.5")
    m = d["config"]["m_eval"]
    weights = pipeline.weights_from_dict(d["baseline"]["weights"])
    bcost, _ = baseline_draws(weights, inst, m, RngStream(DEMO_SEED, pipeline.STREAM_BASELINE_EVAL))
    bcost = np.sort(bcost)
    stored = json.loads((base_dir / "baseline.json").read_text())["stats"]
    assert stored["median_cost"] == float(np.quantile(bcost, 0.5, method="inverted_cdf"))
    costs = {}
    for a in DEMO_ALPHAS:
        da, ia, plan = load_result(a)
        c, _ = evaluation_draws(plan, ia, m, RngStream(DEMO_SEED, pipeline.STREAM_EVAL))
        costs[a] = np.sort(c)
        assert da["stats"]["mean_cost"] == float(c.mean())

    def q(x, level):
        return float(np.quantile(x, level, method="inverted_cdf"))

    checks = []
    med_slack = quantile_ci_halfwidth(costs["0.5"], 0.5) + quantile_ci_halfwidth(bcost, 0.5)
    checks.append(("median a=0.5 <= baseline", q(costs["0.5"], 0.5), q(bcost, 0.5), med_slack))
    q95_slack = quantile_ci_halfwidth(costs["0.95"], 0.95) + quantile_ci_halfwidth(bcost, 0.95)
    checks.append(("q95 a=0.95 <= baseline", q(costs["0.95"], 0.95), q(bcost, 0.95), q95_slack))
    for a in DEMO_ALPHAS:
        slack = 3 * math.sqrt(bcost.var() / m + costs[a].var() / m)
        checks.append((f"mean baseline <= a={a}", float(bcost.mean()), float(costs[a].mean()), slack))
    ok = all(lhs <= rhs + slack for _, lhs, rhs, slack in checks)
    detail = "; ".join(f"{name}: {lhs:.4f} vs {rhs:.4f} (+{slack:.4f})" for name, lhs, rhs, slack in checks)
    return ok, detail


def criterion_8():
    runs = demo_runs()
    r1, r2 = runs["base"] / "run1", runs["base"] / "run2"
    ppms = sorted(p.name for p in r1.glob("*.ppm"))
    identical = all((r1 / n).read_bytes() == (r2 / n).read_bytes() for n in ppms) and len(ppms) == 4
    bad_mask = bad_pure = pure_checked = 0
    for a in DEMO_ALPHAS:
        d, inst, plan = load_result(a)
        res = (d["config"]["render"]["width"], d["config"]["render"]["height"])
        domain = inst.sampler.rect
        img = read_ppm(r1 / f"quantile_alpha{a}.ppm")
        masks = pixel_masks(plan, domain, res).ravel()
        C = cost_matrix(plan.cost, pixel_centers(domain, res))
        bits = psi_bits(plan.psi, plan.K)
        # reference masks from the case analysis, grouped by (inside-set) pattern
        inside = (C <= plan.t).astype(np.int64) @ (1 << np.arange(plan.K))
        ref_by_pattern = {}
        for pat in np.unique(inside):
            row = [0.0 if (pat >> k) & 1 else np.inf for k in range(plan.K)]
            ref_by_pattern[int(pat)] = three_case_mask(row, 0.0, bits)
        ref = np.array([ref_by_pattern[int(v)] for v in inside])
        bad_mask += int(np.sum(ref != masks))
        # inside exactly one circle of a psi=1 facility -> pure palette color
        ones = psi_mask(bits)
        one_hit = inside & ones
        single = (one_hit != 0) & ((one_hit & (one_hit - 1)) == 0)
        single &= ~marker_mask(plan.cost, domain, res).ravel()
        cols = np.array(Palette.default(plan.K).colors)
        k_idx = np.log2(np.where(single, one_hit, 1)).astype(int)
        px = img.pixels.reshape(-1, 3)
        bad_pure += int(np.sum(np.any(px[single] != cols[k_idx[single]], axis=1)))
        pure_checked += int(single.sum())
    ok = identical and bad_mask == 0 and bad_pure == 0 and pure_checked > 0 and runs["codes"] == [0, 0]
    return ok, (f"{len(ppms)} PPMs byte-identical across runs: {identical}; mask rule violations {bad_mask}; "
                f"impure single-circle pixels {bad_pure} of {pure_checked}")


def criterion_9():
    inst = line_instance(0.5, 0.5)
    Ns = [1_000, 4_000, 16_000, 64_000]
    t0 = time.perf_counter()
    med = []
    for n in Ns:
        errs = [abs(root(inst, seed, n).t_hat - 0.25) for seed in range(50)]
        med.append(float(np.median(errs)))
    elapsed = time.perf_counter() - t0
    slope = float(np.polyfit(np.log(Ns), np.log(med), 1)[0])
    ok = -0.8 <= slope <= -0.3 and elapsed <= 600
    return ok, f"median errors {[round(v, 5) for v in med]}; slope {slope:.3f}; {elapsed:.1f}s"


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
            6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9}


# ---------------------------------------------------------------- pytest entry points

def _check(n, capsys):
    ok, detail = CRITERIA[n]()
    emit(n, ok, detail, capsys)
    assert ok, detail


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6, 7, 8])
def test_criterion(n, capsys):
    _check(n, capsys)


@pytest.mark.slow
def test_criterion_9_rate(capsys):
    _check(9, capsys)


if __name__ == "__main__":
    results = {}
    for n, fn in CRITERIA.items():
        ok, detail = fn()
        emit(n, ok, detail)
        results[n] = ok
    sys.exit(0 if all(results.values()) else 1)
