"""Command line entry point: ``qsot {solve,curve,evaluate,baseline,render,demo}``.

Exit status is 0 on success, 1 for invalid input (config, result file or
arguments) and 2 for runtime failures. Solver non-convergence is reported in
the ``warnings`` array of the result file and does not change the status.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

from . import pipeline
from .config import ConfigError, RunConfig, dump_config, dumps_json, load_config, loads_config
from .otcore import RngStream, ValidationError
from .plan import evaluate
from .quantile_solver import alpha_curve, psi_bits
from .render import (
    Palette,
    export_histogram,
    render_baseline_partition,
    render_quantile_partition,
    write_ppm,
)

log = logging.getLogger("qsot")

DEMO_ALPHAS = (0.25, 0.5, 0.95)


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def demo_config_text() -> str:
    return resources.files("qsot").joinpath("data/demo.toml").read_text()


def load_demo_config() -> RunConfig:
    return loads_config(demo_config_text(), base_dir=Path.cwd(), source="demo.toml")


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        changes["output_dir"] = Path(args.out)
    if getattr(args, "n_train", None) is not None:
        changes["n_train"] = args.n_train
    if getattr(args, "m_eval", None) is not None:
        changes["m_eval"] = args.m_eval
    if getattr(args, "width", None) is not None or getattr(args, "height", None) is not None:
        changes["render"] = replace(cfg.render, width=args.width or cfg.render.width,
                                    height=args.height or cfg.render.height)
    try:
        return replace(cfg, **changes)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    log.info("wrote %s", path)


def _load_result(path) -> dict:
    try:
        d = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read result file {path}: {e.strerror or e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from None
    try:
        pipeline.check_bundle(d)
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from None
    return d


def _palette_from_bundle(d: dict, K: int) -> Palette:
    r = d.get("config", {}).get("render", {})
    if "palette" in r:
        return Palette(tuple(tuple(c) for c in r["palette"]), tuple(r.get("background", (255, 255, 255))))
    return Palette.default(K)


def cmd_solve(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    res = pipeline.solve(cfg)
    out = cfg.output_dir
    _write(out / "result.json", dumps_json(pipeline.result_bundle(cfg, res)))
    export_histogram(res.stats, out / "hist.csv")
    _write(out / "timings.json", dumps_json(res.timings))
    for w in res.warnings:
        log.warning(w)
    return 0


def write_curve_csv(path: Path, evals, K: int) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["t", "alpha_hat", "minimizers"])
        for e in evals:
            mins = ";".join("".join(map(str, psi_bits(m, K))) for m in e.minimizers)
            out.writerow([repr(e.t), repr(e.alpha_hat), mins])


def cmd_curve(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    C = pipeline.training_matrix(cfg)
    write_curve_csv(cfg.output_dir / "curve.csv", alpha_curve(C, cfg.instance.p), cfg.instance.K)
    return 0


def cmd_evaluate(args) -> int:
    d = _load_result(args.result)
    inst = pipeline.bundle_instance(d)
    plan = pipeline.plan_from_dict(d["plan"])
    seed = args.seed if args.seed is not None else d["config"]["seed"]
    m = args.m if args.m is not None else d["config"]["m_eval"]
    if m < 1:
        raise ConfigError("--m must be at least 1")
    stats = evaluate(plan, inst, m, RngStream(seed, pipeline.STREAM_EVAL))
    out = Path(args.out) if args.out else Path(args.result).parent
    _write(out / "evaluation.json", dumps_json({"seed": seed, "stats": pipeline.stats_to_dict(stats)}))
    export_histogram(stats, out / "evaluation_hist.csv")
    return 0


def cmd_baseline(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    base = pipeline.baseline(cfg)
    out = cfg.output_dir
    bundle = {"format": "qsot-baseline/1", "versions": pipeline.versions(),
              "config": pipeline.config_to_dict(cfg, relative_to=out.parent),
              **pipeline.baseline_bundle(base), "warnings": base.warnings}
    _write(out / "baseline.json", dumps_json(bundle))
    export_histogram(base.stats, out / "baseline_hist.csv")
    return 0


def cmd_render(args) -> int:
    d = _load_result(args.result)
    inst = pipeline.bundle_instance(d)
    plan = pipeline.plan_from_dict(d["plan"])
    r = d["config"]["render"]
    res = (args.width or r["width"], args.height or r["height"])
    overlay = args.overlay or r.get("overlay", False)
    palette = _palette_from_bundle(d, inst.K)
    out = Path(args.out) if args.out else Path(args.result).parent
    out.mkdir(parents=True, exist_ok=True)
    write_ppm(render_quantile_partition(plan, inst.sampler.rect, res, palette, overlay), out / "quantile.ppm")
    weights = None
    if args.baseline:
        try:
            weights = pipeline.weights_from_dict(json.loads(Path(args.baseline).read_text())["weights"])
        except (OSError, KeyError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read baseline file {args.baseline}: {e}") from None
    elif d.get("baseline"):
        weights = pipeline.weights_from_dict(d["baseline"]["weights"])
    if weights is not None:
        write_ppm(render_baseline_partition(weights, plan.cost, inst.sampler.rect, res, palette), out / "voronoi.ppm")
    return 0


def run_demo(cfg: RunConfig, alphas=DEMO_ALPHAS) -> dict:
    """Full pipeline at several levels plus the mean baseline; returns a summary."""
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "demo_config.toml", dump_config(cfg, relative_to=out.parent))
    C = pipeline.training_matrix(cfg)
    base = pipeline.baseline(cfg)
    palette = cfg.render.palette_for(cfg.instance.K)
    domain = cfg.instance.sampler.rect
    res = (cfg.render.width, cfg.render.height)
    timings = {"baseline": base.timings}
    rows = [("mean-minimizing", base.stats)]
    results = {}
    _write(out / "baseline.json", dumps_json({"format": "qsot-baseline/1", **pipeline.baseline_bundle(base),
                                              "warnings": base.warnings}))
    export_histogram(base.stats, out / "hist_baseline.csv")
    write_ppm(render_baseline_partition(base.weights, cfg.instance.cost, domain, res, palette), out / "voronoi.ppm")
    for a in alphas:
        acfg = pipeline.with_alpha(cfg, a)
        r = pipeline.solve(acfg, C=C)
        results[a] = r
        tag = f"alpha{a:g}"
        _write(out / f"result_{tag}.json", dumps_json(pipeline.result_bundle(acfg, r, base)))
        export_histogram(r.stats, out / f"hist_{tag}.csv")
        write_ppm(render_quantile_partition(r.plan, domain, res, palette, cfg.render.overlay),
                  out / f"quantile_{tag}.ppm")
        rows.append((f"alpha={a:g}", r.stats))
        timings[tag] = r.timings
    with open(out / "table1.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "mean_cost", "median_cost", "q95_cost", "coverage_at_t"])
        for name, s in rows:
            w.writerow([name, repr(s.mean_cost), repr(s.median_cost), repr(s.q95_cost), repr(s.coverage_at_t)])
    _write(out / "timings.json", dumps_json(timings))
    return {"baseline": base, "results": results}


def cmd_demo(args) -> int:
    cfg = load_demo_config()
    if args.out is None:
        args.out = "demo_out"
    cfg = _apply_overrides(cfg, args)
    summary = run_demo(cfg)
    b = summary["baseline"].stats
    print(f"{'method':<18}{'mean':>10}{'median':>10}{'q95':>10}")
    print(f"{'mean-minimizing':<18}{b.mean_cost:>10.4f}{b.median_cost:>10.4f}{b.q95_cost:>10.4f}")
    for a, r in summary["results"].items():
        s = r.stats
        print(f"{'alpha=' + format(a, 'g'):<18}{s.mean_cost:>10.4f}{s.median_cost:>10.4f}{s.q95_cost:>10.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="qsot", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, seed=True, out=True):
        if seed:
            p.add_argument("--seed", type=int, help="override the config seed")
        if out:
            p.add_argument("--out", help="output directory (overrides output_dir)")

    p = sub.add_parser("solve", help="root, offsets, tie-break fit and evaluation")
    p.add_argument("config")
    common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("curve", help="empirical alpha curve over all sample costs (CSV)")
    p.add_argument("config")
    common(p)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("evaluate", help="re-evaluate the plan stored in a result file")
    p.add_argument("result")
    p.add_argument("--m", type=int, help="evaluation draws (default: m_eval of the run)")
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline", help="mean-minimizing weighted Voronoi weights and stats")
    p.add_argument("config")
    common(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("render", help="PPM images of a stored plan (and baseline)")
    p.add_argument("result")
    p.add_argument("--baseline", help="baseline.json to render alongside")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--overlay", action="store_true", help="draw the c(x,k)=t boundaries")
    common(p, seed=False)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("demo", help="bundled six-facility example at alpha in {0.25, 0.5, 0.95}")
    p.add_argument("--n-train", type=int)
    p.add_argument("--m-eval", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    common(p)
    p.set_defaults(func=cmd_demo)
    return ap


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
