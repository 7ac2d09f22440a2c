import csv
import json
from pathlib import Path

import numpy as np
import pytest

from qsot import pipeline
from qsot.cli import demo_config_text, load_demo_config, run, run_demo
from qsot.config import ConfigError, config_to_dict, dump_config, dumps_json, load_config, loads_config
from qsot.otcore import RngStream, sample_points
from qsot.render import read_ppm

K1 = """
seed = 5
n_train = 400
m_eval = 2000
[instance]
alpha = 0.4
p = [1.0]
[instance.cost]
facilities = [[0.0, 0.0]]
[instance.sampler]
rect = [0.0, 0.0, 1.0, 1e-9]
"""

LINE = """
seed = 1
n_train = 2000
m_eval = 20000
[instance]
alpha = 0.55
p = [0.25, 0.75]
[instance.cost]
kind = "euclidean"
facilities = [[0.0, 0.0], [1.0, 0.0]]
[instance.sampler]
rect = [0.0, 0.0, 1.0, 1e-9]
[render]
width = 40
height = 8
"""


def write(tmp_path, text, name="c.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_p_sum_error(tmp_path):
    bad = LINE.replace("p = [0.25, 0.75]", "p = [0.6, 0.4, 0.1]").replace(
        "[[0.0, 0.0], [1.0, 0.0]]", "[[0.0, 0.0], [1.0, 0.0], [0.5, 0.5]]")
    with pytest.raises(ConfigError, match="p must sum to 1"):
        load_config(write(tmp_path, bad))
    assert run(["solve", str(write(tmp_path, bad))]) == 1


def test_minimal_config_defaults():
    cfg = loads_config("""
[instance]
alpha = 0.5
p = [1.0]
[instance.cost]
facilities = [[0.5, 0.5]]
""")
    assert (cfg.n_train, cfg.m_eval, cfg.render.width, cfg.render.height) == (10_000, 100_000, 800, 800)
    assert cfg.seed == 0 and cfg.sa.a == 1.0 and cfg.sa.tol == 1e-4


def test_parse_error_has_line_info():
    with pytest.raises(ConfigError, match="line 2"):
        loads_config("[instance]\nalpha = = 0.5\n")


@pytest.mark.parametrize("text, msg", [
    ("[instance]\nalpha = 0.5\np = [1.0]\n", "instance.cost"),
    ("bogus = 1\n[instance]\nalpha = 0.5\np = [1.0]\n[instance.cost]\nfacilities=[[0,0]]\n", "unknown key"),
    ("n_train = 1\n[instance]\nalpha = 0.5\np = [0.5, 0.5]\n[instance.cost]\nfacilities=[[0,0],[1,1]]\n",
     "n_train"),
    ("[instance]\nalpha = 1.5\np = [1.0]\n[instance.cost]\nfacilities=[[0,0]]\n", "alpha"),
])
def test_validation_errors(text, msg):
    with pytest.raises(ConfigError, match=msg):
        loads_config(text)


def test_demo_config_round_trip():
    cfg = load_demo_config()
    assert cfg.instance.K == 6 and cfg.instance.alpha == 0.5
    assert cfg.instance.sampler.kind == "uniform_rect"
    again = loads_config(dump_config(cfg), base_dir=Path.cwd())
    assert again == cfg
    assert config_to_dict(again) == config_to_dict(cfg)
    assert "not the" in demo_config_text().lower() or "synthetic" in demo_config_text().lower()


def test_missing_config_exit_code(tmp_path):
    assert run(["solve", str(tmp_path / "nope.toml")]) == 1
    assert run(["render", str(tmp_path / "nope.json")]) == 1
    assert run(["frobnicate"]) == 1
    assert run([]) == 1


def test_bad_result_file_exit_code(tmp_path):
    p = write(tmp_path, "{\"format\": \"other\"}", "r.json")
    assert run(["evaluate", str(p)]) == 1
    p = write(tmp_path, "not json", "r2.json")
    assert run(["render", str(p)]) == 1


def test_runtime_error_exit_code(tmp_path):
    text = K1.replace("[instance.sampler]\nrect = [0.0, 0.0, 1.0, 1e-9]",
                      "[instance.sampler]\nkind = \"gaussian_mixture_truncated\"\nrect = [0.0, 0.0, 1.0, 1.0]\n"
                      "components = [{weight = 1.0, mean = [50.0, 50.0], std = 0.01}]")
    assert run(["solve", str(write(tmp_path, text)), "--out", str(tmp_path / "o")]) == 2


def test_curve_k1_is_ecdf(tmp_path):
    cfg_path = write(tmp_path, K1)
    assert run(["curve", str(cfg_path), "--out", str(tmp_path / "o")]) == 0
    with open(tmp_path / "o" / "curve.csv") as fh:
        rows = list(csv.DictReader(fh))
    cfg = load_config(cfg_path)
    pts = sample_points(cfg.instance.sampler, cfg.n_train, RngStream(cfg.seed, pipeline.STREAM_TRAIN))
    col = np.sort(np.hypot(pts[:, 0], pts[:, 1]))
    assert len(rows) == len(np.unique(col))
    for r in rows:
        t = float(r["t"])
        assert float(r["alpha_hat"]) == np.searchsorted(col, t, side="right") / cfg.n_train
        assert r["minimizers"] in ("0", "0;1", "1")


def test_solve_evaluate_render_pipeline(tmp_path):
    cfg_path = write(tmp_path, LINE)
    out = tmp_path / "run"
    assert run(["solve", str(cfg_path), "--out", str(out)]) == 0
    d = json.loads((out / "result.json").read_text())
    assert d["format"] == pipeline.FORMAT
    assert d["solution"]["psi_bits"] == [0, 1]
    assert d["solution"]["feasible_interval"]["lower_kind"] == "binary-restricted"
    assert isinstance(d["warnings"], list)
    plan = pipeline.plan_from_dict(d["plan"])
    assert plan.K == 2 and plan.theta[-1] == 0.0
    assert (out / "hist.csv").exists() and (out / "timings.json").exists()

    assert run(["evaluate", str(out / "result.json"), "--m", "5000", "--seed", "3"]) == 0
    ev = json.loads((out / "evaluation.json").read_text())
    assert ev["stats"]["m_samples"] == 5000

    assert run(["baseline", str(cfg_path), "--out", str(out)]) == 0
    b = json.loads((out / "baseline.json").read_text())
    assert b["weights"]["g"][-1] == 0.0

    assert run(["render", str(out / "result.json"), "--baseline", str(out / "baseline.json")]) == 0
    img = read_ppm(out / "quantile.ppm")
    assert (img.width, img.height) == (40, 8)
    assert read_ppm(out / "voronoi.ppm").width == 40


def snapshot(d: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "timings.json"}


def test_solve_is_deterministic(tmp_path):
    cfg_path = write(tmp_path, LINE)
    out = tmp_path / "o"
    assert run(["solve", str(cfg_path), "--out", str(out)]) == 0
    first = snapshot(out)
    assert run(["solve", str(cfg_path), "--out", str(out)]) == 0
    assert snapshot(out) == first and {"result.json", "hist.csv"} <= set(first)


def test_demo_small_is_deterministic(tmp_path):
    args = ["demo", "--seed", "7", "--n-train", "1500", "--m-eval", "5000", "--width", "48", "--height", "40"]
    out = tmp_path / "x"
    assert run(args + ["--out", str(out)]) == 0
    first = snapshot(out)
    assert run(args + ["--out", str(out)]) == 0
    files = sorted(p.name for p in out.iterdir())
    expected = {"table1.csv", "voronoi.ppm", "baseline.json", "timings.json", "demo_config.toml"}
    expected |= {f"{kind}_alpha{a}.{ext}" for a in ("0.25", "0.5", "0.95")
                 for kind, ext in (("result", "json"), ("hist", "csv"), ("quantile", "ppm"))}
    assert expected <= set(files)
    second = snapshot(out)
    for name in first:
        assert first[name] == second[name], name
    with open(tmp_path / "x" / "table1.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["method"] for r in rows] == ["mean-minimizing", "alpha=0.25", "alpha=0.5", "alpha=0.95"]


def test_result_bundle_reassembles_plan():
    cfg = loads_config(LINE, base_dir=Path("/tmp"))
    res = pipeline.solve(cfg)
    d = json.loads(dumps_json(pipeline.result_bundle(cfg, res)))
    plan = pipeline.plan_from_dict(d["plan"])
    assert plan.t == res.plan.t and plan.psi == res.plan.psi
    np.testing.assert_array_equal(plan.theta, res.plan.theta)
    assert plan.cost == res.plan.cost


def test_run_demo_summary(tmp_path):
    cfg = load_demo_config()
    from dataclasses import replace

    cfg = replace(cfg, n_train=1000, m_eval=2000, output_dir=tmp_path / "d",
                  render=replace(cfg.render, width=16, height=16))
    summary = run_demo(cfg, alphas=(0.5,))
    assert set(summary["results"]) == {0.5}
    assert summary["results"][0.5].solution.alpha_at_t >= 0.5
