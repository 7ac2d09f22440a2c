"""Run configuration (TOML) and result-bundle (JSON) serialization.

Config schema, all keys optional unless noted::

    n_train = 10000          # SAA sample size N, must be >= K
    m_eval = 100000          # Monte Carlo evaluation draws
    seed = 0                 # unsigned 64-bit
    output_dir = "qsot_out"  # relative paths resolve against the config file

    [instance]               # required
    alpha = 0.5              # required, in (0, 1)
    p = [0.5, 0.5]           # required, positive, sums to 1

    [instance.cost]          # required
    kind = "euclidean"       # euclidean | l1 | squared_euclidean
    facilities = [[0.0, 0.0], [1.0, 0.0]]

    [instance.sampler]
    kind = "uniform_rect"    # or gaussian_mixture_truncated
    rect = [xmin, ymin, xmax, ymax]
    components = [{weight = 1.0, mean = [0.5, 0.5], std = 0.2}]

    [sa]                     # tie-break fit; a, b, kappa, tol, max_iters, check_every, burn_in, polyak
    [baseline_sa]            # mean baseline fit; same keys, default a = 0.1

    [render]
    width = 800
    height = 800
    palette = [[r, g, b], ...]   # K distinct colors; default categorical palette
    background = [255, 255, 255]
    overlay = false          # draw c(x, k) = t boundaries
"""

from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .otcore import CostSpec, MixtureComponent, ProblemInstance, Rect, SamplerSpec, ValidationError
from .plan import BASELINE_SA
from .render import Palette
from .tiebreak import SAConfig


class ConfigError(ValidationError):
    """Unreadable or invalid configuration."""


@dataclass(frozen=True)
class RenderConfig:
    width: int = 800
    height: int = 800
    palette: Palette | None = None
    overlay: bool = False

    def palette_for(self, K: int) -> Palette:
        return self.palette if self.palette is not None else Palette.default(K)


@dataclass(frozen=True)
class RunConfig:
    instance: ProblemInstance
    n_train: int = 10_000
    m_eval: int = 100_000
    seed: int = 0
    sa: SAConfig = field(default_factory=SAConfig)
    baseline_sa: SAConfig = BASELINE_SA
    render: RenderConfig = field(default_factory=RenderConfig)
    output_dir: Path = Path("qsot_out")

    def __post_init__(self):
        if self.n_train < self.instance.K:
            raise ConfigError(f"n_train must be at least K={self.instance.K}")
        if self.m_eval < 1:
            raise ConfigError("m_eval must be at least 1")
        if not (0 <= self.seed < 2**64):
            raise ConfigError("seed must be an unsigned 64-bit integer")


_SA_KEYS = {f.name for f in dataclasses.fields(SAConfig)}


def _table(d: dict, key: str, required: bool = False, parent: str = "") -> dict:
    v = d.get(key)
    name = f"{parent}.{key}" if parent else key
    if v is None:
        if required:
            raise ConfigError(f"missing required table [{name}]")
        return {}
    if not isinstance(v, dict):
        raise ConfigError(f"[{name}] must be a table")
    return v


def _reject_unknown(d: dict, allowed: set, where: str) -> None:
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(extra)}")


def _sa_from(d: dict, where: str, base: SAConfig) -> SAConfig:
    _reject_unknown(d, _SA_KEYS, where)
    try:
        cfg = dataclasses.replace(base, **d)
    except TypeError as e:
        raise ConfigError(f"{where}: {e}") from None
    if not (cfg.a > 0 and cfg.b > 0 and cfg.kappa > 0 and cfg.tol >= 0):
        raise ConfigError(f"{where}: a, b, kappa must be positive and tol nonnegative")
    return cfg


def _sampler_from(d: dict) -> SamplerSpec:
    _reject_unknown(d, {"kind", "rect", "components"}, "[instance.sampler]")
    rect = Rect(*map(float, d.get("rect", [0.0, 0.0, 1.0, 1.0])))
    comps = tuple(
        MixtureComponent(float(c["weight"]), tuple(float(v) for v in c["mean"]), float(c["std"]))
        for c in d.get("components", [])
    )
    return SamplerSpec(d.get("kind", "uniform_rect"), rect, comps)


def config_from_dict(d: dict, base_dir: Path | None = None) -> RunConfig:
    try:
        _reject_unknown(d, {"n_train", "m_eval", "seed", "output_dir", "instance", "sa", "baseline_sa", "render"},
                        "top level")
        inst = _table(d, "instance", required=True)
        _reject_unknown(inst, {"alpha", "p", "cost", "sampler"}, "[instance]")
        if "alpha" not in inst or "p" not in inst:
            raise ConfigError("[instance] needs alpha and p")
        cost_d = _table(inst, "cost", required=True, parent="instance")
        _reject_unknown(cost_d, {"kind", "facilities"}, "[instance.cost]")
        cost = CostSpec(cost_d.get("kind", "euclidean"), cost_d.get("facilities", []))
        instance = ProblemInstance(
            p=[float(v) for v in inst["p"]],
            cost=cost,
            sampler=_sampler_from(_table(inst, "sampler", parent="instance")),
            alpha=float(inst["alpha"]),
        )
        r = _table(d, "render")
        _reject_unknown(r, {"width", "height", "palette", "background", "overlay"}, "[render]")
        palette = None
        if "palette" in r:
            palette = Palette(tuple(tuple(c) for c in r["palette"]), tuple(r.get("background", (255, 255, 255))))
            if len(palette.colors) != instance.K:
                raise ConfigError(f"palette needs {instance.K} colors, got {len(palette.colors)}")
        render = RenderConfig(int(r.get("width", 800)), int(r.get("height", 800)), palette,
                              bool(r.get("overlay", False)))
        if render.width < 1 or render.height < 1:
            raise ConfigError("render resolution must be positive")
        out = Path(d.get("output_dir", "qsot_out"))
        if base_dir is not None and not out.is_absolute():
            out = base_dir / out
        return RunConfig(
            instance=instance,
            n_train=int(d.get("n_train", 10_000)),
            m_eval=int(d.get("m_eval", 100_000)),
            seed=int(d.get("seed", 0)),
            sa=_sa_from(_table(d, "sa"), "[sa]", SAConfig()),
            baseline_sa=_sa_from(_table(d, "baseline_sa"), "[baseline_sa]", BASELINE_SA),
            render=render,
            output_dir=out,
        )
    except ConfigError:
        raise
    except (ValidationError, ValueError, TypeError, KeyError) as e:
        raise ConfigError(str(e)) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror or e}") from None
    return loads_config(text, base_dir=path.parent, source=str(path))


def loads_config(text: str, base_dir: Path | None = None, source: str = "<config>") -> RunConfig:
    try:
        d = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        # message carries "(at line L, column C)"
        raise ConfigError(f"{source}: parse error: {e}") from None
    return config_from_dict(d, base_dir)


def _sa_to_dict(cfg: SAConfig) -> dict:
    return {k: v for k, v in dataclasses.asdict(cfg).items() if v is not None}


def instance_to_dict(inst: ProblemInstance) -> dict:
    s = inst.sampler
    sampler: dict[str, Any] = {"kind": s.kind, "rect": s.rect.as_list()}
    if s.components:
        sampler["components"] = [{"weight": c.weight, "mean": list(c.mean), "std": c.std} for c in s.components]
    return {
        "alpha": inst.alpha,
        "p": [float(v) for v in inst.p],
        "cost": {"kind": inst.cost.kind, "facilities": inst.cost.facilities.tolist()},
        "sampler": sampler,
    }


def instance_from_dict(d: dict) -> ProblemInstance:
    return config_from_dict({"instance": d, "n_train": len(d["p"])}).instance


def config_to_dict(cfg: RunConfig, relative_to: Path | None = None) -> dict:
    out = cfg.output_dir
    if relative_to is not None:
        try:
            out = out.relative_to(relative_to)
        except ValueError:
            pass
    d: dict[str, Any] = {
        "n_train": cfg.n_train,
        "m_eval": cfg.m_eval,
        "seed": cfg.seed,
        "output_dir": out.as_posix(),
        "instance": instance_to_dict(cfg.instance),
        "sa": _sa_to_dict(cfg.sa),
        "baseline_sa": _sa_to_dict(cfg.baseline_sa),
        "render": {"width": cfg.render.width, "height": cfg.render.height, "overlay": cfg.render.overlay},
    }
    if cfg.render.palette is not None:
        d["render"]["palette"] = [list(c) for c in cfg.render.palette.colors]
        d["render"]["background"] = list(cfg.render.palette.background)
    return d


def dump_config(cfg: RunConfig, relative_to: Path | None = None) -> str:
    return tomli_w.dumps(config_to_dict(cfg, relative_to))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, Path):
        return obj.as_posix()
    return obj


def dumps_json(obj) -> str:
    """Deterministic JSON; floats use Python's shortest round-trip repr."""
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=True) + "\n"
