"""Training configuration and the flat ``key = value`` config file format.

Every field of :class:`TrainConfig`, :class:`LossWeights` and
:class:`TrainSchedule` can be set by its bare name. Iteration-valued
schedule fields default to the 30k reference values scaled to ``iters``
unless given explicitly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .lifecycle import TrainSchedule
from .losses import LossWeights


@dataclass
class TrainConfig:
    iters: int = 30000
    seed: int = 0
    aa_scale: int = 2
    lr_position: float = 1.6e-4
    lr_position_final: float = 1.6e-6
    lr_sh_dc: float = 2.5e-3
    lr_sh_rest: float = 1.25e-4
    lr_opacity: float = 5e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-15
    init_opacity: float = 0.1
    init_voxel: float = 0.0
    background: tuple = (0.0, 0.0, 0.0)
    log_interval: int = 100
    eval_interval: int = 0
    checkpoint_interval: int = 0
    eval_sigma: float = 1e-4
    weights: LossWeights = field(default_factory=LossWeights)
    schedule: TrainSchedule = None

    def __post_init__(self):
        if self.iters < 0:
            raise ValueError("iters must be >= 0")
        if self.aa_scale < 1:
            raise ValueError("aa_scale must be >= 1")
        for name in ("lr_position", "lr_position_final", "lr_sh_dc", "lr_sh_rest", "lr_opacity"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.schedule is None:
            self.schedule = TrainSchedule.for_iters(self.iters)
        if self.schedule.total_iters != self.iters:
            raise ValueError("schedule.total_iters must equal iters")

    def to_dict(self) -> dict:
        d = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name in ("weights", "schedule"):
                d.update(dataclasses.asdict(v))
            else:
                d[f.name] = list(v) if isinstance(v, tuple) else v
        d.pop("total_iters", None)
        return d


_TOP = {f.name: f for f in dataclasses.fields(TrainConfig) if f.name not in ("weights", "schedule")}
_WEIGHTS = {f.name: f for f in dataclasses.fields(LossWeights)}
_SCHED = {f.name: f for f in dataclasses.fields(TrainSchedule) if f.name != "total_iters"}
ALIASES = {"lambda": "lam", "lambda_dssim": "lam", "beta_opacity": "beta1", "beta_normal": "beta2",
           "total_iters": "iters"}


def known_keys() -> list:
    return sorted(set(_TOP) | set(_WEIGHTS) | set(_SCHED))


def _coerce(f, raw):
    if not isinstance(raw, str):
        return raw
    default = f.default if f.default is not dataclasses.MISSING else None
    s = raw.strip()
    if isinstance(default, bool):
        if s.lower() in ("1", "true", "yes", "on"):
            return True
        if s.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{f.name}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        v = float(s)
        if v != int(v):
            raise ValueError(f"{f.name}: expected an integer, got {raw!r}")
        return int(v)
    if isinstance(default, float):
        return float(s)
    if isinstance(default, tuple):
        return tuple(float(x) for x in s.replace(",", " ").split())
    return s


def make_config(options: dict | None = None) -> TrainConfig:
    """Build a config from a flat ``{key: value}`` mapping (values may be strings)."""
    options = {ALIASES.get(k, k): v for k, v in (options or {}).items()}
    top, weights, sched = {}, {}, {}
    for key, raw in options.items():
        if key in _TOP:
            top[key] = _coerce(_TOP[key], raw)
        elif key in _WEIGHTS:
            weights[key] = _coerce(_WEIGHTS[key], raw)
        elif key in _SCHED:
            sched[key] = _coerce(_SCHED[key], raw)
        else:
            raise KeyError(f"unknown config key {key!r}")
    iters = top.get("iters", TrainConfig.iters)
    top["schedule"] = TrainSchedule.for_iters(iters, **sched)
    top["weights"] = LossWeights(**weights)
    return TrainConfig(**top)


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{no}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def read_config_file(path) -> dict:
    with open(path, encoding="utf-8") as f:
        return parse_config_text(f.read(), str(path))


def write_config_file(cfg: TrainConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for k, v in cfg.to_dict().items():
            if isinstance(v, list):
                v = " ".join(repr(x) for x in v)
            f.write(f"{k} = {v!r}\n" if isinstance(v, float) else f"{k} = {v}\n")
