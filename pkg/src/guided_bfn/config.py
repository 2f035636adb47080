"""Run configuration: TOML ingestion with strict key checking."""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

from .diffusion import DEFAULT_DELTA, DiffusionSchedule
from .errors import ConfigError
from .guidance import GuidanceConfig
from .state import AccuracySchedule, build_schedule
from .toy import ToyWorld, make_toy_world

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SAMPLERS = ("cbyg", "bfn-unguided", "targetopt-xt", "targetopt-x0")
SHIPPED_CONFIGS = ("default", "unguided", "targetopt_x0", "targetopt_xt")


@dataclass(frozen=True)
class WorldConfig:
    seed: int = 0
    n_atoms: int = 6
    n_classes: int = 4
    n_templates: int = 4
    pocket_size: float = 4.0
    n_pocket_atoms: int = 24
    n_hotspots: int = 3

    def build(self) -> ToyWorld:
        return make_toy_world(**asdict(self))


@dataclass(frozen=True)
class ScheduleConfig:
    n_steps: int = 100
    sigma1: float = 0.03
    beta1: float = 4.0
    rho_0: float = 1.0

    def build(self) -> AccuracySchedule:
        return build_schedule(self.n_steps, self.sigma1, self.beta1, self.rho_0)


@dataclass(frozen=True)
class DiffusionConfig:
    n_steps: int | None = None  # defaults to the BFN step count
    beta_start: float = 1e-4
    beta_end: float = 0.02
    delta: float = DEFAULT_DELTA

    def build(self, fallback_steps: int) -> DiffusionSchedule:
        return DiffusionSchedule.linear(self.n_steps or fallback_steps, self.beta_start, self.beta_end)


@dataclass(frozen=True)
class PredictorConfig:
    seed: int = 0
    jitter: float | None = None  # None keeps the world's jitter


@dataclass(frozen=True)
class RunConfig:
    sampler: str = "cbyg"
    n_chains: int = 4
    base_seed: int = 0
    output_dir: str | None = None
    world: WorldConfig = field(default_factory=WorldConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def n_steps(self) -> int:
        if self.sampler.startswith("targetopt"):
            return self.diffusion.n_steps or self.schedule.n_steps
        return self.schedule.n_steps


_SECTIONS = {
    "world": WorldConfig,
    "schedule": ScheduleConfig,
    "diffusion": DiffusionConfig,
    "predictor": PredictorConfig,
    "guidance": GuidanceConfig,
}
_TOP = ("sampler", "n_chains", "base_seed", "output_dir")


def _coerce(key: str, annotation: str, value):
    base = annotation.replace(" | None", "")
    if base == "bool":
        ok = isinstance(value, bool)
    elif base == "int":
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif base == "float":
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif base == "str":
        ok = isinstance(value, str)
    else:
        ok = True
    if not ok:
        raise ConfigError(key, f"expected {base}, got {value!r}")
    return value


def _build_section(section: str, raw) -> object:
    cls = _SECTIONS[section]
    if not isinstance(raw, dict):
        raise ConfigError(section, "expected a table")
    known = {f.name: str(f.type) for f in fields(cls)}
    kwargs = {}
    for name, value in raw.items():
        if name not in known:
            raise ConfigError(f"{section}.{name}", "unknown key")
        kwargs[name] = _coerce(f"{section}.{name}", known[name], value)
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        bad = _blame(str(exc), kwargs) or section
        raise ConfigError(f"{section}.{bad}" if bad != section else section, str(exc)) from exc


def _blame(message: str, kwargs: dict) -> str | None:
    for name in sorted(kwargs, key=len, reverse=True):
        if name in message:
            return name
    return None


def _positive_int(key: str, value, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(key, f"expected an integer >= {minimum}, got {value!r}")
    return value


def parse_config(data: dict) -> RunConfig:
    """Validate a decoded TOML document; every entry is optional."""
    for key in data:
        if key not in _TOP and key not in _SECTIONS:
            raise ConfigError(key, "unknown key")
    kwargs = {}
    if "sampler" in data:
        if data["sampler"] not in SAMPLERS:
            raise ConfigError("sampler", f"must be one of {', '.join(SAMPLERS)}, got {data['sampler']!r}")
        kwargs["sampler"] = data["sampler"]
    if "n_chains" in data:
        kwargs["n_chains"] = _positive_int("n_chains", data["n_chains"])
    if "base_seed" in data:
        kwargs["base_seed"] = _positive_int("base_seed", data["base_seed"], minimum=0)
    if "output_dir" in data:
        if not isinstance(data["output_dir"], str):
            raise ConfigError("output_dir", "expected a string")
        kwargs["output_dir"] = data["output_dir"]
    for section in _SECTIONS:
        if section in data:
            kwargs[section] = _build_section(section, data[section])
    cfg = RunConfig(**kwargs)
    _check_ranges(cfg)
    return cfg


def _check_ranges(cfg: RunConfig) -> None:
    w = cfg.world
    for name in ("n_atoms", "n_templates", "n_pocket_atoms", "n_hotspots"):
        _positive_int(f"world.{name}", getattr(w, name))
    _positive_int("world.n_classes", w.n_classes, minimum=2)
    if not w.pocket_size > 0:
        raise ConfigError("world.pocket_size", "must be positive")
    s = cfg.schedule
    _positive_int("schedule.n_steps", s.n_steps)
    if not 0 < s.sigma1 < 1:
        raise ConfigError("schedule.sigma1", "must lie in (0, 1)")
    if not s.beta1 > 0:
        raise ConfigError("schedule.beta1", "must be positive")
    if not s.rho_0 > 0:
        raise ConfigError("schedule.rho_0", "must be positive")
    d = cfg.diffusion
    if d.n_steps is not None:
        _positive_int("diffusion.n_steps", d.n_steps)
    if not 0 < d.beta_start < 1:
        raise ConfigError("diffusion.beta_start", "must lie in (0, 1)")
    if not 0 < d.beta_end < 1:
        raise ConfigError("diffusion.beta_end", "must lie in (0, 1)")
    if d.delta < 0:
        raise ConfigError("diffusion.delta", "must be nonnegative")
    if cfg.predictor.jitter is not None and cfg.predictor.jitter < 0:
        raise ConfigError("predictor.jitter", "must be nonnegative")


def config_from_dict(data: dict) -> RunConfig:
    """Inverse of :meth:`RunConfig.to_dict`; ``None`` entries fall back to defaults."""

    def drop_none(d):
        return {k: drop_none(v) if isinstance(v, dict) else v for k, v in d.items() if v is not None}

    return parse_config(drop_none(data))


def shipped_config_path(name: str):
    return resources.files("guided_bfn").joinpath("configs", f"{name}.toml")


def load_config(path) -> RunConfig:
    """Read a TOML file, or one of the shipped configs by bare name."""
    p = Path(path)
    if not p.exists() and str(path) in SHIPPED_CONFIGS:
        text = shipped_config_path(str(path)).read_text(encoding="utf-8")
    else:
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config", f"invalid TOML: {exc}") from exc
    return parse_config(data)


def with_seed(cfg: RunConfig, base_seed: int) -> RunConfig:
    return replace(cfg, base_seed=int(base_seed))
