"""Run configuration files (TOML)."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..instances import BUILTIN
from ..models import ModelError, ObjectiveModel, load_model

EXPERIMENTS = ("fig2", "rr-bias-scaling", "stationary-table", "coupling", "k-scaling",
               "weak-error", "moment-growth")
GAMMA_UNITS = ("absolute", "1/L", "1/R2")
MIN_HORIZON = 1000


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: str
    experiment: str
    gammas: list
    horizon: int
    replicas: int = 1
    seed: int = 0
    out: str = "runs/out"
    plots: bool = True
    gamma_units: str = "absolute"
    workers: int = 1
    g: str = "sqdist"
    theta0: list | None = None
    theta1: list | None = None
    base_dir: str = field(default=".", repr=False)

    def model_path(self) -> Path | None:
        if self.model in BUILTIN:
            return None
        p = Path(self.model)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def load_model(self) -> ObjectiveModel:
        path = self.model_path()
        if path is None:
            return BUILTIN[self.model]()
        if not path.exists():
            raise ModelError(f"model file not found: {path}")
        return load_model(path)

    def step_sizes(self, model: ObjectiveModel) -> list:
        scale = {"absolute": 1.0, "1/L": 1.0 / model.L, "1/R2": 1.0 / model.R2}[self.gamma_units]
        return [float(g) * scale for g in self.gammas]

    def validate(self, model: ObjectiveModel | None = None) -> ObjectiveModel:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        if self.gamma_units not in GAMMA_UNITS:
            raise ConfigError(f"gamma_units must be one of {GAMMA_UNITS}")
        if not self.gammas:
            raise ConfigError("gammas must be a non-empty list")
        if self.horizon < MIN_HORIZON:
            raise ConfigError(f"horizon must be at least {MIN_HORIZON}")
        if self.replicas < 1:
            raise ConfigError("replicas must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        model = model or self.load_model()
        for g in self.step_sizes(model):
            if not 0 < g < 2 / model.L:
                raise ConfigError(f"step size {g:.6g} is outside (0, 2/L) = (0, {2 / model.L:.6g})")
        for name in ("theta0", "theta1"):
            v = getattr(self, name)
            if v is not None and len(v) != model.d:
                raise ConfigError(f"{name} has length {len(v)} but the model has d={model.d}")
        return model

    def echo(self) -> dict:
        out = asdict(self)
        out.pop("base_dir")
        return out

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


_FIELDS = {f for f in RunConfig.__dataclass_fields__ if f != "base_dir"}


def config_from_dict(raw: dict, base_dir=".") -> RunConfig:
    unknown = set(raw) - _FIELDS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    missing = {"model", "experiment", "gammas", "horizon"} - set(raw)
    if missing:
        raise ConfigError(f"missing config keys: {', '.join(sorted(missing))}")
    try:
        gammas = [float(g) for g in raw["gammas"]]
        cfg = RunConfig(
            model=str(raw["model"]), experiment=str(raw["experiment"]), gammas=gammas,
            horizon=int(raw["horizon"]), replicas=int(raw.get("replicas", 1)),
            seed=int(raw.get("seed", 0)), out=str(raw.get("out", "runs/out")),
            plots=bool(raw.get("plots", True)), gamma_units=str(raw.get("gamma_units", "absolute")),
            workers=int(raw.get("workers", 1)), g=str(raw.get("g", "sqdist")),
            theta0=None if raw.get("theta0") is None else [float(v) for v in raw["theta0"]],
            theta1=None if raw.get("theta1") is None else [float(v) for v in raw["theta1"]],
            base_dir=str(base_dir))
    except (TypeError, ValueError) as err:
        raise ConfigError(f"malformed config value: {err}") from None
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from None
    cfg = config_from_dict(raw, base_dir=path.parent)
    if "out" in raw and not Path(cfg.out).is_absolute():
        # relative output paths in a config file are relative to that file
        cfg.out = str(path.parent / cfg.out)
    return cfg
