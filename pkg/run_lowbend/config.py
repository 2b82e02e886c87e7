import math
import os
from typing import NamedTuple, Optional, Tuple

import yaml

from lowbend.exceptions import ParameterError
from lowbend.imaging import DEFAULT_EPSILON

# getting content root directory
current = os.path.dirname(os.path.realpath(__file__))
parent = os.path.dirname(current)

OUTPUT_DIR = os.path.join(parent, "out")
DEFAULT_CONFIG_FILE = "config.yaml"
SEED_ENV = "LBLD_SEED"

DATASETS = ("g", "s", "r", "flat_square", "g_rotation")
DEFAULT_LATENT_DIM = {"g": 8, "s": 8, "r": 16, "flat_square": 4, "g_rotation": 8}


class RunConfig(NamedTuple):
    seed: int = 0
    dataset: str = "s"
    resolution: int = 16
    epsilon: Optional[float] = None
    lam: float = 1.0
    kappa: float = 1.0
    latent_dim: Optional[int] = None
    mode: str = "joint"
    steps: int = 20000
    batch: int = 128
    lr: float = 1e-4
    hidden: Tuple[int, ...] = (256, 64)
    count: int = 1000
    quantize: bool = False
    workers: int = 1
    log_every: int = 100
    dataset_path: Optional[str] = None
    output: str = os.path.join(OUTPUT_DIR, "run")
    test_pairs: int = 256
    t_steps: int = 11
    samples: int = 512
    renderer_options: Tuple[Tuple[str, object], ...] = ()

    @classmethod
    def from_mapping(cls, mapping: dict) -> "RunConfig":
        unknown = set(mapping) - set(cls._fields)
        if unknown:
            raise ParameterError(f"Unknown config keys: {sorted(unknown)}")
        values = dict(mapping)
        if values.get("hidden") is not None:
            values["hidden"] = tuple(int(w) for w in values["hidden"])
        if values.get("renderer_options") is not None:
            values["renderer_options"] = _freeze_options(values["renderer_options"])
        return cls(**values).resolved()

    def resolved(self) -> "RunConfig":
        """Fill in dataset-specific defaults and check value ranges."""
        if self.dataset not in DATASETS:
            raise ParameterError(f"Unknown dataset {self.dataset}, use one of {DATASETS}")
        cfg = self
        if cfg.epsilon is None:
            cfg = cfg._replace(epsilon=DEFAULT_EPSILON[cfg.dataset])
        if cfg.latent_dim is None:
            cfg = cfg._replace(latent_dim=DEFAULT_LATENT_DIM[cfg.dataset])
        if not (math.isfinite(cfg.epsilon) and cfg.epsilon > 0):
            raise ParameterError(f"Locality radius must be positive: {cfg.epsilon}")
        for name in ("latent_dim", "batch", "count", "workers", "log_every", "test_pairs"):
            if getattr(cfg, name) < 1:
                raise ParameterError(f"{name} must be positive: {getattr(cfg, name)}")
        if cfg.mode not in ("joint", "encoder_first"):
            raise ParameterError(f"Unknown training mode: {cfg.mode}")
        if cfg.steps < 0:
            raise ParameterError(f"steps must be nonnegative: {cfg.steps}")
        if cfg.t_steps < 2:
            raise ParameterError(f"t_steps must be at least 2: {cfg.t_steps}")
        return cfg

    def options(self) -> dict:
        return dict(self.renderer_options)

    def as_mapping(self) -> dict:
        values = self._asdict()
        values["hidden"] = list(self.hidden)
        values["renderer_options"] = {k: _thaw(v) for k, v in self.renderer_options}
        return values


def _freeze(value):
    if isinstance(value, (list, tuple)):
        return tuple(_freeze(v) for v in value)
    return value


def _thaw(value):
    if isinstance(value, tuple):
        return [_thaw(v) for v in value]
    return value


def _freeze_options(options) -> Tuple[Tuple[str, object], ...]:
    if isinstance(options, dict):
        options = options.items()
    return tuple(sorted((str(k), _freeze(v)) for k, v in options))


def load_config_file(path: str) -> dict:
    try:
        with open(path) as f:
            loaded = yaml.safe_load(f)
    except OSError as e:
        raise ParameterError(f"Cannot read config file {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ParameterError(f"Config file {path} is not valid YAML: {e}") from e
    if loaded is None:
        return {}
    if not isinstance(loaded, dict):
        raise ParameterError(f"Config file {path} must hold a flat mapping")
    return loaded


def load_run_config(path: str) -> RunConfig:
    return RunConfig.from_mapping(load_config_file(path))


def dump_run_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(cfg.as_mapping(), f, sort_keys=False)


def build_run_config(
    file_path: Optional[str] = None, overrides: Optional[dict] = None, environ=os.environ
) -> RunConfig:
    """defaults < dataset defaults < config file < overrides < LBLD_SEED."""
    values = {}
    if file_path is None and os.path.exists(DEFAULT_CONFIG_FILE):
        file_path = DEFAULT_CONFIG_FILE
    if file_path is not None:
        values.update(load_config_file(file_path))
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    options = dict(_freeze_options(values.get("renderer_options") or {}))
    options.update(_freeze_options(overrides.pop("renderer_options", {})))
    values.update(overrides)
    values["renderer_options"] = options
    seed = environ.get(SEED_ENV)
    if seed:
        try:
            values["seed"] = int(seed)
        except ValueError as e:
            raise ParameterError(f"{SEED_ENV} must be an integer: {seed}") from e
    return RunConfig.from_mapping(values)
