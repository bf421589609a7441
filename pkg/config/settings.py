import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from gocor.errors import ConfigError


def _env_path(name: str, default: str) -> Path:
    return Path(os.environ.get(name, default))


@dataclass
class Settings:
    ARCHIVE_DIR: Path = field(default_factory=lambda: _env_path("GOCOR_ARCHIVE_DIR", "archive"))
    EVAL_DIR: Path = field(default_factory=lambda: _env_path("GOCOR_EVAL_DIR", "eval"))


def _split_list(value):
    if isinstance(value, str):
        return [part.strip() for part in value.split(",") if part.strip()]
    return value


class RunConfig(BaseModel):
    """Every tunable of the CLI commands, with the documented defaults"""
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    mode: Literal["global", "local"] = "global"
    radius: int = Field(4, ge=0)
    num_iter: Optional[int] = Field(None, ge=0)
    eta: float = Field(0.0, ge=0)
    lam: float = Field(0.1, ge=0, alias="lambda")
    curvature_scale: float = Field(2.0, gt=0)
    use_query: bool = False
    initializer: Literal["zero", "simple", "flexible_simple", "context_aware", "flexible_context_aware"] = "simple"
    beta: Union[float, List[float]] = 1.0
    gamma: Union[float, List[float]] = 0.0

    basis_count: int = Field(10, ge=2)
    basis_delta: float = Field(0.5, gt=0)
    kernel_size: int = Field(3, ge=1)
    query_channels: int = Field(16, ge=1)
    query_mid_channels: int = Field(16, ge=1)
    query_init_std: float = Field(0.01, ge=0)
    query_seed: int = 0

    seeds: List[int] = Field(default_factory=lambda: list(range(20)))
    precision: Literal["f32", "f64"] = "f64"
    serial: bool = True

    scene_height: int = Field(32, ge=1)
    scene_width: int = Field(32, ge=1)
    scene_depth: int = Field(16, ge=1)
    n_repeats: int = Field(2, ge=2)
    shift: Tuple[int, int] = (2, 1)
    noise_std: float = Field(0.0, ge=0)
    patch_size: int = Field(3, ge=1)
    context_norm: float = Field(2.0, ge=0)
    rho_excl: float = Field(2.0, ge=0)

    grad_step: float = Field(1e-6, gt=0)
    grad_tol: float = Field(1e-5, gt=0)
    grad_instances: int = Field(20, ge=1)
    allow_kink: bool = False
    corrupt_gradient: bool = False
    oracle_instances: int = Field(100, ge=1)

    pooled_pck: bool = False
    pck_threshold: float = Field(1.0, gt=0)

    @field_validator("seeds", mode="before")
    @classmethod
    def _parse_seeds(cls, value):
        """Accept "0,3,5", "0-19" or a list"""
        if isinstance(value, str) and "-" in value and "," not in value:
            lo, hi = value.split("-", 1)
            return list(range(int(lo), int(hi) + 1))
        return _split_list(value)

    @field_validator("beta", "gamma", "shift", mode="before")
    @classmethod
    def _parse_list(cls, value):
        value = _split_list(value)
        if isinstance(value, list) and len(value) == 1:
            return value[0]
        return value

    @model_validator(mode="after")
    def _resolve_num_iter(self):
        if self.num_iter is None:
            self.num_iter = 3 if self.mode == "global" else 7
        return self


def parse_config_text(text: str) -> Dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment"""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: missing key")
        values[key] = value
    return values


def load_run_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Dict] = None) -> RunConfig:
    """Defaults, then the config file, then explicit overrides (CLI flags)"""
    values: Dict = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
        values.update(parse_config_text(text))
    if "lambda" in values:
        values["lam"] = values.pop("lambda")
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return RunConfig.model_validate(values)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e
