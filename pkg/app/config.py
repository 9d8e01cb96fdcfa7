"""YAML run configuration, command-line overrides and environment defaults."""

import logging
import os
from pathlib import Path
from typing import Iterable, Optional

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_core import PydanticCustomError

from .controllers import ControllerSpec, NoControl, controller_shape_errors
from .experiments import SweepConfig
from .flock import KernelSpec, PowerLawKernel
from .integrator import SimConfig

logger = logging.getLogger(__name__)

ENV_OUTPUT_DIR = "CONSENSUS_LAB_OUTPUT_DIR"
ENV_LOG_LEVEL = "CONSENSUS_LAB_LOG_LEVEL"
ENV_WORKERS = "CONSENSUS_LAB_WORKERS"


class ConfigError(ValueError):
    """Raised when a run configuration cannot be read or does not validate."""

    pass


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class ModelSection(_Section):
    N: int = Field(..., ge=2, description="Number of agents")
    d: int = Field(2, ge=1, description="Spatial dimension")
    kernel: KernelSpec = Field(default_factory=PowerLawKernel)


class InitialSection(_Section):
    seed: int = Field(0, ge=0, description="Seed of the uniform draw that is rescaled to (X0, V0)")
    X0: float = Field(1.0, gt=0.0)
    V0: float = Field(1.0, gt=0.0)
    path: Optional[str] = Field(None, description="CSV written by ic-gen; replaces the seeded draw")


class ExperimentSection(_Section):
    X_grid: list[float] = Field(..., min_length=1)
    V_grid: list[float] = Field(..., min_length=1)
    samples_per_cell: int = Field(20, ge=1)
    master_seed: int = Field(0, ge=0)
    workers: Optional[int] = Field(None, ge=1, description="Defaults to CONSENSUS_LAB_WORKERS, then 1")

    @field_validator("X_grid", "V_grid")
    @classmethod
    def _check_grid(cls, grid: list[float]) -> list[float]:
        if any(v <= 0.0 for v in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("grid values must be positive and strictly increasing")
        return grid


class OutputSection(_Section):
    directory: Optional[str] = Field(None, description="Defaults to CONSENSUS_LAB_OUTPUT_DIR, then ./results")
    plot_script: bool = Field(True, description="Write a gnuplot script next to sweep results")


class RunConfig(_Section):
    model: ModelSection
    controller: ControllerSpec = Field(default_factory=NoControl)
    sim: SimConfig = Field(default_factory=SimConfig)
    initial: InitialSection = Field(default_factory=InitialSection)
    experiment: Optional[ExperimentSection] = None
    output: OutputSection = Field(default_factory=OutputSection)

    @model_validator(mode="after")
    def _check_controller_fits_model(self) -> "RunConfig":
        for path, message in controller_shape_errors(self.controller, self.model.N, self.model.d):
            # the field path travels in ctx so errors can point at the offending YAML node
            raise PydanticCustomError(
                "controller_shape", "{message}", {"message": message, "loc": ("controller", *path)}
            )
        return self

    def sweep_config(self, workers: Optional[int] = None) -> SweepConfig:
        if self.experiment is None:
            raise ConfigError("configuration has no experiment section")
        exp = self.experiment
        return SweepConfig(
            N=self.model.N,
            d=self.model.d,
            X_grid=exp.X_grid,
            V_grid=exp.V_grid,
            samples_per_cell=exp.samples_per_cell,
            master_seed=exp.master_seed,
            controller=self.controller,
            kernel=self.model.kernel,
            sim=self.sim,
            workers=workers or exp.workers or default_workers(),
        )


def apply_overrides(raw: dict, overrides: Iterable[str]) -> dict:
    """Patch a raw document with "section.field=value" assignments, values parsed as YAML."""
    for item in overrides:
        key_path, sep, text = item.partition("=")
        if not sep or not key_path:
            raise ConfigError(f"override {item!r} is not of the form key.path=value")
        keys = key_path.strip().split(".")
        try:
            value = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ConfigError(f"override {item!r}: value is not valid YAML") from e

        section = raw
        for key in keys[:-1]:
            nested = section.get(key)
            if nested is None:
                nested = section[key] = {}
            if not isinstance(nested, dict):
                raise ConfigError(f"override {item!r}: {key!r} is not a section")
            section = nested
        section[keys[-1]] = value
    return raw


def _node_line(node, loc) -> Optional[int]:
    """1-based line of the deepest YAML node reached by an error location."""
    line = None
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            match = next((v for k, v in node.value if k.value == key), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            match = node.value[key]
        else:
            match = None
        if match is None:
            # discriminator tags and missing fields have no node of their own
            continue
        node = match
        line = node.start_mark.line + 1
    return line


def _format_errors(error: ValidationError, root, source: str) -> str:
    lines = []
    for item in error.errors():
        loc = item["loc"] or tuple(item.get("ctx", {}).get("loc", ()))
        field = ".".join(str(part) for part in loc) or "<root>"
        line = _node_line(root, loc) if root is not None else None
        where = f"{source}:{line}" if line is not None else source
        lines.append(f"{where}: {field}: {item['msg']}")
    return "\n".join(lines)


def parse_config(text: str, overrides: Iterable[str] = (), source: str = "<config>") -> RunConfig:
    try:
        raw = yaml.safe_load(text)
        root = yaml.compose(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark is not None else source
        raise ConfigError(f"{where}: invalid YAML: {getattr(e, 'problem', e)}") from e

    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    raw = apply_overrides(raw, overrides)

    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(_format_errors(e, root, source)) from e


def load_config(path, overrides: Iterable[str] = ()) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read configuration {path}: {e}") from e
    config = parse_config(text, overrides, source=str(path))
    logger.debug("Loaded configuration from %s", path)
    return config


def dump_config(config: RunConfig) -> str:
    """YAML echo of a configuration; parse_config() reads it back to an equal RunConfig."""
    return yaml.safe_dump(config.model_dump(), sort_keys=False)


def load_environment() -> None:
    load_dotenv()


def default_output_dir() -> Path:
    return Path(os.getenv(ENV_OUTPUT_DIR, "results"))


def log_level() -> str:
    return os.getenv(ENV_LOG_LEVEL, "INFO").upper()


def default_workers() -> int:
    value = os.getenv(ENV_WORKERS)
    if not value:
        return 1
    try:
        workers = int(value)
    except ValueError as e:
        raise ConfigError(f"{ENV_WORKERS} must be a positive integer, got {value!r}") from e
    if workers < 1:
        raise ConfigError(f"{ENV_WORKERS} must be a positive integer, got {value!r}")
    return workers
