# ═══════════════════════════════════════════════════════════════════════════════
# Config File Loading
# ═══════════════════════════════════════════════════════════════════════════════
# Experiment configs live as YAML files under configs/ so a run can be changed
# without touching code. A bare name resolves against that directory; a path
# is used as given. Overrides from the command line and the environment are
# laid over the parsed mapping before validation, so the pydantic models see
# one merged document and report every problem by its dotted key.

"""
YAML config loading with override substitution.

Precedence, highest first: explicit overrides (command-line flags), then
environment variables (``COLA_OUTPUT_DIR``, ``COLA_JOBS``; a ``.env`` file is
honored by the runners), then the file, then the model defaults.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Any, Mapping, TypeVar

import yaml
from pydantic import BaseModel, ValidationError

from .schema import ExperimentConfig

_CONFIG_DIR = Path(__file__).parent.parent / "configs"

ENV_OVERRIDES = {
    "COLA_OUTPUT_DIR": ("output_dir", str),
    "COLA_JOBS": ("jobs", int),
}

ModelT = TypeVar("ModelT", bound=BaseModel)


class ConfigError(ValueError):
    """A config file that cannot be read, parsed or validated."""


def resolve_config_path(name_or_path: str | os.PathLike[str]) -> Path:
    """A bare name (``example`` or ``example.yaml``) is looked up in ``configs/``."""
    path = Path(name_or_path)
    if path.is_file():
        return path
    if path.parent == Path("."):
        for candidate in (_CONFIG_DIR / path.name, _CONFIG_DIR / f"{path.name}.yaml"):
            if candidate.is_file():
                return candidate
    raise ConfigError(f"config file not found: {name_or_path}")


def _dotted(loc: tuple[Any, ...]) -> str:
    return ".".join(str(part) for part in loc) or "<root>"


def describe_validation_error(exc: ValidationError) -> str:
    """One line per problem, each led by the dotted key path."""
    lines = []
    for err in exc.errors():
        key = _dotted(err["loc"])
        msg = "unknown key" if err["type"] == "extra_forbidden" else err["msg"]
        lines.append(f"{key}: {msg}")
    return "; ".join(lines)


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, Any]:
    environ = os.environ if environ is None else environ
    out: dict[str, Any] = {}
    for var, (key, cast) in ENV_OVERRIDES.items():
        raw = environ.get(var)
        if raw is None or raw == "":
            continue
        try:
            out[key] = cast(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: environment variable {var}={raw!r} is not a valid {cast.__name__}") from exc
    return out


def read_mapping(path: Path) -> dict[str, Any]:
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping at the top level, got {type(data).__name__}")
    return data


def validate(model: type[ModelT], data: Mapping[str, Any], source: str = "config") -> ModelT:
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"{source}: {describe_validation_error(exc)}") from exc


def load_config(
    name_or_path: str | os.PathLike[str],
    model: type[ModelT] = ExperimentConfig,
    *,
    environ: Mapping[str, str] | None = None,
    **overrides: Any,
) -> ModelT:
    """
    Load, merge and validate a config file.

    Overrides whose value is ``None`` are ignored, so unset command-line flags
    can be passed straight through. Only top-level keys can be overridden.

    Raises:
        ConfigError: missing file, bad YAML, or a key that fails validation
            (the message names the key, e.g. ``schedule.knots``).
    """
    path = resolve_config_path(name_or_path)
    data = read_mapping(path)
    layered = {**env_overrides(environ), **{k: v for k, v in overrides.items() if v is not None}}
    data.update({k: v for k, v in layered.items() if k in model.model_fields})
    return validate(model, data, source=str(path))
