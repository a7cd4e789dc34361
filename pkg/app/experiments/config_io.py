"""Flat key=value experiment files.

Files are read with python-dotenv, so comments, quoting and ``export`` prefixes
behave as in a .env file. Keys are ExperimentConfig field names or the
aliases X0 and T.
"""
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Union

from dotenv import dotenv_values

from app.core.errors import ConfigError
from app.schemas.request import ExperimentConfig, canonical_key


def parse_assignments(assignments: Iterable[str]) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for item in assignments or ():
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"expected KEY=VALUE, got {item!r}")
        out[canonical_key(key.strip())] = value.strip()
    return out


def read_config_file(path: Union[str, Path]) -> Dict[str, Optional[str]]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    raw = dotenv_values(path)
    return {canonical_key(k): v for k, v in raw.items()}


def load_config(path: Optional[Union[str, Path]] = None, assignments: Iterable[str] = (),
                **overrides: Any) -> ExperimentConfig:
    """File values, then --set assignments, then explicit overrides (None values skipped)"""
    data: Dict[str, Any] = {}
    if path is not None:
        data.update(read_config_file(path))
    data.update(parse_assignments(assignments))
    data.update({canonical_key(k): v for k, v in overrides.items() if v is not None})
    for key, value in list(data.items()):
        if value is None:
            raise ConfigError(f"key {key!r} has no value")
    return ExperimentConfig.model_validate(data)


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_format(v) for v in value)
    return str(value)


def serialize_config(config: ExperimentConfig) -> str:
    data = config.model_dump()
    return "".join(f"{key}={_format(data[key])}\n" for key in sorted(data))


def write_config(config: ExperimentConfig, path: Union[str, Path]) -> None:
    try:
        Path(path).write_text(serialize_config(config), encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot write {path}: {e}") from e
