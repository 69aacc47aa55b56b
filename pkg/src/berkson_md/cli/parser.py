"""
Command-line parsing into a validated RunConfig.

Usage:
    berkson-md <command> [table_id] [--config run.json] [--key value ...]

Any RunConfig field can be given as ``--key value`` (dashes or underscores).
Values are read as JSON when they parse (``--alpha 0.01``,
``--grid-nodes [201]``) and as plain strings otherwise. A flag with no value
is ``true``. Precedence: flags > config file > RunConfig defaults.
"""

import argparse
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from pydantic import ValidationError

from berkson_md.core.exceptions import ConfigurationError
from berkson_md.schemas.config import RunConfig
from berkson_md.services.families import get_family
from berkson_md.services.smoothing import check_bandwidth_rate

COMMANDS = ("fit", "test", "simulate", "reproduce", "demo")

ALIASES = {"workers": "parallelism", "table": "table_id"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="berkson-md",
        description="Minimum-distance fitting and lack-of-fit testing under Berkson measurement error.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("table_id", nargs="?", help="table1..table4 or figure1 (reproduce only)")
    parser.add_argument("--config", type=Path, help="JSON run configuration")
    return parser


def _value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_flags(tokens: Sequence[str]) -> Dict[str, Any]:
    """``["--seed", "7", "--check"]`` -> ``{"seed": 7, "check": True}``."""
    flags: Dict[str, Any] = {}
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if not token.startswith("--") or len(token) == 2:
            raise ConfigurationError(f"unexpected argument {token!r}", key="argv")
        name = token[2:]
        if "=" in name:
            name, raw = name.split("=", 1)
            value = _value(raw)
            i += 1
        elif i + 1 < len(tokens) and not tokens[i + 1].startswith("--"):
            value = _value(tokens[i + 1])
            i += 2
        else:
            value = True
            i += 1
        key = name.replace("-", "_")
        flags[ALIASES.get(key, key)] = value
    return flags


def load_config_file(path: Path) -> Dict[str, Any]:
    try:
        document = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"file not found: {path}", key="config") from None
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path}: invalid JSON ({e})", key="config") from e
    if not isinstance(document, dict):
        raise ConfigurationError(f"{path}: expected a JSON object", key="config")
    return {ALIASES.get(k, k): v for k, v in document.items()}


def validation_message(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        msg = item["msg"].removeprefix("Value error, ")
        loc = ".".join(str(p) for p in item["loc"])
        parts.append(f"{loc}: {msg}" if loc else msg)
    return "; ".join(parts)


def validate(settings: Dict[str, Any]) -> RunConfig:
    """
    Raises:
        ConfigurationError: Naming each offending key and its constraint
    """
    try:
        return RunConfig(**settings)
    except ValidationError as e:
        raise ConfigurationError(validation_message(e)) from e


def design_dimension(config: RunConfig) -> Optional[int]:
    if config.command in ("fit", "test"):
        return get_family(config.model, **config.model_params).d
    if config.command == "simulate":
        return config.case
    return None


def bandwidth_warnings(config: RunConfig, n: Optional[int] = None) -> List[str]:
    """Logged (h3) warnings for this configuration; never an error."""
    d = design_dimension(config)
    if d is None:
        return []
    message = check_bandwidth_rate(config.bandwidth_exponent(n or config.n), d)
    return [message] if message else []


def parse_config(
    argv: Optional[Sequence[str]] = None, settings: Optional[Dict[str, Any]] = None
) -> RunConfig:
    """
    Merge a command line (or an already-built settings mapping) into a RunConfig.

    Raises:
        ConfigurationError: Unknown keys, out-of-range values, unreadable config file
    """
    if settings is not None:
        return validate(settings)
    parser = build_parser()
    try:
        known, rest = parser.parse_known_args(argv)
    except SystemExit as e:
        if e.code == 0:
            raise
        raise ConfigurationError("invalid command line; see --help", key="argv") from None

    merged: Dict[str, Any] = {}
    if known.config is not None:
        merged.update(load_config_file(known.config))
    merged.update(parse_flags(rest))
    merged["command"] = known.command
    if known.table_id is not None:
        merged["table_id"] = known.table_id
    return validate(merged)
