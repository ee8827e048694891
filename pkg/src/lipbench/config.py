"""Flat ``key = value`` run configuration with typed parsing and a round-trippable echo."""
from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    pass


def parse_bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_int_list(text: str) -> tuple:
    try:
        return tuple(int(p) for p in str(text).replace(" ", "").split(",") if p)
    except ValueError:
        raise ConfigError(f"not a comma-separated integer list: {text!r}") from None


PARSERS = {
    "int": int,
    "float": float,
    "bool": parse_bool,
    "str": str,
    "ints": parse_int_list,
}


def format_value(kind: str, value) -> str:
    if kind == "bool":
        return "true" if value else "false"
    if kind == "ints":
        return ",".join(str(v) for v in value)
    if kind == "float":
        return repr(float(value))
    return str(value)


def parse_value(key: str, kind: str, text):
    if not isinstance(text, str):
        return text
    try:
        return PARSERS[kind](text.strip())
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"{key}: {exc}") from None


def read_config_file(path) -> dict:
    """Raw ``{key: text}`` from a flat file; ``#`` starts a comment, blank lines are skipped."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file {path} not found")
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key = key.strip().replace("-", "_")
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def resolve(schema: dict, file_values: dict, cli_values: dict) -> dict:
    """Merge defaults < config file < explicit flags; unknown keys are rejected.

    ``schema`` maps each key to ``(kind, default, help)``.
    """
    unknown = sorted(set(file_values) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    params = {k: spec[1] for k, spec in schema.items()}
    for source in (file_values, cli_values):
        for key, value in source.items():
            params[key] = parse_value(key, schema[key][0], value)
    return params


def write_echo(path, command: str, schema: dict, params: dict) -> None:
    lines = [f"command = {command}"]
    lines += [f"{k} = {format_value(schema[k][0], params[k])}" for k in schema]
    Path(path).write_text("\n".join(lines) + "\n")
