"""Flat ``key = value`` configuration files and typed key lookup."""

from dataclasses import fields

from .errors import ConfigError
from .memory_graph import ModelConfig
from .tasks import TaskConfig
from .trainer import TrainConfig

INTERNAL_KEYS = {"input_width", "output_width"}


def field_types():
    types = {"seed": int}
    for dc in (ModelConfig, TaskConfig, TrainConfig):
        for f in fields(dc):
            if f.name not in INTERNAL_KEYS and f.name != "seed":
                types[f.name] = {"int": int, "float": float, "str": str, "bool": bool}.get(
                    f.type if isinstance(f.type, str) else f.type.__name__, str)
    return types


def coerce(key, value):
    types = field_types()
    if key not in types:
        raise ConfigError(f"unknown config key {key!r}", key=key)
    kind = types[key]
    if not isinstance(value, str):
        return kind(value)
    text = value.strip()
    try:
        if kind is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r} (expected {kind.__name__})", key=key)
    return text


def parse_flat(text, source="<text>"):
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = coerce(key, value)
    return out


def read_config_file(path):
    with open(path) as f:
        return parse_flat(f.read(), source=str(path))


def format_flat(d):
    return "".join(f"{k} = {v!r}\n" if isinstance(v, float) else f"{k} = {v}\n" for k, v in d.items())
