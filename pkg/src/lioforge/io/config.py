"""JSON configuration into nested dataclasses, rejecting unknown keys.

Errors carry the source name, the dotted field path and, where it can be
located, the line of the offending key.
"""

from __future__ import annotations

import dataclasses
import difflib
import json
import re
import types
import typing
from pathlib import Path

import numpy as np

from ..geometry import Twist


class ConfigError(ValueError):
    def __init__(self, message: str, path: str = "", line: int | None = None):
        super().__init__(message)
        self.path = path
        self.line = line


def _line_of(text: str | None, key: str) -> int | None:
    if not text or not key:
        return None
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _fail(source, text, path, msg):
    key = path.split(".")[-1].split("[")[0] if path else ""
    line = _line_of(text, key)
    where = f"{source}:{line}" if line else source
    raise ConfigError(f"{where}: field '{path}': {msg}", path, line)


def _is_optional(tp):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1 and len(typing.get_args(tp)) == 2:
            return True, args[0]
    return False, tp


def _convert(value, tp, path, source, text):
    optional, tp = _is_optional(tp)
    if value is None:
        if optional:
            return None
        _fail(source, text, path, "must not be null")
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            _fail(source, text, path, f"expected an object, got {type(value).__name__}")
        return from_dict(tp, value, path, source, text)
    if tp is Twist:
        if isinstance(value, dict):
            extra = set(value) - {"rotation", "translation"}
            if extra:
                _fail(source, text, f"{path}.{sorted(extra)[0]}", "unknown key")
            return Twist(_vector(value.get("rotation", [0, 0, 0]), 3, path + ".rotation", source, text),
                         _vector(value.get("translation", [0, 0, 0]), 3, path + ".translation",
                                 source, text))
        return Twist.from_vector(_vector(value, 6, path, source, text))
    if tp is np.ndarray:
        return np.asarray(_vector(value, None, path, source, text))
    if tp is bool:
        if not isinstance(value, bool):
            _fail(source, text, path, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            _fail(source, text, path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            _fail(source, text, path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            _fail(source, text, path, f"expected a string, got {value!r}")
        return value
    origin = typing.get_origin(tp) or tp
    if origin in (list, tuple):
        if not isinstance(value, list):
            _fail(source, text, path, f"expected a list, got {type(value).__name__}")
        args = typing.get_args(tp)
        if args and origin is list:
            value = [_convert(v, args[0], f"{path}[{i}]", source, text) for i, v in enumerate(value)]
        return tuple(value) if origin is tuple else list(value)
    if origin is dict:
        if not isinstance(value, dict):
            _fail(source, text, path, "expected an object")
        return dict(value)
    return value


def _vector(value, n, path, source, text):
    if not isinstance(value, list) or any(isinstance(v, bool) or not isinstance(v, (int, float))
                                          for v in value):
        _fail(source, text, path, "expected a list of numbers")
    if n is not None and len(value) != n:
        _fail(source, text, path, f"expected {n} numbers, got {len(value)}")
    return [float(v) for v in value]


def from_dict(cls, data: dict, path: str = "", source: str = "<config>", text: str | None = None):
    """Build ``cls`` from ``data``; unknown keys and type mismatches raise ConfigError."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    for key in data:
        if key not in names:
            p = f"{path}.{key}" if path else key
            close = difflib.get_close_matches(key, sorted(names), n=1)
            hint = f" (did you mean {close[0]!r}?)" if close else ""
            _fail(source, text, p, f"unknown key{hint}")
    kwargs = {}
    for key, value in data.items():
        p = f"{path}.{key}" if path else key
        kwargs[key] = _convert(value, hints.get(key, typing.Any), p, source, text)
    try:
        return cls(**kwargs)
    except (ValueError, TypeError, KeyError) as exc:
        _fail(source, text, path or cls.__name__, str(exc))


def to_dict(obj):
    """Plain JSON-ready view of a (nested) dataclass."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        if isinstance(obj, Twist):
            return {"rotation": obj.rotation.tolist(), "translation": obj.translation.tolist()}
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj) if f.init}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    if isinstance(obj, dict):
        return {k: to_dict(v) for k, v in obj.items()}
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def parse_json(text: str, source: str = "<config>"):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}",
                          "", exc.lineno) from None


def load(cls, path, overrides: dict | None = None):
    """Read a JSON file into ``cls``; ``overrides`` replace top-level keys."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file {p} not found")
    text = p.read_text()
    data = parse_json(text, str(p))
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: top level must be an object")
    data.update(overrides or {})
    return from_dict(cls, data, "", str(p), text)


def load_scenario(path, seed: int | None = None):
    from ..simulation import Scenario
    return load(Scenario, path, {"seed": seed} if seed is not None else None)


def load_pipeline(path):
    from ..pipeline import PipelineConfig
    return load(PipelineConfig, path)
