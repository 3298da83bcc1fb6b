"""Run configuration files.

One ``key = value`` per line. Keys are dotted paths into the scenario
(``grid.n``, ``collapse.g``, ``initial.width`` ...) plus the run-level keys
``scenario`` (preset name, applied before any override), ``output_dir``,
``threads`` and ``emit``. Values are JSON; a bare identifier is read as a
string. ``#`` starts a comment outside quoted strings.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .errors import ConfigError
from .scenario import ScenarioSpec, field_names, preset, set_dotted

EMIT_CHOICES = ("csv", "jsonl", "snapshots", "svg")
_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_.\-]*$")
_RUN_KEYS = {"scenario": str, "output_dir": str, "threads": (int, str), "emit": list}


@dataclass
class RunConfig:
    scenario: ScenarioSpec = field(default_factory=lambda: preset("free_gaussian"))
    preset: str = "free_gaussian"
    output_dir: str = "out"
    threads: int | str = 1
    emit: list = field(default_factory=lambda: list(EMIT_CHOICES))

    @property
    def seed(self) -> int:
        return self.scenario.seed

    def thread_count(self) -> int:
        if self.threads == "auto":
            import os
            return os.cpu_count() or 1
        return int(self.threads)


def _strip_comment(line: str) -> str:
    quote = False
    escaped = False
    for i, ch in enumerate(line):
        if escaped:
            escaped = False
        elif ch == "\\":
            escaped = True
        elif ch == '"':
            quote = not quote
        elif ch == "#" and not quote:
            return line[:i]
    return line


def _parse_value(text: str, key: str, lineno: int):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        if _IDENT.match(text):
            return text
        raise ConfigError(f"cannot parse value {text!r}", key=key, line=lineno) from None


def _check_type(value, expected, key: str, lineno: int | None):
    if expected is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif expected is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif expected is bool:
        ok = isinstance(value, bool)
    elif isinstance(expected, tuple):
        ok = isinstance(value, expected) and not isinstance(value, bool)
    else:
        ok = isinstance(value, expected)
    if not ok:
        name = expected.__name__ if isinstance(expected, type) else "/".join(t.__name__ for t in expected)
        raise ConfigError(f"expected {name}, got {type(value).__name__}", key=key, line=lineno)
    return value


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse and validate configuration text; ``overrides`` (e.g. from CLI flags) win."""
    entries: dict[str, tuple[object, int | None]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", line=lineno)
        if key in entries:
            raise ConfigError(f"duplicate key (first set on line {entries[key][1]})", key=key, line=lineno)
        entries[key] = (_parse_value(value, key, lineno), lineno)
    for key, value in (overrides or {}).items():
        entries[key] = (value, None)

    scenario_fields = field_names(ScenarioSpec)
    name = entries.get("scenario", ("free_gaussian", None))
    cfg = RunConfig()
    cfg.preset = _check_type(name[0], str, "scenario", name[1])
    cfg.scenario = preset(cfg.preset)
    for key, (value, lineno) in entries.items():
        if key == "scenario":
            continue
        if key in _RUN_KEYS:
            value = _check_type(value, _RUN_KEYS[key], key, lineno)
            if key == "threads" and isinstance(value, str) and value != "auto":
                raise ConfigError("threads must be a positive integer or 'auto'", key=key, line=lineno)
            if key == "threads" and isinstance(value, int) and value < 1:
                raise ConfigError("threads must be a positive integer or 'auto'", key=key, line=lineno)
            if key == "emit" and any(e not in EMIT_CHOICES for e in value):
                raise ConfigError(f"emit entries must be among {list(EMIT_CHOICES)}", key=key, line=lineno)
            setattr(cfg, key, value)
        elif key in scenario_fields:
            value = _check_type(value, scenario_fields[key], key, lineno)
            if key == "seed" and not 0 <= value < 1 << 64:
                raise ConfigError("seed must be an unsigned 64-bit integer", key=key, line=lineno)
            set_dotted(cfg.scenario, key, value)
        else:
            raise ConfigError("unknown key", key=key, line=lineno)
    try:
        cfg.scenario.validate()
    except ConfigError as exc:
        line = entries.get(exc.key, (None, None))[1] if exc.key else None
        if line is not None and exc.line is None:
            raise ConfigError(str(exc).rsplit(" (", 1)[0], key=exc.key, line=line) from None
        raise
    return cfg


def serialize_config(cfg: RunConfig) -> str:
    """Fully resolved configuration, one key per line, sorted; parses back to the same value."""
    lines = [f"scenario = {json.dumps(cfg.preset)}"]
    flat = {"output_dir": cfg.output_dir, "threads": cfg.threads, "emit": cfg.emit}
    for key in field_names(ScenarioSpec):
        obj = cfg.scenario
        for part in key.split("."):
            obj = getattr(obj, part)
        flat[key] = obj
    for key in sorted(flat):
        lines.append(f"{key} = {json.dumps(flat[key])}")
    return "\n".join(lines) + "\n"


def load_config(path, overrides: dict | None = None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), overrides)
