"""Run-configuration files.

A config is line-oriented ``key = value`` text split into ``[system]``,
``[arch]``, ``[train]`` and ``[eval]`` sections; ``#`` starts a comment.
Values are Python/TOML-style literals: numbers, ``true``/``false``, quoted or
bare strings and ``[a, b]`` lists.  ``[system] preset`` selects the benchmark
defaults (``burgers``, ``lambda-omega``, ``fn``) that the remaining keys
override.  Example::

    [system]
    preset = burgers
    grid = 32

    [train]
    steps = 50
    epochs = 2000
"""
from __future__ import annotations

import ast
import re
from dataclasses import replace
from pathlib import Path

from . import physics, trainer
from .errors import ConfigurationError, PhycrError
from .layers import ArchSpec


def _as_bool(v):
    if isinstance(v, bool):
        return v
    raise ValueError("expected true or false")


def _as_int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValueError("expected an integer")
    return v


def _as_float(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError("expected a number")
    return float(v)


def _as_str(v):
    if not isinstance(v, str):
        raise ValueError("expected a string")
    return v


def _pair(conv):
    def parse(v):
        if isinstance(v, (list, tuple)):
            if len(v) != 2:
                raise ValueError("expected two values")
            return tuple(conv(x) for x in v)
        x = conv(v)
        return (x, x)
    return parse


def _int_list(v):
    if not isinstance(v, (list, tuple)):
        raise ValueError("expected a list of integers")
    return tuple(_as_int(x) for x in v)


def _bc(v):
    if isinstance(v, (list, tuple)):
        if len(v) != 4:
            raise ValueError("per-side boundary conditions need 4 entries (top, bottom, left, right)")
        return tuple(physics.parse_bc(_as_str(x)) for x in v)
    return physics.parse_bc(_as_str(v))


SCHEMA = {
    "system": {
        "preset": _as_str, "grid": _pair(_as_int), "length": _pair(_as_float), "origin": _pair(_as_float),
        "dt": _as_float, "bc": _bc, "nu": _as_float, "diffusion": _as_float, "lo_exponent": _as_int,
        "gamma_u": _as_float, "gamma_v": _as_float, "alpha": _as_float, "beta": _as_float,
    },
    "arch": {
        "channels": _as_int, "encoder_widths": _int_list, "encoder_kernel": _as_int, "encoder_stride": _as_int,
        "hidden": _as_int, "lstm_kernel": _as_int, "upscale": _as_int, "out_kernel": _as_int,
        "cycle_index": _as_int, "no_ar": _as_bool, "no_residual": _as_bool,
    },
    "train": {
        "epochs": _as_int, "lr": _as_float, "lr_decay": _as_float, "lr_every": _as_int, "steps": _as_int,
        "window": _as_float, "window_policy": _as_str, "window_state": _as_str, "pretrain": _as_bool,
        "seed": _as_int, "checkpoint_every": _as_int, "ic_seed": _as_int, "ic_scale": _as_float,
    },
    "eval": {
        "extrap_steps": _as_int, "ref_dt": _as_float, "gen_seeds": _int_list, "gen_steps": _as_int,
    },
}

_SECTION = re.compile(r"^\[\s*([A-Za-z_]+)\s*\]$")
_KEY = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*)$")


def _literal(text: str):
    text = text.strip()
    if not text:
        raise ValueError("missing value")
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if text.startswith("[") and text.endswith("]"):
        inner = re.sub(r"\btrue\b", "True", re.sub(r"\bfalse\b", "False", text))
        try:
            return ast.literal_eval(inner)
        except (ValueError, SyntaxError):
            items = [s.strip() for s in text[1:-1].split(",") if s.strip()]
            return [_literal(s) for s in items]
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text  # bare string


def _strip_comment(line: str) -> str:
    out, quote = [], None
    for ch in line:
        if quote:
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == "#":
            break
        out.append(ch)
    return "".join(out).strip()


def parse(text: str, source: str = "<config>") -> dict:
    """Parse into ``{section: {key: (value, line)}}``; values are type-checked."""
    sections = {name: {} for name in SCHEMA}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw)
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            current = m.group(1).lower()
            if current not in SCHEMA:
                raise ConfigurationError(f"{source}:{lineno}: unknown section [{current}]")
            continue
        m = _KEY.match(line)
        if not m:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = m.group(1), m.group(2)
        section = current
        if section is None:
            hits = [s for s in SCHEMA if key in SCHEMA[s]]
            if len(hits) != 1:
                raise ConfigurationError(f"{source}:{lineno}: key {key!r} outside a section")
            section = hits[0]
        if key not in SCHEMA[section]:
            raise ConfigurationError(f"{source}:{lineno}: unknown key {key!r} in [{section}]")
        if key in sections[section]:
            raise ConfigurationError(f"{source}:{lineno}: duplicate key {key!r} in [{section}]")
        try:
            sections[section][key] = (SCHEMA[section][key](_literal(value)), lineno)
        except (ValueError, PhycrError) as exc:
            raise ConfigurationError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
    return sections


def _apply(make, base, keys: dict, source: str):
    """``make(base, **values)`` for one section, naming the offending line(s) on failure."""
    values = {k: v for k, (v, _) in keys.items()}
    try:
        return make(base, **values)
    except ConfigurationError as exc:
        # single keys first; keys that only fail together are all named
        for key, (value, line) in keys.items():
            try:
                make(base, **{key: value})
            except ConfigurationError:
                raise ConfigurationError(f"{source}:{line}: invalid {key!r}: {exc}") from None
        where = ", ".join(f"line {line} {key!r}" for key, (_, line) in keys.items())
        raise ConfigurationError(f"{source}: inconsistent values ({where}): {exc}") from None


def build(sections: dict, source: str = "<config>") -> trainer.RunConfig:
    """Apply parsed keys on top of the selected preset."""
    system_keys = dict(sections["system"])
    preset, preset_line = system_keys.pop("preset", ("burgers", 0))
    grid, grid_line = system_keys.pop("grid", ((128, 128), 0))
    try:
        cfg = trainer.preset(preset, grid[0])
        system = cfg.system if grid[0] == grid[1] else cfg.system.with_(grid=grid)
    except ConfigurationError as exc:
        known = preset in ("burgers", "lambda-omega", "lo", "fn", "fitzhugh-nagumo")
        key, line = ("grid", grid_line) if known else ("preset", preset_line)
        raise ConfigurationError(f"{source}:{line}: invalid {key!r}: {exc}") from None
    system = _apply(lambda b, **kw: b.with_(**kw), system, system_keys, source)
    arch = _apply(lambda b, **kw: replace(b, **kw), ArchSpec(), sections["arch"], source)
    try:
        cfg = cfg.with_(system=system, arch=arch)
    except ConfigurationError as exc:
        keys = {**sections["arch"], **({"grid": (grid, grid_line)} if grid_line else {})}
        where = ", ".join(f"line {line} {key!r}" for key, (_, line) in keys.items()) or "arch defaults"
        raise ConfigurationError(f"{source}: arch does not fit the system ({where}): {exc}") from None
    return _apply(lambda b, **kw: b.with_(**kw), cfg, {**sections["train"], **sections["eval"]}, source)


def loads(text: str, source: str = "<config>") -> trainer.RunConfig:
    return build(parse(text, source), source)


def load(path) -> trainer.RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from exc
    return loads(text, str(path))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return repr(v)


def dumps(cfg: trainer.RunConfig, preset: str | None = None) -> str:
    """Full, explicit config text; ``loads(dumps(cfg)) == cfg``."""
    sys = cfg.system
    preset = preset or {"burgers": "burgers", "lambda-omega": "lambda-omega", "fitzhugh-nagumo": "fn"}[sys.kind]
    bc = [physics.format_bc(b) for b in sys.bc] if isinstance(sys.bc, tuple) else physics.format_bc(sys.bc)
    lines = ["[system]", f"preset = {_fmt(preset)}"]
    values = {"grid": sys.grid, "length": sys.length, "origin": sys.origin, "dt": sys.dt, "bc": bc}
    for key in SCHEMA["system"]:
        if key == "preset":
            continue
        lines.append(f"{key} = {_fmt(values.get(key, getattr(sys, key, None)))}")
    for section, obj in (("arch", cfg.arch), ("train", cfg), ("eval", cfg)):
        lines += ["", f"[{section}]"]
        lines += [f"{key} = {_fmt(getattr(obj, key))}" for key in SCHEMA[section]]
    return "\n".join(lines) + "\n"
