"""Experiment configuration files.

Grammar (version 1): INI sections parsed by ``configparser``; ``#`` and ``;``
start comments, lists are comma separated, booleans are true/false.

    [experiment]
    name = chaos
    version = 1
    output_dir = out/chaos

    [kernel]            family, chi, s, d, eta, regularization, reg_value
    [confinement]       kind, beta, potential
    [sim]               SimConfig fields
    [grid]              nx, ny, h (square cells, centred at the origin)
    [seeds]             values = 1, 2, 3   or   first = 0 and count = 100
    [params]            experiment-specific fields (see the registry)

The same structure is accepted as a JSON object of objects.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from ..kernels import ConfigError, ConfinementSpec, KernelSpec, Regularization
from ..particles import SimConfig

CONFIG_VERSION = 1
U64 = 2**64

EXPERIMENT_FIELDS = {"name": "str", "version": "int", "output_dir": "str"}
KERNEL_FIELDS = {
    "family": "str", "chi": "float", "s": "float", "d": "int", "eta": "float",
    "regularization": "str", "reg_value": "float",
}
CONFINEMENT_FIELDS = {"kind": "str", "beta": "float", "potential": "str"}
SIM_FIELDS = {
    "N": "int", "d": "int", "dt": "float", "T": "float", "seed": "u64", "taming_cap": "float",
    "tame": "bool", "record_every": "int", "guard_radius": "float", "neg_gamma": "float", "riesz_s": "float",
}
GRID_FIELDS = {"nx": "int", "ny": "int", "h": "float"}
SEED_FIELDS = {"values": "u64s", "first": "u64", "count": "int"}
SECTIONS = ("experiment", "kernel", "confinement", "sim", "grid", "seeds", "params")


class ConfigParseError(ConfigError):
    def __init__(self, msg, line=None, column=None, source=None):
        where = ":".join(str(x) for x in (source, line, column) if x is not None)
        super().__init__(f"{where}: {msg}" if where else msg)
        self.line, self.column = line, column


class ConfigFieldError(ConfigError):
    def __init__(self, name, msg, line=None, column=None, source=None):
        where = ":".join(str(x) for x in (source, line, column) if x is not None)
        text = f"{name}: {msg}"
        super().__init__(f"{where}: {text}" if where else text)
        self.field, self.line, self.column = name, line, column


# -- value coercion --------------------------------------------------------------


_BOOLS = {"true": True, "yes": True, "on": True, "1": True, "false": False, "no": False, "off": False, "0": False}


def _scalar(kind, value):
    if kind == "str":
        if not isinstance(value, str):
            raise ValueError("expected a string")
        return value
    if kind == "bool":
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.strip().lower() in _BOOLS:
            return _BOOLS[value.strip().lower()]
        raise ValueError("expected true or false")
    if isinstance(value, bool):
        raise ValueError(f"expected {kind}, got a boolean")
    if kind in ("int", "u64"):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        v = int(value.strip()) if isinstance(value, str) else value
        if not isinstance(v, int):
            raise ValueError("expected an integer")
        if kind == "u64" and not 0 <= v < U64:
            raise ValueError("expected a 64-bit unsigned integer")
        return v
    if kind == "float":
        v = float(value.strip()) if isinstance(value, str) else value
        if not isinstance(v, (int, float)):
            raise ValueError("expected a number")
        return float(v)
    raise ValueError(f"unknown field type {kind}")


def coerce(kind: str, value):
    """Convert a raw INI string or JSON value to the field type."""
    if kind.endswith("s") and kind != "str":
        base = kind[:-1]
        if isinstance(value, str):
            items = [v for v in (p.strip() for p in value.split(",")) if v]
        elif isinstance(value, list):
            items = value
        else:
            items = [value]
        return [_scalar(base, v) for v in items]
    return _scalar(kind, value)


def render(kind: str, value) -> str:
    if value is None:
        return ""
    if kind.endswith("s") and kind != "str":
        return ", ".join(render(kind[:-1], v) for v in value)
    if kind == "bool":
        return "true" if value else "false"
    if kind == "float":
        return repr(float(value))
    return str(value)


# -- config object ---------------------------------------------------------------


@dataclass
class ExperimentConfig:
    experiment: str
    kernel: dict | None = None
    confinement: dict = field(default_factory=dict)
    sim: dict | None = None
    grid: dict | None = None
    seeds: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    output_dir: str = "out"
    version: int = CONFIG_VERSION
    source: str | None = field(default=None, compare=False)
    positions: dict = field(default_factory=dict, compare=False, repr=False)

    def where(self, name):
        return self.positions.get(name, (None, None))

    def field_error(self, name, msg) -> ConfigFieldError:
        line, col = self.where(name)
        return ConfigFieldError(name, msg, line, col, self.source)

    def kernel_spec(self) -> KernelSpec:
        k = dict(self.kernel or {})
        reg = Regularization(k.pop("regularization", "none"), k.pop("reg_value", 0.0))
        return KernelSpec(regularization=reg, **k)

    def confinement_spec(self) -> ConfinementSpec:
        return ConfinementSpec(**self.confinement)

    def sim_config(self, **override) -> SimConfig:
        return SimConfig(**{**(self.sim or {}), **override})

    # serialization

    def sections(self, include_output: bool = True) -> dict:
        out = {"experiment": {"name": self.experiment, "version": self.version}}
        if include_output:
            out["experiment"]["output_dir"] = self.output_dir
        for name in ("kernel", "confinement", "sim", "grid"):
            val = getattr(self, name)
            if val:
                out[name] = dict(val)
        if self.seeds:
            out["seeds"] = {"values": list(self.seeds)}
        if self.params:
            out["params"] = dict(self.params)
        return out

    def to_text(self, param_types: dict | None = None, include_output: bool = True) -> str:
        """Canonical INI text: fixed section order, keys in schema order."""
        lines = []
        schemas = _schemas(param_types or {})
        for sec, body in self.sections(include_output).items():
            lines.append(f"[{sec}]")
            schema = schemas[sec]
            keys = [k for k in schema if k in body] + sorted(k for k in body if k not in schema)
            for k in keys:
                kind = schema.get(k) or _guess_kind(body[k])
                if body[k] is None:
                    continue
                lines.append(f"{k} = {render(kind, body[k])}")
            lines.append("")
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps(self.sections(), indent=2, sort_keys=False) + "\n"

    def digest(self, param_types: dict | None = None) -> str:
        """SHA-256 of the canonical text without output_dir, so the run location does not change it."""
        return hashlib.sha256(self.to_text(param_types, include_output=False).encode()).hexdigest()


def _guess_kind(v) -> str:
    if isinstance(v, bool):
        return "bool"
    if isinstance(v, int):
        return "int"
    if isinstance(v, float):
        return "float"
    if isinstance(v, list):
        return (_guess_kind(v[0]) if v else "str") + "s"
    return "str"


def _schemas(param_types: dict) -> dict:
    return {
        "experiment": EXPERIMENT_FIELDS,
        "kernel": KERNEL_FIELDS,
        "confinement": CONFINEMENT_FIELDS,
        "sim": SIM_FIELDS,
        "grid": GRID_FIELDS,
        "seeds": SEED_FIELDS,
        "params": param_types,
    }


# -- parsing ---------------------------------------------------------------------


_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^(\s*)([^=:#;\s\[][^=:]*?)\s*[=:]")


def _key_positions(text: str) -> dict:
    """Map 'section.key' to (line, column) of the key in INI text."""
    pos, section = {}, None
    for n, line in enumerate(text.splitlines(), 1):
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip()
            pos[section] = (n, line.index("[") + 1)
            continue
        m = _KEY_RE.match(line)
        if m and section is not None:
            pos[f"{section}.{m.group(2).strip()}"] = (n, len(m.group(1)) + 1)
    return pos


def _read_ini(text: str, source):
    cp = configparser.ConfigParser(
        interpolation=None, strict=True, comment_prefixes=("#", ";"), inline_comment_prefixes=("#", ";"),
        empty_lines_in_values=False,
    )
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(source) if source else "<config>")
    except configparser.MissingSectionHeaderError as e:
        raise ConfigParseError("expected a [section] header", e.lineno, 1, source) from None
    except configparser.DuplicateSectionError as e:
        raise ConfigParseError(f"duplicate section [{e.section}]", e.lineno, 1, source) from None
    except configparser.DuplicateOptionError as e:
        raise ConfigParseError(f"duplicate key {e.section}.{e.option}", e.lineno, 1, source) from None
    except configparser.ParsingError as e:
        lineno, line = e.errors[0]
        col = len(line) - len(line.lstrip()) + 1
        raise ConfigParseError(f"cannot parse line {line.strip()!r}", lineno, col, source) from None
    return {sec: dict(cp[sec]) for sec in cp.sections()}, _key_positions(text)


def _read_json(text: str, source):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigParseError(e.msg, e.lineno, e.colno, source) from None
    if not isinstance(data, dict) or not all(isinstance(v, dict) for v in data.values()):
        raise ConfigParseError("expected an object of section objects", 1, 1, source)
    return data, {}


def parse_config(text: str, source=None, fmt: str | None = None, param_types: dict | None = None) -> ExperimentConfig:
    """Parse INI or JSON text into an ExperimentConfig (structure and types only)."""
    if fmt is None:
        fmt = "json" if text.lstrip().startswith("{") else "ini"
    raw, pos = _read_json(text, source) if fmt == "json" else _read_ini(text, source)

    def fail(name, msg):
        line, col = pos.get(name, pos.get(name.split(".")[0], (None, None)))
        return ConfigFieldError(name, msg, line, col, source)

    for sec in raw:
        if sec not in SECTIONS:
            raise fail(sec, f"unknown section (expected one of {', '.join(SECTIONS)})")
    if "experiment" not in raw:
        raise ConfigParseError("missing [experiment] section", None, None, source)
    schemas = _schemas(param_types or {})
    typed = {}
    for sec, body in raw.items():
        schema = schemas[sec]
        out = {}
        for key, value in body.items():
            name = f"{sec}.{key}"
            if isinstance(value, str) and "\n" in value:
                raise fail(name, "value continues onto an indented line")
            if sec == "params" and param_types is None:
                out[key] = value
                continue
            if key not in schema:
                raise fail(name, "unknown field")
            try:
                out[key] = coerce(schema[key], value)
            except (ValueError, TypeError) as e:
                raise fail(name, f"{e} (got {value!r})") from None
        typed[sec] = out

    exp = typed["experiment"]
    if "name" not in exp:
        raise fail("experiment.name", "missing")
    version = exp.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise fail("experiment.version", f"unsupported version {version} (this build reads {CONFIG_VERSION})")
    seeds = []
    if "seeds" in typed:
        s = typed["seeds"]
        if "values" in s and ("first" in s or "count" in s):
            raise fail("seeds.values", "give either values or first/count")
        if "values" in s:
            seeds = s["values"]
        elif "count" in s:
            if s["count"] < 1:
                raise fail("seeds.count", "must be >= 1")
            first = s.get("first", 0)
            if first + s["count"] > U64:
                raise fail("seeds.count", "seed range exceeds 64 bits")
            seeds = list(range(first, first + s["count"]))
    return ExperimentConfig(
        experiment=exp["name"],
        kernel=typed.get("kernel"),
        confinement=typed.get("confinement", {}),
        sim=typed.get("sim"),
        grid=typed.get("grid"),
        seeds=seeds,
        params=typed.get("params", {}),
        output_dir=exp.get("output_dir", "out"),
        version=version,
        source=str(source) if source else None,
        positions=pos,
    )


def read_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigParseError(f"cannot read config: {e.strerror}", source=str(path)) from None
    fmt = "json" if path.suffix == ".json" else None
    return parse_config(text, path, fmt)
