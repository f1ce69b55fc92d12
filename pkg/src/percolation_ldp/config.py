"""Experiment configuration: INI sections per module, strict keys, explicit defaults.

Every parameter has a documented default.  :func:`validate_config` fills the
missing ones and returns the list it filled, so a run manifest can show
exactly which values were chosen by the user and which by the code.
"""
from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass

from .lattice import P_C_BOUND, P_C_BOUND_HIGH_D, CHUNK_SIZE
from .oracle import ENUMERATION_CAP

WORKERS_ENV = "PERCOLATION_LDP_WORKERS"


class ConfigError(ValueError):
    """Invalid configuration; ``fields`` holds one diagnostic per bad key."""

    def __init__(self, fields):
        self.fields = list(fields)
        super().__init__("; ".join(f"[{s}] {k}: {msg}" for s, k, msg in self.fields))


class InfeasibleConfig(ValueError):
    """Configuration is well formed but violates a precondition such as p < p_c."""


@dataclass(frozen=True)
class Field:
    kind: str  # int, float, bool, str, ints, floats, choice
    default: object
    choices: tuple = ()
    low: float | None = None
    high: float | None = None


SCHEMA: dict[str, dict[str, Field]] = {
    "run": {
        "seed": Field("int", 0, low=0, high=2**64 - 1),
        "workers": Field("int", 1, low=1),
    },
    "lattice": {
        "d": Field("int", 2, low=2),
        "p": Field("float", 0.3, low=0.0, high=1.0),
        "box_radius": Field("int", 0, low=0),  # 0 = auto-sized per scale
        "p_c": Field("float", 0.0, low=0.0, high=1.0),  # 0 = table value
        "rounding": Field("choice", "half_up", ("half_up",)),
    },
    "percolation": {
        "replicates": Field("int", 100_000, low=1),
        "confidence": Field("float", 0.95, low=0.5, high=0.999999),
        "oracle_confidence": Field("float", 0.99, low=0.5, high=0.999999),
        "enumeration_cap": Field("int", ENUMERATION_CAP, low=1, high=ENUMERATION_CAP),
        "chunk_size": Field("int", CHUNK_SIZE, choices=(CHUNK_SIZE,)),
        "boundary_touch_limit": Field("float", 1e-3, low=0.0, high=1.0),
    },
    "geometry": {
        "hausdorff_tol": Field("float", 1e-9, low=0.0),
        "cluster_semantics": Field("choice", "vertices", ("vertices",)),
        "neighbourhood": Field("choice", "open", ("open",)),
    },
    "norm": {
        "directions": Field("int", 0, low=0),  # 0 = 32 in d=2, 26 in d=3
        "scales": Field("ints", (2, 3, 4), low=1),
        "fit": Field("choice", "affine_wls", ("affine_wls",)),
        "box_fraction": Field("float", 2 / 3, low=0.0, high=1.0),
    },
    "steiner": {
        "tol": Field("float", 1e-9, low=0.0),
        "tie_rtol": Field("float", 1e-6, low=0.0),
        "max_terminals": Field("int", 6, low=2, high=6),
        "optimizer": Field("choice", "conic", ("conic",)),
    },
    "ldp": {
        "eps": Field("float", 0.5, low=0.0),
        "scales": Field("ints", (2, 4, 8), low=1),
        "budgets": Field("ints", (5000, 100_000, 1_000_000), low=1),
        "min_acceptances": Field("int", 30, low=1),
        "conditioning": Field("choice", "rejection", ("rejection",)),
        "spanning_tree": Field("choice", "bfs", ("bfs",)),
        "gap_directions": Field("int", 32, low=4),
    },
}


def _parse(field: Field, raw):
    if isinstance(raw, str):
        raw = raw.strip()
    k = field.kind
    if k == "int":
        if isinstance(raw, bool):
            raise ValueError("expected an integer")
        v = int(raw)
        vals = [v]
    elif k == "float":
        v = float(raw)
        vals = [v]
    elif k == "bool":
        if isinstance(raw, bool):
            return raw
        if str(raw).lower() in ("1", "true", "yes", "on"):
            return True
        if str(raw).lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError("expected a boolean")
    elif k in ("ints", "floats"):
        cast = int if k == "ints" else float
        items = raw.replace(",", " ").split() if isinstance(raw, str) else list(raw)
        if not items:
            raise ValueError("expected a nonempty list")
        v = tuple(cast(x) for x in items)
        vals = list(v)
    else:
        v = str(raw)
        vals = []
    if field.choices and v not in field.choices:
        raise ValueError(f"must be one of {list(field.choices)}")
    for x in vals:
        if field.low is not None and x < field.low:
            raise ValueError(f"must be >= {field.low}")
        if field.high is not None and x > field.high:
            raise ValueError(f"must be <= {field.high}")
    return v


def _read(source) -> dict:
    """Raw section -> key -> value mapping from a path, INI text or dict."""
    if source is None:
        return {}
    if isinstance(source, dict):
        return {s: dict(v) for s, v in source.items()}
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    parser.optionxform = str
    text = source
    if isinstance(source, os.PathLike) or os.path.isfile(source):
        with open(source) as fh:
            text = fh.read()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([("", "", f"unparseable config: {exc}")]) from None
    return {s: dict(parser[s]) for s in parser.sections()}


def critical_bound(cfg: dict) -> float:
    lat = cfg["lattice"]
    if lat["p_c"] > 0:
        return lat["p_c"]
    return P_C_BOUND.get(lat["d"], P_C_BOUND_HIGH_D)


def validate_config(source=None, overrides=None, check_feasible: bool = True):
    """Normalize a configuration.

    Returns ``(config, defaults)`` where ``config`` maps every section to
    every key and ``defaults`` lists the ``section.key`` names that were
    filled in.  Unknown sections or keys and out-of-range values raise
    :class:`ConfigError`; p >= p_c raises :class:`InfeasibleConfig`.
    """
    raw = _read(source)
    for sec, vals in (overrides or {}).items():
        raw.setdefault(sec, {}).update({k: v for k, v in vals.items() if v is not None})
    errors = []
    for sec, vals in raw.items():
        if sec not in SCHEMA:
            errors.append((sec, "", "unknown section"))
            continue
        for key in vals:
            if key not in SCHEMA[sec]:
                errors.append((sec, key, "unknown key"))
    cfg, defaults = {}, []
    for sec, fields in SCHEMA.items():
        cfg[sec] = {}
        for key, f in fields.items():
            if key in raw.get(sec, {}):
                try:
                    cfg[sec][key] = _parse(f, raw[sec][key])
                except (TypeError, ValueError) as exc:
                    errors.append((sec, key, str(exc)))
            else:
                cfg[sec][key] = f.default
                defaults.append(f"{sec}.{key}")
    if errors:
        raise ConfigError(errors)
    if check_feasible and cfg["lattice"]["p"] >= critical_bound(cfg):
        raise InfeasibleConfig(
            f"p={cfg['lattice']['p']} is not below p_c_bound({cfg['lattice']['d']})="
            f"{critical_bound(cfg)}")
    return cfg, defaults


def default_workers() -> int:
    value = os.environ.get(WORKERS_ENV)
    return int(value) if value else 1


def dump_config(cfg: dict) -> str:
    """INI text of a normalized config; validating it again gives the same config."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for sec, vals in cfg.items():
        parser[sec] = {k: _format(v) for k, v in vals.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def _format(v):
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_jsonable(cfg: dict) -> dict:
    return {s: {k: list(v) if isinstance(v, tuple) else v for k, v in vals.items()}
            for s, vals in cfg.items()}
