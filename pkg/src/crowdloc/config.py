"""Layered run configuration.

Precedence, lowest to highest: built-in defaults, a JSON config file,
environment variables ``CROWDLOC_<SECTION>__<FIELD>``, then ``--set
section.field=value`` flags.  Unknown sections or fields are rejected.
"""
from __future__ import annotations

from dataclasses import asdict, fields
import json

from .calib import CalibConfig
from .detect import DetectorCapability
from .errors import ValidationError
from .pipeline import PipelineConfig
from .synth import SceneSpec
from .tiling import TilingConfig

ENV_PREFIX = "CROWDLOC_"

SECTIONS = {
    "tiling": TilingConfig,
    "calib": CalibConfig,
    "capability": DetectorCapability,
    "pipeline": PipelineConfig,
    "scene": SceneSpec,
    "metrics": None,
}
METRICS_DEFAULTS = {"gate_fraction": 0.5, "eps_tie": 0.1}
_HIDDEN = {("calib", "fixed_K")}


def defaults():
    out = {}
    for name, cls in SECTIONS.items():
        if cls is None:
            out[name] = dict(METRICS_DEFAULTS)
        else:
            d = asdict(cls())
            out[name] = {k: v for k, v in d.items() if (name, k) not in _HIDDEN}
    return out


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set(cfg, section, key, value, origin):
    if section not in cfg:
        raise ValidationError(f"unknown config section {section!r} ({origin})")
    if key not in cfg[section]:
        raise ValidationError(f"unknown config key {section}.{key} ({origin})")
    cfg[section][key] = value


def merge_file(cfg, data, origin="config file"):
    if not isinstance(data, dict):
        raise ValidationError("config file must hold a JSON object")
    for section, body in data.items():
        if section == "schema_version":
            continue
        if not isinstance(body, dict):
            raise ValidationError(f"config section {section!r} must be an object")
        for key, value in body.items():
            _set(cfg, section, key, value, origin)
    return cfg


def merge_env(cfg, environ):
    for name, text in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):]
        if "__" not in rest:
            continue
        section, key = rest.split("__", 1)
        section = section.lower()
        # environment names are usually upper case; field names may be mixed case
        key = {k.lower(): k for k in cfg.get(section, {})}.get(key.lower(), key)
        _set(cfg, section, key, _parse_value(text), f"environment {name}")
    return cfg


def merge_flags(cfg, assignments):
    for item in assignments or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ValidationError(f"--set expects section.field=value, got {item!r}")
        path, text = item.split("=", 1)
        section, key = path.split(".", 1)
        _set(cfg, section, key, _parse_value(text), "--set")
    return cfg


def layered(file_data=None, environ=None, assignments=None):
    cfg = defaults()
    if file_data is not None:
        merge_file(cfg, file_data)
    if environ is not None:
        merge_env(cfg, environ)
    merge_flags(cfg, assignments)
    return cfg


def _tuples(d):
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def build(cfg, section, **extra):
    """Instantiate the dataclass of ``section`` from the merged dict."""
    cls = SECTIONS[section]
    if cls is None:
        return dict(cfg[section])
    names = {f.name for f in fields(cls)}
    kwargs = _tuples(cfg[section])
    kwargs.update(extra)
    try:
        return cls(**{k: v for k, v in kwargs.items() if k in names})
    except TypeError as exc:
        raise ValidationError(f"bad value in section {section!r}: {exc}") from exc
