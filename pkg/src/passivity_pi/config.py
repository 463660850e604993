"""Scenario files: YAML in, validated ``Scenario`` out."""

from __future__ import annotations

import copy
import json
import re
from importlib import resources
from pathlib import Path

import jsonschema
import yaml

from .sim import Event, Scenario


class ConfigError(ValueError):
    """Invalid scenario file; the message names the offending key path."""


class _Loader(yaml.SafeLoader):
    pass


# PyYAML follows YAML 1.1 and reads ``1e-6`` (no dot) as a string
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)


def schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("schema.json").read_text())


def preset_names() -> list[str]:
    d = resources.files(__package__).joinpath("presets")
    return sorted(p.name[:-5] for p in d.iterdir() if p.name.endswith(".yaml"))


def preset_text(name: str) -> str:
    f = resources.files(__package__).joinpath("presets").joinpath(f"{name}.yaml")
    if not f.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return f.read_text()


def parse_yaml(text: str) -> dict:
    try:
        doc = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("scenario file must be a mapping at the top level")
    return doc


def _key_path(err: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "required":
        missing = re.match(r"'([^']+)'", err.message)
        if missing:
            parts.append(missing.group(1))
    elif err.validator == "additionalProperties":
        extra = re.findall(r"'([^']+)'", err.message)
        if extra:
            parts.append(extra[0])
    return ".".join(parts) or "<root>"


def _describe(err: jsonschema.ValidationError) -> str:
    path = _key_path(err)
    if err.validator == "required":
        return f"{path}: required key is missing"
    if err.validator == "additionalProperties":
        return f"{path}: unknown key"
    return f"{path}: {err.message}"


def validate(doc: dict) -> None:
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        raise ConfigError("; ".join(_describe(e) for e in errors))


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply ``dotted.key=value`` overrides; values are parsed as YAML."""
    doc = copy.deepcopy(doc)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = doc
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-mapping")
        node[parts[-1]] = yaml.load(raw, Loader=_Loader)
    return doc


def to_scenario(doc: dict) -> Scenario:
    validate(doc)
    sim = doc["sim"]
    events = [
        Event(t=float(e["t"]), set=dict(e.get("set", {})), scale=dict(e.get("scale", {})))
        for e in doc.get("events", [])
    ]
    sc = Scenario(
        plant=doc["plant"]["id"],
        t_end=float(sim["t_end"]),
        dt=float(sim["dt"]),
        params=dict(doc["plant"].get("params", {})),
        controller=dict(doc.get("controller", {})),
        x0=sim.get("x0"),
        z0=sim.get("z0"),
        events=events,
        record_every=int(sim.get("record_every", 1)),
        control_every=int(sim.get("control_every", 1)),
        monitors=dict(doc.get("monitors", {})),
        metrics=dict(doc.get("metrics", {})),
        seed=int(sim.get("seed", 0)),
        name=doc.get("name", ""),
    )
    try:
        sc.validate()
    except ValueError as exc:
        raise ConfigError(f"sim: {exc}") from exc
    return sc


def load_document(path: str | Path, overrides: list[str] | None = None) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return apply_overrides(parse_yaml(text), overrides or [])


def load_scenario(path: str | Path, overrides: list[str] | None = None) -> Scenario:
    return to_scenario(load_document(path, overrides))


def load_preset(name: str, overrides: list[str] | None = None) -> Scenario:
    return to_scenario(apply_overrides(parse_yaml(preset_text(name)), overrides or []))
