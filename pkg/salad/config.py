# salad is distributed under the terms of the BSD 3-clause license.
# Consult LICENSE.txt or http://opensource.org/licenses/BSD-3-Clause.
"""
Reading a run configuration: render (YAML, or a Jinja template of it),
parse, apply ``--set`` overrides and verify against the schema.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import TYPE_CHECKING

from jsonschema import Draft202012Validator
from pydantic import ValidationError
from ruamel.yaml import YAMLError

from ._schema import PruningVariant, RunConfig, SelfAssessVariant, run_schema
from .exceptions import ConfigError, UnableToParse, UnableToParseMissingJinja2
from .utils import parse_scalar, yaml, yaml_to_string

if TYPE_CHECKING:
    from collections.abc import Iterable

logger = logging.getLogger(__name__)

EFFECTIVE_CONFIG_NAME = "effective-config.yaml"


def render(path: os.PathLike) -> str:
    try:
        with open(path) as fi:
            data = fi.read()
    except OSError as exc:
        raise ConfigError(f"could not open '{path}' for reading", original=exc) from exc
    try:
        yaml.load(data)
        return data
    except YAMLError as e:
        if ("{{" not in data) and ("{%" not in data):
            raise UnableToParse(original=e)
        try:
            from .jinja import render_jinja_for_input_file
        except ImportError as ex:
            raise UnableToParseMissingJinja2(original=ex)
        return render_jinja_for_input_file(data, os.path.dirname(os.path.abspath(path)))


def _plain(obj):
    # ruamel's round-trip containers and scalar subclasses -> builtins
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, bool) or obj is None:
        return obj
    if isinstance(obj, int):
        return int(obj)
    if isinstance(obj, float):
        return float(obj)
    if isinstance(obj, str):
        return str(obj)
    return obj


def parse(path: os.PathLike) -> dict:
    try:
        res = yaml.load(render(path))
    except YAMLError as e:
        raise UnableToParse(original=e)
    if res is None:
        return {}
    if not isinstance(res, dict):
        raise ConfigError(f"'{path}' must contain a mapping of configuration keys")
    res = _plain(res)
    for key in list(res):
        if res[key] is None:
            del res[key]
    return res


def apply_overrides(data: dict, overrides: Iterable[str]) -> dict:
    """Apply ``section.key=value`` assignments; values are read as YAML."""
    for item in overrides:
        key, sep, raw = item.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        parts = key.split(".")
        node = data
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"override '{item}': '{part}' is not a section")
            node = child
        try:
            node[parts[-1]] = _plain(parse_scalar(raw.strip()))
        except YAMLError as exc:
            raise ConfigError(f"override '{item}' has an unreadable value", original=exc) from exc
    return data


def strategy_overrides(strategy: str) -> list[str]:
    """Map a ``--strategy`` name to the train section keys it sets."""
    overrides = []
    if strategy in {v.value for v in PruningVariant}:
        overrides.append(f"train.pruning={strategy}")
    if strategy in {v.value for v in SelfAssessVariant}:
        overrides.append(f"train.assignment={strategy}")
    if not overrides:
        valid = sorted({v.value for v in PruningVariant} | {v.value for v in SelfAssessVariant})
        raise ConfigError(f"unknown strategy '{strategy}'; allowed: {', '.join(valid)}")
    return overrides


def _where(path) -> str:
    return ".".join(str(p) for p in path) or "<root>"


def verify(info: dict) -> RunConfig:
    """Validate against the JSON schema, then build the pydantic model.

    Raises
    ------
    ConfigError
        Listing every offending field.
    """
    validator = Draft202012Validator(run_schema())
    errors = sorted(validator.iter_errors(info), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        raise ConfigError([f"{_where(e.absolute_path)}: {e.message}" for e in errors])
    try:
        return RunConfig(**info)
    except ValidationError as exc:
        problems = [f"{_where(err['loc'])}: {err['msg']}" for err in exc.errors()]
        raise ConfigError(problems) from exc


def load_config(path: os.PathLike | None, overrides: Iterable[str] = ()) -> RunConfig:
    info = parse(path) if path is not None else {}
    apply_overrides(info, overrides)
    cfg = verify(info)
    logger.debug("effective configuration:\n%s", effective_config_yaml(cfg))
    return cfg


def effective_config_yaml(cfg: RunConfig) -> str:
    return yaml_to_string(cfg.model_dump(mode="json"))


def write_effective_config(cfg: RunConfig, out_dir: os.PathLike) -> Path:
    path = Path(out_dir, EFFECTIVE_CONFIG_NAME)
    path.write_text(effective_config_yaml(cfg), encoding="utf-8")
    return path
