"""Strict parsing of JSON plan files into :class:`ExperimentPlan` objects.

Errors carry the line of the offending key when it can be located in the
source text.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Mapping

from . import disorder
from .errors import ConfigError, QuenchlabError
from .experiment import EXPERIMENTS, ExperimentPlan, SamplerParams, make_functional
from .model import spec_from_config

PLAN_KEYS = {"experiment", "model", "model2", "disorder", "grid", "functional", "order", "control",
             "realizations", "seed", "engine", "sampler"}
GRID_KEYS = {"N": "n_values", "t": "t_values", "eps": "eps_values", "s": "s_values"}
SAMPLER_KEYS = {"sweeps", "burn_in", "thinning", "inner_samples"}
ROLES = {"y", "g", "shared", "first", "second"}


def _line_of(text: str | None, key: str) -> int | None:
    if not text:
        return None
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _strict(obj, allowed, where, text):
    if not isinstance(obj, Mapping):
        raise ConfigError(f"{where} must be an object", _line_of(text, where))
    for k in obj:
        if k not in allowed:
            raise ConfigError(f"unknown key {k!r} in {where}; allowed: {sorted(allowed)}", _line_of(text, k))


def _int(v, key, text, low=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{key} must be an integer", _line_of(text, key))
    if low is not None and v < low:
        raise ConfigError(f"{key} must be >= {low}", _line_of(text, key))
    return v


def _numbers(v, key, text):
    if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise ConfigError(f"grid {key} must be a list of numbers", _line_of(text, key))
    return tuple(v)


def _disorder(v, text):
    try:
        if isinstance(v, str) or (isinstance(v, Mapping) and "kind" in v):
            return {"y": disorder.from_config(v)}
        _strict(v, ROLES, "disorder", text)
        return {role: disorder.from_config(cfg) for role, cfg in v.items()}
    except ConfigError as exc:
        if exc.line is None:
            raise ConfigError(str(exc), _line_of(text, "disorder")) from None
        raise


def plan_from_dict(cfg: Mapping, text: str | None = None) -> ExperimentPlan:
    """Build a plan from a parsed tree; ``text`` is the source, for line numbers."""
    _strict(cfg, PLAN_KEYS, "plan", text)
    exp = cfg.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {list(EXPERIMENTS)}", _line_of(text, "experiment"))
    for key in ("model", "disorder"):
        if key not in cfg:
            raise ConfigError(f"plan is missing {key!r}")
    kw = {"experiment": exp, "model": cfg["model"], "disorder": _disorder(cfg["disorder"], text)}
    for key in ("model", "model2"):
        if cfg.get(key) is not None:
            try:
                sub = dict(cfg[key])
                if sub.get("model") == "mixed_pspin":
                    sub.setdefault("N", 2)
                spec_from_config(sub)
            except (ConfigError, TypeError, ValueError) as exc:
                raise ConfigError(f"{key}: {exc}", _line_of(text, key)) from None
    if "model2" in cfg:
        kw["model2"] = cfg["model2"]
    grid = cfg.get("grid", {})
    _strict(grid, set(GRID_KEYS), "grid", text)
    for k, v in grid.items():
        kw[GRID_KEYS[k]] = _numbers(v, k, text)
    if "N" in grid:
        kw["n_values"] = tuple(_int(n, "N", text, 1) for n in kw["n_values"])
    if "functional" in cfg:
        try:
            make_functional(cfg["functional"])
        except (QuenchlabError, TypeError, ValueError) as exc:
            raise ConfigError(f"functional: {exc}", _line_of(text, "functional")) from None
        kw["functional"] = dict(cfg["functional"])
    if "order" in cfg:
        kw["order"] = _int(cfg["order"], "order", text, 2)
    if "control" in cfg:
        if not isinstance(cfg["control"], bool):
            raise ConfigError("control must be true or false", _line_of(text, "control"))
        kw["control"] = cfg["control"]
    if "realizations" in cfg:
        kw["realizations"] = _int(cfg["realizations"], "realizations", text, 2)
    if "seed" in cfg:
        kw["seed"] = _int(cfg["seed"], "seed", text, 0)
    if "engine" in cfg:
        if cfg["engine"] not in ("exact", "mcmc"):
            raise ConfigError("engine must be 'exact' or 'mcmc'", _line_of(text, "engine"))
        kw["engine"] = cfg["engine"]
    if "sampler" in cfg:
        _strict(cfg["sampler"], SAMPLER_KEYS, "sampler", text)
        params = {k: _int(v, k, text, 0 if k == "burn_in" else 1) for k, v in cfg["sampler"].items()}
        kw["sampler"] = SamplerParams(**params)
    try:
        return ExperimentPlan(**kw)
    except QuenchlabError as exc:
        raise ConfigError(str(exc)) from None


def loads_plan(text: str) -> ExperimentPlan:
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg + f" (column {exc.colno})", exc.lineno) from None
    return plan_from_dict(cfg, text)


def load_plan(path) -> ExperimentPlan:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read plan file {str(p)!r}: {exc.strerror}") from None
    return loads_plan(text)
