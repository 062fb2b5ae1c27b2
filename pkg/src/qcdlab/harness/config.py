"""Experiment config files (JSON) and their translation into model objects."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from ..errors import ConfigError, QcdError
from ..model import (
    ChangeTimeLaw,
    FiniteMarkov,
    IidDiscrete,
    IidGaussian,
    PolynomialStatistic,
    Pomdp,
    TableStatistic,
    constant,
    indicator,
    llr,
)

_num = {"type": "number"}
_vec = {"type": "array", "items": _num, "minItems": 1}
_mat = {"type": "array", "items": _vec, "minItems": 1}

_statistic = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["llr", "table", "polynomial", "constant", "indicator"]},
        "values": {"type": "array"},
        "coeffs": _vec,
        "label": {"type": "integer", "minimum": 0},
        "scale": _num,
        "offset": _num,
    },
}

SCHEMA = {
    "type": "object",
    "required": ["model"],
    "properties": {
        "command": {"enum": ["analyze", "simulate", "sweep", "optimize", "pomdp", "path"]},
        "model": {
            "type": "object",
            "required": ["variant"],
            "properties": {
                "variant": {"enum": ["iid_gaussian", "iid_discrete", "finite_markov", "pomdp"]},
                "pre_mean": _num,
                "pre_var": {"type": "number", "exclusiveMinimum": 0},
                "post_mean": _num,
                "post_var": {"type": "number", "exclusiveMinimum": 0},
                "pmf0": _vec,
                "pmf1": _vec,
                "P0": _mat,
                "P1": _mat,
                "P": _mat,
                "X0": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                "h": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                "z_init": {"type": "integer", "minimum": 0},
            },
        },
        "statistic": _statistic,
        "change_time": {
            "type": "object",
            "required": ["variant"],
            "properties": {
                "variant": {"enum": ["geometric", "geometric_mixture"]},
                "rho": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "components": {
                    "type": "array",
                    "items": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                    "minItems": 1,
                },
            },
        },
        "kappa": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
        "thresholds": {
            "oneOf": [
                {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                {
                    "type": "object",
                    "required": ["auto"],
                    "properties": {"auto": {"type": "integer", "minimum": 2}, "factor": _num},
                },
            ]
        },
        "reps": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "block_size": {"type": "integer", "minimum": 1},
        "workers": {"type": "integer", "minimum": 1},
        "horizon_multiplier": {"type": "number", "exclusiveMinimum": 0},
        "estimators": {
            "type": "object",
            "properties": {
                "mc": {"type": "boolean"},
                "hitting": {"type": "boolean"},
                "exact": {"type": "boolean"},
                "tilting": {"type": "boolean"},
            },
        },
        "sweep_method": {"enum": ["exact", "mc"]},
        "class": {
            "type": "object",
            "required": ["basis", "v"],
            "properties": {"basis": {"type": "array", "items": _statistic, "minItems": 1}, "v": _vec},
        },
        "path": {"type": "object", "properties": {"T": {"type": "number", "exclusiveMinimum": 0}}},
        "survival": {
            "type": "object",
            "properties": {"n_max": {"type": "integer", "minimum": 1}, "z_init": {"type": "integer"}},
        },
    },
}


@dataclass
class ExperimentConfig:
    raw: dict
    model: object
    statistic: object
    law: object
    kappas: list
    thresholds: object  # list of floats or {"auto": n}
    reps: int = 10_000
    seed: int = 0
    block_size: int = 10_000
    workers: int = 1
    horizon_multiplier: float = 10.0
    estimators: dict = field(default_factory=lambda: {"mc": True})
    sweep_method: str = "exact"
    command: str | None = None

    @property
    def rho_a(self):
        if self.model.variant == "pomdp":
            return self.model.report.rho_a
        return self.law.decay_rate()

    def threshold_grid(self, theta_plus):
        """Explicit grid, or ``auto`` points up to ``factor`` times the largest log(kappa)/theta_plus."""
        if isinstance(self.thresholds, list):
            return np.asarray(self.thresholds, dtype=float)
        n = self.thresholds["auto"]
        factor = self.thresholds.get("factor", 2.0)
        top = factor * max(math.log(max(k, math.e)) for k in self.kappas) / theta_plus
        return np.linspace(top / n, top, n)


def _path_of(err):
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def build_model(spec):
    v = spec["variant"]
    need = {
        "iid_gaussian": [],
        "iid_discrete": ["pmf0", "pmf1"],
        "finite_markov": ["P0", "P1"],
        "pomdp": ["P", "X0", "h"],
    }[v]
    for key in need:
        if key not in spec:
            raise ConfigError(f"model.{key}", f"required for variant {v!r}")
    try:
        if v == "iid_gaussian":
            return IidGaussian(
                spec.get("pre_mean", 0.0), spec.get("pre_var", 1.0), spec.get("post_mean", 1.0), spec.get("post_var", 1.0)
            )
        if v == "iid_discrete":
            return IidDiscrete(spec["pmf0"], spec["pmf1"])
        if v == "finite_markov":
            return FiniteMarkov(spec["P0"], spec["P1"])
        return Pomdp(np.array(spec["P"], dtype=float), spec["X0"], spec["h"], spec.get("z_init", spec["X0"][0]))
    except QcdError as exc:
        raise ConfigError("model", str(exc)) from exc


def build_statistic(spec, model, path="statistic"):
    kind = spec["kind"]
    try:
        if kind == "llr":
            if model.variant == "pomdp":
                pre, post = model.pre_pmf(), model.post_pmf()
                F = llr(IidDiscrete(pre / pre.sum(), post / post.sum()))
            else:
                F = llr(model)
        elif kind == "table":
            if "values" not in spec:
                raise ConfigError(f"{path}.values", "required for a table statistic")
            F = TableStatistic(np.array(spec["values"], dtype=float))
        elif kind == "polynomial":
            if "coeffs" not in spec:
                raise ConfigError(f"{path}.coeffs", "required for a polynomial statistic")
            F = PolynomialStatistic(spec["coeffs"])
        elif kind == "constant":
            F = constant(1.0)
            if model.variant == "finite_markov":
                F = TableStatistic(np.ones((model.N, model.N)), kind="constant")
        else:
            if "label" not in spec:
                raise ConfigError(f"{path}.label", "required for an indicator statistic")
            F = indicator(spec["label"], model.space_size())
    except ConfigError:
        raise
    except QcdError as exc:
        raise ConfigError(path, str(exc)) from exc
    if "scale" in spec:
        F = F * spec["scale"]
    if "offset" in spec:
        F = F + spec["offset"]
    return F


def build_law(spec):
    if spec is None:
        return None
    try:
        if spec["variant"] == "geometric":
            if "rho" not in spec:
                raise ConfigError("change_time.rho", "required for a geometric law")
            return ChangeTimeLaw.geometric(spec["rho"])
        if "components" not in spec:
            raise ConfigError("change_time.components", "required for a mixture")
        return ChangeTimeLaw.mixture([tuple(c) for c in spec["components"]])
    except ConfigError:
        raise
    except QcdError as exc:
        raise ConfigError("change_time", str(exc)) from exc


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a decoded config; schema violations raise ConfigError with the field path."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        if err.validator == "required" and not err.absolute_path:
            missing = err.message.split("'")[1]
            raise ConfigError(missing, "missing required key")
        path = _path_of(err)
        if err.validator == "required":
            missing = err.message.split("'")[1]
            path = f"{path}.{missing}"
        raise ConfigError(path, err.message)
    model = build_model(raw["model"])
    stat = build_statistic(raw.get("statistic", {"kind": "llr"}), model)
    law = build_law(raw.get("change_time"))
    if law is None and model.variant != "pomdp":
        raise ConfigError("change_time", "missing required key")
    if model.variant == "pomdp":
        law = model.change_law()
    thresholds = raw.get("thresholds", {"auto": 20})
    if isinstance(thresholds, list):
        if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
            raise ConfigError("thresholds", "grid must be sorted ascending")
        thresholds = [float(h) for h in thresholds]
    kappas = [float(k) for k in raw.get("kappa", [10.0])]
    if kappas != sorted(kappas):
        raise ConfigError("kappa", "list must be ascending")
    return ExperimentConfig(
        raw=raw,
        model=model,
        statistic=stat,
        law=law,
        kappas=kappas,
        thresholds=thresholds,
        reps=raw.get("reps", 10_000),
        seed=raw.get("seed", 0),
        block_size=raw.get("block_size", 10_000),
        workers=raw.get("workers", 1),
        horizon_multiplier=raw.get("horizon_multiplier", 10.0),
        estimators={"mc": True, **raw.get("estimators", {})},
        sweep_method=raw.get("sweep_method", "exact" if model.variant == "iid_discrete" else "mc"),
        command=raw.get("command"),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    return parse_config(raw)
