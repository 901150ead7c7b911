"""Run configuration: JSON schema, defaults, and construction of model objects."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from .copula import CorrelationMatrix
from .noise_model import (
    DEFAULT_DEPHASING_RANGE,
    DriftSpec,
    NoiseParameter,
    ParameterKind,
    bv_parameter_set,
    depolarizing_parameter_set,
    validate_parameter_set,
)

__all__ = ["ConfigError", "SCHEMA", "RunConfig", "load_config", "DEFAULT_DRIFT"]


class ConfigError(ValueError):
    """The run configuration is invalid."""


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_UNIT_OPEN = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}
_DRIFT = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "mu0": _UNIT_OPEN,
        "sigma0": _POS,
        "omega": {"type": "number", "minimum": 1},
        "horizon": {"type": "number", "minimum": 0},
    },
}
_GAUSS = {
    "type": "object",
    "additionalProperties": False,
    "required": ["mu", "sigma", "rho"],
    "properties": {"mu": _NUM, "sigma": {"type": "number", "minimum": 0}, "rho": {"type": "number", "minimum": -1, "maximum": 1}},
}

SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "reliab run configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "noise_model": {"enum": ["calibrated", "depolarizing"]},
        "circuit": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "secret": {"type": "string", "pattern": "^[01]+$"},
                "idle_times": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "cnot_duration": {"type": "number", "minimum": 0},
                "qubit_limit": {"type": "integer", "minimum": 1},
            },
        },
        "parameters": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "kind", "targets"],
                "properties": {
                    "id": {"type": "integer", "minimum": 0},
                    "kind": {"enum": [k.value for k in ParameterKind]},
                    "targets": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1, "maxItems": 2},
                    "rescale": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                    "complement": {"type": "boolean"},
                },
            },
        },
        "dephasing_range": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "csv": {"type": "string"},
                "window": {"oneOf": [{"const": "monthly"}, {"type": "integer", "minimum": 2}]},
                "correlation": {"enum": ["normal_score", "pearson"]},
                "psd_floor": {"type": "number", "minimum": 0},
            },
        },
        "synthetic": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": {"type": "integer", "minimum": 1},
                "per_epoch": {"type": "integer", "minimum": 2},
                "anchor": {"enum": ["start", "unit"]},
                "drift": _DRIFT,
                "drift_by_kind": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {k.value: _DRIFT for k in ParameterKind},
                },
                "drift_by_parameter": {"type": "object", "patternProperties": {"^[0-9]+$": _DRIFT}, "additionalProperties": False},
                "equicorrelation": {"type": "number", "minimum": -1, "maximum": 1},
                "correlation_matrix": {"type": "array", "items": {"type": "array", "items": _NUM}},
            },
        },
        "source": {"enum": ["model", "fitted"]},
        "monte_carlo": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "distance_samples": {"type": "integer", "minimum": 10000},
                "observable_samples": {"type": "integer", "minimum": 2},
                "chunk_size": {"type": "integer", "minimum": 1},
            },
        },
        "clustering": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "max_cluster_dim": {"type": "integer", "minimum": 1},
                "threshold": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
            },
        },
        "stability": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "observable": {"enum": ["analytic", "circuit"]},
                "c": {"type": ["number", "null"], "minimum": 0},
                "depolarizing_lower": {"type": "number", "minimum": 0, "maximum": 1},
                "reference_epoch": {"type": "integer", "minimum": 0},
                "distance_parameters": {"type": ["array", "null"], "items": {"type": "integer", "minimum": 0}},
            },
        },
        "scaling": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_values": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "t1": _GAUSS,
                "t2": _GAUSS,
                "with_bound": {"type": "boolean"},
            },
        },
    },
}

# Synthetic drift defaults per parameter kind; dephasing is in rescaled units.
DEFAULT_DRIFT: dict[str, dict[str, float]] = {
    ParameterKind.SPAM_FIDELITY.value: {"mu0": 0.95, "sigma0": 0.01},
    ParameterKind.CNOT_FIDELITY.value: {"mu0": 0.97, "sigma0": 0.005},
    ParameterKind.DEPHASING_TIME.value: {"mu0": 0.2, "sigma0": 0.02},
    ParameterKind.HADAMARD_FIDELITY.value: {"mu0": 0.999, "sigma0": 0.0005},
    ParameterKind.DEPOLARIZING.value: {"mu0": 0.05, "sigma0": 0.01},
}
DEFAULT_OMEGA = 4.0

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "output_dir": "out",
    "noise_model": "calibrated",
    "circuit": {"secret": "1010", "cnot_duration": 0.4, "qubit_limit": 10},
    "dephasing_range": list(DEFAULT_DEPHASING_RANGE),
    "data": {"window": "monthly", "correlation": "normal_score", "psd_floor": 1e-6},
    "synthetic": {"epochs": 17, "per_epoch": 30, "anchor": "start", "equicorrelation": 0.5},
    "source": "model",
    "monte_carlo": {"distance_samples": 100_000, "observable_samples": 100_000, "chunk_size": 1 << 16},
    "clustering": {"enabled": False, "max_cluster_dim": 7, "threshold": None},
    "stability": {"c": None, "depolarizing_lower": 0.0, "reference_epoch": 0, "distance_parameters": None},
    "scaling": {"n_values": [2, 4, 6, 8, 10, 12], "with_bound": False},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass(frozen=True)
class RunConfig:
    raw: dict
    base_dir: Path

    def __getitem__(self, key: str):
        return self.raw[key]

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def secret(self) -> tuple[int, ...]:
        return tuple(int(c) for c in self.raw["circuit"]["secret"])

    @property
    def n(self) -> int:
        return len(self.secret)

    @property
    def observable(self) -> str:
        chosen = self.raw["stability"].get("observable")
        if chosen:
            return chosen
        return "analytic" if self.raw["noise_model"] == "depolarizing" else "circuit"

    def params(self) -> tuple[NoiseParameter, ...]:
        if "parameters" in self.raw:
            try:
                ps = tuple(
                    NoiseParameter(
                        id=p["id"],
                        kind=p["kind"],
                        targets=tuple(p["targets"]),
                        rescale=tuple(p["rescale"]) if "rescale" in p else None,
                        complement=p.get("complement", False),
                    )
                    for p in sorted(self.raw["parameters"], key=lambda p: p["id"])
                )
                validate_parameter_set(ps)
            except ValueError as exc:
                raise ConfigError(f"parameters: {exc}") from None
            return ps
        if self.raw["noise_model"] == "depolarizing":
            return depolarizing_parameter_set(self.n)
        return bv_parameter_set(self.secret, tuple(self.raw["dephasing_range"]))

    def epochs(self) -> int:
        return int(self.raw["synthetic"]["epochs"])

    def drift_specs(self) -> tuple[DriftSpec, ...]:
        syn = self.raw["synthetic"]
        horizon_default = max(self.epochs() - 1, 1)
        out = []
        for p in self.params():
            spec = {"omega": DEFAULT_OMEGA, "horizon": horizon_default, **DEFAULT_DRIFT[p.kind.value]}
            spec.update(syn.get("drift", {}))
            spec.update(syn.get("drift_by_kind", {}).get(p.kind.value, {}))
            spec.update(syn.get("drift_by_parameter", {}).get(str(p.id), {}))
            try:
                out.append(DriftSpec(spec["mu0"], spec["sigma0"], spec["omega"], spec["horizon"]))
            except ValueError as exc:
                raise ConfigError(f"drift for parameter {p.id}: {exc}") from None
        return tuple(out)

    def correlation(self) -> CorrelationMatrix:
        syn = self.raw["synthetic"]
        d = len(self.params())
        try:
            if "correlation_matrix" in syn:
                corr = CorrelationMatrix(np.array(syn["correlation_matrix"], dtype=float))
                if corr.dim != d:
                    raise ValueError(f"correlation_matrix is {corr.dim}x{corr.dim}, expected {d}x{d}")
            else:
                corr = CorrelationMatrix.equicorrelated(d, syn["equicorrelation"])
            if not corr.is_psd():
                raise ValueError("correlation matrix is not positive semidefinite")
        except ValueError as exc:
            raise ConfigError(f"synthetic correlation: {exc}") from None
        return corr

    def csv_path(self) -> Path | None:
        p = self.raw["data"].get("csv")
        if p is None:
            return None
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path


def validate(doc: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError("invalid config: " + "; ".join(msgs))


def build_config(doc: dict, base_dir: str | Path = ".") -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    validate(doc)
    merged = _merge(DEFAULTS, doc)
    cfg = RunConfig(merged, Path(base_dir))
    cfg.params()
    if cfg.observable == "analytic" and any(p.kind is not ParameterKind.DEPOLARIZING for p in cfg.params()):
        raise ConfigError("the analytic observable needs the depolarizing noise model")
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return build_config(doc, path.parent)


def write_schema(path: str | Path) -> None:
    Path(path).write_text(json.dumps(SCHEMA, indent=2) + "\n", encoding="utf-8")
