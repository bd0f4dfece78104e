"""Experiment configuration: JSON schema, parsing, validation.

A spec is one JSON document.  Keys starting with an underscore are
annotations (provenance notes, full-scale parameter values) and are
ignored by the loader, so committed spec files can carry them without
affecting runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import jsonschema

EXPERIMENTS = ("micro_vs_pde", "sigma_compare", "generator_test",
               "barsigma_scaling", "self_similar", "wetting")


class SpecError(ValueError):
    """Configuration rejected; the message names the offending field."""


_NUM = {"type": "number"}
_POSNUM = {"type": "number", "exclusiveMinimum": 0}

SPEC_SCHEMA: dict[str, Any] = {
    "type": "object",
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "d": {"enum": [1, 2]},
        "K": _POSNUM,
        "p": {"type": "number", "minimum": 1},
        "scaling": {"enum": ["smooth", "rough"]},
        "N": {"type": "array", "items": {"type": "integer", "minimum": 3},
              "minItems": 1},
        "T": _POSNUM,
        "snapshot_times": {"type": "array", "items": _NUM},
        "ensemble": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "out": {"type": "string"},
        "threads": {"type": ["integer", "null"], "minimum": 1},
        "profile": {
            "type": "object",
            "properties": {
                "name": {"enum": ["sine", "sine2d", "bump"]},
                "amplitude": _NUM,
                "center": {"type": "array", "items": _NUM,
                           "minItems": 1, "maxItems": 2},
            },
            "required": ["name"],
            "additionalProperties": False,
        },
        "pde": {
            "type": "object",
            "properties": {
                "M": {"type": "integer", "minimum": 3},
                "tension": {"enum": ["discrete", "continuous", "bare"]},
                "coefficient": {"enum": ["with_2d_inverse", "bare"]},
                "rough_include_K": {"type": "boolean"},
                "error_tol": _POSNUM,
                "dt_safety": _POSNUM,
                "table_points": {"type": "integer", "minimum": 8},
                "table_range": {"type": ["number", "null"],
                                "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "generator": {
            "type": "object",
            "properties": {
                "samples": {"type": "integer", "minimum": 2},
                "bootstrap": {"type": "integer", "minimum": 10},
            },
            "additionalProperties": False,
        },
        "kappas": {"type": "array", "items": _POSNUM, "minItems": 1},
        "u_min": _NUM,
        "u_max": _NUM,
        "u_points": {"type": "integer", "minimum": 8},
        "self_similar": {
            "type": "object",
            "properties": {
                "interval_T": _POSNUM,
                "tol": _POSNUM,
                "max_iter": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "wetting": {
            "type": "object",
            "properties": {
                "threshold": _POSNUM,
                "times": {"type": "array", "items": _NUM, "minItems": 1},
            },
            "additionalProperties": False,
        },
    },
    "required": ["experiment", "d", "K", "p"],
    "patternProperties": {"^_": {}},
    "additionalProperties": False,
}


@dataclass
class ExperimentSpec:
    """Validated, defaulted view of one experiment configuration."""

    experiment: str
    d: int
    K: float
    p: float
    scaling: str = "smooth"
    N: list[int] = field(default_factory=list)
    T: float = 0.0
    snapshot_times: list[float] | None = None
    ensemble: int = 1
    seed: int = 0
    out: str | None = None
    threads: int | None = None
    profile: dict = field(default_factory=lambda: {"name": "sine",
                                                   "amplitude": 1.0})
    pde: dict = field(default_factory=dict)
    generator: dict = field(default_factory=dict)
    kappas: list[float] = field(default_factory=list)
    u_min: float = 0.05
    u_max: float = 1.0
    u_points: int = 64
    self_similar: dict = field(default_factory=dict)
    wetting: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)

    def times(self) -> list[float]:
        if self.snapshot_times is not None:
            return list(self.snapshot_times)
        return [self.T]


_PDE_DEFAULTS = {"M": 200, "tension": "discrete",
                 "coefficient": "with_2d_inverse", "rough_include_K": True,
                 "error_tol": 1e-8, "dt_safety": 0.9, "table_points": 257,
                 "table_range": None}
_GEN_DEFAULTS = {"samples": 100, "bootstrap": 200}
_SS_DEFAULTS = {"interval_T": 2e-4, "tol": 1e-7, "max_iter": 200}
_WET_DEFAULTS = {"threshold": 1e-8, "times": None}


def parse_spec(doc: dict) -> ExperimentSpec:
    """Validate a raw JSON document and fill defaults.

    Cross-field rules beyond the schema: rough scaling needs p > 1,
    snapshot times must be sorted within [0, T], and each experiment
    requires the blocks it reads.
    """
    try:
        jsonschema.validate(doc, SPEC_SCHEMA)
    except jsonschema.ValidationError as e:
        path = ".".join(str(x) for x in e.absolute_path) or "<root>"
        raise SpecError(f"{path}: {e.message}") from None
    clean = {k: v for k, v in doc.items() if not k.startswith("_")}
    spec = ExperimentSpec(raw=dict(doc), **clean)

    spec.pde = {**_PDE_DEFAULTS, **spec.pde}
    spec.generator = {**_GEN_DEFAULTS, **spec.generator}
    spec.self_similar = {**_SS_DEFAULTS, **spec.self_similar}
    spec.wetting = {**{k: v for k, v in _WET_DEFAULTS.items()
                       if v is not None}, **spec.wetting}

    if spec.scaling == "rough" and spec.p <= 1.0:
        raise SpecError("scaling: rough scaling requires p > 1")
    if spec.p == 1.0 and spec.pde["tension"] == "bare":
        raise SpecError("pde.tension: the bare tension is undefined "
                        "at p = 1")
    if spec.snapshot_times is not None:
        ts = spec.snapshot_times
        if ts != sorted(ts):
            raise SpecError("snapshot_times: must be sorted")
        if ts and (ts[0] < 0 or (spec.T and ts[-1] > spec.T)):
            raise SpecError("snapshot_times: must lie within [0, T]")

    needs_T = {"micro_vs_pde", "sigma_compare", "generator_test"}
    if spec.experiment in needs_T and not (spec.T > 0):
        raise SpecError("T: must be positive for this experiment")
    if spec.experiment in {"micro_vs_pde", "generator_test"} and not spec.N:
        raise SpecError("N: at least one lattice size is required")
    if spec.experiment == "barsigma_scaling":
        if not spec.kappas:
            raise SpecError("kappas: required for barsigma_scaling")
        if not (spec.u_max > spec.u_min):
            raise SpecError("u_max: must exceed u_min")
        if spec.p <= 1.0:
            raise SpecError("p: the macroscopic tension limit needs p > 1")
    if spec.experiment == "wetting" and not spec.wetting.get("times"):
        raise SpecError("wetting.times: required for wetting")
    if spec.experiment == "wetting" and spec.profile.get("name") != "bump":
        raise SpecError("profile.name: wetting runs start from the bump")
    if spec.d == 2 and spec.profile.get("name") == "sine":
        raise SpecError("profile.name: sine is 1-d; use sine2d")
    if spec.d == 1 and spec.profile.get("name") == "sine2d":
        raise SpecError("profile.name: sine2d needs d = 2")
    spec.profile.setdefault("amplitude", 1.0)
    return spec


def load_spec(path) -> ExperimentSpec:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as e:
        raise SpecError(f"cannot read spec file: {e}") from None
    except json.JSONDecodeError as e:
        raise SpecError(f"spec file is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise SpecError("spec document must be a JSON object")
    return parse_spec(doc)
