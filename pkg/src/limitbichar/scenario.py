"""Scenario files: JSON schema, loading, overrides and model construction."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, List, Optional

import jsonschema
import numpy as np

from .errors import ContractViolation, ScenarioError
from .families import (
    Q2_CASES,
    polynomial_symbol,
    product_of_principal_type,
    quadratic_hyperbolic,
    root_symbol,
    tau_minus_r,
)
from .normal_form import PreparedModel
from .polynomial import Polynomial
from .symbol_model import SymbolModel

SCHEMA_VERSION = 1
DEFAULT_SWEEP = [2.0**k for k in range(7, 15)]
DEFAULT_EIKONAL_SWEEP = [2.0**k for k in range(7, 14)]

_table = {
    "type": "array",
    "items": {
        "type": "array",
        "minItems": 2,
        "items": {"anyOf": [{"type": "number"}, {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}]},
    },
}
_complex = {"anyOf": [{"type": "number"}, {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}]}
_matrix = {"anyOf": [{"type": "number"}, {"type": "array"}]}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "name", "symbol", "bicharacteristics"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "description": {"type": "string"},
        "seed": {"type": "integer"},
        "symbol": {
            "type": "object",
            "required": ["family"],
            "properties": {
                "family": {"enum": ["polynomial", "tau_minus_r", "quadratic_hyperbolic", "product", "root"]},
                "n": {"type": "integer", "minimum": 2},
                "p": _table,
                "r": _table,
                "a": _table,
                "p0": _table,
                "homogeneity_degree": {"type": ["number", "null"]},
                "mu": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "n_free": {"type": "integer", "minimum": 0},
                "q2": {"enum": list(Q2_CASES)},
                "mu0": {"type": "number"},
                "factors": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}, "minItems": 1},
                "k": {"type": "integer", "minimum": 2},
                "w1_index": {"type": "integer", "minimum": 0},
                "name": {"type": "string"},
            },
            "additionalProperties": False,
        },
        "bicharacteristics": {
            "type": "object",
            "required": ["members"],
            "additionalProperties": False,
            "properties": {
                "members": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["j", "start", "length"],
                        "additionalProperties": False,
                        "properties": {
                            "j": {"type": "integer"},
                            "start": {"type": "array", "items": {"type": "number"}, "minItems": 4},
                            "length": {"type": "number", "exclusiveMinimum": 0},
                            "scale": {"type": "number", "exclusiveMinimum": 0},
                            "p0_scale": {"type": "number"},
                            "orientation": {"enum": [1, -1]},
                        },
                    },
                },
                "step_control": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 2, "maxItems": 2},
            },
        },
        "exponents": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
                "delta": {"type": "number", "exclusiveMinimum": 0},
                "rho": {"type": "number", "exclusiveMinimum": 0},
                "kappa_exp": {"type": "number", "exclusiveMinimum": 0},
                "waive_delta": {"type": "boolean"},
            },
        },
        "diagnostics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "c_factor": {"type": "number", "exclusiveMinimum": 0},
                "min_slope": {"type": "number"},
                "k_max": {"type": "integer", "minimum": 1, "maximum": 4},
            },
        },
        "prepared": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "d": {"type": "integer", "minimum": 1},
                "K": _matrix,
                "B": _matrix,
                "Ct": _matrix,
                "cubic": _matrix,
                "q0_coefs": {"type": "array", "items": _complex, "minItems": 1},
                "q0_log_power": {"type": ["number", "null"]},
                "xi0": {"type": "array", "items": {"type": "number"}},
                "interval": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
            },
        },
        "riccati": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "threshold": {"type": "number", "exclusiveMinimum": 1},
                "t_span": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "initial_A": {"type": "array"},
            },
        },
        "eikonal": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lambdas": {"type": "array", "items": {"type": "number", "minimum": 1}, "minItems": 1},
                "c": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "lambda_sweep": {"type": "array", "items": {"type": "number", "minimum": 1}, "minItems": 1},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "N_t": {"type": "integer", "minimum": 16},
                "cutoff_width": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "norms": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"N": {"type": "number", "minimum": 0}, "nu": {"type": "number", "minimum": 0}},
        },
        "quasimode": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "M": {"type": "integer", "minimum": 0},
                "lambda": {"type": "number", "minimum": 1},
                "backend": {"enum": ["direct", "expansion"]},
                "compare_order": {"enum": [1, 2]},
                "backend_C": {"type": ["number", "null"]},
            },
        },
        "output": {"type": "object", "additionalProperties": False, "properties": {"directory": {"type": "string"}}},
    },
}


def _json_path(error) -> str:
    parts = "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in error.absolute_path)
    return "$" + parts


def validate(data: dict) -> None:
    """Raise ``ScenarioError`` naming the JSON path of the first (deepest) problem."""
    v = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(v.iter_errors(data), key=lambda e: (-len(e.absolute_path), str(e.absolute_path)))
    if errors:
        e = errors[0]
        raise ScenarioError(e.message, _json_path(e))
    ex = data.get("exponents", {})
    eps = ex.get("epsilon", 0.1)
    delta = ex.get("delta", (1 + 2 * eps) / 3)
    if abs(delta - (1 + 2 * eps) / 3) > 1e-12 and not ex.get("waive_delta", False):
        raise ScenarioError(f"delta={delta} differs from (1 + 2 eps)/3 = {(1 + 2 * eps) / 3:.12g}; set waive_delta to override", "$.exponents.delta")
    if not eps < 1 / 7 and not ex.get("waive_delta", False):
        raise ScenarioError("epsilon must be below 1/7", "$.exponents.epsilon")


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides: List[str]) -> dict:
    """``key.sub[2].leaf=value`` assignments; values are parsed as JSON when possible."""
    out = copy.deepcopy(data)
    for item in overrides or []:
        if "=" not in item:
            raise ScenarioError(f"override {item!r} is not of the form key=value")
        key, val = item.split("=", 1)
        tokens = []
        for part in key.split("."):
            while "[" in part:
                head, rest = part.split("[", 1)
                if head:
                    tokens.append(head)
                idx, part = rest.split("]", 1)
                try:
                    tokens.append(int(idx))
                except ValueError:
                    raise ScenarioError(f"override {item!r} has a non-integer index") from None
            if part:
                tokens.append(part)
        if not tokens:
            raise ScenarioError(f"override {item!r} has an empty key")
        node = out
        try:
            for tok in tokens[:-1]:
                if isinstance(tok, int):
                    node = node[tok]
                else:
                    node = node.setdefault(tok, {})
            node[tokens[-1]] = _parse_value(val)
        except (IndexError, KeyError, TypeError, AttributeError):
            raise ScenarioError(f"override {item!r} does not address a field of the scenario") from None
    return out


def shipped_scenarios() -> List[str]:
    root = resources.files("limitbichar") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def resolve_path(name_or_path: str) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    cand = resources.files("limitbichar") / "scenarios" / f"{name_or_path}.json"
    if cand.is_file():
        return Path(str(cand))
    raise ScenarioError(f"no scenario file or shipped scenario named {name_or_path!r}")


@dataclass
class Scenario:
    data: dict
    source: str = ""

    @property
    def name(self) -> str:
        return self.data["name"]

    def get(self, section: str, key: str, default=None):
        return self.data.get(section, {}).get(key, default)

    # -- exponents -----------------------------------------------------------
    @property
    def epsilon(self) -> float:
        return float(self.get("exponents", "epsilon", 0.1))

    @property
    def delta(self) -> float:
        return float(self.get("exponents", "delta", (1 + 2 * self.epsilon) / 3))

    @property
    def rho(self) -> float:
        return float(self.get("exponents", "rho", 0.1))

    @property
    def kappa_exp(self) -> float:
        return float(self.get("exponents", "kappa_exp", 0.1))

    # -- symbols and curves --------------------------------------------------
    def base_model(self) -> SymbolModel:
        s = self.data["symbol"]
        fam = s["family"]
        try:
            if fam == "polynomial":
                return polynomial_symbol(s["n"], s["p"], s.get("p0"), s.get("homogeneity_degree"), s.get("name", self.name))
            if fam == "quadratic_hyperbolic":
                m = len(s.get("mu", [])) + s.get("n_free", 1)
                n = m + (2 if s.get("q2") == "eta1_eta2_minus_y2_sq" else 1)
                p0 = Polynomial.from_table(s["p0"], 2 * n) if s.get("p0") else None
                return quadratic_hyperbolic(s.get("mu", []), s.get("n_free", 1), s.get("q2", "neg_eta1_sq"), s.get("mu0", 1.0), p0)
            if fam == "product":
                nv = len(s["factors"][0])
                p0 = Polynomial.from_table(s["p0"], nv) if s.get("p0") else None
                return product_of_principal_type(s["factors"], p0)
            n = s["n"]
            p0 = Polynomial.from_table(s["p0"], 2 * n) if s.get("p0") else None
            if fam == "tau_minus_r":
                return tau_minus_r(n, Polynomial.from_table(s["r"], 2 * n), p0, name=s.get("name", "tau-minus-r"))
            return root_symbol(s["k"], Polynomial.from_table(s["a"], 2 * n), s["w1_index"], p0)
        except KeyError as exc:
            raise ScenarioError(f"missing field {exc.args[0]!r} for family {fam!r}", "$.symbol") from None
        except (ValueError, ContractViolation) as exc:
            raise ScenarioError(str(exc), "$.symbol") from None

    def models(self) -> List[SymbolModel]:
        base = self.base_model()
        out = []
        for mem in self.data["bicharacteristics"]["members"]:
            m = base
            ps = mem.get("p0_scale", 1.0)
            if ps != 1.0:
                if base.polynomial is None:
                    raise ScenarioError("p0_scale needs a polynomial symbol", "$.bicharacteristics.members")
                m = SymbolModel.from_polynomials(
                    base.polynomial, base.sub_polynomial * ps, homogeneity_degree=base.homogeneity_degree, name=base.name
                )
            sc = mem.get("scale", 1.0)
            if sc != 1.0:
                m = m.scaled(sc)
            out.append(m)
        return out

    def members(self) -> List[dict]:
        return self.data["bicharacteristics"]["members"]

    def step_control(self):
        return tuple(self.data["bicharacteristics"].get("step_control", (1e-10, 1e-10)))

    # -- prepared model ------------------------------------------------------
    @property
    def has_prepared(self) -> bool:
        return "prepared" in self.data

    def prepared(self, lam: float = 1.0) -> PreparedModel:
        if not self.has_prepared:
            raise ScenarioError("this scenario has no prepared block", "$.prepared")
        p = dict(self.data["prepared"])
        q0 = p.pop("q0_coefs", [0.0])
        kw = dict(
            d=p.pop("d", 1),
            q0_coefs=[complex(*c) if isinstance(c, list) else complex(c) for c in q0],
            epsilon=self.epsilon,
            delta=self.delta,
            rho=self.rho,
            kappa_exp=self.kappa_exp,
            lam=float(lam),
            waive_exponents=bool(self.get("exponents", "waive_delta", False)),
            name=self.name,
        )
        if "interval" in p:
            kw["interval"] = tuple(p.pop("interval"))
        kw.update(p)
        try:
            return PreparedModel(**kw)
        except ContractViolation as exc:
            raise ScenarioError(str(exc), "$.prepared") from None

    # -- numeric settings ----------------------------------------------------
    @property
    def lambda_sweep(self) -> List[float]:
        return [float(v) for v in self.data.get("lambda_sweep", DEFAULT_SWEEP)]

    @property
    def eikonal_lambdas(self) -> List[float]:
        return [float(v) for v in self.get("eikonal", "lambdas", DEFAULT_EIKONAL_SWEEP)]


def load_scenario(path_or_name: str, overrides: Optional[List[str]] = None) -> Scenario:
    path = resolve_path(path_or_name)
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})") from None
    return scenario_from_dict(data, overrides, str(path))


def scenario_from_dict(data: dict, overrides: Optional[List[str]] = None, source: str = "") -> Scenario:
    data = apply_overrides(data, overrides or [])
    validate(data)
    return Scenario(data, source)
