"""Experiment configuration: TOML in, normalized config out.

Numbers are parsed as :class:`decimal.Decimal` so transition probabilities
keep their written value until the model is built. States are 1-based in the
file and 0-based in the library.
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from .policies import BASELINE_KINDS
from .significance import DomainError, SignificanceProfile, age_function_from_dict, alarm_profile
from .source import ParameterError, SourceModel, StructuralError, make_symmetric_source

SOLVERS = ("spi", "pi", "rvi")


class ConfigError(ValueError):
    pass


def _listify(v):
    return list(v) if isinstance(v, list) else [v]


def _num(v, where: str):
    if isinstance(v, bool) or not isinstance(v, (int, Decimal)):
        raise ConfigError(f"{where}: expected a number, got {v!r}")
    return v


def _require(table: dict, key: str, where: str):
    if key not in table:
        raise ConfigError(f"{where}: missing required field '{key}'")
    return table[key]


def _plain(v):
    """Decimal -> float recursively (for building library objects)."""
    if isinstance(v, Decimal):
        return float(v)
    if isinstance(v, list):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    return v


def _normalize(raw: dict) -> dict:
    known = {"name", "source", "significance", "channel", "problem", "solver", "compare", "simulation", "output"}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(extra))}")
    data = copy.deepcopy(raw)

    src = _require(data, "source", "config")
    kind = _require(src, "kind", "source")
    if kind == "symmetric":
        _num(_require(src, "M", "source"), "source.M")
        _num(_require(src, "p", "source"), "source.p")
    elif kind == "matrix":
        Q = _require(src, "Q", "source")
        if not isinstance(Q, list) or not all(isinstance(r, list) for r in Q):
            raise ConfigError("source.Q: expected a list of rows")
        for r, row in enumerate(Q):
            for c, v in enumerate(row):
                _num(v, f"source.Q[{r + 1}][{c + 1}]")
    else:
        raise ConfigError(f"source.kind: expected 'symmetric' or 'matrix', got {kind!r}")
    src["alarm_states"] = [int(a) for a in _listify(src.get("alarm_states", [1]))]
    M = src_M(src)
    for a in src["alarm_states"]:
        if not 1 <= a <= M:
            raise ConfigError(f"source.alarm_states: state {a} outside 1..{M}")

    sig = _require(data, "significance", "config")
    sig.setdefault("D", 1)
    ages = _require(sig, "age", "significance")
    for cls in ("missed", "false", "normal"):
        if cls not in ages:
            raise ConfigError(f"significance.age: missing '{cls}' age function")
        _age(ages[cls], f"significance.age.{cls}")
    for k, ov in enumerate(sig.get("override", [])):
        where = f"significance.override[{k + 1}]"
        for key in ("i", "j"):
            v = int(_require(ov, key, where))
            if not 1 <= v <= M:
                raise ConfigError(f"{where}.{key}: state {v} outside 1..{M}")
        if ov["i"] == ov["j"]:
            raise ConfigError(f"{where}: i and j must differ")
        _age(_require(ov, "g", where), f"{where}.g")

    ch = _require(data, "channel", "config")
    ch["p_s"] = _listify(_require(ch, "p_s", "channel"))
    for v in ch["p_s"]:
        if not 0 <= _num(v, "channel.p_s") <= 1:
            raise ConfigError(f"channel.p_s: {v} outside [0, 1]")

    pr = _require(data, "problem", "config")
    pr["lambda"] = _listify(_require(pr, "lambda", "problem"))
    for v in pr["lambda"]:
        if _num(v, "problem.lambda") < 0:
            raise ConfigError("problem.lambda: transmission cost must be >= 0")
    pr["N"] = _listify(_require(pr, "N", "problem"))
    for v in pr["N"]:
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise ConfigError(f"problem.N: expected integers >= 1, got {v!r}")

    sv = data.setdefault("solver", {})
    sv.setdefault("method", "spi")
    if sv["method"] not in SOLVERS:
        raise ConfigError(f"solver.method: expected one of {SOLVERS}, got {sv['method']!r}")
    sv.setdefault("tol", Decimal("1e-10"))
    sv.setdefault("max_iter", 500)
    sv.setdefault("references", False)
    if "s_ref" in sv:
        s = sv["s_ref"]
        if not (isinstance(s, list) and len(s) == 3):
            raise ConfigError("solver.s_ref: expected [i, j, delta]")
        if not (1 <= s[0] <= M and 1 <= s[1] <= M):
            raise ConfigError(f"solver.s_ref: states must lie in 1..{M}")

    cp = data.setdefault("compare", {})
    cp.setdefault("baselines", [])
    for b in cp["baselines"]:
        if b not in BASELINE_KINDS:
            raise ConfigError(f"compare.baselines: unknown baseline {b!r}")

    sim = data.setdefault("simulation", {})
    sim.setdefault("horizon", 1_000_000)
    sim["seeds"] = [int(s) for s in _listify(sim.get("seeds", [0]))]
    if sim["horizon"] < 1:
        raise ConfigError("simulation.horizon: must be >= 1")

    data.setdefault("output", {})
    data.setdefault("name", "experiment")
    return data


def _age(spec, where: str):
    if not isinstance(spec, dict):
        raise ConfigError(f"{where}: expected a table")
    try:
        return age_function_from_dict(_plain(spec))
    except (DomainError, TypeError, KeyError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def src_M(src: dict) -> int:
    return int(src["M"]) if src["kind"] == "symmetric" else len(src["Q"])


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    data: dict

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.data == other.data

    # --- accessors -------------------------------------------------------------

    @property
    def name(self) -> str:
        return str(self.data["name"])

    @property
    def M(self) -> int:
        return src_M(self.data["source"])

    @property
    def p_s_values(self) -> list[float]:
        return [float(v) for v in self.data["channel"]["p_s"]]

    @property
    def lambdas(self) -> list[float]:
        return [float(v) for v in self.data["problem"]["lambda"]]

    @property
    def N_values(self) -> list[int]:
        return [int(v) for v in self.data["problem"]["N"]]

    @property
    def solver(self) -> dict:
        return _plain(self.data["solver"])

    @property
    def compare(self) -> dict:
        return _plain(self.data["compare"])

    @property
    def simulation(self) -> dict:
        return _plain(self.data["simulation"])

    @property
    def output_dir(self) -> str | None:
        return self.data["output"].get("dir")

    def s_ref(self):
        s = self.data["solver"].get("s_ref")
        return None if s is None else (int(s[0]) - 1, int(s[1]) - 1, int(s[2]))

    def source_model(self) -> SourceModel:
        src = self.data["source"]
        alarms = frozenset(a - 1 for a in src["alarm_states"])
        try:
            if src["kind"] == "symmetric":
                return make_symmetric_source(int(src["M"]), float(src["p"]), alarms)
            return SourceModel(np.array(_plain(src["Q"]), dtype=float), alarms)
        except (StructuralError, ParameterError) as e:
            raise ConfigError(f"source: {e}") from None

    def profile(self) -> SignificanceProfile:
        sig = self.data["significance"]
        M = self.M
        ages = {k: _age(sig["age"][k], f"significance.age.{k}") for k in ("missed", "false", "normal")}
        alarms = [a - 1 for a in self.data["source"]["alarm_states"]]
        D = _plain(sig["D"])
        try:
            prof = alarm_profile(M, ages["missed"], ages["false"], ages["normal"], D, alarms)
        except (DomainError, ValueError) as e:
            raise ConfigError(f"significance: {e}") from None
        overrides = sig.get("override", [])
        if not overrides:
            return prof
        G = [list(r) for r in prof.G]
        for k, ov in enumerate(overrides):
            G[int(ov["i"]) - 1][int(ov["j"]) - 1] = _age(ov["g"], f"significance.override[{k + 1}].g")
        return SignificanceProfile(prof.D, tuple(tuple(r) for r in G))

    # --- serialization ---------------------------------------------------------

    def to_toml(self) -> str:
        return tomli_w.dumps(self.data)

    def digest(self) -> str:
        return hashlib.sha256(self.to_toml().encode()).hexdigest()[:16]

    def with_overrides(self, **sections) -> "ExperimentConfig":
        data = copy.deepcopy(self.data)
        for sec, vals in sections.items():
            data.setdefault(sec, {}).update(vals)
        return ExperimentConfig(_normalize(data))


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = tomli.loads(text, parse_float=Decimal)
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"TOML syntax error: {e}") from None
    return ExperimentConfig(_normalize(raw))


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read {p}: {e}") from None
    try:
        return parse_config(text)
    except ConfigError as e:
        raise ConfigError(f"{p}: {e}") from None


__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "load_config"]
