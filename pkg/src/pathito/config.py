"""Experiment configuration files (TOML).

A config has a ``[grid]`` table, named ``[models.*]`` and ``[functionals.*]``
tables, and one table per command. Parsing normalizes every block (defaults
filled in, function names expanded to tables), so that
``parse(dump(parse(text))) == parse(text)``.
"""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from .calculus import DerivativeConfig
from .functionals import functional_from_dict
from .models import model_from_dict
from .pathspace import TimeGrid

__all__ = ["ExperimentConfig", "ConfigError", "SCHEMA_VERSION", "parse_config", "load_config", "dump_config"]

SCHEMA_VERSION = "1.0"


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


_DERIV_DEFAULTS = {"m_h": 1, "richardson": False, "scheme": "central", "mc_factor": 10.0}

_COMMAND_DEFAULTS = {
    "simulate": {"n_paths": 10, "n_files": 10},
    "check_ito": {
        "ladder": [50, 100, 200, 400],
        "n_paths": 200,
        "min_order": 0.8,
        "qv": "realized",
    },
    "check_kbe": {
        "n_paths": 50,
        "n_time_probes": 10,
        "C1": 3.0,
        "C2": 10.0,
        "threshold": 0.95,
    },
    "compare": {
        "n_out": 10000,
        "M": 2000,
        "n_hyp_paths": 20,
        "n_hyp_times": 5,
        "reversed": False,
        "bump": 0.05,
        "slack_tol": 0.0,
        "kbe_threshold": 0.95,
        "hypotheses": True,
    },
    "probe": {
        "n_paths": 100,
        "properties": ["convex"],
        "bump": 0.05,
        "tol": 1e-9,
        "deriv_tol": 1e-4,
    },
}

_KBE_CASE_DEFAULTS = {"M": 2000, "expect": "pass"}


def _positive(section, key, value):
    if not value > 0:
        raise ConfigError(f"[{section}] {key} must be positive, got {value}")


def _norm_block(block: dict, builder, what: str) -> dict:
    try:
        return builder(block).to_dict()
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid {what}: {exc}") from exc


@dataclass
class ExperimentConfig:
    """Normalized configuration; ``data`` is a plain TOML-serializable dict."""

    data: dict

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def grid(self) -> TimeGrid:
        g = self.data["grid"]
        return TimeGrid(g["T"], g["n_steps"])

    def model(self, name: str):
        return model_from_dict(self.data["models"][self._ref("models", name)])

    def functional(self, name: str):
        return functional_from_dict(self.data["functionals"][self._ref("functionals", name)])

    def derivatives(self) -> DerivativeConfig:
        return DerivativeConfig(**self.data["derivatives"])

    def section(self, name: str) -> dict:
        if name not in self.data:
            raise ConfigError(f"config has no [{name}] table")
        return self.data[name]

    def _ref(self, kind: str, name: str) -> str:
        if name not in self.data.get(kind, {}):
            raise ConfigError(f"unknown {kind[:-1]} {name!r}; defined: {sorted(self.data.get(kind, {}))}")
        return name

    def with_overrides(self, seed=None, out=None) -> ExperimentConfig:
        d = copy.deepcopy(self.data)
        if seed is not None:
            d["seed"] = int(seed)
        if out is not None:
            d["out"] = str(out)
        return ExperimentConfig(d)

    def dumps(self) -> str:
        return dump_config(self)

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.data == other.data


def _normalize(raw: dict) -> dict:
    d = copy.deepcopy(raw)
    out: dict = {}
    version = str(d.pop("schema_version", SCHEMA_VERSION))
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r}")
    out["schema_version"] = version
    out["seed"] = int(d.pop("seed", 0))
    out["out"] = str(d.pop("out", "out"))
    g = d.pop("grid", None)
    if g is None:
        raise ConfigError("config needs a [grid] table with T and n_steps")
    try:
        grid = TimeGrid(g["T"], g["n_steps"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid [grid]: {exc}") from exc
    out["grid"] = {"T": grid.T, "n_steps": grid.n_steps}
    out["models"] = {k: _norm_block(v, model_from_dict, f"model {k!r}") for k, v in d.pop("models", {}).items()}
    out["functionals"] = {
        k: _norm_block(v, functional_from_dict, f"functional {k!r}") for k, v in d.pop("functionals", {}).items()
    }
    deriv = {**_DERIV_DEFAULTS, **d.pop("derivatives", {})}
    try:
        DerivativeConfig(**deriv)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [derivatives]: {exc}") from exc
    out["derivatives"] = deriv
    for cmd, defaults in _COMMAND_DEFAULTS.items():
        if cmd in d:
            sec = {**defaults, **d.pop(cmd)}
            if cmd == "check_kbe":
                sec["cases"] = [{**_KBE_CASE_DEFAULTS, **c} for c in sec.get("cases", [])]
            out[cmd] = sec
    if d:
        raise ConfigError(f"unknown top-level keys: {sorted(d)}")
    _validate(out)
    return out


def _validate(d: dict):
    models, funcs = d["models"], d["functionals"]

    def need(section, key, pool, kind):
        name = d[section].get(key)
        if name is None:
            raise ConfigError(f"[{section}] needs {key}")
        if name not in pool:
            raise ConfigError(f"[{section}] {key} = {name!r} is not a defined {kind}")

    if "simulate" in d:
        need("simulate", "model", models, "model")
        _positive("simulate", "n_paths", d["simulate"]["n_paths"])
    if "check_ito" in d:
        s = d["check_ito"]
        for key, pool in (("functionals", funcs), ("models", models)):
            names = s.get(key)
            if not names:
                raise ConfigError(f"[check_ito] needs a non-empty {key} list")
            for n in names:
                if n not in pool:
                    raise ConfigError(f"[check_ito] refers to undefined {key[:-1]} {n!r}")
        _positive("check_ito", "n_paths", s["n_paths"])
        if s["qv"] not in ("realized", "model"):
            raise ConfigError("[check_ito] qv must be 'realized' or 'model'")
    if "check_kbe" in d:
        s = d["check_kbe"]
        if not s["cases"]:
            raise ConfigError("[check_kbe] needs at least one [[check_kbe.cases]] entry")
        for c in s["cases"]:
            if c.get("functional") not in funcs or c.get("model") not in models:
                raise ConfigError(f"[check_kbe] case refers to undefined names: {c}")
            if "chars_model" in c and c["chars_model"] not in models:
                raise ConfigError(f"[check_kbe] undefined chars_model {c['chars_model']!r}")
            if c["expect"] not in ("pass", "fail"):
                raise ConfigError("[check_kbe] expect must be 'pass' or 'fail'")
            _positive("check_kbe", "M", c["M"])
        for key in ("n_paths", "n_time_probes", "C1", "C2", "threshold"):
            _positive("check_kbe", key, s[key])
    if "compare" in d:
        for key in ("model_X", "model_Y"):
            need("compare", key, models, "model")
        need("compare", "payoff", funcs, "functional")
        if "theorem" not in d["compare"]:
            raise ConfigError("[compare] needs theorem")
        for key in ("n_out", "M", "n_hyp_paths", "n_hyp_times"):
            _positive("compare", key, d["compare"][key])
    if "probe" in d:
        need("probe", "functional", funcs, "functional")
        need("probe", "model", models, "model")
        _positive("probe", "n_paths", d["probe"]["n_paths"])
        _positive("probe", "tol", d["probe"]["tol"])


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    return ExperimentConfig(_normalize(raw))


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def dump_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(cfg.data)
