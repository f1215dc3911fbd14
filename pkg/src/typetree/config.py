"""TOML model configuration files.

One file describes one model.  Rates are dotted keys; schedules are
inline tables with breakpoint/value arrays:

    model = "erm"            # or "yule", "bd"
    k = 2
    initial_type = 1

    q.1.11 = 0.5             # ERM: branch probabilities q_i^{j1j2}
    q.1.12 = 0.3
    q.1.22 = 0.2
    q.2.11 = 0.1
    q.2.12 = 0.4
    q.2.22 = 0.5

Yule models use ``q.<i>.<j1><j2>`` for birth-rate schedules and
``m.<i>.<j>`` for mutation rates, where a schedule is either a number or
``{ breakpoints = [1.0], values = [2.0, 0.5] }``.  Birth-death models use
``b.<i>.<j>`` and ``d.<i>``.
"""

from __future__ import annotations

import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .branching import BdParams
from .erm import ErmParams
from .exceptions import ParameterError
from .yule import RateSchedule, YuleParams

__all__ = ["load_config", "erm_from_config", "yule_from_config",
           "bd_from_config", "params_from_config"]


def load_config(path: str) -> dict:
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ParameterError(f"bad config {path}: {exc}") from None


def _pair_key(key: str):
    if len(key) != 2 or not key.isdigit():
        raise ParameterError(f"bad type pair key {key!r}; expected e.g. '12'")
    return int(key[0]), int(key[1])


def _schedule(val):
    if isinstance(val, dict):
        return RateSchedule(tuple(val.get("breakpoints", ())), tuple(val["values"]))
    return RateSchedule.constant(float(val))


def config_k(cfg: dict) -> int:
    return int(cfg.get("k", 2))


def config_initial_type(cfg: dict) -> int:
    return int(cfg.get("initial_type", 1))


def _check_model(cfg, expected):
    model = cfg.get("model", expected)
    if model != expected:
        raise ParameterError(f"config is for model {model!r}, expected {expected!r}")


def erm_from_config(cfg: dict) -> ErmParams:
    _check_model(cfg, "erm")
    k = config_k(cfg)
    q = {}
    for i_key, row in cfg.get("q", {}).items():
        i = int(i_key)
        q[i] = {_pair_key(pk): float(v) for pk, v in row.items()}
    if not q:
        raise ParameterError("erm config has no q table")
    return ErmParams(k, q)


def yule_from_config(cfg: dict) -> YuleParams:
    _check_model(cfg, "yule")
    k = config_k(cfg)
    birth = {}
    for i_key, row in cfg.get("q", {}).items():
        i = int(i_key)
        for pk, v in row.items():
            j1, j2 = _pair_key(pk)
            birth[(i, j1, j2)] = _schedule(v)
    mutation = {}
    for i_key, row in cfg.get("m", {}).items():
        i = int(i_key)
        for j_key, v in row.items():
            mutation[(i, int(j_key))] = _schedule(v)
    if not birth and not mutation:
        raise ParameterError("yule config has neither q nor m tables")
    return YuleParams(k, birth, mutation)


def bd_from_config(cfg: dict) -> BdParams:
    _check_model(cfg, "bd")
    k = config_k(cfg)
    b = {}
    for i_key, row in cfg.get("b", {}).items():
        b[int(i_key)] = {int(jk): float(v) for jk, v in row.items()}
    d = {int(ik): float(v) for ik, v in cfg.get("d", {}).items()}
    if not b:
        raise ParameterError("bd config has no b table")
    return BdParams(k, b, d)


def params_from_config(cfg: dict, model: str):
    return {"erm": erm_from_config, "yule": yule_from_config,
            "bd": bd_from_config}[model](cfg)
