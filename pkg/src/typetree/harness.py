"""Monte Carlo replicate runner with reproducible per-replicate streams.

Replicate i draws its random stream from SeedSequence(base_seed,
spawn_key=(i,)), so results are identical for any parallelism degree;
aggregation walks replicates in index order with exact compensated
summation (math.fsum).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .branching import BdParams, prune_to_ancestral, simulate_bd
from .erm import ErmParams, simulate_erm
from .exceptions import ModelError, ParameterError
from .tree import census
from .yule import YuleParams, simulate_yule

__all__ = ["ReplicateReport", "run_replicates", "STATISTICS"]


def _stat_cherries(tree):
    return float(census(tree).cherry_counts.sum())


def _stat_pendants(tree):
    return float(census(tree).pendant_counts.sum())


def _stat_leaves(tree):
    return float(tree.n_leaves)


def _stat_leaf_types(tree):
    return census(tree).leaf_counts.astype(float)


def _stat_census(tree):
    c = census(tree)
    return np.concatenate([c.leaf_counts, c.cherry_counts,
                           c.pendant_counts]).astype(float)


def _stat_census_paper(tree):
    return census(tree).reordered("paper_k2").x_vector()


STATISTICS = {
    "cherries": _stat_cherries,
    "pendants": _stat_pendants,
    "leaves": _stat_leaves,
    "leaf_types": _stat_leaf_types,
    "census": _stat_census,
    "census_paper": _stat_census_paper,
}


@dataclass
class ReplicateReport:
    """Aggregated replicate statistics.

    ``mean``/``variance``/``std_error`` are floats for scalar statistics
    and arrays for vector statistics; ``std_error`` is None when only one
    successful replicate exists.  ``values`` keeps the per-replicate
    stream (index order), with None for failed replicates.
    """

    reps: int
    mean: object
    variance: object
    std_error: object
    values: list
    failures: int
    failure_messages: list

    def to_csv(self) -> str:
        rows = ["replicate,value"]
        for i, v in enumerate(self.values):
            if v is None:
                rows.append(f"{i},failed")
            elif np.ndim(v) == 0:
                rows.append(f"{i},{float(v)!r}")
            else:
                rows.append(f"{i}," + ";".join(repr(float(x)) for x in np.ravel(v)))
        return "\n".join(rows) + "\n"


def _simulate(spec, seed):
    model = spec["model"]
    params = spec["params"]
    initial_type = spec.get("initial_type", 1)
    stop = spec["stop"]
    if model == "erm":
        if not isinstance(params, ErmParams):
            raise ParameterError("erm model needs ErmParams")
        return simulate_erm(params, stop["n"], initial_type, seed=seed)
    if model == "yule":
        if not isinstance(params, YuleParams):
            raise ParameterError("yule model needs YuleParams")
        target = ("leaves", stop["n"]) if "n" in stop else ("time", stop["t"])
        return simulate_yule(params, target, initial_type, seed=seed)
    if model == "bd":
        if not isinstance(params, BdParams):
            raise ParameterError("bd model needs BdParams")
        full = simulate_bd(params, stop["t"], initial_type, seed=seed)
        if spec.get("prune"):
            return prune_to_ancestral(full)
        return full
    raise ParameterError(f"unknown model {model!r}")


def _resolve_stat(spec):
    stat = spec.get("statistic", "cherries")
    if callable(stat):
        return stat
    try:
        return STATISTICS[stat]
    except KeyError:
        raise ParameterError(f"unknown statistic {stat!r}; "
                             f"choose from {sorted(STATISTICS)}") from None


def _run_one(spec, base_seed, i):
    seed = np.random.SeedSequence(entropy=base_seed, spawn_key=(i,))
    try:
        obj = _simulate(spec, seed)
        if obj is None:   # pruned-away tree
            return i, None, "no survivors"
        return i, _resolve_stat(spec)(obj), None
    except ModelError as exc:
        return i, None, str(exc)


def run_replicates(spec: dict, reps: int, base_seed: int = 0,
                   jobs: int = 1) -> ReplicateReport:
    """Run ``reps`` independent replicates of a model statistic.

    ``spec`` keys: model ('erm' | 'yule' | 'bd'), params, stop
    ({'n': leaves} or {'t': time}), initial_type, statistic (name from
    STATISTICS or a callable tree -> float/vector), prune (bd only).

    Per-replicate model errors are recorded, not raised; the aggregate is
    reported over the successful replicates.  Results are bit-identical
    for any ``jobs`` value.
    """
    if reps < 1:
        raise ParameterError("reps must be >= 1")
    _resolve_stat(spec)  # fail fast on unknown statistics
    results = [None] * reps
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for i, val, err in pool.map(_run_one, [spec] * reps,
                                        [base_seed] * reps, range(reps),
                                        chunksize=max(1, reps // (jobs * 8))):
                results[i] = (val, err)
    else:
        for i in range(reps):
            _, val, err = _run_one(spec, base_seed, i)
            results[i] = (val, err)

    values = [v for v, _e in results]
    messages = [e for _v, e in results if e is not None]
    ok = [np.asarray(v, dtype=float) for v in values if v is not None]
    n_ok = len(ok)
    if n_ok == 0:
        return ReplicateReport(reps, None, None, None, values,
                               reps, messages)
    dim = ok[0].shape
    stacked = np.stack([np.reshape(v, dim) for v in ok])

    def fsum_axis(arr):
        return np.array([math.fsum(col) for col in arr.reshape(len(arr), -1).T]
                        ).reshape(dim)

    mean = fsum_axis(stacked) / n_ok
    if n_ok > 1:
        dev = stacked - mean
        var = fsum_axis(dev * dev) / (n_ok - 1)
        se = np.sqrt(var / n_ok)
    else:
        var, se = None, None

    def unwrap(x):
        if x is None:
            return None
        return float(x) if x.shape == () else x

    return ReplicateReport(reps, unwrap(mean), unwrap(var), unwrap(se),
                           values, reps - n_ok, messages)
