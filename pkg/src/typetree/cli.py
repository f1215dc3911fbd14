"""Command-line interface.

Subcommands: ``simulate {erm|yule|bd}``, ``prune``, ``census``,
``analytics {erm|yule}``, ``extinction``, ``infer {erm|yule|p}``,
``compare``, ``replicate``.  Data goes to stdout (or ``--out``), logs to
stderr.  Exit codes: 0 success, 1 usage, 2 model/condition error,
3 numerical error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import erm_analytics, inference
from .branching import (extinction_probabilities, full_tree_from_newick,
                        full_tree_to_newick, prune_to_ancestral, simulate_bd)
from .config import (bd_from_config, config_initial_type, erm_from_config,
                     load_config, yule_from_config)
from .erm import simulate_erm
from .exceptions import ModelError, NumericalError, ParameterError
from .harness import STATISTICS, run_replicates
from .tree import Census, census, parse, serialize
from .yule import limit_fractions, moments_ode, simulate_yule


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="TOML model configuration file")
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--format", choices=["csv", "json", "newick"])
    p.add_argument("--initial-type", type=int, dest="initial_type")


def _build_parser():
    top = _Parser(prog="typetree",
                  description="Multi-type random trees: simulation, "
                              "analytics, and rate inference")
    sub = top.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", parser_class=_Parser)
    sim_sub = sim.add_subparsers(dest="model", required=True)
    for name in ("erm", "yule", "bd"):
        p = sim_sub.add_parser(name, parser_class=_Parser)
        _common(p)
        if name == "erm":
            p.add_argument("--n", type=int, required=True, help="leaf count")
        elif name == "yule":
            p.add_argument("--t", type=float, help="stop time")
            p.add_argument("--n", type=int, help="stop leaf count")
        else:
            p.add_argument("--t", type=float, required=True, help="horizon T")

    p = sub.add_parser("prune", parser_class=_Parser)
    _common(p)
    p.add_argument("--in", dest="infile", required=True,
                   help="full birth-death tree (Newick with extinct marks)")

    p = sub.add_parser("census", parser_class=_Parser)
    _common(p)
    p.add_argument("--in", dest="infile", required=True, help="Newick tree file")

    ana = sub.add_parser("analytics", parser_class=_Parser)
    ana_sub = ana.add_subparsers(dest="model", required=True)
    p = ana_sub.add_parser("erm", parser_class=_Parser)
    _common(p)
    p.add_argument("--n", type=int, help="tree size for exact moments")
    p.add_argument("--limits", action="store_true", help="strong-law limit vector")
    p.add_argument("--clt", choices=["critical", "subcritical", "auto"],
                   help="CLT covariance matrix")
    p.add_argument("--method", choices=["auto", "closed_form", "recurrence"],
                   default="auto")
    p = ana_sub.add_parser("yule", parser_class=_Parser)
    _common(p)
    p.add_argument("--t", type=float, help="time for moment ODE values")
    p.add_argument("--limits", action="store_true", help="limiting fractions")

    p = sub.add_parser("extinction", parser_class=_Parser)
    _common(p)
    p.add_argument("--t", type=float, required=True, help="horizon T")
    p.add_argument("--grid", type=int, default=201)

    inf = sub.add_parser("infer", parser_class=_Parser)
    inf_sub = inf.add_subparsers(dest="target", required=True)
    p = inf_sub.add_parser("erm", parser_class=_Parser)
    _common(p)
    p.add_argument("--in", dest="infile", required=True,
                   help="census CSV or fraction JSON")
    p = inf_sub.add_parser("yule", parser_class=_Parser)
    _common(p)
    p.add_argument("--in", dest="infile", required=True, help="fraction JSON")
    p.add_argument("--r", type=float, nargs="+", required=True,
                   help="limiting total birth rate(s)")
    p.add_argument("--lambda", type=float, dest="lam",
                   help="growth rate (defaults to r when type independent)")
    p = inf_sub.add_parser("p", parser_class=_Parser)
    _common(p)
    p.add_argument("--model", choices=["clado", "ana"], required=True)
    p.add_argument("--in", dest="infile", required=True, help="fraction JSON")

    p = sub.add_parser("compare", parser_class=_Parser)
    _common(p)
    p.add_argument("--config-a", required=True)
    p.add_argument("--config-b", required=True)

    p = sub.add_parser("replicate", parser_class=_Parser)
    _common(p)
    p.add_argument("--model", choices=["erm", "yule", "bd"], required=True)
    p.add_argument("--stat", default="cherries",
                   help=f"one of {sorted(STATISTICS)}")
    p.add_argument("--n", type=int, help="leaf target (erm/yule)")
    p.add_argument("--t", type=float, help="stop time (yule/bd)")
    p.add_argument("--reps", type=int, required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--prune", action="store_true",
                   help="census the pruned ancestral tree (bd)")
    return top


def _emit(text: str, out):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _jsonify(x):
    if isinstance(x, np.ndarray):
        return [_jsonify(v) for v in x.tolist()]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, dict):
        return {k: _jsonify(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonify(v) for v in x]
    return x


def _need_config(args):
    if not args.config:
        raise ParameterError("this command needs --config")
    return load_config(args.config)


def _init_type(args, cfg):
    if args.initial_type is not None:
        return args.initial_type
    return config_initial_type(cfg)


def _matrix_csv(M) -> str:
    return "\n".join(",".join(repr(float(v)) for v in row) for row in M) + "\n"


def _cmd_simulate(args):
    cfg = _need_config(args)
    init = _init_type(args, cfg)
    if args.model == "erm":
        tree = simulate_erm(erm_from_config(cfg), args.n, init, seed=args.seed)
    elif args.model == "yule":
        if (args.t is None) == (args.n is None):
            raise ParameterError("yule simulation needs exactly one of --t / --n")
        stop = ("time", args.t) if args.t is not None else ("leaves", args.n)
        tree = simulate_yule(yule_from_config(cfg), stop, init, seed=args.seed)
    else:
        full = simulate_bd(bd_from_config(cfg), args.t, init, seed=args.seed)
        _emit(full_tree_to_newick(full) + "\n", args.out)
        return 0
    if args.format == "csv":
        _emit(census(tree).to_csv(), args.out)
    else:
        _emit(serialize(tree) + "\n", args.out)
    return 0


def _cmd_prune(args):
    with open(args.infile) as fh:
        full = full_tree_from_newick(fh.read())
    pruned = prune_to_ancestral(full)
    if pruned is None:
        print("no surviving lineages; empty ancestral tree", file=sys.stderr)
        _emit("", args.out)
        return 0
    _emit(serialize(pruned) + "\n", args.out)
    return 0


def _cmd_census(args):
    with open(args.infile) as fh:
        tree = parse(fh.read())
    c = census(tree)
    if args.format == "json":
        _emit(_json({"k": c.k,
                     "leaf_counts": _jsonify(c.leaf_counts),
                     "cherries": {f"C_{e}_{a}{b}": int(v) for (e, a, b), v
                                  in zip(c.order.cherries, c.cherry_counts)},
                     "pendants": {f"L_{e}_{m}": int(v) for (e, m), v
                                  in zip(c.order.pendants, c.pendant_counts)}}),
              args.out)
    else:
        _emit(c.to_csv(), args.out)
    return 0


def _cmd_analytics_erm(args):
    cfg = _need_config(args)
    params = erm_from_config(cfg)
    init = _init_type(args, cfg)
    if args.limits:
        lf = erm_analytics.limit_fractions_erm(params, init)
        payload = {"order": "paper_k2",
                   "v1": _jsonify(lf.v1),
                   "cherries": {f"C_{e}_{a}{b}": float(v) for (e, a, b), v
                                in zip(lf.order.cherries, lf.cherries)},
                   "pendants": {f"L_{e}_{m}": float(v) for (e, m), v
                                in zip(lf.order.pendants, lf.pendants)},
                   "support": _jsonify(lf.support),
                   "irreducible_full": lf.irreducible_full}
        _emit(_json(payload), args.out)
        return 0
    if args.clt:
        mode = args.clt
        if mode == "auto":
            mode = "critical" if abs(params.c1 - params.c2 - 1.5) <= 1e-9 else "subcritical"
        if mode == "critical":
            sigma = erm_analytics.clt_covariance_critical(params)
        else:
            sigma = erm_analytics.clt_covariance_subcritical(params, init)
        if args.format == "json":
            _emit(_json({"mode": mode, "order": "paper_k2",
                         "sigma": _jsonify(sigma)}), args.out)
        else:
            _emit(_matrix_csv(sigma), args.out)
        return 0
    if args.n is None:
        raise ParameterError("analytics erm needs one of --n / --limits / --clt")
    rep = erm_analytics.moment_report(params, args.n, init, method=args.method)
    if args.format == "csv":
        d = rep.to_dict()
        head = ["n", "method"] + [f"mu_{k}" for k in d["mu"]] + \
               [f"sigma2_{k}" for k in d["sigma2"]] + ["nu_1", "nu_2"]
        row = [str(rep.n), rep.method] + [repr(v) for v in d["mu"].values()] + \
              [repr(v) for v in d["sigma2"].values()] + [repr(float(rep.nu[0])), repr(float(rep.nu[1]))]
        _emit(",".join(head) + "\n" + ",".join(row) + "\n", args.out)
    else:
        _emit(_json(rep.to_dict()), args.out)
    return 0


def _cmd_analytics_yule(args):
    cfg = _need_config(args)
    yp = yule_from_config(cfg)
    init = _init_type(args, cfg)
    if args.limits:
        lf = limit_fractions(yp)
        _emit(_json({"order": "generic_lex", "lam": lf.lam,
                     "u": _jsonify(lf.u), "w": _jsonify(lf.w),
                     "w_star": _jsonify(lf.w_star)}), args.out)
        return 0
    if args.t is None:
        raise ParameterError("analytics yule needs --t or --limits")
    mom = moments_ode(yp, args.t, init)
    _emit(_json({"order": "generic_lex", "t": mom.t, "rho": mom.rho,
                 "nu": _jsonify(mom.nu), "mu": _jsonify(mom.mu),
                 "gamma": _jsonify(mom.gamma)}), args.out)
    return 0


def _cmd_extinction(args):
    cfg = _need_config(args)
    bd = bd_from_config(cfg)
    table = extinction_probabilities(bd, args.t, n_grid=args.grid)
    _emit(table.to_csv(), args.out)
    return 0


def _read_fraction_json(path):
    with open(path) as fh:
        return json.load(fh)


def _cmd_infer(args):
    if args.target == "erm":
        if args.infile.endswith(".json"):
            obj = _read_fraction_json(args.infile)
            vec = obj.get("v1") or obj.get("x") or obj.get("cherries")
            if isinstance(vec, dict):
                vec = list(vec.values())
            est = inference.infer_erm(np.asarray(vec, dtype=float))
        else:
            with open(args.infile) as fh:
                est = inference.infer_erm(Census.from_csv(fh.read()))
        q = est.params
        payload = {"q": {str(i): {f"{a}{b}": q.prob(i, a, b)
                                  for (a, b) in q.pairs} for i in (1, 2)},
                   "block_totals": list(est.block_totals)}
        _emit(_json(payload), args.out)
        return 0
    obj = _read_fraction_json(args.infile)
    w = np.asarray(obj["w"], dtype=float)
    w_star = np.asarray(obj["w_star"], dtype=float)
    if args.target == "yule":
        est = inference.infer_yule(w, w_star, np.asarray(args.r, dtype=float),
                                   lam=args.lam)
        payload = {"birth": _jsonify(est.birth),
                   "mutation": _jsonify(est.mutation),
                   "u": _jsonify(est.u), "lam": est.lam,
                   "stage1_residual": est.stage1_residual,
                   "warnings": est.warnings}
        _emit(_json(payload), args.out)
        return 0
    if args.model == "clado":
        est = inference.estimate_p_cladogenetic(w[0])
    else:
        ws = w_star.reshape(2, 2)
        est = inference.estimate_p_anagenetic(
            w, np.array([ws[0, 0], ws[0, 1], ws[1, 0], ws[1, 1]]))
    _emit(_json({"p": est.p, "estimates": list(est.estimates),
                 "spread": est.spread}), args.out)
    return 0


def _cmd_compare(args):
    cfg_a, cfg_b = load_config(args.config_a), load_config(args.config_b)
    rep = inference.compare_models(yule_from_config(cfg_a), yule_from_config(cfg_b))
    _emit(_json({"a1": list(rep.a1), "direction": rep.direction,
                 "orderings_hold": rep.orderings_hold,
                 "w_a": _jsonify(rep.w_a), "w_b": _jsonify(rep.w_b)}), args.out)
    return 0


def _cmd_replicate(args):
    if args.config:
        cfg = load_config(args.config)
        params = {"erm": erm_from_config, "yule": yule_from_config,
                  "bd": bd_from_config}[args.model](cfg)
        init = _init_type(args, cfg)
    else:
        # default: single-type baseline model
        if args.model == "erm":
            from .erm import ErmParams
            params = ErmParams(1, {1: {(1, 1): 1.0}})
        elif args.model == "yule":
            from .yule import YuleParams
            params = YuleParams(1, {(1, 1, 1): 1.0})
        else:
            raise ParameterError("replicate bd needs --config")
        init = args.initial_type or 1
    if args.model == "erm":
        if args.n is None:
            raise ParameterError("replicate erm needs --n")
        stop = {"n": args.n}
    elif args.model == "yule":
        if (args.t is None) == (args.n is None):
            raise ParameterError("replicate yule needs exactly one of --t / --n")
        stop = {"n": args.n} if args.n is not None else {"t": args.t}
    else:
        if args.t is None:
            raise ParameterError("replicate bd needs --t")
        stop = {"t": args.t}
    spec = {"model": args.model, "params": params, "stop": stop,
            "initial_type": init, "statistic": args.stat}
    if args.model == "bd" and (args.prune or args.stat != "leaves"):
        spec["prune"] = True
    report = run_replicates(spec, args.reps, base_seed=args.seed, jobs=args.jobs)
    if args.format == "csv":
        _emit(report.to_csv(), args.out)
    else:
        _emit(_json({"reps": report.reps, "mean": _jsonify(report.mean),
                     "variance": _jsonify(report.variance),
                     "std_error": _jsonify(report.std_error),
                     "failures": report.failures}), args.out)
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "prune":
            return _cmd_prune(args)
        if args.command == "census":
            return _cmd_census(args)
        if args.command == "analytics":
            return (_cmd_analytics_erm if args.model == "erm"
                    else _cmd_analytics_yule)(args)
        if args.command == "extinction":
            return _cmd_extinction(args)
        if args.command == "infer":
            return _cmd_infer(args)
        if args.command == "compare":
            return _cmd_compare(args)
        if args.command == "replicate":
            return _cmd_replicate(args)
        raise ParameterError(f"unknown command {args.command!r}")
    except ModelError as exc:
        print(f"typetree: model error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"typetree: numerical error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"typetree: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
