"""Command-line front end.

Every subcommand prints one JSON document (sorted keys, no timings) to
stdout and, with ``--json-out``, writes the same bytes to a file. Exit codes:
0 on success, 2 when ``verify`` finds a deviation above the target, 1 on error.
"""

import argparse
import json
import os
import sys
import warnings

import numpy as np

from . import metric
from .coreset import CoresetParams, WeightedCoreset, build_kz_coreset
from .evaluation import FairnessBounds, clustering_cost, constrained_cost, fair_cost, verify_coreset
from .experiment import GENERATORS, METHODS, ExperimentSpec, atomic_write, dumps, run_experiment
from .fair import FairParams, build_fair_coreset
from .oracle import ADVERSARIES, OracleEnv
from .weak import weak_kz_clustering

SEED_ENV = "WSCORESET_SEED"


class CliError(Exception):
    pass


def _ints(text):
    return [int(t) for t in text.split(",") if t.strip()]


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _names(text):
    return [t.strip() for t in (text or "").split(",") if t.strip()]


def _common(p):
    p.add_argument("--seed", type=int, default=None, help=f"master seed (default: ${SEED_ENV} or 0)")
    p.add_argument("--preset", choices=("desk", "paper"), default="desk")
    p.add_argument("--corruption-prob", type=float, default=1 / 3)
    p.add_argument("--adversary", choices=ADVERSARIES, default="small-value")
    p.add_argument("--json-out", default=None, help="also write the JSON result to this file")


def _data_args(p, groups=True):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="CSV file with a header row")
    src.add_argument("--matrix", help="file holding n followed by an n x n distance matrix")
    if groups:
        p.add_argument("--attribute-cols", default="", help="comma-separated group columns of the CSV")


def _build_args(p):
    p.add_argument("-k", type=int, required=True)
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--c0", type=float, default=None, help="ring growth constant (F = 2*C0)")
    p.add_argument("--z", type=float, default=1.0)
    p.add_argument("--query-mode", choices=("point", "pair"), default="point")
    p.add_argument("--weak-rounds", type=int, default=None)
    p.add_argument("--facility-cap", type=float, default=1.0,
                   help="facilities opened per weak-clustering pass, in units of k*log2(n)")
    p.add_argument("--rescale-epsilon", action="store_true")
    p.add_argument("--prose-update", action="store_true",
                   help="spread each ring's estimated mass over its whole sample")
    p.add_argument("--trace-out", default=None, help="write the per-iteration trace as JSON lines")


def _fair_args(p):
    p.add_argument("--cm-constant", type=float, default=None, help="constant in the per-batch draw count")
    p.add_argument("--target-size", type=int, default=None,
                   help="total draws split over batches by estimated cost")


def build_parser():
    parser = argparse.ArgumentParser(prog="wscoreset", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic dataset as CSV")
    _common(g)
    g.add_argument("generator", choices=sorted(GENERATORS))
    g.add_argument("--sizes", default="30,30", help="cluster or ring sizes")
    g.add_argument("--dim", type=int, default=2)
    g.add_argument("--separation", type=float, default=None)
    g.add_argument("--groups", type=int, default=0, help="attach a random 'group' attribute with this many labels")
    g.add_argument("--out", required=True)

    c = sub.add_parser("coreset", help="build a k-median or (k,z) coreset")
    _common(c)
    _data_args(c)
    _build_args(c)
    c.add_argument("--fair", action="store_true", help="build a fair coreset instead")
    _fair_args(c)

    f = sub.add_parser("fair-coreset", help="build a fair coreset (union over group combinations)")
    _common(f)
    _data_args(f)
    _build_args(f)
    _fair_args(f)

    e = sub.add_parser("eval", help="cost of a center set on the data or on a coreset")
    _common(e)
    _data_args(e)
    e.add_argument("--centers", required=True, help="comma-separated point indices")
    e.add_argument("--z", type=float, default=1.0)
    e.add_argument("--coreset", default=None, help="coreset JSON (output of coreset / fair-coreset)")
    e.add_argument("--gamma", default=None, help="capacities per center for the constrained cost")
    e.add_argument("--alpha", type=float, default=None, help="uniform lower group share for the fair cost")
    e.add_argument("--beta", type=float, default=None, help="uniform upper group share for the fair cost")

    v = sub.add_parser("verify", help="worst relative deviation of a coreset over center sets")
    _common(v)
    _data_args(v)
    v.add_argument("--coreset", required=True)
    v.add_argument("-k", type=int, required=True)
    v.add_argument("--z", type=float, default=1.0)
    v.add_argument("--eps-target", type=float, default=0.25)
    v.add_argument("--mode", default="exhaustive", help="'exhaustive' or 'sampled:N'")
    v.add_argument("--constraint", default="none", help="'none' or 'gamma-grid:G'")

    x = sub.add_parser("experiment", help="relative-cost experiment with a report directory")
    _common(x)
    x.add_argument("--source", default="imbalanced", help="generator name or CSV path")
    x.add_argument("--attribute-cols", default="")
    x.add_argument("--subsample", type=int, default=None)
    x.add_argument("--ks", default="2,4,6")
    x.add_argument("--epsilon", type=float, default=0.5)
    x.add_argument("--z", type=float, default=1.0)
    x.add_argument("--methods", default="ours-fair,uniform-baseline")
    x.add_argument("--repetitions", type=int, default=10)
    x.add_argument("--coreset-size", type=int, default=100)
    x.add_argument("--alpha", type=float, default=0.1)
    x.add_argument("--beta", type=float, default=1.0)
    x.add_argument("--out-dir", default=None, help="write report.json, curves.csv and relative_cost.png here")

    led = sub.add_parser("ledger", help="run a build and report only its oracle query counts")
    _common(led)
    _data_args(led)
    _build_args(led)
    led.add_argument("--fair", action="store_true")
    _fair_args(led)
    return parser


# ---------------------------------------------------------------------------


def _seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise CliError(f"${SEED_ENV} must be an integer, got {env!r}") from None


def _load(args):
    if getattr(args, "matrix", None):
        return metric.load_matrix(args.matrix)
    return metric.load_dataset(args.data, group_cols=_names(getattr(args, "attribute_cols", "")))


def _load_coreset(path):
    with open(path) as fh:
        doc = json.load(fh)
    recs = doc["coreset"] if isinstance(doc, dict) else doc
    return WeightedCoreset.from_records(recs)


def _env(args, ds, seed):
    return OracleEnv(ds, corruption_prob=args.corruption_prob, adversary=args.adversary, seed=seed)


def _weak_kwargs(args):
    kw = {"facility_cap": args.facility_cap}
    if args.weak_rounds is not None:
        kw["rounds"] = args.weak_rounds
    return kw


def _build(args, ds, seed, fair):
    env = _env(args, ds, seed)
    if fair:
        kw = {}
        if args.c0 is not None:
            kw["C0"] = args.c0
        if args.cm_constant is not None:
            kw["c_m"] = args.cm_constant
        fp = FairParams.from_preset(args.preset, ds.n, args.k, args.epsilon, query_mode=args.query_mode, **kw)
        cs, ledger, trace = build_fair_coreset(env, args.k, fp, attributes=_names(args.attribute_cols) or None,
                                               z=args.z, seed=seed, target_size=args.target_size,
                                               weak_kwargs=_weak_kwargs(args))
        params = fp
        weak = None
    else:
        kw = {}
        if args.c0 is not None:
            kw["C0"] = args.c0
        params = CoresetParams.from_preset(args.preset, ds.n, args.k, args.epsilon, z=args.z,
                                           rescale_epsilon=args.rescale_epsilon, query_mode=args.query_mode,
                                           prose_update=args.prose_update, **kw)
        wc = weak_kz_clustering(env, args.k, z=args.z, seed=seed, **_weak_kwargs(args))
        cs, ledger, trace = build_kz_coreset(env, wc, params, seed=seed)
        weak = {"centers": wc.centers.tolist(), "est_cost": wc.est_cost}
    if args.trace_out:
        atomic_write(args.trace_out, trace.to_jsonl())
    out = {"coreset": cs.to_records(), "size": cs.size, "total_weight": cs.total_weight,
           "ledger": ledger.to_dict(), "params": _params_dict(params), "seed": seed,
           "soft_failures": len(trace.soft_failures())}
    if weak is not None:
        out["weak_clustering"] = weak
    return out


def _params_dict(p):
    return {k: getattr(p, k) for k in sorted(p.__dataclass_fields__)}


def cmd_gen(args):
    seed = _seed(args)
    sizes = _ints(args.sizes)
    kw = {"seed": seed}
    if args.generator == "gaussian-blobs":
        kw.update(sizes=sizes, dim=args.dim)
        if args.separation is not None:
            kw["separation"] = args.separation
        if args.groups:
            kw["group_spec"] = {"group": args.groups}
    elif args.generator == "planted-rings":
        kw.update(ring_sizes=sizes, dim=args.dim)
        if args.separation is not None:
            kw["separation"] = args.separation
    elif args.generator == "duplicate-heavy":
        kw.update(n=sum(sizes), dim=args.dim)
    else:
        kw.update(sizes=tuple(sizes), dim=args.dim)
        if args.separation is not None:
            kw["separation"] = args.separation
    out = GENERATORS[args.generator](**kw)
    ds = out[0] if isinstance(out, tuple) else out
    if args.groups and args.generator != "gaussian-blobs":
        rng = np.random.default_rng(seed)
        ds = metric.Dataset(points=ds.points, groups={"group": rng.integers(0, args.groups, ds.n)})
    metric.save_csv(ds, args.out)
    return {"generator": args.generator, "n": ds.n, "dim": int(ds.points.shape[1]), "seed": seed,
            "attributes": sorted(ds.groups), "path": os.path.basename(args.out)}, 0


def cmd_coreset(args):
    ds = _load(args)
    return _build(args, ds, _seed(args), args.fair), 0


def cmd_fair(args):
    ds = _load(args)
    return _build(args, ds, _seed(args), True), 0


def cmd_ledger(args):
    ds = _load(args)
    res = _build(args, ds, _seed(args), args.fair)
    return {"ledger": res["ledger"], "n": ds.n, "seed": res["seed"], "coreset_size": res["size"]}, 0


def cmd_eval(args):
    ds = _load(args)
    centers = np.array(_ints(args.centers), dtype=np.int64)
    idx = w = groups = None
    if args.coreset:
        cs = _load_coreset(args.coreset)
        idx, w, groups = cs.indices, cs.weights, cs.groups
    if args.gamma is not None:
        rep = constrained_cost(ds, centers, _floats(args.gamma), args.z, indices=idx, weights=w)
        return {"objective": "constrained", **rep.to_dict()}, 0
    if args.alpha is not None or args.beta is not None:
        if not ds.groups:
            raise CliError("fair cost needs --attribute-cols")
        bounds = FairnessBounds.uniform(ds, args.alpha or 0.0, 1.0 if args.beta is None else args.beta)
        rep = fair_cost(ds, centers, bounds, args.z, indices=idx, weights=w, groups=groups)
        return {"objective": "fair", **rep.to_dict()}, 0
    return {"objective": "plain", "cost": clustering_cost(ds, centers, args.z, indices=idx, weights=w)}, 0


def _mode(text):
    if text == "exhaustive" or text == "none":
        return text
    kind, _, num = text.partition(":")
    if kind == "sampled" and num:
        return ("sampled", int(num))
    if kind == "gamma-grid" and num:
        return ("gamma-grid", float(num))
    raise CliError(f"cannot parse mode {text!r}")


def cmd_verify(args):
    ds = _load(args)
    cs = _load_coreset(args.coreset)
    rep = verify_coreset(ds, cs, args.k, args.z, args.eps_target, mode=_mode(args.mode),
                         constraint_mode=_mode(args.constraint), seed=_seed(args))
    return rep, 0 if rep["pass"] else 2


def cmd_experiment(args):
    methods = tuple(_names(args.methods))
    for m in methods:
        if m not in METHODS:
            raise CliError(f"unknown method {m!r}; choose from {METHODS}")
    spec = ExperimentSpec(source=args.source, group_cols=tuple(_names(args.attribute_cols)),
                          subsample_target=args.subsample, ks=tuple(_ints(args.ks)), epsilon=args.epsilon,
                          z=args.z, corruption_prob=args.corruption_prob, adversary=args.adversary,
                          methods=methods, repetitions=args.repetitions, coreset_size=args.coreset_size,
                          alpha=args.alpha, beta=args.beta, preset=args.preset, seed=_seed(args),
                          output_dir=args.out_dir)
    rep = run_experiment(spec)
    return {"spec": rep["spec"], "n": rep["n"], "summary": rep["summary"]}, 0


COMMANDS = {"gen": cmd_gen, "coreset": cmd_coreset, "fair-coreset": cmd_fair, "eval": cmd_eval,
            "verify": cmd_verify, "experiment": cmd_experiment, "ledger": cmd_ledger}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            result, code = COMMANDS[args.command](args)
    except (CliError, ValueError, OSError, KeyError) as exc:
        print(f"wscoreset {args.command}: error: {exc}", file=sys.stderr)
        return 1
    text = dumps(result)
    if args.json_out:
        atomic_write(args.json_out, text)
    sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
