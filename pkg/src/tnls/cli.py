"""tnls <subcommand> --config path.toml [--out dir] [--seed n]

Config sections: [scenario] (dim, seed, out and scenario parameters),
[grid], [evolution] (EvolutionConfig fields), [profiles].
"""
import argparse
import json
import os
import sys

try:
    import tomllib
except ModuleNotFoundError:         # python < 3.11
    import tomli as tomllib

from .experiments import Scenario, emit_report, run_scenario

SUBCOMMANDS = ("ground", "spectrum", "profiles", "evolve", "classify", "special", "rates")


def load_config(path):
    if path is None:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def build_parser():
    ap = argparse.ArgumentParser(prog="tnls", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--dim", type=int, choices=(3, 4, 5))
        if name == "profiles":
            p.add_argument("--a", type=float)
            p.add_argument("--k", type=int)
            p.add_argument("--t-list", type=_floats)
        if name == "evolve":
            p.add_argument("--init", help="W | scaledW:c | profile:a,k,t0 | file:path")
            p.add_argument("--t-end", type=float)
            p.add_argument("--dt", type=float)
            p.add_argument("--sponge", type=_floats, help="start_radius,strength")
        if name == "classify":
            p.add_argument("--kind", choices=("sub", "crit", "super"), action="append")
        if name == "special":
            p.add_argument("--sign", choices=("minus", "plus"), action="append")
    return ap


def scenarios_from(args, cfg):
    sc = dict(cfg.get("scenario", {}))
    grid = dict(cfg.get("grid", {}))
    evo = dict(cfg.get("evolution", {}))
    prof = dict(cfg.get("profiles", {}))
    dim = args.dim or sc.pop("dim", 3)
    seed = args.seed if args.seed is not None else sc.pop("seed", 0)
    sc.pop("dim", None)
    sc.pop("seed", None)
    sc.pop("out", None)
    if "sponge" in evo and not evo["sponge"]:
        evo["sponge"] = None
    cmd = args.cmd
    if cmd == "profiles":
        if args.a is not None:
            prof["a_values"] = [args.a]
        if args.k is not None:
            prof["k_max"] = args.k
        if args.t_list:
            prof["t_list"] = args.t_list
    if cmd == "evolve":
        if args.init:
            sc["init"] = args.init
        if args.t_end is not None:
            evo["t_end"] = args.t_end
        if args.dt is not None:
            evo["dt"] = args.dt
        if args.sponge:
            evo["sponge"] = tuple(args.sponge)
    if cmd == "classify":
        kinds = args.kind or sc.pop("kinds", ["sub", "crit", "super"])
        names = ["classify-" + k for k in kinds]
    elif cmd == "special":
        signs = args.sign or sc.pop("signs", ["minus", "plus"])
        names = ["special-" + k for k in signs]
    else:
        names = [cmd]
    out = []
    for n in names:
        d = dim
        if n == "classify-super" and "dim" not in cfg.get("scenario", {}) and not args.dim:
            d = 5
        out.append(Scenario(n, d, grid, evo, prof, dict(sc), seed=seed))
    return out


def _print_stage_lines(rep):
    for st in rep.stages:
        if st["error"]:
            print("FAIL %s: error %s" % (st["stage"], st["error"]))
        for c in st["checks"]:
            tag = ("PASS" if c["pass"] else "FAIL") if c["weight"] else "INFO"
            print("%s %s/%s = %s (tol %s)" % (tag, st["stage"], c["name"], c["value"], c["tolerance"]))


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        print("tnls: cannot read config: %s" % exc, file=sys.stderr)
        return 2
    base = args.out or cfg.get("scenario", {}).get("out") or os.path.join("tnls-out", args.cmd)
    try:
        scens = scenarios_from(args, cfg)
    except (ValueError, TypeError) as exc:
        print("tnls: bad config: %s" % exc, file=sys.stderr)
        return 2
    ok = True
    for s in scens:
        rep = run_scenario(s)
        out = base if len(scens) == 1 else os.path.join(base, s.name)
        try:
            emit_report(rep, out)
        except OSError as exc:
            print("tnls: cannot write %s: %s" % (exc.filename or out, exc), file=sys.stderr)
            return 2
        if s.name == "ground":
            for st in rep.stages:
                v = st["values"]
                print(json.dumps({k: v[k] for k in ("dim", "h1_W", "energy_W", "sobolev_CN", "checks")}))
        elif s.name == "spectrum" and rep.stages:
            v = rep.stages[0]["values"]
            print(json.dumps({k: v.get(k) for k in ("dim", "e0", "residual", "QW_over_h1W",
                                                     "coercivity_min", "B_Yp_Ym")}))
        _print_stage_lines(rep)
        ok &= rep.passed
        print("%s %s -> %s" % ("PASS" if rep.passed else "FAIL", s.name, out))
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
