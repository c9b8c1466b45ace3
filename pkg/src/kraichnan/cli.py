"""Command line front end: ``kraichnan <subcommand> [--config FILE] [--set key=value ...]``.

Every run writes its artifacts (CSV series, JSON summaries) plus a
``manifest.json`` into ``--out``; the manifest holds the resolved config, so
``kraichnan replay manifest.json`` regenerates the same files.
"""
import argparse
import json
import os
import sys
import time

import numpy as np

from . import io
from .diffusion import SdeConfig, simulate_ensemble
from .forcing import ForcingSpec
from .symbol import (SymbolParams, SymbolError, assemble_symbol, degeneration_distance,
                     min_eigenvalue, rank_at)

SUBCOMMANDS = ("symbol", "simulate", "heat", "green", "f2", "f4", "verify", "fit")


def _params(cfg, n=None):
    p = cfg["params"]
    return SymbolParams(int(n if n is not None else p["n"]), int(p["d"]), float(p["xi"]))


def _sde(cfg, params, **kw):
    s = dict(cfg["sde"])
    s.update(kw)
    return SdeConfig(params, dt_base=s["dt_base"], t_max=s["t_max"], adapt_floor=s["adapt_floor"],
                     seed=cfg["seed"], paths=s["paths"], dt_max=s["dt_max"])


def _forcing(cfg):
    return ForcingSpec(cfg["forcing"]["kind"], float(cfg["forcing"]["radius"]))


def _x0(cfg, section):
    x0 = np.asarray(cfg[section]["x0"], dtype=float)
    n = x0.shape[0] + 1
    return x0, _params(cfg, n)


def _fit_payload(x, y, se, window):
    from .verify.report import FitError, fit_exponent
    x, y, se = (np.asarray(v, dtype=float) for v in (x, y, se))
    sel = np.isfinite(y) & (y > 0)
    if window is not None:
        sel &= (x >= window[0] * (1 - 1e-12)) & (x <= window[1] * (1 + 1e-12))
    try:
        return fit_exponent(x[sel], y[sel], se[sel]).to_dict()
    except FitError as e:
        return {"error": str(e)}


# subcommands ------------------------------------------------------------------

def cmd_symbol(cfg, out, args):
    p0 = cfg["params"]
    rows, mats = [], []
    for k, pt in enumerate(cfg["symbol"]["points"]):
        x = np.asarray(pt, dtype=float)
        params = SymbolParams(x.shape[0] + 1, int(p0["d"]), float(p0["xi"]))
        S = assemble_symbol(x, params)
        ev = np.linalg.eigvalsh(S.entries)
        rows.append([k, params.n, rank_at(x, params), degeneration_distance(x), min_eigenvalue(S),
                     float(ev[-1]), " ".join(repr(float(v)) for v in ev)])
        mats.append({"point": x, "n": params.n, "symbol": S.entries})
    arts = [io.write_csv(os.path.join(out, "symbol.csv"),
                         ["point", "n", "rank", "degeneration_distance", "lambda_min", "lambda_max",
                          "eigenvalues"], rows),
            io.write_json(os.path.join(out, "symbol.json"), {"points": mats})]
    for r in rows:
        print(f"point {r[0]}: n={r[1]} rank={r[2]} dist={r[3]:.6g} lambda_min={r[4]:.6g}")
    return arts, 0


def cmd_simulate(cfg, out, args):
    x0, params = _x0(cfg, "simulate")
    sc = _sde(cfg, params)
    sec = cfg["simulate"]
    ens = simulate_ensemble(x0, sc, checkpoints=sec["checkpoints"] or None, split=sec["split"],
                            workers=cfg["workers"], cache=cfg["cache"])
    flat = ens.endpoints.reshape(ens.paths, -1)
    rows = [[i, int(ens.flagged[i]), float(ens.sup_distance[i])] + list(map(float, flat[i]))
            for i in range(ens.paths)]
    header = ["path", "flagged", "sup_distance"] + [f"x{k}" for k in range(flat.shape[1])]
    good = ens.good
    q = np.quantile(flat[good], [0.05, 0.5, 0.95], axis=0)
    summary = {"paths": ens.paths, "flagged": int(ens.flagged.sum()), "t_max": sc.t_max,
               "config_hash": ens.meta.get("config_hash"),
               "endpoint_mean": flat[good].mean(axis=0), "endpoint_quantiles": q,
               "sup_distance_median": float(np.median(ens.sup_distance[good]))}
    arts = [io.write_csv(os.path.join(out, "endpoints.csv"), header, rows),
            io.write_json(os.path.join(out, "simulate.json"), summary)]
    print(f"{ens.paths} paths, {summary['flagged']} flagged, endpoint mean {summary['endpoint_mean']}")
    return arts, 0


def cmd_heat(cfg, out, args):
    from .estimators import GridSpec, heat_kernel_density
    x0, params = _x0(cfg, "heat")
    times = sorted(float(t) for t in cfg["heat"]["times"])
    sc = _sde(cfg, params, t_max=max(times))
    ens = simulate_ensemble(x0, sc, checkpoints=times, workers=cfg["workers"], cache=cfg["cache"])
    grid = GridSpec(x0.reshape(1, -1))
    rows = []
    for t in times:
        g = heat_kernel_density(x0, t, sc, grid, ensemble=ens)
        rows.append([t, float(g.values[0]), float(g.stderr[0]), float(np.prod(g.bandwidth))])
    arr = np.array([r[:3] for r in rows])
    fit = _fit_payload(arr[:, 0], arr[:, 1], arr[:, 2], cfg["heat"]["fit_window"])
    arts = [io.write_csv(os.path.join(out, "heat.csv"), ["t", "value", "stderr", "bandwidth_volume"], rows),
            io.write_json(os.path.join(out, "heat.json"), {"fit": fit, "x0": x0})]
    for r in rows:
        print(f"t={r[0]:g}  K={r[1]:.6g} +- {r[2]:.2g}")
    print(f"slope {fit.get('slope', float('nan')):.4g}")
    return arts, 0


def cmd_green(cfg, out, args):
    from .estimators import RadialRegion, green_density
    x0, params = _x0(cfg, "green")
    sec = cfg["green"]
    region = RadialRegion(tuple(sec["edges"]), sec["nangle"], sec["rho"])
    g = green_density(x0, region, _sde(cfg, params), workers=cfg["workers"], cache=cfg["cache"])
    r, prof, se = g.extra["profile_radius"], g.extra["profile"], g.extra["profile_stderr"]
    rows = [[float(a), float(b), float(c)] for a, b, c in zip(r, prof, se)]
    fit = _fit_payload(r, prof, se, sec["fit_window"])
    arts = [io.write_csv(os.path.join(out, "green.csv"), ["radius", "value", "stderr"], rows),
            io.write_json(os.path.join(out, "green.json"),
                          {"fit": fit, "visited": g.extra["visited"], "t_truncation": g.extra["t_truncation"]})]
    for row in rows:
        print(f"|x-y|={row[0]:g}  G={row[1]:.6g} +- {row[2]:.2g}")
    print(f"slope {fit.get('slope', float('nan')):.4g}")
    return arts, 0


def cmd_f2(cfg, out, args):
    from .hopf import f2_at
    forcing = _forcing(cfg)
    params = _params(cfg, 2)
    sc = _sde(cfg, params)
    rs = [float(v) for v in (args.r if args.r else cfg["f2"]["r"])]
    rows = []
    d = params.d
    for r in rs:
        y2 = np.zeros(d)
        y1 = np.zeros(d)
        y1[0] = r
        oracle = f2_at(y1, y2, forcing, params)
        if cfg["f2"]["mc"]:
            mc = f2_at(y1, y2, forcing, params, mode="mc", cfg=sc, workers=cfg["workers"],
                       cache=cfg["cache"])
            dev = (mc.value - oracle) / mc.stderr if mc.stderr > 0 else float("nan")
            rows.append([r, oracle, mc.value, mc.stderr, dev])
            print(f"r={r:g}  oracle F2 = {oracle:.6g}  MC = {mc.value:.6g} +- {mc.stderr:.2g}"
                  f"  ({dev:+.2f} stderr)")
        else:
            rows.append([r, oracle, float("nan"), float("nan"), float("nan")])
            print(f"r={r:g}  oracle F2 = {oracle:.6g}")
    arts = [io.write_csv(os.path.join(out, "f2.csv"),
                         ["r", "oracle", "mc_total", "mc_stderr", "deviation_in_stderr"], rows)]
    return arts, 0


def cmd_f4(cfg, out, args):
    from .hopf import f4_at, pair_bound
    forcing = _forcing(cfg)
    y = np.asarray(cfg["f4"]["points"], dtype=float)
    params = _params(cfg, 4)
    res = f4_at(y, forcing, _sde(cfg, params), workers=cfg["workers"], cache=cfg["cache"])
    pb = pair_bound(y, params)
    rows = [[res.value, res.stderr, res.tail_bound, res.total, pb, res.total / pb]]
    terms = {f"{i}-{j}": {"value": g.value, "stderr": g.stderr, "tail_bound": g.tail_bound,
                          "tail_exponent": g.tail_exponent} for (i, j), g in res.terms.items()}
    arts = [io.write_csv(os.path.join(out, "f4.csv"),
                         ["value", "stderr", "tail_bound", "total", "pair_bound", "ratio"], rows),
            io.write_json(os.path.join(out, "f4.json"), {"points": y, "terms": terms})]
    print(f"F4 = {res.total:.6g} +- {res.stderr:.2g}  pair bound {pb:.6g}  ratio {res.total / pb:.4g}")
    return arts, 0


def cmd_verify(cfg, out, args):
    from .verify.suites import run_suite
    sec = cfg["verify"]
    xis = sec["xi"] or [cfg["params"]["xi"]]
    reports = run_suite(args.suite, xis=xis, d=int(cfg["params"]["d"]), ns=sec["n"],
                        samples=sec["samples"], seed=cfg["seed"])
    for r in reports:
        print("\n".join(r.summary_lines()))
    failed = [r.name for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} checks passed")
    arts = [io.write_json(os.path.join(out, "reports.json"),
                          {"suite": args.suite, "reports": [r.to_dict() for r in reports],
                           "passed": not failed})]
    return arts, 1 if failed else 0


def cmd_fit(cfg, out, args):
    sec = cfg["fit"]
    header, rows = io.read_csv(sec["input"])
    col = lambda name: np.array([float(r[header.index(name)]) for r in rows])
    for name in (sec["x"], sec["y"]) + ((sec["stderr"],) if sec["stderr"] else ()):
        if name not in header:
            raise io.ConfigError(f"column {name!r} not in {sec['input']} (have {header})")
    x, y = col(sec["x"]), col(sec["y"])
    se = col(sec["stderr"]) if sec["stderr"] else np.zeros_like(y)
    fit = _fit_payload(x, y, se, sec["window"])
    arts = [io.write_json(os.path.join(out, "fit.json"), {"input": sec["input"], "fit": fit})]
    print(json.dumps(io.to_jsonable(fit), sort_keys=True))
    return arts, 0 if "error" not in fit else 1


HANDLERS = {"symbol": cmd_symbol, "simulate": cmd_simulate, "heat": cmd_heat, "green": cmd_green,
            "f2": cmd_f2, "f4": cmd_f4, "verify": cmd_verify, "fit": cmd_fit}


def build_parser():
    ap = argparse.ArgumentParser(prog="kraichnan", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (or a manifest.json to replay)")
    common.add_argument("--seed", type=int, help="master seed for every random stream")
    common.add_argument("--workers", type=int, help="threads for path chunks")
    common.add_argument("--out", help="output directory")
    common.add_argument("--cache", help="ensemble cache directory")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. --set sde.paths=5000")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "f2":
            sp.add_argument("--r", type=float, action="append", help="pair separation(s)")
        if name == "verify":
            sp.add_argument("suite", help="check suite: degeneration, symmetry, cro1..cro5, don, "
                                          "lemmas, structure, weight, bai, prc, envelope, all")
    rp = sub.add_parser("replay", help="rerun the command recorded in a manifest")
    rp.add_argument("manifest")
    rp.add_argument("--out", help="output directory (default: the manifest's)")
    return ap


def _resolve_args(args):
    user = io.load_config(args.config)
    over = list(args.set)
    for flag in ("seed", "workers", "out", "cache"):
        v = getattr(args, flag)
        if v is not None:
            key = "output" if flag == "out" else flag
            over.append(f"{key}={json.dumps(v)}")
    return io.resolve_config(user, over)


def run(command, args):
    """Execute one subcommand; returns the exit code."""
    cfg = _resolve_args(args)
    out = cfg["output"]
    os.makedirs(out, exist_ok=True)
    t0 = time.perf_counter()
    arts, code = HANDLERS[command](cfg, out, args)
    extra = {k: v for k, v in (("suite", getattr(args, "suite", None)), ("r", getattr(args, "r", None)))
             if v is not None}
    io.write_manifest(out, command, extra, cfg, arts, time.perf_counter() - t0,
                      "pass" if code == 0 else "fail")
    return code


def replay(path, out=None):
    with open(path) as fh:
        man = json.load(fh)
    if "manifest_format" not in man:
        raise io.ConfigError(f"{path} is not a manifest")
    ns = argparse.Namespace(config=path, seed=None, workers=None, out=out, cache=None, set=[],
                            **man.get("arguments", {}))
    if man["command"] == "f2" and "r" not in man.get("arguments", {}):
        ns.r = None
    return run(man["command"], ns)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            return replay(args.manifest, args.out)
        if args.command == "f2" and not hasattr(args, "r"):
            args.r = None
        return run(args.command, args)
    except (io.ConfigError, SymbolError, KeyError, ValueError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
