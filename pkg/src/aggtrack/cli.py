"""Command line entry point: run, certify, sweep and replay.

Exit codes: 0 success, 1 configuration error, 2 invariant violation (or a
replay that does not reproduce its outputs), 3 step size not certified.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
import time
import warnings

import numpy as np
import scipy

from . import __version__
from .errors import AggTrackError, InvalidConfig, InvariantViolation, NoConvergence
from .graph import complete_graph, load_graph_spec
from .metrics import (
    attach_oracle, average_regret, dynamic_regret, fmt, lemma_monitors,
    violation_profile, write_csv, write_trace_csv,
)
from .oracle import solve_stream
from .pat import AlgorithmParams, simulate
from .problem import ProblemConstants, VariationBounds, static_stream
from .quadratic import QuadraticInstant, exact_constants, random_quadratic
from .scenarios import (
    BasketballConfig, SurveillanceConfig, basketball_network, basketball_stream,
    config_from_dict, monte_carlo, surveillance_network, surveillance_stream,
)
from .stability import certify, spectral_radius, theoretical_bounds

log = logging.getLogger("aggtrack")

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_UNCERTIFIED = 0, 1, 2, 3
SCENARIOS = ("surveillance", "basketball", "quadratic")


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise InvalidConfig(f"{path}: top level must be a JSON object")
    if cfg.get("scenario") not in SCENARIOS:
        raise InvalidConfig(f"{path}: 'scenario' must be one of {SCENARIOS}")
    return cfg


def _tracking_tol(cfg):
    tol = cfg.get("tolerances", {})
    if "tracking_base" in tol or "tracking_drift" in tol:
        return float(tol.get("tracking_base", 1e-9)), float(tol.get("tracking_drift", 1e-12))
    return None


# problem construction ---------------------------------------------------------


def _quadratic_instant(spec, seed):
    if "random" in spec:
        r = dict(spec["random"])
        rng = np.random.default_rng(r.pop("seed", seed))
        try:
            return random_quadratic(rng, **r)
        except TypeError as exc:
            raise InvalidConfig(f"bad random quadratic spec: {exc}") from exc
    try:
        n_ag = len(spec["c"])
        dim = len(spec["c"][0])
        d = len(spec["b"][0])
        Q = spec.get("Q", [np.eye(dim).tolist()] * n_ag)
        W = spec.get("W", [np.eye(d, dim).tolist()] * n_ag)
        return QuadraticInstant(Q, spec["c"], spec["kappa"], spec["b"], W,
                                lower=spec.get("lower"), upper=spec.get("upper"))
    except (KeyError, ValueError, IndexError, TypeError) as exc:
        raise InvalidConfig(f"bad quadratic problem: {exc}") from exc


def _network(cfg, n_agents):
    if "graph" not in cfg:
        return complete_graph(n_agents)
    net = load_graph_spec(cfg["graph"])
    if net.n_agents != n_agents:
        raise InvalidConfig(f"graph has {net.n_agents} agents, problem has {n_agents}")
    return net


def build_problem(cfg, seed, mode):
    """(network, stream, params, x0, scenario_cfg) for a single run."""
    kind = cfg["scenario"]
    if kind == "surveillance":
        sc = config_from_dict(SurveillanceConfig, cfg.get("params", {}))
        stream = surveillance_stream(sc, seed, mode)
        net = _network(cfg, sc.n_agents) if "graph" in cfg else surveillance_network(sc)
        return net, stream, AlgorithmParams(sc.alpha, sc.delta, seed), stream.initial_point(), sc
    if kind == "basketball":
        bc = config_from_dict(BasketballConfig, cfg.get("params", {}))
        stream = basketball_stream(bc, seed)
        net = _network(cfg, bc.n_players) if "graph" in cfg else basketball_network(bc)
        return net, stream, AlgorithmParams(bc.alpha, bc.delta, seed), stream.initial_point(), bc
    inst = _quadratic_instant(cfg.get("problem", {}), seed)
    horizon = int(cfg.get("horizon", 200))
    consts = exact_constants(inst)
    stream = static_stream(inst, horizon, constants=consts,
                           bounds=VariationBounds(), exact_constants=True)
    net = _network(cfg, inst.n_agents)
    alpha = float(cfg.get("alpha", consts.max_alpha))
    if "delta" not in cfg:
        raise InvalidConfig("quadratic config needs 'delta'")
    x0 = cfg.get("x0")
    x0 = inst.project(np.zeros((inst.n_agents, inst.dim))) if x0 is None else np.asarray(x0, float)
    return net, stream, AlgorithmParams(alpha, float(cfg["delta"]), seed), x0, None


# outputs ----------------------------------------------------------------------


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def write_manifest(out, args, cfg, status, started, outputs):
    manifest = {
        "command": args.command,
        "config_path": os.path.abspath(args.config) if getattr(args, "config", None) else None,
        "config": cfg,
        "seed": getattr(args, "seed", None),
        "trials": getattr(args, "trials", None),
        "mode": getattr(args, "mode", None),
        "out": os.path.abspath(out),
        "versions": {"aggtrack": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "started": started,
        "wall_clock_s": time.time() - started,
        "exit_status": status,
        "outputs": {name: _sha256(os.path.join(out, name)) for name in sorted(outputs)},
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    raise TypeError(f"not serializable: {type(v)}")


def write_positions(path, run, stream):
    rows = []
    for tr in run.traces:
        for i, xy in enumerate(tr.x):
            rows.append({"t": tr.t, "kind": "agent", "index": i, "x": xy[0], "y": xy[1]})
        if hasattr(stream, "positions"):
            for kind, pts in stream.positions(tr.t).items():
                pts = np.atleast_2d(pts)
                for i, xy in enumerate(pts):
                    rows.append({"t": tr.t, "kind": kind, "index": i, "x": xy[0], "y": xy[1]})
    cols = ["t", "kind", "index", "x", "y"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r["kind"] if c == "kind" else fmt(r[c]) for c in cols])


# commands ---------------------------------------------------------------------


def _single_run(cfg, args, out):
    net, stream, params, x0, _ = build_problem(cfg, args.seed, args.mode)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore" if args.quiet else "default")
        run = simulate(net, stream, params, x0, strict=True, tracking_tol=_tracking_tol(cfg))
    metrics = {"rounds": run.t, "rho": net.rho, "alpha": params.alpha, "delta": params.delta}
    outputs = ["trace.csv"]
    if cfg["scenario"] != "basketball" or cfg.get("oracle", False):
        tol = float(cfg.get("tolerances", {}).get("oracle", 1e-9))
        ss = solve_stream(stream, tol=tol, rounds=range(run.t + 1))
        attach_oracle(run.traces, ss.solutions)
        metrics.update(dynamic_regret=dynamic_regret(run.traces),
                       average_regret=float(average_regret(run.traces)[-1]), zeta=ss.zeta)
        consts, bounds = stream.constants, stream.bounds
        if consts is not None and bounds is not None:
            if bounds.zeta_t is None:
                bounds.zeta_t, bounds.zeta = ss.zeta_t, max(bounds.zeta, ss.zeta)
            rep = lemma_monitors(run.traces, consts, bounds, params.alpha, params.delta,
                                 net.rho, net.n_agents, exact=stream.exact_constants)
            metrics.update(lemma_violations=rep.violations[:20], comparison_violations=rep.z_violations[:20],
                           min_lemma_slack=rep.min_slack.tolist() if len(rep.t) else None)
    gamma = stream.bounds.gamma if stream.bounds is not None else None
    prof = violation_profile(run.traces, gamma, params.delta, net.n_agents)
    metrics["max_violation"] = float(np.max(prof["per_round"])) if prof["per_round"].size else 0.0
    if "holds" in prof:
        metrics["violation_bound_holds"] = prof["holds"]
    if cfg["scenario"] == "basketball":
        p = np.array([stream.offenders(tr.t) for tr in run.traces])
        x = np.array([tr.x for tr in run.traces])
        metrics["min_horizontal_margin"] = float(np.min(x[..., 0] - p[..., 0]))
    write_trace_csv(os.path.join(out, "trace.csv"), run.traces)
    if cfg["scenario"] in ("surveillance", "basketball"):
        write_positions(os.path.join(out, "positions.csv"), run, stream)
        outputs.append("positions.csv")
    _write_json(os.path.join(out, "metrics.json"), metrics)
    outputs.append("metrics.json")
    return metrics, outputs


def _monte_carlo_run(cfg, args, out):
    sc = config_from_dict(SurveillanceConfig, cfg.get("params", {}))
    res = monte_carlo(sc, trials=args.trials, base_seed=args.seed, mode=args.mode)
    rows = [{"t": t + (1 if args.mode == "online" else 0), "mean": m, "std": s}
            for t, (m, s) in enumerate(zip(res.mean, res.std))]
    write_csv(os.path.join(out, "summary.csv"), rows, ["t", "mean", "std"])
    metrics = {
        "mode": args.mode, "trials": len(res.series), "seeds": res.seeds,
        "failures": res.failures,
        "quantity": "average_regret" if args.mode == "online" else "relative_error",
        "final_mean": float(res.mean[-1]), "final_std": float(res.std[-1]),
    }
    _write_json(os.path.join(out, "metrics.json"), metrics)
    return metrics, ["summary.csv", "metrics.json"]


def cmd_run(args):
    started = time.time()
    cfg = load_config(args.config)
    out = args.out
    os.makedirs(out, exist_ok=True)
    status, outputs = EXIT_OK, []
    try:
        if cfg["scenario"] == "surveillance" and args.trials > 1:
            metrics, outputs = _monte_carlo_run(cfg, args, out)
        else:
            metrics, outputs = _single_run(cfg, args, out)
        if not args.quiet:
            print(json.dumps(metrics, default=_jsonable, sort_keys=True))
    except InvariantViolation as exc:
        print(f"invariant violation: {exc.name} at round {exc.round_index}: {exc.detail}", file=sys.stderr)
        _write_json(os.path.join(out, "violation.json"),
                    {"invariant": exc.name, "round": exc.round_index, "detail": exc.detail})
        outputs, status = ["violation.json"], EXIT_INVARIANT
    except NoConvergence as exc:
        print(f"oracle failed at round {exc.round_index}: {exc}", file=sys.stderr)
        status = EXIT_INVARIANT
    write_manifest(out, args, cfg, status, started, outputs)
    return status


def _certify_inputs(cfg, seed, mode):
    """(constants, bounds, rho, alpha, n_agents, delta) from a config."""
    if "constants" in cfg:
        try:
            consts = ProblemConstants(**cfg["constants"])
            bounds = VariationBounds(**cfg.get("bounds", {}))
        except TypeError as exc:
            raise InvalidConfig(f"bad constants/bounds: {exc}") from exc
        n = int(cfg.get("n_agents", 1))
        if "rho" in cfg:
            rho = float(cfg["rho"])
        elif "graph" in cfg:
            rho = load_graph_spec(cfg["graph"]).rho
        else:
            rho = 0.0
        alpha = float(cfg.get("alpha", consts.max_alpha))
        return consts, bounds, rho, alpha, n, cfg.get("delta")
    if cfg["scenario"] == "basketball":
        raise InvalidConfig("basketball costs are not strongly convex; declare 'constants' to certify")
    net, stream, params, _, _ = build_problem(cfg, seed, mode)
    return (stream.constants, stream.bounds, net.rho, params.alpha, net.n_agents, params.delta)


def cmd_certify(args):
    cfg = load_config(args.config)
    consts, bounds, rho, alpha, n, delta = _certify_inputs(cfg, args.seed, args.mode)
    report, model = certify(consts, bounds, rho, alpha, n, delta=delta)
    if report.get("schur_exists") and delta is not None and report["certified"]:
        report["bounds_at_delta"] = {
            "lambda": report["lambda_delta"], "Q": model.Q,
            "average_regret_limit": theoretical_bounds(model, delta, 1, np.zeros(3))["average_regret_limit"],
        }
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(os.path.join(args.out, "certify.json"), report)
    if not args.quiet:
        brief = {k: v for k, v in report.items() if k != "curve"}
        print(json.dumps(brief, indent=2, sort_keys=True, default=_jsonable))
    if not report.get("schur_exists"):
        print("no delta in (0, 1) makes M(delta) Schur", file=sys.stderr)
        return EXIT_UNCERTIFIED
    if delta is not None and not report["certified"]:
        print(f"delta={delta} is not certified: lambda={report['lambda_delta']:.6g} >= 1", file=sys.stderr)
        return EXIT_UNCERTIFIED
    return EXIT_OK


def cmd_sweep(args):
    """Grid over (alpha, delta): one run per pair, summary in sweep.csv."""
    started = time.time()
    cfg = load_config(args.config)
    grid = cfg.get("sweep", {})
    alphas, deltas = grid.get("alpha"), grid.get("delta")
    if not alphas or not deltas:
        raise InvalidConfig("sweep needs 'sweep': {'alpha': [...], 'delta': [...]}")
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for a in alphas:
        for d in deltas:
            sub = json.loads(json.dumps(cfg))
            if cfg["scenario"] == "quadratic":
                sub["alpha"], sub["delta"] = a, d
            else:
                sub.setdefault("params", {}).update(alpha=a, delta=d)
            net, stream, params, x0, _ = build_problem(sub, args.seed, args.mode)
            row = {"alpha": a, "delta": d, "lambda": None, "certified": None}
            if stream.constants is not None and stream.bounds is not None:
                from .stability import build_model
                model = build_model(stream.constants, stream.bounds, net.rho, a, net.n_agents,
                                    check_alpha=False)
                lam = spectral_radius(model, d)
                row.update({"lambda": lam, "certified": int(lam < 1.0)})
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                run = simulate(net, stream, params, x0, strict=True)
            ss = solve_stream(stream, rounds=range(run.t + 1))
            attach_oracle(run.traces, ss.solutions)
            prof = violation_profile(run.traces)
            row.update(final_avg_regret=float(average_regret(run.traces)[-1]),
                       final_err_x=run.traces[-1].err_x,
                       max_violation=float(np.max(prof["per_round"])) if prof["per_round"].size else 0.0)
            rows.append(row)
    cols = ["alpha", "delta", "lambda", "certified", "final_avg_regret", "final_err_x", "max_violation"]
    write_csv(os.path.join(args.out, "sweep.csv"), rows, cols)
    write_manifest(args.out, args, cfg, EXIT_OK, started, ["sweep.csv"])
    if not args.quiet:
        print(f"wrote {len(rows)} rows to {os.path.join(args.out, 'sweep.csv')}")
    return EXIT_OK


def cmd_replay(args):
    """Re-run a manifest's command into a new directory and compare output hashes."""
    try:
        with open(args.manifest) as fh:
            man = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidConfig(f"cannot read manifest: {exc}") from exc
    out = args.out
    os.makedirs(out, exist_ok=True)
    cfg_path = os.path.join(out, "replay_config.json")
    with open(cfg_path, "w") as fh:
        json.dump(man["config"], fh)
    argv = [man["command"], "--config", cfg_path, "--out", out, "--quiet"]
    if man.get("seed") is not None:
        argv += ["--seed", str(man["seed"])]
    if man.get("trials") is not None:
        argv += ["--trials", str(man["trials"])]
    if man.get("mode") is not None:
        argv += ["--mode", man["mode"]]
    status = main(argv)
    mismatched = []
    for name, digest in man["outputs"].items():
        path = os.path.join(out, name)
        if not os.path.exists(path) or _sha256(path) != digest:
            mismatched.append(name)
    if mismatched:
        print("replay differs in: " + ", ".join(mismatched), file=sys.stderr)
        return EXIT_INVARIANT
    if not args.quiet:
        print(f"replay reproduced {len(man['outputs'])} output file(s) exactly")
    return status


def build_parser():
    parser = argparse.ArgumentParser(prog="aggtrack", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required):
        p.add_argument("--config", required=True, help="scenario or problem JSON")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=out_required, default=None, help="output directory")
        p.add_argument("--mode", choices=["online", "static"], default="online")
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("run", help="simulate a scenario or problem")
    common(p, True)
    p.add_argument("--trials", type=int, default=1, help="Monte Carlo trials (surveillance)")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("certify", help="certify delta with the comparison system")
    common(p, False)
    p.set_defaults(func=cmd_certify)
    p = sub.add_parser("sweep", help="grid over alpha and delta")
    common(p, True)
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("replay", help="reproduce a run from its manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "trials", 1) is not None and getattr(args, "trials", 1) < 1:
        print("error: --trials must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (InvalidConfig, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except AggTrackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
