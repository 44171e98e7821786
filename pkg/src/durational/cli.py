"""Command-line entry point.

Every command reads one strictly parsed TOML file; ``--set a.b=value``
overrides single keys for sweeps. Outputs land in ``output_dir`` next to a
``provenance.json`` sidecar recording the resolved config, its hash, the
seed and the package version.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .errors import ConfigError, DurationalError, MaxIterExceeded
from .events import CovariateTable, parse_covariates, parse_events
from .estimator import FitOptions, fit_model
from .experiments import (BenchmarkConfig, RecoveryConfig, ScalingConfig, run_benchmark,
                          run_recovery_study, run_scaling_study, write_svg_lines, write_svg_qq)
from .grid import build_grid
from .inference import (AICFlavor, alpha_covariance, effect_table, greedy_select,
                        write_coefficients)
from .likelihood import ParamVector
from .model import DURATION, INCIDENCE, BaselineGrid, ModelSpec
from .simulator import SimConfig, simulate, study_config

THREADS_ENV = "DURATIONAL_THREADS"

_ANY = object()
_list = list
SCHEMA = {
    "seed": int,
    "threads": int,
    "output_dir": str,
    "data": {"events": str, "covariates": _list, "window_end": float, "n_actors": int,
             "remap": bool, "anchor": bool, "instantaneous": bool},
    "model": {"incidence": _list, "duration": _list, "policy": str, "rem": bool,
              "change_points": {"rule": str, "count": int, "width": float, "points": _list},
              "duration_change_points": {"rule": str, "count": int, "width": float,
                                         "points": _list}},
    "fit": {"engine": str, "tol_param": float, "tol_rel_ll": float, "max_iter": int,
            "beta_update_order": str, "step1_halving": bool, "covariance": bool},
    "simulate": {"generator": str, "n_actors": int, "window_end": float, "max_events": int,
                 "n_intervals": int, "gamma_end": float,
                 "incidence_alpha": _list, "duration_alpha": _list,
                 "incidence_beta": _ANY, "duration_beta": _ANY,
                 "incidence_gamma": _list, "duration_gamma": _list,
                 "covariates": _ANY},
    "select": {"incidence_base": _list, "duration_base": _list,
               "incidence_candidates": _list, "duration_candidates": _list,
               "criterion": str},
    "bench": {"n_actors": int, "n_reps": int, "window_end": float, "n_intervals": int,
              "select": bool, "criterion": str, "n_grid": _list, "guard_grid": _list,
              "memory_limit_gb": float, "sample_hz": float, "svg": bool},
}


# -- config handling ------------------------------------------------------------

def _check(tree: dict, schema: dict, prefix="") -> None:
    for key, val in tree.items():
        path = f"{prefix}{key}"
        if key not in schema:
            raise ConfigError(f"unknown config key {path!r}")
        kind = schema[key]
        if isinstance(kind, dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{path!r} must be a table")
            _check(val, kind, path + ".")
        elif kind is _ANY:
            continue
        elif kind is float:
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(f"{path!r} must be a number")
            tree[key] = float(val)
        elif kind is int:
            if isinstance(val, bool) or not isinstance(val, int):
                raise ConfigError(f"{path!r} must be an integer")
        elif not isinstance(val, kind):
            raise ConfigError(f"{path!r} must be of type {kind.__name__}")


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(tree: dict, overrides) -> dict:
    tree = copy.deepcopy(tree)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, _, raw = item.partition("=")
        parts = key.strip().split(".")
        node = tree
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a scalar")
        node[parts[-1]] = _parse_value(raw.strip())
    return tree


def load_config(path, overrides=()) -> dict:
    """Read, override and validate a run config."""
    try:
        with open(path, "rb") as fh:
            tree = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    tree = apply_overrides(tree, overrides)
    _check(tree, SCHEMA)
    base = Path(path).resolve().parent
    data = tree.get("data", {})
    if "events" in data:
        data["events"] = str((base / data["events"]).resolve())
        if not Path(data["events"]).exists():
            raise ConfigError(f"events file {data['events']} does not exist")
    if "covariates" in data:
        data["covariates"] = [str((base / p).resolve()) for p in data["covariates"]]
        for p in data["covariates"]:
            if not Path(p).exists():
                raise ConfigError(f"covariate file {p} does not exist")
    tree["_base"] = str(base)
    return tree


def config_hash(tree: dict) -> str:
    clean = {k: v for k, v in tree.items() if not k.startswith("_")}
    return hashlib.sha256(json.dumps(clean, sort_keys=True, default=str).encode()).hexdigest()


def resolve_threads(tree: dict) -> int:
    if "threads" in tree:
        return int(tree["threads"])
    env = os.environ.get(THREADS_ENV)
    return int(env) if env else 1


def output_dir(tree: dict, override=None) -> Path:
    out = Path(override or Path(tree.get("_base", ".")) / tree.get("output_dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_provenance(out: Path, tree: dict, command: str, files) -> None:
    side = {"command": command, "config": {k: v for k, v in tree.items() if not k.startswith("_")},
            "config_sha256": config_hash(tree), "seed": tree.get("seed"),
            "version": __version__, "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "outputs": sorted(str(f) for f in files)}
    with open(out / "provenance.json", "w") as fh:
        json.dump(side, fh, indent=2, sort_keys=True, default=str)


def _grid_from(rule: dict, window_end: float) -> BaselineGrid:
    kind = rule.get("rule", "uniform")
    if kind == "uniform":
        return BaselineGrid.uniform(window_end, int(rule.get("count", 1)))
    if kind == "width":
        if "width" not in rule:
            raise ConfigError("change_points rule 'width' needs 'width'")
        return BaselineGrid.fixed_width(window_end, float(rule["width"]))
    if kind == "explicit":
        pts = [float(p) for p in rule.get("points", ())]
        if not pts or pts[0] != 0.0:
            pts = [0.0] + pts
        if pts[-1] != window_end:
            pts.append(window_end)
        return BaselineGrid(tuple(pts))
    raise ConfigError(f"unknown change-point rule {kind!r}")


def model_spec(tree: dict, window_end: float, incidence=None, duration=None) -> ModelSpec:
    m = tree.get("model", {})
    grid = _grid_from(m.get("change_points", {}), window_end)
    dgrid = _grid_from(m["duration_change_points"], window_end) \
        if "duration_change_points" in m else grid
    try:
        return ModelSpec(m.get("incidence", ()) if incidence is None else incidence,
                         m.get("duration", ()) if duration is None else duration,
                         grid, dgrid, m.get("policy", "unrestricted"), m.get("rem", False))
    except DurationalError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def fit_options(tree: dict) -> FitOptions:
    f = {k: v for k, v in tree.get("fit", {}).items() if k not in ("engine", "covariance")}
    try:
        return FitOptions(**f)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_data(tree: dict):
    d = tree.get("data", {})
    if "events" not in d:
        raise ConfigError("data.events is required")
    rem = tree.get("model", {}).get("rem", False) or d.get("instantaneous", False)
    stream = parse_events(d["events"], d.get("window_end"), d.get("n_actors"),
                          remap=d.get("remap", False), anchor=d.get("anchor", True),
                          instantaneous=rem)
    cov = None
    if d.get("covariates"):
        cov = parse_covariates(d["covariates"], stream.n_actors, stream.actor_labels)
    return stream, cov


# -- commands -----------------------------------------------------------------

def _sim_config(tree: dict) -> SimConfig:
    s = tree.get("simulate", {})
    seed = int(tree.get("seed", 0))
    gen = s.get("generator", "study")
    if gen == "study":
        return study_config(s.get("n_actors", 100), s.get("window_end", 10_000.0),
                            s.get("n_intervals", 9), seed=seed, gamma_end=s.get("gamma_end", -0.1),
                            max_events=s.get("max_events", 10**7))
    if gen != "explicit":
        raise ConfigError(f"unknown generator {gen!r}")
    n = s.get("n_actors")
    T = s.get("window_end")
    if n is None or T is None:
        raise ConfigError("explicit generator needs simulate.n_actors and simulate.window_end")
    spec = model_spec(tree, T)
    cov = CovariateTable(n)
    covs = s.get("covariates", {})
    if not isinstance(covs, dict):
        raise ConfigError("simulate.covariates must be a table name -> list of values")
    try:
        for name, vals in covs.items():
            cov.add_monadic(name, vals)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    params = {}
    for m in (INCIDENCE, DURATION):
        g = spec.grid(m)
        beta = s.get(f"{m}_beta", 0.0)
        beta = np.full(n, float(beta)) if np.ndim(beta) == 0 else np.asarray(beta, float)
        gamma = np.asarray(s.get(f"{m}_gamma", [0.0] * g.n_intervals), float)
        params[m] = ParamVector(s.get(f"{m}_alpha", [0.0] * len(spec.stats(m))), beta, gamma)
    try:
        return SimConfig(n, spec, params, float(T), cov, s.get("max_events", 10**7), seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_simulate(tree: dict, out: Path) -> list:
    cfg = _sim_config(tree)
    stream = simulate(cfg)
    files = [out / "events.csv", out / "covariates.csv", out / "truth.json"]
    stream.to_csv(files[0])
    with open(files[1], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("actor", "name", "value"))
        if cfg.covariates is not None:
            for name, vals in cfg.covariates.monadic.items():
                for a, v in enumerate(vals):
                    w.writerow((a, name, repr(float(v))))
    truth = {m: {"stats": [s.name for s in cfg.spec.stats(m)],
                 "alpha": p.alpha.tolist(), "beta": p.beta.tolist(), "gamma": p.gamma.tolist()}
             for m, p in cfg.params.items()}
    truth["window_end"] = cfg.window_end
    truth["change_points"] = list(cfg.spec.grid(INCIDENCE).points)
    with open(files[2], "w") as fh:
        json.dump(truth, fh, indent=2)
    print(stream.describe())
    return files


def cmd_fit(tree: dict, out: Path) -> list:
    stream, cov = load_data(tree)
    spec = model_spec(tree, stream.window_end)
    opts = fit_options(tree)
    engine = tree.get("fit", {}).get("engine", "block")
    grids = build_grid(stream, spec, cov)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", MaxIterExceeded)
        fits = fit_model(grids, opts, engine)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    tables = {}
    for m, fit in fits.items():
        cov_a = alpha_covariance(fit, grids[m]) if tree.get("fit", {}).get("covariance", True) \
            else None
        tables[m] = effect_table(fit.theta_hat.alpha, cov_a, fit.stat_names)
    files = [out / "coefficients.csv", out / "baseline.csv", out / "popularity.csv",
             out / "convergence.csv"]
    write_coefficients(files[0], tables)
    with open(files[1], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("submodel", "interval", "t_start", "t_end", "gamma"))
        for m, fit in fits.items():
            pts = spec.grid(m).points
            for q, g in enumerate(fit.theta_hat.gamma):
                w.writerow((m, q, repr(pts[q]), repr(pts[q + 1]), repr(round(float(g), 12))))
    labels = stream.actor_labels or tuple(range(stream.n_actors))
    with open(files[2], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("actor",) + tuple(f"beta_{m}" for m in fits))
        for a in range(stream.n_actors):
            w.writerow((labels[a],) + tuple(repr(round(float(f.theta_hat.beta[a]), 12))
                                             for f in fits.values()))
    with open(files[3], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("submodel", "engine", "iteration", "loglik", "converged"))
        for m, fit in fits.items():
            for k, ll in enumerate(fit.ll_trace):
                w.writerow((m, engine, k, repr(float(ll)), int(fit.converged)))
    print(stream.describe())
    for m, rows in tables.items():
        print(f"[{m}]")
        for r in rows:
            print(f"  {r['stat']:<20} {r['alpha']: .4f}  se {r['se']:.4f}")
    return files


def cmd_select(tree: dict, out: Path) -> list:
    stream, cov = load_data(tree)
    s = tree.get("select", {})
    models = (INCIDENCE,) if (tree.get("model", {}).get("rem") or stream.instantaneous) \
        else (INCIDENCE, DURATION)
    union = {}
    for m in models:
        names = list(s.get(f"{m}_base", ())) + list(s.get(f"{m}_candidates", ()))
        seen = []
        for x in names:
            if x not in seen:
                seen.append(x)
        union[m] = seen
    spec = model_spec(tree, stream.window_end, union[INCIDENCE], union.get(DURATION, ()))
    grids = build_grid(stream, spec, cov)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MaxIterExceeded)
        trace = greedy_select(grids, {m: s.get(f"{m}_candidates", ()) for m in models},
                              {m: s.get(f"{m}_base", ()) for m in models}, fit_options(tree),
                              s.get("criterion", "standard"))
    path = out / "selection.csv"
    trace.to_csv(path)
    for m, st in trace.selected.items():
        print(f"{m}: {', '.join(st) if st else '(none)'}")
    return [path]


def cmd_bench(tree: dict, out: Path, which: str) -> list:
    b = tree.get("bench", {})
    seed = int(tree.get("seed", 0))
    threads = resolve_threads(tree)
    opts = fit_options(tree)
    files = []
    if which == "recovery":
        cfg = RecoveryConfig(b.get("n_actors", 100), b.get("n_reps", 200),
                             b.get("window_end", 10_000.0), b.get("n_intervals", 9), seed,
                             b.get("select", True), b.get("criterion", "standard"), threads, opts)
        rep = run_recovery_study(cfg)
        rep.extras.pop("replicates", None)
        files += [out / "recovery.csv", out / "recovery_qq.csv"]
        rep.to_csv(files[0])
        rep.qq_to_csv(files[1])
        if b.get("svg", False):
            zs = {}
            for q in rep.qq:
                zs.setdefault(q["parameter"], []).append(q["z"])
            if write_svg_qq(out / "recovery_qq.svg", zs):
                files.append(out / "recovery_qq.svg")
    elif which == "scaling":
        cfg = ScalingConfig(tuple(b.get("n_grid", (50, 100, 150, 200))), b.get("n_reps", 20),
                            b.get("window_end", 10_000.0), b.get("n_intervals", 9), seed,
                            threads, opts)
        rep = run_scaling_study(cfg)
        files.append(out / "scaling.csv")
        rep.to_csv(files[0])
        if b.get("svg", False) and write_svg_lines(out / "scaling.svg", rep.extras["n_grid"],
                                                   rep.extras["curves"]):
            files.append(out / "scaling.svg")
    elif which == "speed":
        cfg = BenchmarkConfig(tuple(b.get("n_grid", (25, 50, 75, 100, 125, 150))),
                              tuple(b.get("guard_grid", (175, 200, 250, 300))),
                              b.get("window_end", 10_000.0), b.get("n_intervals", 9), seed,
                              b.get("memory_limit_gb", 16.0) * 2**30, b.get("sample_hz", 20.0),
                              opts)
        rep = run_benchmark(cfg)
        files.append(out / "benchmark.csv")
        rep.to_csv(files[0])
        if b.get("svg", False):
            ns = sorted({r["n_actors"] for r in rep.rows if r["status"] == "ok"})
            series = {m: [rep.row(n_actors=n, method=m)["wall_seconds"] for n in ns]
                      for m in ("block", "newton")}
            if write_svg_lines(out / "benchmark.svg", ns, series, ylabel="seconds"):
                files.append(out / "benchmark.svg")
    else:
        raise ConfigError(f"unknown bench study {which!r}")
    with open(out / f"{which}_summary.json", "w") as fh:
        json.dump(rep.extras, fh, indent=2, default=str)
    files.append(out / f"{which}_summary.json")
    return files


# -- main ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="durational", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="TOML run config")
        sp.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override one config key (repeatable)")
        sp.add_argument("--out", help="output directory (overrides output_dir)")

    common(sub.add_parser("simulate", help="sample an event stream"))
    common(sub.add_parser("fit", help="fit incidence and duration models"))
    common(sub.add_parser("select", help="greedy forward model selection"))
    bp = sub.add_parser("bench", help="simulation studies and benchmark")
    bp.add_argument("study", choices=("recovery", "scaling", "speed"))
    common(bp)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        tree = load_config(args.config, args.overrides)
        out = output_dir(tree, args.out)
        if args.command == "simulate":
            files = cmd_simulate(tree, out)
        elif args.command == "fit":
            files = cmd_fit(tree, out)
        elif args.command == "select":
            files = cmd_select(tree, out)
        else:
            files = cmd_bench(tree, out, args.study)
        missing = [f for f in files if not Path(f).exists()]
        if missing:
            print(f"error: outputs not written: {missing}", file=sys.stderr)
            return 1
        write_provenance(out, tree, args.command, files)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DurationalError, OSError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
