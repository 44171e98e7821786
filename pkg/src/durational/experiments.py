"""Simulation studies: parameter recovery, scaling in N and a speed benchmark.

Performance measures over ``S`` replicates of a parameter ``theta``:

* AVE, the mean estimate;
* RMSE, ``sqrt(mean((theta_hat - theta)**2))``;
* CP, the share of replicates with ``|theta_hat - theta| <= 1.96 SE``;
* the standardized errors ``z = (theta_hat - theta) / SE`` for QQ checks.
"""

from __future__ import annotations

import csv
import multiprocessing as mp
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats as sps

from .errors import DimensionMismatch, DurationalError, MaxIterExceeded, NRInfeasible
from .estimator import (DEFAULT_MEMORY_LIMIT, ExpandedDesign, FitOptions, fit_block_coordinate,
                        fit_newton_raphson)
from .grid import build_grid
from .inference import AICFlavor, alpha_covariance, greedy_select
from .model import DURATION, INCIDENCE, ModelSpec
from .simulator import (STUDY_ALPHA_DURATION, STUDY_ALPHA_INCIDENCE, STUDY_DURATION,
                        STUDY_INCIDENCE, derive_seed, simulate, study_config)

Z95 = 1.959963984540054


@dataclass
class StudyReport:
    """Rows of per-parameter metrics plus study-specific extras."""

    rows: list = field(default_factory=list)
    qq: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        _write_rows(path, self.rows)

    def qq_to_csv(self, path) -> None:
        _write_rows(path, self.qq)

    def row(self, **match) -> dict:
        for r in self.rows:
            if all(r.get(k) == v for k, v in match.items()):
                return r
        raise KeyError(match)


def _write_rows(path, rows):
    if not rows:
        open(path, "w").close()
        return
    fields = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(round(v, 10)) if isinstance(v, float) else v)
                        for k, v in r.items()})


# -- metrics ------------------------------------------------------------------

def compute_metrics(estimates, truth, ses=None, names=None) -> StudyReport:
    """AVE, RMSE and CP per coordinate.

    Parameters
    ----------
    estimates : array_like, shape (S, P)
        One row per replicate (ParamVector alphas are accepted too).
    truth : array_like, shape (P,) or (S, P)
        A per-replicate truth is allowed for parameters redrawn each time.
    ses : array_like, shape (S, P), optional
        Standard errors; without them CP and z are omitted.

    Non-finite estimates are left out per coordinate; ``n`` counts the
    replicates used.
    """
    est = np.array([getattr(e, "alpha", e) for e in estimates], dtype=float)
    if est.ndim == 1:
        est = est[:, None]
    S, P = est.shape
    if S < 2:
        raise DimensionMismatch("metrics need at least two replicates")
    tru = np.asarray(truth, dtype=float)
    tru = np.broadcast_to(tru, est.shape) if tru.ndim <= 1 else tru
    if tru.shape != est.shape:
        raise DimensionMismatch(f"truth shape {tru.shape} vs estimates {est.shape}")
    names = list(names) if names is not None else [f"p{k}" for k in range(P)]
    dev = est - tru
    report = StudyReport()
    se = None if ses is None else np.asarray(ses, dtype=float).reshape(S, P)
    for k in range(P):
        fin = np.isfinite(est[:, k])
        row = {"parameter": names[k], "truth": float(tru[:, k].mean()),
               "ave": float(est[fin, k].mean()) if fin.any() else float("nan"),
               "rmse": float(np.sqrt(np.mean(dev[fin, k] ** 2))) if fin.any() else float("nan"),
               "n": int(fin.sum())}
        if se is not None:
            # effects without a finite standard error (pinned at a bound) get no interval
            ok = fin & np.isfinite(se[:, k]) & (se[:, k] > 0)
            row["cp"] = float(np.mean(np.abs(dev[ok, k]) <= Z95 * se[ok, k])) if ok.any() \
                else float("nan")
            row["n_se"] = int(ok.sum())
            z = dev[ok, k] / se[ok, k]
            for v in np.sort(z):
                report.qq.append({"parameter": names[k], "z": float(v)})
        report.rows.append(row)
    return report


def qq_points(z) -> np.ndarray:
    """Pairs (theoretical normal quantile, sorted sample) for a QQ plot."""
    z = np.sort(np.asarray(z, dtype=float))
    p = (np.arange(1, len(z) + 1) - 0.5) / len(z)
    return np.column_stack([sps.norm.ppf(p), z])


# -- recovery study ---------------------------------------------------------------

@dataclass
class RecoveryConfig:
    n_actors: int = 100
    n_reps: int = 200
    window_end: float = 10_000.0
    n_intervals: int = 9
    seed: int = 20240101
    select: bool = True
    criterion: str = "standard"
    threads: int = 1
    fit: FitOptions = field(default_factory=FitOptions)


TRUE_MODEL = {INCIDENCE: STUDY_INCIDENCE, DURATION: STUDY_DURATION}
TRUE_ALPHA = {INCIDENCE: np.array(STUDY_ALPHA_INCIDENCE), DURATION: np.array(STUDY_ALPHA_DURATION)}
BASE_MODEL = {INCIDENCE: ("ccp",), DURATION: ()}
CANDIDATES = {INCIDENCE: ("absdiff:x1", "match:x2"), DURATION: ("ni", "absdiff:x1", "match:x2")}


def recovery_replicate(n_actors, window_end, n_intervals, seed, select=True,
                       criterion="standard", fit_opts: Optional[FitOptions] = None) -> dict:
    """Simulate, optionally select, fit the generating model; one replicate."""
    cfg = study_config(n_actors, window_end, n_intervals, seed=seed)
    out = {"seed": int(seed), "error": ""}
    t0 = time.perf_counter()
    try:
        stream = simulate(cfg)
        grids = build_grid(stream, cfg.spec, cfg.covariates)
        out["n_events"] = stream.n_events
        if select:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", MaxIterExceeded)
                trace = greedy_select(grids, CANDIDATES, BASE_MODEL, fit_opts, criterion)
            out["selected"] = {m: tuple(v) for m, v in trace.selected.items()}
            out["selection_correct"] = all(
                set(trace.selected[m]) == set(TRUE_MODEL[m]) for m in grids)
        for m, g in grids.items():
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", MaxIterExceeded)
                fit = fit_block_coordinate(g, fit_opts)
            cov = alpha_covariance(fit, g)
            truth = cfg.params[m]
            live = ~fit.floored
            # a coefficient held at its bound has no finite estimate
            alpha = np.where(fit.pinned_alpha, np.nan, fit.theta_hat.alpha)
            out[m] = {"alpha": alpha, "se": cov.se, "converged": fit.converged,
                      "pinned": fit.pinned_alpha,
                      "iterations": fit.iterations,
                      "beta_err": np.where(live, fit.theta_hat.beta - truth.beta, np.nan),
                      "gamma_err": fit.theta_hat.gamma - truth.gamma}
    except DurationalError as exc:
        out["error"] = f"{type(exc).__name__}: {exc}"
    out["seconds"] = time.perf_counter() - t0
    return out


def _run_replicates(jobs, threads):
    if threads <= 1 or len(jobs) <= 1:
        return [recovery_replicate(*j) for j in jobs]
    ctx = mp.get_context("spawn")
    with ProcessPoolExecutor(max_workers=threads, mp_context=ctx) as ex:
        return list(ex.map(_star_replicate, jobs))


def _star_replicate(job):
    return recovery_replicate(*job)


def _summarize(results, label, report: StudyReport):
    ok = [r for r in results if not r["error"]]
    for m in (INCIDENCE, DURATION):
        conv = [r for r in ok if r[m]["converged"]]
        report.extras[f"{m}_nonconverged"] = len(ok) - len(conv)
        if len(conv) < 2:
            continue
        names = [f"{m}:{s}" for s in TRUE_MODEL[m]]
        part = compute_metrics([r[m]["alpha"] for r in conv], TRUE_ALPHA[m],
                               [r[m]["se"] for r in conv], names)
        pinned = np.sum([r[m]["pinned"] for r in conv], axis=0)
        for row, npin in zip(part.rows, pinned):
            row.update(study=label, submodel=m, group="alpha", n_pinned=int(npin))
        report.rows.extend(part.rows)
        report.qq.extend(part.qq)
        for grp in ("beta", "gamma"):
            err = np.array([r[m][f"{grp}_err"] for r in conv])
            rmse = np.sqrt(np.nanmean(err ** 2, axis=0))
            report.rows.append({"parameter": f"{m}:{grp}", "truth": float("nan"),
                                "ave": float(np.nanmean(err)), "rmse": float(np.nanmean(rmse)),
                                "n": len(conv), "cp": float("nan"), "study": label,
                                "submodel": m, "group": grp})
    report.extras["n_failed"] = len(results) - len(ok)
    report.extras["errors"] = [r["error"] for r in results if r["error"]]
    return report


def run_recovery_study(cfg: Optional[RecoveryConfig] = None) -> StudyReport:
    """Parameter recovery and model selection at fixed ``N``."""
    cfg = cfg or RecoveryConfig()
    t0 = time.perf_counter()
    jobs = [(cfg.n_actors, cfg.window_end, cfg.n_intervals, derive_seed(cfg.seed, r),
             cfg.select, cfg.criterion, cfg.fit) for r in range(cfg.n_reps)]
    results = _run_replicates(jobs, cfg.threads)
    report = _summarize(results, "recovery", StudyReport())
    ok = [r for r in results if not r["error"]]
    if cfg.select and ok:
        report.extras["selection_accuracy"] = float(np.mean([r["selection_correct"] for r in ok]))
    z = np.array([q["z"] for q in report.qq])
    report.extras["pooled_exceed_196"] = float(np.mean(np.abs(z) > Z95)) if len(z) else float("nan")
    report.extras["mean_events"] = float(np.mean([r["n_events"] for r in ok])) if ok else 0.0
    report.extras["wall_time"] = time.perf_counter() - t0
    report.extras["replicates"] = results
    return report


# -- scaling study --------------------------------------------------------------

@dataclass
class ScalingConfig:
    n_grid: tuple = (50, 100, 150, 200)
    n_reps: int = 20
    window_end: float = 10_000.0
    n_intervals: int = 9
    seed: int = 20240202
    threads: int = 1
    fit: FitOptions = field(default_factory=FitOptions)


def run_scaling_study(cfg: Optional[ScalingConfig] = None) -> StudyReport:
    """RMSE of alpha, beta and gamma as ``N`` grows (generating model fitted)."""
    cfg = cfg or ScalingConfig()
    t0 = time.perf_counter()
    report = StudyReport()
    curves = {g: [] for g in ("alpha", "beta", "gamma")}
    for n in cfg.n_grid:
        jobs = [(n, cfg.window_end, cfg.n_intervals, derive_seed(cfg.seed, 1000 * n + r), False,
                 "standard", cfg.fit) for r in range(cfg.n_reps)]
        results = _run_replicates(jobs, cfg.threads)
        part = _summarize(results, f"N={n}", StudyReport())
        for row in part.rows:
            row["n_actors"] = n
        report.rows.extend(part.rows)
        for g in curves:
            vals = [r["rmse"] for r in part.rows if r["group"] == g and np.isfinite(r["rmse"])]
            curves[g].append(float(np.mean(vals)) if vals else float("nan"))
    report.extras["n_grid"] = list(cfg.n_grid)
    report.extras["curves"] = curves
    report.extras["spearman"] = {g: trend(cfg.n_grid, v) for g, v in curves.items()}
    report.extras["wall_time"] = time.perf_counter() - t0
    return report


def trend(x, y) -> float:
    """Spearman rank correlation (nan if undefined)."""
    y = np.asarray(y, dtype=float)
    if len(y) < 2 or not np.all(np.isfinite(y)):
        return float("nan")
    return float(sps.spearmanr(x, y).statistic)


# -- benchmark ------------------------------------------------------------------

@dataclass
class BenchmarkConfig:
    n_grid: tuple = (25, 50, 75, 100, 125, 150)
    guard_grid: tuple = (175, 200, 250, 300)
    window_end: float = 10_000.0
    n_intervals: int = 9
    seed: int = 20240303
    memory_limit: float = DEFAULT_MEMORY_LIMIT
    sample_hz: float = 20.0
    fit: FitOptions = field(default_factory=FitOptions)


def _single_thread_env():
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = "1"


def _bench_child(method, grids, opts, conn):
    """Timed fit inside an isolated process; reports wall time and peak RSS."""
    _single_thread_env()
    from .estimator import peak_rss_bytes
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", MaxIterExceeded)
            t0 = time.perf_counter()
            fitter = fit_block_coordinate if method == "block" else fit_newton_raphson
            fits = {m: fitter(g, opts) for m, g in grids.items()}
            wall = time.perf_counter() - t0
        conn.send({"wall": wall, "rss": peak_rss_bytes(), "error": "",
                   "alpha": {m: f.theta_hat.alpha for m, f in fits.items()},
                   "loglik": {m: f.loglik for m, f in fits.items()},
                   "iterations": {m: f.iterations for m, f in fits.items()}})
    except Exception as exc:  # reported to the parent, not raised
        conn.send({"error": f"{type(exc).__name__}: {exc}"})
    finally:
        conn.close()


def timed_fit(method: str, grids: dict, opts: FitOptions, sample_hz: float = 20.0) -> dict:
    """Run one fit in a spawned child and sample its resident memory."""
    import psutil

    ctx = mp.get_context("spawn")
    parent, child = ctx.Pipe(duplex=False)
    proc = ctx.Process(target=_bench_child, args=(method, grids, opts, child))
    proc.start()
    child.close()
    peak = 0
    ps = psutil.Process(proc.pid)
    interval = 1.0 / sample_hz
    while proc.is_alive():
        try:
            peak = max(peak, ps.memory_info().rss)
        except psutil.Error:
            break
        if parent.poll(interval):
            break
    msg = parent.recv() if parent.poll(600) else {"error": "child produced no result"}
    proc.join()
    if not msg.get("error"):
        msg["peak_bytes"] = max(peak, msg["rss"])
    return msg


def nr_memory_estimate(grids: dict) -> int:
    """Bytes the expanded Newton-Raphson design would need for these grids."""
    return int(sum(ExpandedDesign.estimate_bytes(ExpandedDesign.count_rows(g), g)
                   for g in grids.values()))


def bench_grids(n, cfg: BenchmarkConfig) -> dict:
    sc = study_config(n, cfg.window_end, cfg.n_intervals, seed=derive_seed(cfg.seed, n))
    stream = simulate(sc)
    return build_grid(stream, sc.spec, sc.covariates)


def run_benchmark(cfg: Optional[BenchmarkConfig] = None) -> StudyReport:
    """Wall time and peak memory of both fitters across ``N``.

    Newton-Raphson is skipped (and flagged infeasible) once its estimated
    footprint exceeds ``memory_limit``. ``guard_grid`` sizes are only
    checked against the guard, never fitted.
    """
    cfg = cfg or BenchmarkConfig()
    opts = FitOptions(tol_param=cfg.fit.tol_param, tol_rel_ll=cfg.fit.tol_rel_ll,
                      max_iter=cfg.fit.max_iter, memory_limit=cfg.memory_limit)
    report = StudyReport()
    for n in tuple(cfg.n_grid) + tuple(cfg.guard_grid):
        grids = bench_grids(n, cfg)
        need = nr_memory_estimate(grids)
        fit_it = n in cfg.n_grid
        for method in ("block", "newton"):
            row = {"n_actors": n, "method": method, "wall_seconds": float("nan"),
                   "peak_bytes": float("nan"), "status": "", "nr_estimate_bytes": need,
                   "n_events": int(sum(g.n_events for g in grids.values())),
                   "threads": 1}
            if method == "newton" and need > cfg.memory_limit:
                row["status"] = "NRInfeasible"
            elif not fit_it:
                row["status"] = "skipped"
            else:
                res = timed_fit(method, grids, opts, cfg.sample_hz)
                if res.get("error"):
                    row["status"] = res["error"]
                else:
                    row.update(wall_seconds=res["wall"], peak_bytes=float(res["peak_bytes"]),
                               status="ok")
                    row["alpha_json"] = {m: [float(v) for v in a] for m, a in res["alpha"].items()}
            report.rows.append(row)
    for r in report.rows:
        r["alpha_json"] = str(r.get("alpha_json", ""))
    return report


def speedup(report: StudyReport, n: int) -> float:
    b = report.row(n_actors=n, method="block")
    nr = report.row(n_actors=n, method="newton")
    return nr["wall_seconds"] / b["wall_seconds"]


# -- optional plots ----------------------------------------------------------------

def write_svg_lines(path, x, series: dict, xlabel="N", ylabel="RMSE") -> bool:
    """Line chart through matplotlib if it is installed; returns success."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return False
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, y in series.items():
        ax.plot(x, y, marker="o", label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return True


def write_svg_qq(path, z_by_param: dict) -> bool:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return False
    fig, ax = plt.subplots(figsize=(4, 4))
    for name, z in z_by_param.items():
        pts = qq_points(z)
        ax.plot(pts[:, 0], pts[:, 1], ".", label=name, ms=3)
    lim = [-3.5, 3.5]
    ax.plot(lim, lim, "k-", lw=0.8)
    ax.set_xlabel("normal quantile")
    ax.set_ylabel("sample quantile")
    ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return True
