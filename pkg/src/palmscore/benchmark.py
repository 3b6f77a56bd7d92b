"""Simulation sweeps: generate, fit, evaluate and aggregate.

Replication ``r`` of a grid cell with seed ``s`` simulates with the seed
``SeedSequence([s, r]).generate_state(1, uint64)[0]``, so replications are
independent of each other and of the order in which they run.
"""
import csv
import json
import math
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .em import EmConfig, fit_score, fit_unsupervised
from .metrics import classification_metrics, cosine_embeddings, err_theta, rel_fnorm
from .predict import predict_batch
from .simulate import SimConfig, gen_dataset
from .supervised import SupFitConfig, fit_supervised

METHODS = ("sup", "semisup", "unsup")
METRICS = ("err_B", "err_Lambda", "Err", "cosine", "auc", "prauc", "brier")


@dataclass
class BenchmarkResult:
    config: SimConfig
    method: str
    replications: int
    mean: dict
    sd: dict
    failures: int = 0
    err_trace_mean: list = None
    per_replication: list = field(default_factory=list)

    def to_dict(self):
        return {
            "config": self.config.to_dict(),
            "method": self.method,
            "replications": self.replications,
            "failures": self.failures,
            "mean": self.mean,
            "sd": self.sd,
            "err_trace_mean": self.err_trace_mean,
            "per_replication": self.per_replication,
        }


def replication_seed(seed, rep):
    return int(np.random.SeedSequence([int(seed), int(rep)]).generate_state(1, np.uint64)[0])


def evaluate_fit(theta, data, truth, threads=1):
    """Estimation and prediction metrics of a fitted theta against the truth."""
    pred = predict_batch(data.X, data.U, theta, truth.V, threads=threads)
    unl = ~data.labeled_mask
    out = {
        "err_B": rel_fnorm(theta.B, truth.theta0.B),
        "err_Lambda": rel_fnorm(theta.Lambda, truth.theta0.Lambda),
        "Err": err_theta(theta, truth.theta0),
        "cosine": cosine_embeddings(pred.E, truth.xi_bar),
    }
    out.update(classification_metrics(pred.gamma[unl], truth.labels_full[unl]))
    return out


def run_replication(cfg, rep, methods, em_cfg=None, sup_cfg=None, threads=1):
    """One replication of one grid cell; returns {method: record}."""
    sim = SimConfig(**{**cfg.to_dict(), "seed": replication_seed(cfg.seed, rep)})
    data, truth = gen_dataset(sim, threads)
    em_cfg = em_cfg or EmConfig()
    sup_cfg = sup_cfg or SupFitConfig(gva=em_cfg.gva, constraints=em_cfg.constraints)
    out = {}
    sup_report = None
    for method in methods:
        try:
            if method == "semisup":
                fit = fit_score(data, truth.V, em_cfg, sup_cfg, truth=truth.theta0, threads=threads)
                report, sup_report = fit["report"], fit["supervised"]
            elif method == "sup":
                report = sup_report or fit_supervised(data, truth.V, sup_cfg, threads)
            elif method == "unsup":
                report = fit_unsupervised(data, truth.V, em_cfg, truth=truth.theta0, threads=threads)
            else:
                raise ValueError(f"unknown method {method!r}")
            rec = evaluate_fit(report.theta, data, truth, threads)
            rec["iterations"] = report.iterations
            rec["flags"] = list(report.flags)
            rec["err_trace"] = report.err_trace
            rec["free_energy_trace"] = report.free_energy_trace
            rec["inner_traces"] = report.inner_traces
            rec["objective_trace"] = list(report.objective_trace)
            rec["wall_time"] = report.wall_time
        except Exception as exc:  # a failed replication is recorded, not fatal
            rec = {"failed": True, "error": f"{type(exc).__name__}: {exc}",
                   "traceback": traceback.format_exc(limit=3)}
        rec["seed"] = sim.seed
        out[method] = rec
    return out


def _aggregate(cfg, method, recs):
    ok = [r for r in recs if not r.get("failed")]
    mean, sd = {}, {}
    for key in METRICS:
        vals = np.array([r[key] for r in ok], dtype=float)
        mean[key] = float(vals.mean()) if vals.size else math.nan
        sd[key] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
    traces = [r["err_trace"] for r in ok if r.get("err_trace")]
    trace_mean = None
    if traces and len({len(t) for t in traces}) == 1:
        trace_mean = np.mean(np.array(traces), axis=0).tolist()
    slim = [{k: v for k, v in r.items() if k not in ("wall_time", "traceback")} for r in recs]
    return BenchmarkResult(cfg, method, len(recs), mean, sd, len(recs) - len(ok), trace_mean, slim)


def run_benchmark(grid, methods=METHODS, replications=20, parallelism=1, em_cfg=None, sup_cfg=None,
                  threads=1, progress=None):
    """Run every (config, replication) and aggregate per (config, method).

    ``parallelism`` replications run at once; ``threads`` is the per-fit
    thread count. Results do not depend on either.
    """
    if replications < 1:
        raise ValueError("replications must be >= 1")
    jobs = [(ci, rep) for ci in range(len(grid)) for rep in range(replications)]

    def work(job):
        ci, rep = job
        t0 = time.perf_counter()
        res = run_replication(grid[ci], rep, methods, em_cfg, sup_cfg, threads)
        if progress is not None:
            progress(ci, rep, time.perf_counter() - t0)
        return res

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]
    out = []
    for ci, cfg in enumerate(grid):
        recs = [res for (c, _), res in zip(jobs, results) if c == ci]
        for method in methods:
            out.append(_aggregate(cfg, method, [r[method] for r in recs]))
    return out


def results_json(results):
    return json.dumps([r.to_dict() for r in results], sort_keys=True, indent=1) + "\n"


def write_results(results, json_path, csv_path):
    with open(json_path, "w") as fh:
        fh.write(results_json(results))
    cfg_keys = ("n", "N", "p", "q", "misspec", "zero_inflation", "seed")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(cfg_keys) + ["method", "replications", "failures"]
                   + [f"{k}_{s}" for k in METRICS for s in ("mean", "sd")])
        for r in results:
            c = r.config.to_dict()
            w.writerow([c[k] for k in cfg_keys] + [r.method, r.replications, r.failures]
                       + [repr(d[k]) for k in METRICS for d in (r.mean, r.sd)])


def load_grid(path):
    """A JSON list of SimConfig field dicts, or ``{"grid": [...], ...}``."""
    with open(path) as fh:
        obj = json.load(fh)
    cells = obj["grid"] if isinstance(obj, dict) else obj
    return [SimConfig(**c) for c in cells], (obj if isinstance(obj, dict) else {})
