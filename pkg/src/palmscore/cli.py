"""Command-line interface."""
import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .core import ConstraintSpec
from .em import EmConfig, fit_score, fit_unsupervised
from .errors import PalmError, SchemaError
from .gva import GvaFitConfig
from .io import (check_compatible, load_basis, load_dataset, load_model, load_predictions, load_truth,
                 save_basis, save_dataset, save_model, save_predictions, save_truth, write_json)
from .metrics import classification_metrics, cosine_embeddings, err_theta, rel_fnorm
from .predict import predict_batch
from .simulate import SimConfig, gen_dataset
from .supervised import SupFitConfig, fit_supervised

EXIT_CODES = """exit status:
  0  success
  1  unexpected internal error
  2  command-line usage error (unknown flag, missing argument)
  3  schema or dimension error in an input file or config, or an unreadable file
  4  model artifact checksum or format-version mismatch
  5  degenerate or insufficient labels (e.g. one class, n < 2)
  6  numerical failure (rank, decomposition, variational fit)

On failure a JSON error record {"error", "message", "exit_code"} is written
to stderr."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(json.dumps({"error": "usage", "message": message, "exit_code": 2}) + "\n")
        sys.exit(2)


def _common(p):
    p.add_argument("--config", help="JSON file of option values; command-line flags take precedence")
    p.add_argument("--threads", type=int, default=None, help="worker threads (results do not depend on it)")


def _fit_options(p):
    p.add_argument("--T", type=int, help="EM iterations (default max(10, ceil(5 log(N/n))))")
    p.add_argument("--K-B", type=float)
    p.add_argument("--K-M", type=float)
    p.add_argument("--eta-clip", type=float)
    p.add_argument("--tol", type=float, help="inner variational tolerance")
    p.add_argument("--outer-tol", type=float)
    p.add_argument("--outer-max-iters", type=int)
    p.add_argument("--mstep-max-passes", type=int)


def build_parser():
    parser = _Parser(prog="palmscore", description="Semi-supervised PALM estimation for count data.",
                     epilog=EXIT_CODES, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"palmscore {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a synthetic dataset with ground truth")
    _common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--q", type=int)
    p.add_argument("--misspec", choices=["none", "weak", "strong"])
    p.add_argument("--zero-inflation", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True, help="writes data.csv, basis.csv and truth.json")

    p = sub.add_parser("fit", help="estimate theta from a dataset")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--basis", required=True)
    p.add_argument("--mode", choices=["sup", "semisup", "unsup"])
    p.add_argument("--out", required=True, help="model artifact (JSON)")
    p.add_argument("--report", help="fit report (JSON)")
    p.add_argument("--truth", help="truth.json; records the per-iteration error trace")
    _fit_options(p)

    for name, what in (("predict", "gamma"), ("embed", "gamma and embedding")):
        p = sub.add_parser(name, help=f"per-subject {what} for a dataset")
        _common(p)
        p.add_argument("--model", required=True)
        p.add_argument("--basis", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True, help="CSV: id,gamma" + (",e1..eq" if name == "embed" else ""))

    p = sub.add_parser("eval", help="metrics of a model and/or predictions against simulation truth")
    _common(p)
    p.add_argument("--truth", required=True)
    p.add_argument("--model")
    p.add_argument("--predictions")
    p.add_argument("--data", help="restricts classification metrics to its unlabeled subjects")
    p.add_argument("--out", default="-")

    p = sub.add_parser("benchmark", help="run a simulation sweep from a grid file")
    _common(p)
    p.add_argument("--grid", required=True, help="JSON list of simulate configs (or {'grid': [...]})")
    p.add_argument("--methods", default=None, help="comma-separated subset of sup,semisup,unsup")
    p.add_argument("--replications", type=int)
    p.add_argument("--parallelism", type=int)
    p.add_argument("--out-dir", required=True, help="writes results.json and results.csv")
    _fit_options(p)
    return parser


def _merge_config(args):
    if not args.config:
        return args
    try:
        with open(args.config) as fh:
            conf = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(conf, dict):
        raise SchemaError("config must be a JSON object")
    for key, value in conf.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr) or attr in ("command", "config"):
            raise SchemaError(f"unknown config key '{key}' for '{args.command}'")
        if getattr(args, attr) is None:
            setattr(args, attr, value)
    return args


def _opt(args, name, default):
    v = getattr(args, name, None)
    return default if v is None else v


def _threads(args):
    return max(1, int(_opt(args, "threads", 1)))


def _configs(args):
    base = ConstraintSpec()
    constraints = ConstraintSpec(_opt(args, "K_B", base.K_B), _opt(args, "K_M", base.K_M),
                                 _opt(args, "eta_clip", base.eta_clip))
    gva = GvaFitConfig(tol=_opt(args, "tol", GvaFitConfig.tol))
    sup = SupFitConfig(outer_max_iters=_opt(args, "outer_max_iters", SupFitConfig.outer_max_iters),
                       outer_tol=_opt(args, "outer_tol", SupFitConfig.outer_tol), gva=gva, constraints=constraints)
    em = EmConfig(T=_opt(args, "T", None), mstep_max_passes=_opt(args, "mstep_max_passes", EmConfig.mstep_max_passes),
                  gva=gva, constraints=constraints)
    return constraints, sup, em


def cmd_simulate(args):
    d = SimConfig()
    cfg = SimConfig(n=_opt(args, "n", d.n), N=_opt(args, "N", d.N), p=_opt(args, "p", d.p), q=_opt(args, "q", d.q),
                    misspec=_opt(args, "misspec", d.misspec), zero_inflation=_opt(args, "zero_inflation", 0.0),
                    seed=_opt(args, "seed", d.seed))
    data, truth = gen_dataset(cfg, _threads(args))
    os.makedirs(args.out_dir, exist_ok=True)
    save_dataset(data, os.path.join(args.out_dir, "data.csv"))
    save_basis(truth.V, os.path.join(args.out_dir, "basis.csv"))
    save_truth(truth, cfg, os.path.join(args.out_dir, "truth.json"))


def cmd_fit(args):
    data = load_dataset(args.data)
    basis = load_basis(args.basis)
    if data.p != basis.p:
        raise SchemaError(f"dataset has p={data.p} counts, basis has {basis.p} rows")
    constraints, sup_cfg, em_cfg = _configs(args)
    truth = load_truth(args.truth)["theta0"] if args.truth else None
    mode = _opt(args, "mode", "semisup")
    threads = _threads(args)
    extra = {}
    if mode == "sup":
        report = fit_supervised(data, basis, sup_cfg, threads)
    elif mode == "semisup":
        out = fit_score(data, basis, em_cfg, sup_cfg, truth=truth, threads=threads)
        report = out["report"]
        extra["supervised"] = out["supervised"].summary()
    else:
        report = fit_unsupervised(data, basis, em_cfg, truth=truth, threads=threads)
    meta = {"mode": mode, "N": data.N, "n": data.labeled_count}
    save_model(report.theta, meta, args.out, constraints, p=data.p)
    if args.report:
        summary = report.summary()
        summary.pop("wall_time", None)
        write_json({"mode": mode, **summary, **extra}, args.report)


def _predict(args, with_E):
    theta, constraints, payload = load_model(args.model)
    basis = load_basis(args.basis)
    data = load_dataset(args.data)
    check_compatible(theta, data, basis.V, payload["dims"].get("p"))
    pred = predict_batch(data.X, data.U, theta, basis, constraints, None, _threads(args))
    E = pred.E if with_E else np.empty((data.N, 0))
    save_predictions(data.ids, pred.gamma, E, args.out)


def cmd_eval(args):
    truth = load_truth(args.truth)
    out = {}
    if args.model:
        theta, _, _ = load_model(args.model)
        t0 = truth["theta0"]
        out.update(err_B=rel_fnorm(theta.B, t0.B), err_Lambda=rel_fnorm(theta.Lambda, t0.Lambda),
                   Err=err_theta(theta, t0))
    if args.predictions:
        ids, gamma, E = load_predictions(args.predictions)
        n_truth = len(truth["labels_full"])
        if len(ids) != n_truth:
            raise SchemaError(f"{len(ids)} predictions but truth has {n_truth} subjects")
        mask = np.ones(len(ids), dtype=bool)
        if args.data:
            data = load_dataset(args.data)
            if data.ids != ids:
                raise SchemaError("prediction ids do not match the dataset ids")
            mask = ~data.labeled_mask
        out.update(classification_metrics(gamma[mask], truth["labels_full"][mask]))
        out["n_scored"] = int(mask.sum())
        if E.shape[1]:
            out["cosine"] = cosine_embeddings(E, truth["xi_bar"])
    if not out:
        raise SchemaError("eval needs --model and/or --predictions")
    write_json(out, args.out)


def cmd_benchmark(args):
    from .benchmark import load_grid, run_benchmark, write_results

    grid, extras = load_grid(args.grid)
    methods = _opt(args, "methods", None) or extras.get("methods") or "sup,semisup,unsup"
    if isinstance(methods, str):
        methods = [m.strip() for m in methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in ("sup", "semisup", "unsup")]
    if bad:
        raise SchemaError(f"unknown methods {bad}")
    reps = int(_opt(args, "replications", extras.get("replications", 20)))
    par = int(_opt(args, "parallelism", extras.get("parallelism", 1)))
    _, sup_cfg, em_cfg = _configs(args)
    results = run_benchmark(grid, methods, reps, par, em_cfg, sup_cfg, _threads(args))
    os.makedirs(args.out_dir, exist_ok=True)
    write_results(results, os.path.join(args.out_dir, "results.json"), os.path.join(args.out_dir, "results.csv"))


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": lambda a: _predict(a, False),
    "embed": lambda a: _predict(a, True),
    "eval": cmd_eval,
    "benchmark": cmd_benchmark,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _merge_config(args)
        COMMANDS[args.command](args)
    except PalmError as exc:
        sys.stderr.write(json.dumps(exc.record()) + "\n")
        return exc.code
    except (OSError, ValueError) as exc:
        code = 3
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")
        return code
    except Exception as exc:  # noqa: BLE001 - last-resort record
        sys.stderr.write(json.dumps({"error": "internal", "message": f"{type(exc).__name__}: {exc}",
                                     "exit_code": 1}) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
