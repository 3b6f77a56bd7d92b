"""Restricted maximum-ELBO estimation from labeled subjects only."""
import time
from dataclasses import dataclass, field

import numpy as np

from . import mstep
from .core import ConstraintSpec, EmbeddingBasis, GVAState, ModelParams, ubar_rows
from .errors import DegenerateLabelsError, InsufficientDataError, SchemaError
from .gva import GvaFitConfig

EIG_FLOOR = 1e-3
RIDGE = 1e-4


@dataclass(frozen=True)
class SupFitConfig:
    outer_max_iters: int = 500
    outer_tol: float = 1e-6
    gva: GvaFitConfig = field(default_factory=GvaFitConfig)
    constraints: ConstraintSpec = field(default_factory=ConstraintSpec)
    seed: int = 0

    def __post_init__(self):
        if self.outer_max_iters < 1:
            raise SchemaError("outer_max_iters must be >= 1")
        if not self.outer_tol > 0:
            raise SchemaError("outer_tol must be positive")


@dataclass
class FitReport:
    """Fitted parameters with the objective trace and run diagnostics.

    ``objective_trace`` holds the objective after every pass. ``flags``
    collects non-fatal events (ridge fallback, non-convergence, EM ascent
    violations).
    """

    theta: ModelParams
    objective_trace: list
    converged: bool
    clamp_count: int
    wall_time: float
    iterations: int = 0
    flags: list = field(default_factory=list)
    err_trace: list = None
    free_energy_trace: list = None
    inner_traces: list = None
    plateau_iteration: int = None

    def summary(self):
        out = {
            "objective_trace": [float(v) for v in self.objective_trace],
            "converged": bool(self.converged),
            "clamp_count": int(self.clamp_count),
            "wall_time": float(self.wall_time),
            "iterations": int(self.iterations),
            "flags": list(self.flags),
        }
        if self.err_trace is not None:
            out["err_trace"] = [float(v) for v in self.err_trace]
        if self.free_energy_trace is not None:
            out["free_energy_trace"] = [float(v) for v in self.free_energy_trace]
        if self.plateau_iteration is not None:
            out["plateau_iteration"] = int(self.plateau_iteration)
        return out


def check_labels(labels):
    labels = np.asarray(labels)
    if np.any(labels < 0):
        raise SchemaError("supervised fitting needs every subject labeled")
    if labels.size == 0:
        raise DegenerateLabelsError("no labeled subjects")
    if labels.size < 2:
        raise InsufficientDataError(f"need at least 2 labeled subjects, got {labels.size}")
    if np.unique(labels).size < 2:
        raise DegenerateLabelsError(f"all labels equal {int(labels[0])}; both classes are required")


def init_from_linearization(X, Uy, V, Ubar, y, w):
    """Least squares on the log-link linearization plus a logistic fit for b.

    Returns ``(theta, flags)``. A rank-deficient design falls back to a ridge
    solve with penalty 1e-4.
    """
    p, q = V.shape
    target = (q / p) * np.log1p(X) @ V
    sw = np.sqrt(w)[:, None]
    D, T = Uy * sw, target * sw
    flags = []
    if np.linalg.matrix_rank(D) < D.shape[1]:
        flags.append("ridge_fallback")
        coef = np.linalg.solve(D.T @ D + RIDGE * np.eye(D.shape[1]), D.T @ T)
    else:
        coef = np.linalg.lstsq(D, T, rcond=None)[0]
    B = coef.T
    resid = target - Uy @ coef
    cov = (resid * w[:, None]).T @ resid / w.sum()
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    Lam = (vecs * np.maximum(vals, EIG_FLOOR)) @ vecs.T
    b, ok = mstep.logistic_fit(Ubar, y, w)
    if not ok:
        flags.append("logistic_init_not_converged")
    return ModelParams(B, 0.5 * (Lam + Lam.T), b), flags


def init_supervised(data, V):
    """Starting values: ``{"theta0", "zeta0", "flags"}``."""
    V = V.V if isinstance(V, EmbeddingBasis) else np.asarray(V, dtype=float)
    check_labels(data.labels)
    y = data.labels.astype(float)
    Uy = ubar_rows(data.U, y)
    theta, flags = init_from_linearization(data.X.astype(float), Uy, V, Uy[:, :-1], y, np.ones(data.N))
    br = mstep.Branches.build(data, np.arange(data.N), y, np.ones(data.N))
    mstep.init_states(theta, br, V)
    zeta = [GVAState(m, np.exp(r), int(lab)) for m, r, lab in zip(br.m, br.rho, data.labels)]
    return {"theta0": theta, "zeta0": zeta, "flags": flags}


def run_ascent(theta, br, V, constraints, gva_cfg, max_passes, tol, threads=1):
    """Blockwise passes until the relative change of F drops below ``tol``.

    Returns ``(trace, converged)``; ``trace[0]`` is F at the starting states.
    """
    mstep.project_theta(theta, br, V, constraints)
    trace = []
    converged = False
    for k in range(max_passes):
        steps = mstep.ascent_pass(theta, br, V, constraints, gva_cfg, threads)
        if not trace:
            trace.append(steps[0])
        trace.append(steps[-1])
        if abs(trace[-1] - trace[-2]) <= tol * (1.0 + abs(trace[-1])):
            converged = True
            break
    return trace, converged


def fit_supervised(data, V, cfg=None, threads=1):
    """Fit theta on labeled subjects by blockwise ELBO ascent.

    Unlabeled subjects in ``data`` are ignored. Returns a :class:`FitReport`.
    """
    t0 = time.perf_counter()
    cfg = cfg or SupFitConfig()
    V = V.V if isinstance(V, EmbeddingBasis) else np.asarray(V, dtype=float)
    lab = data.subset(data.labeled_mask) if np.any(data.labels < 0) else data
    init = init_supervised(lab, V)
    theta = init["theta0"]
    y = lab.labels.astype(float)
    br = mstep.Branches.build(lab, np.arange(lab.N), y, np.ones(lab.N))
    mstep.init_states(theta, br, V)
    trace, converged = run_ascent(theta, br, V, cfg.constraints, cfg.gva, cfg.outer_max_iters,
                                  cfg.outer_tol, threads)
    flags = list(init["flags"])
    if not converged:
        flags.append("outer_not_converged")
    return FitReport(theta, trace, converged, int(br.clamps.sum()), time.perf_counter() - t0,
                     iterations=len(trace) - 1, flags=flags)
