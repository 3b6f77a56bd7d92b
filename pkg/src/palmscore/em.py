"""Semi-supervised EM with Gaussian variational E- and M-steps.

Each unlabeled subject carries two variational factors, one per label
hypothesis. The E-step turns the two profiled ELBOs into a responsibility;
the M-step runs blockwise ascent on the responsibility-weighted ELBO.

Across EM iterations the monitored quantity is the free energy

    sum_L J_i^(Y_i) + sum_U log(exp J_i^(1) + exp J_i^(0)),

which the E-step (optimal gamma) and M-step (ascent at fixed gamma) can
only increase.
"""
import dataclasses
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import mstep
from .core import ConstraintSpec, EmbeddingBasis, ubar_rows
from .errors import SchemaError
from .gva import GvaFitConfig, fit_gva_batch
from .metrics import err_theta
from .supervised import FitReport, SupFitConfig, check_labels, fit_supervised, init_from_linearization

GAMMA_CLIP = 1e-12


@dataclass(frozen=True)
class EmConfig:
    """EM controls. ``T=None`` uses max(10, ceil(5 log(N/n)))."""

    T: int = None
    mstep_max_passes: int = 50
    mstep_tol: float = 1e-6
    ascent_slack: float = 1e-6
    warm_start: bool = True
    gva: GvaFitConfig = field(default_factory=GvaFitConfig)
    constraints: ConstraintSpec = field(default_factory=ConstraintSpec)

    def __post_init__(self):
        if self.T is not None and self.T < 1:
            raise SchemaError("T must be >= 1")
        if self.mstep_max_passes < 1:
            raise SchemaError("mstep_max_passes must be >= 1")

    def iterations(self, N, n):
        if self.T is not None:
            return int(self.T)
        if n <= 0:
            return 10
        return max(10, math.ceil(5 * math.log(N / n)))


@dataclass
class Responsibilities:
    """gamma_i = P(Y_i = 1 | x_i, u_i) for the unlabeled subjects ``index``."""

    index: np.ndarray
    gamma: np.ndarray
    Q0: np.ndarray
    Q1: np.ndarray


def responsibilities(Q0, Q1):
    return np.clip(expit(Q1 - Q0), GAMMA_CLIP, 1.0 - GAMMA_CLIP)


class _EmState:
    """Branch table: labeled rows first, then unlabeled y=0 rows, then y=1 rows."""

    def __init__(self, data, labeled, unlabeled):
        self.labeled = np.asarray(labeled, dtype=np.int64)
        self.unlabeled = np.asarray(unlabeled, dtype=np.int64)
        nl, nu = self.labeled.size, self.unlabeled.size
        subject = np.concatenate([self.labeled, self.unlabeled, self.unlabeled])
        y = np.concatenate([data.labels[self.labeled], np.zeros(nu), np.ones(nu)]).astype(float)
        self.br = mstep.Branches.build(data, subject, y, np.ones(nl + 2 * nu))
        self.L = slice(0, nl)
        self.U0 = slice(nl, nl + nu)
        self.U1 = slice(nl + nu, nl + 2 * nu)

    def set_gamma(self, gamma):
        self.br.w[self.U0] = 1.0 - gamma
        self.br.w[self.U1] = gamma

    def Q_pair(self):
        return self.br.Q[self.U0], self.br.Q[self.U1]

    def free_energy(self):
        Q = self.br.Q
        return float(Q[self.L].sum() + np.logaddexp(Q[self.U0], Q[self.U1]).sum())

    def responsibilities(self):
        Q0, Q1 = self.Q_pair()
        return Responsibilities(self.unlabeled, responsibilities(Q0, Q1), Q0.copy(), Q1.copy())


def e_step(theta, data, V, constraints=None, cfg=None, threads=1):
    """Responsibilities of all unlabeled subjects from cold-started GVA fits."""
    V = V.V if isinstance(V, EmbeddingBasis) else np.asarray(V, dtype=float)
    constraints = constraints or ConstraintSpec()
    idx = np.flatnonzero(~data.labeled_mask)
    X = data.X[idx].astype(float)
    Q = []
    for y in (0, 1):
        Q.append(fit_gva_batch(theta, X, ubar_rows(data.U[idx], y), V, constraints, cfg, threads=threads).Q)
    return Responsibilities(idx, responsibilities(Q[0], Q[1]), Q[0], Q[1])


def _m_step(theta, st, V, cfg, threads):
    """Passes of (B, Lambda, b, states) at fixed weights; returns the O_F trace."""
    br = st.br
    trace = [br.objective()]
    converged = False
    for _ in range(cfg.mstep_max_passes):
        mstep.theta_pass(theta, br, V, cfg.constraints)
        mstep.refit_states(theta, br, V, cfg.constraints, cfg.gva, threads)
        trace.append(br.objective())
        if abs(trace[-1] - trace[-2]) <= cfg.mstep_tol * (1.0 + abs(trace[-1])):
            converged = True
            break
    return trace, converged


def m_step(theta_prev, data, V, gamma, constraints=None, cfg=None, states=None, threads=1):
    """Maximize the responsibility-weighted ELBO; returns the updated ModelParams.

    ``gamma`` lists responsibilities for the unlabeled subjects in index
    order. ``states`` optionally maps ``"m"``/``"rho"`` to branch-ordered
    starting factors (labeled, unlabeled y=0, unlabeled y=1); otherwise the
    factors are fitted at ``theta_prev`` first.
    """
    cfg = cfg or EmConfig()
    if constraints is not None:
        cfg = dataclasses.replace(cfg, constraints=constraints)
    V = V.V if isinstance(V, EmbeddingBasis) else np.asarray(V, dtype=float)
    theta = theta_prev.copy()
    st = _EmState(data, np.flatnonzero(data.labeled_mask), np.flatnonzero(~data.labeled_mask))
    if states is None:
        mstep.init_states(theta, st.br, V)
    else:
        st.br.m, st.br.rho = np.array(states["m"], dtype=float), np.array(states["rho"], dtype=float)
    mstep.refit_states(theta, st.br, V, cfg.constraints, cfg.gva, threads)
    st.set_gamma(np.asarray(gamma, dtype=float))
    _m_step(theta, st, V, cfg, threads)
    return theta


def _run_em(theta, st, V, cfg, T, truth_theta, threads, t0, flags):
    br = st.br
    mstep.refit_states(theta, br, V, cfg.constraints, cfg.gva, threads)
    free = [st.free_energy()]
    errs = [err_theta(theta, truth_theta)] if truth_theta is not None else None
    obj, inner = [], []
    plateau = None
    for t in range(T):
        Q0, Q1 = st.Q_pair()
        st.set_gamma(responsibilities(Q0, Q1))
        trace, ok = _m_step(theta, st, V, cfg, threads)
        inner.append(trace)
        obj.append(trace[-1])
        if not ok:
            flags.append(f"mstep_not_converged@{t}")
        slack = cfg.ascent_slack * (1.0 + abs(trace[0]))
        if np.any(np.diff(trace) < -slack):
            flags.append(f"objective_decrease@{t}")
        if not cfg.warm_start:
            mstep.init_states(theta, br, V)
            mstep.refit_states(theta, br, V, cfg.constraints, cfg.gva, threads)
        free.append(st.free_energy())
        if free[-1] < free[-2] - cfg.ascent_slack * (1.0 + abs(free[-2])):
            flags.append(f"free_energy_decrease@{t}")
        if plateau is None and abs(free[-1] - free[-2]) <= cfg.mstep_tol * (1.0 + abs(free[-1])):
            plateau = t + 1
        if errs is not None:
            errs.append(err_theta(theta, truth_theta))
    report = FitReport(theta, obj, plateau is not None, int(br.clamps.sum()), time.perf_counter() - t0,
                       iterations=T, flags=flags, err_trace=errs, free_energy_trace=free,
                       inner_traces=inner, plateau_iteration=plateau)
    return report, st.responsibilities()


def fit_score(data, V, cfg=None, sup_cfg=None, truth=None, threads=1):
    """Semi-supervised fit initialized at the supervised estimator.

    Returns ``{"theta_hat", "report", "responsibilities", "supervised"}``.
    Passing ``truth`` (ModelParams) records Err(theta_t) per iteration.
    """
    t0 = time.perf_counter()
    cfg = cfg or EmConfig()
    sup_cfg = sup_cfg or SupFitConfig(gva=cfg.gva, constraints=cfg.constraints)
    V = V.V if isinstance(V, EmbeddingBasis) else np.asarray(V, dtype=float)
    labeled = np.flatnonzero(data.labeled_mask)
    check_labels(data.labels[labeled])
    sup = fit_supervised(data, V, sup_cfg, threads)
    theta = sup.theta.copy()
    st = _EmState(data, labeled, np.flatnonzero(~data.labeled_mask))
    mstep.init_states(theta, st.br, V)
    T = cfg.iterations(data.N, labeled.size)
    report, resp = _run_em(theta, st, V, cfg, T, truth, threads, t0, list(sup.flags))
    return {"theta_hat": theta, "report": report, "responsibilities": resp, "supervised": sup}


def fit_unsupervised(data, V, cfg=None, truth=None, threads=1):
    """Ablation: the same EM over every subject as unlabeled, started from the
    linearized initializer with all responsibilities at 1/2. Labels are never read
    (only their count sets the default T)."""
    t0 = time.perf_counter()
    cfg = cfg or EmConfig()
    V = V.V if isinstance(V, EmbeddingBasis) else np.asarray(V, dtype=float)
    half = np.full(data.N, 0.5)
    Uy = ubar_rows(data.U, half)
    theta, flags = init_from_linearization(data.X.astype(float), Uy, V, Uy[:, :-1], half, np.ones(data.N))
    st = _EmState(data, np.empty(0, dtype=np.int64), np.arange(data.N))
    mstep.project_theta(theta, st.br, V, cfg.constraints)
    mstep.init_states(theta, st.br, V)
    T = cfg.iterations(data.N, data.labeled_count)
    report, _ = _run_em(theta, st, V, cfg, T, truth, threads, t0, flags)
    return report
