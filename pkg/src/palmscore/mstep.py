"""Blockwise ascent on a weighted sum of ELBOs.

Both estimators maximize an objective of the form

    F(theta, zeta) = sum_k w_k J(theta, zeta_k; x_k, u_k, y_k)

over a table of *branches* k. A labeled subject contributes one branch with
its observed label and weight 1; an unlabeled subject contributes one branch
per label hypothesis with weights (1 - gamma, gamma). One pass updates, in
order, every branch's variational factor, then (B, M) jointly, then Lambda in
closed form, then b; each block step never decreases F.
"""
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import expit, gammaln

from .core import ModelParams, elbo_batch, ubar_rows
from .errors import NumericError
from .gva import S_INIT, fit_gva_batch, init_means

MAX_HALVINGS = 30
LOGIT_TOL = 1e-10


@dataclass
class Branches:
    """Rows (subject, hypothesized label, weight) plus their variational states."""

    subject: np.ndarray
    y: np.ndarray
    w: np.ndarray
    X: np.ndarray
    Ubar_y: np.ndarray
    lfact: np.ndarray
    m: np.ndarray = None
    rho: np.ndarray = None
    Q: np.ndarray = None
    gram: np.ndarray = None
    clamps: np.ndarray = None

    @classmethod
    def build(cls, data, subject, y, w):
        subject = np.asarray(subject, dtype=np.int64)
        y = np.asarray(y, dtype=float)
        X = data.X[subject].astype(float)
        return cls(subject, y, np.asarray(w, dtype=float), X, ubar_rows(data.U[subject], y),
                   gammaln(X + 1.0).sum(axis=1))

    @property
    def Ubar(self):
        return self.Ubar_y[:, :-1]

    def __len__(self):
        return len(self.subject)

    def objective(self):
        return float(self.w @ self.Q)


def project_B(B, Ubar_rows, V, constraints):
    """Rescale B into the spectral ball, then under the linear predictor bound."""
    p, q = V.shape
    spec = np.linalg.norm(B, 2)
    cap = constraints.b_spectral_bound(q)
    if spec > cap:
        B = B * (cap / spec)
    rows = np.unique(Ubar_rows, axis=0)
    lin = np.abs(rows @ B.T @ V.T).max()
    cap = constraints.b_linear_bound(p, q)
    if lin > cap:
        B = B * (cap / lin)
    return B


def project_M(M, V, constraints):
    p, q = V.shape
    bound = constraints.m_bound(p, q)
    mx = np.abs(M @ V.T).max(axis=1)
    scale = np.where(mx > bound, bound / np.maximum(mx, 1e-300), 1.0)
    return M * scale[:, None]


def project_theta(theta, br, V, constraints):
    """Move a starting B into the constraint set."""
    theta.B = project_B(theta.B, br.Ubar_y, V, constraints)


def init_states(theta, br, V):
    br.m = init_means(theta, br.X, br.Ubar_y, V)
    br.rho = np.full(br.m.shape, np.log(S_INIT))


def refit_states(theta, br, V, constraints, gva_cfg, threads=1):
    """Polish every branch's variational factor at fixed theta (warm start)."""
    fit = fit_gva_batch(theta, br.X, br.Ubar_y, V, constraints, gva_cfg, br.m, br.rho,
                        threads=threads, want_gram=True, lfact=br.lfact)
    br.m, br.rho, br.Q, br.gram, br.clamps = fit.m, fit.rho, fit.Q, fit.gram, fit.clamps
    return fit


def evaluate(theta, br, V, constraints, m=None):
    J, clamps = elbo_batch(theta, br.X, br.Ubar_y, V, br.m if m is None else m, br.rho,
                           constraints.eta_clip, br.lfact)
    return J, clamps


def newton_B(theta, br, V, constraints):
    """Joint Newton step in (B, M) with rho fixed, backtracked on F.

    The m-blocks of the Hessian are eliminated per branch, leaving a
    q(r+2)-dimensional system for B. Assumes ``br.gram`` holds
    V' diag(A) V at the current states. Returns the accepted step length
    (0 when no ascent step was found).
    """
    p, q = V.shape
    Linv, _ = theta.precision()
    w, U = br.w, br.Ubar_y
    a = U.shape[1]
    s = np.exp(br.rho)
    eta = (U @ theta.B.T + br.m) @ V.T + 0.5 * s @ (V * V).T
    dA = np.where(eta > constraints.eta_clip, 0.0, np.exp(np.minimum(eta, constraints.eta_clip)))
    resid = (br.X - dA) @ V
    g_m = resid - br.m @ Linv
    g_B = (w[:, None] * resid).T @ U

    G = br.gram
    Hinv = np.linalg.inv(G + Linv)
    GH = G @ Hinv
    K = Linv - Linv @ Hinv @ Linv
    rhs = g_B - (w[:, None] * np.einsum("ikl,il->ik", GH, g_m)).T @ U
    coef = (w[:, None, None] * U[:, :, None] * U[:, None, :]).reshape(len(w), a * a)
    M = (coef.T @ K.reshape(len(w), q * q)).reshape(a, a, q, q).transpose(0, 2, 1, 3).reshape(a * q, a * q)
    M = 0.5 * (M + M.T)
    try:
        step = linalg.solve(M, rhs.T.ravel(), assume_a="sym")
    except (linalg.LinAlgError, ValueError):
        step = linalg.lstsq(M, rhs.T.ravel())[0]
    dB = step.reshape(a, q).T
    dM = np.einsum("ikl,il->ik", Hinv, g_m - np.einsum("ikl,il->ik", G, U @ dB.T))

    f0 = br.objective()
    t = 1.0
    for _ in range(MAX_HALVINGS):
        B = project_B(theta.B + t * dB, U, V, constraints)
        cand = ModelParams(B, theta.Lambda, theta.b)
        Mc = project_M(br.m + t * dM, V, constraints)
        J, clamps = evaluate(cand, br, V, constraints, Mc)
        if np.all(np.isfinite(J)) and w @ J >= f0:
            theta.B = B
            br.m, br.Q, br.clamps = Mc, J, clamps
            return t
        t *= 0.5
    return 0.0


def update_Lambda(theta, br, V, constraints):
    """Closed-form maximizer: weighted mean of m m' + diag(s)."""
    w = br.w
    s = np.exp(br.rho)
    Lam = (np.einsum("i,ik,il->kl", w, br.m, br.m) + np.diag(w @ s)) / w.sum()
    theta.Lambda = 0.5 * (Lam + Lam.T)
    br.Q, br.clamps = evaluate(theta, br, V, constraints)


def logistic_fit(Ubar, y, w, b0=None, max_iters=100):
    """Weighted logistic regression by damped Newton; returns (b, converged)."""
    b = np.zeros(Ubar.shape[1]) if b0 is None else np.array(b0, dtype=float)

    def loglik(b):
        z = Ubar @ b
        return float(w @ (y * -np.logaddexp(0.0, -z) + (1 - y) * -np.logaddexp(0.0, z)))

    f = loglik(b)
    for _ in range(max_iters):
        mu = expit(Ubar @ b)
        g = Ubar.T @ (w * (y - mu))
        H = (Ubar * (w * mu * (1 - mu))[:, None]).T @ Ubar
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", linalg.LinAlgWarning)
                d = linalg.solve(H, g, assume_a="pos")
        except (linalg.LinAlgError, linalg.LinAlgWarning, ValueError):
            d = linalg.lstsq(H, g)[0]
        if g @ d <= LOGIT_TOL * (1.0 + abs(f)):
            return b, True
        t = 1.0
        for _ in range(MAX_HALVINGS):
            fc = loglik(b + t * d)
            if fc >= f:
                break
            t *= 0.5
        else:
            return b, False
        b, f = b + t * d, fc
    return b, False


def update_b(theta, br, V, constraints):
    b, ok = logistic_fit(br.Ubar, br.y, br.w, theta.b)
    if not np.all(np.isfinite(b)):
        raise NumericError("logistic update produced non-finite coefficients")
    theta.b = b
    br.Q, br.clamps = evaluate(theta, br, V, constraints)
    return ok


def theta_pass(theta, br, V, constraints):
    """Update B (jointly with M), Lambda and b; returns F after each block."""
    trace = []
    newton_B(theta, br, V, constraints)
    trace.append(br.objective())
    update_Lambda(theta, br, V, constraints)
    trace.append(br.objective())
    update_b(theta, br, V, constraints)
    trace.append(br.objective())
    return trace


def ascent_pass(theta, br, V, constraints, gva_cfg, threads=1):
    """Refit the states, then one theta pass; returns F after each block."""
    refit_states(theta, br, V, constraints, gva_cfg, threads)
    return [br.objective()] + theta_pass(theta, br, V, constraints)

