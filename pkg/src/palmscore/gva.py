"""Per-subject variational optimization: the profiled objective Q.

For fixed parameters theta, each (subject, label hypothesis) pair has its own
diagonal Gaussian factor N(m, diag(s)); ``fit_gva_batch`` maximizes the ELBO
over (m, log s) for many pairs at once under the bound
max_j |V_j'm| <= K_M sqrt(log(p/q)).
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from . import _backend
from .core import ConstraintSpec, EmbeddingBasis, GVAState, label_loglik, ubar
from .errors import GvaError, InitializationError, SchemaError
from .parallel import chunked_map

S_INIT = 0.1


@dataclass(frozen=True)
class GvaFitConfig:
    max_iters: int = 200
    tol: float = 1e-8
    step_init: float = 1.0
    backtrack_factor: float = 0.5

    def __post_init__(self):
        if self.max_iters < 1:
            raise SchemaError("max_iters must be >= 1")
        if not 0 < self.backtrack_factor < 1:
            raise SchemaError("backtrack_factor must lie in (0, 1)")
        if not (self.tol > 0 and self.step_init > 0):
            raise SchemaError("tol and step_init must be positive")


@dataclass
class GvaBatch:
    m: np.ndarray
    rho: np.ndarray
    Q: np.ndarray
    iters: np.ndarray
    converged: np.ndarray
    clamps: np.ndarray
    gram: np.ndarray = None

    @property
    def s(self):
        return np.exp(self.rho)


def init_means(theta, X, Ubar_y, V):
    """Log-link linearization: (q/p) V' log(1 + x) minus the fixed effect."""
    p, q = V.shape
    return (q / p) * np.log1p(X) @ V - Ubar_y @ theta.B.T


def fit_gva_batch(theta, X, Ubar_y, V, constraints=None, cfg=None, m0=None, rho0=None,
                  threads=1, want_gram=False, lfact=None, backend=None):
    """Maximize the ELBO over the variational factor of every row.

    ``X`` (n x p) and ``Ubar_y`` (n x (r+2), rows (1, u, y)) describe the
    rows; ``m0``/``rho0`` warm-start the ascent, otherwise the log-link
    initialization with s = 0.1 is used. Returns a :class:`GvaBatch` whose
    ``Q`` is the attained ELBO per row.
    """
    V = V.V if isinstance(V, EmbeddingBasis) else np.asarray(V, dtype=float)
    constraints = constraints or ConstraintSpec()
    cfg = cfg or GvaFitConfig()
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    q = V.shape[1]
    Linv, logdet = theta.precision()
    bound = constraints.m_bound(p, q)
    if m0 is None:
        m0 = init_means(theta, X, Ubar_y, V)
    if rho0 is None:
        rho0 = np.full((n, q), np.log(S_INIT))
    if lfact is None:
        lfact = gammaln(X + 1.0).sum(axis=1)
    VB = V @ theta.B

    def run(sl):
        offset = Ubar_y[sl] @ VB.T
        out = _backend.newton_batch(
            V, X[sl], offset, Linv, m0[sl], rho0[sl], bound, constraints.eta_clip,
            cfg.max_iters, cfg.tol, cfg.step_init, cfg.backtrack_factor, want_gram, backend=backend,
        )
        out["Q"] = (
            out["f"]
            + (X[sl] * offset).sum(axis=1)
            - lfact[sl]
            - 0.5 * logdet
            + 0.5 * q
            + label_loglik(theta.b, Ubar_y[sl, :-1], Ubar_y[sl, -1])
        )
        return out

    parts = chunked_map(run, n, threads)
    cat = {k: (np.concatenate([pt[k] for pt in parts]) if parts else np.empty(0))
           for k in ("m", "rho", "Q", "iters", "converged", "clamps")}
    gram = np.concatenate([pt["gram"] for pt in parts]) if want_gram and parts else None
    bad = np.flatnonzero(~np.isfinite(cat["Q"]))
    if bad.size:
        raise GvaError(
            f"non-finite ELBO at initialization for row {int(bad[0])}",
            subject=int(bad[0]),
            diagnostics={"rows": bad[:20].tolist()},
        )
    return GvaBatch(cat["m"].reshape(n, q), cat["rho"].reshape(n, q), cat["Q"], cat["iters"],
                    cat["converged"].astype(bool), cat["clamps"], gram)


def fit_gva_subject(theta, x, u, y, V, constraints=None, cfg=None, init=None, backend=None):
    """Fit one subject's variational factor for label hypothesis ``y``.

    Returns a dict with ``zeta`` (GVAState), ``Q``, ``iters``, ``converged``,
    ``clamps`` and ``initial_elbo``.
    """
    from .core import elbo

    V = V.V if isinstance(V, EmbeddingBasis) else np.asarray(V, dtype=float)
    x = np.asarray(x, dtype=float)[None, :]
    uy = ubar(u, y)[None, :]
    if init is None:
        m0 = init_means(theta, x, uy, V)
        rho0 = np.full((1, V.shape[1]), np.log(S_INIT))
    else:
        m0, rho0 = init.m[None, :].astype(float), np.log(init.s)[None, :]
    constraints = constraints or ConstraintSpec()
    try:
        start = elbo(theta, GVAState(_project(m0[0], V, constraints), np.exp(rho0[0]), int(y)),
                     x[0], u, y, V, constraints.eta_clip)
    except Exception as exc:
        raise InitializationError(f"ELBO not finite at initialization: {exc}") from None
    fit = fit_gva_batch(theta, x, uy, V, constraints, cfg, m0, rho0, backend=backend)
    return {
        "zeta": GVAState(fit.m[0], fit.s[0], int(y)),
        "Q": float(fit.Q[0]),
        "iters": int(fit.iters[0]),
        "converged": bool(fit.converged[0]),
        "clamps": int(fit.clamps[0]),
        "initial_elbo": start,
    }


def _project(m, V, constraints):
    p, q = V.shape
    bound = constraints.m_bound(p, q)
    mx = np.abs(V @ m).max()
    return m * (bound / mx) if mx > bound else m


def profile_Q(theta, x, u, y, V, constraints=None, cfg=None, backend=None):
    """The profiled ELBO Q^(y)(x, u, theta) with the default cold start."""
    return fit_gva_subject(theta, x, u, y, V, constraints, cfg, backend=backend)["Q"]

