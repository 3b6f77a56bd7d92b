"""Domain types, the closed-form ELBO and its gradients.

Notation follows the model: counts ``x`` (p), covariates ``u`` (r), binary
label ``y``; latent embedding ``xi = B @ (1, u, y) + W`` with
``W ~ N(0, Lambda)`` and Poisson log-intensity ``V @ xi``.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import expit, gammaln

from .errors import DecompositionError, DimensionError, NumericError, RankError, SchemaError

DEFAULT_ETA_CLIP = 30.0


def log_expit(z):
    """log(expit(z)) without overflow."""
    return -np.logaddexp(0.0, -z)


def ubar(u, y=None):
    """Design vector (1, u) or, with a label, (1, u, y)."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    head = np.concatenate(([1.0], u))
    if y is None:
        return head
    return np.concatenate((head, [float(y)]))


def ubar_rows(U, y=None):
    """Row-stacked design matrix; ``y`` may be a scalar or per-row vector."""
    U = np.asarray(U, dtype=float).reshape(len(U), -1)
    cols = [np.ones((len(U), 1)), U]
    if y is not None:
        cols.append(np.broadcast_to(np.asarray(y, dtype=float), (len(U),)).reshape(-1, 1))
    return np.hstack(cols)


@dataclass(frozen=True)
class EmbeddingBasis:
    """Fixed code-embedding basis ``V`` (p x q) with (q/p) V'V = I."""

    V: np.ndarray

    def __post_init__(self):
        V = np.asarray(self.V, dtype=float)
        if V.ndim != 2:
            raise DimensionError("basis must be a 2-d matrix")
        p, q = V.shape
        if q >= p:
            raise DimensionError(f"basis needs q < p, got p={p}, q={q}")
        if not np.all(np.isfinite(V)):
            raise NumericError("basis has non-finite entries")
        gram = (q / p) * V.T @ V
        if not np.allclose(gram, np.eye(q), atol=1e-10, rtol=0):
            raise SchemaError("basis violates (q/p) V'V = I; use orthonormalize_basis")
        object.__setattr__(self, "V", np.ascontiguousarray(V))

    @property
    def p(self):
        return self.V.shape[0]

    @property
    def q(self):
        return self.V.shape[1]

    @property
    def incoherence(self):
        """max_j ||V_j||_2."""
        return float(np.sqrt((self.V**2).sum(axis=1)).max())

    @property
    def m_bound_scale(self):
        """sqrt(log(p/q)), the scale of the sup-norm constraints."""
        return float(np.sqrt(np.log(self.p / self.q)))


def orthonormalize_basis(raw):
    """Rescale an arbitrary full-rank p x q embedding matrix onto the model basis.

    Keeps the column span of ``raw`` (left singular vectors of a thin SVD)
    and scales by sqrt(p/q). Singular vectors get a fixed sign so the result
    is a deterministic function of the span. Columns that are already
    orthogonal with a common length are kept and only rescaled.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2:
        raise DimensionError("basis must be a 2-d matrix")
    p, q = raw.shape
    if q >= p:
        raise DimensionError(f"basis needs q < p, got p={p}, q={q}")
    if not np.all(np.isfinite(raw)):
        raise NumericError("basis has non-finite entries")
    left, sv, _ = linalg.svd(raw, full_matrices=False)
    tol = sv[0] * max(p, q) * np.finfo(float).eps
    rank = int((sv > tol).sum())
    if rank < q:
        raise RankError(f"embedding matrix is rank deficient: rank {rank} < q={q}")
    # A raw matrix that already satisfies the invariant is returned as is;
    # orthogonal columns of a common length are only rescaled.
    if np.allclose((q / p) * raw.T @ raw, np.eye(q), atol=1e-12, rtol=0):
        return EmbeddingBasis(raw)
    gram = raw.T @ raw
    c = np.trace(gram) / q
    if np.allclose(gram / c, np.eye(q), atol=1e-12, rtol=0):
        return EmbeddingBasis(np.sqrt(p / (q * c)) * raw)
    left = _fix_signs(left)
    return EmbeddingBasis(np.sqrt(p / q) * left)


def _fix_signs(vectors):
    out = vectors.copy()
    for k in range(out.shape[1]):
        nz = np.flatnonzero(np.abs(out[:, k]) > 1e-12)
        if nz.size and out[nz[0], k] < 0:
            out[:, k] *= -1
    return out


@dataclass(frozen=True)
class ConstraintSpec:
    K_B: float = 10.0
    K_M: float = 10.0
    eta_clip: float = DEFAULT_ETA_CLIP

    def __post_init__(self):
        for name in ("K_B", "K_M", "eta_clip"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise SchemaError(f"{name} must be finite and positive, got {v}")

    def m_bound(self, p, q):
        return self.K_M * np.sqrt(np.log(p / q))

    def b_linear_bound(self, p, q):
        return self.K_B * np.sqrt(np.log(p / q))

    def b_spectral_bound(self, q):
        return self.K_B * np.sqrt(q)


@dataclass
class ModelParams:
    """theta = {B, Lambda, b}; B columns are (intercept, covariates..., label)."""

    B: np.ndarray
    Lambda: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.B = np.array(self.B, dtype=float, ndmin=2)
        self.Lambda = np.array(self.Lambda, dtype=float, ndmin=2)
        self.b = np.array(self.b, dtype=float, ndmin=1)
        q = self.B.shape[0]
        r = self.B.shape[1] - 2
        if r < 0:
            raise DimensionError("B needs at least intercept and label columns")
        if self.Lambda.shape != (q, q):
            raise DimensionError(f"Lambda must be {q}x{q}, got {self.Lambda.shape}")
        if self.b.shape != (r + 1,):
            raise DimensionError(f"b must have length {r + 1}, got {self.b.shape}")
        for name in ("B", "Lambda", "b"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NumericError(f"{name} has non-finite entries")
        if not np.allclose(self.Lambda, self.Lambda.T, atol=1e-12, rtol=0):
            raise DecompositionError("Lambda is not symmetric")

    @property
    def q(self):
        return self.B.shape[0]

    @property
    def r(self):
        return self.B.shape[1] - 2

    @property
    def B_1(self):
        return self.B[:, 0]

    @property
    def B_U(self):
        return self.B[:, 1:-1]

    @property
    def B_Y(self):
        return self.B[:, -1]

    def cholesky(self):
        """Lower Cholesky factor of Lambda, or DecompositionError."""
        try:
            return linalg.cholesky(self.Lambda, lower=True)
        except linalg.LinAlgError as exc:
            raise DecompositionError(f"Lambda is not positive definite: {exc}") from None

    def precision(self):
        L = self.cholesky()
        return linalg.cho_solve((L, True), np.eye(self.q)), 2.0 * np.log(np.diag(L)).sum()

    def copy(self):
        return ModelParams(self.B.copy(), self.Lambda.copy(), self.b.copy())


@dataclass
class Dataset:
    """Counts, covariates and partially observed labels.

    ``labels`` holds 0/1 for labeled subjects and -1 where Y is unobserved.
    """

    X: np.ndarray
    U: np.ndarray
    labels: np.ndarray
    ids: list = field(default=None)

    def __post_init__(self):
        X = np.asarray(self.X)
        if X.ndim != 2:
            raise SchemaError("X must be N x p")
        if not np.all(np.isfinite(X)) or np.any(X < 0) or np.any(X != np.round(X)):
            raise SchemaError("X must hold finite nonnegative integers")
        self.X = X.astype(np.int64)
        N = self.X.shape[0]
        U = np.asarray(self.U, dtype=float)
        if U.ndim == 1:
            U = U.reshape(N, -1) if N else U.reshape(0, 0)
        if U.shape[0] != N:
            raise SchemaError(f"U has {U.shape[0]} rows, X has {N}")
        self.U = U
        labels = np.asarray(self.labels).astype(np.int64)
        if labels.shape != (N,):
            raise SchemaError("labels must be a length-N vector")
        if not np.all(np.isin(labels, (-1, 0, 1))):
            raise SchemaError("labels must be 0, 1, or -1 (unlabeled)")
        self.labels = labels
        if self.ids is None:
            self.ids = [f"s{i}" for i in range(N)]
        else:
            self.ids = [str(i) for i in self.ids]
            if len(self.ids) != N:
                raise SchemaError("ids must have one entry per subject")

    @property
    def N(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def r(self):
        return self.U.shape[1]

    @property
    def labeled_mask(self):
        return self.labels >= 0

    @property
    def labeled_count(self):
        return int(self.labeled_mask.sum())

    def subset(self, index):
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return Dataset(self.X[index], self.U[index], self.labels[index], [self.ids[i] for i in index])


@dataclass
class GVAState:
    """Diagonal Gaussian variational factor N(m, diag(s)) for one label hypothesis."""

    m: np.ndarray
    s: np.ndarray
    hypothesized_label: int

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float)
        self.s = np.asarray(self.s, dtype=float)
        if np.any(self.s <= 0):
            raise NumericError("variational variances must be positive")
        if self.hypothesized_label not in (0, 1):
            raise SchemaError("hypothesized_label must be 0 or 1")

    @property
    def rho(self):
        return np.log(self.s)


def _check_finite(name, value):
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite value in ELBO term '{name}'")
    return value


def elbo_terms(theta, zeta, x, u, y, V, eta_clip=DEFAULT_ETA_CLIP):
    """The ten additive ELBO terms for one subject and label hypothesis.

    Returns ``(terms, clamp_count)``; ``terms`` is an ordered dict-like
    mapping from term name to value.
    """
    V = V.V if isinstance(V, EmbeddingBasis) else np.asarray(V, dtype=float)
    x = np.asarray(x, dtype=float)
    m, s = zeta.m, zeta.s
    q = V.shape[1]
    Linv, logdet = theta.precision()
    uy = ubar(u, y)
    xi_mean = theta.B @ uy
    lin = V @ (xi_mean + m)
    eta = lin + 0.5 * (V**2) @ s
    clamps = int((eta > eta_clip).sum())
    A = np.exp(np.minimum(eta, eta_clip))
    z = theta.b @ ubar(u)
    terms = {
        "poisson_linear": float(x @ lin),
        "poisson_mean": -float(A.sum()),
        "log_factorial": -float(gammaln(x + 1.0).sum()),
        "prior_logdet": -0.5 * logdet,
        "prior_quadratic": -0.5 * float(m @ Linv @ m),
        "prior_trace": -0.5 * float(np.diag(Linv) @ s),
        "entropy_logdet": 0.5 * float(np.log(s).sum()),
        "constant": 0.5 * q,
        "label_one": float(y * log_expit(z)),
        "label_zero": float((1 - y) * log_expit(-z)),
    }
    for name, value in terms.items():
        _check_finite(name, value)
    return terms, clamps


def elbo(theta, zeta, x, u, y, V, eta_clip=DEFAULT_ETA_CLIP):
    """Closed-form evidence lower bound J(theta, zeta; x, u, y)."""
    terms, _ = elbo_terms(theta, zeta, x, u, y, V, eta_clip)
    return float(sum(terms.values()))


def elbo_gradients(theta, zeta, x, u, y, V, eta_clip=DEFAULT_ETA_CLIP):
    """Blockwise gradients of the ELBO.

    Returns a dict with ``grad_m``, ``grad_log_s`` (w.r.t. log s),
    ``grad_B`` and ``grad_b``. Clamped coordinates contribute zero slope.
    """
    V = V.V if isinstance(V, EmbeddingBasis) else np.asarray(V, dtype=float)
    x = np.asarray(x, dtype=float)
    m, s = zeta.m, zeta.s
    Linv, _ = theta.precision()
    uy = ubar(u, y)
    eta = V @ (theta.B @ uy + m) + 0.5 * (V**2) @ s
    # slope of exp(min(eta, clip)) is zero past the clamp
    dA = _check_finite("poisson_mean", np.where(eta > eta_clip, 0.0, np.exp(np.minimum(eta, eta_clip))))
    score = V.T @ (x - dA)
    u1 = ubar(u)
    return {
        "grad_m": score - Linv @ m,
        "grad_log_s": s * (-0.5 * (V**2).T @ dA - 0.5 * np.diag(Linv)) + 0.5,
        "grad_B": np.outer(score, uy),
        "grad_b": (y - expit(theta.b @ u1)) * u1,
    }


def snr(theta):
    """Signal-to-noise ratio B_Y' Lambda^{-1} B_Y."""
    L = theta.cholesky()
    z = linalg.solve_triangular(L, theta.B_Y, lower=True)
    return float(z @ z)


def label_loglik(b, Ubar, y):
    """Bernoulli log-likelihood y log expit(b'U) + (1-y) log(1-expit(b'U)), rowwise."""
    z = Ubar @ b
    return y * log_expit(z) + (1.0 - y) * log_expit(-z)


def elbo_batch(theta, X, Ubar_y, V, m, rho, eta_clip=DEFAULT_ETA_CLIP, lfact=None):
    """Row-wise ELBO for stacked subjects/label hypotheses.

    ``Ubar_y`` rows are (1, u, y). Returns ``(J, clamp_counts)``.
    """
    V = V.V if isinstance(V, EmbeddingBasis) else V
    X = np.asarray(X, dtype=float)
    Linv, logdet = theta.precision()
    s = np.exp(rho)
    lin = (Ubar_y @ theta.B.T + m) @ V.T
    eta = lin + 0.5 * s @ (V * V).T
    A = np.exp(np.minimum(eta, eta_clip))
    if lfact is None:
        lfact = gammaln(X + 1.0).sum(axis=1)
    q = V.shape[1]
    J = (
        (X * lin).sum(axis=1)
        - A.sum(axis=1)
        - lfact
        - 0.5 * logdet
        - 0.5 * np.einsum("nk,kl,nl->n", m, Linv, m)
        - 0.5 * s @ np.diag(Linv)
        + 0.5 * rho.sum(axis=1)
        + 0.5 * q
        + label_loglik(theta.b, Ubar_y[:, :-1], Ubar_y[:, -1])
    )
    return J, (eta > eta_clip).sum(axis=1)
