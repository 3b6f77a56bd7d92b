"""Synthetic PALM data with known ground truth.

Random streams
--------------
Every draw derives from one 64-bit base seed through ``numpy.random.SeedSequence``
spawn keys, each feeding a Philox counter-based generator:

* ``(0, i)``  subject ``i``: U, Y, C, W, zero-inflation mask, counts (in that order)
* ``(1,)``    choice of the labeled subset

A subject's draws therefore do not depend on N, on the chunking or on the
thread count.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import expit

from .core import Dataset, EmbeddingBasis, ModelParams, orthonormalize_basis, ubar_rows
from .errors import DimensionError, GenerationError, SchemaError
from .parallel import chunked_map

MISSPEC_LOADING = {"none": None, "weak": 0.2, "strong": 0.6}
C_PREVALENCE = 0.4
RATE_LIMIT = 1e12


@dataclass(frozen=True)
class SimConfig:
    n: int = 50
    N: int = 5000
    p: int = 400
    q: int = 20
    misspec: str = "none"
    zero_inflation: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.n <= self.N:
            raise SchemaError(f"need 0 <= n <= N, got n={self.n}, N={self.N}")
        if not 0 < self.q < self.p:
            raise DimensionError(f"need 0 < q < p, got q={self.q}, p={self.p}")
        if self.misspec not in MISSPEC_LOADING:
            raise SchemaError(f"misspec must be one of {sorted(MISSPEC_LOADING)}")
        if not 0 <= self.zero_inflation < 1:
            raise SchemaError("zero_inflation must lie in [0, 1)")
        if not 0 <= int(self.seed) < 2**64:
            raise SchemaError("seed must be a 64-bit unsigned integer")

    def to_dict(self):
        return {k: getattr(self, k) for k in ("n", "N", "p", "q", "misspec", "zero_inflation", "seed")}


@dataclass
class SimTruth:
    """Ground truth behind a simulated dataset.

    ``xi_bar`` is the latent embedding whose image under V is the log-rate;
    under misspecification it includes the hidden factor C.
    """

    theta0: ModelParams
    V: EmbeddingBasis
    W: np.ndarray
    xi_bar: np.ndarray
    labels_full: np.ndarray
    C: np.ndarray = field(default=None)
    c_loading: float = None

    @property
    def Z(self):
        return self.xi_bar @ self.V.V.T


def ar_matrix(p, rho):
    idx = np.arange(p)
    return rho ** np.abs(np.subtract.outer(idx, idx))


def gen_basis(p, q):
    """Leading q eigenvectors of the AR(0.5) correlation matrix, scaled by sqrt(p/q)."""
    if not 0 < q < p:
        raise DimensionError(f"need 0 < q < p, got q={q}, p={p}")
    vals, vecs = linalg.eigh(ar_matrix(p, 0.5), subset_by_index=[p - q, p - 1])
    vecs = vecs[:, ::-1]
    return orthonormalize_basis(vecs)


def true_params(q):
    Lambda0 = 4.0 * ar_matrix(q, 0.1)
    B0 = np.column_stack([np.zeros(q), 0.2 * np.ones(q), 0.8 * np.ones(q)])
    return ModelParams(B0, Lambda0, np.array([-0.2, 0.5]))


def _stream(seed, *key):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key)))


def gen_dataset(cfg, threads=1):
    """Draw a dataset and its truth; returns ``(Dataset, SimTruth)``."""
    basis = gen_basis(cfg.p, cfg.q)
    V = basis.V
    theta0 = true_params(cfg.q)
    chol = linalg.cholesky(theta0.Lambda, lower=True)
    c_load = MISSPEC_LOADING[cfg.misspec]
    pi = float(cfg.zero_inflation)
    q, p = cfg.q, cfg.p

    def draw(sl):
        idx = range(sl.start, sl.stop)
        U = np.empty(len(idx))
        Y = np.empty(len(idx), dtype=np.int64)
        C = np.empty(len(idx), dtype=np.int64)
        W = np.empty((len(idx), q))
        X = np.empty((len(idx), p), dtype=np.int64)
        for k, i in enumerate(idx):
            rng = _stream(cfg.seed, 0, i)
            U[k] = rng.poisson(2.0)
            Y[k] = rng.random() < expit(theta0.b[0] + theta0.b[1] * U[k])
            C[k] = rng.random() < C_PREVALENCE
            W[k] = chol @ rng.standard_normal(q)
            xi = theta0.B @ np.array([1.0, U[k], Y[k]]) + W[k]
            if c_load is not None:
                xi = xi + c_load * C[k]
            rate = np.exp(V @ xi)
            if not np.all(rate <= RATE_LIMIT):
                j = int(np.argmax(~(rate <= RATE_LIMIT)))
                raise GenerationError(f"Poisson rate overflow at subject {i}, code {j}")
            if pi > 0:
                rate = np.where(rng.random(p) < pi, 0.0, rate)
            X[k] = rng.poisson(rate)
        return U, Y, C, W, X

    parts = chunked_map(draw, cfg.N, threads)
    U, Y, C, W, X = (np.concatenate([pt[k] for pt in parts]) for k in range(5))
    labeled = _stream(cfg.seed, 1).choice(cfg.N, size=cfg.n, replace=False)
    labels = np.full(cfg.N, -1, dtype=np.int64)
    labels[labeled] = Y[labeled]
    xi_bar = ubar_rows(U, Y) @ theta0.B.T + W
    if c_load is not None:
        xi_bar = xi_bar + c_load * C[:, None]
    data = Dataset(X, U.reshape(-1, 1), labels, [f"s{i}" for i in range(cfg.N)])
    truth = SimTruth(theta0, basis, W, xi_bar, Y, C if c_load is not None else None, c_load)
    return data, truth
