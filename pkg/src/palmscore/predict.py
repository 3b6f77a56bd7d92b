"""Phenotype probabilities and embeddings for new or in-sample subjects.

Both label hypotheses are fitted once per subject; the probability and the
embedding are read off the same pair of fits.
"""
from dataclasses import dataclass

import numpy as np

from .core import ConstraintSpec, EmbeddingBasis, ubar_rows
from .em import responsibilities
from .errors import GvaError
from .gva import fit_gva_batch


@dataclass
class EmbeddingEstimate:
    """Per-label embeddings E0, E1 and their gamma-weighted combination E."""

    E: np.ndarray
    E0: np.ndarray
    E1: np.ndarray
    gamma: float


@dataclass
class BatchPrediction:
    gamma: np.ndarray
    E: np.ndarray
    E0: np.ndarray
    E1: np.ndarray
    Q0: np.ndarray
    Q1: np.ndarray
    converged: np.ndarray

    def __getitem__(self, i):
        return EmbeddingEstimate(self.E[i], self.E0[i], self.E1[i], float(self.gamma[i]))


def predict_batch(X, U, theta_hat, V, constraints=None, cfg=None, threads=1):
    """Fit both hypotheses for every row of (X, U); returns a :class:`BatchPrediction`."""
    V = V.V if isinstance(V, EmbeddingBasis) else np.asarray(V, dtype=float)
    constraints = constraints or ConstraintSpec()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    U = np.asarray(U, dtype=float).reshape(X.shape[0], -1)
    fits, E = [], []
    for y in (0, 1):
        Uy = ubar_rows(U, y)
        try:
            fit = fit_gva_batch(theta_hat, X, Uy, V, constraints, cfg, threads=threads)
        except GvaError as exc:
            raise GvaError(f"prediction failed: {exc}", exc.subject, exc.diagnostics) from None
        fits.append(fit)
        E.append(Uy @ theta_hat.B.T + fit.m)
    gamma = responsibilities(fits[0].Q, fits[1].Q)
    g = gamma[:, None]
    return BatchPrediction(gamma, (1.0 - g) * E[0] + g * E[1], E[0], E[1], fits[0].Q, fits[1].Q,
                           fits[0].converged & fits[1].converged)


def embed(x_new, u_new, theta_hat, V, constraints=None, cfg=None):
    """Embedding estimate (with its gamma) for one subject."""
    x = np.asarray(x_new, dtype=float)[None, :]
    u = np.atleast_1d(np.asarray(u_new, dtype=float))[None, :]
    return predict_batch(x, u, theta_hat, V, constraints, cfg)[0]


def predict_proba(x_new, u_new, theta_hat, V, constraints=None, cfg=None):
    """P(Y = 1 | x_new, u_new) under the fitted model."""
    return embed(x_new, u_new, theta_hat, V, constraints, cfg).gamma
