"""Exact marginal log-likelihood by adaptive Gauss-Hermite quadrature.

A test oracle for small latent dimension (q <= 3). The tensor grid is
centred at the posterior mode of W and scaled by the Laplace covariance,
which keeps the rule accurate when the counts are informative.
"""
import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy import linalg, optimize
from scipy.special import gammaln, logsumexp

from .core import EmbeddingBasis, log_expit, ubar
from .errors import UnsupportedDimensionError

MAX_Q = 3


def _log_joint(W, offset, V, x, lfact, Linv, logdet):
    """log P(x | W) + log N(W; 0, Lambda) for a stack of W rows."""
    W = np.atleast_2d(W)
    eta = offset[None, :] + W @ V.T
    pois = (x[None, :] * eta - np.exp(eta)).sum(axis=1) - lfact
    q = V.shape[1]
    gauss = -0.5 * np.einsum("nk,kl,nl->n", W, Linv, W) - 0.5 * logdet - 0.5 * q * np.log(2 * np.pi)
    return pois + gauss


def loglik_quadrature(theta, x, u, y, V, nodes=40):
    """log P(X = x, Y = y | U = u; theta), integrating W numerically."""
    V = V.V if isinstance(V, EmbeddingBasis) else np.asarray(V, dtype=float)
    q = V.shape[1]
    if q > MAX_Q:
        raise UnsupportedDimensionError(f"quadrature oracle supports q <= {MAX_Q}, got q={q}")
    if nodes < 20:
        raise ValueError("use at least 20 nodes per dimension")
    x = np.asarray(x, dtype=float)
    Linv, logdet = theta.precision()
    offset = V @ (theta.B @ ubar(u, y))
    lfact = gammaln(x + 1.0).sum()

    def neg(w):
        return -_log_joint(w, offset, V, x, lfact, Linv, logdet)[0]

    def neg_grad(w):
        A = np.exp(offset + V @ w)
        return -(V.T @ (x - A) - Linv @ w)

    res = optimize.minimize(neg, np.zeros(q), jac=neg_grad, method="BFGS", options={"gtol": 1e-10})
    mode = res.x
    # one Newton polish with the exact Hessian
    A = np.exp(offset + V @ mode)
    prec = V.T @ (A[:, None] * V) + Linv
    mode = mode + linalg.solve(prec, -neg_grad(mode), assume_a="pos")
    A = np.exp(offset + V @ mode)
    prec = V.T @ (A[:, None] * V) + Linv
    chol = linalg.cholesky(linalg.inv(prec), lower=True)

    z1, w1 = hermgauss(nodes)
    grid = np.stack([g.ravel() for g in np.meshgrid(*[z1] * q, indexing="ij")], axis=1)
    logw = sum(g.ravel() for g in np.meshgrid(*[np.log(w1)] * q, indexing="ij"))
    W = mode[None, :] + np.sqrt(2.0) * grid @ chol.T
    log_int = logsumexp(logw + (grid**2).sum(axis=1) + _log_joint(W, offset, V, x, lfact, Linv, logdet))
    log_int += 0.5 * q * np.log(2.0) + np.log(np.diag(chol)).sum()
    z = theta.b @ ubar(u)
    return float(log_int + (log_expit(z) if y == 1 else log_expit(-z)))
