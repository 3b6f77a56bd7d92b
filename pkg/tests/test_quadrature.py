import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.polynomial.hermite import hermgauss
from scipy.special import gammaln, logsumexp

from palmscore.core import GVAState, ModelParams, elbo, log_expit, ubar
from palmscore.errors import UnsupportedDimensionError
from palmscore.quadrature import loglik_quadrature

from conftest import random_instance


def pln_1d(x, mu, var, nodes=60):
    """log of int Poisson(x; e^w) N(w; mu, var) dw by plain Gauss-Hermite."""
    z, w = hermgauss(nodes)
    eta = mu + np.sqrt(2 * var) * z
    return logsumexp(np.log(w) + x * eta - np.exp(eta) - gammaln(x + 1)) - 0.5 * np.log(np.pi)


def test_rejects_large_q(rng):
    theta = ModelParams(np.zeros((4, 2)), np.eye(4), np.zeros(1))
    with pytest.raises(UnsupportedDimensionError):
        loglik_quadrature(theta, np.zeros(6), [], 0, rng.normal(size=(6, 4)))


def test_rejects_few_nodes(rng):
    theta, V, x, u, y = random_instance(rng)
    with pytest.raises(ValueError):
        loglik_quadrature(theta, x, u, y, V, nodes=10)


def test_node_convergence(rng):
    for _ in range(5):
        theta, V, x, u, y = random_instance(rng)
        a = loglik_quadrature(theta, x, u, y, V, nodes=30)
        b = loglik_quadrature(theta, x, u, y, V, nodes=50)
        assert abs(a - b) < 1e-8


def test_degenerate_prior_collapses():
    V = np.array([[1.0], [1.0]])
    B = np.array([[0.3, 0.2, -0.4]])
    theta = ModelParams(B, np.array([[1e-8]]), np.array([0.1, -0.2]))
    x, u, y = np.array([2.0, 0.0]), np.array([1.0]), 1
    eta = V @ (B @ ubar(u, y))
    expected = (x * eta - np.exp(eta) - gammaln(x + 1)).sum() + log_expit(theta.b @ ubar(u))
    assert loglik_quadrature(theta, x, u, y, V) == pytest.approx(expected, abs=1e-6)


def test_unit_case_dominates_elbo():
    theta = ModelParams(np.zeros((1, 2)), np.eye(1), np.zeros(1))
    V = np.array([[1.0]])
    # p = q = 1 is outside the basis contract (q < p) but fine for the raw oracle
    ll = loglik_quadrature(theta, np.zeros(1), np.empty(0), 0, V)
    assert ll >= -np.exp(0.5) - np.log(2)
    assert ll == pytest.approx(pln_1d(0.0, 0.0, 1.0) + np.log(0.5), abs=1e-10)


def test_independent_blocks_factorize():
    # V with disjoint supports and diagonal Lambda: the integral splits per coordinate
    V = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]) * np.sqrt(2 * 2 / 4)
    lam = np.array([0.7, 1.3])
    B = np.array([[0.2, 0.1, 0.0], [-0.3, 0.0, 0.5]])
    theta = ModelParams(B, np.diag(lam), np.array([0.0, 0.3]))
    x, u, y = np.array([1.0, 3.0, 0.0, 2.0]), np.array([1.0]), 1
    mu = B @ ubar(u, y)
    # each block is a 1-d integral over w_k with shared intensity for its two codes
    total = 0.0
    z, w = hermgauss(80)
    for k, rows in enumerate(([0, 1], [2, 3])):
        wk = mu[k] + np.sqrt(2 * lam[k]) * z
        eta = np.outer(wk, V[rows, k])
        lp = (x[rows] * eta - np.exp(eta) - gammaln(x[rows] + 1)).sum(axis=1)
        total += logsumexp(np.log(w) + lp) - 0.5 * np.log(np.pi)
    total += log_expit(theta.b @ ubar(u))
    assert loglik_quadrature(theta, x, u, y, V, nodes=50) == pytest.approx(total, abs=1e-8)


@given(st.integers(0, 10**6))
def test_elbo_below_loglik(seed):
    rng = np.random.default_rng(seed)
    q = int(rng.integers(1, 3))
    theta, V, x, u, y = random_instance(rng, p=int(rng.integers(q + 1, 7)), q=q)
    zeta = GVAState(0.5 * rng.normal(size=q), np.exp(rng.normal(size=q) * 0.5), y)
    assert elbo(theta, zeta, x, u, y, V) <= loglik_quadrature(theta, x, u, y, V) + 1e-8
