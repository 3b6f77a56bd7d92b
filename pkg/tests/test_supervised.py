import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize

from palmscore import mstep
from palmscore.core import ConstraintSpec, Dataset, elbo_batch
from palmscore.errors import DegenerateLabelsError, InsufficientDataError, SchemaError
from palmscore.gva import GvaFitConfig
from palmscore.metrics import rel_fnorm
from palmscore.simulate import SimConfig, gen_dataset
from palmscore.supervised import (SupFitConfig, check_labels, fit_supervised, init_from_linearization,
                                  init_supervised, run_ascent)


@pytest.fixture(scope="module")
def small():
    data, truth = gen_dataset(SimConfig(n=150, N=150, p=30, q=3, seed=7))
    return data, truth


def ascent_state(data, V, passes=5, constraints=None):
    constraints = constraints or ConstraintSpec()
    theta = init_supervised(data, V)["theta0"]
    br = mstep.Branches.build(data, np.arange(data.N), data.labels.astype(float), np.ones(data.N))
    mstep.init_states(theta, br, V)
    trace, _ = run_ascent(theta, br, V, constraints, GvaFitConfig(), passes, 1e-12)
    return theta, br, trace


class TestLabels:
    def test_valid(self):
        check_labels([0, 1, 1])

    @pytest.mark.parametrize("labels, err", [
        ([], DegenerateLabelsError),
        ([1], InsufficientDataError),
        ([1, 1, 1], DegenerateLabelsError),
        ([0, -1, 1], SchemaError),
    ])
    def test_invalid(self, labels, err):
        with pytest.raises(err):
            check_labels(np.array(labels, dtype=np.int64))

    def test_fit_rejects_no_labels(self, small):
        data, truth = small
        none = Dataset(data.X, data.U, np.full(data.N, -1))
        with pytest.raises(DegenerateLabelsError):
            fit_supervised(none, truth.V)

    def test_fit_ignores_unlabeled(self, small):
        data, truth = small
        lab = data.labels.copy()
        lab[100:] = -1
        part = Dataset(data.X, data.U, lab)
        a = fit_supervised(part, truth.V, SupFitConfig(outer_max_iters=3))
        b = fit_supervised(data.subset(np.arange(data.N) < 100), truth.V, SupFitConfig(outer_max_iters=3))
        np.testing.assert_array_equal(a.theta.B, b.theta.B)


class TestInit:
    def test_eigenvalue_floor(self, rng):
        N, p, q = 30, 10, 3
        V = np.linalg.qr(rng.normal(size=(p, q)))[0] * np.sqrt(p / q)
        X = np.zeros((N, p))  # zero residual covariance
        U = rng.poisson(2.0, size=(N, 1)).astype(float)
        y = (rng.random(N) < 0.5).astype(float)
        Uy = np.column_stack([np.ones(N), U, y])
        theta, flags = init_from_linearization(X, Uy, V, Uy[:, :-1], y, np.ones(N))
        assert np.linalg.eigvalsh(theta.Lambda).min() >= 1e-3 - 1e-12
        assert "ridge_fallback" not in flags

    def test_ridge_fallback(self, rng):
        N, p, q = 30, 10, 3
        V = np.linalg.qr(rng.normal(size=(p, q)))[0] * np.sqrt(p / q)
        X = rng.poisson(2.0, size=(N, p)).astype(float)
        y = (rng.random(N) < 0.5).astype(float)
        Uy = np.column_stack([np.ones(N), np.ones(N), y])  # covariate duplicates the intercept
        theta, flags = init_from_linearization(X, Uy, V, Uy[:, :-1], y, np.ones(N))
        assert "ridge_fallback" in flags
        assert np.all(np.isfinite(theta.B))

    def test_linearization_is_least_squares(self, small):
        data, truth = small
        V = truth.V.V
        out = init_supervised(data, V)
        p, q = V.shape
        Uy = np.column_stack([np.ones(data.N), data.U, data.labels])
        target = (q / p) * np.log1p(data.X) @ V
        ref = np.linalg.lstsq(Uy, target, rcond=None)[0].T
        np.testing.assert_allclose(out["theta0"].B, ref, atol=1e-10)
        assert len(out["zeta0"]) == data.N


class TestAscent:
    def test_blockwise_monotone(self, small):
        data, truth = small
        V = truth.V.V
        theta = init_supervised(data, V)["theta0"]
        br = mstep.Branches.build(data, np.arange(data.N), data.labels.astype(float), np.ones(data.N))
        mstep.init_states(theta, br, V)
        for _ in range(6):
            steps = mstep.ascent_pass(theta, br, V, ConstraintSpec(), GvaFitConfig())
            assert np.all(np.diff(steps) >= -1e-9 * (1 + abs(steps[0])))

    def test_lambda_stationary(self, small):
        data, truth = small
        V = truth.V.V
        theta, br, _ = ascent_state(data, V, passes=3)
        mstep.update_Lambda(theta, br, V, ConstraintSpec())
        s = np.exp(br.rho)
        closed = (br.m.T @ br.m + np.diag(s.sum(axis=0))) / data.N
        assert np.abs(theta.Lambda - closed).max() < 1e-8
        # independent check: finite differences of F in symmetric Lambda directions vanish
        q = V.shape[1]
        h = 1e-5
        for k, l in [(0, 0), (0, 1), (2, 2)]:
            E = np.zeros((q, q))
            E[k, l] = E[l, k] = 1.0
            vals = []
            for sgn in (1, -1):
                t = theta.copy()
                t.Lambda = theta.Lambda + sgn * h * E
                vals.append(elbo_batch(t, br.X, br.Ubar_y, V, br.m, br.rho)[0].sum())
            assert abs(vals[0] - vals[1]) / (2 * h) < 1e-4 * data.N

    def test_b_is_logistic_mle(self, small):
        data, truth = small
        Ubar = np.column_stack([np.ones(data.N), data.U])
        y = data.labels.astype(float)
        b, ok = mstep.logistic_fit(Ubar, y, np.ones(data.N))

        def nll(c):
            z = Ubar @ c
            return np.sum(np.logaddexp(0, z) - y * z)

        ref = minimize(nll, np.zeros(2), method="BFGS", options={"gtol": 1e-10}).x
        assert ok
        np.testing.assert_allclose(b, ref, atol=1e-6)

    def test_constraint_feasible(self, small):
        data, truth = small
        V = truth.V.V
        cons = ConstraintSpec(K_B=0.3)
        theta, br, _ = ascent_state(data, V, passes=3, constraints=cons)
        p, q = V.shape
        assert np.linalg.norm(theta.B, 2) <= cons.b_spectral_bound(q) * (1 + 1e-12)
        rows = np.unique(br.Ubar_y, axis=0)
        assert np.abs(rows @ theta.B.T @ V.T).max() <= cons.b_linear_bound(p, q) * (1 + 1e-12)

    def test_project_B_identity_inside(self, rng):
        V = np.linalg.qr(rng.normal(size=(12, 2)))[0] * np.sqrt(6)
        B = 0.01 * rng.normal(size=(2, 3))
        rows = np.column_stack([np.ones(4), np.arange(4.0), np.r_[0, 1, 0, 1]])
        np.testing.assert_array_equal(mstep.project_B(B, rows, V, ConstraintSpec()), B)


class TestFit:
    def test_report(self, small):
        data, truth = small
        rep = fit_supervised(data, truth.V, SupFitConfig(outer_max_iters=200, outer_tol=1e-7))
        assert rep.converged
        assert rep.iterations == len(rep.objective_trace) - 1
        assert np.all(np.diff(rep.objective_trace) >= -1e-9 * abs(rep.objective_trace[0]))
        summary = rep.summary()
        assert summary["converged"] and isinstance(summary["objective_trace"], list)

    def test_recovers_B_with_many_labels(self):
        data, truth = gen_dataset(SimConfig(n=1500, N=1500, p=40, q=4, seed=3))
        rep = fit_supervised(data, truth.V)
        assert rel_fnorm(rep.theta.B, truth.theta0.B) < 0.15
        assert rel_fnorm(rep.theta.Lambda, truth.theta0.Lambda) < 0.15
        assert np.abs(rep.theta.b - truth.theta0.b).max() < 0.3

    def test_threads_bitwise(self, small):
        data, truth = small
        cfg = SupFitConfig(outer_max_iters=4)
        a = fit_supervised(data, truth.V, cfg, threads=1)
        b = fit_supervised(data, truth.V, cfg, threads=4)
        np.testing.assert_array_equal(a.theta.B, b.theta.B)


@given(st.integers(0, 10**6))
def test_logistic_weights_equal_replication(seed):
    # integer weights act like repeated rows
    rng = np.random.default_rng(seed)
    n = 12
    Ubar = np.column_stack([np.ones(n), rng.normal(size=n)])
    y = np.r_[0.0, 1.0, (rng.random(n - 2) < 0.5)]
    w = rng.integers(1, 4, size=n).astype(float)
    a, _ = mstep.logistic_fit(Ubar, y, w)
    b, _ = mstep.logistic_fit(np.repeat(Ubar, w.astype(int), axis=0), np.repeat(y, w.astype(int)),
                              np.ones(int(w.sum())))
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_config_validation():
    with pytest.raises(SchemaError):
        SupFitConfig(outer_max_iters=0)
    with pytest.raises(SchemaError):
        SupFitConfig(outer_tol=0)
