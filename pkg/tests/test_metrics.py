import numpy as np
import pytest
from hypothesis import given, strategies as st

from palmscore.core import ModelParams
from palmscore.errors import DimensionError, NumericError, UndefinedMetricError
from palmscore.metrics import (auc_score, brier_score, classification_metrics, cosine_embeddings, err_theta,
                               prauc_score, rel_fnorm)
from palmscore.simulate import true_params


def brute_auc(scores, labels):
    pos, neg = scores[labels == 1], scores[labels == 0]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (pos.size * neg.size)


def brute_prauc(scores, labels):
    """Average precision by sweeping every distinct threshold from the top."""
    n1 = labels.sum()
    area, prev_recall = 0.0, 0.0
    for t in sorted(set(scores.tolist()), reverse=True):
        sel = scores >= t
        tp = labels[sel].sum()
        recall = tp / n1
        area += (recall - prev_recall) * tp / sel.sum()
        prev_recall = recall
    return area


labelled = st.integers(2, 200).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 12), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n),
)).filter(lambda t: 0 < sum(t[1]) < len(t[1]))


class TestClassification:
    def test_example(self):
        s, y = np.array([0.9, 0.8, 0.7, 0.3]), np.array([1, 0, 1, 0])
        assert auc_score(s, y) == 0.75
        # precision 1 at recall 1/2, then 2/3 at recall 1
        assert prauc_score(s, y) == pytest.approx(0.5 * 1 + 0.5 * 2 / 3, abs=1e-15)
        assert prauc_score(s, y) == pytest.approx(brute_prauc(s, y), abs=1e-15)

    def test_perfect_and_constant(self):
        y = np.array([0, 0, 1, 1])
        out = classification_metrics(np.array([0.1, 0.2, 0.8, 0.9]), y)
        assert out["auc"] == 1 and out["prauc"] == 1
        out = classification_metrics(np.full(4, 0.5), y)
        assert out["auc"] == 0.5 and out["brier"] == 0.25

    @given(labelled)
    def test_auc_brute_force(self, case):
        s, y = np.array(case[0], dtype=float) / 4, np.array(case[1])
        assert auc_score(s, y) == pytest.approx(brute_auc(s, y), abs=1e-12)

    @given(labelled)
    def test_prauc_brute_force(self, case):
        s, y = np.array(case[0], dtype=float) / 4, np.array(case[1])
        v = prauc_score(s, y)
        assert 0 <= v <= 1
        assert v == pytest.approx(brute_prauc(s, y), abs=1e-12)

    @given(st.lists(st.integers(0, 1), min_size=2, max_size=300))
    def test_brier_prevalence(self, labels):
        y = np.array(labels, dtype=float)
        p = y.mean()
        assert abs(brier_score(np.full(y.size, p), y) - p * (1 - p)) < 1e-12

    def test_single_class(self):
        with pytest.raises(UndefinedMetricError) as info:
            classification_metrics(np.array([0.2, 0.4]), np.array([1, 1]))
        assert info.value.brier == pytest.approx((0.64 + 0.36) / 2)


class TestEstimation:
    def test_err_theta_zero_and_label_shift(self):
        t0 = true_params(5)
        assert err_theta(t0, t0) == 0
        t = t0.copy()
        t.B = t0.B.copy()
        t.B[:, -1] += 0.1
        assert err_theta(t, t0) == pytest.approx(0.1 * np.sqrt(5), abs=1e-14)

    @given(st.integers(0, 10**6))
    def test_err_theta_oracle(self, seed):
        rng = np.random.default_rng(seed)
        q = int(rng.integers(1, 6))
        t0 = true_params(q)
        t = ModelParams(t0.B + 0.1 * rng.normal(size=t0.B.shape),
                        t0.Lambda + 0.05 * np.diag(rng.random(q)), t0.b + 0.1 * rng.normal(size=2))
        col = max(np.sqrt(sum((t.B[i, j] - t0.B[i, j]) ** 2 for i in range(q))) for j in range(3))
        proj = np.linalg.inv(t0.Lambda) @ t0.B[:, 2]
        lam = np.sqrt(np.sum((proj @ (t.Lambda - t0.Lambda)) ** 2))
        b = np.sqrt(np.sum((t.b - t0.b) ** 2))
        assert err_theta(t, t0) == pytest.approx(max(col, lam, b), rel=1e-12)

    def test_err_theta_shape(self):
        with pytest.raises(DimensionError):
            err_theta(true_params(2), true_params(3))

    def test_rel_fnorm(self, rng):
        A0 = rng.normal(size=(4, 3))
        assert rel_fnorm(A0, A0) == 0
        assert rel_fnorm(2 * A0, A0) == pytest.approx(1.0)
        E = rng.normal(size=A0.shape)
        E *= 0.3 * np.linalg.norm(A0) / np.linalg.norm(E)
        assert rel_fnorm(A0 + E, A0) == pytest.approx(0.3)
        with pytest.raises(NumericError):
            rel_fnorm(A0, np.zeros_like(A0))

    def test_cosine(self, rng):
        X = rng.normal(size=(50, 2))
        assert cosine_embeddings(X, X) == pytest.approx(1.0)
        assert cosine_embeddings(-X, X) == pytest.approx(-1.0)
        c, s = np.cos(np.pi / 3), np.sin(np.pi / 3)
        assert cosine_embeddings(X @ np.array([[c, s], [-s, c]]), X) == pytest.approx(0.5)
        with pytest.raises(NumericError):
            cosine_embeddings(X, np.zeros_like(X))
