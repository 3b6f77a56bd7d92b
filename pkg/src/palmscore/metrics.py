"""Estimation-error and classification metrics."""
import numpy as np
from scipy import linalg
from scipy.stats import rankdata

from .errors import DimensionError, NumericError, SchemaError, UndefinedMetricError


def err_theta(theta, theta0):
    """Composite error: max of the column-wise B error, the label-projected
    Lambda error and the logistic-coefficient error."""
    if theta.B.shape != theta0.B.shape or theta.b.shape != theta0.b.shape:
        raise DimensionError(f"shape mismatch: B {theta.B.shape} vs {theta0.B.shape}")
    dB = np.sqrt(((theta.B - theta0.B) ** 2).sum(axis=0)).max()
    proj = linalg.cho_solve((theta0.cholesky(), True), theta0.B_Y)
    dL = np.linalg.norm(proj @ (theta.Lambda - theta0.Lambda))
    db = np.linalg.norm(theta.b - theta0.b)
    return float(max(dB, dL, db))


def rel_fnorm(A, A0):
    """||A - A0||_F / ||A0||_F."""
    A, A0 = np.asarray(A, dtype=float), np.asarray(A0, dtype=float)
    if A.shape != A0.shape:
        raise DimensionError(f"shape mismatch {A.shape} vs {A0.shape}")
    ref = np.linalg.norm(A0)
    if ref == 0:
        raise NumericError("reference matrix has zero norm")
    return float(np.linalg.norm(A - A0) / ref)


def cosine_embeddings(E_hat, xi_bar):
    """Mean row-wise cosine similarity."""
    E_hat, xi_bar = np.atleast_2d(E_hat), np.atleast_2d(xi_bar)
    if E_hat.shape != xi_bar.shape:
        raise DimensionError(f"shape mismatch {E_hat.shape} vs {xi_bar.shape}")
    ne, nx = np.linalg.norm(E_hat, axis=1), np.linalg.norm(xi_bar, axis=1)
    if np.any(nx == 0) or np.any(ne == 0):
        raise NumericError("zero-norm embedding row")
    return float(np.mean(np.einsum("ik,ik->i", E_hat, xi_bar) / (ne * nx)))


def auc_score(scores, labels):
    """Mann-Whitney AUC with half credit for ties."""
    scores, labels = np.asarray(scores, dtype=float), np.asarray(labels).astype(int)
    n1 = int(labels.sum())
    n0 = labels.size - n1
    if n1 == 0 or n0 == 0:
        raise UndefinedMetricError("AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[labels == 1].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


def prauc_score(scores, labels):
    """Area under the step-wise precision-recall curve (average precision).

    Thresholds run over the distinct scores; tied scores enter together.
    """
    scores, labels = np.asarray(scores, dtype=float), np.asarray(labels).astype(int)
    n1 = int(labels.sum())
    if n1 == 0 or n1 == labels.size:
        raise UndefinedMetricError("PRAUC needs both classes")
    order = np.argsort(-scores, kind="mergesort")
    s, lab = scores[order], labels[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(lab)[last]
    fp = (last + 1) - tp
    precision = tp / (tp + fp)
    recall = tp / n1
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def brier_score(scores, labels):
    scores, labels = np.asarray(scores, dtype=float), np.asarray(labels, dtype=float)
    return float(np.mean((scores - labels) ** 2))


def classification_metrics(scores, labels):
    """``{"auc", "prauc", "brier"}``.

    With a single class present, raises :class:`UndefinedMetricError` whose
    ``brier`` attribute holds the (still defined) Brier score.
    """
    scores, labels = np.asarray(scores, dtype=float), np.asarray(labels)
    if scores.shape != labels.shape:
        raise DimensionError("scores and labels differ in length")
    if not np.all(np.isin(labels, (0, 1))):
        raise SchemaError("labels must be 0/1")
    brier = brier_score(scores, labels)
    try:
        auc = auc_score(scores, labels)
    except UndefinedMetricError as exc:
        exc.brier = brier
        raise
    return {"auc": auc, "prauc": prauc_score(scores, labels), "brier": brier}
