"""Semi-supervised estimation and embedding for high-dimensional counts.

The model: counts ``X ~ Poisson(exp(V (B (1, U, Y) + W)))`` with a known
code-embedding basis ``V``, a Gaussian random effect ``W ~ N(0, Lambda)``
and a binary label ``Y | U ~ Bernoulli(expit(b'(1, U)))`` that is observed
for only part of the sample.
"""
__version__ = "0.1.0"

from ._backend import BACKEND
from .core import (ConstraintSpec, Dataset, EmbeddingBasis, GVAState, ModelParams, elbo, elbo_gradients,
                   orthonormalize_basis, snr)
from .em import EmConfig, Responsibilities, e_step, fit_score, fit_unsupervised, m_step
from .gva import GvaFitConfig, fit_gva_subject, profile_Q
from .metrics import classification_metrics, cosine_embeddings, err_theta, rel_fnorm
from .predict import EmbeddingEstimate, embed, predict_batch, predict_proba
from .quadrature import loglik_quadrature
from .simulate import SimConfig, SimTruth, gen_basis, gen_dataset
from .supervised import FitReport, SupFitConfig, fit_supervised, init_supervised

__all__ = [
    "BACKEND", "ConstraintSpec", "Dataset", "EmbeddingBasis", "GVAState", "ModelParams", "elbo",
    "elbo_gradients", "orthonormalize_basis", "snr", "EmConfig", "Responsibilities", "e_step", "fit_score",
    "fit_unsupervised", "m_step", "GvaFitConfig", "fit_gva_subject", "profile_Q", "classification_metrics",
    "cosine_embeddings", "err_theta", "rel_fnorm", "EmbeddingEstimate", "embed", "predict_batch",
    "predict_proba", "loglik_quadrature", "SimConfig", "SimTruth", "gen_basis", "gen_dataset", "FitReport",
    "SupFitConfig", "fit_supervised", "init_supervised",
]
