"""Correlated channel realizations and LMMSE estimation with pilot contamination.

Pilot model: user index k shares one pilot across all L cells, pilots are
orthogonal across k. BS l therefore observes, per pilot k, one training
vector y_lk = sum_m g_lmk + z_lk / sqrt(rho_tr), which feeds the estimates
of all same-pilot users (j, k) through ghat_ljk = Omega_ljk y_lk.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EstimationError
from .scenario import CovarianceSet


@dataclass(frozen=True)
class ChannelSet:
    """One realization of every link: g[l, j, k] = Rsqrt[l, j, k] @ h[l, j, k]."""

    g: np.ndarray  # (L, L, K, N) complex
    h: np.ndarray  # (L, L, K, N) complex, i.i.d. CN(0, 1) entries


@dataclass(frozen=True)
class EstimationModel:
    """Statistical quantities of the LMMSE estimator (no realizations).

    Omega[l, j, k] = R_ljk (sum_m R_lmk + I/rho_tr)^(-1) is the estimation
    filter, Psi its output covariance R Q^(-1) R, and Delta = R - Psi the
    error covariance.
    """

    Omega: np.ndarray  # (L, L, K, N, N)
    Psi: np.ndarray    # (L, L, K, N, N)
    Delta: np.ndarray  # (L, L, K, N, N)
    rho_tr: float


@dataclass(frozen=True)
class EstimateSet:
    """Channel estimates of one draw plus the estimator statistics."""

    ghat: np.ndarray   # (L, L, K, N)
    Omega: np.ndarray  # (L, L, K, N, N)
    Psi: np.ndarray    # (L, L, K, N, N)
    Delta: np.ndarray  # (L, L, K, N, N)


def _herm(a: np.ndarray) -> np.ndarray:
    return a.conj().swapaxes(-1, -2)


def complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    """I.i.d. circularly-symmetric complex Gaussian, unit variance per entry."""
    z = rng.standard_normal(tuple(shape) + (2,))
    return (z[..., 0] + 1j * z[..., 1]) / np.sqrt(2.0)


def draw_channel_batch(cov: CovarianceSet, n: int, rng: np.random.Generator):
    """Draw n joint realizations; returns (g, h) of shape (n, L, L, K, N)."""
    shape = cov.Rsqrt.shape[:-1]  # (L, L, K, N)
    h = complex_gaussian(rng, (n,) + shape)
    g = (cov.Rsqrt @ h[..., None])[..., 0]
    return g, h


def draw_channels(cov: CovarianceSet, seed: int) -> ChannelSet:
    """One correlated channel realization per link, deterministic in seed."""
    rng = np.random.default_rng(seed)
    g, h = draw_channel_batch(cov, 1, rng)
    return ChannelSet(g=g[0], h=h[0])


def estimation_model(cov: CovarianceSet, rho_tr: float) -> EstimationModel:
    """Compute Omega, Psi, Delta for every link from the covariances."""
    L, _, K, N, _ = cov.R.shape
    Q = cov.R.sum(axis=1)  # (L, K, N, N), sum over the UT-cell index
    if np.isfinite(rho_tr):
        Q = Q + np.eye(N) / rho_tr
    try:
        X = np.linalg.solve(Q[:, None], cov.R)  # X[l, j, k] = Q_lk^-1 R_ljk
    except np.linalg.LinAlgError as exc:
        raise EstimationError(
            "training correlation matrix is singular; this requires "
            "rho_tr = inf together with rank-deficient covariances") from exc
    Omega = _herm(X)
    Psi = cov.R @ X
    Psi = 0.5 * (Psi + _herm(Psi))
    Delta = cov.R - Psi
    Delta = 0.5 * (Delta + _herm(Delta))
    return EstimationModel(Omega=Omega, Psi=Psi, Delta=Delta, rho_tr=float(rho_tr))


def apply_estimator(model: EstimationModel, g: np.ndarray,
                    noise: np.ndarray) -> np.ndarray:
    """LMMSE estimates from channels g (..., L, L, K, N) and training noise
    (..., L, K, N); the observation y_lk is shared by all cells j."""
    scale = 0.0 if np.isinf(model.rho_tr) else 1.0 / np.sqrt(model.rho_tr)
    y = g.sum(axis=-3) + scale * noise
    y = np.expand_dims(y, -3)  # (..., L, 1, K, N), broadcast over j
    return (model.Omega @ y[..., None])[..., 0]


def estimate_channels(channels: ChannelSet, cov: CovarianceSet, rho_tr: float,
                      seed: int, model: EstimationModel | None = None) -> EstimateSet:
    """Estimate every link of one draw; deterministic in seed.

    Passing a precomputed model skips the per-call Omega/Psi/Delta solve.
    """
    if model is None:
        model = estimation_model(cov, rho_tr)
    L, _, K, N = channels.g.shape
    rng = np.random.default_rng(seed)
    noise = complex_gaussian(rng, (L, K, N))
    ghat = apply_estimator(model, channels.g, noise)
    return EstimateSet(ghat=ghat, Omega=model.Omega, Psi=model.Psi, Delta=model.Delta)
