"""Multi-cell aware RZF precoding vectors and the conventional RZF baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import EstimateSet
from .errors import NumericalError

_SOLVE_RESIDUAL_BOUND = 1e-8


@dataclass(frozen=True)
class PrecoderSet:
    """Unit-norm precoding vectors V[l, k] and pre-normalization norms."""

    V: np.ndarray          # (L, K, N) complex, unit-norm rows
    u_norm_sq: np.ndarray  # (L, K), squared norm before normalization


def _herm(a: np.ndarray) -> np.ndarray:
    return a.conj().swapaxes(-1, -2)


def mca_regularizers(Delta: np.ndarray, ul_powers: np.ndarray) -> np.ndarray:
    """Per-cell deterministic part sum_lq p_lq Delta[j, l, q] + I of the
    multi-cell aware system matrix; shape (L, N, N)."""
    N = Delta.shape[-1]
    reg = np.einsum("mw,jmwab->jab", ul_powers, Delta, optimize=True)
    return reg + np.eye(N)


def mca_directions_batch(ghat: np.ndarray, ul_powers: np.ndarray,
                         regularizers: np.ndarray):
    """Multi-cell aware directions for a batch of estimate draws.

    ghat has shape (..., L, L, K, N). Returns (V, u_norm_sq) with shapes
    (..., L, K, N) and (..., L, K). Each cell's Hermitian system matrix is
    assembled and factored once and reused for all K right-hand sides.
    """
    L, _, K, N = ghat.shape[-4:]
    p_flat = ul_powers.reshape(L * K)
    V = np.empty(ghat.shape[:-4] + (L, K, N), dtype=ghat.dtype)
    xi = np.empty(ghat.shape[:-4] + (L, K))
    for j in range(L):
        Gj = ghat[..., j, :, :, :].reshape(ghat.shape[:-4] + (L * K, N))
        Z = (Gj.swapaxes(-1, -2) * p_flat) @ Gj.conj() + regularizers[j]
        B = ghat[..., j, j, :, :].swapaxes(-1, -2)  # (..., N, K)
        U = np.linalg.solve(Z, B)
        residual = np.linalg.norm(Z @ U - B, axis=(-2, -1))
        scale = np.linalg.norm(B, axis=(-2, -1))
        if np.any(residual > _SOLVE_RESIDUAL_BOUND * np.maximum(scale, 1e-300)):
            raise NumericalError(
                f"precoder solve residual exceeded {_SOLVE_RESIDUAL_BOUND:g} "
                f"in cell {j}")
        norm_sq = np.sum(np.abs(U) ** 2, axis=-2)  # (..., K)
        if np.any(norm_sq <= 0.0):
            raise NumericalError(
                f"zero-norm direction in cell {j}; the serving-cell estimate "
                "vanished")
        V[..., j, :, :] = (U / np.sqrt(norm_sq)[..., None, :]).swapaxes(-1, -2)
        xi[..., j, :] = norm_sq
    return V, xi


def rzf_directions_batch(ghat: np.ndarray, alpha: float):
    """Conventional per-cell RZF directions from serving-cell estimates only.

    Columns of (Ghat_ll Ghat_ll^H + N alpha I)^(-1) Ghat_ll, normalized.
    """
    L, _, K, N = ghat.shape[-4:]
    V = np.empty(ghat.shape[:-4] + (L, K, N), dtype=ghat.dtype)
    xi = np.empty(ghat.shape[:-4] + (L, K))
    eye = N * alpha * np.eye(N)
    for l in range(L):
        G = ghat[..., l, l, :, :].swapaxes(-1, -2)  # (..., N, K)
        Z = G @ _herm(G) + eye
        U = np.linalg.solve(Z, G)
        norm_sq = np.sum(np.abs(U) ** 2, axis=-2)
        if np.any(norm_sq <= 0.0):
            raise NumericalError(f"zero-norm RZF direction in cell {l}")
        V[..., l, :, :] = (U / np.sqrt(norm_sq)[..., None, :]).swapaxes(-1, -2)
        xi[..., l, :] = norm_sq
    return V, xi


def mca_rzf_vectors(est: EstimateSet, ul_powers: np.ndarray) -> PrecoderSet:
    """Detector/precoder vectors v_jk from the estimates of one draw.

    v_jk is the normalized solution of
    (sum_lq p_lq (ghat_jlq ghat_jlq^H + Delta_jlq) + I) u = ghat_jjk,
    with dual-uplink powers p_lq >= 0.
    """
    ul_powers = np.asarray(ul_powers, dtype=float)
    L, _, K, N = est.ghat.shape
    if ul_powers.shape != (L, K):
        ul_powers = ul_powers.reshape(L, K)
    if np.any(ul_powers < 0.0):
        raise ValueError("ul_powers must be nonnegative")
    reg = mca_regularizers(est.Delta, ul_powers)
    V, xi = mca_directions_batch(est.ghat, ul_powers, reg)
    return PrecoderSet(V=V, u_norm_sq=xi)


def conventional_rzf_vectors(est: EstimateSet, alpha: float) -> PrecoderSet:
    """Baseline RZF precoder, regularized by N*alpha, columns normalized."""
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    V, xi = rzf_directions_batch(est.ghat, alpha)
    return PrecoderSet(V=V, u_norm_sq=xi)


def default_rzf_alpha(K: int, N: int, rho_dl: float) -> float:
    """Sum-power-motivated regularization K / (N rho_dl)."""
    return K / (N * rho_dl)
