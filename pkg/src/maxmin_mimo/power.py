"""Max-min uplink power iteration and uplink/downlink duality.

The max-min allocation runs the normalize-and-invert iteration: divide
each user's power by its SINR, then rescale so the largest power hits the
per-user cap rho_dl. Any fixed point of that iteration equalizes all
SINRs. The downlink powers achieving the same per-user SINRs for the same
sum power come from the linear system p = (I - diag(a) A^T)^(-1) a, whose
operands exist in an empirical (sample-moment) and an asymptotic
(statistical-CSI) form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rmt
from .config import SystemConfig
from .errors import FeasibilityError

_SINR_FLOOR = 1e-12


@dataclass
class PowerSolution:
    """Outcome of the max-min uplink power iteration."""

    ul_powers: np.ndarray   # (L, K)
    ul_sinr: np.ndarray     # (L, K), evaluated at ul_powers
    dl_powers: np.ndarray | None  # (L, K), filled by the duality step
    iterations: int
    converged: bool
    history: list           # min-SINR at each evaluated iterate


@dataclass(frozen=True)
class DualityData:
    """Operands of the downlink power linear system, flat user order
    kappa = cell * K + user."""

    a: np.ndarray  # (LK,)
    A: np.ndarray  # (LK, LK)
    kind: str      # "empirical" or "asymptotic"


def maxmin_ul_powers(sinr_fn, config: SystemConfig) -> PowerSolution:
    """Maximize the minimum SINR under the per-user cap rho_dl.

    sinr_fn maps an (L, K) power array to the (L, K) SINRs; it may be the
    asymptotic evaluator or an empirical-moment one. Starts from all
    powers at the cap and stops when the relative power change drops below
    config.maxmin_epsilon or after config.maxmin_max_iters updates.
    """
    rho = config.rho_dl
    p = np.full((config.L, config.K), rho)
    history = []
    converged = False
    iterations = 0
    for iterations in range(1, config.maxmin_max_iters + 1):
        sinr = np.asarray(sinr_fn(p), dtype=float)
        if np.any((sinr <= _SINR_FLOOR) & (p > 0.0)):
            raise FeasibilityError(
                "a user with positive power has (numerically) zero SINR; "
                "the instance is infeasible (isolated user)")
        history.append(float(sinr.min()))
        p_new = p / sinr
        p_new = rho * (p_new / p_new.max())
        change = float(np.linalg.norm(p_new - p) / np.linalg.norm(p))
        p = p_new
        if change <= config.maxmin_epsilon:
            converged = True
            break
    final_sinr = np.asarray(sinr_fn(p), dtype=float)
    history.append(float(final_sinr.min()))
    return PowerSolution(ul_powers=p, ul_sinr=final_sinr, dl_powers=None,
                         iterations=iterations, converged=converged,
                         history=history)


def duality_operands_empirical(mean_inner: np.ndarray, second_inner: np.ndarray,
                               ul_sinr: np.ndarray) -> DualityData:
    """Assemble (a, A) from sample moments of the detector inner products.

    mean_inner[jk, lq] = E{v_jk^H g_jlq} and second_inner the corresponding
    second absolute moments; ul_sinr holds the target per-user SINRs. The
    diagonal of A is the variance of the own-link inner product.
    """
    targets = np.asarray(ul_sinr, dtype=float).reshape(-1)
    own = np.abs(np.diag(mean_inner)) ** 2
    if np.any((own <= 0.0) & (targets > 0.0)):
        raise FeasibilityError(
            "a user with positive target SINR has zero mean channel gain")
    a = np.divide(targets, own, out=np.zeros_like(targets), where=own > 0.0)
    A = second_inner.copy().astype(float)
    A[np.diag_indices_from(A)] -= own
    return DualityData(a=a, A=A, kind="empirical")


def duality_operands_asymptotic(eq: rmt.DetEquilibrium,
                                ul_sinr: np.ndarray) -> DualityData:
    """Assemble (a, A) from the deterministic equivalents.

    a_lq = xi_bar (1 + delta_llq)^2 SINR_lq / delta_check_lq^2, with the
    own-link variance folded in by exact diagonal elimination
    (a <- a / (1 - a var)), so that the coupling matrix keeps a zero
    diagonal: same-pilot contamination entries for m != l with w = q, and
    the inter-stream entries for w != q.
    """
    L, K = eq.delta_check.shape
    targets = np.asarray(ul_sinr, dtype=float).reshape(L, K)
    own_delta = eq.delta[np.arange(L), np.arange(L)]
    denomvec = eq.xi_bar * (1.0 + own_delta) ** 2       # (L, K)

    a_raw = denomvec * targets / eq.delta_check ** 2
    margin = 1.0 - a_raw * eq.own_variance
    if np.any((margin <= 0.0) & (targets > 0.0)):
        raise FeasibilityError(
            "target SINR exceeds the finite-N own-link fluctuation limit")
    a = np.divide(a_raw, margin, out=np.zeros_like(a_raw),
                  where=margin > 0.0).reshape(L * K)

    contamination, inter_stream = rmt.coupling_terms(eq)
    A = inter_stream / denomvec[:, :, None, None]       # (L, K, L, K)
    for q in range(K):
        A[:, q, :, q] = contamination[:, q, :] / denomvec[:, q, None]
    return DualityData(a=a, A=A.reshape(L * K, L * K), kind="asymptotic")


def dl_powers(operands: DualityData) -> np.ndarray:
    """Solve p = (I - diag(a) A^T)^(-1) a and verify feasibility.

    Raises FeasibilityError carrying the offending spectral radius when
    diag(a) A^T has radius >= 1 or the solution has a negative entry.
    """
    a, A = operands.a, operands.A
    n = a.size
    M = a[:, None] * A.T
    radius = float(np.max(np.abs(np.linalg.eigvals(M)))) if np.any(M) else 0.0
    if radius >= 1.0:
        raise FeasibilityError(
            f"downlink power system infeasible: spectral radius "
            f"{radius:.6f} >= 1", spectral_radius=radius)
    p = np.linalg.solve(np.eye(n) - M, a)
    if np.any(p < -1e-12 * max(1.0, float(np.max(np.abs(p))))):
        raise FeasibilityError(
            f"downlink power system produced a negative power "
            f"(min {p.min():.3e})", spectral_radius=radius)
    return np.maximum(p, 0.0)
