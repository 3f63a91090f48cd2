"""Deterministic equivalents of the dual-uplink SINR from statistical CSI.

For N antennas and the multi-cell aware detector, the random resolvent
quadratic forms that make up the uplink SINR concentrate around
deterministic quantities as N grows. This module computes them:

* the per-cell fixed point (delta, T) of the resolvent trace equations,
* second-order (squared-resolvent) corrections T_check / T_tilde obtained
  through a linear system in the LK trace derivatives,
* the auxiliary traces against T and T_check,
* the per-unit-power interference coefficients and the resulting
  asymptotic uplink SINR of every user.

The interference coefficients keep all same-pilot couplings: every
estimate correlated with an interfering channel is extracted from the
resolvent as a rank-one (or 2x2 block) perturbation before the trace
limits are applied. Own-cell interferers are suppressed down to the
estimation-error level, other-cell same-pilot interferers are damped by
their own resolvent trace and keep an O(1/N) variance floor.

Everything here consumes covariance-level information only; no channel
realizations enter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .channel import EstimationModel
from .config import SystemConfig
from .errors import ConvergenceError, FeasibilityError
from .scenario import CovarianceSet

_REL_FLOOR = 1e-300


@dataclass(frozen=True)
class StatContext:
    """Per-drop statistical CSI bundle shared by all asymptotic evaluations.

    cross_cov[l, m, w] = R_lmw Q_lw^(-1) R_llw is the cross-covariance
    between the channel of same-pilot user (m, w) and the serving-cell
    estimate at BS l; it is power-independent and assembled once per drop.
    """

    cov: CovarianceSet
    model: EstimationModel
    cross_cov: np.ndarray  # (L, L, K, N, N)


@dataclass(frozen=True)
class DetEquilibrium:
    """All deterministic-equivalent quantities at one power allocation.

    Index convention: first axis is always the observing cell l; arrays
    carrying an interfering (cell, user) pair use axes (m, w); target-user
    axes are labelled q. kappa-flattened axes use kappa = m * K + w.
    """

    ul_powers: np.ndarray    # (L, K)
    T: np.ndarray            # (L, N, N), resolvent equivalent per cell
    delta: np.ndarray        # (L, L, K), power-weighted traces p_mw s_lmw
    psi_trace: np.ndarray    # (L, L, K), bare traces s_lmw = tr(Psi_lmw T_l)/N
    delta_check: np.ndarray  # (L, K), own-cell slice s_llq
    theta: np.ndarray        # (L, L, K) complex, tr(cross_cov_lmw T_l) / N
    T_check: np.ndarray      # (L, K, N, N), squared-resolvent equivalent
    T_tilde: np.ndarray      # (L, N, N), same with identity weight (q-free)
    epsilon: np.ndarray      # (L, K, L*K), trace-derivative solutions
    epsilon_tilde: np.ndarray  # (L, L*K)
    F: np.ndarray            # (L, L*K, L*K)
    f: np.ndarray            # (L, K, L*K)
    zeta: np.ndarray         # (L, K, L, K), tr(R_lmw T_check_lq) / N^2
    eta: np.ndarray          # (L, K, L, K), tr(Psi_lmw T_check_lq) / N^2
    mu: np.ndarray           # (L, K, L, K) complex, tr(cross_cov T_check)/N^2
    xi_bar: np.ndarray       # (L, K), asymptotic squared detector norm
    own_variance: np.ndarray  # (L, K), variance of the own-link inner product
    fp_residual: np.ndarray  # (L,), fixed-point residual actually achieved
    fp_iterations: np.ndarray  # (L,)


def stat_context(cov: CovarianceSet, model: EstimationModel) -> StatContext:
    L = cov.R.shape[0]
    cross = np.empty_like(cov.R)
    for l in range(L):
        own = model.Omega[l, l].conj().swapaxes(-1, -2)  # Q_lw^-1 R_llw
        cross[l] = cov.R[l] @ own[None]
    return StatContext(cov=cov, model=model, cross_cov=cross)


def _max_rel_change(new: np.ndarray, old: np.ndarray) -> float:
    return float(np.max(np.abs(new - old) / np.maximum(np.abs(old), _REL_FLOOR)))


def solve_fixed_point(psi: np.ndarray, delta_err: np.ndarray,
                      ul_powers: np.ndarray, tolerance: float = 1e-8,
                      max_iters: int = 1000,
                      delta_init: np.ndarray | None = None):
    """Solve the coupled trace fixed point of one cell.

    psi and delta_err hold Psi_lmw and Delta_lmw for all (m, w) as
    (L, K, N, N) arrays; ul_powers is (L, K). Starting from delta = 1
    (or a warm start), alternate

        T     = N (sum_mw p_mw (Psi_mw / (1 + delta_mw) + Delta_mw) + I)^(-1)
        delta = p_mw tr(Psi_mw T) / N

    until the largest relative change in delta is <= tolerance.

    Returns (delta, T, residual, iterations) where T is consistent with the
    returned delta and residual is the relative change one further sweep
    would produce.
    """
    N = psi.shape[-1]
    eye = np.eye(N)
    det_part = np.einsum("mw,mwab->ab", ul_powers, delta_err, optimize=True) + eye

    def t_of(delta):
        damped = ul_powers / (1.0 + delta)
        M = np.einsum("mw,mwab->ab", damped, psi, optimize=True)
        return N * np.linalg.inv(M + det_part)

    def delta_of(T):
        traces = np.einsum("mwab,ba->mw", psi, T, optimize=True).real
        return ul_powers * traces / N

    delta = np.ones_like(ul_powers) if delta_init is None else delta_init.copy()
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        delta_new = delta_of(t_of(delta))
        change = _max_rel_change(delta_new, delta)
        delta = delta_new
        if change <= tolerance:
            converged = True
            break
    T = t_of(delta)
    residual = _max_rel_change(delta_of(T), delta)
    if not converged:
        raise ConvergenceError(
            f"resolvent fixed point did not converge within {max_iters} "
            f"iterations (residual {residual:.3e})",
            residual=residual, iterations=iterations)
    T = 0.5 * (T + T.conj().T)
    return delta, T, residual, iterations


def _pair_traces(psi_flat: np.ndarray, T: np.ndarray) -> np.ndarray:
    """tr(Psi_k T Psi_k' T) for all pairs; real symmetric (LK, LK)."""
    A = psi_flat @ T                      # (LK, N, N)
    n_links, N, _ = A.shape
    X = A.reshape(n_links, N * N)
    Y = A.transpose(0, 2, 1).reshape(n_links, N * N)
    return (X @ Y.T).real


def _second_order_cell(delta: np.ndarray, T: np.ndarray, psi: np.ndarray,
                       ul_powers: np.ndarray, own_cell: int):
    """Per-cell second-order pieces shared by every target user q.

    Returns (F, lu, pair_tr, psi_flat) where lu factorizes I - F once for
    all right-hand sides.
    """
    L, K, N, _ = psi.shape
    n_links = L * K
    p_flat = ul_powers.reshape(n_links)
    d_flat = delta.reshape(n_links)
    psi_flat = psi.reshape(n_links, N, N)

    pair_tr = _pair_traces(psi_flat, T)
    F = (p_flat[:, None] * p_flat[None, :]) * pair_tr \
        / (N ** 2 * (1.0 + d_flat[None, :]) ** 2)
    radius = float(np.max(np.abs(np.linalg.eigvals(F)))) if np.any(F) else 0.0
    if radius >= 1.0:
        raise FeasibilityError(
            f"trace-derivative system is unstable in cell {own_cell} "
            f"(spectral radius {radius:.6f} >= 1)", spectral_radius=radius)
    lu = lu_factor(np.eye(n_links) - F)
    return F, lu, pair_tr, psi_flat


def second_order(delta: np.ndarray, T: np.ndarray, psi: np.ndarray,
                 ul_powers: np.ndarray, own_cell: int, q: int):
    """Squared-resolvent corrections of one cell for target user (own_cell, q).

    Returns (T_check, T_tilde, epsilon, F, f). T_check weights the
    correction by Psi_{l,l,q}; T_tilde is the same construction with the
    identity weight, which also replaces Psi_{l,l,q} inside the
    right-hand side f.
    """
    L, K, N, _ = psi.shape
    F, lu, pair_tr, psi_flat = _second_order_cell(delta, T, psi, ul_powers, own_cell)
    p_flat = ul_powers.reshape(L * K)
    d_flat = delta.reshape(L * K)

    own = own_cell * K + q
    f = p_flat * pair_tr[:, own] / N
    epsilon = lu_solve(lu, f)

    t_sq_traces = np.einsum("kab,ba->k", psi_flat @ T, T, optimize=True).real
    f_tilde = p_flat * t_sq_traces / N
    epsilon_tilde = lu_solve(lu, f_tilde)

    def sandwich(weight, eps):
        coeff = p_flat * eps / (N * (1.0 + d_flat) ** 2)
        inner = weight + np.einsum("k,kab->ab", coeff, psi_flat, optimize=True)
        out = T @ inner @ T
        return 0.5 * (out + out.conj().T)

    T_check = sandwich(psi[own_cell, q], epsilon)
    T_tilde = sandwich(np.eye(N), epsilon_tilde)
    return T_check, T_tilde, epsilon, F, f


def equilibrium(ctx: StatContext, ul_powers: np.ndarray, config: SystemConfig,
                delta_init: np.ndarray | None = None) -> DetEquilibrium:
    """Full set of deterministic equivalents for all cells and users.

    delta_init, when given, warm-starts the per-cell fixed points (shape
    (L, L, K)), which speeds up repeated evaluations along a power
    iteration.
    """
    Psi = ctx.model.Psi
    L, _, K, N, _ = Psi.shape
    n_links = L * K
    ul_powers = np.asarray(ul_powers, dtype=float).reshape(L, K)
    p_flat = ul_powers.reshape(n_links)

    T = np.empty((L, N, N), dtype=np.complex128)
    delta = np.empty((L, L, K))
    psi_trace = np.empty((L, L, K))
    theta = np.empty((L, L, K), dtype=np.complex128)
    T_check = np.empty((L, K, N, N), dtype=np.complex128)
    T_tilde = np.empty((L, N, N), dtype=np.complex128)
    epsilon = np.empty((L, K, n_links))
    epsilon_tilde = np.empty((L, n_links))
    F_all = np.empty((L, n_links, n_links))
    f_all = np.empty((L, K, n_links))
    zeta = np.empty((L, K, L, K))
    eta = np.empty((L, K, L, K))
    mu = np.empty((L, K, L, K), dtype=np.complex128)
    xi_bar = np.empty((L, K))
    own_variance = np.empty((L, K))
    fp_residual = np.empty(L)
    fp_iterations = np.empty(L, dtype=int)

    for l in range(L):
        init_l = None if delta_init is None else delta_init[l]
        delta_l, T_l, resid, iters = solve_fixed_point(
            Psi[l], ctx.model.Delta[l], ul_powers,
            tolerance=config.fp_tolerance, max_iters=config.fp_max_iters,
            delta_init=init_l)
        delta[l], T[l] = delta_l, T_l
        fp_residual[l], fp_iterations[l] = resid, iters

        psi_trace[l] = np.einsum(
            "mwab,ba->mw", Psi[l], T_l, optimize=True).real / N
        theta[l] = np.einsum(
            "mwab,ba->mw", ctx.cross_cov[l], T_l, optimize=True) / N

        F, lu, pair_tr, psi_flat = _second_order_cell(
            delta_l, T_l, Psi[l], ul_powers, l)
        F_all[l] = F

        own_cols = l * K + np.arange(K)
        A_flat = psi_flat @ T_l                                # Psi_k T
        f_q = p_flat[:, None] * pair_tr[:, own_cols] / N       # (LK, K)
        eps_q = lu_solve(lu, f_q)                              # (LK, K)
        f_all[l] = f_q.T
        epsilon[l] = eps_q.T

        t_sq_traces = np.einsum(
            "kab,ba->k", A_flat, T_l, optimize=True).real
        f_tilde = p_flat * t_sq_traces / N
        eps_tilde = lu_solve(lu, f_tilde)
        epsilon_tilde[l] = eps_tilde

        d_flat = delta_l.reshape(n_links)
        damp = N * (1.0 + d_flat) ** 2
        coeff_q = p_flat[:, None] * eps_q / damp[:, None]      # (LK, K)
        inner_q = Psi[l, l] + np.einsum(
            "kq,kab->qab", coeff_q, psi_flat, optimize=True)
        TW_q = T_l @ inner_q                                   # (K, N, N)
        Tc = TW_q @ T_l
        T_check[l] = 0.5 * (Tc + Tc.conj().swapaxes(-1, -2))

        coeff_tilde = p_flat * eps_tilde / damp
        inner_tilde = np.eye(N) + np.einsum(
            "k,kab->ab", coeff_tilde, psi_flat, optimize=True)
        Tt = T_l @ inner_tilde @ T_l
        T_tilde[l] = 0.5 * (Tt + Tt.conj().T)

        zeta[l] = np.einsum(
            "qab,mwba->qmw", T_check[l], ctx.cov.R[l], optimize=True).real \
            / N ** 2
        eta[l] = np.einsum(
            "qab,mwba->qmw", T_check[l], Psi[l], optimize=True).real / N ** 2
        mu[l] = np.einsum(
            "qab,mwba->qmw", T_check[l], ctx.cross_cov[l], optimize=True) \
            / N ** 2
        own_delta = delta_l[l]  # (K,)
        xi_bar[l] = np.einsum(
            "ab,qba->q", T_tilde[l], Psi[l, l], optimize=True).real \
            / (N ** 2 * (1.0 + own_delta) ** 2)
        qi = np.arange(K)
        own_variance[l] = _own_link_variance(
            T=T_l, T_tilde=T_tilde[l], A_flat=A_flat, psi_flat=psi_flat,
            pair_tr=pair_tr, lu=lu, eps_q=eps_q, eps_tilde=eps_tilde,
            TW_q=TW_q, p_flat=p_flat, d_flat=d_flat, own_cols=own_cols,
            var_z=eta[l, qi, l, qi], var_err=zeta[l, qi, l, qi] - eta[l, qi, l, qi],
            s=psi_trace[l, l], m0=xi_bar[l] * (1.0 + own_delta) ** 2,
            psi_own=Psi[l, l], N=N)

    return DetEquilibrium(
        ul_powers=ul_powers, T=T, delta=delta, psi_trace=psi_trace,
        delta_check=psi_trace[np.arange(L), np.arange(L)].copy(),
        theta=theta, T_check=T_check, T_tilde=T_tilde, epsilon=epsilon,
        epsilon_tilde=epsilon_tilde, F=F_all, f=f_all, zeta=zeta, eta=eta,
        mu=mu, xi_bar=xi_bar, own_variance=own_variance,
        fp_residual=fp_residual, fp_iterations=fp_iterations)


def _own_link_variance(T, T_tilde, A_flat, psi_flat, pair_tr, lu, eps_q,
                       eps_tilde, TW_q, p_flat, d_flat, own_cols, var_z,
                       var_err, s, m0, psi_own, N) -> np.ndarray:
    """Finite-N variance of the normalized own-link inner product v^H g.

    The normalized statistic is a ratio of quadratic forms in the own
    estimate, so its common scale mode cancels; a second-order expansion
    around the concentration point needs the joint fluctuation moments of
    the first- and second-order resolvent forms. The pure terms var_z and
    var_err come from the squared-resolvent equivalents directly; the
    mixed moment is the exact regularizer derivative of the squared-
    resolvent trace, obtained by the chain rule through the trace-
    derivative linear system (dT/dz = -T_tilde/N, d delta_k/dz =
    -epsilon_tilde_k/N); the fourth-order moment is scaled from its
    plain-product value preserving the mixed/pure alignment.
    """
    damp1 = 1.0 + d_flat

    # d/dz of the pair traces tr(Psi_a T Psi_b T): -2 Re tr(Psi_a Tt Psi_b T)/N
    B_flat = psi_flat @ T_tilde
    n_links = psi_flat.shape[0]
    Xb = B_flat.reshape(n_links, N * N)
    Ya = A_flat.transpose(0, 2, 1).reshape(n_links, N * N)
    pair_tr2 = Xb @ Ya.T
    pair_prime = -2.0 * pair_tr2.real / N

    F_prime = (p_flat[:, None] * p_flat[None, :]) \
        * (pair_prime + pair_tr * (2.0 * eps_tilde / (N * damp1))[None, :]) \
        / (N ** 2 * damp1[None, :] ** 2)
    f_prime = p_flat[:, None] * pair_prime[:, own_cols] / N
    eps_prime = lu_solve(lu, F_prime @ eps_q + f_prime)
    c_prime = p_flat[:, None] * (
        eps_prime / (N * damp1[:, None] ** 2)
        + 2.0 * eps_q * eps_tilde[:, None] / (N ** 2 * damp1[:, None] ** 3))

    W_prime = np.einsum("kq,kab->qab", c_prime, psi_flat, optimize=True)
    WT_q = TW_q.conj().swapaxes(-1, -2)            # W T, by Hermitian symmetry
    B_own = B_flat[own_cols]
    A_own = A_flat[own_cols]
    t1 = np.einsum("qab,qba->q", B_own, WT_q, optimize=True)
    t3 = np.einsum("qab,qbc,ca->q", A_own, W_prime, T, optimize=True)
    h_prime = (-2.0 * t1.real / N + t3.real) / N ** 2
    cov_zx = -0.5 * h_prime

    # plain-product (frozen) counterparts fix the fourth-order alignment
    PT = psi_own @ T
    XT = PT @ T
    vz_frozen = np.einsum("qab,qba->q", PT, PT).real / N ** 2
    czx_frozen = np.einsum("qab,qba->q", PT, XT).real / N ** 3
    vx_frozen = np.einsum("qab,qba->q", XT, XT).real / N ** 4

    safe = (vz_frozen > 0.0) & (czx_frozen > 0.0) & (m0 > 0.0)
    infl_z = np.where(safe, var_z / np.where(safe, vz_frozen, 1.0), 1.0)
    infl_c = np.where(safe, cov_zx / np.where(safe, czx_frozen, 1.0), 1.0)
    var_x = vx_frozen * infl_c ** 2 / np.maximum(infl_z, 1e-12)

    m0_safe = np.where(m0 > 0.0, m0, 1.0)
    var = (var_z + var_err + s ** 2 * var_x / (4.0 * m0_safe ** 2)
           - s * cov_zx / m0_safe) / m0_safe
    return np.where(m0 > 0.0, np.maximum(var, 0.0), 0.0)


def coupling_terms(eq: DetEquilibrium):
    """Per-unit-power interference coefficients of the asymptotic SINR.

    Returns (contamination, inter_stream):

    contamination[l, q, m] applies to same-pilot users (m, q), m != l:
    the damped squared cross trace |theta_lmq|^2 / (1 + delta_lmq)^2 plus
    the residual variance floor zeta - eta (1 - 1/(1+delta)^2). Entries at
    m = l are zero.

    inter_stream[l, q, m, w] applies to users on other pilots (w != q).
    The estimates of users (l, w) and (m, w) both correlate with the
    interfering channel g_lmw and sit inside the detector's system matrix,
    so both are extracted as a 2x2 block before taking trace limits; the
    closed form combines zeta, eta, mu, theta and the resolvent traces.
    Entries at w = q are zero.
    """
    L, K = eq.delta_check.shape
    p = eq.ul_powers
    s = eq.psi_trace                       # (L, M, W) bare traces
    phi = eq.theta                         # (L, M, W) complex
    dlt = eq.delta                         # (L, M, W) power-weighted

    # same-pilot contamination (w = q): damped mean plus variance floor
    zeta_pilot = np.einsum("lqmq->lqm", eq.zeta)
    eta_pilot = np.einsum("lqmq->lqm", eq.eta)
    phi_pilot = np.swapaxes(phi, 1, 2)                 # [l, q, m] = phi_lmq
    damp_pilot = np.swapaxes(1.0 + dlt, 1, 2) ** 2     # (1 + delta_lmq)^2
    contamination = (np.abs(phi_pilot) ** 2 / damp_pilot
                     + zeta_pilot - eta_pilot * (1.0 - 1.0 / damp_pilot))
    for l in range(L):
        contamination[l, :, l] = 0.0

    # inter-stream interference (w != q): 2x2 block extraction of the
    # (l, w) and (m, w) estimates; broadcast axes (l, q, m, w)
    p_own = p[:, None, None, :]                        # p_lw
    p_int = p[None, None, :, :]                        # p_mw
    s_own = s[np.arange(L), np.arange(L)][:, None, None, :]   # s_llw
    s_int = s[:, None, :, :]                           # s_lmw
    phi_b = phi[:, None, :, :]                         # phi_lmw

    det = ((1.0 + p_own * s_own) * (1.0 + p_int * s_int)
           - p_own * p_int * np.abs(phi_b) ** 2)
    wb1 = p_own * phi_b / det
    wb2 = p_int * ((1.0 + p_own * s_own) * s_int - p_own * np.abs(phi_b) ** 2) \
        / det

    eta_own = np.empty((L, K, K))
    for l in range(L):
        eta_own[l] = eq.eta[l, :, l, :]
    eta_own_b = eta_own[:, :, None, :]                 # eta at (l, q; l, w)

    cross = (np.conj(wb1) * eq.mu).real + wb2.real * eq.eta
    quad = (np.abs(wb1) ** 2 * eta_own_b
            + 2.0 * (np.conj(wb1) * eq.mu).real * wb2
            + wb2 ** 2 * eq.eta)
    inter_stream = eq.zeta - 2.0 * cross + quad

    # own-cell interferers (m = l): one extraction, residual at error level
    own_damp = (1.0 + dlt[np.arange(L), np.arange(L)]) ** 2    # (L, W)
    for l in range(L):
        inter_stream[l, :, l, :] = eq.zeta[l, :, l, :] \
            - eq.eta[l, :, l, :] * (1.0 - 1.0 / own_damp[l][None, :])

    for q in range(K):
        inter_stream[:, q, :, q] = 0.0
    return contamination, inter_stream


def asymptotic_ul_sinr(eq: DetEquilibrium, ul_powers: np.ndarray) -> np.ndarray:
    """Asymptotic dual-uplink SINR of every user, shape (L, K).

    Numerator: p_lq delta_check_lq^2. Denominator: same-pilot
    contamination from other cells, inter-stream interference, and the
    noise term xi_bar_lq (1 + delta_llq)^2.
    """
    L, K = eq.delta_check.shape
    p = np.asarray(ul_powers, dtype=float).reshape(L, K)

    contamination_coeff, inter_coeff = coupling_terms(eq)
    own_delta = eq.delta[np.arange(L), np.arange(L)]

    numerator = p * eq.delta_check ** 2
    contamination = np.einsum("mq,lqm->lq", p, contamination_coeff)
    inter_stream = np.einsum("mw,lqmw->lq", p, inter_coeff)
    noise = eq.xi_bar * (1.0 + own_delta) ** 2
    own_fluct = p * eq.own_variance * noise
    return numerator / (contamination + inter_stream + own_fluct + noise)
