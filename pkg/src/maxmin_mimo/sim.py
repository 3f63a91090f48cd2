"""Monte-Carlo engine: empirical SINRs, oracle checks, scheme experiments.

The central primitive is the moment-table pass: one sweep over joint
(channel, estimate, precoder) draws accumulates, for each precoding rule,

    mean_inner[jk, lq]   = E{ v_jk^H g_jlq }
    second_inner[jk, lq] = E{ |v_jk^H g_jlq|^2 }

from which every empirical uplink/downlink SINR and the duality operands
follow as cheap rational functions of the power vectors. All compared
schemes share one pass, i.e. common random numbers.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import power as power_mod
from . import rmt
from .channel import (EstimationModel, apply_estimator, complex_gaussian,
                      draw_channel_batch, estimation_model)
from .config import SystemConfig, db_to_linear
from .errors import ConvergenceError, FeasibilityError, MimoError
from .precoder import (default_rzf_alpha, mca_directions_batch,
                       mca_regularizers, rzf_directions_batch)
from .scenario import CovarianceSet, build_covariances, drop_users

_TRIAL_BATCH = 25  # fixed so that draw order (and output) is reproducible


class SchemeId(str, Enum):
    """The four compared precoding / power-allocation schemes."""

    RZF_UNIFORM = "RZF-uniform"
    RZF_MAXMIN = "RZF-maxmin"
    MCA_RZF_UNIFORM = "MCA-RZF-uniform"
    MCA_RZF_MAXMIN = "MCA-RZF-maxmin"


ALL_SCHEMES = tuple(SchemeId)


@dataclass(frozen=True)
class RzfPolicy:
    """Conventional per-cell RZF directions with regularization alpha."""

    alpha: float


@dataclass(frozen=True)
class McaPolicy:
    """Multi-cell aware directions built with dual-uplink powers."""

    ul_powers: np.ndarray  # (L, K)


@dataclass(frozen=True)
class MomentTables:
    """Sample moments of the detector/channel inner products.

    Row index of the tables is the detector's user jk = j*K + k, column is
    the interfering user lq = l*K + q.
    """

    mean_inner: np.ndarray     # (LK, LK) complex
    second_inner: np.ndarray   # (LK, LK) real
    u_norm_sq_mean: np.ndarray  # (L, K), mean squared pre-normalization norm
    trials: int
    shape: tuple               # (L, K)


def moment_tables(cov: CovarianceSet, model: EstimationModel,
                  policies: dict, mc_trials: int, seed) -> dict:
    """One Monte-Carlo pass shared by all direction policies.

    policies maps a name to an RzfPolicy or McaPolicy; the channel and
    estimation-noise draws are identical for every policy.
    """
    L, _, K, N, _ = cov.R.shape
    n_links = L * K
    rng = np.random.default_rng(seed)

    prepared = {}
    for name, pol in policies.items():
        if isinstance(pol, McaPolicy):
            p = np.asarray(pol.ul_powers, dtype=float).reshape(L, K)
            prepared[name] = ("mca", p, mca_regularizers(model.Delta, p))
        elif isinstance(pol, RzfPolicy):
            prepared[name] = ("rzf", float(pol.alpha), None)
        else:
            raise TypeError(f"unknown direction policy {pol!r}")

    mean_inner = {n: np.zeros((n_links, n_links), dtype=np.complex128)
                  for n in policies}
    second_inner = {n: np.zeros((n_links, n_links)) for n in policies}
    norm_acc = {n: np.zeros((L, K)) for n in policies}

    done = 0
    while done < mc_trials:
        b = min(_TRIAL_BATCH, mc_trials - done)
        g, _ = draw_channel_batch(cov, b, rng)
        noise = complex_gaussian(rng, (b, L, K, N))
        ghat = apply_estimator(model, g, noise)
        for name, (kind, arg, reg) in prepared.items():
            if kind == "mca":
                V, xi = mca_directions_batch(ghat, arg, reg)
            else:
                V, xi = rzf_directions_batch(ghat, arg)
            norm_acc[name] += xi.sum(axis=0)
            for j in range(L):
                channels_at_j = g[:, j].reshape(b, n_links, N)
                inner = V[:, j].conj() @ channels_at_j.swapaxes(-1, -2)
                rows = slice(j * K, (j + 1) * K)
                mean_inner[name][rows] += inner.sum(axis=0)
                second_inner[name][rows] += (np.abs(inner) ** 2).sum(axis=0)
        done += b

    out = {}
    for name in policies:
        out[name] = MomentTables(
            mean_inner=mean_inner[name] / mc_trials,
            second_inner=second_inner[name] / mc_trials,
            u_norm_sq_mean=norm_acc[name] / mc_trials,
            trials=mc_trials, shape=(L, K))
    return out


def empirical_ul_sinr_from_tables(tables: MomentTables,
                                  ul_powers: np.ndarray) -> np.ndarray:
    """Uplink SINR of every user at powers ul_powers, from stored moments."""
    L, K = tables.shape
    p = np.asarray(ul_powers, dtype=float).reshape(L * K)
    own = np.abs(np.diag(tables.mean_inner)) ** 2
    denom = tables.second_inner @ p - p * own + 1.0
    return (p * own / denom).reshape(L, K)


def empirical_dl_sinr_from_tables(tables: MomentTables,
                                  dl_powers: np.ndarray) -> np.ndarray:
    """Downlink SINR of every user at powers dl_powers, from stored moments.

    The downlink denominator sums the beams arriving at a user, i.e. the
    transposed coupling table.
    """
    L, K = tables.shape
    p = np.asarray(dl_powers, dtype=float).reshape(L * K)
    own = np.abs(np.diag(tables.mean_inner)) ** 2
    denom = tables.second_inner.T @ p - p * own + 1.0
    return (p * own / denom).reshape(L, K)


def empirical_ul_sinr(cov: CovarianceSet, model: EstimationModel, policy,
                      ul_powers: np.ndarray, mc_trials: int,
                      seed) -> np.ndarray:
    """Monte-Carlo uplink SINR estimate for one direction policy."""
    tables = moment_tables(cov, model, {"_": policy}, mc_trials, seed)["_"]
    return empirical_ul_sinr_from_tables(tables, ul_powers)


def empirical_dl_sinr(cov: CovarianceSet, model: EstimationModel, policy,
                      dl_powers: np.ndarray, mc_trials: int,
                      seed) -> np.ndarray:
    """Monte-Carlo downlink SINR estimate for one direction policy."""
    tables = moment_tables(cov, model, {"_": policy}, mc_trials, seed)["_"]
    return empirical_dl_sinr_from_tables(tables, dl_powers)


def min_rate(sinrs: np.ndarray) -> float:
    """Network-wide minimum achievable rate log2(1 + min SINR), bits/s/Hz."""
    sinrs = np.asarray(sinrs, dtype=float)
    if np.any(sinrs < 0.0):
        raise ValueError("SINRs must be nonnegative")
    return float(np.log2(1.0 + sinrs.min()))


# ---------------------------------------------------------------------------
# Resolvent oracle helpers (used by validation and tests, not the pipeline)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OracleState:
    """Per-draw regularized sample-covariance matrices and quadratic forms
    for one target user (l, q)."""

    Lambda: np.ndarray        # (N, N), full matrix at BS l
    Lambda_lq: np.ndarray     # (N, N), target user's rank-one removed
    resolvent_quad: complex   # ghat^H Lambda_lq^-1 ghat / N
    squared_quad: float       # ghat^H Lambda^-2 ghat / N^2


def oracle_state(ghat_l: np.ndarray, delta_l: np.ndarray,
                 ul_powers: np.ndarray, l: int, q: int) -> OracleState:
    """Build the resolvent matrices of one BS from one estimate draw.

    ghat_l and delta_l hold the estimates and error covariances seen at
    BS l, shapes (L, K, N) and (L, K, N, N).
    """
    L, K, N = ghat_l.shape
    p = np.asarray(ul_powers, dtype=float).reshape(L * K)
    G = ghat_l.reshape(L * K, N)
    Lam = ((G.T * p) @ G.conj()
           + np.einsum("k,kab->ab", p, delta_l.reshape(L * K, N, N),
                       optimize=True)
           + np.eye(N)) / N
    target = G[l * K + q]
    Lam_lq = Lam - p[l * K + q] * np.outer(target, target.conj()) / N
    x = np.linalg.solve(Lam_lq, target)
    quad1 = complex(target.conj() @ x) / N
    y = np.linalg.solve(Lam, target)
    quad2 = float((y.conj() @ np.linalg.solve(Lam, y)).real) / N ** 2
    return OracleState(Lambda=Lam, Lambda_lq=Lam_lq,
                       resolvent_quad=quad1, squared_quad=quad2)


@dataclass(frozen=True)
class OracleReport:
    """Relative errors of the asymptotic quantities against Monte-Carlo."""

    xi_rel: np.ndarray             # (L, K)
    useful_rel: np.ndarray         # (L, K)
    contamination_rel: np.ndarray  # (L, K, L) over m != l, nan elsewhere
    interference_rel: np.ndarray   # (L, K, L, K) over w != q, nan elsewhere

    def max_errors(self) -> dict:
        return {
            "xi": float(np.nanmax(self.xi_rel)),
            "useful": float(np.nanmax(self.useful_rel)),
            "contamination": float(np.nanmax(self.contamination_rel))
            if not np.all(np.isnan(self.contamination_rel)) else float("nan"),
            "interference": float(np.nanmax(self.interference_rel))
            if not np.all(np.isnan(self.interference_rel)) else float("nan"),
        }


def resolvent_oracle_report(cov: CovarianceSet, model: EstimationModel,
                           eq: rmt.DetEquilibrium, ul_powers: np.ndarray,
                           trials: int, seed) -> OracleReport:
    """Compare each asymptotic building block with its empirical moment.

    Runs one Monte-Carlo pass with the multi-cell aware directions at the
    given powers and reports elementwise relative errors for the squared
    detector norm, the useful-signal mean, the same-pilot contamination
    powers and the inter-stream interference powers.
    """
    L, _, K, _, _ = cov.R.shape
    p = np.asarray(ul_powers, dtype=float).reshape(L, K)
    tables = moment_tables(cov, model, {"mca": McaPolicy(p)}, trials, seed)["mca"]

    own_delta = eq.delta[np.arange(L), np.arange(L)]
    denomvec = eq.xi_bar * (1.0 + own_delta) ** 2

    xi_det = eq.xi_bar
    xi_emp = tables.u_norm_sq_mean
    xi_rel = np.abs(xi_emp - xi_det) / np.abs(xi_det)

    useful_det = eq.delta_check / (np.sqrt(eq.xi_bar) * (1.0 + own_delta))
    useful_emp = np.diag(tables.mean_inner).real.reshape(L, K)
    useful_rel = np.abs(useful_emp - useful_det) / np.abs(useful_det)

    second = tables.second_inner.reshape(L, K, L, K)
    contamination_coeff, inter_coeff = rmt.coupling_terms(eq)

    contamination_rel = np.full((L, K, L), np.nan)
    for l in range(L):
        for m in range(L):
            if m == l:
                continue
            det = contamination_coeff[l, :, m] / denomvec[l]  # (K,)
            emp = second[l, np.arange(K), m, np.arange(K)]
            contamination_rel[l, :, m] = np.abs(emp - det) / np.abs(det)

    interference_rel = np.full((L, K, L, K), np.nan)
    for q in range(K):
        det = inter_coeff[:, q, :, :] / denomvec[:, q, None, None]  # (L, L, K)
        emp = second[:, q, :, :]
        rel = np.abs(emp - det) / np.maximum(np.abs(det), 1e-300)
        rel[:, :, q] = np.nan  # same-pilot column belongs to contamination
        interference_rel[:, q] = rel
    return OracleReport(xi_rel=xi_rel, useful_rel=useful_rel,
                        contamination_rel=contamination_rel,
                        interference_rel=interference_rel)


# ---------------------------------------------------------------------------
# Scheme pipelines and the experiment driver
# ---------------------------------------------------------------------------

@dataclass
class SchemePointResult:
    scheme: str
    sweep_value: float
    min_rate: float | None            # mean over drops, None when failed
    per_drop_min_rate: list = field(default_factory=list)
    per_ut_sinr: list = field(default_factory=list)  # one (L, K) list per drop
    failed: bool = False
    error: str | None = None


@dataclass
class ExperimentResult:
    sweep_name: str                   # "rho_db" or "antennas"
    sweep_values: tuple
    schemes: tuple                    # SchemeId values, fixed order
    points: list                      # SchemePointResult, scheme-major order
    config: SystemConfig
    n_drops: int
    mc_trials: int
    master_seed: int
    wall_time_s: float = 0.0

    def point(self, scheme, sweep_value) -> SchemePointResult:
        key = scheme.value if isinstance(scheme, SchemeId) else str(scheme)
        for p in self.points:
            if p.scheme == key and p.sweep_value == sweep_value:
                return p
        raise KeyError((scheme, sweep_value))


def _point_config(config: SystemConfig, sweep_name: str, value) -> SystemConfig:
    if sweep_name == "rho_db":
        rho = db_to_linear(float(value))
        return config.with_updates(rho_dl=rho, rho_tr=rho)
    if sweep_name == "antennas":
        return config.with_updates(N=int(value))
    raise ValueError(f"unknown sweep variable {sweep_name!r}")


def run_drop(config: SystemConfig, schemes, geom_seed: int, trial_seed) -> dict:
    """Full per-drop pipeline; returns {scheme value: (L, K) SINR array or
    error string}."""
    schemes = [SchemeId(s) for s in schemes]
    L, K = config.L, config.K
    geometry = drop_users(config, geom_seed)
    cov = build_covariances(geometry, config)
    model = estimation_model(cov, config.rho_tr)

    uniform = np.full((L, K), config.rho_dl)
    policies: dict = {}
    dl_allocations: dict = {}
    errors: dict = {}

    if SchemeId.RZF_UNIFORM in schemes or SchemeId.RZF_MAXMIN in schemes:
        policies["rzf"] = RzfPolicy(default_rzf_alpha(K, config.N, config.rho_dl))
    if SchemeId.MCA_RZF_UNIFORM in schemes:
        policies["mca_uniform"] = McaPolicy(uniform)
        dl_allocations[SchemeId.MCA_RZF_UNIFORM] = ("mca_uniform", uniform)
    if SchemeId.RZF_UNIFORM in schemes:
        dl_allocations[SchemeId.RZF_UNIFORM] = ("rzf", uniform)

    ctx = None
    if SchemeId.MCA_RZF_MAXMIN in schemes:
        try:
            ctx = rmt.stat_context(cov, model)
            evaluator = AsymptoticSinrEvaluator(ctx, config)
            solution = power_mod.maxmin_ul_powers(evaluator, config)
            eq_final = evaluator.last_equilibrium
            data = power_mod.duality_operands_asymptotic(
                eq_final, solution.ul_sinr)
            p_bar = power_mod.dl_powers(data).reshape(L, K)
            solution.dl_powers = p_bar
            policies["mca_maxmin"] = McaPolicy(solution.ul_powers)
            dl_allocations[SchemeId.MCA_RZF_MAXMIN] = ("mca_maxmin", p_bar)
        except (FeasibilityError, ConvergenceError) as exc:
            errors[SchemeId.MCA_RZF_MAXMIN] = f"{type(exc).__name__}: {exc}"

    tables = moment_tables(cov, model, policies, config.mc_trials, trial_seed)

    if SchemeId.RZF_MAXMIN in schemes:
        try:
            rzf_tables = tables["rzf"]
            solution = power_mod.maxmin_ul_powers(
                lambda p: empirical_ul_sinr_from_tables(rzf_tables, p), config)
            data = power_mod.duality_operands_empirical(
                rzf_tables.mean_inner, rzf_tables.second_inner,
                solution.ul_sinr)
            p_dl = power_mod.dl_powers(data).reshape(L, K)
            solution.dl_powers = p_dl
            dl_allocations[SchemeId.RZF_MAXMIN] = ("rzf", p_dl)
        except (FeasibilityError, ConvergenceError) as exc:
            errors[SchemeId.RZF_MAXMIN] = f"{type(exc).__name__}: {exc}"

    out: dict = {}
    for scheme in schemes:
        if scheme in errors:
            out[scheme.value] = errors[scheme]
            continue
        policy_name, p_dl = dl_allocations[scheme]
        sinr = empirical_dl_sinr_from_tables(tables[policy_name], p_dl)
        out[scheme.value] = sinr
    return out


class AsymptoticSinrEvaluator:
    """Statistical-CSI SINR functional with warm-started fixed points.

    Keeps the deterministic equilibrium of the last evaluated power vector,
    so the duality operands can reuse it without another solve.
    """

    def __init__(self, ctx: rmt.StatContext, config: SystemConfig):
        self.ctx = ctx
        self.config = config
        self.last_equilibrium: rmt.DetEquilibrium | None = None

    def __call__(self, ul_powers: np.ndarray) -> np.ndarray:
        warm = None if self.last_equilibrium is None \
            else self.last_equilibrium.delta
        eq = rmt.equilibrium(self.ctx, ul_powers, self.config, delta_init=warm)
        self.last_equilibrium = eq
        return rmt.asymptotic_ul_sinr(eq, ul_powers)


def _drop_task(args):
    config, schemes, geom_seed, trial_seed = args
    try:
        return run_drop(config, schemes, geom_seed, trial_seed)
    except MimoError as exc:
        message = f"{type(exc).__name__}: {exc}"
        return {scheme: message for scheme in schemes}


def run_experiment(config: SystemConfig, sweep_name: str, sweep_values,
                   schemes=ALL_SCHEMES, n_drops: int = 20,
                   workers: int = 1) -> ExperimentResult:
    """Run every scheme over the sweep grid, averaging min-rate over drops.

    Deterministic given (config, seed): per-(point, drop) seeds derive from
    config.seed by index, and results are reduced in drop order regardless
    of scheduling. One drop failure marks that scheme's point as failed
    without aborting the sweep.
    """
    start = time.monotonic()
    schemes = tuple(SchemeId(s) for s in schemes)
    sweep_values = tuple(sweep_values)

    tasks = []
    for p_idx, value in enumerate(sweep_values):
        cfg_point = _point_config(config, sweep_name, value)
        for d_idx in range(n_drops):
            ss = np.random.SeedSequence([config.seed, p_idx, d_idx])
            geom_seed, trial_seed = (int(s) for s in ss.generate_state(2))
            tasks.append((cfg_point, [s.value for s in schemes],
                          geom_seed, trial_seed))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            drop_outputs = list(pool.map(_drop_task, tasks))
    else:
        drop_outputs = [_drop_task(t) for t in tasks]

    points = []
    for scheme in schemes:
        for p_idx, value in enumerate(sweep_values):
            result = SchemePointResult(scheme=scheme.value,
                                       sweep_value=float(value),
                                       min_rate=None)
            for d_idx in range(n_drops):
                output = drop_outputs[p_idx * n_drops + d_idx][scheme.value]
                if isinstance(output, str):
                    result.failed = True
                    result.error = output
                    break
                result.per_drop_min_rate.append(min_rate(output))
                result.per_ut_sinr.append(np.asarray(output).tolist())
            if not result.failed:
                result.min_rate = float(np.mean(result.per_drop_min_rate))
            else:
                result.per_drop_min_rate = []
                result.per_ut_sinr = []
            points.append(result)

    return ExperimentResult(
        sweep_name=sweep_name, sweep_values=sweep_values,
        schemes=tuple(s.value for s in schemes), points=points, config=config,
        n_drops=n_drops, mc_trials=config.mc_trials, master_seed=config.seed,
        wall_time_s=time.monotonic() - start)
