"""Self-contained oracle and property battery behind the validate subcommand.

Each check is deterministic (fixed seeds) and small enough to run in a few
seconds; together they exercise the same invariants the test suite pins
down, without requiring pytest.
"""

from __future__ import annotations

import numpy as np

from . import power, rmt
from .channel import estimation_model
from .cli import computed_golden_values, golden_values
from .config import SystemConfig, db_to_linear
from .precoder import mca_rzf_vectors
from .scenario import build_covariances, drop_users
from .sim import McaPolicy, empirical_ul_sinr_from_tables, moment_tables


def _scenario(L=2, K=3, N=16, rho_db=10.0, seed=5):
    rho = db_to_linear(rho_db)
    cfg = SystemConfig(L=L, K=K, N=N, rho_dl=rho, rho_tr=rho, seed=seed)
    geo = drop_users(cfg, seed=seed)
    cov = build_covariances(geo, cfg)
    model = estimation_model(cov, cfg.rho_tr)
    return cfg, cov, model


def check_golden():
    analytic = golden_values()
    numeric = computed_golden_values()
    worst = max(abs(numeric[k] - analytic[k]) for k in analytic)
    assert worst <= 1e-8, f"golden mismatch {worst:.2e}"


def check_covariance_invariants():
    cfg, cov, _ = _scenario(N=12)
    herm = np.abs(cov.R - cov.R.conj().swapaxes(-1, -2)).max()
    assert herm <= 1e-12 * np.abs(cov.R).max(), "covariances not Hermitian"
    eigs = np.linalg.eigvalsh(cov.R.reshape(-1, cfg.N, cfg.N))
    assert eigs.min() >= -1e-10 * eigs.max(), "covariance not PSD"
    rebuilt = cov.Rsqrt @ cov.Rsqrt.conj().swapaxes(-1, -2)
    err = np.linalg.norm(rebuilt - cov.R) / np.linalg.norm(cov.R)
    assert err <= 1e-10, f"square-root mismatch {err:.2e}"


def check_fixed_point_residual():
    cfg, cov, model = _scenario()
    ctx = rmt.stat_context(cov, model)
    p = np.full((cfg.L, cfg.K), cfg.rho_dl)
    eq = rmt.equilibrium(ctx, p, cfg)
    assert eq.fp_residual.max() <= cfg.fp_tolerance, \
        f"fixed-point residual {eq.fp_residual.max():.2e}"


def check_precoder_norms():
    cfg, cov, model = _scenario()
    from .channel import draw_channels, estimate_channels
    channels = draw_channels(cov, seed=9)
    est = estimate_channels(channels, cov, cfg.rho_tr, seed=10, model=model)
    pre = mca_rzf_vectors(est, np.full((cfg.L, cfg.K), cfg.rho_dl))
    norms = np.linalg.norm(pre.V, axis=-1)
    assert np.abs(norms - 1.0).max() <= 1e-10, "precoder columns not unit norm"
    assert pre.u_norm_sq.min() > 0.0


def check_power_iteration():
    cfg, cov, model = _scenario()
    ctx = rmt.stat_context(cov, model)
    evaluator = lambda p: rmt.asymptotic_ul_sinr(
        rmt.equilibrium(ctx, p, cfg), p)
    seen = []
    def recording(p):
        seen.append(p.copy())
        return evaluator(p)
    solution = power.maxmin_ul_powers(recording, cfg)
    for p in seen[1:]:
        assert p.max() == cfg.rho_dl, "per-user power cap violated"
    mins = solution.history
    assert all(b >= a - 1e-9 for a, b in zip(mins, mins[1:])), \
        "min-SINR not monotone"


def check_duality_hand_case():
    a = np.array([0.5, 0.5])
    A = np.array([[0.0, 0.3], [0.3, 0.0]])
    p = power.dl_powers(power.DualityData(a=a, A=A, kind="empirical"))
    expected = 0.5 / (1 - 0.5 * 0.3)
    assert np.abs(p - expected).max() <= 1e-12, "2x2 duality mismatch"


def check_duality_consistency():
    cfg, cov, model = _scenario()
    ctx = rmt.stat_context(cov, model)
    p = np.full((cfg.L, cfg.K), cfg.rho_dl)
    eq = rmt.equilibrium(ctx, p, cfg)
    targets = rmt.asymptotic_ul_sinr(eq, p)
    data = power.duality_operands_asymptotic(eq, targets)
    assert np.abs(np.diag(data.A)).max() == 0.0, "coupling diagonal not zero"
    p_flat = p.reshape(-1)
    residual = p_flat - data.a * (data.A @ p_flat + 1.0)
    assert np.abs(residual).max() <= 1e-8 * cfg.rho_dl, \
        "duality fixed-point identity violated"
    p_dl = power.dl_powers(data)
    assert abs(p_dl.sum() - p_flat.sum()) <= 1e-6 * p_flat.sum(), \
        "sum power not preserved"


def check_asymptotic_vs_mc():
    cfg, cov, model = _scenario(L=2, K=3, N=32, seed=3)
    ctx = rmt.stat_context(cov, model)
    p = np.full((cfg.L, cfg.K), cfg.rho_dl)
    eq = rmt.equilibrium(ctx, p, cfg)
    asym = rmt.asymptotic_ul_sinr(eq, p)
    tables = moment_tables(cov, model, {"m": McaPolicy(p)}, 400, 77)["m"]
    mc = empirical_ul_sinr_from_tables(tables, p)
    rel = np.abs(asym - mc) / mc
    assert rel.max() <= 0.3, f"asymptotic SINR off by {rel.max():.2f}"


CHECKS = (
    ("golden scalar equilibrium", check_golden),
    ("covariance invariants", check_covariance_invariants),
    ("fixed-point residual", check_fixed_point_residual),
    ("precoder unit norms", check_precoder_norms),
    ("max-min power iteration", check_power_iteration),
    ("duality 2x2 hand case", check_duality_hand_case),
    ("duality consistency", check_duality_consistency),
    ("asymptotic SINR vs Monte-Carlo", check_asymptotic_vs_mc),
)


def run_validation(print_fn=print) -> int:
    """Run every check; returns the number of failures."""
    failures = 0
    for name, fn in CHECKS:
        try:
            fn()
        except AssertionError as exc:
            failures += 1
            print_fn(f"FAIL {name}: {exc}")
        except Exception as exc:  # noqa: BLE001 - report, keep going
            failures += 1
            print_fn(f"FAIL {name}: {type(exc).__name__}: {exc}")
        else:
            print_fn(f"PASS {name}")
    return failures
