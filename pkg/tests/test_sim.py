import numpy as np
import pytest

from maxmin_mimo import rmt
from maxmin_mimo.config import SystemConfig, db_to_linear
from maxmin_mimo.sim import (ALL_SCHEMES, McaPolicy, MomentTables, RzfPolicy,
                             SchemeId, resolvent_oracle_report,
                             empirical_dl_sinr, empirical_dl_sinr_from_tables,
                             empirical_ul_sinr, empirical_ul_sinr_from_tables,
                             min_rate, moment_tables, oracle_state,
                             run_experiment)

from conftest import make_scenario


def test_min_rate_values():
    assert min_rate(np.array([1.0, 5.0])) == 1.0
    assert min_rate(np.array([0.0, 2.0])) == 0.0
    assert min_rate(np.array([3.0])) == 2.0
    with pytest.raises(ValueError):
        min_rate(np.array([-0.1]))


def _hand_tables(mean, second, shape):
    mean = np.asarray(mean, dtype=complex)
    return MomentTables(mean_inner=mean, second_inner=np.asarray(second,
                                                                 dtype=float),
                        u_norm_sq_mean=np.ones(shape), trials=1, shape=shape)


def test_sinr_from_tables_zero_powers():
    tables = _hand_tables(np.eye(2), np.eye(2) * 2.0, (1, 2))
    assert np.allclose(empirical_ul_sinr_from_tables(tables, np.zeros((1, 2))), 0.0)
    assert np.allclose(empirical_dl_sinr_from_tables(tables, np.zeros((1, 2))), 0.0)


def test_sinr_from_tables_deterministic_unit_channel():
    # |E{g^H v}|^2 = E{|g^H v|^2} = 1: the variance subtraction removes the
    # own term entirely and SINR equals the allocated power
    tables = _hand_tables(np.array([[1.0]]), np.array([[1.0]]), (1, 1))
    for rho in (0.5, 2.0, 10.0):
        p = np.array([[rho]])
        assert np.allclose(empirical_dl_sinr_from_tables(tables, p), rho)
        assert np.allclose(empirical_ul_sinr_from_tables(tables, p), rho)


def test_dl_denominator_uses_arriving_beams():
    # asymmetric coupling: user 0 hears beam 1 strongly (table entry
    # [1, 0]), which must hit the downlink denominator of user 0 only
    mean = np.diag([1.0, 1.0]).astype(complex)
    second = np.array([[1.0, 0.0], [0.9, 1.0]])
    tables = _hand_tables(mean, second, (1, 2))
    p = np.array([[1.0, 1.0]])
    dl = empirical_dl_sinr_from_tables(tables, p)
    assert dl[0, 0] == pytest.approx(1.0 / (1.0 + 0.9))
    assert dl[0, 1] == pytest.approx(1.0)
    ul = empirical_ul_sinr_from_tables(tables, p)
    assert ul[0, 0] == pytest.approx(1.0)
    assert ul[0, 1] == pytest.approx(1.0 / (1.0 + 0.9))


def test_moment_tables_deterministic_and_shared_draws():
    cfg, cov, model = make_scenario(L=2, K=2, N=8, seed=6)
    policies = {"rzf": RzfPolicy(0.1),
                "mca": McaPolicy(np.full((2, 2), cfg.rho_dl))}
    t1 = moment_tables(cov, model, policies, 60, 123)
    t2 = moment_tables(cov, model, policies, 60, 123)
    for name in policies:
        assert np.array_equal(t1[name].mean_inner, t2[name].mean_inner)
        assert np.array_equal(t1[name].second_inner, t2[name].second_inner)
    # common random numbers: single-policy run reproduces the joint run
    alone = moment_tables(cov, model, {"rzf": RzfPolicy(0.1)}, 60, 123)
    assert np.array_equal(alone["rzf"].mean_inner, t1["rzf"].mean_inner)


def test_empirical_sinr_wrappers(small_scenario):
    cfg, cov, model = small_scenario
    p = np.full((cfg.L, cfg.K), cfg.rho_dl)
    ul = empirical_ul_sinr(cov, model, RzfPolicy(0.1), p, 50, 5)
    dl = empirical_dl_sinr(cov, model, RzfPolicy(0.1), p, 50, 5)
    assert ul.shape == (cfg.L, cfg.K) and dl.shape == (cfg.L, cfg.K)
    assert np.all(ul > 0.0) and np.all(dl > 0.0)


def test_half_sample_consistency():
    cfg, cov, model = make_scenario(L=2, K=2, N=16, seed=5)
    p = np.full((2, 2), cfg.rho_dl)
    halves = []
    for seed in (7001, 7002):
        tables = moment_tables(cov, model, {"m": McaPolicy(p)}, 400, seed)["m"]
        halves.append(empirical_dl_sinr_from_tables(tables, p))
    batches = []
    for seed in range(8001, 8017):
        tables = moment_tables(cov, model, {"m": McaPolicy(p)}, 100, seed)["m"]
        batches.append(empirical_dl_sinr_from_tables(tables, p))
    se_half = np.std(np.stack(batches), axis=0) / 2.0  # SE of a 400-trial run
    se_diff = np.sqrt(2.0) * se_half
    assert np.all(np.abs(halves[0] - halves[1]) <= 2.0 * se_diff + 1e-9)


def test_more_trials_reduce_disagreement():
    cfg, cov, model = make_scenario(L=2, K=2, N=12, seed=8)
    p = np.full((2, 2), cfg.rho_dl)

    def disagreement(trials, seed_a, seed_b):
        ta = moment_tables(cov, model, {"m": McaPolicy(p)}, trials, seed_a)["m"]
        tb = moment_tables(cov, model, {"m": McaPolicy(p)}, trials, seed_b)["m"]
        da = empirical_dl_sinr_from_tables(ta, p)
        db = empirical_dl_sinr_from_tables(tb, p)
        return np.abs(da - db).mean()

    small = np.mean([disagreement(50, 10 + i, 500 + i) for i in range(12)])
    large = np.mean([disagreement(200, 10 + i, 500 + i) for i in range(12)])
    assert large < small


def test_oracle_state_invariants(small_scenario):
    cfg, cov, model = small_scenario
    from maxmin_mimo.channel import draw_channels, estimate_channels
    channels = draw_channels(cov, seed=3)
    est = estimate_channels(channels, cov, cfg.rho_tr, seed=4, model=model)
    p = np.full((cfg.L, cfg.K), cfg.rho_dl)
    st = oracle_state(est.ghat[0], model.Delta[0], p, 0, 1)
    eigs = np.linalg.eigvalsh(st.Lambda)
    assert eigs.min() >= 1.0 / cfg.N - 1e-12
    target = est.ghat[0, 0, 1]
    rebuilt = st.Lambda_lq + p[0, 1] * np.outer(target, target.conj()) / cfg.N
    assert np.abs(rebuilt - st.Lambda).max() <= 1e-12 * np.abs(st.Lambda).max()


def test_resolvent_oracle_zero_powers_closed_form():
    # with no interferers the detector is the raw estimate: the empirical
    # squared norm averages to tr(Psi) = xi_bar exactly in expectation
    cfg, cov, model = make_scenario(L=2, K=2, N=16, seed=9)
    ctx = rmt.stat_context(cov, model)
    p = np.zeros((2, 2))
    eq = rmt.equilibrium(ctx, p, cfg)
    report = resolvent_oracle_report(cov, model, eq, p, trials=600, seed=11)
    assert np.nanmax(report.xi_rel) <= 0.15
    assert np.nanmax(report.useful_rel) <= 0.15


def test_resolvent_oracle_errors_shrink_with_n():
    # per-quantity relative errors, with the contamination/interference
    # families aggregated the way the SINR denominator consumes them
    # (power-weighted sums; single entries are MC-noise dominated)
    errors = {}
    for N in (32, 128):
        cfg, cov, model = make_scenario(L=2, K=2, N=N, seed=15)
        L, K = cfg.L, cfg.K
        ctx = rmt.stat_context(cov, model)
        p = np.full((L, K), cfg.rho_dl)
        eq = rmt.equilibrium(ctx, p, cfg)
        tables = moment_tables(cov, model, {"m": McaPolicy(p)}, 2000, 13)["m"]

        own_delta = eq.delta[np.arange(L), np.arange(L)]
        denomvec = eq.xi_bar * (1.0 + own_delta) ** 2
        xi_rel = np.abs(tables.u_norm_sq_mean - eq.xi_bar) / eq.xi_bar
        useful_det = eq.delta_check / (np.sqrt(eq.xi_bar) * (1 + own_delta))
        useful_emp = np.diag(tables.mean_inner).real.reshape(L, K)
        useful_rel = np.abs(useful_emp - useful_det) / useful_det

        cont_coeff, inter_coeff = rmt.coupling_terms(eq)
        second = tables.second_inner.reshape(L, K, L, K)
        cont_det = np.einsum("mq,lqm->lq", p, cont_coeff) / denomvec
        pilot_emp = np.einsum("lqmq->lqm", second.copy())
        for l in range(L):
            pilot_emp[l, :, l] = 0.0
        cont_emp = np.einsum("mq,lqm->lq", p, pilot_emp)
        inter_det = np.einsum("mw,lqmw->lq", p, inter_coeff) / denomvec
        masked = second.copy()
        for q in range(K):
            masked[:, q, :, q] = 0.0
        inter_emp = np.einsum("mw,lqmw->lq", p, masked)

        errors[N] = {
            "xi": float(xi_rel.max()),
            "useful": float(useful_rel.max()),
            "contamination": float(
                (np.abs(cont_emp - cont_det) / cont_emp).max()),
            "interference": float(
                (np.abs(inter_emp - inter_det) / inter_emp).max()),
        }
    for family in ("xi", "useful", "contamination", "interference"):
        assert errors[128][family] < errors[32][family]


def test_run_experiment_smoke_single_trial():
    cfg = SystemConfig(L=2, K=2, N=8, rho_dl=db_to_linear(10.0),
                       rho_tr=db_to_linear(10.0), mc_trials=1, seed=1)
    result = run_experiment(cfg, "rho_db", [10.0], n_drops=1)
    assert len(result.points) == 4
    for point in result.points:
        assert point.scheme in {s.value for s in ALL_SCHEMES}
        assert point.failed or point.min_rate is not None


def test_run_experiment_reproducible_and_workers_equivalent():
    cfg = SystemConfig(L=2, K=2, N=8, rho_dl=db_to_linear(8.0),
                       rho_tr=db_to_linear(8.0), mc_trials=40, seed=3)
    r1 = run_experiment(cfg, "rho_db", [6.0, 10.0], n_drops=2)
    r2 = run_experiment(cfg, "rho_db", [6.0, 10.0], n_drops=2)
    r3 = run_experiment(cfg, "rho_db", [6.0, 10.0], n_drops=2, workers=2)
    for a, b in ((r1, r2), (r1, r3)):
        for pa, pb in zip(a.points, b.points):
            assert pa.scheme == pb.scheme
            assert pa.min_rate == pb.min_rate
            assert pa.per_ut_sinr == pb.per_ut_sinr


def test_antenna_sweep_uses_point_config():
    cfg = SystemConfig(L=2, K=2, N=8, rho_dl=db_to_linear(12.0),
                       rho_tr=db_to_linear(12.0), mc_trials=30, seed=4)
    result = run_experiment(cfg, "antennas", [4, 8],
                            schemes=[SchemeId.RZF_UNIFORM], n_drops=1)
    assert [p.sweep_value for p in result.points] == [4.0, 8.0]
    for point in result.points:
        assert not point.failed
        assert np.asarray(point.per_ut_sinr[0]).shape == (2, 2)


def test_scheme_ordering_moderate_snr():
    cfg = SystemConfig(L=3, K=4, N=24, rho_dl=db_to_linear(14.0),
                       rho_tr=db_to_linear(14.0), mc_trials=150, seed=6)
    result = run_experiment(cfg, "rho_db", [14.0], n_drops=3)
    rates = {p.scheme: p.min_rate for p in result.points}
    top = rates[SchemeId.MCA_RZF_MAXMIN.value]
    for scheme in (SchemeId.RZF_UNIFORM, SchemeId.RZF_MAXMIN,
                   SchemeId.MCA_RZF_UNIFORM):
        assert top >= 0.95 * rates[scheme.value]
