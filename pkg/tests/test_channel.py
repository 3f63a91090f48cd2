import numpy as np
import pytest

from maxmin_mimo.channel import (apply_estimator, complex_gaussian,
                                 draw_channel_batch, draw_channels,
                                 estimate_channels, estimation_model)
from maxmin_mimo.errors import EstimationError

from conftest import cov_from_matrices, make_scenario, random_psd


def test_zero_covariance_gives_zero_channel():
    cov = cov_from_matrices(np.zeros((1, 1, 1, 4, 4)))
    channels = draw_channels(cov, seed=0)
    assert np.all(channels.g == 0.0)
    assert channels.h.shape == (1, 1, 1, 4)


def test_unit_covariance_energy():
    N = 4
    cov = cov_from_matrices(np.eye(N)[None, None, None])
    rng = np.random.default_rng(12)
    g, _ = draw_channel_batch(cov, 10_000, rng)
    mean_energy = (np.abs(g) ** 2).sum(axis=-1).mean() / N
    # var of |g|^2/N per draw is 1/N; 3 sigma of the mean estimator
    assert abs(mean_energy - 1.0) <= 3.0 / np.sqrt(N * 10_000)


def test_sample_covariance_matches_generic_r():
    rng = np.random.default_rng(7)
    R = random_psd(4, rng)
    cov = cov_from_matrices(R[None, None, None])
    g, _ = draw_channel_batch(cov, 100_000, np.random.default_rng(8))
    flat = g[:, 0, 0, 0, :]
    sample = flat.T.conj() @ flat / flat.shape[0]
    assert np.abs(sample.conj() - R).max() <= 0.05 * np.abs(R).max()


def test_draw_determinism():
    _, cov, _ = make_scenario(L=2, K=2, N=4)
    a = draw_channels(cov, seed=3)
    b = draw_channels(cov, seed=3)
    assert np.array_equal(a.g, b.g)


def test_scalar_estimation_closed_form():
    # one cell, one antenna, R = 1, training SNR 1
    cov = cov_from_matrices(np.ones((1, 1, 1, 1, 1)))
    model = estimation_model(cov, rho_tr=1.0)
    assert np.allclose(model.Omega, 0.5)
    assert np.allclose(model.Psi, 0.5)
    assert np.allclose(model.Delta, 0.5)


def test_scalar_contamination_floor_at_infinite_training_snr():
    # two cells sharing a pilot, both unit covariances: the other-cell
    # channel is an irreducible estimation error even without noise
    R = np.ones((2, 2, 1, 1, 1))
    cov = cov_from_matrices(R)
    model = estimation_model(cov, rho_tr=np.inf)
    assert np.allclose(model.Omega, 0.5)
    assert np.allclose(model.Psi, 0.5)
    assert np.allclose(model.Delta, 0.5)


def test_singular_training_matrix_raises():
    cov = cov_from_matrices(np.zeros((1, 1, 1, 3, 3)))
    with pytest.raises(EstimationError):
        estimation_model(cov, rho_tr=np.inf)


def test_high_training_snr_recovers_channel():
    rng = np.random.default_rng(5)
    R = random_psd(6, rng, cond=5.0)
    cov = cov_from_matrices(R[None, None, None])
    model = estimation_model(cov, rho_tr=1e6)
    worst = 0.0
    for seed in range(50):
        channels = draw_channels(cov, seed=seed)
        est = estimate_channels(channels, cov, 1e6, seed=seed + 1000,
                                model=model)
        rel = np.linalg.norm(est.ghat - channels.g) / np.linalg.norm(channels.g)
        worst = max(worst, rel)
    assert worst <= 1e-2


def test_delta_is_error_covariance_identity():
    _, cov, model = make_scenario(L=2, K=2, N=8)
    assert np.array_equal(model.Delta, model.Delta)  # exact array, no NaN
    assert np.abs(cov.R - model.Psi - model.Delta).max() <= 1e-14
    eigs = np.linalg.eigvalsh(model.Delta.reshape(-1, 8, 8))
    assert eigs.min() >= -1e-10 * eigs.max()
    eigs_psi = np.linalg.eigvalsh(model.Psi.reshape(-1, 8, 8))
    assert eigs_psi.min() >= -1e-10 * eigs_psi.max()


def test_shared_pilot_observation_structure():
    # for fixed (l, k) the estimates of all cells j derive from one
    # observation: ghat_ljk = Omega_ljk y_lk exactly
    _, cov, model = make_scenario(L=3, K=2, N=6)
    channels = draw_channels(cov, seed=21)
    est = estimate_channels(channels, cov, rho_tr=model.rho_tr, seed=22,
                            model=model)
    l, k = 1, 0
    y = np.linalg.solve(model.Omega[l, 0, k], est.ghat[l, 0, k])
    for j in (1, 2):
        rebuilt = model.Omega[l, j, k] @ y
        assert np.allclose(rebuilt, est.ghat[l, j, k], atol=1e-10)


def test_lmmse_orthogonality_and_estimate_covariance():
    _, cov, model = make_scenario(L=2, K=2, N=8, seed=9)
    l, j, k = 0, 1, 1
    rng = np.random.default_rng(99)
    cross = np.zeros((8, 8), dtype=complex)
    second = np.zeros((8, 8), dtype=complex)
    trials, chunk = 100_000, 10_000
    for _ in range(trials // chunk):
        g, _ = draw_channel_batch(cov, chunk, rng)
        noise = complex_gaussian(rng, (chunk, 2, 2, 8))
        ghat = apply_estimator(model, g, noise)
        err = g[:, l, j, k] - ghat[:, l, j, k]
        cross += np.einsum("ta,tb->ab", ghat[:, l, j, k], err.conj())
        second += np.einsum("ta,tb->ab", ghat[:, l, j, k],
                            ghat[:, l, j, k].conj())
    cross /= trials
    second /= trials
    scale = np.linalg.norm(model.Psi[l, j, k], 2)
    assert np.abs(cross).max() <= 0.05 * scale
    assert np.abs(second - model.Psi[l, j, k]).max() <= 0.05 * scale
