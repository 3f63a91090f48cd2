import numpy as np
import pytest

from maxmin_mimo.channel import estimation_model
from maxmin_mimo.config import SystemConfig, db_to_linear
from maxmin_mimo.scenario import CovarianceSet, build_covariances, drop_users


def make_scenario(L=2, K=3, N=16, rho_db=10.0, seed=5, **cfg_kwargs):
    """Seeded drop + covariances + estimator statistics for tests."""
    rho = db_to_linear(rho_db)
    cfg = SystemConfig(L=L, K=K, N=N, rho_dl=rho, rho_tr=rho, seed=seed,
                       **cfg_kwargs)
    geometry = drop_users(cfg, seed=seed)
    cov = build_covariances(geometry, cfg)
    model = estimation_model(cov, cfg.rho_tr)
    return cfg, cov, model


def cov_from_matrices(R):
    """CovarianceSet from explicit (L, L, K, N, N) covariances."""
    R = np.asarray(R, dtype=np.complex128)
    vals, vecs = np.linalg.eigh(R)
    vals = np.clip(vals, 0.0, None)
    Rsqrt = (vecs * np.sqrt(vals)[..., None, :]) @ vecs.conj().swapaxes(-1, -2)
    return CovarianceSet(R=R, Rsqrt=Rsqrt)


def random_psd(n, rng, cond=10.0):
    """Random Hermitian PSD matrix with eigenvalues in [1/cond, 1]."""
    z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    q, _ = np.linalg.qr(z)
    eigs = np.linspace(1.0 / cond, 1.0, n)
    return (q * eigs) @ q.conj().T


@pytest.fixture(scope="session")
def small_scenario():
    return make_scenario(L=2, K=3, N=16, rho_db=10.0, seed=5)
