"""Multi-cell geometry and per-link spatial covariance matrices.

Cells are regular hexagons of circumradius 1 on a hexagonal grid
(inter-site distance sqrt(3)), one BS in each center. Every BS-to-UT link
gets a covariance R = lambda * A A^H built from uniformly spaced ULA
steering vectors with a per-UT random azimuth rotation, where lambda is
the power-law pathloss of the link.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .errors import GeometryError

HEX_CIRCUMRADIUS = 1.0
HEX_APOTHEM = math.sqrt(3.0) / 2.0
INTER_SITE_DISTANCE = math.sqrt(3.0)

_MAX_DROP_ATTEMPTS = 10**6

# fixed sub-stream tags so positions and steering angles use
# independent deterministic streams derived from one seed
_POSITION_STREAM = 0
_ANGLE_STREAM = 1

# face normals of a hexagon whose neighbors sit at angles 0, 60, 120 deg
_HEX_NORMALS = np.array(
    [[math.cos(a), math.sin(a)] for a in (0.0, math.pi / 3.0, 2.0 * math.pi / 3.0)]
)


@dataclass(frozen=True)
class Geometry:
    """BS grid and user positions of one drop (normalized distance units)."""

    bs_positions: np.ndarray  # (L, 2)
    ut_positions: np.ndarray  # (L, K, 2)
    seed: int


@dataclass(frozen=True)
class CovarianceSet:
    """Per-link channel covariances R[l, j, k] and square roots.

    Index convention: R[l, j, k] is the N x N covariance of the channel
    between the k-th UT of cell j and BS l; Rsqrt[l, j, k] satisfies
    Rsqrt @ Rsqrt^H = R exactly by construction.
    """

    R: np.ndarray      # (L, L, K, N, N) complex
    Rsqrt: np.ndarray  # (L, L, K, N, N) complex


def hexagonal_grid(n_cells: int) -> np.ndarray:
    """Return (n_cells, 2) BS positions, center first, then ring by ring."""
    radius = 1
    while 1 + 3 * radius * (radius + 1) < n_cells:
        radius += 1
    u1 = INTER_SITE_DISTANCE * np.array([1.0, 0.0])
    u2 = INTER_SITE_DISTANCE * np.array([0.5, math.sqrt(3.0) / 2.0])
    sites = []
    for i in range(-radius, radius + 1):
        for j in range(-radius, radius + 1):
            pos = i * u1 + j * u2
            dist = math.hypot(pos[0], pos[1])
            ang = math.atan2(pos[1], pos[0]) % (2.0 * math.pi)
            sites.append((round(dist, 9), round(ang, 9), pos))
    sites.sort(key=lambda s: (s[0], s[1]))
    return np.array([s[2] for s in sites[:n_cells]])


def in_hexagon(points: np.ndarray) -> np.ndarray:
    """Membership mask for points (..., 2) w.r.t. the unit-circumradius hexagon."""
    proj = np.abs(points @ _HEX_NORMALS.T)
    return np.all(proj <= HEX_APOTHEM + 1e-12, axis=-1)


def drop_users(config: SystemConfig, seed: int) -> Geometry:
    """Place the BS grid and draw K UTs uniformly inside each hexagon.

    Points closer than config.min_ut_distance to the serving BS are
    rejected and redrawn. Deterministic given (config, seed).
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, _POSITION_STREAM]))
    bs = hexagonal_grid(config.L)
    ut = np.empty((config.L, config.K, 2))
    batch = max(4 * config.K, 64)
    for l in range(config.L):
        accepted = []
        attempts = 0
        while len(accepted) < config.K:
            attempts += batch
            if attempts > _MAX_DROP_ATTEMPTS * config.K:
                raise GeometryError(
                    f"could not place {config.K} users in cell {l}: "
                    f"min_ut_distance={config.min_ut_distance} leaves too "
                    "little admissible area")
            cand = rng.uniform(-1.0, 1.0, size=(batch, 2))
            keep = in_hexagon(cand) & (
                np.linalg.norm(cand, axis=1) >= config.min_ut_distance)
            accepted.extend(cand[keep])
        ut[l] = np.asarray(accepted[: config.K]) + bs[l]
    return Geometry(bs_positions=bs, ut_positions=ut, seed=int(seed))


def steering_matrix(n_antennas: int, omega: float, azimuth_offset: float) -> np.ndarray:
    """N x P matrix of ULA steering vectors, P = N angles spanning 180 deg.

    Column p is a(phi_p) = (1/sqrt(P)) [1, e^{-i 2 pi omega sin phi_p}, ...,
    e^{-i 2 pi omega (N-1) sin phi_p}]^T with phi_p = azimuth_offset - pi/2
    + pi p / P.
    """
    p = n_antennas
    phases = azimuth_offset - math.pi / 2.0 + math.pi * np.arange(p) / p
    exponent = -2j * math.pi * omega * np.outer(np.arange(n_antennas), np.sin(phases))
    return np.exp(exponent) / math.sqrt(p)


def build_covariances(geometry: Geometry, config: SystemConfig) -> CovarianceSet:
    """Assemble R[l, j, k] = d^(-beta) * A_jk A_jk^H for every link.

    The steering matrix A_jk depends on the UT only (one random azimuth
    rotation per UT, drawn from the geometry seed); the observing BS enters
    through the pathloss d^(-beta).
    """
    L, K, N = config.L, config.K, config.N
    rng = np.random.default_rng(np.random.SeedSequence([geometry.seed, _ANGLE_STREAM]))
    offsets = rng.uniform(0.0, 2.0 * math.pi, size=(L, K))

    steering = np.empty((L, K, N, N), dtype=np.complex128)
    for j in range(L):
        for k in range(K):
            steering[j, k] = steering_matrix(N, config.omega, offsets[j, k])
    base_cov = steering @ steering.conj().transpose(0, 1, 3, 2)

    diff = geometry.bs_positions[:, None, None, :] - geometry.ut_positions[None, :, :, :]
    dist = np.linalg.norm(diff, axis=-1)                      # (L, L, K)
    pathloss = dist ** (-config.pathloss_exponent)

    R = pathloss[..., None, None] * base_cov[None, ...]
    Rsqrt = np.sqrt(pathloss)[..., None, None] * steering[None, ...]
    return CovarianceSet(R=R, Rsqrt=Rsqrt)


def hermitian_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Square root of a Hermitian PSD matrix via eigendecomposition.

    Negative eigenvalues from roundoff are clipped at zero. Intended for
    covariances supplied externally; covariances built here carry an exact
    factor already.
    """
    vals, vecs = np.linalg.eigh(matrix)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.conj().T
