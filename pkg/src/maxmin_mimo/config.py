"""System configuration and dB/linear conversion helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

from .errors import ConfigurationError


def db_to_linear(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


@dataclass(frozen=True)
class SystemConfig:
    """All scenario parameters of one simulation setup.

    SNRs are stored on a linear scale; the CLI converts from dB. Distances
    are normalized to the cell circumradius (1.0).
    """

    L: int = 7                      # number of cells
    K: int = 20                     # users per cell
    N: int = 60                     # BS antennas
    rho_dl: float = 10.0            # average per-user DL transmit SNR, linear
    rho_tr: float = 10.0            # training SNR, linear
    omega: float = 0.5              # antenna spacing / wavelength
    pathloss_exponent: float = 3.7
    min_ut_distance: float = 0.2
    mc_trials: int = 500            # Monte-Carlo realizations per expectation
    maxmin_epsilon: float = 0.01    # power-iteration stopping threshold
    maxmin_max_iters: int = 10
    fp_tolerance: float = 1e-8      # inner fixed-point relative tolerance
    fp_max_iters: int = 1000
    seed: int = 0

    def __post_init__(self):
        violations = []
        for name in ("L", "K", "N", "mc_trials", "maxmin_max_iters", "fp_max_iters"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                violations.append(f"{name} must be a positive integer, got {value!r}")
        for name in ("rho_dl", "rho_tr", "omega", "pathloss_exponent",
                     "maxmin_epsilon", "fp_tolerance"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                violations.append(f"{name} must be a finite positive number, got {value!r}")
        if not (isinstance(self.min_ut_distance, (int, float))
                and 0.0 <= self.min_ut_distance < 1.0):
            violations.append(
                f"min_ut_distance must lie in [0, 1), got {self.min_ut_distance!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            violations.append(f"seed must be a nonnegative integer, got {self.seed!r}")
        if violations:
            raise ConfigurationError(violations)

    @property
    def n_users(self) -> int:
        return self.L * self.K

    def with_updates(self, **kwargs) -> "SystemConfig":
        return replace(self, **kwargs)


CONFIG_FIELD_NAMES = tuple(f.name for f in fields(SystemConfig))
