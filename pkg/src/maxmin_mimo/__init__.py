"""Max-min multi-cell aware RZF precoding and power allocation simulator."""

__version__ = "0.1.0"

from .channel import (ChannelSet, EstimateSet, EstimationModel, draw_channels,
                      estimate_channels, estimation_model)
from .config import SystemConfig, db_to_linear, linear_to_db
from .errors import (ConfigurationError, ConvergenceError, EstimationError,
                     FeasibilityError, GeometryError, MimoError,
                     NumericalError)
from .power import (DualityData, PowerSolution, dl_powers,
                    duality_operands_asymptotic, duality_operands_empirical,
                    maxmin_ul_powers)
from .precoder import (PrecoderSet, conventional_rzf_vectors,
                       default_rzf_alpha, mca_rzf_vectors)
from .rmt import (DetEquilibrium, StatContext, asymptotic_ul_sinr,
                  equilibrium, second_order, solve_fixed_point, stat_context)
from .scenario import (CovarianceSet, Geometry, build_covariances, drop_users,
                       hexagonal_grid)
from .sim import (ALL_SCHEMES, ExperimentResult, McaPolicy, MomentTables,
                  RzfPolicy, SchemeId, empirical_dl_sinr, empirical_ul_sinr,
                  min_rate, moment_tables, run_experiment)

__all__ = [name for name in dir() if not name.startswith("_")]
