"""Reduced-order models with time-dependent reduced bases, certified error
estimates and greedy construction for parameter-dependent dynamical systems."""

from .artifact import OfflineArtifact, load_artifact, save_artifact
from .eim import EimOperator, build_eim, deim_indices, eim_reduced_apply
from .estimator import (ErrorEstimate, LipschitzTable, build_lipschitz_table, effectivity, evaluate_rom,
                        integrate_error_estimate, log_lipschitz_matrix, relative_errors)
from .exceptions import (ConfigurationError, ConsistencyError, DivergenceError, RankDeficiencyError, RomError,
                         ShapeError, SolverError, StabilityError, StagnationError, ValidationError)
from .greedy import GreedyResult, pod_greedy, t_greedy
from .integrate import Trajectory, solve_full
from .model import AffineTerm, FullOrderModel, NonlinearFlux, ParameterDomain, TimeGrid
from .pod import PodResult, pod
from .reduced import (OfflineQuantities, ReducedTrajectory, TimeDependentBasis, build_time_dependent_basis,
                      build_time_independent_basis, compute_offline_quantities, reconstruct, reconstruct_trajectory,
                      residual_norms, solve_reduced)
from .testcases import BenchmarkSpec, build, build_advdiff_2d, build_advection_1d, build_burgers_1d

__version__ = "0.1.0"
