"""Joint community detection and group synchronization by the generalized power method."""

from .blockmat import GroupKind, InvalidInputError, ObservationMatrix, block_apply, haar_sample
from .gpm import GpmConfig, GpmTrace, round_special, run
from .kernels import BACKEND
from .metrics import (
    ConditionReport,
    RegionVerdict,
    check_all_conditions,
    check_magnitude,
    check_separation,
    clustering_error,
    estimation_error,
    quotient_distance,
    region_verdict,
)
from .projections import balanced_assignment, project_clustering, project_feasible, project_orthogonal
from .sgbm import GroundTruth, JointState, SgbmParams, generate, load_instance, save_instance
from .spectral import InitConfig, initialize

__version__ = "0.1.0"
