"""Globally-optimized correlation volumes.

The filter map used to correlate a reference frame with a query frame is
the result of a few unrolled steepest-descent steps on a robust matching
objective instead of the raw reference features.
"""

from gocor.corrvol import CorrespondenceVolume, CorrMode, VolumeKind, corr_adjoint, global_corr, local_corr
from gocor.errors import (
    ConfigError,
    DimensionError,
    EmptyInputError,
    FormatError,
    GOCorError,
    NonFiniteInputError,
    SceneGeometryError,
)
from gocor.metrics import FlowField, aepe, f1_outlier_rate, pck
from gocor.objective import (
    ObjectiveParams,
    QueryObjectiveParams,
    ReferenceObjectiveParams,
    WeightFunction,
    total_loss,
)
from gocor.solver import (
    InitializerConfig,
    InitializerVariant,
    SolverConfig,
    SolveTrace,
    gocor_correlation,
    init_filter_map,
    run_gocor,
)

__version__ = "0.1.0"
