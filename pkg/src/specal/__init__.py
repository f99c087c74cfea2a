"""Camera spectral sensitivity and grating efficiency from one diffraction capture."""

from .basis import BasisModel, CoefficientVector, build_channel_bases, build_svd_basis, fourier_basis, project
from .core import (
    CHANNELS,
    ConditionError,
    ConfigError,
    DataError,
    NumericalError,
    ObservationSet,
    RankError,
    SensitivityTriplet,
    SpecalError,
    SpectralCurve,
    SpectralGrid,
)
from .forward import GratingGeometry, SceneSpec, check_resolvance, physical_mapping, render
from .mapping import (
    PixelToWavelengthMap,
    WeightMatrix,
    build_weight_matrix,
    estimate_map_icp,
    estimate_map_peaks,
    mapping_re,
)
from .metrics import EvaluationReport, efficiency_cosine, emit_report, sensitivity_re
from .solver import CalibrationProblem, CalibrationSolution, calibrate, solve

__version__ = "0.1.0"
