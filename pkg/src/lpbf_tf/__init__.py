"""Thermal state estimation and forecasting for laser powder bed fusion builds.

Modules
-------
rom         lumped per-layer heat balance, build integrator, state-space models
kalman      Kalman estimation/forecasting with real and pseudo feedback
pseudodata  triangle fit and layer-average pseudo-measurements
ident       genetic-algorithm parameter identification
oracle      finite-volume conduction solver used as ground truth
datastore   dataset files, reports and plots
pipeline    end-to-end runs shared by the CLI and tests
cli         ``lpbf-tf`` command line
"""

from .errors import LpbfError, NumericalError, StabilityError, ValidationError
from .rom import BuildSchedule, DiscreteModel, LayerParams, ParamSchedule, LAYER1_PARAMS
from .traces import LayerSegment, ThermalTrace

__version__ = "0.1.0"

__all__ = [
    "BuildSchedule", "DiscreteModel", "LayerParams", "LayerSegment", "LpbfError", "NumericalError",
    "ParamSchedule", "StabilityError", "LAYER1_PARAMS", "ThermalTrace", "ValidationError",
]
