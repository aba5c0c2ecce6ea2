"""Distributed fusion estimation for uncertain systems over lossy networks.

Sensors send time-stamped measurements through a channel with bounded random
delays and dropouts. A logic zero-order hold at the receiver keeps only the
newest packet per sensor, robust local filters produce estimates with
guaranteed covariance bounds, delayed estimates are compensated to the
current step and the local results are fused with cross-covariance weights.
"""

from .errors import (
    AlignmentError,
    ConfigError,
    DelayBoundError,
    NumericalError,
    NumericalWarning,
    StaleMeasurementError,
)
from .model import (
    NoiseRealization,
    Scenario,
    SensorModel,
    SystemModel,
    Waveform,
    draw_noise,
    load_scenario,
    measure,
    simulate,
    step_truth,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "ConfigError",
    "DelayBoundError",
    "NumericalError",
    "NumericalWarning",
    "StaleMeasurementError",
    "NoiseRealization",
    "Scenario",
    "SensorModel",
    "SystemModel",
    "Waveform",
    "draw_noise",
    "load_scenario",
    "measure",
    "simulate",
    "step_truth",
]
