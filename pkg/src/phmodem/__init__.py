"""Simulator, modem and parameter estimator for a light-driven pH molecular-communication link."""

from .channel import NoiseConfig, PhTrace, SimulationReport, simulate_concentration, simulate_trace
from .core import IlluminationState, ModelParams, concentration_to_ph, ph_to_concentration
from .errors import (IdentifiabilityError, InvalidArgumentError, NonConvergenceError,
                     PhModemError, SyncFailureError, WindowOverrunError)
from .estimator import FitConfig, FitResult, fit, residual
from .modulator import ModulationConfig, OpticalSchedule, Segment, schedule_from_bits
from .receiver import DetectionReport, ReceiverConfig, StreamingDetector, detect

__all__ = [
    "NoiseConfig", "PhTrace", "SimulationReport", "simulate_concentration", "simulate_trace",
    "IlluminationState", "ModelParams", "concentration_to_ph", "ph_to_concentration",
    "IdentifiabilityError", "InvalidArgumentError", "NonConvergenceError", "PhModemError",
    "SyncFailureError", "WindowOverrunError", "FitConfig", "FitResult", "fit", "residual",
    "ModulationConfig", "OpticalSchedule", "Segment", "schedule_from_bits",
    "DetectionReport", "ReceiverConfig", "StreamingDetector", "detect",
]
