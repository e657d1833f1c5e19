"""Domain types, pH/concentration algebra and the first-order relaxation step.

Time is always in seconds and concentrations in mol/l.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import InvalidArgumentError

#: Concentrations are clamped to this floor before taking the logarithm.
CONCENTRATION_FLOOR = 1e-14

# Plain floats carry the unit; the aliases only document intent.
Concentration = float
PhValue = float


class IlluminationState(enum.Enum):
    DARK = "dark"
    LIGHT = "light"

    @classmethod
    def parse(cls, text: str) -> "IlluminationState":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise InvalidArgumentError(f"unknown illumination state {text!r}") from None


@dataclass(frozen=True)
class ModelParams:
    """Channel parameters of the relaxation model plus the initial concentration."""

    c_eq_dark: float
    c_eq_light: float
    tau_dark: float
    tau_light: float
    drift_slope: float = 0.0
    c_init: float | None = None

    def __post_init__(self):
        if self.c_init is None:
            object.__setattr__(self, "c_init", self.c_eq_dark)
        for name in ("c_eq_dark", "c_eq_light", "c_init", "tau_dark", "tau_light"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidArgumentError(f"{name} must be finite and > 0, got {value!r}")
        if not math.isfinite(self.drift_slope):
            raise InvalidArgumentError("drift_slope must be finite")

    def equilibrium(self, state: IlluminationState) -> float:
        return self.c_eq_light if state is IlluminationState.LIGHT else self.c_eq_dark

    def tau(self, state: IlluminationState) -> float:
        return self.tau_light if state is IlluminationState.LIGHT else self.tau_dark

    def as_vector(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=float)

    @classmethod
    def from_vector(cls, vec) -> "ModelParams":
        return cls(*(float(v) for v in vec))

    @classmethod
    def from_minutes(cls, c_eq_dark, c_eq_light, tau_dark_min, tau_light_min,
                     drift_slope=0.0, c_init=None) -> "ModelParams":
        """Build from time constants given in minutes, as they are usually reported."""
        return cls(c_eq_dark, c_eq_light, 60.0 * tau_dark_min, 60.0 * tau_light_min,
                   drift_slope, c_init)


PARAM_NAMES = tuple(f.name for f in fields(ModelParams))


def ph_to_concentration(ph: PhValue) -> Concentration:
    if not math.isfinite(ph):
        raise InvalidArgumentError(f"pH must be finite, got {ph!r}")
    return 10.0 ** (-ph)


def concentration_to_ph(c: Concentration) -> PhValue:
    if not (c > 0) or not math.isfinite(c):
        raise InvalidArgumentError(f"concentration must be finite and > 0, got {c!r}")
    return -math.log10(c)


def clamp_concentration(c: np.ndarray) -> tuple[np.ndarray, int]:
    """Clamp to CONCENTRATION_FLOOR; returns the clamped array and the clamp count."""
    c = np.asarray(c, dtype=float)
    low = ~(c >= CONCENTRATION_FLOOR)
    return np.where(low, CONCENTRATION_FLOOR, c), int(np.count_nonzero(low))


def concentrations_to_ph(c: np.ndarray) -> np.ndarray:
    """Vectorized -log10 for already clamped, strictly positive arrays."""
    return -np.log10(np.asarray(c, dtype=float))


def step_response(c_start: Concentration, state: IlluminationState, params: ModelParams,
                  elapsed: float) -> Concentration:
    """Concentration after ``elapsed`` seconds of constant illumination ``state``.

    The exponent runs on time since the segment start, so the result equals
    ``c_start`` at ``elapsed == 0``.
    """
    if not elapsed >= 0:
        raise InvalidArgumentError(f"elapsed must be >= 0, got {elapsed!r}")
    c_eq = params.equilibrium(state)
    # -expm1 keeps 1 - exp(-x) accurate for small x
    return c_start + (c_eq - c_start) * -math.expm1(-elapsed / params.tau(state))
