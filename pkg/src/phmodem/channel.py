"""pH trace synthesis: piecewise relaxation + linear drift + white Gaussian noise.

Noise is drawn from numpy's ``PCG64`` bit generator seeded with the 64-bit
``NoiseConfig.seed`` (``numpy.random.Generator(PCG64(seed)).standard_normal``),
so traces are bit-identical across platforms for a given seed.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (ModelParams, clamp_concentration, concentrations_to_ph,
                   step_response)
from .errors import InvalidArgumentError
from .modulator import LIGHT, OpticalSchedule

TRACE_HEADER = ("time_s", "ph")


@dataclass(frozen=True)
class NoiseConfig:
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise InvalidArgumentError("noise sigma must be finite and >= 0")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidArgumentError("noise seed must fit in 64 unsigned bits")


@dataclass(frozen=True, eq=False)
class PhTrace:
    """Uniformly sampled pH series; sample k sits at ``t_start + k * sample_interval``."""

    t_start: float
    sample_interval: float
    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1 or samples.size == 0:
            raise InvalidArgumentError("trace needs a non-empty 1-D sample array")
        if not self.sample_interval > 0:
            raise InvalidArgumentError("sample_interval must be > 0")

    def __len__(self):
        return self.samples.size

    def __eq__(self, other):
        if not isinstance(other, PhTrace):
            return NotImplemented
        return (self.t_start == other.t_start and self.sample_interval == other.sample_interval
                and np.array_equal(self.samples, other.samples))

    @property
    def sample_rate(self) -> float:
        return 1.0 / self.sample_interval

    @property
    def times(self) -> np.ndarray:
        return self.t_start + np.arange(self.samples.size) * self.sample_interval

    @property
    def t_end(self) -> float:
        return self.t_start + (self.samples.size - 1) * self.sample_interval


@dataclass(frozen=True, eq=False)
class SimulationReport:
    trace: PhTrace
    clamp_count: int
    noiseless_trace: PhTrace | None = None
    concentration: np.ndarray | None = field(default=None, repr=False)


def _segment_arrays(schedule: OpticalSchedule, params: ModelParams):
    segs = schedule.segments
    starts = np.array([s.start for s in segs])
    c_eq = np.array([params.equilibrium(s.state) for s in segs])
    tau = np.array([params.tau(s.state) for s in segs])
    c0 = np.empty(len(segs))
    c = params.c_init
    for i, seg in enumerate(segs):
        c0[i] = c
        c = step_response(c, seg.state, params, seg.duration)
    return starts, c0, c_eq, tau


def relaxation_at(schedule: OpticalSchedule, params: ModelParams, times) -> np.ndarray:
    """Relaxation state (no drift) at each time; each segment resumes from the previous end value."""
    t = np.asarray(times, dtype=float)
    if t.size and (t.min() < 0 or t.max() > schedule.total_duration):
        raise InvalidArgumentError(
            f"times must lie in [0, {schedule.total_duration}] for this schedule")
    starts, c0, c_eq, tau = _segment_arrays(schedule, params)
    idx = np.searchsorted(starts, t, side="right") - 1
    return c0[idx] + (c_eq[idx] - c0[idx]) * -np.expm1(-(t - starts[idx]) / tau[idx])


def concentration_at(schedule: OpticalSchedule, params: ModelParams, times) -> np.ndarray:
    """Noiseless concentration (relaxation plus drift) at each time."""
    t = np.asarray(times, dtype=float)
    return relaxation_at(schedule, params, t) + params.drift_slope * t


class ScheduleSampler:
    """Precomputed schedule/time layout for evaluating many parameter sets quickly.

    Gives the same values as :func:`concentration_at` (up to rounding in the
    last place) without rebuilding the segment bookkeeping on every call.
    """

    def __init__(self, schedule: OpticalSchedule, times):
        t = np.asarray(times, dtype=float)
        if t.size and (t.min() < 0 or t.max() > schedule.total_duration):
            raise InvalidArgumentError(
                f"times must lie in [0, {schedule.total_duration}] for this schedule")
        segs = schedule.segments
        self.times = t
        self._light = [s.state is LIGHT for s in segs]
        self._durations = [s.duration for s in segs]
        starts = np.array([s.start for s in segs])
        self._idx = np.searchsorted(starts, t, side="right") - 1
        self._elapsed = t - starts[self._idx]
        self._light_mask = np.array(self._light)[self._idx]

    def concentration(self, c_eq_dark, c_eq_light, tau_dark, tau_light, drift_slope, c_init):
        n = len(self._light)
        c0 = np.empty(n)
        ceq = np.empty(n)
        c = c_init
        for i in range(n):
            if self._light[i]:
                eq, tau = c_eq_light, tau_light
            else:
                eq, tau = c_eq_dark, tau_dark
            c0[i] = c
            ceq[i] = eq
            c = c + (eq - c) * -math.expm1(-self._durations[i] / tau)
        tau_t = np.where(self._light_mask, tau_light, tau_dark)
        a = c0[self._idx]
        return a + (ceq[self._idx] - a) * -np.expm1(-self._elapsed / tau_t) + drift_slope * self.times


def simulate_concentration(schedule: OpticalSchedule, params: ModelParams, t: float) -> float:
    if not 0 <= t <= schedule.total_duration:
        raise InvalidArgumentError(f"t = {t} outside schedule [0, {schedule.total_duration}]")
    return float(concentration_at(schedule, params, [t])[0])


def sample_times(duration: float, sample_rate: float) -> np.ndarray:
    """Times k / sample_rate covering the half-open interval [0, duration)."""
    x = duration * sample_rate
    n = int(round(x)) if abs(x - round(x)) < 1e-9 else math.ceil(x)
    return np.arange(n) / sample_rate


def simulate_trace(schedule: OpticalSchedule, params: ModelParams, noise: NoiseConfig,
                   sample_rate: float) -> SimulationReport:
    if not (sample_rate > 0 and math.isfinite(sample_rate)):
        raise InvalidArgumentError("sample_rate must be > 0")
    t = sample_times(schedule.total_duration, sample_rate)
    if t.size < 2:
        raise InvalidArgumentError("sample rate yields fewer than 2 samples")
    c_clean = concentration_at(schedule, params, t)
    c_clean_clamped, _ = clamp_concentration(c_clean)
    noiseless = PhTrace(0.0, 1.0 / sample_rate, concentrations_to_ph(c_clean_clamped))
    if noise.sigma > 0:
        rng = np.random.Generator(np.random.PCG64(int(noise.seed)))
        c_noisy = c_clean + noise.sigma * rng.standard_normal(t.size)
    else:
        c_noisy = c_clean
    c_noisy, clamps = clamp_concentration(c_noisy)
    trace = PhTrace(0.0, 1.0 / sample_rate, concentrations_to_ph(c_noisy))
    return SimulationReport(trace, clamps, noiseless, c_noisy)


def optical_state_column(schedule: OpticalSchedule, times) -> np.ndarray:
    """1 where the LED is on at each time, else 0."""
    return np.array([1 if schedule.state_at(float(t)) is LIGHT else 0 for t in times])


def format_trace_csv(trace: PhTrace) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_HEADER)
    for t, ph in zip(trace.times, trace.samples):
        writer.writerow([repr(float(t)), repr(float(ph))])
    return buf.getvalue()


def write_trace_csv(trace: PhTrace, path) -> None:
    Path(path).write_text(format_trace_csv(trace))


def parse_trace_csv(text: str) -> PhTrace:
    """Parse ``time_s,ph`` CSV; rows must be uniformly spaced in time."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != TRACE_HEADER:
        raise InvalidArgumentError(f"trace CSV header must be {','.join(TRACE_HEADER)}")
    try:
        rows = [(float(r[0]), float(r[1])) for r in reader if r]
    except (IndexError, ValueError) as exc:
        raise InvalidArgumentError(f"bad trace row: {exc}") from None
    if len(rows) < 2:
        raise InvalidArgumentError("trace CSV needs at least two samples")
    times = np.array([r[0] for r in rows])
    ph = np.array([r[1] for r in rows])
    if not np.all(np.isfinite(ph)):
        raise InvalidArgumentError("trace contains non-finite pH values")
    dt = (times[-1] - times[0]) / (times.size - 1)
    dt = float(f"{dt:.12g}")
    if not dt > 0:
        raise InvalidArgumentError("trace times must be increasing")
    expected = times[0] + np.arange(times.size) * dt
    if np.max(np.abs(times - expected)) > 1e-3 * dt:
        raise InvalidArgumentError("trace is not uniformly sampled")
    return PhTrace(float(times[0]), dt, ph)


def read_trace_csv(path) -> PhTrace:
    return parse_trace_csv(Path(path).read_text())
