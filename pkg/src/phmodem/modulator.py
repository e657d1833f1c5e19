"""On-off keying: bit sequences to light/dark schedules."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .core import IlluminationState
from .errors import InvalidArgumentError

DARK = IlluminationState.DARK
LIGHT = IlluminationState.LIGHT

SCHEDULE_HEADER = ("t_start_s", "t_end_s", "state")


def parse_bits(bits: str | Iterable[int]) -> tuple[int, ...]:
    """Accept a string such as ``"1001"`` or an iterable of 0/1 integers."""
    if isinstance(bits, str):
        text = "".join(bits.split())
        if any(ch not in "01" for ch in text):
            raise InvalidArgumentError(f"bit string may only contain 0 and 1: {bits!r}")
        return tuple(int(ch) for ch in text)
    out = tuple(int(b) for b in bits)
    if any(b not in (0, 1) for b in out):
        raise InvalidArgumentError("bits must be 0 or 1")
    return out


def bits_to_str(bits: Sequence[int]) -> str:
    return "".join(str(int(b)) for b in bits)


@dataclass(frozen=True)
class ModulationConfig:
    symbol_duration: float
    duty_fraction: float

    def __post_init__(self):
        if not self.symbol_duration > 0:
            raise InvalidArgumentError("symbol_duration must be > 0")
        if not 0 < self.duty_fraction <= 1:
            raise InvalidArgumentError("duty_fraction must lie in (0, 1]")

    @property
    def pulse_duration(self) -> float:
        return self.duty_fraction * self.symbol_duration


@dataclass(frozen=True)
class Segment:
    start: float
    end: float
    state: IlluminationState

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class OpticalSchedule:
    """Contiguous, merged light/dark segments starting at t = 0."""

    segments: tuple[Segment, ...]

    def __post_init__(self):
        segs = tuple(self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise InvalidArgumentError("schedule needs at least one segment")
        if segs[0].start != 0:
            raise InvalidArgumentError("schedule must start at t = 0")
        for prev, seg in zip(segs, segs[1:]):
            if seg.start != prev.end:
                raise InvalidArgumentError(f"segments not contiguous at t = {prev.end}")
        for seg in segs:
            if not seg.start < seg.end:
                raise InvalidArgumentError(f"empty segment at t = {seg.start}")

    @property
    def total_duration(self) -> float:
        return self.segments[-1].end

    def light_time(self) -> float:
        return sum(s.duration for s in self.segments if s.state is LIGHT)

    def states(self) -> set[IlluminationState]:
        return {s.state for s in self.segments}

    def state_at(self, t: float) -> IlluminationState:
        """State on the half-open segment [start, end) containing ``t``."""
        for seg in self.segments:
            if t < seg.end:
                return seg.state
        return self.segments[-1].state

    def shifted(self, offset: float) -> list[Segment]:
        return [Segment(s.start + offset, s.end + offset, s.state) for s in self.segments]


def _merge(raw: Iterable[Segment]) -> tuple[Segment, ...]:
    merged: list[Segment] = []
    for seg in raw:
        if seg.end <= seg.start:
            continue
        if merged and merged[-1].state is seg.state:
            merged[-1] = Segment(merged[-1].start, seg.end, seg.state)
        else:
            merged.append(seg)
    return tuple(merged)


def schedule_from_bits(bits, cfg: ModulationConfig) -> OpticalSchedule:
    """Rectangular pulse over the first ``duty_fraction`` of each one-symbol."""
    bits = parse_bits(bits)
    if not bits:
        raise InvalidArgumentError("cannot modulate an empty bit sequence")
    T = cfg.symbol_duration
    raw = []
    for k, bit in enumerate(bits):
        t0, t1 = k * T, (k + 1) * T
        if bit:
            t_off = t1 if cfg.duty_fraction == 1 else t0 + cfg.pulse_duration
            raw.append(Segment(t0, t_off, LIGHT))
            raw.append(Segment(t_off, t1, DARK))
        else:
            raw.append(Segment(t0, t1, DARK))
    return OpticalSchedule(_merge(raw))


def prepend_dark_adaptation(schedule: OpticalSchedule, duration: float) -> OpticalSchedule:
    if not duration >= 0:
        raise InvalidArgumentError("dark adaptation duration must be >= 0")
    if duration == 0:
        return schedule
    return OpticalSchedule(_merge([Segment(0.0, duration, DARK), *schedule.shifted(duration)]))


def concatenate(first: OpticalSchedule, second: OpticalSchedule) -> OpticalSchedule:
    """Append ``second`` after ``first``, merging the seam."""
    return OpticalSchedule(_merge([*first.segments, *second.shifted(first.total_duration)]))


def write_schedule_csv(schedule: OpticalSchedule, path=None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SCHEDULE_HEADER)
    for seg in schedule.segments:
        writer.writerow([repr(float(seg.start)), repr(float(seg.end)), seg.state.value])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_schedule_csv(path) -> OpticalSchedule:
    return parse_schedule_csv(Path(path).read_text())


def parse_schedule_csv(text: str) -> OpticalSchedule:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != SCHEDULE_HEADER:
        raise InvalidArgumentError(f"schedule CSV header must be {','.join(SCHEDULE_HEADER)}")
    segs = []
    for row in reader:
        if not row:
            continue
        try:
            segs.append(Segment(float(row[0]), float(row[1]), IlluminationState.parse(row[2])))
        except (IndexError, ValueError) as exc:
            raise InvalidArgumentError(f"bad schedule row {row!r}: {exc}") from None
    return OpticalSchedule(tuple(segs))

