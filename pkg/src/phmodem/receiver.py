"""Differential threshold receiver for pH traces.

Chain: trailing moving average -> lagged difference -> onset sync on the
first negative peak -> threshold from peak and dark references -> per-symbol
minimum compared against the threshold.

Filtered samples are labelled with the time of the newest input sample they
depend on, so nothing before a label's time can be affected by later light.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .channel import PhTrace
from .errors import InvalidArgumentError, SyncFailureError, WindowOverrunError
from .modulator import bits_to_str, parse_bits

# Minimum excursion below the dark reference that counts as a sync crossing.
# Keeps floating-point jitter on an otherwise flat noiseless trace from syncing.
SYNC_FLOOR = 1e-10

#: "ph" filters the pH samples directly. "linearized" first maps every sample
#: to pH units linearly in concentration around a reference concentration, so a
#: linear concentration drift becomes an exact constant offset after differencing.
FRONT_ENDS = ("linearized", "ph")


@dataclass(frozen=True)
class ReceiverConfig:
    smooth_len: int = 30
    diff_lag: int = 20
    beta: float = 0.25
    symbol_duration: float = 60.0
    duty_fraction: float = 0.25
    sample_rate: float = 1.0
    adaptation_window: float = 300.0
    sync_k: float = 4.0
    confirm_k: float = 8.0
    peak_symbols: int = 1
    front_end: str = "linearized"

    def __post_init__(self):
        if int(self.smooth_len) != self.smooth_len or self.smooth_len < 1:
            raise InvalidArgumentError("smooth_len must be an integer >= 1")
        if int(self.diff_lag) != self.diff_lag or self.diff_lag < 1:
            raise InvalidArgumentError("diff_lag must be an integer >= 1")
        if not 0 <= self.beta <= 1:
            raise InvalidArgumentError("beta must lie in [0, 1]")
        if not 0 < self.duty_fraction <= 1:
            raise InvalidArgumentError("duty_fraction must lie in (0, 1]")
        if not self.sample_rate > 0:
            raise InvalidArgumentError("sample_rate must be > 0")
        if not self.symbol_duration * self.sample_rate >= 1:
            raise InvalidArgumentError("a symbol must span at least one sample")
        if not self.adaptation_window * self.sample_rate >= 2:
            raise InvalidArgumentError("adaptation window must span at least two samples")
        if not 0 <= self.sync_k <= self.confirm_k:
            raise InvalidArgumentError("need 0 <= sync_k <= confirm_k")
        if self.peak_symbols < 1:
            raise InvalidArgumentError("peak_symbols must be >= 1")
        if self.front_end not in FRONT_ENDS:
            raise InvalidArgumentError(f"front_end must be one of {FRONT_ENDS}")

    @property
    def group_delay(self) -> float:
        """Delay of smoother plus differencer, in samples."""
        return (self.smooth_len - 1) / 2 + self.diff_lag / 2

    @property
    def window_extent(self) -> float:
        """Decision window length in seconds: pulse length plus group delay."""
        return self.duty_fraction * self.symbol_duration + self.group_delay / self.sample_rate

    @property
    def adaptation_samples(self) -> int:
        return int(round(self.adaptation_window * self.sample_rate))


@dataclass(frozen=True, eq=False)
class DiffSignal:
    t_start: float
    sample_interval: float
    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size

    @property
    def times(self) -> np.ndarray:
        return self.t_start + np.arange(self.samples.size) * self.sample_interval


@dataclass(frozen=True)
class DetectionReport:
    bits: tuple[int, ...]
    threshold: float
    peak_reference: float
    dark_reference: float
    sync_offset: float
    per_symbol_min: tuple[float, ...]

    @property
    def bit_string(self) -> str:
        return bits_to_str(self.bits)


def moving_sums(x: np.ndarray, n_out: int, length: int) -> np.ndarray:
    # Strict left-to-right accumulation; the streaming path repeats it exactly.
    acc = x[:n_out].copy()
    for j in range(1, length):
        acc += x[j:j + n_out]
    return acc


def smooth(trace: PhTrace, smooth_len: int) -> PhTrace:
    """Trailing moving average; output[n] averages input[n - L + 1 .. n]."""
    L = int(smooth_len)
    if L < 1:
        raise InvalidArgumentError("smooth_len must be >= 1")
    x = trace.samples
    if x.size < L:
        raise InvalidArgumentError(f"trace of {x.size} samples is shorter than window {L}")
    n_out = x.size - L + 1
    out = moving_sums(x, n_out, L) / L
    return PhTrace(trace.t_start + (L - 1) * trace.sample_interval, trace.sample_interval, out)


def differentiate(trace: PhTrace, diff_lag: int) -> DiffSignal:
    """output[n] = input[n] - input[n - D]."""
    D = int(diff_lag)
    if D < 1:
        raise InvalidArgumentError("diff_lag must be >= 1")
    x = trace.samples
    if x.size <= D:
        raise InvalidArgumentError(f"trace of {x.size} samples is too short for lag {D}")
    return DiffSignal(trace.t_start + D * trace.sample_interval, trace.sample_interval,
                      x[D:] - x[:-D])


def reference_concentration(ph_samples, n_ref: int) -> float:
    """Mean concentration over the first ``n_ref`` samples."""
    head = [10.0 ** -float(v) for v in ph_samples[:n_ref]]
    return math.fsum(head) / len(head)


def linearize_samples(ph_samples, c_ref: float) -> list[float]:
    """pH linearized in concentration: -log10(c_ref) - (c - c_ref) / (c_ref ln 10)."""
    ph_ref = -math.log10(c_ref)
    scale = 1.0 / (c_ref * math.log(10.0))
    return [ph_ref - (10.0 ** -float(v) - c_ref) * scale for v in ph_samples]


def linearize(trace: PhTrace, n_ref: int) -> PhTrace:
    c_ref = reference_concentration(trace.samples, n_ref)
    return PhTrace(trace.t_start, trace.sample_interval, linearize_samples(trace.samples, c_ref))


def filter_chain(trace: PhTrace, cfg: ReceiverConfig) -> tuple[PhTrace, DiffSignal]:
    """Front end, smoother and differencer as configured."""
    if cfg.front_end == "linearized":
        trace = linearize(trace, cfg.adaptation_samples)
    smoothed = smooth(trace, cfg.smooth_len)
    return smoothed, differentiate(smoothed, cfg.diff_lag)


@lru_cache(maxsize=64)
def _template_edge(pulse_samples: float, smooth_len: int, diff_lag: int) -> tuple[float, int]:
    """Half-depth leading edge of the chain's response to a unit pH ramp.

    Returns (edge offset from pulse onset in samples, response support length).
    """
    support = int(math.ceil(pulse_samples)) + smooth_len + diff_lag
    onset = smooth_len + diff_lag + 2
    m = np.arange(onset + support + 2, dtype=float)
    ramp = -np.clip(m - onset, 0.0, pulse_samples)
    sm = moving_sums(ramp, ramp.size - smooth_len + 1, smooth_len) / smooth_len
    d = sm[diff_lag:] - sm[:-diff_lag]
    label0 = smooth_len - 1 + diff_lag
    edge = _leading_edge(d, int(np.argmin(d)), 0.0)
    return edge + label0 - onset, support


def _leading_edge(d: np.ndarray, peak_idx: int, base: float) -> float:
    """Fractional index where ``d`` last rises above half depth before ``peak_idx``."""
    half = base + (d[peak_idx] - base) / 2
    above = np.nonzero(d[:peak_idx] >= half)[0]
    if above.size == 0:
        return 0.0
    i = int(above[-1])
    return i + (d[i] - half) / (d[i] - d[i + 1])


def _sync_levels(d: np.ndarray, cfg: ReceiverConfig) -> tuple[float, float]:
    """(crossing level, confirmation level) from the leading adaptation window."""
    ref = d[:cfg.adaptation_samples]
    mu, sd = float(np.mean(ref)), float(np.std(ref))
    return (mu - max(cfg.sync_k * sd, SYNC_FLOOR),
            mu - max(cfg.confirm_k * sd, SYNC_FLOOR))


def _scan_crossing(d: np.ndarray, levels: tuple[float, float], begin: int,
                   support: int, final: bool = False) -> tuple[int | None, int]:
    """First confirmed crossing at or after ``begin``.

    A crossing counts only once the following ``support`` samples exist and
    reach the confirmation level. With ``final`` set the signal is complete,
    so crossings near its end are judged on whatever samples remain.
    Returns (crossing or None, resume index).
    """
    level, confirm = levels
    i = begin
    limit = d.size - 1 if final else d.size - support
    while i <= limit:
        hits = np.nonzero(d[i:limit + 1] < level)[0]
        if hits.size == 0:
            return None, limit + 1
        c = i + int(hits[0])
        if np.min(d[c:c + support]) < confirm:
            return c, c
        i = c + 1
    return None, i


def _onset_from_crossing(d: np.ndarray, crossing: int, cfg: ReceiverConfig) -> float:
    """Onset position (fractional diff index) given the first sync crossing."""
    pulse = cfg.duty_fraction * cfg.symbol_duration * cfg.sample_rate
    edge_offset, support = _template_edge(pulse, int(cfg.smooth_len), int(cfg.diff_lag))
    peak = crossing + int(np.argmin(d[crossing:crossing + support]))
    W = cfg.adaptation_samples
    b_end = crossing - support
    if b_end >= 2:
        base = float(np.mean(d[max(0, b_end - W):b_end]))
    else:
        base = float(np.mean(d[:W]))
    edge = _leading_edge(d, peak, base)
    return edge - edge_offset


def _sync_lookahead(cfg: ReceiverConfig) -> int:
    pulse = cfg.duty_fraction * cfg.symbol_duration * cfg.sample_rate
    return _template_edge(pulse, int(cfg.smooth_len), int(cfg.diff_lag))[1]


def synchronize(diff: DiffSignal, cfg: ReceiverConfig) -> float:
    """Estimated transmission start time, on the sample grid.

    The first drop below (dark mean - sync_k * dark std), measured over the
    leading adaptation window, whose pulse then reaches (dark mean -
    confirm_k * dark std) locates the first pulse. The half-depth leading edge
    of that pulse, shifted back by the chain's known response delay, gives
    the onset.
    """
    d = diff.samples
    W = cfg.adaptation_samples
    if d.size <= W:
        raise WindowOverrunError(
            f"differenced signal ({d.size} samples) does not cover the adaptation window ({W})")
    crossing, _ = _scan_crossing(d, _sync_levels(d, cfg), W, _sync_lookahead(cfg), final=True)
    if crossing is None:
        raise SyncFailureError("no negative excursion below the dark reference")
    onset = _onset_from_crossing(d, crossing, cfg)
    return diff.t_start + round(onset) * diff.sample_interval


def _index_of(diff: DiffSignal, t: float) -> int:
    return int(round((t - diff.t_start) / diff.sample_interval))


def _window(i0: int, k: int, cfg: ReceiverConfig) -> tuple[int, int]:
    fs = cfg.sample_rate
    lo = i0 + math.ceil(k * cfg.symbol_duration * fs - 1e-9)
    hi = i0 + math.ceil((k * cfg.symbol_duration + cfg.window_extent) * fs - 1e-9)
    return lo, hi


def _dark_reference(d: np.ndarray, i0: int, cfg: ReceiverConfig) -> float:
    W = cfg.adaptation_samples
    if i0 - W < 0:
        raise WindowOverrunError("adaptation window extends before the start of the signal")
    return float(np.mean(d[i0 - W:i0]))


def _peak_reference(d: np.ndarray, i0: int, cfg: ReceiverConfig) -> float:
    mins = []
    for k in range(cfg.peak_symbols):
        lo, hi = _window(i0, k, cfg)
        if hi > d.size:
            raise WindowOverrunError("signal ends inside the peak reference window")
        mins.append(float(np.min(d[lo:hi])))
    return float(np.mean(mins))


def threshold_from_references(peak: float, dark: float, beta: float) -> float:
    return beta * peak + (1 - beta) * dark


def compute_threshold(diff: DiffSignal, cfg: ReceiverConfig,
                      sync_offset: float) -> tuple[float, float, float]:
    """Returns (threshold, peak reference, dark reference)."""
    d = diff.samples
    i0 = _index_of(diff, sync_offset)
    dark = _dark_reference(d, i0, cfg)
    peak = _peak_reference(d, i0, cfg)
    if not peak < dark:
        raise SyncFailureError("no negative excursion below the dark reference after sync")
    return threshold_from_references(peak, dark, cfg.beta), peak, dark


def _check_rate(trace: PhTrace, cfg: ReceiverConfig) -> None:
    if not math.isclose(trace.sample_rate, cfg.sample_rate, rel_tol=1e-9):
        raise InvalidArgumentError(
            f"trace sample rate {trace.sample_rate} Hz does not match receiver "
            f"configuration {cfg.sample_rate} Hz")


def _decide(d: np.ndarray, i0: int, n_symbols: int, cfg: ReceiverConfig, eta: float):
    stats = []
    for k in range(n_symbols):
        lo, hi = _window(i0, k, cfg)
        stats.append(float(np.min(d[lo:hi])))
    bits = tuple(1 if s <= eta else 0 for s in stats)
    return bits, tuple(stats)


def detect(trace: PhTrace, cfg: ReceiverConfig, n_symbols: int,
           sync_offset: float | None = None, threshold: float | None = None) -> DetectionReport:
    """Recover ``n_symbols`` bits from a pH trace.

    With ``threshold`` supplied (e.g. from a calibration run) the peak
    reference is reported but not required to exceed the dark reference.
    """
    if n_symbols < 1:
        raise InvalidArgumentError("n_symbols must be >= 1")
    _check_rate(trace, cfg)
    _, diff = filter_chain(trace, cfg)
    d = diff.samples
    if sync_offset is None:
        sync_offset = synchronize(diff, cfg)
    i0 = _index_of(diff, sync_offset)
    if i0 < 0:
        raise WindowOverrunError("sync offset precedes the differenced signal")
    if _window(i0, n_symbols - 1, cfg)[1] > d.size:
        raise WindowOverrunError(
            f"trace too short for {n_symbols} symbols starting at {sync_offset} s")
    if threshold is None:
        eta, peak, dark = compute_threshold(diff, cfg, sync_offset)
    else:
        eta = float(threshold)
        peak = _peak_reference(d, i0, cfg)
        dark = _dark_reference(d, i0, cfg) if i0 >= cfg.adaptation_samples else math.nan
    bits, stats = _decide(d, i0, n_symbols, cfg, eta)
    return DetectionReport(bits, eta, peak, dark, float(sync_offset), stats)


class StreamingDetector:
    """Incremental receiver fed one sample at a time.

    Produces the same DetectionReport as :func:`detect` on the same samples;
    every decision reuses the batch helpers on the samples received so far.
    """

    def __init__(self, cfg: ReceiverConfig, n_symbols: int, t_start: float = 0.0,
                 sync_offset: float | None = None, threshold: float | None = None):
        if n_symbols < 1:
            raise InvalidArgumentError("n_symbols must be >= 1")
        self.cfg = cfg
        self.n_symbols = n_symbols
        self._dt = 1.0 / cfg.sample_rate
        self._raw: list[float] = []
        self._pending: list[float] = []
        self._c_ref: float | None = None
        self._smoothed: list[float] = []
        self._diff: list[float] = []
        self._diff_t0 = t_start + (cfg.smooth_len - 1 + cfg.diff_lag) * self._dt
        self._fixed_threshold = threshold
        self._sync = sync_offset
        self._crossing: int | None = None
        self._levels: tuple[float, float] | None = None
        self._scan = cfg.adaptation_samples
        self._refs: tuple[float, float, float] | None = None
        self._stats: list[float] = []
        self.bits: list[int] = []

    @property
    def done(self) -> bool:
        return len(self.bits) == self.n_symbols

    def push(self, ph: float) -> list[int]:
        """Feed one sample; returns bits decided by this sample."""
        if self.cfg.front_end == "ph":
            return self._push_filtered(float(ph))
        if self._c_ref is not None:
            return self._push_filtered(linearize_samples([ph], self._c_ref)[0])
        self._pending.append(float(ph))
        if len(self._pending) < self.cfg.adaptation_samples:
            return []
        self._c_ref = reference_concentration(self._pending, self.cfg.adaptation_samples)
        out = []
        for v in linearize_samples(self._pending, self._c_ref):
            out.extend(self._push_filtered(v))
        self._pending = []
        return out

    def _push_filtered(self, value: float) -> list[int]:
        cfg = self.cfg
        self._raw.append(value)
        L, D = int(cfg.smooth_len), int(cfg.diff_lag)
        if len(self._raw) >= L:
            s = 0.0
            for v in self._raw[-L:]:
                s += v
            self._smoothed.append(s / L)
            del self._raw[:-L]
            if len(self._smoothed) > D:
                self._diff.append(self._smoothed[-1] - self._smoothed[-1 - D])
                del self._smoothed[:-(D + 1)]
                return self._advance()
        return []

    def feed(self, samples) -> list[int]:
        out = []
        for v in samples:
            out.extend(self.push(v))
        return out

    def _advance(self, final: bool = False) -> list[int]:
        cfg = self.cfg
        d = np.asarray(self._diff)
        if self._sync is None:
            if self._levels is None:
                if d.size < cfg.adaptation_samples:
                    return []
                self._levels = _sync_levels(d, cfg)
            self._crossing, self._scan = _scan_crossing(d, self._levels, self._scan,
                                                        _sync_lookahead(cfg), final)
            if self._crossing is None:
                return []
            onset = _onset_from_crossing(d, self._crossing, cfg)
            self._sync = self._diff_t0 + round(onset) * self._dt
        i0 = int(round((self._sync - self._diff_t0) / self._dt))
        if self._refs is None:
            if _window(i0, cfg.peak_symbols - 1, cfg)[1] > d.size:
                return []
            if self._fixed_threshold is None:
                dark = _dark_reference(d, i0, cfg)
                peak = _peak_reference(d, i0, cfg)
                if not peak < dark:
                    raise SyncFailureError("no negative excursion below the dark reference after sync")
                self._refs = (threshold_from_references(peak, dark, cfg.beta), peak, dark)
            else:
                peak = _peak_reference(d, i0, cfg)
                dark = _dark_reference(d, i0, cfg) if i0 >= cfg.adaptation_samples else math.nan
                self._refs = (float(self._fixed_threshold), peak, dark)
        new = []
        while not self.done:
            lo, hi = _window(i0, len(self.bits), cfg)
            if hi > d.size:
                break
            s = float(np.min(d[lo:hi]))
            self._stats.append(s)
            bit = 1 if s <= self._refs[0] else 0
            self.bits.append(bit)
            new.append(bit)
        return new

    def report(self) -> DetectionReport:
        """Final report; treats the samples pushed so far as the complete signal."""
        if not self.done and self._sync is None and self._diff:
            self._advance(final=True)
            if self._sync is None and self._levels is not None:
                raise SyncFailureError("no negative excursion below the dark reference")
        if not self.done:
            raise WindowOverrunError(
                f"stream ended after {len(self.bits)} of {self.n_symbols} symbols")
        eta, peak, dark = self._refs
        return DetectionReport(tuple(self.bits), eta, peak, dark, float(self._sync),
                               tuple(self._stats))


def format_report(report: DetectionReport) -> str:
    lines = [
        f"threshold: {report.threshold!r}",
        f"peak_reference: {report.peak_reference!r}",
        f"dark_reference: {report.dark_reference!r}",
        f"sync_offset_s: {report.sync_offset!r}",
        f"n_symbols: {len(report.bits)}",
        "",
        "index,decision_stat,bit",
    ]
    lines += [f"{k},{s!r},{b}" for k, (s, b) in enumerate(zip(report.per_symbol_min, report.bits))]
    lines += ["", report.bit_string, ""]
    return "\n".join(lines)


def parse_report(text: str) -> DetectionReport:
    header, _, rest = text.partition("\n\n")
    kv = {}
    for line in header.splitlines():
        key, _, value = line.partition(":")
        kv[key.strip()] = value.strip()
    table, _, tail = rest.partition("\n\n")
    rows = [line.split(",") for line in table.splitlines()[1:] if line]
    stats = tuple(float(r[1]) for r in rows)
    bits = parse_bits(tail.strip())
    if bits != tuple(int(r[2]) for r in rows):
        raise InvalidArgumentError("report bit string disagrees with its symbol table")
    return DetectionReport(bits, float(kv["threshold"]), float(kv["peak_reference"]),
                           float(kv["dark_reference"]), float(kv["sync_offset_s"]), stats)
