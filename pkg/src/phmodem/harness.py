"""End-to-end runs, BER sweeps and plot-data emission.

Configuration is a YAML document whose keys carry their units
(``symbol_duration_s``, ``tau_dark_s`` or ``tau_dark_min``, ...). Seeds for
individual trials come from :func:`derive_seed`, which feeds
``(master_seed, *key)`` to ``numpy.random.SeedSequence`` and takes one 64-bit
word of its output.
"""

from __future__ import annotations

import copy
import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .channel import NoiseConfig, SimulationReport, simulate_trace
from .core import ModelParams
from .errors import InvalidArgumentError, PhModemError
from .estimator import FitConfig
from .modulator import (ModulationConfig, OpticalSchedule, parse_bits,
                        prepend_dark_adaptation, schedule_from_bits)
from .receiver import ReceiverConfig, detect, filter_chain

WORKERS_ENV = "PHMODEM_WORKERS"

SEQ80_BITS = ("10011000" "10101110110101111010011001010010"
              "0100111011011101110001001011010010000000")
SEQ20_BITS = "10011000101011101101"

SINGLE_PULSE_MODEL = {"c_eq_dark_mol_l": 1.53e-6, "c_eq_light_mol_l": 1.65e-6,
                      "tau_dark_min": 3.18, "tau_light_min": 1.84, "drift_slope_mol_l_s": 0.0}
SEQ_MODEL = {"c_eq_dark_mol_l": 2.82e-6, "c_eq_light_mol_l": 5.79e-6,
             "tau_dark_min": 6.39, "tau_light_min": 8.48, "drift_slope_mol_l_s": 0.0}

# The fitted drift slopes reported alongside these parameter sets are not
# self-consistent with the plotted ranges, so presets run drift-free.
PRESETS = {
    "single-pulse": {"bits": "1", "symbol_duration_s": 6600.0, "duty_fraction": 0.5,
                     "model": SINGLE_PULSE_MODEL},
    "seq20": {"bits": SEQ20_BITS, "symbol_duration_s": 60.0, "duty_fraction": 0.25,
              "model": SEQ_MODEL},
    "seq80": {"bits": SEQ80_BITS, "symbol_duration_s": 60.0, "duty_fraction": 0.25,
              "model": SEQ_MODEL},
}

DEFAULTS = {
    "symbol_duration_s": 60.0,
    "duty_fraction": 0.25,
    "dark_adaptation_s": 1800.0,
    "sample_rate_hz": 1.0,
    "bits_seed": 0,
    "model": dict(SEQ_MODEL),
    "noise": {"sigma_mol_l": 0.0, "seed": 0},
    "receiver": {},
    "fit": {},
}

SWEEPABLE = {
    "sigma_mol_l": ("noise", "sigma_mol_l"),
    "drift_slope_mol_l_s": ("model", "drift_slope_mol_l_s"),
    "beta": ("receiver", "beta"),
    "smooth_len_samples": ("receiver", "smooth_len_samples"),
    "diff_lag_samples": ("receiver", "diff_lag_samples"),
    "duty_fraction": (None, "duty_fraction"),
    "symbol_duration_s": (None, "symbol_duration_s"),
}

BER_HEADER = ("swept_value", "trials", "bit_errors", "total_bits", "ber", "sync_failures")


def derive_seed(master_seed: int, *key: int) -> int:
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def random_bits(n: int, seed: int) -> tuple[int, ...]:
    """``n`` random bits whose first bit is forced to 1 so the receiver can sync."""
    if n < 1:
        raise InvalidArgumentError("n_bits must be >= 1")
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    return (1,) + tuple(int(b) for b in rng.integers(0, 2, n - 1))


def _merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in (update or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def set_dotted(cfg: dict, dotted: str, value) -> dict:
    """Return a copy of ``cfg`` with ``a.b.c`` set to ``value``."""
    out = copy.deepcopy(cfg)
    node = out
    *path, last = dotted.split(".")
    for part in path:
        node = node.setdefault(part, {})
    node[last] = value
    return out


def load_config_dict(path=None, preset: str | None = None, overrides=()) -> dict:
    """Merge defaults, an optional preset, an optional YAML file and ``key=value`` overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise InvalidArgumentError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        cfg = _merge(cfg, PRESETS[preset])
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise InvalidArgumentError(f"cannot read config {path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise InvalidArgumentError("config file must hold a mapping")
        if "bits" in loaded or "n_bits" in loaded:
            cfg.pop("bits", None)
            cfg.pop("n_bits", None)
        cfg = _merge(cfg, loaded)
    for item in overrides:
        key, sep, text = item.partition("=")
        if not sep:
            raise InvalidArgumentError(f"override {item!r} is not of the form key=value")
        cfg = set_dotted(cfg, key.strip(), yaml.safe_load(text))
    return cfg


def _seconds(section: dict, stem: str, default=None):
    if f"{stem}_s" in section:
        return float(section[f"{stem}_s"])
    if f"{stem}_min" in section:
        return 60.0 * float(section[f"{stem}_min"])
    if default is None:
        raise InvalidArgumentError(f"missing {stem}_s (or {stem}_min)")
    return default


@dataclass(frozen=True)
class RunConfig:
    bits: tuple[int, ...]
    modulation: ModulationConfig
    params: ModelParams
    noise: NoiseConfig
    receiver: ReceiverConfig
    dark_adaptation: float = 1800.0
    sample_rate: float = 1.0
    fit: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        if not self.bits:
            raise InvalidArgumentError("bit sequence is empty")
        if self.dark_adaptation < 0:
            raise InvalidArgumentError("dark_adaptation_s must be >= 0")
        rc = self.receiver
        if not math.isclose(rc.sample_rate, self.sample_rate):
            raise InvalidArgumentError("receiver and simulation sample rates differ")
        needed = rc.adaptation_window + (rc.smooth_len - 1 + rc.diff_lag) / self.sample_rate
        if self.dark_adaptation < needed:
            raise InvalidArgumentError(
                f"dark adaptation of {self.dark_adaptation} s is shorter than the receiver's "
                f"adaptation window plus filter fill ({needed} s)")

    @property
    def schedule(self) -> OpticalSchedule:
        return prepend_dark_adaptation(schedule_from_bits(self.bits, self.modulation),
                                       self.dark_adaptation)

    @property
    def transmission_start(self) -> float:
        return self.dark_adaptation


def run_config_from_dict(cfg: dict) -> RunConfig:
    try:
        return _run_config_from_dict(cfg)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, PhModemError):
            raise
        raise InvalidArgumentError(f"invalid configuration: {exc}") from None


def _run_config_from_dict(cfg: dict) -> RunConfig:
    modulation = ModulationConfig(_seconds(cfg, "symbol_duration"), float(cfg["duty_fraction"]))
    if cfg.get("bits") is not None:
        bits = parse_bits(str(cfg["bits"]))
    elif cfg.get("n_bits") is not None:
        bits = random_bits(int(cfg["n_bits"]), int(cfg.get("bits_seed", 0)))
    else:
        raise InvalidArgumentError("config needs either bits or n_bits")
    m = cfg["model"]
    c_init = m.get("c_init_mol_l")
    params = ModelParams(
        float(m["c_eq_dark_mol_l"]), float(m["c_eq_light_mol_l"]),
        _seconds(m, "tau_dark"), _seconds(m, "tau_light"),
        float(m.get("drift_slope_mol_l_s", 0.0)),
        None if c_init is None else float(c_init))
    nz = cfg.get("noise", {})
    noise = NoiseConfig(float(nz.get("sigma_mol_l", 0.0)), int(nz.get("seed", 0)))
    fs = float(cfg.get("sample_rate_hz", 1.0))
    receiver = _receiver_from_dict(cfg, modulation)
    return RunConfig(bits, modulation, params, noise, receiver,
                     float(cfg.get("dark_adaptation_s", 1800.0)), fs,
                     fit_config_from_dict(cfg.get("fit", {})))


def receiver_config_from_dict(cfg: dict) -> ReceiverConfig:
    """Receiver settings alone; needs no bit sequence or model section."""
    try:
        modulation = ModulationConfig(_seconds(cfg, "symbol_duration"), float(cfg["duty_fraction"]))
        return _receiver_from_dict(cfg, modulation)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, PhModemError):
            raise
        raise InvalidArgumentError(f"invalid configuration: {exc}") from None


def _receiver_from_dict(cfg: dict, modulation: ModulationConfig) -> ReceiverConfig:
    r = cfg.get("receiver", {})
    base = ReceiverConfig()
    return ReceiverConfig(
        smooth_len=int(r.get("smooth_len_samples", base.smooth_len)),
        diff_lag=int(r.get("diff_lag_samples", base.diff_lag)),
        beta=float(r.get("beta", base.beta)),
        symbol_duration=modulation.symbol_duration,
        duty_fraction=modulation.duty_fraction,
        sample_rate=float(cfg.get("sample_rate_hz", 1.0)),
        adaptation_window=float(r.get("adaptation_window_s", base.adaptation_window)),
        sync_k=float(r.get("sync_k", base.sync_k)),
        confirm_k=float(r.get("confirm_k", base.confirm_k)),
        peak_symbols=int(r.get("peak_symbols", base.peak_symbols)),
        front_end=str(r.get("front_end", base.front_end)),
    )


_BOUND_KEYS = {
    "c_eq_dark_mol_l": "c_eq_dark", "c_eq_light_mol_l": "c_eq_light",
    "tau_dark_s": "tau_dark", "tau_light_s": "tau_light",
    "drift_slope_mol_l_s": "drift_slope", "c_init_mol_l": "c_init",
}


def fit_config_from_dict(f: dict) -> FitConfig:
    base = FitConfig()
    bounds = None
    if f.get("bounds"):
        bounds = {}
        for key, pair in f["bounds"].items():
            if key not in _BOUND_KEYS:
                raise InvalidArgumentError(f"unknown bound {key!r}; use one of {sorted(_BOUND_KEYS)}")
            bounds[_BOUND_KEYS[key]] = (float(pair[0]), float(pair[1]))
    return FitConfig(bounds=bounds,
                     n_starts=int(f.get("n_starts", base.n_starts)),
                     max_iters=int(f.get("max_iters", base.max_iters)),
                     tol=float(f.get("tol", base.tol)),
                     fit_domain=str(f.get("fit_domain", base.fit_domain)),
                     seed=int(f.get("seed", base.seed)))


def simulate_run(run: RunConfig) -> tuple[OpticalSchedule, SimulationReport]:
    schedule = run.schedule
    return schedule, simulate_trace(schedule, run.params, run.noise, run.sample_rate)


@dataclass(frozen=True)
class TrialOutcome:
    bit_errors: int
    n_bits: int
    sync_failed: bool


def run_trial(run: RunConfig) -> TrialOutcome:
    """Simulate and detect once.

    A trial whose receiver cannot sync (or runs out of signal) is scored as if
    it had decided all zeros.
    """
    _, rep = simulate_run(run)
    try:
        got = detect(rep.trace, run.receiver, len(run.bits)).bits
        failed = False
    except PhModemError:
        got = (0,) * len(run.bits)
        failed = True
    errors = sum(a != b for a, b in zip(got, run.bits))
    return TrialOutcome(errors, len(run.bits), failed)


@dataclass(frozen=True)
class SweepSpec:
    param: str
    values: tuple[float, ...]
    trials: int
    base: dict
    master_seed: int = 0

    def __post_init__(self):
        if self.param not in SWEEPABLE:
            raise InvalidArgumentError(f"cannot sweep {self.param!r}; choose from {sorted(SWEEPABLE)}")
        if not self.values:
            raise InvalidArgumentError("sweep grid is empty")
        if self.trials < 1:
            raise InvalidArgumentError("trials must be >= 1")


@dataclass(frozen=True)
class BerRecord:
    swept_value: float
    trials: int
    bit_errors: int
    total_bits: int
    sync_failures: int

    @property
    def ber(self) -> float:
        return self.bit_errors / self.total_bits if self.total_bits else 0.0


def trial_config(spec: SweepSpec, value: float, trial: int) -> RunConfig:
    section, key = SWEEPABLE[spec.param]
    cfg = spec.base if section is None else _merge(spec.base, {section: {}})
    cfg = set_dotted(cfg, key if section is None else f"{section}.{key}", value)
    # common random numbers: a trial index draws the same noise and bits at every grid point
    cfg = set_dotted(cfg, "noise.seed", derive_seed(spec.master_seed, trial, 0))
    if cfg.get("bits") is None:
        cfg = set_dotted(cfg, "bits_seed", derive_seed(spec.master_seed, trial, 1))
    return run_config_from_dict(cfg)


def _grid_point(args) -> BerRecord:
    spec, value = args
    errors = total = fails = 0
    for trial in range(spec.trials):
        out = run_trial(trial_config(spec, value, trial))
        errors += out.bit_errors
        total += out.n_bits
        fails += out.sync_failed
    return BerRecord(float(value), spec.trials, errors, total, fails)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        raise InvalidArgumentError(f"{WORKERS_ENV} must be an integer") from None


def run_sweep(spec: SweepSpec, workers: int | None = None) -> list[BerRecord]:
    """One BerRecord per grid value, in grid order regardless of worker count."""
    # validate the base configuration before fanning out
    trial_config(spec, spec.values[0], 0)
    workers = default_workers() if workers is None else max(1, int(workers))
    jobs = [(spec, v) for v in spec.values]
    if workers == 1 or len(jobs) == 1:
        return [_grid_point(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_grid_point, jobs))


def format_ber_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(BER_HEADER)
    for r in records:
        writer.writerow([repr(r.swept_value), r.trials, r.bit_errors, r.total_bits,
                         repr(r.ber), r.sync_failures])
    return buf.getvalue()


def parse_ber_csv(text: str) -> list[BerRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != BER_HEADER:
        raise InvalidArgumentError(f"sweep CSV header must be {','.join(BER_HEADER)}")
    return [BerRecord(float(r[0]), int(r[1]), int(r[2]), int(r[3]), int(r[5]))
            for r in rows[1:] if r]


FIGURES = ("single-shot", "multi-shot", "detection")


def figure_data(run: RunConfig, which: str) -> str:
    """Aligned plot columns for one figure layout, as CSV text.

    Cells that are undefined at a time (filter start-up, no threshold) are left
    empty.
    """
    if which not in FIGURES:
        raise InvalidArgumentError(f"which must be one of {FIGURES}")
    schedule, rep = simulate_run(run)
    trace = rep.trace
    times = trace.times
    from .channel import optical_state_column
    cols = {
        "time_s": times,
        "optical_state": optical_state_column(schedule, times),
        "ph": trace.samples,
    }
    if which in ("single-shot", "multi-shot"):
        cols["ph_model"] = rep.noiseless_trace.samples
    else:
        smoothed, diff = filter_chain(trace, run.receiver)
        n = times.size
        cols["ph_smoothed"] = _aligned(smoothed.samples, n)
        cols["delta_ph"] = _aligned(diff.samples, n)
        try:
            report = detect(trace, run.receiver, len(run.bits))
            eta = report.threshold
            sync = report.sync_offset
        except PhModemError:
            eta, sync = math.nan, math.nan
        cols["threshold"] = np.full(n, eta)
        T = run.modulation.symbol_duration
        k = (times - run.transmission_start) / T
        on_grid = np.isclose(k, np.round(k), atol=0.5 / (T * run.sample_rate) * 1e-6)
        cols["symbol_boundary"] = ((k >= 0) & (k <= len(run.bits)) & on_grid).astype(int)
        cols["sync_offset_s"] = np.full(n, sync)
    return _columns_csv(cols)


def _aligned(values: np.ndarray, n: int) -> np.ndarray:
    """Right-align a filter output (labelled by its newest input) on the trace grid."""
    out = np.full(n, math.nan)
    out[n - values.size:] = values
    return out


def _columns_csv(cols: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(cols))
    for row in zip(*cols.values()):
        writer.writerow(["" if isinstance(v, float) and math.isnan(v) else _cell(v) for v in row])
    return buf.getvalue()


def _cell(v) -> str:
    if isinstance(v, (np.integer, int)):
        return str(int(v))
    return repr(float(v))


def parse_figure_csv(text: str) -> dict[str, np.ndarray]:
    rows = list(csv.reader(io.StringIO(text)))
    header = rows[0]
    data = {h: np.array([float(r[i]) if r[i] != "" else math.nan for r in rows[1:]])
            for i, h in enumerate(header)}
    return data


def with_noise(run: RunConfig, sigma: float, seed: int) -> RunConfig:
    return replace(run, noise=NoiseConfig(sigma, seed))
