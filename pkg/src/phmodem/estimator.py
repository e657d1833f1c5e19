"""Least-squares fitting of ModelParams to a pH trace with a known schedule.

The search is a bounded Nelder-Mead simplex run from several starts. The
optimizer works in normalized box coordinates (log scale for concentrations
and time constants, linear for the drift), so one tolerance fits all six
parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .channel import PhTrace, ScheduleSampler, concentration_at
from .core import (CONCENTRATION_FLOOR, PARAM_NAMES, IlluminationState,
                   ModelParams, concentrations_to_ph)
from .errors import IdentifiabilityError, InvalidArgumentError, NonConvergenceError
from .modulator import OpticalSchedule

FIT_DOMAINS = ("ph", "concentration")
LOG_SCALED = (True, True, True, True, False, True)

PARAM_UNITS = {
    "c_eq_dark": "mol/l",
    "c_eq_light": "mol/l",
    "tau_dark": "s",
    "tau_light": "s",
    "drift_slope": "mol/l/s",
    "c_init": "mol/l",
}


@dataclass(frozen=True)
class FitConfig:
    bounds: dict | None = None
    n_starts: int = 8
    max_iters: int = 3000
    tol: float = 1e-6
    fit_domain: str = "ph"
    seed: int = 0
    restarts: int = 6

    def __post_init__(self):
        if self.n_starts < 1:
            raise InvalidArgumentError("n_starts must be >= 1")
        if not self.tol > 0:
            raise InvalidArgumentError("tol must be > 0")
        if self.max_iters < 1:
            raise InvalidArgumentError("max_iters must be >= 1")
        if self.fit_domain not in FIT_DOMAINS:
            raise InvalidArgumentError(f"fit_domain must be one of {FIT_DOMAINS}")
        if self.bounds is not None:
            for name, (lo, hi) in self.bounds.items():
                if name not in PARAM_NAMES:
                    raise InvalidArgumentError(f"unknown parameter {name!r} in bounds")
                if not lo < hi:
                    raise InvalidArgumentError(f"bounds for {name} need lower < upper")


@dataclass
class FitResult:
    params: ModelParams
    rss: float
    n_evals: int
    converged: bool
    per_start_rss: list[float] = field(default_factory=list)
    fit_domain: str = "ph"


def default_bounds(trace: PhTrace) -> dict:
    c_lo, c_hi = 1e-8, 1e-4
    duration = max(trace.t_end, trace.sample_interval)
    m = (c_hi - c_lo) / duration
    return {
        "c_eq_dark": (c_lo, c_hi),
        "c_eq_light": (c_lo, c_hi),
        "tau_dark": (1.0, 3600.0),
        "tau_light": (1.0, 3600.0),
        "drift_slope": (-m, m),
        "c_init": (c_lo, c_hi),
    }


class _Box:
    """Maps the unit cube onto the parameter box."""

    def __init__(self, bounds: dict):
        self.lo = np.array([bounds[n][0] for n in PARAM_NAMES], dtype=float)
        self.hi = np.array([bounds[n][1] for n in PARAM_NAMES], dtype=float)
        self.log = np.array(LOG_SCALED)
        if np.any(self.lo[self.log] <= 0):
            raise InvalidArgumentError("concentration and time-constant bounds must be > 0")

    def to_params(self, u) -> np.ndarray:
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        out = self.lo + u * (self.hi - self.lo)
        lo, hi = np.log(self.lo[self.log]), np.log(self.hi[self.log])
        out[self.log] = np.exp(lo + u[self.log] * (hi - lo))
        return out

    def to_unit(self, p) -> np.ndarray:
        p = np.clip(np.asarray(p, dtype=float), self.lo, self.hi)
        u = (p - self.lo) / (self.hi - self.lo)
        lo, hi = np.log(self.lo[self.log]), np.log(self.hi[self.log])
        u[self.log] = (np.log(p[self.log]) - lo) / (hi - lo)
        return np.clip(u, 0.0, 1.0)


def _check_times(schedule: OpticalSchedule, times: np.ndarray) -> None:
    if times.size == 0:
        raise InvalidArgumentError("no sample times given")
    if times.min() < 0 or times.max() > schedule.total_duration * (1 + 1e-12):
        raise InvalidArgumentError(
            f"sample times must lie within the schedule [0, {schedule.total_duration}] s")


def model_trace(params: ModelParams, schedule: OpticalSchedule, sample_times) -> np.ndarray:
    """Noiseless model pH at the given times (clamped like the simulator)."""
    t = np.asarray(sample_times, dtype=float)
    _check_times(schedule, t)
    t = np.minimum(t, schedule.total_duration)
    c = concentration_at(schedule, params, t)
    return concentrations_to_ph(np.maximum(c, CONCENTRATION_FLOOR))


def _objective(vec, sampler: ScheduleSampler, target, domain) -> float:
    c = sampler.concentration(*vec)
    if domain == "ph":
        model = concentrations_to_ph(np.maximum(c, CONCENTRATION_FLOOR))
    else:
        model = c
    r = model - target
    return float(np.dot(r, r))


def _target(trace: PhTrace, domain: str) -> np.ndarray:
    return trace.samples if domain == "ph" else 10.0 ** -trace.samples


def residual(params: ModelParams, schedule: OpticalSchedule, trace: PhTrace,
             fit_domain: str = "ph") -> float:
    """Residual sum of squares between model and trace in the chosen domain."""
    if fit_domain not in FIT_DOMAINS:
        raise InvalidArgumentError(f"fit_domain must be one of {FIT_DOMAINS}")
    t = trace.times
    if t.min() < -1e-9 or t.max() > schedule.total_duration + 1e-9:
        raise InvalidArgumentError("trace time base does not fit inside the schedule")
    t = np.clip(t, 0.0, schedule.total_duration)
    return _objective(params.as_vector(), ScheduleSampler(schedule, t),
                      _target(trace, fit_domain), fit_domain)


def _linear_basis(schedule: OpticalSchedule, tau_dark: float, tau_light: float,
                  t: np.ndarray) -> np.ndarray:
    """Columns multiplying (c_eq_dark, c_eq_light, c_init, drift) in the concentration."""
    segs = schedule.segments
    # state coefficients on (c_eq_dark, c_eq_light, c_init) at each segment start
    coef = np.zeros((len(segs), 3))
    decay = np.zeros(len(segs))
    state = np.array([0.0, 0.0, 1.0])
    for i, seg in enumerate(segs):
        coef[i] = state
        tau = tau_light if seg.state is IlluminationState.LIGHT else tau_dark
        decay[i] = tau
        e = math.exp(-seg.duration / tau)
        target = np.array([0.0, 1.0, 0.0]) if seg.state is IlluminationState.LIGHT else np.array([1.0, 0.0, 0.0])
        state = state * e + target * (1 - e)
    starts = np.array([s.start for s in segs])
    idx = np.searchsorted(starts, t, side="right") - 1
    e = np.exp(-(t - starts[idx]) / decay[idx])
    light = np.array([s.state is IlluminationState.LIGHT for s in segs])[idx]
    A = coef[idx] * e[:, None]
    A[:, 0] += np.where(light, 0.0, 1 - e)
    A[:, 1] += np.where(light, 1 - e, 0.0)
    return np.column_stack([A, t])


def _solve_linear(box: _Box, A_fn, c_target: np.ndarray, tau_dark: float,
                  tau_light: float, fallback: float) -> np.ndarray:
    """Best concentration-domain values of the linear parameters for fixed time constants."""
    A = A_fn(tau_dark, tau_light)
    scale = np.maximum(np.abs(A).max(axis=0), 1e-300)
    sol, *_ = np.linalg.lstsq(A / scale, c_target, rcond=None)
    c_eq_dark, c_eq_light, c_init, drift = sol / scale
    vec = np.array([c_eq_dark, c_eq_light, tau_dark, tau_light, drift, c_init])
    for i in (0, 1, 5):
        if not vec[i] > 0:
            vec[i] = fallback
    return np.clip(vec, box.lo, box.hi)


def _simplex_search(fun, u0: np.ndarray, step: float, maxiter: int, xatol: float,
                    rtol: float, history: list | None = None):
    """Bounded Nelder-Mead on the unit cube, stopping on a relative objective spread."""
    f0 = fun(u0)
    scale = f0 if f0 > 0 else 1.0
    callback = None
    if history is not None:
        best = []
        history.append(best)

        def callback(intermediate_result):
            best.append(float(intermediate_result.fun) * scale)

    return minimize(lambda u: fun(u) / scale, u0, method="Nelder-Mead",
                    bounds=[(0.0, 1.0)] * u0.size, callback=callback,
                    options={"maxiter": maxiter, "xatol": xatol, "fatol": rtol,
                             "adaptive": u0.size > 2,
                             "initial_simplex": _small_simplex(u0, step)}), scale


def _small_simplex(u0: np.ndarray, step: float) -> np.ndarray:
    pts = [u0]
    for i in range(u0.size):
        p = u0.copy()
        p[i] = p[i] + step if p[i] + step <= 1 else p[i] - step
        pts.append(p)
    return np.array(pts)


def check_identifiable(schedule: OpticalSchedule, trace: PhTrace) -> None:
    t0, t1 = trace.t_start, trace.t_end
    seen = {s.state for s in schedule.segments if s.end > t0 and s.start < t1}
    if seen != {IlluminationState.DARK, IlluminationState.LIGHT}:
        raise IdentifiabilityError(
            "trace must span both a light and a dark segment to identify all parameters")


def fit(schedule: OpticalSchedule, trace: PhTrace, cfg: FitConfig | None = None,
        record: list | None = None, history: list | None = None) -> FitResult:
    """Multistart bounded Nelder-Mead fit of all six parameters.

    ``record``, if given, collects ``(parameter vector, objective)`` for every
    evaluation. ``history``, if given, receives one list per local search
    holding the best objective after each iteration.
    """
    cfg = cfg or FitConfig()
    t = trace.times
    if t.min() < -1e-9 or t.max() > schedule.total_duration + 1e-9:
        raise InvalidArgumentError("trace time base does not fit inside the schedule")
    t = np.clip(t, 0.0, schedule.total_duration)
    check_identifiable(schedule, trace)
    bounds = default_bounds(trace)
    if cfg.bounds:
        bounds.update(cfg.bounds)
    box = _Box(bounds)
    target = _target(trace, cfg.fit_domain)
    sampler = ScheduleSampler(schedule, t)
    n_evals = 0

    def f(u):
        nonlocal n_evals
        n_evals += 1
        vec = box.to_params(u)
        val = _objective(vec, sampler, target, cfg.fit_domain)
        if record is not None:
            record.append((vec, val))
        return val

    # Stage 1: simplex over the two time constants from space-filling starts,
    # with the concentration-linear parameters solved exactly at each point.
    c_target = 10.0 ** -trace.samples
    fallback = float(c_target[0])

    def A_fn(tau_d, tau_l):
        return _linear_basis(schedule, tau_d, tau_l, t)

    def full_from_taus(u_tau):
        u = np.zeros(len(PARAM_NAMES))
        u[2:4] = np.clip(u_tau, 0.0, 1.0)
        tau_d, tau_l = box.to_params(u)[2:4]
        return box.to_unit(_solve_linear(box, A_fn, c_target, tau_d, tau_l, fallback))

    taus = qmc.LatinHypercube(d=2, seed=cfg.seed).random(cfg.n_starts)
    tau_runs = []
    for u_tau in taus:
        res, scale = _simplex_search(lambda v: f(full_from_taus(v)), u_tau, 0.05,
                                     cfg.max_iters, 1e-6, cfg.tol, history)
        tau_runs.append((float(res.fun) * scale, tuple(full_from_taus(res.x))))
    tau_runs.sort()

    # Stage 2: all six parameters, restarted until a pass stops improving or
    # the residual sits at rounding level (an exact fit).
    floor = target.size * (1e-26 if cfg.fit_domain == "ph" else 1e-38)
    polished = []
    for val, u in tau_runs[:2]:
        u = np.array(u)
        ok = False
        for _ in range(cfg.restarts):
            res, scale = _simplex_search(f, u, 1e-3, cfg.max_iters, 1e-9, cfg.tol, history)
            ok = ok or bool(res.success)
            new_val = float(res.fun) * scale
            improved = new_val < val * (1 - cfg.tol)
            if new_val <= val:
                u, val = res.x, new_val
            if not improved or val <= floor:
                break
        polished.append((val, tuple(box.to_params(u)), ok))

    polished.sort(key=lambda r: (r[0], r[1]))
    best_val, best_vec, _ = polished[0]
    per_start = sorted([r[0] for r in polished] + [r[0] for r in tau_runs[2:]])
    atol = 1e-15 if cfg.fit_domain == "ph" else 1e-27
    converged = len(polished) < 2 or abs(polished[1][0] - best_val) <= cfg.tol * best_val + atol
    result = FitResult(ModelParams.from_vector(best_vec), float(best_val), n_evals,
                       bool(converged), per_start, cfg.fit_domain)
    if not any(r[2] for r in polished) or not math.isfinite(best_val):
        result = replace(result, converged=False)
        raise NonConvergenceError("no start of the multistart search converged", result)
    return result


def format_fit_result(result: FitResult) -> str:
    lines = []
    for name in PARAM_NAMES:
        lines.append(f"{name}: {getattr(result.params, name)!r} {PARAM_UNITS[name]}")
    unit = "pH^2" if result.fit_domain == "ph" else "(mol/l)^2"
    lines += [
        f"rss: {result.rss!r} {unit}",
        f"n_evals: {result.n_evals}",
        f"converged: {str(result.converged).lower()}",
        "per_start_rss: " + ",".join(repr(v) for v in result.per_start_rss),
        f"fit_domain: {result.fit_domain}",
        "",
    ]
    return "\n".join(lines)


def parse_fit_result(text: str) -> FitResult:
    kv = {}
    for line in text.splitlines():
        if ":" in line:
            key, _, value = line.partition(":")
            kv[key.strip()] = value.strip()
    vals = [float(kv[n].split()[0]) for n in PARAM_NAMES]
    per = [float(v) for v in kv.get("per_start_rss", "").split(",") if v]
    return FitResult(ModelParams.from_vector(vals), float(kv["rss"].split()[0]),
                     int(kv["n_evals"]), kv["converged"] == "true", per,
                     kv.get("fit_domain", "ph"))
