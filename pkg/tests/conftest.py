import math

import numpy as np
import pytest

from phmodem.core import IlluminationState, ModelParams
from phmodem.modulator import ModulationConfig, prepend_dark_adaptation, schedule_from_bits

SINGLE_PULSE = ModelParams.from_minutes(1.53e-6, 1.65e-6, 3.18, 1.84)
SEQ_PARAMS = ModelParams.from_minutes(2.82e-6, 5.79e-6, 6.39, 8.48)
SEQ20_BITS = "10011000101011101101"
SEQ80_BITS = ("10011000" "10101110110101111010011001010010"
              "0100111011011101110001001011010010000000")

EULER_STEP = 1e-3


def euler_concentration(schedule, params, times, h=EULER_STEP):
    """Explicit Euler of dc/dt = (c_eq - c) / tau at step h, plus additive drift.

    n Euler steps from c0 give c_eq + (c0 - c_eq) * (1 - h/tau)**n exactly, so the
    recurrence is evaluated in that closed form instead of looping. Segment
    edges and query times must sit on the h grid.
    """
    out = np.empty(len(times))
    c = params.c_init
    seg_c0 = []
    for seg in schedule.segments:
        seg_c0.append(c)
        n = round(seg.duration / h)
        eq, tau = params.equilibrium(seg.state), params.tau(seg.state)
        c = eq + (c - eq) * (1.0 - h / tau) ** n
    for k, t in enumerate(times):
        for i, seg in enumerate(schedule.segments):
            if t < seg.end or i == len(schedule.segments) - 1:
                break
        eq, tau = params.equilibrium(seg.state), params.tau(seg.state)
        n = round((t - seg.start) / h)
        out[k] = eq + (seg_c0[i] - eq) * (1.0 - h / tau) ** n + params.drift_slope * t
    return out


def euler_iterate(c0, c_eq, tau, elapsed, h=EULER_STEP):
    c = c0
    for _ in range(round(elapsed / h)):
        c += h * (c_eq - c) / tau
    return c


def seq20_schedule(bits=SEQ20_BITS, adaptation=1800.0):
    return prepend_dark_adaptation(schedule_from_bits(bits, ModulationConfig(60.0, 0.25)), adaptation)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.max(np.abs(a - b) / np.abs(b))


def random_oracle_case(rng):
    """Random schedule and parameters in the minute-scale regime the Euler oracle resolves.

    1 ms Euler differs from the exact exponential by about h/(2 tau) relative to
    the transient, so taus stay >= 150 s and the equilibrium ratio <= 1.6 to
    keep oracle error well under 1e-6.
    """
    T = float(rng.choice([30.0, 60.0, 120.0, 300.0]))
    alpha = float(rng.choice([0.1, 0.25, 0.5, 0.75, 1.0]))
    bits = [1] + list(rng.integers(0, 2, int(rng.integers(0, 8))))
    adaptation = float(rng.integers(0, 600))
    schedule = prepend_dark_adaptation(schedule_from_bits(bits, ModulationConfig(T, alpha)), adaptation)
    c_dark = 10 ** rng.uniform(-7, -5)
    c_light = c_dark * rng.uniform(1 / 1.6, 1.6)
    p = ModelParams(c_dark, c_light, rng.uniform(150, 1200), rng.uniform(150, 1200),
                    rng.uniform(-1e-3, 1e-3) * c_dark / schedule.total_duration,
                    c_dark * rng.uniform(0.8, 1.25))
    return schedule, p


_ACCEPTANCE = []


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    rep = yield
    marker = item.get_closest_marker("acceptance")
    if marker is not None and (call.when == "call" or (call.when == "setup" and rep.failed)):
        number, title = marker.args
        detail = dict(item.user_properties).get("detail", "")
        if rep.failed and call.excinfo is not None and not detail:
            detail = call.excinfo.exconly().splitlines()[0][:160]
        _ACCEPTANCE.append((number, title, rep.passed, detail, call.duration))
    return rep


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail, duration in sorted(_ACCEPTANCE):
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(
            f"criterion {number} [{verdict}] {title} ({duration:.1f} s){': ' + detail if detail else ''}")
