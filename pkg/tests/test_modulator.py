import pytest
from hypothesis import given
from hypothesis import strategies as st

from phmodem.errors import InvalidArgumentError
from phmodem.modulator import (DARK, LIGHT, ModulationConfig, OpticalSchedule, Segment, bits_to_str,
                               concatenate, parse_bits, parse_schedule_csv, prepend_dark_adaptation,
                               read_schedule_csv, schedule_from_bits, write_schedule_csv)

bit_lists = st.lists(st.integers(0, 1), min_size=1, max_size=60)
mod_cfgs = st.builds(ModulationConfig, st.sampled_from([1.0, 30.0, 60.0, 90.0]),
                     st.sampled_from([0.1, 0.25, 0.5, 0.75, 1.0]))


def segs(schedule):
    return [(s.start, s.end, s.state) for s in schedule.segments]


def test_single_one():
    s = schedule_from_bits([1], ModulationConfig(60.0, 0.25))
    assert segs(s) == [(0.0, 15.0, LIGHT), (15.0, 60.0, DARK)]


def test_zeros_merge():
    assert segs(schedule_from_bits("00", ModulationConfig(60.0, 0.25))) == [(0.0, 120.0, DARK)]


def test_two_ones_half_duty():
    s = schedule_from_bits("11", ModulationConfig(60.0, 0.5))
    assert segs(s) == [(0.0, 30.0, LIGHT), (30.0, 60.0, DARK), (60.0, 90.0, LIGHT), (90.0, 120.0, DARK)]


def test_dark_adaptation():
    base = OpticalSchedule((Segment(0.0, 15.0, LIGHT),))
    assert prepend_dark_adaptation(base, 0.0) == base
    assert segs(prepend_dark_adaptation(base, 1800.0)) == [(0.0, 1800.0, DARK), (1800.0, 1815.0, LIGHT)]
    with pytest.raises(InvalidArgumentError):
        prepend_dark_adaptation(base, -1.0)


def test_adaptation_merges_with_leading_dark():
    s = prepend_dark_adaptation(schedule_from_bits("01", ModulationConfig(60.0, 0.25)), 100.0)
    assert segs(s)[0] == (0.0, 160.0, DARK)


@pytest.mark.parametrize("bad", ["", "102", "1a"])
def test_bad_bits(bad):
    with pytest.raises(InvalidArgumentError):
        schedule_from_bits(bad, ModulationConfig(60.0, 0.25))


@pytest.mark.parametrize("T,alpha", [(0.0, 0.25), (-1.0, 0.25), (60.0, 0.0), (60.0, 1.5)])
def test_bad_modulation(T, alpha):
    with pytest.raises(InvalidArgumentError):
        ModulationConfig(T, alpha)


def test_bits_text():
    assert parse_bits(" 10 01 ") == (1, 0, 0, 1)
    assert bits_to_str((1, 0, 1)) == "101"
    with pytest.raises(InvalidArgumentError):
        parse_bits([0, 2])


def test_schedule_rejects_gaps():
    with pytest.raises(InvalidArgumentError):
        OpticalSchedule((Segment(0.0, 1.0, DARK), Segment(2.0, 3.0, LIGHT)))
    with pytest.raises(InvalidArgumentError):
        OpticalSchedule((Segment(1.0, 2.0, DARK),))
    with pytest.raises(InvalidArgumentError):
        OpticalSchedule(())


@given(bit_lists, mod_cfgs)
def test_light_time(bits, cfg):
    s = schedule_from_bits(bits, cfg)
    assert s.light_time() == pytest.approx(cfg.pulse_duration * sum(bits), rel=1e-12)
    assert s.total_duration == pytest.approx(cfg.symbol_duration * len(bits))


@given(bit_lists, mod_cfgs)
def test_normal_form(bits, cfg):
    s = schedule_from_bits(bits, cfg)
    for a, b in zip(s.segments, s.segments[1:]):
        assert a.state is not b.state
        assert a.end == b.start


@given(bit_lists, bit_lists, mod_cfgs)
def test_split_concatenate(a, b, cfg):
    whole = schedule_from_bits(a + b, cfg)
    joined = concatenate(schedule_from_bits(a, cfg), schedule_from_bits(b, cfg))
    assert len(whole.segments) == len(joined.segments)
    for x, y in zip(whole.segments, joined.segments):
        assert x.state is y.state
        assert x.start == pytest.approx(y.start) and x.end == pytest.approx(y.end)


@given(st.integers(1, 40))
def test_full_duty_all_ones(n):
    s = schedule_from_bits([1] * n, ModulationConfig(60.0, 1.0))
    assert segs(s) == [(0.0, 60.0 * n, LIGHT)]


def test_state_at():
    s = schedule_from_bits("10", ModulationConfig(60.0, 0.25))
    assert s.state_at(0.0) is LIGHT
    assert s.state_at(14.999) is LIGHT
    assert s.state_at(15.0) is DARK
    assert s.state_at(120.0) is DARK


@given(bit_lists, mod_cfgs, st.floats(0.0, 5000.0))
def test_csv_round_trip(bits, cfg, adapt):
    s = prepend_dark_adaptation(schedule_from_bits(bits, cfg), adapt)
    assert parse_schedule_csv(write_schedule_csv(s)) == s


def test_csv_file_and_errors(tmp_path):
    s = schedule_from_bits("1101", ModulationConfig(60.0, 0.25))
    path = tmp_path / "s.csv"
    write_schedule_csv(s, path)
    assert read_schedule_csv(path) == s
    assert path.read_text().splitlines()[0] == "t_start_s,t_end_s,state"
    with pytest.raises(InvalidArgumentError):
        parse_schedule_csv("start,end,state\n0,1,dark\n")
    with pytest.raises(InvalidArgumentError):
        parse_schedule_csv("t_start_s,t_end_s,state\n0,1,dim\n")
