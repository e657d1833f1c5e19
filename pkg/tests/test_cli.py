import subprocess
import sys

import pytest

from phmodem.cli import main
from phmodem.estimator import parse_fit_result
from phmodem.harness import parse_ber_csv
from phmodem.receiver import parse_report

SEQ20_BITS = "10011000101011101101"


@pytest.fixture
def seq20_dir(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--preset", "seq20", "-o", str(out)]) == 0
    return out


def test_simulate_outputs(seq20_dir):
    lines = (seq20_dir / "trace.csv").read_text().splitlines()
    assert lines[0] == "time_s,ph" and len(lines) == 1 + 1200 + 1800
    assert (seq20_dir / "bits.txt").read_text().strip() == SEQ20_BITS
    assert (seq20_dir / "schedule.csv").read_text().startswith("t_start_s,t_end_s,state\n")


def test_simulate_empty_bits(tmp_path, capsys):
    assert main(["simulate", "--preset", "seq20", "--bits", "", "-o", str(tmp_path)]) == 2
    assert "empty" in capsys.readouterr().err


def test_detect_round_trip(seq20_dir, tmp_path, capsys):
    rep = tmp_path / "rep.txt"
    assert main(["detect", "--preset", "seq20", str(seq20_dir / "trace.csv"), "-o", str(rep)]) == 0
    assert capsys.readouterr().out.strip() == SEQ20_BITS
    assert parse_report(rep.read_text()).bit_string == SEQ20_BITS


def test_detect_truncated(seq20_dir, tmp_path, capsys):
    lines = (seq20_dir / "trace.csv").read_text().splitlines()
    short = tmp_path / "short.csv"
    short.write_text("\n".join(lines[:2001]) + "\n")
    assert main(["detect", "--preset", "seq20", str(short)]) == 2
    assert "too short" in capsys.readouterr().err


def test_detect_all_dark(tmp_path):
    assert main(["simulate", "--preset", "seq20", "--bits", "0000", "-o", str(tmp_path)]) == 0
    assert main(["detect", "--preset", "seq20", str(tmp_path / "trace.csv")]) == 3


def test_detect_missing_file(tmp_path):
    assert main(["detect", "--preset", "seq20", str(tmp_path / "nope.csv")]) == 2


def test_detect_with_calibration(seq20_dir, tmp_path, capsys):
    assert main(["simulate", "--preset", "seq20", "--bits", "0" * 20, "-o", str(tmp_path)]) == 0
    capsys.readouterr()
    code = main(["detect", "--preset", "seq20", "-n", "20", "--sync-offset", "1800",
                 "--threshold", "-0.002", str(tmp_path / "trace.csv")])
    assert code == 0 and capsys.readouterr().out.strip() == "0" * 20


def test_fit_noiseless(seq20_dir, tmp_path):
    out = tmp_path / "fit.txt"
    code = main(["fit", str(seq20_dir / "trace.csv"), str(seq20_dir / "schedule.csv"), "-o", str(out)])
    res = parse_fit_result(out.read_text())
    assert code == 0 and res.converged and res.rss < 1e-12
    assert res.params.tau_dark == pytest.approx(6.39 * 60, rel=1e-3)


def test_fit_noisy(tmp_path):
    sim = tmp_path / "sim"
    main(["simulate", "--preset", "seq20", "--bits", "1101", "--set", "symbol_duration_s=1800",
          "--set", "duty_fraction=0.5", "--sigma", "1.5e-7", "--seed", "4", "-o", str(sim)])
    out = tmp_path / "fit.txt"
    code = main(["fit", str(sim / "trace.csv"), str(sim / "schedule.csv"), "-o", str(out)])
    res = parse_fit_result(out.read_text())
    assert code == 0 and res.converged and res.rss > 0


def test_fit_all_dark(tmp_path):
    main(["simulate", "--preset", "seq20", "--bits", "0000", "-o", str(tmp_path)])
    assert main(["fit", str(tmp_path / "trace.csv"), str(tmp_path / "schedule.csv")]) == 4


def test_fit_non_convergence_exit_code(seq20_dir, tmp_path):
    out = tmp_path / "fit.txt"
    code = main(["fit", str(seq20_dir / "trace.csv"), str(seq20_dir / "schedule.csv"),
                 "--set", "fit.max_iters=3", "--n-starts", "2", "-o", str(out)])
    assert code == 5
    assert not parse_fit_result(out.read_text()).converged


def test_sweep(tmp_path):
    out = tmp_path / "ber.csv"
    args = ["sweep", "--preset", "seq80", "--param", "sigma_mol_l", "--values", "0,2e-8",
            "--trials", "2", "--master-seed", "3", "-o", str(out)]
    assert main(args) == 0
    recs = parse_ber_csv(out.read_text())
    assert out.read_text().splitlines()[0] == "swept_value,trials,bit_errors,total_bits,ber,sync_failures"
    assert len(recs) == 2 and recs[0].ber == 0.0 and recs[0].total_bits == 160


def test_sweep_needs_param(capsys):
    assert main(["sweep", "--preset", "seq80", "--values", "0"]) == 2


def test_sweep_from_config(tmp_path):
    cfg = tmp_path / "sweep.yaml"
    cfg.write_text("sweep:\n  param: beta\n  values: [0.2, 0.4]\n  trials: 1\n  master_seed: 5\n")
    out = tmp_path / "ber.csv"
    assert main(["sweep", "--preset", "seq20", "-c", str(cfg), "-o", str(out)]) == 0
    assert [r.swept_value for r in parse_ber_csv(out.read_text())] == [0.2, 0.4]


def test_figure_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["figure", "--preset", "seq20"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["figure", "--preset", "seq20", ""])
    assert exc.value.code == 2


def test_figure_writes(tmp_path):
    out = tmp_path / "fig.csv"
    assert main(["figure", "--preset", "seq20", "detection", "-o", str(out)]) == 0
    assert out.read_text().splitlines()[0].startswith("time_s,optical_state,ph,ph_smoothed,delta_ph")


def test_every_command_is_byte_deterministic(tmp_path):
    def run_all(d):
        d.mkdir()
        main(["simulate", "--preset", "seq20", "--sigma", "1e-8", "--seed", "2", "-o", str(d)])
        main(["detect", "--preset", "seq20", str(d / "trace.csv"), "-o", str(d / "rep.txt")])
        main(["fit", str(d / "trace.csv"), str(d / "schedule.csv"), "-o", str(d / "fit.txt")])
        main(["sweep", "--preset", "seq20", "--param", "sigma_mol_l", "--values", "0,1e-8",
              "--trials", "1", "--master-seed", "8", "-o", str(d / "ber.csv")])
        main(["figure", "--preset", "seq20", "--sigma", "1e-8", "detection", "-o", str(d / "fig.csv")])
        return {p.name: p.read_bytes() for p in sorted(d.iterdir())}

    a, b = run_all(tmp_path / "a"), run_all(tmp_path / "b")
    assert len(a) == 7 and a == b


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "phmodem.cli", "simulate", "--preset", "seq20",
                           "--bits", "2", "-o", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 2 and "error:" in proc.stderr
