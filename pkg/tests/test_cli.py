"""CSV/SVG emitters and the command line driver's exit codes."""

import os
import re

import numpy as np
import pytest

from finform import cli
from finform.errors import UnknownSignal, ValidationError
from finform.plots import (DEFAULT_PANELS, MAX_POINTS, has_series,
                           render_figure, series)
from finform.scenarios import BUILTIN, simulate_scenario, with_overrides

RUNAWAY = """
id = "runaway"
horizon = 5.0
step = 1e-3

[plant]
kind = "benchmark-chain"

[controller]
kind = "finform"

[initial_conditions]
x1 = 4.0
"""

TIGHT = """
id = "tight"
horizon = 0.2
step = 1e-3

[plant]
kind = "scalar-square"

[controller]
kind = "finform"

[[checks]]
kind = "control_energy"
ceiling = 1e-9
"""


def scalar_trace(horizon=0.05):
    sc = with_overrides(BUILTIN["stage1-scalar"], horizon=horizon)
    trace, _ = simulate_scenario(sc)
    return trace


def chain_trace(horizon=0.2):
    sc = with_overrides(BUILTIN["paper-sec4-linear"], horizon=horizon)
    trace, _ = simulate_scenario(sc)
    return trace


# -- csv ----------------------------------------------------------------------


def test_csv_header_and_shape(tmp_path):
    trace = scalar_trace()
    path = cli.write_csv(trace, str(tmp_path / "out.csv"))
    lines = open(path, encoding="utf-8").read().splitlines()
    assert lines[0] == "t,x1,ac1,u,psi,delta_theta,theta_hat_1"
    assert len(lines) == 1 + len(trace)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.allclose(data[:, 0], trace.times, atol=1e-12)
    assert np.allclose(data[:, 1], trace.states[:, 0], rtol=1e-9)
    assert np.allclose(data[:, 3], trace.output("u"), rtol=1e-9)


def test_csv_unlabeled_states_get_generic_names(tmp_path):
    trace = scalar_trace()
    trace.state_names = None
    path = cli.write_csv(trace, str(tmp_path / "bare.csv"))
    header = open(path, encoding="utf-8").readline().strip()
    assert header.startswith("t,s1,s2,")


def test_csv_is_reproducible(tmp_path):
    sc = with_overrides(BUILTIN["stage1-bounded-leak"], horizon=0.2)
    first, _ = simulate_scenario(sc)
    second, _ = simulate_scenario(sc)
    a = cli.write_csv(first, str(tmp_path / "a.csv"))
    b = cli.write_csv(second, str(tmp_path / "b.csv"))
    assert open(a, "rb").read() == open(b, "rb").read()


# -- svg ----------------------------------------------------------------------


def test_figure_layout_and_series_content():
    text = render_figure(chain_trace())
    assert text.startswith("<svg xmlns=")
    assert text.endswith("</svg>\n")
    assert text.count("<polyline") == len(DEFAULT_PANELS)
    for name in DEFAULT_PANELS:
        assert ">%s</text>" % name in text


def test_figure_downsamples_long_traces():
    trace = chain_trace(horizon=3.0)
    assert len(trace) > MAX_POINTS
    text = render_figure(trace, panels=("x1",))
    points = re.search(r"<polyline points='([^']*)'", text).group(1)
    assert len(points.split()) == MAX_POINTS


def test_series_resolution_prefers_states():
    trace = chain_trace(horizon=0.01)
    assert np.array_equal(series(trace, "x1"), trace.states[:, 0])
    assert np.array_equal(series(trace, "u"), trace.output("u"))
    assert has_series(trace, "delta_theta")
    assert not has_series(trace, "x9")
    with pytest.raises(UnknownSignal):
        render_figure(trace, panels=("x9",))
    with pytest.raises(ValidationError):
        render_figure(trace, panels=())


def test_emit_writes_the_requested_formats(tmp_path):
    trace = scalar_trace()
    out = str(tmp_path / "nested" / "dir")
    paths = cli.emit(trace, [], "both", out_dir=out, name="probe")
    assert sorted(os.path.basename(p) for p in paths) == ["probe.csv",
                                                          "probe.svg"]
    # the scalar loop has no x2 column, so that panel is dropped
    svg = open(os.path.join(out, "probe.svg"), encoding="utf-8").read()
    assert svg.count("<polyline") == 3
    with pytest.raises(ValidationError) as err:
        cli.emit(trace, [], "pdf", out_dir=out)
    assert err.value.key == "format"


# -- command line -------------------------------------------------------------


def test_run_command_writes_artifacts(tmp_path, capsys):
    rc = cli.main(["run", "stage1-scalar", "--horizon", "0.2",
                   "--out-dir", str(tmp_path), "--format", "both"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "scenario stage1-scalar:" in out
    for name in ("stage1-scalar.csv", "stage1-scalar.svg",
                 "stage1-scalar-summary.txt"):
        assert (tmp_path / name).exists()
        assert "wrote" in out


def test_check_command_writes_nothing(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    rc = cli.main(["check", "stage1-scalar", "--horizon", "0.2"])
    assert rc == 0
    assert "scenario stage1-scalar:" in capsys.readouterr().out
    assert os.listdir(tmp_path) == []


def test_failed_check_exits_one(tmp_path, capsys):
    path = tmp_path / "tight.toml"
    path.write_text(TIGHT, encoding="utf-8")
    rc = cli.main(["check", str(path)])
    assert rc == 1
    assert "FAIL" in capsys.readouterr().out


def test_blow_up_exits_two_and_keeps_the_partial_trace(tmp_path, capsys):
    path = tmp_path / "runaway.toml"
    path.write_text(RUNAWAY, encoding="utf-8")
    rc = cli.main(["run", str(path), "--out-dir", str(tmp_path)])
    assert rc == 2
    captured = capsys.readouterr()
    assert "finite range" in captured.err
    assert "(partial)" in captured.out
    lines = (tmp_path / "runaway.csv").read_text().splitlines()
    assert 1 < len(lines) < 200  # escape happens well before the horizon


def test_unknown_scenario_exits_three(capsys):
    rc = cli.main(["run", "no-such-scenario"])
    assert rc == 3
    assert "no-such-scenario" in capsys.readouterr().err


def test_bad_flag_exits_three(capsys):
    assert cli.main(["run", "stage1-scalar", "--nope"]) == 3
    assert cli.main(["run", "stage1-scalar", "--format", "pdf"]) == 3
    assert cli.main([]) == 3


def test_bad_override_exits_three(capsys):
    rc = cli.main(["check", "stage1-scalar", "--horizon", "-1"])
    assert rc == 3
    assert "horizon" in capsys.readouterr().err


def test_parse_error_reports_the_position(tmp_path, capsys):
    path = tmp_path / "broken.toml"
    path.write_text('id = "open\n', encoding="utf-8")
    rc = cli.main(["run", str(path)])
    assert rc == 3
    assert "line 1" in capsys.readouterr().err


def test_out_dir_env_fallback(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("FINFORM_OUT_DIR", str(tmp_path))
    rc = cli.main(["run", "stage1-scalar", "--horizon", "0.1"])
    assert rc == 0
    assert (tmp_path / "stage1-scalar.csv").exists()


def test_list_command_prints_the_registry(capsys):
    assert cli.main(["list"]) == 0
    out = capsys.readouterr().out
    for sid in BUILTIN:
        assert sid in out
    assert len(out.splitlines()) == 1 + len(BUILTIN)


def test_bench_command_prints_four_energies(capsys):
    assert cli.main(["bench", "--horizon", "0.5"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 5
    for case in ("finform", "finform_tanh", "classic", "tuning"):
        assert any(line.startswith(case) for line in lines[1:])
