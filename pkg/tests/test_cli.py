import csv
import math
import subprocess
import sys

import numpy as np
import pytest

from chnst.cli import (
    CONVERGENCE_COLUMNS,
    ConfigError,
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_SOLVER,
    main,
    parse_config,
    read_convergence_csv,
)
from chnst.diagnostics import CSV_COLUMNS


def test_empty_document_gives_defaults():
    cfg = parse_config("")
    p = cfg.params
    assert (p.gamma, p.epsilon, p.delta) == (1e-3, 10.0, 1.0)
    assert (p.L11, p.L12, p.L22) == (1e-2, 0.0, 1e-2)
    assert cfg.step.tau == 1e-3 and cfg.T == 0.1
    assert cfg.preset == "convergence" and cfg.step.star_mode == "explicit"


def test_values_comments_and_types():
    cfg = parse_config("# header\n\ngamma = 2e-3  # thinner interface\nlevels = 2, 3,4\nstar_mode = implicit\nlevel = 3\n")
    assert cfg.params.gamma == 2e-3
    assert cfg.levels == (2, 3, 4)
    assert cfg.step.star_mode == "implicit"
    assert cfg.n == 8


def test_rejects_negative_gamma_with_line():
    with pytest.raises(ConfigError) as info:
        parse_config("tau = 1e-3\ngamma = -1\n")
    assert info.value.line == 2
    assert "(A1)" in str(info.value)


def test_rejects_indefinite_diffusion_matrix():
    with pytest.raises(ConfigError) as info:
        parse_config("L11 = 1e-2\nL22 = 1e-2\nL12 = 0.2")
    assert info.value.line == 3
    assert "L11*L22 > L12^2" in str(info.value)


@pytest.mark.parametrize(
    "text, line",
    [
        ("gamma = 1e-3\nkappa = 2\n", 2),
        ("\n\ntau = fast\n", 3),
        ("level = 2.5\n", 1),
        ("just a sentence\n", 1),
        ("star_mode = midpoint\n", 1),
        ("T = 0.1\ntau = 0.03\n", 2),
        ("preset = taylor-green\n", 1),
        ("stride = -1\n", 1),
    ],
)
def test_config_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.line == line
    assert str(info.value).startswith(f"line {line}:")


def _write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return str(p)


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def test_run_writes_diagnostics_and_snapshots(tmp_path):
    out = tmp_path / "out"
    cfg = _write(tmp_path, f"level = 4\nT = 0.01\nstride = 5\noutput_dir = {out}\n")
    assert main(["run", cfg]) == EXIT_OK
    header, rows = _read_csv(out / "diagnostics.csv")
    assert tuple(header) == CSV_COLUMNS
    assert len(rows) == 11
    mass = np.array([float(r[2]) for r in rows])
    entropy = np.array([float(r[6]) for r in rows])
    assert np.max(np.abs(mass - mass[0])) < 1e-10
    assert np.all(np.diff(entropy) >= -1e-12)
    assert sorted(p.name for p in out.glob("*.vtk")) == [
        "snapshot_00000.vtk", "snapshot_00005.vtk", "snapshot_00010.vtk"]


def test_run_stride_zero_and_determinism(tmp_path):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        cfg = _write(tmp_path, f"level = 3\nT = 0.003\nstride = 0\noutput_dir = {out}\n", f"{tag}.cfg")
        assert main(["run", cfg]) == EXIT_OK
        assert [p.name for p in out.iterdir()] == ["diagnostics.csv"]
        outs.append((out / "diagnostics.csv").read_bytes())
    assert outs[0] == outs[1]


def test_csv_numbers_round_trip(tmp_path):
    out = tmp_path / "out"
    cfg = _write(tmp_path, f"level = 2\nT = 0.002\nstride = 0\noutput_dir = {out}\n")
    assert main(["run", cfg]) == EXIT_OK
    _, rows = _read_csv(out / "diagnostics.csv")
    for row in rows:
        for cell in row:
            assert repr(float(cell)) == cell or str(int(float(cell))) == cell


def test_solver_failure_keeps_partial_csv(tmp_path):
    out = tmp_path / "out"
    cfg = _write(tmp_path, f"level = 2\nT = 0.002\ntheta_min = 0.9\noutput_dir = {out}\n")
    assert main(["run", cfg]) == EXIT_SOLVER
    header, rows = _read_csv(out / "diagnostics.csv")
    assert tuple(header) == CSV_COLUMNS and len(rows) == 1


def test_config_error_exit_code(tmp_path, capsys):
    assert main(["run", _write(tmp_path, "gamma = -1\n")]) == EXIT_CONFIG
    assert "line 1" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG
    assert main(["frobnicate", "x"]) == EXIT_CONFIG


def test_converge_single_level_is_usage_error(tmp_path):
    assert main(["converge", _write(tmp_path, "levels = 3\n")]) == EXIT_CONFIG


def test_converge_two_levels(tmp_path):
    out = tmp_path / "conv"
    cfg = _write(tmp_path, f"levels = 2, 3\noutput_dir = {out}\n")
    assert main(["converge", cfg]) == EXIT_OK
    path = out / "convergence.csv"
    header, raw = _read_csv(path)
    assert tuple(header) == CONVERGENCE_COLUMNS
    assert len(raw) == 2
    assert all(raw[0][i] == "" for i, c in enumerate(header) if c.startswith("eoc"))
    rows = read_convergence_csv(path)
    assert 1.3 <= rows[1]["eoc_a"] <= 2.0
    assert rows[1]["eoc_a"] == math.log2(rows[0]["e_a"] / rows[1]["e_a"])
    # Reread values reproduce the written text exactly.
    for text_row, row in zip(raw, rows):
        for c, cell in zip(header, text_row):
            if cell and c != "k":
                assert repr(row[c]) == cell


def test_check_subcommand(tmp_path, capsys):
    cfg = _write(tmp_path, "level = 3\ncheck_steps = 3\n")
    assert main(["check", cfg]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 4 and all(l.startswith("PASS") for l in lines)


def test_module_entry_point(tmp_path):
    cfg = _write(tmp_path, "gamma = 0\n")
    proc = subprocess.run([sys.executable, "-m", "chnst", "check", cfg], capture_output=True, text=True)
    assert proc.returncode == EXIT_CONFIG
    assert "(A1)" in proc.stderr
