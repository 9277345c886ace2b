import subprocess
import sys

import pytest

from walllaw import cli


def write(tmp_path, text):
    p = tmp_path / "run.ini"
    p.write_text(text)
    return str(p)


def test_short_epsilon_list_is_validation_error(tmp_path, capsys):
    cfg = write(tmp_path, "[experiment]\nepsilons = 0.5, 0.1\n")
    assert cli.main(["experiment", "--config", cfg, "--out", str(tmp_path / "o")]) == cli.EXIT_VALIDATION
    assert "at least 4" in capsys.readouterr().err


def test_unknown_section_rejected(tmp_path):
    cfg = write(tmp_path, "[solver]\nx = 1\n")
    assert cli.main(["mesh", "--config", cfg, "--out", str(tmp_path)]) == cli.EXIT_VALIDATION


def test_bad_number_rejected(tmp_path, capsys):
    cfg = write(tmp_path, "[physics]\nC = fast\n")
    assert cli.main(["mesh", "--config", cfg, "--out", str(tmp_path)]) == cli.EXIT_VALIDATION
    assert "[physics] C" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert cli.main(["cell", "--config", str(tmp_path / "nope.ini")]) == cli.EXIT_VALIDATION


def test_mesh_export(tmp_path):
    cfg = write(tmp_path, "[mesh]\nkind = rough_cell\nepsilon = 0.2\nsegments = 8\n")
    assert cli.main(["mesh", "--config", cfg, "--out", str(tmp_path / "m")]) == 0
    assert (tmp_path / "m" / "rough_cell.mesh").read_text().startswith("walllaw-mesh v1\n")


def test_flat_cell_command(tmp_path, capsys):
    cfg = write(tmp_path, "[profile]\nkind = flat\ndelta = 0.05\n[cell]\nsegments = 32\n")
    assert cli.main(["cell", "--config", cfg, "--out", str(tmp_path / "c")]) == 0
    out = capsys.readouterr().out
    beta = float(out.split("beta_bar=")[1].split()[0])
    assert beta == pytest.approx(0.05, abs=1e-8)
    for name in ("beta.field", "beta.field.cell", "gamma.field.cell", "traces.dat", "plot_traces.gp", "truncation.dat"):
        assert (tmp_path / "c" / name).exists()


def test_tabulated_profile(tmp_path, capsys):
    import numpy as np

    y = 2 * np.pi * np.arange(64) / 64
    np.savetxt(tmp_path / "prof.txt", np.column_stack([y, -(1 + np.cos(y)) / 2 - 0.05]))
    cfg = write(tmp_path, "[profile]\nkind = tabulated\nfile = prof.txt\ndelta = 0.05\n[mesh]\nkind = micro_strip\nsegments = 16\n")
    assert cli.main(["mesh", "--config", cfg, "--out", str(tmp_path / "m")]) == 0


def test_module_entry_point(tmp_path):
    out = subprocess.run(
        [sys.executable, "-m", "walllaw", "mesh", "--out", str(tmp_path)], capture_output=True, text=True
    )
    assert out.returncode == 0, out.stderr
