import csv
import json
import subprocess
import sys

import pytest

from cutwave.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, _floats, _ints, main, read_config
from cutwave.errors import ConfigError

FAST = ["--case", "traveling_wave", "--p", "1", "--h", "2/5", "--T", "0.05", "--raster", "11",
        "--safety", "0.5"]


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_list_parsers():
    assert _floats("1/5, 0.1,1/20") == [0.2, 0.1, 0.05]
    assert _ints("1..3,7") == [1, 2, 3, 7]


def test_read_config_reports_unknown_key(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[problem]\ncase = two_circles\n\n[time]\nwobble = 3\n")
    with pytest.raises(ConfigError, match=r"c.ini:5: unknown key 'wobble' in \[time\]"):
        read_config(str(cfg))
    cfg.write_text("[space]\np = two\n")
    with pytest.raises(ConfigError, match="bad value for 'p'"):
        read_config(str(cfg))


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[problem]\ncase = traveling_wave\nT = 0.05\n[space]\np = 3\nh = 2/5\n"
                   "[output]\nraster = 5\nsource = no\n")
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg), "--p", "1", "--safety", "0.5",
                 "--output", str(out)]) == EXIT_OK
    man = json.loads((out / "manifest.json").read_text())
    assert man["settings"]["p"] == 1 and man["settings"]["source"] is False
    assert man["settings"]["raster"] == 5


@pytest.mark.parametrize("args", [["--p", "0"], ["--gamma", "1.5"], ["--h", "0.3"],
                                  ["--eta0", "abc"], ["--config", "/nonexistent.ini"]])
def test_invalid_configuration_exit_code(tmp_path, args, capsys):
    assert main(["run", *FAST, "--output", str(tmp_path), *args]) == EXIT_CONFIG
    assert "error:" in capsys.readouterr().err


def test_numerical_failure_exit_code(tmp_path, capsys):
    code = main(["run", "--case", "two_circles", "--h", "1", "--eta0", "0.05",
                 "--max-levels", "0", "--output", str(tmp_path)])
    assert code == EXIT_NUMERICAL
    assert "MaxLevelExceeded" in capsys.readouterr().err


def test_run_outputs_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", *FAST, "--output", str(a)]) == EXIT_OK
    assert main(["run", *FAST, "--output", str(b)]) == EXIT_OK
    for name in ("energy.csv", "fields.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    ma, mb = (json.loads((d / "manifest.json").read_text()) for d in (a, b))
    ma["settings"].pop("output"), mb["settings"].pop("output")
    assert ma == mb
    fields = _rows(a / "fields.csv")
    assert fields[0] == ["x", "y", "subdomain", "u", "qx", "qy"]
    assert len(fields) == 1 + 11 * 11
    for v in fields[5][3:]:
        assert len(v.lstrip("-").replace(".", "").split("e")[0].lstrip("0")) <= 6
    energy = _rows(a / "energy.csv")
    assert energy[0] == ["t", "E_h"] and float(energy[-1][0]) == pytest.approx(0.05)


def test_source_free_energy_nonincreasing(tmp_path):
    assert main(["run", *FAST, "--source", "false", "--r", "3",
                 "--output", str(tmp_path)]) == EXIT_OK
    E = [float(r[1]) for r in _rows(tmp_path / "energy.csv")[1:]]
    # the file keeps six significant digits
    assert all(b <= a * (1 + 1e-12) for a, b in zip(E, E[1:]))


def test_converge_table(tmp_path):
    assert main(["converge", "--case", "traveling_wave", "--p", "2", "--h", "2/5,1/5",
                 "--T", "0.02", "--safety", "0.5", "--output", str(tmp_path)]) == EXIT_OK
    rows = _rows(tmp_path / "table.csv")
    assert rows[0] == ["h", "h_min", "DoFs", "E_en", "order"]
    assert rows[1][4] == "" and float(rows[2][4]) > 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert len(man["runs"]) == 2


def test_stability_command(tmp_path):
    assert main(["stability", "--r-list", "3,4", "--ratios", "1.0", "--slabs", "20",
                 "--samples", "9", "--dim", "20", "--output", str(tmp_path)]) == EXIT_OK
    rows = _rows(tmp_path / "stability.csv")
    assert rows[0] == ["r", "gamma", "ratio", "tau_norm", "max_ratio"]
    assert len(rows) == 3
    assert all(float(r[4]) <= 1 + 1e-12 for r in rows[1:])


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "cutwave", "stability", "--r-list", "2",
                          "--gamma-list", "0.5", "--ratios", "0.5", "--slabs", "3",
                          "--output", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "stability.csv").exists()
