import pytest
from click.testing import CliRunner

from robustdmb import bounds
from robustdmb.cli import _parse_range, main


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("protocol: dmb-sync\ntopology: path(3)\nm: 3000\nb: 8\n")
    return str(p)


def test_run_writes_outputs_and_exits_zero(cfg, tmp_path):
    out = tmp_path / "out"
    res = CliRunner().invoke(main, ["run", "--config", cfg, "--out", str(out), "--seed", "3",
                                    "--trace"])
    assert res.exit_code == 0, res.output
    assert {p.name for p in out.iterdir()} == {"regret.csv", "updates.csv", "periods.csv",
                                               "summary.csv", "trace.log"}


def test_failed_bound_gives_nonzero_exit(cfg, tmp_path, monkeypatch):
    monkeypatch.setattr(bounds, "dmb_regret_bound", lambda *a: 0.0)
    res = CliRunner().invoke(main, ["run", "--config", cfg, "--out", str(tmp_path / "o")])
    assert res.exit_code == 1 and "VIOLATED" in res.output


def test_invalid_config_is_a_usage_error(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("protocol: admb\nrho: 0.5\n")
    res = CliRunner().invoke(main, ["run", "--config", str(p)])
    assert res.exit_code != 0 and "rho" in res.output


def test_describe_prints_bounds(tmp_path):
    p = tmp_path / "a.yaml"
    p.write_text("protocol: admb\ntopology: path(4)\nm: 100000\nrho: 0.3\n")
    res = CliRunner().invoke(main, ["describe", "--config", str(p)])
    assert res.exit_code == 0
    assert "admb bound closed form" in res.output and "b = 32" in res.output


def test_sweep_grid(cfg, tmp_path):
    res = CliRunner().invoke(main, ["sweep", "--config", cfg, "--sweep", "b=4,8",
                                    "--sweep", "seed=0:1", "--out", str(tmp_path / "s"),
                                    "--workers", "1"])
    assert res.exit_code == 0, res.output
    assert "4 runs" in res.output


def test_check_single_criterion():
    res = CliRunner().invoke(main, ["check", "--only", "11"])
    assert res.exit_code == 0 and "[PASS] criterion 11" in res.output


def test_parse_range():
    assert _parse_range("1,2,4") == [1, 2, 4]
    assert _parse_range("0:3") == [0, 1, 2, 3]
    assert _parse_range("0.5:1.5:0.5") == [0.5, 1.0, 1.5]
