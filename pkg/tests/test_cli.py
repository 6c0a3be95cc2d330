import csv
import glob
import json
import os
import subprocess
import sys

import pytest

from mpml.cli import main
from mpml.config import ConfigError, ExperimentConfig, load_config, parse_config
from mpml.multilevel_engine import MSE_COLUMNS

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

SMALL_RUN = """
[experiment]
solver = minres
tol_sq = 1e-3, 5e-4
k_p = 0.05
replicates = 3
n_init = 5
reference = 0.0334
"""


def write_cfg(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def read_rows(path):
    with open(path) as fh:
        return [r for r in csv.reader(fh) if r and not r[0].startswith("#")]


class TestConfig:
    def test_defaults(self):
        cfg = parse_config("")
        assert cfg == ExperimentConfig()
        assert cfg.h0 == 0.125 and cfg.n_init == 100 and cfg.tol_sq == (8e-6, 4e-6, 2e-6, 1e-6)

    def test_values_and_overrides(self):
        cfg = parse_config(
            "[experiment]\nh0 = 1/4\nk_p = 0.05, 0.4 # two values\nforced_samples = yes\nseed = 9\n",
            seed=3, workers=None,
        )
        assert cfg.h0 == 0.25
        assert cfg.k_p == (0.05, 0.4)
        assert cfg.forced_samples is True
        assert cfg.seed == 3 and cfg.workers == 1

    @pytest.mark.parametrize(
        "text",
        [
            "[experiment]\nsolver = gmres\n",
            "[experiment]\ncolour = blue\n",
            "[other]\nseed = 1\n",
            "[experiment]\ntol_sq = -1\n",
            "[experiment]\nk_p = 1.5\n",
            "[experiment]\nsigma = 0\n",
            "[experiment]\nh0 = abc\n",
            "[experiment]\nreplicates = 2.5\n",
            "[experiment]\nforced_samples = maybe\n",
            "not an ini file",
        ],
    )
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_ini_round_trip(self):
        cfg = parse_config("[experiment]\nsolver = cholesky_ir\npolicy = quarter\nk_p = 0.4\nreference = 0.03\n")
        assert parse_config(cfg.to_ini()) == cfg

    @pytest.mark.parametrize("path", sorted(glob.glob(os.path.join(ROOT, "configs", "*.ini"))))
    def test_shipped_configs_load(self, path):
        cfg = load_config(path)
        assert cfg.replicates <= 200

    def test_derived_solvers(self):
        cfg = parse_config("[experiment]\nsolver = cholesky_ir\n")
        assert cfg.mlmc_solver().kind == "direct"
        assert cfg.mpml_solver().kind == "ir"
        assert parse_config("").mpml_solver().kind == "minres"


class TestExitCodes:
    def test_missing_config(self, tmp_path):
        assert main(["schedule", "--config", str(tmp_path / "nope.ini"), "--out", str(tmp_path)]) == 2

    def test_bad_config(self, tmp_path):
        cfg = write_cfg(tmp_path, "[experiment]\nsolver = lu\n")
        assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == 2

    def test_schedule_level_zero(self, tmp_path):
        assert main(["schedule", "--max-level", "0", "--out", str(tmp_path)]) == 2

    def test_ir_limiting_accuracy(self, tmp_path, capsys):
        code = main(["ir-trace", "--quad", "hhss", "--eps", "1e-12", "--out", str(tmp_path)])
        assert code == 3
        assert "did not converge" in capsys.readouterr().out

    def test_lmax(self, tmp_path):
        cfg = write_cfg(tmp_path, "[experiment]\ntol_sq = 1e-2, 1e-12\nreplicates = 2\nn_init = 3\nl_max = 1\nreference = 0.03\n")
        assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == 4
        rows = read_rows(tmp_path / "mse.csv")
        # rows of the finished tolerance were flushed
        assert len(rows) == 3 and rows[1][0] == "0.01"


class TestCommands:
    def test_schedule_golden(self, tmp_path, capsys):
        assert main(["schedule", "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[-1].split() == ["4", "3.5e-03", "8.7e-04", "2.2e-04", "5.5e-05", "3.1e-06"]
        rows = read_rows(tmp_path / "schedule.csv")
        assert rows[0] == ["L", "eps_0", "eps_1", "eps_2", "eps_3", "eps_4"]
        assert len(rows) == 5

    def test_schedule_second_configuration(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, "[experiment]\nh0 = 1/4\nk_p = 0.4\n")
        assert main(["schedule", "--config", cfg, "--max-level", "1", "--out", str(tmp_path)]) == 0
        assert capsys.readouterr().out.splitlines()[-1].split() == ["1", "4.0e-02", "6.3e-03"]

    def test_run_writes_tables(self, tmp_path):
        cfg = write_cfg(tmp_path, SMALL_RUN)
        assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == 0
        text = (tmp_path / "mse.csv").read_text()
        assert text.startswith("# mpml mse table; schema 1; reference 0.0334; cost metric flops")
        rows = read_rows(tmp_path / "mse.csv")
        assert rows[0][: len(MSE_COLUMNS)] == list(MSE_COLUMNS)
        assert [r[1] for r in rows[1:]] == ["mlmc", "mpml", "mlmc", "mpml"]
        data = json.loads((tmp_path / "mse.json").read_text())
        assert data["schema"] == 1 and len(data["rows"]) == 4

    def test_run_deterministic_across_workers(self, tmp_path):
        cfg = write_cfg(tmp_path, SMALL_RUN)
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["run", "--config", cfg, "--out", str(a), "--workers", "1"]) == 0
        assert main(["run", "--config", cfg, "--out", str(b), "--workers", "2"]) == 0
        assert (a / "mse.csv").read_bytes() == (b / "mse.csv").read_bytes()
        assert (a / "mse.json").read_bytes() == (b / "mse.json").read_bytes()

    def test_seed_changes_results(self, tmp_path):
        cfg = write_cfg(tmp_path, SMALL_RUN)
        main(["run", "--config", cfg, "--out", str(tmp_path / "a")])
        main(["run", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "1"])
        assert (tmp_path / "a" / "mse.csv").read_text() != (tmp_path / "b" / "mse.csv").read_text()

    def test_reference_cached_and_used(self, tmp_path):
        cfg = write_cfg(tmp_path, "[experiment]\nreference_tol_sq = 1e-4\ntol_sq = 1e-3\nreplicates = 2\nn_init = 5\n")
        assert main(["reference-qoi", "--config", cfg, "--out", str(tmp_path)]) == 0
        ref = json.loads((tmp_path / "reference.json").read_text())["reference"]
        assert 0.02 < ref < 0.05
        assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == 0
        assert f"reference {ref!r}" in (tmp_path / "mse.csv").read_text()

    def test_cost_report(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, SMALL_RUN)
        assert main(["cost-report", "--config", cfg, "--out", str(tmp_path)]) == 0
        rows = read_rows(tmp_path / "cost_report.csv")
        assert rows[0] == ["tol_sq", "level", "method", "flops", "mem_bits", "factor_nnz", "samples"]
        assert {r[2] for r in rows[1:]} == {"mlmc", "mpml(k_p=0.05)"}
        assert "flop gain" in capsys.readouterr().out

    def test_ir_trace(self, tmp_path):
        assert main(["ir-trace", "--level", "1", "--out", str(tmp_path)]) == 0
        text = (tmp_path / "ir_trace.csv").read_text().splitlines()
        assert "quad ssss" in text[0]
        assert text[1] == "step,rel_res"

    def test_dump_system(self, tmp_path):
        assert main(["dump-system", "--level", "0", "--out", str(tmp_path)]) == 0
        mtx = (tmp_path / "system_l0_r0_k0.mtx").read_text().splitlines()
        assert mtx[0].startswith("%%MatrixMarket")
        assert mtx[[i for i, l in enumerate(mtx) if not l.startswith("%")][0]].split()[:2] == ["49", "49"]

    def test_decay(self, tmp_path):
        cfg = write_cfg(tmp_path, "[experiment]\nlevels = 0\neps = 1e-2, 1e-8\nvar_samples = 4\nbias_samples = 4\n")
        assert main(["decay", "--config", cfg, "--out", str(tmp_path)]) == 0
        rows = read_rows(tmp_path / "decay.csv")
        assert len(rows) == 3

    def test_decay_empty_levels(self, tmp_path):
        cfg = write_cfg(tmp_path, "[experiment]\nlevels =\n")
        assert main(["decay", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_console_script(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "mpml.cli", "schedule", "--max-level", "1", "--out", str(tmp_path)],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    assert "3.5e-03" in proc.stdout
