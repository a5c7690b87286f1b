import json
from pathlib import Path

import numpy as np
import pytest

from spectral_consensus.cli import load_config, main

SMALL_CONFIG = """\
[model]
M = 2
S = 20
theta_diag = 0.3
theta_off = 0.1
alpha = 1.0

[grid]
t_min = -0.8
t_max = 1.1
n_t = 25
s_min = -0.7
s_max = 0.7
n_s = 25
beta = 1e-6
u_max = 1e3
n_u = 32

[region]
kappa = 1e-2
tau = 1e-4

[design]
degrees = 1,2
max_points = 200
tol = 1e-6

[sim]
trials = 3
n_iters = 12
base_seed = 11
"""


@pytest.fixture()
def config_file(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(SMALL_CONFIG)
    return path


def read_all(outdir: Path, names):
    return {name: (outdir / name).read_bytes() for name in names}


class TestLoadConfig:
    def test_round_trip(self, config_file):
        cfg = load_config(config_file)
        assert cfg.model.M == 2 and cfg.model.S == 20
        assert cfg.model.Theta[0, 0] == 0.3
        assert cfg.grid.n_t == 25
        assert cfg.degrees == (1, 2)
        assert cfg.trials == 3
        assert cfg.base_seed == 11

    def test_full_theta_matrix(self, tmp_path):
        path = tmp_path / "theta.ini"
        path.write_text("[model]\nM = 2\nS = 3\n"
                        "theta = 0.4,0.1;0.1,0.4\nseed = 5\n")
        cfg = load_config(path)
        assert cfg.model.Theta[0, 1] == 0.1
        assert cfg.base_seed == 5

    def test_defaults_match_reference_values(self, tmp_path):
        path = tmp_path / "min.ini"
        path.write_text("[model]\nM = 6\nS = 100\n"
                        "theta_diag = 0.05\ntheta_off = 0.01\n")
        cfg = load_config(path)
        assert cfg.kappa == 1e-2
        assert cfg.tau == 1e-4
        assert cfg.grid.beta == 1e-6
        assert cfg.model.alpha == 1.0
        assert cfg.trials == 1000
        assert cfg.degrees == (1, 2, 3, 4, 5, 6)

    def test_missing_file_is_config_error(self, tmp_path):
        rc = main(["density", "--config", str(tmp_path / "nope.ini"),
                   "--output", str(tmp_path / "out")])
        assert rc == 2


class TestCmdDensity:
    def test_outputs_and_cache(self, config_file, tmp_path, capsys):
        out = tmp_path / "out"
        rc = main(["density", "--config", str(config_file),
                   "--output", str(out)])
        assert rc == 0
        names = ["girko_density.csv", "empirical_density.csv",
                 "region_boundary.csv", "density_report.json",
                 "girko_deflated.csv"]
        first = read_all(out, names)
        report = json.loads((out / "density_report.json").read_text())
        assert "l1_distance_excl_consensus" in report
        assert report["region_cells"] > 0
        # rerun: cache hit, byte-identical outputs
        rc = main(["density", "--config", str(config_file),
                   "--output", str(out)])
        assert rc == 0
        assert "cache hit" in capsys.readouterr().out
        assert read_all(out, names) == first

    def test_trials_zero_skips_empirical(self, tmp_path):
        cfgtext = SMALL_CONFIG.replace("trials = 3", "trials = 0")
        path = tmp_path / "t0.ini"
        path.write_text(cfgtext)
        out = tmp_path / "out0"
        assert main(["density", "--config", str(path),
                     "--output", str(out)]) == 0
        assert (out / "girko_density.csv").exists()
        assert not (out / "empirical_density.csv").exists()

    def test_thread_count_invariance(self, config_file, tmp_path):
        out1 = tmp_path / "thr1"
        out4 = tmp_path / "thr4"
        main(["density", "--config", str(config_file), "--output", str(out1),
              "--threads", "1"])
        main(["density", "--config", str(config_file), "--output", str(out4),
              "--threads", "4"])
        names = ["girko_density.csv", "empirical_density.csv",
                 "region_boundary.csv"]
        assert read_all(out1, names) == read_all(out4, names)


class TestCmdDesign:
    def test_filter_files(self, config_file, tmp_path):
        out = tmp_path / "design"
        rc = main(["design", "--config", str(config_file),
                   "--output", str(out)])
        assert rc == 0
        for d in (1, 2):
            doc = json.loads((out / f"filter_d{d}.json").read_text())
            assert doc["degree"] == d
            assert abs(sum(doc["coefficients"]) - 1.0) <= 1e-12
            assert doc["achieved_epsilon"] < 1.0
            assert doc["design_metadata"]["sample_points"] > 0

    def test_empty_region_exit_code(self, tmp_path):
        cfgtext = SMALL_CONFIG.replace("tau = 1e-4", "tau = 1e9")
        path = tmp_path / "bad.ini"
        path.write_text(cfgtext)
        out = tmp_path / "outbad"
        rc = main(["design", "--config", str(path), "--output", str(out)])
        assert rc == 1


class TestCmdCompare:
    def test_comparison_outputs(self, config_file, tmp_path):
        out = tmp_path / "cmp"
        rc = main(["compare", "--config", str(config_file),
                   "--output", str(out)])
        assert rc == 0
        text = (out / "comparison.csv").read_text()
        header, *rows = text.strip().splitlines()
        assert header == "filter,degree,mean_rate,std_rate,trials"
        kinds = {r.split(",")[0] for r in rows}
        assert kinds == {"trivial", "mean_spectrum", "proposed", "oracle"}
        assert (out / "trial_report.txt").read_text().startswith("failed_trials")

    def test_identical_reruns(self, config_file, tmp_path):
        out1 = tmp_path / "c1"
        out2 = tmp_path / "c2"
        main(["compare", "--config", str(config_file), "--output", str(out1)])
        main(["compare", "--config", str(config_file), "--output", str(out2),
              "--threads", "3"])
        assert (out1 / "comparison.csv").read_bytes() == \
            (out2 / "comparison.csv").read_bytes()
