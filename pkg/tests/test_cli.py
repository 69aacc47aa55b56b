"""
Tests for the command-line surface: configuration merging, commands and exit codes
"""

import json
import logging

import pandas as pd
import pytest

from berkson_md.cli.commands import main, with_design_rule
from berkson_md.cli.parser import bandwidth_warnings, parse_config, parse_flags
from berkson_md.core.config import settings
from berkson_md.core.exceptions import ConfigurationError
from berkson_md.schemas.results import FitResult, TestResult
from berkson_md.schemas.simulation import DGPSpec
from berkson_md.schemas.smoothing import PlanConfig
from berkson_md.services.reproduce import check_scale, load_preset, parse_only, select_rows
from berkson_md.services.results_io import read_result, save_dataset
from berkson_md.services.simulation import sample

PRESET_IDS = ["table1", "table2", "table3", "table4", "figure1"]


@pytest.fixture(autouse=True)
def restore_root_logger():
    """main() reconfigures the root logger; put pytest's handlers back afterwards"""
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.fixture
def dataset_csv(tmp_path):
    """Case-1 null data, n = 200, as a dataset CSV"""
    path = tmp_path / "case1.csv"
    save_dataset(sample(DGPSpec(case=1, n=200, seed=20240101)), path)
    return path


@pytest.fixture
def case2_csv(tmp_path):
    """Case-2 null data, n = 150, as a dataset CSV"""
    path = tmp_path / "case2.csv"
    save_dataset(sample(DGPSpec(case=2, n=150, seed=20240101)), path)
    return path


@pytest.fixture
def narrow_preset(tmp_path, monkeypatch):
    """A 100-replication table1 preset whose check excludes theta = 1 at full size"""
    preset = {
        "table_id": "table1",
        "title": "narrow interval",
        "task": "fit",
        "sample_sizes": [40],
        "reps": 100,
        "rows": [{"label": "Mean", "stat": "mean"}],
        "checks": [{"row": "Mean", "n": 40, "lower": 1.1, "upper": 1.2}],
    }
    (tmp_path / "table1.json").write_text(json.dumps(preset))
    monkeypatch.setattr(settings, "presets_dir", tmp_path)
    return tmp_path


@pytest.fixture
def failing_preset(tmp_path, monkeypatch):
    """A table1 preset whose only check cannot pass"""
    preset = {
        "table_id": "table1",
        "title": "impossible interval",
        "task": "fit",
        "sample_sizes": [40],
        "reps": 2,
        "rows": [{"label": "Mean", "stat": "mean"}],
        "checks": [{"row": "Mean", "n": 40, "lower": 5.0, "upper": 6.0}],
    }
    (tmp_path / "table1.json").write_text(json.dumps(preset))
    monkeypatch.setattr(settings, "presets_dir", tmp_path)
    return tmp_path


class TestParseFlags:
    """Test --key value parsing"""

    def test_json_and_string_values(self):
        """Test JSON decoding with a string fallback"""
        flags = parse_flags(["--alpha", "0.01", "--model", "case2-2d", "--grid-nodes", "[201]"])
        assert flags == {"alpha": 0.01, "model": "case2-2d", "grid_nodes": [201]}

    def test_bare_flag_and_equals_form(self):
        """Test --check and --seed=7"""
        assert parse_flags(["--check", "--seed=7"]) == {"check": True, "seed": 7}

    def test_aliases(self):
        """Test --workers maps to parallelism"""
        assert parse_flags(["--workers", "3"]) == {"parallelism": 3}

    def test_stray_argument(self):
        """Test a positional after the flags is rejected"""
        with pytest.raises(ConfigurationError, match="argv"):
            parse_flags(["--seed", "1", "2"])


class TestParseConfig:
    """Test merging into a RunConfig"""

    def test_alpha_out_of_range(self, dataset_csv):
        """Test alpha = 1.5 names the key"""
        with pytest.raises(ConfigurationError, match="alpha"):
            parse_config(["test", "--input", str(dataset_csv), "--alpha", "1.5"])

    def test_unknown_key(self):
        """Test extra keys are rejected"""
        with pytest.raises(ConfigurationError, match="bogus"):
            parse_config(["demo", "--bogus", "1"])

    def test_flags_override_config_file(self, tmp_path):
        """Test precedence flags > file > defaults"""
        config_file = tmp_path / "run.json"
        config_file.write_text(json.dumps({"alpha": 0.1, "seed": 3, "workers": 2}))
        config = parse_config(["demo", "--config", str(config_file), "--alpha", "0.01"])
        assert config.alpha == 0.01
        assert config.seed == 3
        assert config.parallelism == 2
        assert config.reps == 1000

    def test_missing_config_file(self, tmp_path):
        """Test an unreadable file"""
        with pytest.raises(ConfigurationError, match="config"):
            parse_config(["demo", "--config", str(tmp_path / "absent.json")])

    def test_fit_needs_input(self):
        """Test the input requirement of fit"""
        with pytest.raises(ConfigurationError, match="input"):
            parse_config(["fit"])

    def test_unknown_command(self):
        """Test argparse errors become configuration errors"""
        with pytest.raises(ConfigurationError, match="argv"):
            parse_config(["estimate"])

    def test_power_rule_warns(self, dataset_csv, events):
        """Test h ~ n^{-0.7} in d = 1 logs the rate warning but is accepted"""
        config = parse_config(
            ["test", "--input", str(dataset_csv), "--bandwidth-rule", "power", "--h-exponent", "0.7"]
        )
        warnings = bandwidth_warnings(config, n=200)
        assert len(warnings) == 1 and "h3" in warnings[0]
        assert events("bandwidth_warning")

    def test_nominal_rule_does_not_warn(self, dataset_csv):
        """Test the case-1 rule is admissible"""
        config = parse_config(["test", "--input", str(dataset_csv)])
        assert bandwidth_warnings(config, n=200) == []

    def test_two_dimensional_model_defaults_to_case2_rule(self, case2_csv):
        """Test a d = 2 model without --bandwidth-rule gets the admissible case-2 rate"""
        config = parse_config(["test", "--input", str(case2_csv), "--model", "case2-2d"])
        resolved = with_design_rule(config, d=2)
        assert resolved.bandwidth_rule == "case2"
        assert bandwidth_warnings(resolved, n=150) == []

    def test_explicit_rule_is_kept_in_two_dimensions(self, case2_csv):
        """Test --bandwidth-rule wins over the d = 2 default"""
        config = parse_config(
            ["test", "--input", str(case2_csv), "--model", "case2-2d", "--bandwidth-rule", "case1"]
        )
        assert with_design_rule(config, d=2).bandwidth_rule == "case1"


class TestCommands:
    """Test main() end to end"""

    def test_fit_writes_json(self, dataset_csv, tmp_path, capsys):
        """Test fit on case-1 null data"""
        out = tmp_path / "fit.json"
        assert main(["fit", "--input", str(dataset_csv), "--output", str(out)]) == 0
        result = read_result(out, FitResult)
        assert result.theta_hat[0] == pytest.approx(1.0, abs=0.05)
        assert "theta_hat" in capsys.readouterr().out

    def test_test_csv_and_json_agree(self, dataset_csv, tmp_path, capsys):
        """Test both output formats hold the same record"""
        csv_out, json_out = tmp_path / "t.csv", tmp_path / "t.json"
        assert main(["test", "--input", str(dataset_csv), "--output", str(csv_out)]) == 0
        assert main(["test", "--input", str(dataset_csv), "--output", str(json_out)]) == 0
        assert read_result(csv_out, TestResult) == read_result(json_out, TestResult)
        assert "decision" in capsys.readouterr().out

    def test_case2_test_uses_case2_bandwidth(self, case2_csv, tmp_path):
        """Test fit and test on a case-2 CSV build the plan with the case-2 rule"""
        out = tmp_path / "t.json"
        args = ["--input", str(case2_csv), "--model", "case2-2d", "--theta-init", "[0.8, 1.8]"]
        args += ["--grid-nodes", "[41, 41]"]
        assert main(["test", *args, "--output", str(out)]) == 0
        result = read_result(out, TestResult)
        expected = PlanConfig(bandwidth_rule="case2").build(n=150, d=2)
        assert result.d == 2
        assert result.h == pytest.approx(expected.h, rel=1e-12)
        assert main(["fit", *args]) == 0

    def test_rejection_is_still_success(self, tmp_path):
        """Test exit 0 when H0 is rejected"""
        path = tmp_path / "alt.csv"
        save_dataset(sample(DGPSpec(case=1, model_id="1", n=500, seed=11)), path)
        out = tmp_path / "t.json"
        assert main(["test", "--input", str(path), "--output", str(out)]) == 0
        assert read_result(out, TestResult).reject

    def test_configuration_error_exit_code(self, dataset_csv, capsys):
        """Test exit 1 and the message on stderr"""
        assert main(["test", "--input", str(dataset_csv), "--alpha", "1.5"]) == 1
        assert "alpha" in capsys.readouterr().err

    def test_data_error_exit_code(self, write_csv, capsys):
        """Test exit 1 for a malformed dataset"""
        path = write_csv([["z1", "y"], [0.1, "x"], [0.2, 0.3]])
        assert main(["fit", "--input", str(path)]) == 1
        assert "row 1, column 'y'" in capsys.readouterr().err

    def test_numerical_error_exit_code(self, write_csv):
        """Test exit 2 when no observation reaches the grid"""
        path = write_csv([["z1", "y"]] + [[5.0 + 0.05 * i, 1.0] for i in range(20)])
        assert main(["fit", "--input", str(path)]) == 2

    def test_simulate_outputs(self, tmp_path):
        """Test the report CSV, the raw CSV and deterministic output"""
        args = ["simulate", "--n", "60", "--reps", "3", "--task", "test", "--seed", "9"]
        first, second, raw = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "raw.csv"
        assert main(args + ["--output", str(first), "--raw", str(raw)]) == 0
        assert main(args + ["--output", str(second)]) == 0
        assert first.read_bytes() == second.read_bytes()
        frame = pd.read_csv(raw)
        assert list(frame.columns) == ["rep", "theta_hat_1", "d_hat", "p_value", "reject"]
        assert list(frame["rep"]) == [0, 1, 2]

    def test_simulate_invalid_n(self):
        """Test DGP validation surfaces as a configuration error"""
        assert main(["simulate", "--n", "5", "--reps", "1"]) == 1

    def test_demo(self, tmp_path, capsys):
        """Test the demo curves file"""
        out = tmp_path / "curves.csv"
        assert main(["demo", "--n", "200", "--output", str(out)]) == 0
        assert list(pd.read_csv(out).columns) == ["x", "J_hat", "J", "mu"]
        assert "L2 distance" in capsys.readouterr().out

    def test_help_exits_cleanly(self):
        """Test --help"""
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0


class TestReproduce:
    """Test the reproduce command and the presets"""

    @pytest.mark.parametrize("table_id", PRESET_IDS)
    def test_presets_load(self, table_id):
        """Test every shipped preset validates"""
        assert load_preset(table_id).table_id == table_id

    def test_unknown_table(self):
        """Test exit 1 for a table id outside the set"""
        assert main(["reproduce", "table9"]) == 1

    def test_only_selects_four_rows(self):
        """Test --only 0.5,0.5 on the case-1 power table"""
        rows = select_rows(load_preset("table2"), parse_only("0.5,0.5"))
        assert [r.model_id for r in rows] == ["0", "1", "2", "3"]

    def test_only_without_match(self):
        """Test an (a, b) pair absent from the table"""
        with pytest.raises(ConfigurationError, match="only"):
            select_rows(load_preset("table2"), parse_only("0.7,0.7"))

    def test_small_table1(self, tmp_path, capsys):
        """Test a downscaled table1 run writes its artifacts"""
        assert main(["reproduce", "table1", "--n", "50", "--reps", "3", "--output", str(tmp_path)]) == 0
        cells = pd.read_csv(tmp_path / "table1.csv")
        assert set(cells["row"]) == {"Mean", "MSE"}
        assert list(cells["n"].unique()) == [50]
        assert (tmp_path / "table1_runs.csv").is_file()
        assert "1.0003" in (tmp_path / "table1.md").read_text()
        assert "published" in capsys.readouterr().out

    def test_small_figure(self, tmp_path):
        """Test the figure curves file"""
        assert main(["reproduce", "figure1", "--n", "200", "--reps", "3", "--output", str(tmp_path)]) == 0
        assert list(pd.read_csv(tmp_path / "figure1.csv").columns) == ["x", "J_hat", "J", "mu"]

    def test_failed_check_exit_code(self, failing_preset, tmp_path):
        """Test exit 3 with --check and 0 without"""
        out = tmp_path / "out"
        assert main(["reproduce", "table1", "--output", str(out), "--check"]) == 3
        assert main(["reproduce", "table1", "--output", str(out)]) == 0
        assert "FAIL" in (out / "table1.md").read_text()

    def test_check_scale(self):
        """Test intervals widen as sqrt(preset reps / reps) and never narrow"""
        assert check_scale(1000, 1000) == 1.0
        assert check_scale(1000, 2000) == 1.0
        assert check_scale(1000, 250) == pytest.approx(2.0)

    def test_fewer_reps_widen_checks(self, narrow_preset, tmp_path):
        """Test --reps 1 on a 100-replication preset widens [1.1, 1.2] tenfold about 1.15"""
        out = tmp_path / "out"
        assert main(["reproduce", "table1", "--reps", "1", "--output", str(out), "--check"]) == 0
        report = (out / "table1.md").read_text()
        assert "[0.6500, 1.6500]" in report
