"""
Unit tests for dataset parsing and result files
"""

import numpy as np
import pytest

from berkson_md.core.exceptions import DataFormatError
from berkson_md.schemas.results import FitResult, TestResult
from berkson_md.schemas.simulation import DGPSpec
from berkson_md.services.lof import run_test
from berkson_md.services.results_io import (
    format_test_result,
    load_dataset,
    markdown_table,
    read_lof_result_csv,
    read_result,
    save_dataset,
    write_result,
)
from berkson_md.services.simulation import sample


class TestLoadDataset:
    """Test the dataset CSV reader"""

    def test_reads_two_dimensional_design(self, write_csv):
        """Test z1,z2,y columns"""
        path = write_csv([["z1", "z2", "y"], [0.1, 0.2, 1.5], [-0.3, 0.4, 0.7]])
        data = load_dataset(path, d=2)
        assert data.n == 2 and data.d == 2
        assert np.allclose(data.y, [1.5, 0.7])

    def test_bad_cell_names_row_and_column(self, write_csv):
        """Test the 1-based row and the column of a non-numeric cell"""
        path = write_csv([["z1", "y"], [0.1, 0.2], [0.3, "abc"], [0.5, 0.6]])
        with pytest.raises(DataFormatError) as exc:
            load_dataset(path)
        assert exc.value.row == 2 and exc.value.column == "y"
        assert "row 2, column 'y'" in str(exc.value)
        assert exc.value.exit_code == 1

    def test_non_finite_cell(self, write_csv):
        """Test inf is rejected"""
        path = write_csv([["z1", "y"], ["inf", 0.2], [0.3, 0.1]])
        with pytest.raises(DataFormatError) as exc:
            load_dataset(path)
        assert exc.value.row == 1 and exc.value.column == "z1"

    def test_bad_header(self, write_csv):
        """Test the z1..zd,y header"""
        path = write_csv([["x", "y"], [0.1, 0.2], [0.3, 0.4]])
        with pytest.raises(DataFormatError, match="header"):
            load_dataset(path)

    def test_dimension_mismatch(self, write_csv):
        """Test the model's d is enforced"""
        path = write_csv([["z1", "y"], [0.1, 0.2], [0.3, 0.4]])
        with pytest.raises(DataFormatError, match="d=2"):
            load_dataset(path, d=2)

    def test_needs_two_rows(self, write_csv):
        """Test n >= 2"""
        path = write_csv([["z1", "y"], [0.1, 0.2]])
        with pytest.raises(DataFormatError, match="at least 2"):
            load_dataset(path)

    def test_missing_file(self, tmp_path):
        """Test a missing path is a data error"""
        with pytest.raises(DataFormatError, match="not found"):
            load_dataset(tmp_path / "absent.csv")

    def test_save_then_load(self, tmp_path):
        """Test save_dataset writes the header load_dataset expects"""
        data = sample(DGPSpec(case=2, n=30, seed=4))
        path = tmp_path / "case2.csv"
        save_dataset(data, path)
        loaded = load_dataset(path, d=2)
        assert np.array_equal(loaded.z, data.z) and np.array_equal(loaded.y, data.y)


class TestResultFiles:
    """Test result serialization"""

    @pytest.fixture
    def test_result(self, case1_data, linear_model, noise1, case1_plan):
        return run_test(case1_data, linear_model, noise1, case1_plan)

    def test_csv_reads_back_exactly(self, test_result, tmp_path):
        """Test the one-row CSV keeps full float precision"""
        path = tmp_path / "result.csv"
        write_result(test_result, path)
        assert read_lof_result_csv(path) == test_result
        assert read_result(path, TestResult) == test_result

    def test_json_reads_back_exactly(self, test_result, tmp_path):
        """Test JSON output"""
        path = tmp_path / "nested" / "result.json"
        write_result(test_result, path)
        assert read_result(path, TestResult) == test_result

    def test_csv_column_order(self, test_result, tmp_path):
        """Test theta_hat_1 first, then the statistic chain in declaration order"""
        path = tmp_path / "result.csv"
        write_result(test_result, path)
        header = path.read_text().splitlines()[0].split(",")
        assert header[:7] == ["theta_hat_1", "mn_value", "c_hat", "gamma_hat", "d_hat", "p_value", "reject"]

    def test_fit_csv_is_write_only(self, tmp_path):
        """Test FitResult CSV cannot be read back"""
        result = FitResult(
            theta_hat=[1.0],
            objective=0.0,
            iterations=0,
            converged=True,
            grad_norm=0.0,
            sigma0_hat=[[0.5]],
            sigma_hat=[[0.1]],
            asym_cov=[[0.4]],
            floored_nodes=0,
        )
        path = tmp_path / "fit.csv"
        write_result(result, path)
        assert "asym_var_1" in path.read_text().splitlines()[0]
        with pytest.raises(ValueError):
            read_result(path, FitResult)

    def test_decision_text(self, test_result):
        """Test the printed decision"""
        text = format_test_result(test_result)
        expected = "reject H0" if test_result.reject else "fail to reject H0"
        assert f"decision  = {expected}" in text

    def test_markdown_table(self):
        """Test the pipe table layout"""
        text = markdown_table(["", "n = 50"], [["Mean", "1.0003"]])
        assert text.splitlines() == ["|  | n = 50 |", "|---|---|", "| Mean | 1.0003 |"]
