"""
File formats: dataset CSV in, result CSV / JSON / Markdown out.

Dataset CSV: header ``z1,...,zd,y``, one observation per row. Result CSVs
carry full float precision (shortest round-trip representation) and are
read back with ``float_precision="round_trip"``; printed text uses four
decimals.
"""

import json
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from berkson_md.core.exceptions import DataFormatError
from berkson_md.schemas.results import FitResult, MCReport, ReplicationRow, TestResult
from berkson_md.schemas.smoothing import Dataset

TEST_FIELDS = list(TestResult.model_fields)


def load_dataset(path: Path, d: Optional[int] = None) -> Dataset:
    """
    Read a dataset CSV.

    Raises:
        DataFormatError: On a bad header, a non-numeric or non-finite cell
            (naming the 1-based data row and the column), fewer than two rows,
            or a dimension other than ``d``
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError:
        raise DataFormatError(f"file not found: {path}") from None
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise DataFormatError(f"{path}: {e}") from e

    columns = [c.strip() for c in frame.columns]
    frame.columns = columns
    width = len(columns) - 1
    expected = [f"z{j}" for j in range(1, width + 1)] + ["y"]
    if width < 1 or columns != expected:
        raise DataFormatError(
            f"header must be {','.join(expected) or 'z1,...,zd,y'}; got {','.join(columns)}"
        )
    if d is not None and width != d:
        raise DataFormatError(f"dataset has d={width}, the model needs d={d}")

    numeric = frame.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna() | ~np.isfinite(numeric.to_numpy(dtype=float))
    if bad.to_numpy().any():
        row_idx, col_idx = np.argwhere(bad.to_numpy())[0]
        raise DataFormatError(
            f"not a finite number: {frame.iat[row_idx, col_idx]!r}",
            row=int(row_idx) + 1,
            column=columns[col_idx],
        )
    if len(numeric) < 2:
        raise DataFormatError("dataset needs at least 2 observations")
    values = numeric.to_numpy(dtype=float)
    return Dataset(z=values[:, :width], y=values[:, width])


def save_dataset(data: Dataset, path: Path) -> None:
    columns = {f"z{j + 1}": data.z[:, j] for j in range(data.d)}
    columns["y"] = data.y
    pd.DataFrame(columns).to_csv(path, index=False)


# TestResult (lack-of-fit)


def lof_result_frame(result: TestResult) -> pd.DataFrame:
    """One row, fields in declaration order; theta_hat spread over theta_hat_1..q."""
    record = {}
    for name in TEST_FIELDS:
        value = getattr(result, name)
        if name == "theta_hat":
            for k, t in enumerate(value, start=1):
                record[f"theta_hat_{k}"] = t
        else:
            record[name] = value
    return pd.DataFrame([record])


def read_lof_result_csv(path: Path) -> TestResult:
    frame = pd.read_csv(path, float_precision="round_trip")
    record = frame.iloc[0].to_dict()
    theta_cols = sorted(
        (c for c in frame.columns if c.startswith("theta_hat_")),
        key=lambda c: int(c.rsplit("_", 1)[1]),
    )
    record["theta_hat"] = [float(record.pop(c)) for c in theta_cols]
    for name in ("floored_nodes", "n", "d"):
        record[name] = int(record[name])
    record["reject"] = bool(record["reject"])
    return TestResult(**record)


def write_result(result, path: Path) -> None:
    """Write a FitResult or TestResult as JSON (``.json``) or one-row CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".json":
        path.write_text(result.model_dump_json(indent=2))
    elif isinstance(result, TestResult):
        lof_result_frame(result).to_csv(path, index=False)
    else:
        fit_result_frame(result).to_csv(path, index=False)


def read_result(path: Path, kind: type):
    """Read back what ``write_result`` wrote."""
    path = Path(path)
    if path.suffix == ".json":
        return kind.model_validate_json(path.read_text())
    if kind is TestResult:
        return read_lof_result_csv(path)
    raise ValueError("FitResult CSV is write-only; use JSON to round-trip")


# FitResult


def fit_result_frame(result: FitResult) -> pd.DataFrame:
    record = {}
    for k, t in enumerate(result.theta_hat, start=1):
        record[f"theta_hat_{k}"] = t
    record.update(
        objective=result.objective,
        iterations=result.iterations,
        converged=result.converged,
        grad_norm=result.grad_norm,
        floored_nodes=result.floored_nodes,
        sigma_eps2=result.sigma_eps2,
    )
    for k, v in enumerate(result.asym_var, start=1):
        record[f"asym_var_{k}"] = v
    for name in ("sigma0_hat", "sigma_hat", "asym_cov"):
        record[name] = json.dumps(getattr(result, name))
    return pd.DataFrame([record])


def format_fit_result(result: FitResult) -> str:
    theta = ", ".join(f"{t:.4f}" for t in result.theta_hat)
    se = ", ".join(f"{v:.4f}" for v in result.asym_var)
    status = "converged" if result.converged else "NOT converged"
    return "\n".join(
        [
            f"theta_hat       = ({theta})",
            f"M_n(theta_hat)  = {result.objective:.4e}",
            f"iterations      = {result.iterations} ({status}, |grad| = {result.grad_norm:.2e})",
            f"asym. variances = ({se})",
            f"floored nodes   = {result.floored_nodes}",
        ]
    )


def format_test_result(result: TestResult) -> str:
    theta = ", ".join(f"{t:.4f}" for t in result.theta_hat)
    decision = "reject H0" if result.reject else "fail to reject H0"
    return "\n".join(
        [
            f"theta_hat = ({theta})",
            f"M_n       = {result.mn_value:.4e}",
            f"C_n       = {result.c_hat:.4e}",
            f"Gamma_n   = {result.gamma_hat:.4e}",
            f"D_n       = {result.d_hat:.4f}",
            f"p-value   = {result.p_value:.4f}",
            f"decision  = {decision} at alpha = {result.alpha:.4f}",
        ]
    )


# Monte Carlo


def _spread(prefix: str, values: Optional[Sequence[float]], q: int) -> dict:
    values = values if values is not None else [None] * q
    return {f"{prefix}_{k}": v for k, v in enumerate(values, start=1)}


def mc_reports_frame(reports: Iterable[MCReport]) -> pd.DataFrame:
    """One row per configuration; wall-clock runtime is left out so files are reproducible."""
    records = []
    for report in reports:
        q = len(report.true_theta)
        record = {
            "case": report.case,
            "model_id": report.model_id,
            "n": report.n,
            "a": report.a,
            "b": report.b,
            "task": report.task,
            "reps": report.reps,
            "failures": report.failures,
        }
        record.update(_spread("mean_theta", report.mean_theta, q))
        record.update(_spread("mse_theta", report.mse_theta, q))
        record.update(_spread("var_theta", report.var_theta, q))
        record.update(_spread("mean_asym_var", report.mean_asym_cov_diag, q))
        record.update(_spread("mean_asym_var_true_fz", report.mean_asym_cov_diag_true_fz, q))
        record.update(
            rejection_rate=report.rejection_rate,
            ks_stat=report.ks_stat,
            mean_d_hat=report.mean_d_hat,
            var_d_hat=report.var_d_hat,
            median_abs_d_hat=report.median_abs_d_hat,
            gamma_hat_mean=report.gamma_hat_mean,
            outside_theory=report.outside_theory,
        )
        records.append(record)
    return pd.DataFrame(records)


def replications_frame(rows: List[ReplicationRow]) -> pd.DataFrame:
    """Columns rep, theta_hat_1..q, d_hat, p_value, reject."""
    records = []
    for row in rows:
        record = {"rep": row.rep}
        record.update(_spread("theta_hat", row.theta_hat, len(row.theta_hat)))
        record.update(d_hat=row.d_hat, p_value=row.p_value, reject=row.reject)
        records.append(record)
    return pd.DataFrame(records)


def write_frame(frame: pd.DataFrame, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)


def format_mc_report(report: MCReport) -> str:
    theta = ", ".join(f"{t:.4f}" for t in report.mean_theta)
    mse = ", ".join(f"{t:.4f}" for t in report.mse_theta)
    lines = [
        f"case {report.case}, model {report.model_id}, n = {report.n}: "
        f"{report.reps} replications ({report.failures} failed)",
        f"  mean theta_hat = ({theta})",
        f"  MSE            = ({mse})",
    ]
    if report.rejection_rate is not None:
        lines.append(f"  rejection rate = {report.rejection_rate:.4f}")
        if report.ks_stat is not None:
            lines.append(f"  KS(D_n, N(0,1)) = {report.ks_stat:.4f}")
    if report.outside_theory:
        lines.append("  (regression function outside the smoothness conditions)")
    return "\n".join(lines)


def markdown_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "|".join("---" for _ in header) + "|",
    ]
    lines.extend("| " + " | ".join(row) + " |" for row in rows)
    return "\n".join(lines) + "\n"


def demo_curves_frame(demo) -> pd.DataFrame:
    """Columns x, J_hat, J, mu of a NaiveDemo."""
    return pd.DataFrame({"x": demo.x, "J_hat": demo.j_hat, "J": demo.j_true, "mu": demo.mu})
