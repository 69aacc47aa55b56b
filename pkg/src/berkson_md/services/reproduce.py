"""
Table and figure reproductions driven by the shipped presets.

A table preset lists rows (a statistic of one Monte Carlo configuration)
over sample sizes. Configurations are keyed by (model_id, a, b, n) so rows
that read the mean and the MSE of the same run share it. Each cell is
compared with the published value; ``checks`` carry the acceptance
intervals evaluated in ``--check`` mode.

The figure preset runs the naive double-smoothing demo over ``reps`` seeds
and checks the fraction of seeds where J_hat_n is closer to J than to mu.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd
from pydantic import ValidationError

from berkson_md.core.config import settings
from berkson_md.core.exceptions import ConfigurationError
from berkson_md.core.logging import get_logger
from berkson_md.schemas.config import Preset, PresetRow
from berkson_md.schemas.results import MCReport
from berkson_md.schemas.simulation import DGPSpec
from berkson_md.schemas.smoothing import PlanConfig
from berkson_md.services.results_io import (
    demo_curves_frame,
    markdown_table,
    mc_reports_frame,
    write_frame,
)
from berkson_md.services.simulation import naive_J_demo, run_mc

logger = get_logger(__name__)

RunKey = Tuple[str, float, float, int]


@dataclass
class Cell:
    row: str
    n: int
    value: Optional[float]
    published: Optional[float]
    outside_theory: bool = False

    @property
    def deviation(self) -> Optional[float]:
        if self.value is None or self.published is None:
            return None
        return self.value - self.published


@dataclass
class CheckOutcome:
    row: str
    n: int
    value: Optional[float]
    lower: float
    upper: float

    @property
    def passed(self) -> bool:
        return self.value is not None and self.lower <= self.value <= self.upper


@dataclass
class Reproduction:
    """Everything one ``reproduce`` run produced."""

    preset: Preset
    cells: List[Cell] = field(default_factory=list)
    checks: List[CheckOutcome] = field(default_factory=list)
    reports: List[MCReport] = field(default_factory=list)
    curves: Optional[pd.DataFrame] = None
    fraction: Optional[float] = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def load_preset(table_id: str, presets_dir: Optional[Path] = None) -> Preset:
    """
    Raises:
        ConfigurationError: Unknown table id or an invalid preset file
    """
    path = Path(presets_dir or settings.presets_dir) / f"{table_id}.json"
    if not path.is_file():
        raise ConfigurationError(f"no preset at {path}", key="table_id")
    try:
        return Preset.model_validate_json(path.read_text())
    except ValidationError as e:
        raise ConfigurationError(f"invalid preset {path.name}: {e}", key="table_id") from e


def parse_only(only: Optional[str]) -> Optional[Tuple[float, float]]:
    """``"0.5,0.5"`` -> (0.5, 0.5)."""
    if only is None:
        return None
    parts = [p.strip() for p in str(only).split(",")]
    try:
        a, b = (float(p) for p in parts)
    except ValueError:
        raise ConfigurationError(f"expected 'a,b', got {only!r}", key="only") from None
    return a, b


def select_rows(preset: Preset, only: Optional[Tuple[float, float]]) -> List[PresetRow]:
    if only is None:
        return list(preset.rows)
    rows = [r for r in preset.rows if math.isclose(r.a, only[0]) and math.isclose(r.b, only[1])]
    if not rows:
        raise ConfigurationError(f"no rows with (a, b) = {only}", key="only")
    return rows


def _cell_value(row: PresetRow, report: MCReport) -> Optional[float]:
    if row.stat == "rate":
        return report.rejection_rate
    values = report.mean_theta if row.stat == "mean" else report.mse_theta
    return values[row.component]


def check_scale(preset_reps: int, reps: int) -> float:
    """Monte Carlo error grows as reps^{-1/2}; fewer reps than the preset widen its intervals."""
    return math.sqrt(preset_reps / reps) if reps < preset_reps else 1.0


def reproduce_table(
    preset: Preset,
    only: Optional[str] = None,
    n: Optional[int] = None,
    reps: Optional[int] = None,
    parallelism: Optional[int] = None,
) -> Reproduction:
    """Run every configuration a table needs and fill its cells."""
    rows = select_rows(preset, parse_only(only))
    sample_sizes = [n] if n is not None else list(preset.sample_sizes)
    reps = reps or preset.reps

    keys: List[RunKey] = []
    for row in rows:
        for size in sample_sizes:
            key = (row.model_id, row.a, row.b, size)
            if key not in keys:
                keys.append(key)

    reports: Dict[RunKey, MCReport] = {}
    for model_id, a, b, size in keys:
        logger.info(
            f"{preset.table_id}: model {model_id}, (a, b) = ({a}, {b}), n = {size}, {reps} reps",
            extra={"event_type": "reproduce_run", "table_id": preset.table_id, "n": size},
        )
        reports[(model_id, a, b, size)] = run_mc(
            DGPSpec(case=preset.case, model_id=model_id, n=size, seed=preset.seed),
            reps=reps,
            task=preset.task,
            plan_config=PlanConfig(bandwidth_rule=preset.bandwidth_rule, a=a, b=b),
            alpha=preset.alpha,
            parallelism=parallelism,
            theta_init=preset.theta_init,
        )

    result = Reproduction(preset=preset, reports=list(reports.values()))
    for row in rows:
        for size in sample_sizes:
            report = reports[(row.model_id, row.a, row.b, size)]
            published = None
            if row.published and size in preset.sample_sizes:
                published = row.published[preset.sample_sizes.index(size)]
            result.cells.append(
                Cell(
                    row=row.label,
                    n=size,
                    value=_cell_value(row, report),
                    published=published,
                    outside_theory=report.outside_theory,
                )
            )

    by_cell = {(c.row, c.n): c.value for c in result.cells}
    scale = check_scale(preset.reps, reps)
    for check in preset.checks:
        if (check.row, check.n) in by_cell:
            lower, upper = check.interval(scale)
            result.checks.append(
                CheckOutcome(check.row, check.n, by_cell[(check.row, check.n)], lower, upper)
            )
    return result


def reproduce_figure(
    preset: Preset,
    n: Optional[int] = None,
    reps: Optional[int] = None,
) -> Reproduction:
    """Demo curves for the first seed plus the J-versus-mu fraction over all seeds."""
    size = n or preset.sample_sizes[0]
    seeds = range(preset.seed, preset.seed + (reps or preset.reps))
    closer = 0
    curves = None
    for seed in seeds:
        demo = naive_J_demo(n=size, seed=seed)
        if curves is None:
            curves = demo_curves_frame(demo)
        closer += demo.l2_to_J < demo.l2_to_mu
    fraction = closer / len(seeds)

    result = Reproduction(preset=preset, curves=curves, fraction=fraction)
    result.cells.append(Cell(row="fraction l2_to_J < l2_to_mu", n=size, value=fraction, published=None))
    if preset.min_fraction is not None:
        result.checks.append(
            CheckOutcome("fraction l2_to_J < l2_to_mu", size, fraction, preset.min_fraction, 1.0)
        )
    return result


def reproduce(
    table_id: str,
    only: Optional[str] = None,
    n: Optional[int] = None,
    reps: Optional[int] = None,
    parallelism: Optional[int] = None,
    presets_dir: Optional[Path] = None,
) -> Reproduction:
    preset = load_preset(table_id, presets_dir)
    if preset.task == "demo":
        return reproduce_figure(preset, n=n, reps=reps)
    return reproduce_table(preset, only=only, n=n, reps=reps, parallelism=parallelism)


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.4f}"


def cells_frame(result: Reproduction) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "row": c.row,
                "n": c.n,
                "value": c.value,
                "published": c.published,
                "deviation": c.deviation,
                "outside_theory": c.outside_theory,
            }
            for c in result.cells
        ]
    )


def markdown_report(result: Reproduction) -> str:
    """Rows by sample size, each cell ``value (published)``; outside-theory rows starred."""
    preset = result.preset
    sizes = sorted({c.n for c in result.cells})
    labels: List[str] = []
    for c in result.cells:
        if c.row not in labels:
            labels.append(c.row)
    lookup = {(c.row, c.n): c for c in result.cells}

    body = []
    for label in labels:
        starred = any(lookup[(label, s)].outside_theory for s in sizes if (label, s) in lookup)
        line = [f"{label} *" if starred else label]
        for s in sizes:
            cell = lookup.get((label, s))
            if cell is None:
                line.append("")
            elif cell.published is None:
                line.append(_fmt(cell.value))
            else:
                line.append(f"{_fmt(cell.value)} ({_fmt(cell.published)})")
        body.append(line)

    text = f"# {preset.title}\n\n"
    text += markdown_table(["", *(f"n = {s}" for s in sizes)], body)
    text += "\nPublished values in parentheses."
    if any(c.outside_theory for c in result.cells):
        text += " Rows marked * violate the smoothness conditions of the theory."
    text += "\n"
    if result.checks:
        text += "\n" + markdown_table(
            ["check", "n", "value", "interval", "status"],
            [
                [
                    c.row,
                    str(c.n),
                    _fmt(c.value),
                    f"[{c.lower:.4f}, {c.upper:.4f}]",
                    "ok" if c.passed else "FAIL",
                ]
                for c in result.checks
            ],
        )
    return text


def comparison_lines(result: Reproduction) -> List[str]:
    """Printable per-cell deviations from the published numbers."""
    lines = []
    for c in result.cells:
        line = f"{c.row:<32} n={c.n:<5} {_fmt(c.value):>8}"
        if c.published is not None:
            line += f"  published {_fmt(c.published)}  deviation {c.deviation:+.4f}"
        lines.append(line)
    for check in result.checks:
        status = "ok" if check.passed else "FAIL"
        lines.append(
            f"check {check.row} n={check.n}: {_fmt(check.value)} "
            f"in [{check.lower:.4f}, {check.upper:.4f}] {status}"
        )
    return lines


def write_reproduction(result: Reproduction, output_dir: Path) -> List[Path]:
    """Write ``<table_id>.csv`` and ``<table_id>.md``; the figure CSV holds the curves."""
    output_dir = Path(output_dir)
    table_id = result.preset.table_id
    csv_path = output_dir / f"{table_id}.csv"
    md_path = output_dir / f"{table_id}.md"
    if result.curves is not None:
        write_frame(result.curves, csv_path)
    else:
        write_frame(cells_frame(result), csv_path)
    md_path.write_text(markdown_report(result))
    written = [csv_path, md_path]
    if result.reports:
        runs_path = output_dir / f"{table_id}_runs.csv"
        write_frame(mc_reports_frame(result.reports), runs_path)
        written.append(runs_path)
    return written


def check_failures(result: Reproduction) -> Sequence[CheckOutcome]:
    return [c for c in result.checks if not c.passed]
