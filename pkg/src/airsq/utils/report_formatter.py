# /src/airsq/utils/report_formatter.py

import io
import logging
from typing import Any, Dict, Iterable, Mapping, Optional

import numpy as np
import pandas as pd

from airsq.utils.io import atomic_write_text, dump_json

logger = logging.getLogger(__name__)


class ReportFormatter:
    """
    Renders evaluation artifacts for people (markdown) and for files (CSV / JSON).

    Guarantees:
    - map_table(report) -> markdown table, one row per type-pair bucket plus an "all" row
    - sensitivity_table(report) -> markdown table of baseline vs revealed numbers
    - curve_csv(rows) / basis_csv(matrix) -> CSV text, stable column order, no index
    - render(report, as_json) -> what the CLI prints on stdout
    """

    CURVE_COLUMNS = ["step", "phase", "epoch", "total", "cls", "marginal", "reg0", "reg1"]

    # -------------------------
    # Markdown
    # -------------------------
    def map_table(self, report: Mapping[str, Any]) -> str:
        buckets = report.get("buckets", {})
        counts = report.get("counts", {})
        rows = [{"bucket": key, "scenarios": counts.get(key, 0), "AP": value} for key, value in buckets.items()]
        rows.append({"bucket": "all", "scenarios": sum(counts.values()), "AP": report["mAP"]})
        return self.format_as_text_table(pd.DataFrame(rows, columns=["bucket", "scenarios", "AP"]))

    def summary_table(self, report: Mapping[str, Any]) -> str:
        """Scalar entries of a report as a two-column metric/value table."""
        rows = [(k, v) for k, v in report.items() if isinstance(v, (int, float)) and not isinstance(v, bool)]
        return self.format_as_text_table(pd.DataFrame(rows, columns=["metric", "value"]))

    def sensitivity_table(self, report: Mapping[str, Any]) -> str:
        df = pd.DataFrame(
            [
                ["confidences", report["baseline_map"], report["revealed_conf_map"],
                 report["baseline_cls"], report["revealed_conf_cls"], report["ratio_cls"]],
                ["trajectories", report["baseline_map"], report["revealed_traj_map"],
                 report["baseline_reg"], report["revealed_traj_reg"], report["ratio_reg"]],
            ],
            columns=["revealed", "mAP before", "mAP after", "loss before", "loss after", "ratio"],
        )
        df["ratio"] = df["ratio"].map(lambda v: "undefined" if pd.isna(v) else v)
        return self.format_as_text_table(df)

    def format_as_text_table(self, df: pd.DataFrame) -> str:
        try:
            return df.to_markdown(index=False, floatfmt=".4f")
        except ImportError:
            # tabulate missing
            return df.to_string(index=False)

    # -------------------------
    # CSV
    # -------------------------
    def curve_csv(self, rows: Iterable[Mapping[str, Any]]) -> str:
        df = pd.DataFrame(list(rows), columns=self.CURVE_COLUMNS)
        return self._to_csv(df)

    def basis_csv(self, basis: np.ndarray) -> str:
        df = pd.DataFrame(basis, columns=[f"B{i}" for i in range(basis.shape[1])])
        df.insert(0, "t", np.arange(basis.shape[0]))
        return self._to_csv(df)

    def _to_csv(self, df: pd.DataFrame) -> str:
        out = io.StringIO()
        df.to_csv(out, index=False, float_format="%.17g", lineterminator="\n")
        return out.getvalue()

    # -------------------------
    # Output
    # -------------------------
    def render(self, report: Mapping[str, Any], as_json: bool, kind: Optional[str] = None) -> str:
        if as_json:
            return dump_json(report)
        if kind == "map":
            parts = [self.map_table(report), self.summary_table({k: v for k, v in report.items() if k != "mAP"})]
            return "\n\n".join(parts)
        if kind == "sensitivity":
            return self.sensitivity_table(report)
        return self.summary_table(report)

    def write_csv(self, path: str, text: str) -> None:
        atomic_write_text(path, text)
        logger.info("Wrote %s", path)

    def write_json(self, path: str, report: Dict[str, Any]) -> None:
        atomic_write_text(path, dump_json(report) + "\n")
        logger.info("Wrote %s", path)
