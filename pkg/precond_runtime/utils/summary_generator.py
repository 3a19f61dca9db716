"""
Summary generator for the Shadow Preconditioner Runtime.

This module renders run summaries and multi-run reports as markdown text
built from fixed-width line blocks.
"""

import math
from typing import Any, Dict, List, Optional, Sequence
import logging


class SummaryGenerator:
    """
    Generates markdown summaries of runs and sweeps.

    A single run renders as a header, a key/value block per section, and a
    footer; reports render as markdown tables.
    """

    def __init__(self, title: str = "Shadow Preconditioner Runtime"):
        """
        Initialize the summary generator.

        Args:
            title (str): Heading used on every document
        """
        self.title = title
        self.logger = logging.getLogger(__name__)

        # Formatting settings
        self.width = 56
        self.separator_char = "-"
        self.label_width = 28

    def generate_run_summary(self, summary: Dict[str, Any], name: Optional[str] = None) -> str:
        """
        Generate the markdown summary of one run.

        Args:
            summary (Dict[str, Any]): RunSummary.to_dict() output
            name (str, optional): Run name shown in the header

        Returns:
            str: Markdown text
        """
        lines = []

        lines.extend(self._generate_header(name or "run summary"))
        lines.append("")

        lines.extend(self._generate_section("Configuration", self._config_fields(summary)))
        lines.append("")

        lines.extend(self._generate_section("Outcome", [
            ("steps", summary.get('steps')),
            ("initial loss", summary.get('initial_loss')),
            ("final loss", summary.get('final_loss')),
            ("final eval loss", summary.get('final_eval_loss')),
            ("steps to target", summary.get('steps_to_target')),
        ]))
        lines.append("")

        lines.extend(self._generate_section("Timing (simulated)", [
            ("total us", summary.get('total_sim_us')),
            ("barrier wait us", summary.get('barrier_wait_us')),
            ("install us", summary.get('install_us')),
            ("energy J", summary.get('energy_joules')),
        ]))
        lines.append("")

        ledger = summary.get('ledger') or {}
        lines.extend(self._generate_section("Communication", [
            ("intra-node bytes", ledger.get('intra_bytes')),
            ("inter-node bytes", ledger.get('inter_bytes')),
            ("simulated latency us", ledger.get('simulated_latency_us')),
        ]))

        pool = (summary.get('pool_stats') or {}).get('0')
        if pool:
            lines.append("")
            lines.extend(self._generate_section("Scheduler (rank 0)", sorted(pool.items())))

        store = (summary.get('store_stats') or {}).get('0')
        if store:
            lines.append("")
            lines.extend(self._generate_section(
                "Tier store (rank 0)",
                [(key, value) for key, value in sorted(store.items()) if not isinstance(value, dict)]))

        lines.append("")
        lines.extend(self._generate_footer())
        return "\n".join(lines)

    def generate_report(self, rows: List[Dict[str, Any]], columns: Sequence[str],
                        heading: str = "Runs") -> str:
        """
        Generate a markdown table over several runs.

        Args:
            rows (List[Dict[str, Any]]): One dict per run
            columns (Sequence[str]): Columns to show, in order
            heading (str): Section heading

        Returns:
            str: Markdown text
        """
        lines = []
        lines.extend(self._generate_header(heading))
        lines.append("")
        lines.append("| " + " | ".join(columns) + " |")
        lines.append("|" + "|".join("---" for _ in columns) + "|")
        for row in rows:
            lines.append("| " + " | ".join(self._format_value(row.get(column)) for column in columns) + " |")
        lines.append("")
        lines.extend(self._generate_footer())
        return "\n".join(lines)

    def _config_fields(self, summary: Dict[str, Any]) -> List[tuple]:
        """Pick the headline configuration values."""
        cfg = summary.get('config') or {}
        optimizer = cfg.get('optimizer', {})
        scheduler = cfg.get('scheduler', {})
        topology = cfg.get('topology', {})
        task = cfg.get('task', {})
        return [
            ("method", optimizer.get('method')),
            ("lr", optimizer.get('lr')),
            ("precondition frequency", optimizer.get('precondition_frequency')),
            ("staleness S", scheduler.get('staleness_S')),
            ("coherence budget", (cfg.get('coherence') or {}).get('budget')),
            ("nodes x ranks", f"{topology.get('nodes')} / {topology.get('ranks')}"),
            ("task", task.get('kind')),
        ]

    def _generate_header(self, heading: str) -> List[str]:
        """Generate the document header."""
        return [f"# {self.title}", "", f"## {heading}"]

    def _generate_section(self, name: str, fields) -> List[str]:
        """Generate one key/value block."""
        lines = [f"### {name}", "", "```"]
        for label, value in fields:
            lines.append(f"{label + ':':<{self.label_width}} {self._format_value(value)}")
        lines.append("```")
        return lines

    def _generate_footer(self) -> List[str]:
        """Generate the document footer."""
        return [self.separator_char * self.width]

    @staticmethod
    def _format_value(value: Any) -> str:
        """Format a value for display."""
        if value is None:
            return "-"
        if isinstance(value, bool):
            return "yes" if value else "no"
        if isinstance(value, float):
            if math.isnan(value):
                return "nan"
            if value != 0.0 and (abs(value) >= 1e6 or abs(value) < 1e-3):
                return f"{value:.4e}"
            return f"{value:.6g}"
        return str(value)
