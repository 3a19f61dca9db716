"""
Run file handler for the Shadow Preconditioner Runtime.

This module writes and reads the files of a run directory: the loss curve
and step series as CSV, the event trace as JSON lines, and the config and
summary as JSON. Writes go to a temporary file first and replace the target
in one move, so a reader never sees a half-written file.
"""

import csv
import json
import shutil
from datetime import datetime
from typing import Any, Callable, Dict, Iterable, List, Optional
from pathlib import Path
import logging

from .. import config
from ..errors import RunOutputError

LOSS_HEADERS = ['step', 'loss', 'simulated_time_us']
SERIES_HEADERS = ['step', 'loss', 'total_us', 'compute_us', 'collective_us',
                  'barrier_wait_us', 'install_us', 'sim_time_us']


class RunFileHandler:
    """
    Handles all file operations for one run directory.

    Provides methods for reading and writing CSV, JSON lines and JSON files
    with backup of overwritten files and error logging.
    """

    def __init__(self, run_directory):
        """
        Initialize the handler with a run directory.

        Args:
            run_directory (str or Path): Path to the run directory
        """
        self.run_dir = Path(run_directory)
        try:
            self.run_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise RunOutputError(f"cannot create run directory {self.run_dir}: {e}")

        # Define file paths
        self.loss_file = self.run_dir / config.LOSS_FILE_NAME
        self.series_file = self.run_dir / config.SERIES_FILE_NAME
        self.trace_file = self.run_dir / config.TRACE_FILE_NAME
        self.summary_json = self.run_dir / config.SUMMARY_JSON_NAME
        self.summary_md = self.run_dir / config.SUMMARY_MD_NAME
        self.config_file = self.run_dir / config.CONFIG_FILE_NAME
        self.sweep_file = self.run_dir / config.SWEEP_FILE_NAME

        self.backup_dir = self.run_dir / "backups"

        self.logger = logging.getLogger(__name__)

    def create_backup(self, file_path: Path) -> Optional[Path]:
        """
        Create a backup of the specified file.

        Args:
            file_path (Path): Path to the file to backup

        Returns:
            Optional[Path]: Path to the backup file, None if backup failed
        """
        if not file_path.exists():
            return None

        try:
            self.backup_dir.mkdir(exist_ok=True)
            timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
            backup_path = self.backup_dir / f"{file_path.stem}_{timestamp}{file_path.suffix}"

            shutil.copy2(file_path, backup_path)
            self.logger.info(f"Created backup: {backup_path}")
            return backup_path
        except OSError as e:
            self.logger.error(f"Failed to create backup for {file_path}: {e}")
            return None

    def _replace(self, file_path: Path, write: Callable) -> bool:
        """Write through a temporary file and move it over the target."""
        temp_file = file_path.with_suffix(file_path.suffix + '.tmp')
        try:
            if file_path.exists():
                self.create_backup(file_path)

            with open(temp_file, 'w', newline='', encoding='utf-8') as file:
                write(file)

            shutil.move(temp_file, file_path)
            return True

        except (OSError, TypeError, ValueError) as e:
            self.logger.error(f"Failed to write {file_path}: {e}")
            if temp_file.is_file():
                temp_file.unlink()
            return False

    def safe_write_csv(self, file_path: Path, data: List[Dict[str, Any]],
                       headers: List[str]) -> bool:
        """
        Safely write rows to a CSV file.

        Args:
            file_path (Path): Path to the CSV file
            data (List[Dict[str, Any]]): Rows to write
            headers (List[str]): CSV headers

        Returns:
            bool: True if successful, False otherwise
        """
        def write(file):
            writer = csv.DictWriter(file, fieldnames=headers, extrasaction='ignore')
            writer.writeheader()
            writer.writerows(data)

        if self._replace(file_path, write):
            self.logger.info(f"Successfully wrote {len(data)} records to {file_path}")
            return True
        return False

    def read_csv_safe(self, file_path: Path,
                      row_processor: Optional[Callable] = None) -> List[Dict[str, Any]]:
        """
        Safely read a CSV file.

        Rows the processor rejects (returns None or raises) are skipped with
        a warning.

        Args:
            file_path (Path): Path to the CSV file
            row_processor (Callable, optional): Function to process each row

        Returns:
            List[Dict[str, Any]]: Rows as dictionaries
        """
        data = []

        if not file_path.exists():
            self.logger.warning(f"CSV file does not exist: {file_path}")
            return data

        try:
            with open(file_path, 'r', newline='', encoding='utf-8') as file:
                reader = csv.DictReader(file)
                for row_num, row in enumerate(reader, start=2):  # Start at 2 (after header)
                    try:
                        if row_processor:
                            processed_row = row_processor(row)
                            if processed_row is not None:
                                data.append(processed_row)
                        else:
                            data.append(row)
                    except (KeyError, ValueError) as e:
                        self.logger.warning(f"Error processing row {row_num} in {file_path}: {e}")
                        continue

            self.logger.info(f"Successfully read {len(data)} records from {file_path}")
            return data

        except OSError as e:
            self.logger.error(f"Failed to read CSV file {file_path}: {e}")
            return []

    def write_jsonl(self, file_path: Path, events: Iterable[Dict[str, Any]]) -> bool:
        """
        Write events as JSON lines with sorted keys.

        Args:
            file_path (Path): Path to the trace file
            events (Iterable[Dict[str, Any]]): Events to write

        Returns:
            bool: True if successful, False otherwise
        """
        count = 0

        def write(file):
            nonlocal count
            for event in events:
                file.write(json.dumps(event, sort_keys=True))
                file.write("\n")
                count += 1

        if self._replace(file_path, write):
            self.logger.info(f"Successfully wrote {count} events to {file_path}")
            return True
        return False

    def read_jsonl(self, file_path: Path) -> List[Dict[str, Any]]:
        """
        Read a JSON lines file, skipping malformed lines.

        Args:
            file_path (Path): Path to the trace file

        Returns:
            List[Dict[str, Any]]: Decoded events
        """
        events = []
        if not file_path.exists():
            self.logger.warning(f"Trace file does not exist: {file_path}")
            return events

        with open(file_path, 'r', encoding='utf-8') as file:
            for line_num, line in enumerate(file, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    events.append(json.loads(line))
                except json.JSONDecodeError as e:
                    self.logger.warning(f"Skipping malformed line {line_num} in {file_path}: {e}")
        return events

    def write_json(self, file_path: Path, data: Dict[str, Any]) -> bool:
        """Write a JSON document with sorted keys."""
        def write(file):
            json.dump(data, file, indent=2, sort_keys=True)
            file.write("\n")

        if self._replace(file_path, write):
            self.logger.info(f"Wrote {file_path}")
            return True
        return False

    def read_json(self, file_path: Path) -> Optional[Dict[str, Any]]:
        """Read a JSON document, returning None when absent or malformed."""
        if not file_path.exists():
            return None
        try:
            with open(file_path, 'r', encoding='utf-8') as file:
                return json.load(file)
        except (OSError, json.JSONDecodeError) as e:
            self.logger.error(f"Failed to read {file_path}: {e}")
            return None

    def write_text(self, file_path: Path, text: str) -> bool:
        """Write a text file."""
        if self._replace(file_path, lambda file: file.write(text)):
            self.logger.info(f"Wrote {file_path}")
            return True
        return False

    def save_loss_curve(self, rows: List[Dict[str, Any]]) -> bool:
        """Save (step, loss, simulated_time_us) rows to loss.csv."""
        return self.safe_write_csv(self.loss_file, rows, LOSS_HEADERS)

    def save_series(self, rows: List[Dict[str, Any]]) -> bool:
        """Save per-step timing rows to series.csv."""
        return self.safe_write_csv(self.series_file, rows, SERIES_HEADERS)

    def load_series(self) -> List[Dict[str, Any]]:
        """Load per-step timing rows from series.csv."""
        return self.read_csv_safe(self.series_file)

    def save_trace(self, events: Iterable[Dict[str, Any]]) -> bool:
        """Save scheduler and coherence events to trace.jsonl."""
        return self.write_jsonl(self.trace_file, events)

    def load_trace(self) -> List[Dict[str, Any]]:
        """Load events from trace.jsonl."""
        return self.read_jsonl(self.trace_file)

    def save_summary(self, summary: Dict[str, Any], markdown: Optional[str] = None) -> bool:
        """Save summary.json and, when given, summary.md."""
        ok = self.write_json(self.summary_json, summary)
        if markdown is not None:
            ok = self.write_text(self.summary_md, markdown) and ok
        return ok

    def load_summary(self) -> Optional[Dict[str, Any]]:
        """Load summary.json."""
        return self.read_json(self.summary_json)

    def save_config(self, data: Dict[str, Any]) -> bool:
        """Save the run configuration to config.json."""
        return self.write_json(self.config_file, data)

    def save_sweep(self, rows: List[Dict[str, Any]], headers: List[str]) -> bool:
        """Save sweep rows to sweep.csv."""
        return self.safe_write_csv(self.sweep_file, rows, headers)

    def require(self, *results: bool) -> None:
        """
        Raise when any write result reports failure.

        Raises:
            RunOutputError: If a write failed (the cause is logged by the writer)
        """
        if not all(results):
            raise RunOutputError(f"failed to write run files in {self.run_dir}")
