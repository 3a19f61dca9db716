"""
Trace analysis and reporting.

Step-time spike statistics, exposed preconditioning time per refresh
boundary, communication volume, the energy proxy, the normalized
loss-reduction efficiency, and the multi-run report written by the
`report` command.
"""

import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from ..errors import (EmptyTraceError, MissingAnnotationsError, MissingRunsError,
                      NonpositiveRatioError)
from ..models.traces import BoundaryExposure, EfficiencyInput, SpikeStats, StepTimeTrace
from ..utils.run_files import SERIES_HEADERS, RunFileHandler
from ..utils.summary_generator import SummaryGenerator
from .. import config

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ['run', 'method', 'staleness_S', 'coherence_budget', 'nodes', 'ranks', 'steps',
                  'final_loss', 'final_eval_loss', 'total_sim_us', 'barrier_wait_us', 'install_us',
                  'spike_ratio', 'coherence_syncs', 'intra_bytes', 'inter_bytes', 'energy_joules',
                  'energy_ratio', 'eta']


def spike_stats(trace: StepTimeTrace) -> SpikeStats:
    """
    Median, 99th percentile (nearest rank), max and max/median of step times.

    Raises:
        EmptyTraceError: If the trace has no steps
    """
    totals = trace.totals()
    if totals.size == 0:
        raise EmptyTraceError("cannot compute spike statistics of an empty trace")
    ordered = np.sort(totals)
    rank = max(1, math.ceil(0.99 * ordered.size))
    index = int(np.argmax(totals))
    return SpikeStats(float(np.median(ordered)), float(ordered[rank - 1]), float(ordered[-1]),
                      trace.records[index].step)


def exposure_breakdown(trace: StepTimeTrace, pf: int) -> List[BoundaryExposure]:
    """
    Exposed preconditioning time per refresh period.

    Barrier wait and install time of every step are charged to the refresh
    boundary that opened its period (step // pf * pf), so the exposures sum
    to the trace totals.

    Raises:
        EmptyTraceError: If the trace has no steps
        MissingAnnotationsError: If a step lacks barrier or install spans
    """
    if len(trace) == 0:
        raise EmptyTraceError("cannot break down an empty trace")
    if pf < 1:
        raise ValueError(f"pf must be >= 1, got {pf}")
    boundaries: Dict[int, List[float]] = {}
    for record in trace:
        if not record.annotated:
            raise MissingAnnotationsError(f"step {record.step} has no barrier/install annotation")
        boundary = record.step // pf * pf
        totals = boundaries.setdefault(boundary, [0.0, 0.0])
        totals[0] += record.barrier_wait_us
        totals[1] += record.install_us
    return [BoundaryExposure(step, wait, install) for step, (wait, install) in sorted(boundaries.items())]


def boundary_step_exposure(trace: StepTimeTrace, pf: int) -> List[BoundaryExposure]:
    """Exposed time of the boundary steps themselves (step % pf == 0)."""
    return [BoundaryExposure(record.step, record.barrier_wait_us or 0.0, record.install_us or 0.0)
            for record in trace if record.step % pf == 0]


def compute_eta(inp: EfficiencyInput) -> float:
    """
    Normalized loss-reduction efficiency (L_init - L_final) / E_ratio.

    Raises:
        NonpositiveRatioError: If E_ratio is not a positive finite number
    """
    if not math.isfinite(inp.E_ratio) or inp.E_ratio <= 0:
        raise NonpositiveRatioError(f"energy ratio must be positive, got {inp.E_ratio}")
    return (inp.L_init - inp.L_final) / inp.E_ratio


def energy_ratio(energy_joules: float, baseline_joules: float) -> float:
    """
    Return energy / baseline energy.

    Raises:
        NonpositiveRatioError: If either energy is not positive
    """
    if baseline_joules <= 0 or energy_joules <= 0:
        raise NonpositiveRatioError(
            f"energies must be positive (run {energy_joules}, baseline {baseline_joules})")
    return energy_joules / baseline_joules


def communication_volume(events: Sequence[dict]) -> Dict[str, int]:
    """Sum coherence bytes and sync counts from trace records."""
    volume = {'syncs': 0, 'hits': 0, 'intra_bytes': 0, 'inter_bytes': 0}
    for event in events:
        if event.get('event') != 'coherence':
            continue
        volume['syncs' if event['action'] == 'sync' else 'hits'] += 1
        volume['intra_bytes'] += int(event.get('intra_bytes', 0))
        volume['inter_bytes'] += int(event.get('inter_bytes', 0))
    return volume


# Report

def discover_runs(root: Union[str, Path]) -> List[Path]:
    """
    Return run directories (those holding summary.json) under root, root included.

    Raises:
        MissingRunsError: If none are found
    """
    root = Path(root)
    if not root.is_dir():
        raise MissingRunsError(f"run directory not found: {root}")
    runs = sorted({path.parent for path in root.rglob(config.SUMMARY_JSON_NAME)})
    if not runs:
        raise MissingRunsError(f"no runs (summary.json) under {root}")
    return runs


def _load_trace(handler: RunFileHandler) -> Optional[StepTimeTrace]:
    rows = handler.load_series()
    return StepTimeTrace.from_rows(rows) if rows else None


def _run_row(run_dir: Path) -> Dict[str, Any]:
    handler = RunFileHandler(run_dir)
    summary = handler.load_summary()
    if summary is None:
        raise MissingRunsError(f"unreadable summary in {run_dir}")
    cfg = summary.get('config') or {}
    ledger = summary.get('ledger') or {}
    trace = _load_trace(handler)
    volume = communication_volume(handler.load_trace())
    row = {
        'run': run_dir.name,
        'method': (cfg.get('optimizer') or {}).get('method'),
        'staleness_S': (cfg.get('scheduler') or {}).get('staleness_S'),
        'coherence_budget': (cfg.get('coherence') or {}).get('budget'),
        'nodes': (cfg.get('topology') or {}).get('nodes'),
        'ranks': (cfg.get('topology') or {}).get('ranks'),
        'steps': summary.get('steps'),
        'initial_loss': summary.get('initial_loss'),
        'final_loss': summary.get('final_loss'),
        'final_eval_loss': summary.get('final_eval_loss'),
        'total_sim_us': summary.get('total_sim_us'),
        'barrier_wait_us': summary.get('barrier_wait_us'),
        'install_us': summary.get('install_us'),
        'spike_ratio': spike_stats(trace).spike_ratio if trace else None,
        'coherence_syncs': volume['syncs'],
        'intra_bytes': ledger.get('intra_bytes', 0),
        'inter_bytes': ledger.get('inter_bytes', 0),
        'energy_joules': summary.get('energy_joules'),
        '_trace': trace,
    }
    return row


def _sort_key(row: Dict[str, Any]):
    def number(value):
        if value in (None, 'inf'):
            return math.inf
        return float(value)
    return (str(row['method']), number(row['staleness_S']), number(row['coherence_budget']),
            number(row['nodes']), row['run'])


def _attach_efficiency(rows: List[Dict[str, Any]]) -> None:
    """Fill energy_ratio and eta against an AdamW run, else the first run."""
    baseline = next((row for row in rows if row['method'] == 'AdamW'), rows[0])
    for row in rows:
        row['energy_ratio'] = None
        row['eta'] = None
        try:
            ratio = energy_ratio(row['energy_joules'] or 0.0, baseline['energy_joules'] or 0.0)
        except NonpositiveRatioError:
            continue
        # synthetic tasks have no vocabulary; efficiency is measured from the step-0 loss
        row['energy_ratio'] = ratio
        row['eta'] = compute_eta(EfficiencyInput(row['final_loss'], ratio, row['initial_loss']))


def report(run_dirs: Union[str, Path, Sequence[Union[str, Path]]],
           output_dir: Optional[Union[str, Path]] = None) -> Dict[str, Any]:
    """
    Aggregate runs into report.md, report.csv and a plot-ready series CSV.

    Args:
        run_dirs: A directory searched for runs, or a list of run directories
        output_dir: Where to write the report (defaults to the searched directory)

    Returns:
        Dict[str, Any]: 'rows' (one per run, ordered by method, S, B, nodes)
            and 'totals' (column sums)

    Raises:
        MissingRunsError: If no run is found
        RunOutputError: If a report file cannot be written
    """
    if isinstance(run_dirs, (str, Path)):
        root = Path(run_dirs)
        dirs = discover_runs(root)
    else:
        dirs = [Path(path) for path in run_dirs]
        if not dirs:
            raise MissingRunsError("no run directories given")
        root = dirs[0].parent

    rows = sorted((_run_row(run_dir) for run_dir in dirs), key=_sort_key)
    _attach_efficiency(rows)

    series = []
    for row in rows:
        trace = row.pop('_trace')
        if trace is not None:
            for record in trace:
                entry = record.to_row()
                entry['run'] = row['run']
                series.append(entry)

    totals = {column: sum(row[column] or 0 for row in rows)
              for column in ('barrier_wait_us', 'install_us', 'intra_bytes', 'inter_bytes',
                             'energy_joules')}

    target = Path(output_dir) if output_dir is not None else root
    handler = RunFileHandler(target)
    handler.require(
        handler.safe_write_csv(target / config.REPORT_CSV_NAME, rows, REPORT_COLUMNS),
        handler.safe_write_csv(target / config.REPORT_SERIES_NAME, series, ['run'] + SERIES_HEADERS),
        handler.write_text(target / config.REPORT_MD_NAME,
                           SummaryGenerator().generate_report(rows, REPORT_COLUMNS, f"{len(rows)} runs")),
    )
    logger.info(f"Report over {len(rows)} runs written to {target}")
    return {'rows': rows, 'totals': totals}
