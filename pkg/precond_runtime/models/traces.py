"""
Trace and summary models for the Shadow Preconditioner Runtime.

This module defines the per-step timing record, the step-time trace used by
the metrics layer, the energy proxy inputs and the RunSummary returned by a
training run.
"""

import math
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ..errors import ConfigInvalidError
from ..utils.validators import ConfigValidator
from .. import config


class StepRecord:
    """
    Timing and loss of one optimizer step on the reporting rank.

    barrier_wait_us and install_us may be None for traces read from files
    that were written without scheduler annotations.
    """

    TIMING_FIELDS = ('total_us', 'compute_us', 'collective_us', 'barrier_wait_us', 'install_us')

    def __init__(self, step: int, loss: float, total_us: float, compute_us: float = 0.0,
                 collective_us: float = 0.0, barrier_wait_us: Optional[float] = 0.0,
                 install_us: Optional[float] = 0.0, sim_time_us: float = 0.0):
        self.step = int(step)
        self.loss = float(loss)
        self.total_us = float(total_us)
        self.compute_us = float(compute_us)
        self.collective_us = float(collective_us)
        self.barrier_wait_us = None if barrier_wait_us is None else float(barrier_wait_us)
        self.install_us = None if install_us is None else float(install_us)
        self.sim_time_us = float(sim_time_us)

    @property
    def annotated(self) -> bool:
        """Check whether barrier and install spans are present."""
        return self.barrier_wait_us is not None and self.install_us is not None

    @property
    def attributed_us(self) -> float:
        """Get the sum of the attributed components."""
        return (self.compute_us + self.collective_us + (self.barrier_wait_us or 0.0)
                + (self.install_us or 0.0))

    def to_row(self) -> Dict[str, Any]:
        """Convert the record to a CSV row."""
        return {
            'step': self.step,
            'loss': repr(self.loss),
            'total_us': repr(self.total_us),
            'compute_us': repr(self.compute_us),
            'collective_us': repr(self.collective_us),
            'barrier_wait_us': '' if self.barrier_wait_us is None else repr(self.barrier_wait_us),
            'install_us': '' if self.install_us is None else repr(self.install_us),
            'sim_time_us': repr(self.sim_time_us),
        }

    @classmethod
    def from_row(cls, row: Dict[str, Any]) -> 'StepRecord':
        """
        Create a StepRecord from a CSV row.

        Raises:
            ConfigInvalidError: If a required column is missing or malformed
        """
        def optional(name):
            value = row.get(name)
            return None if value in (None, '') else float(value)

        try:
            return cls(
                step=int(row['step']),
                loss=float(row.get('loss') or 'nan'),
                total_us=float(row['total_us']),
                compute_us=float(row.get('compute_us') or 0.0),
                collective_us=float(row.get('collective_us') or 0.0),
                barrier_wait_us=optional('barrier_wait_us'),
                install_us=optional('install_us'),
                sim_time_us=float(row.get('sim_time_us') or 0.0),
            )
        except (KeyError, ValueError) as e:
            raise ConfigInvalidError(f"malformed step row {row}: {e}")

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        return f"StepRecord(step={self.step}, loss={self.loss:.6g}, total={self.total_us:.1f}us)"


class StepTimeTrace:
    """Ordered per-step timing records of one run."""

    def __init__(self, records: Optional[List[StepRecord]] = None):
        self.records: List[StepRecord] = list(records or [])

    def add(self, record: StepRecord) -> None:
        """Append a record."""
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def totals(self) -> np.ndarray:
        """Return the total_us column."""
        return np.array([record.total_us for record in self.records], dtype=np.float64)

    def steps(self) -> List[int]:
        """Return the step indices."""
        return [record.step for record in self.records]

    def window(self, start_step: int = 0, stop_step: Optional[int] = None) -> 'StepTimeTrace':
        """Return the records with start_step <= step < stop_step."""
        return StepTimeTrace([record for record in self.records
                              if record.step >= start_step
                              and (stop_step is None or record.step < stop_step)])

    def component_total(self, name: str) -> float:
        """Return the sum of one timing component (None counted as zero)."""
        return float(sum(getattr(record, name) or 0.0 for record in self.records))

    def to_rows(self) -> List[Dict[str, Any]]:
        """Convert the trace to CSV rows."""
        return [record.to_row() for record in self.records]

    @classmethod
    def from_rows(cls, rows: List[Dict[str, Any]]) -> 'StepTimeTrace':
        """Create a trace from CSV rows."""
        return cls([StepRecord.from_row(row) for row in rows])

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        return f"StepTimeTrace(steps={len(self.records)})"


class SpikeStats:
    """Order statistics of step times."""

    def __init__(self, median: float, p99: float, maximum: float, max_step: int):
        self.median = median
        self.p99 = p99
        self.max = maximum
        self.max_step = max_step

    @property
    def spike_ratio(self) -> float:
        """Get max / median."""
        return self.max / self.median if self.median > 0 else math.inf

    def to_dict(self) -> dict:
        """Convert the statistics to a dictionary."""
        return {'median': self.median, 'p99': self.p99, 'max': self.max,
                'spike_ratio': self.spike_ratio, 'max_step': self.max_step}

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        return (f"SpikeStats(median={self.median:.1f}, max={self.max:.1f}, "
                f"ratio={self.spike_ratio:.3f})")


class BoundaryExposure:
    """Exposed preconditioning time around one pf boundary."""

    def __init__(self, step: int, barrier_wait_us: float, install_us: float):
        self.step = step
        self.barrier_wait_us = barrier_wait_us
        self.install_us = install_us

    @property
    def exposed_us(self) -> float:
        """Get barrier wait plus install time."""
        return self.barrier_wait_us + self.install_us

    def to_dict(self) -> dict:
        """Convert the exposure to a dictionary."""
        return {'step': self.step, 'barrier_wait_us': self.barrier_wait_us,
                'install_us': self.install_us, 'exposed_us': self.exposed_us}


class EnergyModel:
    """
    Energy proxy: per worker class, active and idle power in watts.

    Energy is active_us * compute_watts + idle_us * idle_watts summed over
    classes, reported in joules.
    """

    def __init__(self, rates: Optional[Dict[str, Dict[str, float]]] = None, measured: bool = False):
        rates = config.get_energy_rates() if rates is None else rates
        checked = {}
        for worker_class, values in rates.items():
            values = ConfigValidator.validate_keys(values, ('compute_watts', 'idle_watts'),
                                                   f"energy.rates.{worker_class}")
            checked[worker_class] = {
                'compute_watts': ConfigValidator.validate_float(
                    values.get('compute_watts', 0.0), f"{worker_class}.compute_watts", minimum=0.0),
                'idle_watts': ConfigValidator.validate_float(
                    values.get('idle_watts', 0.0), f"{worker_class}.idle_watts", minimum=0.0),
            }
        self.rates = checked
        self.measured = ConfigValidator.validate_bool(measured, "energy.measured")

    def energy_joules(self, activity: Dict[str, Tuple[float, float]]) -> float:
        """
        Return the energy of a run.

        Args:
            activity (Dict[str, Tuple[float, float]]): Worker class mapped to
                (active_us, idle_us) totals

        Raises:
            ConfigInvalidError: If a class has no declared rates
        """
        total = 0.0
        for worker_class in sorted(activity):
            if worker_class not in self.rates:
                raise ConfigInvalidError(f"no energy rates for worker class '{worker_class}'")
            active_us, idle_us = activity[worker_class]
            rates = self.rates[worker_class]
            total += (active_us * rates['compute_watts'] + idle_us * rates['idle_watts']) * 1e-6
        return total

    def to_dict(self) -> dict:
        """Convert the model to a dictionary."""
        return {'rates': {name: dict(values) for name, values in self.rates.items()},
                'measured': self.measured}

    @classmethod
    def from_dict(cls, data: dict) -> 'EnergyModel':
        """Create an EnergyModel from a dictionary."""
        data = ConfigValidator.validate_keys(data, ('rates', 'measured'), 'energy')
        return cls(data.get('rates'), data.get('measured', False))


class EfficiencyInput:
    """Inputs of the normalized loss-reduction efficiency."""

    def __init__(self, L_final: float, E_ratio: float, L_init: Optional[float] = None,
                 vocab_size: int = config.DEFAULT_VOCAB_SIZE):
        self.L_final = float(L_final)
        self.E_ratio = float(E_ratio)
        self.L_init = math.log(vocab_size) if L_init is None else float(L_init)

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        return (f"EfficiencyInput(L_init={self.L_init:.4f}, L_final={self.L_final:.4f}, "
                f"E_ratio={self.E_ratio:.4f})")


class RunSummary:
    """Everything a training run reports."""

    def __init__(self, run_config: dict):
        self.config = run_config
        self.losses: List[float] = []
        self.initial_loss = math.nan
        self.final_eval_loss = math.nan
        self.trace = StepTimeTrace()
        self.events: List[dict] = []
        self.coherence_events: List[dict] = []
        self.ledger: Dict[str, Any] = {}
        self.pool_stats: Dict[int, dict] = {}
        self.store_stats: Dict[int, dict] = {}
        self.param_digests: Dict[int, str] = {}
        self.param_history: Optional[List[Dict[str, np.ndarray]]] = None
        self.final_params: Dict[str, np.ndarray] = {}
        self.activity: Dict[str, Tuple[float, float]] = {}
        self.energy_joules = 0.0
        self.steps_to_target: Optional[int] = None

    @property
    def final_loss(self) -> float:
        """Get the last training loss."""
        return self.losses[-1] if self.losses else math.nan

    @property
    def total_sim_us(self) -> float:
        """Get the simulated duration of the run."""
        return self.trace.records[-1].sim_time_us if self.trace.records else 0.0

    @property
    def barrier_wait_us(self) -> float:
        """Get the total exposed barrier wait."""
        return self.trace.component_total('barrier_wait_us')

    def to_dict(self) -> dict:
        """Convert the summary to a JSON-compatible dictionary (no tensors)."""
        return {
            'config': self.config,
            'steps': len(self.losses),
            'initial_loss': self.initial_loss,
            'final_loss': self.final_loss,
            'final_eval_loss': self.final_eval_loss,
            'total_sim_us': self.total_sim_us,
            'barrier_wait_us': self.barrier_wait_us,
            'install_us': self.trace.component_total('install_us'),
            'ledger': self.ledger,
            'pool_stats': {str(rank): stats for rank, stats in sorted(self.pool_stats.items())},
            'store_stats': {str(rank): stats for rank, stats in sorted(self.store_stats.items())},
            'param_digests': {str(rank): digest for rank, digest in sorted(self.param_digests.items())},
            'activity': {name: list(values) for name, values in sorted(self.activity.items())},
            'energy_joules': self.energy_joules,
            'steps_to_target': self.steps_to_target,
        }

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        return (f"RunSummary(steps={len(self.losses)}, final_loss={self.final_loss:.6g}, "
                f"eval={self.final_eval_loss:.6g})")
