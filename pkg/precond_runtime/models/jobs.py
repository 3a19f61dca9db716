"""
Scheduler models for the Shadow Preconditioner Runtime.

This module defines refresh jobs and their forward-only status machine,
per-block freshness records, hook events and the staleness policy.
"""

import threading
from enum import Enum
from typing import Optional

from ..errors import ConfigInvalidError
from ..utils.validators import ConfigValidator
from .blocks import FactorSnapshot, RefreshResult


class JobStatus(Enum):
    """Enumeration of refresh job states, in transition order."""
    QUEUED = "queued"
    RUNNING = "running"
    DONE = "done"
    INSTALLED = "installed"
    FAILED = "failed"


_STATUS_ORDER = {
    JobStatus.QUEUED: 0,
    JobStatus.RUNNING: 1,
    JobStatus.DONE: 2,
    JobStatus.FAILED: 2,
    JobStatus.INSTALLED: 3,
}


class AsyncJob:
    """
    A snapshot-carrying inverse-root work item.

    Status only moves forward: Queued, Running, Done (or Failed), Installed.
    Transitions happen on worker threads and the training thread, so they
    are guarded by a lock.
    """

    def __init__(self, job_id: int, block_id: str, snapshot: FactorSnapshot, dispatch_step: int):
        """
        Initialize an AsyncJob.

        Args:
            job_id (int): Unique job number within the scheduler
            block_id (str): Target block
            snapshot (FactorSnapshot): Factors copied at dispatch
            dispatch_step (int): Step at which the job was dispatched
        """
        self.job_id = job_id
        self.block_id = block_id
        self.snapshot = snapshot
        self.dispatch_step = dispatch_step
        self.result: Optional[RefreshResult] = None
        self.error: Optional[BaseException] = None
        self.dispatch_checksum = snapshot.checksum
        self.start_checksum: Optional[str] = None
        self.dispatch_us = 0.0
        self.start_us = 0.0
        self.done_us = 0.0
        self.busy_us = 0.0
        self.future = None
        self._status = JobStatus.QUEUED
        self._lock = threading.Lock()

    @property
    def status(self) -> JobStatus:
        """Get the current status."""
        with self._lock:
            return self._status

    def advance(self, new_status: JobStatus) -> None:
        """
        Move the job to a later status.

        Args:
            new_status (JobStatus): Target status

        Raises:
            ConfigInvalidError: If the transition would move backwards
        """
        with self._lock:
            if _STATUS_ORDER[new_status] <= _STATUS_ORDER[self._status]:
                raise ConfigInvalidError(
                    f"job {self.job_id} cannot move from {self._status.value} to {new_status.value}"
                )
            self._status = new_status

    @property
    def is_pending(self) -> bool:
        """Check whether the job has not been installed yet."""
        return self.status != JobStatus.INSTALLED

    def to_dict(self) -> dict:
        """Convert the job bookkeeping to a dictionary."""
        return {
            'job_id': self.job_id,
            'block_id': self.block_id,
            'dispatch_step': self.dispatch_step,
            'status': self.status.value,
            'dispatch_checksum': self.dispatch_checksum,
            'start_checksum': self.start_checksum,
        }

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        return (f"AsyncJob(id={self.job_id}, block={self.block_id}, "
                f"dispatch_step={self.dispatch_step}, status={self.status.value})")


class FreshnessRecord:
    """Installed version and pending-job bookkeeping for one block."""

    def __init__(self, block_id: str):
        self.block_id = block_id
        self.installed_version = 0
        self.dispatch_step_of_pending: Optional[int] = None
        self.last_install_step = -1
        self.installed_snapshot_step = -1

    @property
    def has_pending(self) -> bool:
        """Check whether a job is outstanding for the block."""
        return self.dispatch_step_of_pending is not None

    def record_install(self, version: int, step: int, snapshot_step: int) -> None:
        """
        Record an installation.

        Raises:
            ConfigInvalidError: If the version does not increase
        """
        if version <= self.installed_version:
            raise ConfigInvalidError(
                f"block {self.block_id}: installed version {version} does not exceed "
                f"{self.installed_version}"
            )
        self.installed_version = version
        self.last_install_step = step
        self.installed_snapshot_step = snapshot_step
        self.dispatch_step_of_pending = None

    def to_dict(self) -> dict:
        """Convert the record to a dictionary."""
        return {
            'block_id': self.block_id,
            'installed_version': self.installed_version,
            'dispatch_step_of_pending': self.dispatch_step_of_pending,
            'last_install_step': self.last_install_step,
        }

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        return (f"FreshnessRecord({self.block_id}, version={self.installed_version}, "
                f"pending={self.dispatch_step_of_pending})")


class HookKind(Enum):
    """Enumeration of training-loop hook points."""
    FORWARD_POST = "ForwardPost"
    BACKWARD_PRE = "BackwardPre"
    STEP_END = "StepEnd"


class HookEvent:
    """A hook firing on one training worker."""

    def __init__(self, kind: HookKind, module_id: int, step: int):
        self.kind = kind
        self.module_id = module_id
        self.step = step

    def to_dict(self) -> dict:
        """Convert the event to a dictionary."""
        return {'kind': self.kind.value, 'module_id': self.module_id, 'step': self.step}

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        return f"HookEvent({self.kind.value}, module={self.module_id}, step={self.step})"


class StalenessPolicy:
    """
    Bound on preconditioner age.

    S is measured in optimizer steps by default; with unit 'pf' it counts
    precondition periods instead. S = 0 means fully synchronous refresh.
    """

    def __init__(self, S: int, pf: int, unit: str = "steps"):
        """
        Initialize a StalenessPolicy.

        Args:
            S (int): Staleness budget
            pf (int): Precondition frequency
            unit (str): 'steps' or 'pf'
        """
        self.S = ConfigValidator.validate_int(S, "staleness_S", minimum=0)
        self.pf = ConfigValidator.validate_int(pf, "pf", minimum=1)
        self.unit = ConfigValidator.validate_choice(unit, "staleness_unit", ("steps", "pf"))

    @property
    def synchronous(self) -> bool:
        """Check whether every refresh is waited for."""
        return self.S == 0

    @property
    def threshold_steps(self) -> int:
        """Get the pending-job age (in steps) beyond which the barrier waits."""
        return self.S * self.pf if self.unit == "pf" else self.S

    @property
    def max_consume_age(self) -> int:
        """Get the largest allowed age of a consumed preconditioner."""
        return (self.S + 1) * self.pf

    def dispatch_due(self, step: int) -> bool:
        """Check whether step is a refresh step."""
        return step % self.pf == 0

    def to_dict(self) -> dict:
        """Convert the policy to a dictionary."""
        return {'staleness_S': self.S, 'pf': self.pf, 'staleness_unit': self.unit}

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        return f"StalenessPolicy(S={self.S}, pf={self.pf}, unit={self.unit})"
