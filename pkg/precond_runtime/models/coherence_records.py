"""
Coherence models for the Shadow Preconditioner Runtime.

Defines the per-block CoherenceRecord, the CoherenceBudget B and the
results of a synchronization tick.
"""

import math
from typing import Dict, List

from ..errors import ConfigInvalidError
from ..utils.validators import ConfigValidator


class CoherenceRecord:
    """Version counter and last synchronization step of one block."""

    def __init__(self, block_id: str, version: int = 0, last_sync_step: int = 0):
        self.block_id = block_id
        self._version = int(version)
        self.last_sync_step = int(last_sync_step)

    @property
    def version(self) -> int:
        """Get the coherence version."""
        return self._version

    @version.setter
    def version(self, value: int) -> None:
        """Set the version; it never decreases."""
        if value < self._version:
            raise ConfigInvalidError(
                f"block {self.block_id} coherence version cannot decrease to {value}"
            )
        self._version = int(value)

    def age(self, step: int) -> int:
        """Return steps elapsed since the last synchronization."""
        return step - self.last_sync_step

    def to_dict(self) -> dict:
        """Convert the record to a dictionary."""
        return {'block_id': self.block_id, 'version': self._version,
                'last_sync_step': self.last_sync_step}

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        return (f"CoherenceRecord({self.block_id}, version={self._version}, "
                f"last_sync={self.last_sync_step})")


class CoherenceBudget:
    """Maximum steps between synchronizations of a block (B >= 1, may be inf)."""

    def __init__(self, B=4):
        if isinstance(B, str) and B.strip().lower() in ("inf", "infinity"):
            B = math.inf
        value = ConfigValidator.validate_float(B, "coherence_budget", minimum=1.0, allow_inf=True)
        self.B = value if math.isinf(value) else ConfigValidator.validate_int(value, "coherence_budget", minimum=1)

    @property
    def disabled(self) -> bool:
        """Check whether blocks are never synchronized."""
        return math.isinf(self.B)

    def to_dict(self) -> dict:
        """Convert the budget to a dictionary ('inf' for no syncs)."""
        return {'budget': 'inf' if self.disabled else self.B}

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        return f"CoherenceBudget(B={self.B})"


class SyncResult:
    """Outcome of one hierarchical synchronization."""

    def __init__(self, block_id: str, step: int, intra_bytes: int, inter_bytes: int,
                 version: int):
        self.block_id = block_id
        self.step = step
        self.intra_bytes = intra_bytes
        self.inter_bytes = inter_bytes
        self.version = version

    def to_dict(self) -> dict:
        """Convert the result to a dictionary."""
        return {'block_id': self.block_id, 'step': self.step, 'intra_bytes': self.intra_bytes,
                'inter_bytes': self.inter_bytes, 'version': self.version}


class SyncReport:
    """
    Totals for one coherence tick.

    hits + synced always equals the number of tracked blocks.
    """

    def __init__(self, step: int, tracked: int):
        self.step = step
        self.tracked = tracked
        self.synced: List[SyncResult] = []
        self.hits: List[str] = []

    def add_sync(self, result: SyncResult) -> None:
        """Record a synchronized block."""
        self.synced.append(result)

    def add_hit(self, block_id: str) -> None:
        """Record a block that stayed within budget."""
        self.hits.append(block_id)

    @property
    def intra_bytes(self) -> int:
        """Get IntraNode bytes moved by the tick."""
        return sum(result.intra_bytes for result in self.synced)

    @property
    def inter_bytes(self) -> int:
        """Get InterNode bytes moved by the tick."""
        return sum(result.inter_bytes for result in self.synced)

    @property
    def conserved(self) -> bool:
        """Check hits + synced == tracked."""
        return len(self.hits) + len(self.synced) == self.tracked

    def trace_events(self) -> List[Dict]:
        """Return one trace record per tracked block."""
        events = [{'step': self.step, 'block_id': block_id, 'action': 'hit',
                   'intra_bytes': 0, 'inter_bytes': 0} for block_id in self.hits]
        events.extend({'step': self.step, 'block_id': result.block_id, 'action': 'sync',
                       'intra_bytes': result.intra_bytes, 'inter_bytes': result.inter_bytes}
                      for result in self.synced)
        events.sort(key=lambda event: event['block_id'])
        return events

    def to_dict(self) -> dict:
        """Convert the report to a dictionary."""
        return {'step': self.step, 'tracked': self.tracked, 'synced': len(self.synced),
                'hits': len(self.hits), 'intra_bytes': self.intra_bytes,
                'inter_bytes': self.inter_bytes}

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        return (f"SyncReport(step={self.step}, synced={len(self.synced)}, "
                f"hits={len(self.hits)})")
