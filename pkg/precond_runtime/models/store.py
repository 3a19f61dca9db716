"""
Tier store models for the Shadow Preconditioner Runtime.

Defines the three residency tiers, the per-key StoreEntry bookkeeping and
the ResidencyBudget that bounds the two memory tiers.
"""

from enum import Enum
from typing import Any, Hashable, Optional, Tuple

from ..utils.validators import ConfigValidator


class TierTag(Enum):
    """Residency tiers, ordered from fastest to slowest."""
    HOT = "hot"
    HOST = "host"
    COLD = "cold"

    @property
    def rank(self) -> int:
        """Get the tier depth (0 = Hot)."""
        return _TIER_RANK[self]

    @property
    def is_memory(self) -> bool:
        """Check whether the tier holds an in-memory buffer."""
        return self != TierTag.COLD

    @classmethod
    def parse(cls, value) -> 'TierTag':
        """Parse a tier from an instance or a case-insensitive name."""
        if isinstance(value, TierTag):
            return value
        return cls(str(value).lower())


_TIER_RANK = {TierTag.HOT: 0, TierTag.HOST: 1, TierTag.COLD: 2}


class StagedCopy:
    """An in-flight transfer of an entry toward a faster tier."""

    def __init__(self, target: TierTag, ticket: int):
        self.target = target
        self.ticket = ticket
        self.complete = False
        self.failed = False

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        return (f"StagedCopy(target={self.target.value}, ticket={self.ticket}, "
                f"complete={self.complete})")


class StoreEntry:
    """
    Bookkeeping for one stored tensor.

    The tier is where the authoritative copy lives. An entry is dirty when its
    in-memory content has not been written to the cold file since the last
    change. A clean memory-resident entry has a valid cold record.
    """

    def __init__(self, key: Hashable, tier: TierTag, nbytes: int, pinned: bool = False,
                 step: int = 0):
        """
        Initialize a StoreEntry.

        Args:
            key (Hashable): Entry key, usually (block id, tensor role)
            tier (TierTag): Current tier
            nbytes (int): Tensor size in bytes
            pinned (bool): Whether the entry may be evicted
            step (int): Step of creation
        """
        self.key = key
        self.tier = tier
        self.nbytes = ConfigValidator.validate_int(nbytes, "bytes", minimum=1)
        self.pinned = pinned
        self.dirty = tier.is_memory
        self.last_touch_step = step
        self.touch_seq = 0
        self.staged_copy: Optional[StagedCopy] = None
        self.cold_record: Optional[Any] = None
        self.generation = 0
        self.dtype: Optional[str] = None
        self.shape: Tuple[int, ...] = ()
        self.last_error: Optional[Exception] = None

    @property
    def bytes(self) -> int:
        """Get the tensor size in bytes."""
        return self.nbytes

    @property
    def persisted(self) -> bool:
        """Check whether the cold file holds the latest content."""
        return self.cold_record is not None and not self.dirty

    def to_dict(self) -> dict:
        """Convert the entry bookkeeping to a dictionary."""
        return {
            'key': list(self.key) if isinstance(self.key, tuple) else self.key,
            'tier': self.tier.value,
            'bytes': self.nbytes,
            'dirty': self.dirty,
            'pinned': self.pinned,
            'last_touch_step': self.last_touch_step,
            'staged': None if self.staged_copy is None else self.staged_copy.target.value,
        }

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        return (f"StoreEntry(key={self.key!r}, tier={self.tier.value}, bytes={self.nbytes}, "
                f"dirty={self.dirty}, pinned={self.pinned})")


class ResidencyBudget:
    """Capacity limits for the Hot and Host tiers; Cold is unbounded."""

    def __init__(self, hot_capacity_bytes: int, host_capacity_bytes: int):
        """
        Initialize a ResidencyBudget.

        Args:
            hot_capacity_bytes (int): Hot tier capacity
            host_capacity_bytes (int): Host tier capacity
        """
        self.hot_capacity_bytes = ConfigValidator.validate_int(
            hot_capacity_bytes, "hot_capacity_bytes", minimum=0)
        self.host_capacity_bytes = ConfigValidator.validate_int(
            host_capacity_bytes, "host_capacity_bytes", minimum=0)

    def capacity(self, tier: TierTag) -> Optional[int]:
        """Return the capacity of a tier, None for unbounded."""
        if tier == TierTag.HOT:
            return self.hot_capacity_bytes
        if tier == TierTag.HOST:
            return self.host_capacity_bytes
        return None

    def to_dict(self) -> dict:
        """Convert the budget to a dictionary."""
        return {
            'hot_capacity_bytes': self.hot_capacity_bytes,
            'host_capacity_bytes': self.host_capacity_bytes,
        }

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        return (f"ResidencyBudget(hot={self.hot_capacity_bytes}, "
                f"host={self.host_capacity_bytes})")
