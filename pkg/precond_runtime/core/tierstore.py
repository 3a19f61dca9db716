"""
Three-tier keyed tensor store.

Hot and Host are capacity-accounted in-memory tiers; Cold is an append-only
record file. The store tracks resident bytes per tier, evicts the least
recently touched unpinned entries when a tier fills up, writes dirty
entries to the cold file before dropping them, and moves entries toward
faster tiers on a dedicated transfer worker (prefetch) whose completed
copies are installed by drain_ready on the training thread.
"""

import hashlib
import os
import queue
import struct
import tempfile
import threading
import time
import logging
from pathlib import Path
from typing import Any, Dict, Hashable, List, Optional, Tuple

import numpy as np

from ..errors import (CapacityExhaustedError, DirtyNotPersistedError, InvariantAuditError,
                      MissingKeyError, PinnedEntryError, TierIOError)
from ..models.store import ResidencyBudget, StagedCopy, StoreEntry, TierTag
from .. import config

logger = logging.getLogger(__name__)

MEMORY_TIERS = (TierTag.HOT, TierTag.HOST)


class ColdRecord:
    """Location and integrity data of one record in the cold file."""

    def __init__(self, offset: int, length: int, checksum: bytes, dtype: str, shape: Tuple[int, ...]):
        self.offset = offset
        self.length = length
        self.checksum = checksum
        self.dtype = dtype
        self.shape = shape

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        return f"ColdRecord(offset={self.offset}, length={self.length})"


class ColdFile:
    """
    Append-managed record file.

    Layout: 8-byte magic, 4-byte little-endian record version, then records.
    Each record is a fixed header (key hash u64, byte length u64, 8-byte
    blake2b checksum) followed by the raw tensor bytes. The offset index
    lives in memory.
    """

    FILE_HEADER = struct.Struct('<8sI')
    RECORD_HEADER = struct.Struct('<QQ8s')

    def __init__(self, path: Path):
        """
        Create (or truncate) the cold file.

        Raises:
            TierIOError: If the file cannot be created
        """
        self.path = Path(path)
        self._lock = threading.Lock()
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._file = open(self.path, 'w+b')
            self._file.write(self.FILE_HEADER.pack(config.COLD_FILE_MAGIC, config.COLD_RECORD_VERSION))
            self._file.flush()
        except OSError as e:
            raise TierIOError(f"cannot create cold file {self.path}: {e}")
        self.bytes_written = self.FILE_HEADER.size

    @staticmethod
    def key_hash(key: Hashable) -> int:
        """Return a stable 64-bit hash of a key."""
        return int.from_bytes(hashlib.blake2b(repr(key).encode('utf-8'), digest_size=8).digest(), 'little')

    @staticmethod
    def checksum(payload: bytes) -> bytes:
        """Return the 8-byte blake2b digest of a payload."""
        return hashlib.blake2b(payload, digest_size=8).digest()

    def append(self, key: Hashable, array: np.ndarray) -> ColdRecord:
        """
        Append a record and return its index entry.

        Raises:
            TierIOError: If the write fails
        """
        payload = np.ascontiguousarray(array).tobytes()
        digest = self.checksum(payload)
        with self._lock:
            try:
                self._file.seek(0, os.SEEK_END)
                offset = self._file.tell()
                self._file.write(self.RECORD_HEADER.pack(self.key_hash(key), len(payload), digest))
                self._file.write(payload)
                self._file.flush()
            except (OSError, ValueError) as e:
                raise TierIOError(f"cold write for {key!r} failed: {e}")
            self.bytes_written += self.RECORD_HEADER.size + len(payload)
        return ColdRecord(offset, len(payload), digest, array.dtype.str, tuple(array.shape))

    def read(self, key: Hashable, record: ColdRecord) -> np.ndarray:
        """
        Read and verify a record.

        Raises:
            TierIOError: If the header or checksum does not match
        """
        with self._lock:
            try:
                self._file.seek(record.offset)
                header = self._file.read(self.RECORD_HEADER.size)
                payload = self._file.read(record.length)
            except (OSError, ValueError) as e:
                raise TierIOError(f"cold read for {key!r} failed: {e}")
        if len(header) != self.RECORD_HEADER.size or len(payload) != record.length:
            raise TierIOError(f"cold record for {key!r} is truncated")
        key_hash, length, digest = self.RECORD_HEADER.unpack(header)
        if key_hash != self.key_hash(key) or length != record.length:
            raise TierIOError(f"cold record header for {key!r} does not match the index")
        if digest != record.checksum or self.checksum(payload) != digest:
            raise TierIOError(f"checksum mismatch reading {key!r} from {self.path}")
        return np.frombuffer(payload, dtype=np.dtype(record.dtype)).reshape(record.shape).copy()

    @classmethod
    def read_header(cls, path: Path) -> Tuple[bytes, int]:
        """Return (magic, record version) of a cold file."""
        with open(path, 'rb') as file:
            return cls.FILE_HEADER.unpack(file.read(cls.FILE_HEADER.size))

    def close(self) -> None:
        """Close the file handle."""
        with self._lock:
            if not self._file.closed:
                self._file.close()


class TierStore:
    """
    Keyed tensor store across Hot, Host and Cold tiers.

    Metadata is guarded by one re-entrant lock; the transfer worker takes the
    same lock only to copy a buffer and publish the staged result. When a
    simulated clock is attached, a prefetch is ready once the clock passes
    its modelled arrival time; without one the worker sleeps the modelled
    delay and readiness is real completion.
    """

    def __init__(self, budget: ResidencyBudget, cold_path=None,
                 transfer_bandwidth_bytes_per_sec: float = config.DEFAULT_TRANSFER_BANDWIDTH,
                 transfer_latency_us: float = config.DEFAULT_TRANSFER_LATENCY_US,
                 clock=None, poison_retired: bool = False, name: str = "store"):
        """
        Initialize a TierStore.

        Args:
            budget (ResidencyBudget): Hot and Host capacities
            cold_path (str or Path, optional): Cold file; a temporary file if None
            transfer_bandwidth_bytes_per_sec (float): Prefetch bandwidth, 0 = instant
            transfer_latency_us (float): Fixed prefetch latency
            clock (optional): Object with a `now_us` attribute for simulated readiness
            poison_retired (bool): Overwrite retired buffers with NaN
            name (str): Label used in logs
        """
        self.budget = budget
        self.name = name
        self.bandwidth = float(transfer_bandwidth_bytes_per_sec)
        self.latency_us = float(transfer_latency_us)
        self.clock = clock
        self.poison_retired = poison_retired

        self._owns_cold_file = cold_path is None
        if cold_path is None:
            handle, cold_path = tempfile.mkstemp(prefix=f"{name}-", suffix=".cold")
            os.close(handle)
        self._cold = ColdFile(Path(cold_path))

        self._lock = threading.RLock()
        self._entries: Dict[Hashable, StoreEntry] = {}
        self._buffers: Dict[Hashable, np.ndarray] = {}
        self._cold_records: Dict[Hashable, ColdRecord] = {}
        self._staged: Dict[int, Hashable] = {}
        self._staged_data: Dict[int, np.ndarray] = {}
        self._staged_ready_at: Dict[int, float] = {}
        self._resident = {tier: 0 for tier in MEMORY_TIERS}
        self._high_water = {tier: 0 for tier in MEMORY_TIERS}
        self._touch_counter = 0
        self._ticket_counter = 0
        self._step = 0
        self.counters = {
            'puts': 0, 'gets': 0, 'cold_writes': 0, 'cold_reads': 0, 'write_skips': 0,
            'evictions': 0, 'reclaims': 0, 'page_ins': 0, 'prefetches': 0, 'coalesced': 0,
            'transfers': 0, 'drained': 0, 'stale_transfers': 0, 'failed_transfers': 0,
        }

        self._queue: "queue.Queue" = queue.Queue()
        self._worker: Optional[threading.Thread] = None
        self._closed = False

    # Context management

    def __enter__(self) -> 'TierStore':
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()

    def close(self) -> None:
        """Stop the transfer worker and close the cold file."""
        with self._lock:
            if self._closed:
                return
            self._closed = True
        if self._worker is not None:
            self._queue.put(None)
            self._worker.join(timeout=5.0)
        self._cold.close()
        if self._owns_cold_file:
            try:
                self._cold.path.unlink()
            except OSError:
                pass
        logger.debug(f"{self.name}: closed")

    @property
    def cold_path(self) -> Path:
        """Get the cold file path."""
        return self._cold.path

    def set_step(self, step: int) -> None:
        """Set the step recorded by subsequent touches."""
        self._step = step

    # Bookkeeping helpers (lock held)

    def _entry(self, key: Hashable) -> StoreEntry:
        try:
            return self._entries[key]
        except KeyError:
            raise MissingKeyError(key)

    def _touch(self, entry: StoreEntry) -> None:
        self._touch_counter += 1
        entry.touch_seq = self._touch_counter
        entry.last_touch_step = self._step

    def _charge(self, tier: TierTag, nbytes: int) -> None:
        if tier.is_memory:
            self._resident[tier] += nbytes
            self._high_water[tier] = max(self._high_water[tier], self._resident[tier])

    def _release(self, tier: TierTag, nbytes: int) -> None:
        if tier.is_memory:
            self._resident[tier] -= nbytes

    def _retire(self, buffer: Optional[np.ndarray]) -> None:
        if buffer is not None and self.poison_retired and buffer.dtype.kind == 'f':
            buffer.fill(np.nan)

    def _invalidate_staged(self, entry: StoreEntry) -> None:
        entry.generation += 1
        if entry.staged_copy is not None:
            ticket = entry.staged_copy.ticket
            self._staged.pop(ticket, None)
            self._staged_data.pop(ticket, None)
            self._staged_ready_at.pop(ticket, None)
            entry.staged_copy = None

    def _make_room(self, tier: TierTag, nbytes: int, exclude: Hashable = None, freed: int = 0) -> None:
        """
        Evict least recently touched unpinned entries until nbytes fit.

        freed counts bytes already charged to the tier that the caller
        releases once room is made.

        Raises:
            CapacityExhaustedError: If pinned entries leave too little room
        """
        capacity = self.budget.capacity(tier)
        if capacity is None:
            return
        if nbytes > capacity:
            raise CapacityExhaustedError(
                f"{self.name}: {nbytes} bytes exceed {tier.value} capacity {capacity}"
            )
        while self._resident[tier] - freed + nbytes > capacity:
            candidates = [entry for entry in self._entries.values()
                          if entry.tier == tier and not entry.pinned and entry.key != exclude]
            if not candidates:
                raise CapacityExhaustedError(
                    f"{self.name}: cannot free {nbytes} bytes in {tier.value} "
                    f"({self._resident[tier]} of {capacity} resident, rest pinned)"
                )
            victim = min(candidates, key=lambda entry: entry.touch_seq)
            next_tier = TierTag.HOST if tier == TierTag.HOT else TierTag.COLD
            logger.debug(f"{self.name}: evicting {victim.key!r} from {tier.value} to {next_tier.value}")
            self._move(victim, next_tier)
            self.counters['evictions'] += 1

    def _flush(self, entry: StoreEntry) -> None:
        """Append the entry's buffer to the cold file if it is dirty."""
        if entry.dirty or entry.key not in self._cold_records:
            record = self._cold.append(entry.key, self._buffers[entry.key])
            self._cold_records[entry.key] = record
            entry.cold_record = record
            entry.dirty = False
            self.counters['cold_writes'] += 1
        else:
            self.counters['write_skips'] += 1

    def _read_cold(self, entry: StoreEntry) -> np.ndarray:
        record = self._cold_records.get(entry.key)
        if record is None:
            raise TierIOError(f"{self.name}: no cold record for {entry.key!r}")
        data = self._cold.read(entry.key, record)
        self.counters['cold_reads'] += 1
        return data

    def _move(self, entry: StoreEntry, to_tier: TierTag, data: Optional[np.ndarray] = None) -> None:
        """Move an entry between tiers, keeping accounting and persistence consistent."""
        from_tier = entry.tier
        if from_tier == to_tier:
            return

        if to_tier == TierTag.COLD:
            self._flush(entry)
            self._release(from_tier, entry.nbytes)
            self._retire(self._buffers.pop(entry.key))
            entry.tier = TierTag.COLD
            return

        if data is None:
            data = self._buffers[entry.key] if from_tier.is_memory else self._read_cold(entry)
        self._make_room(to_tier, entry.nbytes, exclude=entry.key)
        if from_tier.is_memory:
            old = self._buffers.pop(entry.key)
            self._release(from_tier, entry.nbytes)
            if old is not data:
                self._retire(old)
        self._buffers[entry.key] = data
        self._charge(to_tier, entry.nbytes)
        entry.tier = to_tier

    # Public operations

    def put(self, key: Hashable, tensor, tier: TierTag = TierTag.HOST, pinned: bool = False) -> StoreEntry:
        """
        Store a tensor under key in a tier, replacing any previous entry.

        The previous entry is kept when the new tensor cannot be placed.

        Raises:
            CapacityExhaustedError: If eviction cannot make room
            TierIOError: If a cold write fails
        """
        tier = TierTag.parse(tier)
        array = np.array(tensor, copy=True)
        with self._lock:
            old = self._entries.get(key)
            entry = StoreEntry(key, tier, array.nbytes, pinned=pinned, step=self._step)
            entry.dtype = array.dtype.str
            entry.shape = tuple(array.shape)
            if tier.is_memory:
                freed = old.nbytes if old is not None and old.tier == tier else 0
                self._make_room(tier, entry.nbytes, exclude=key, freed=freed)
                if old is not None:
                    self._remove(key)
                self._buffers[key] = array
                self._charge(tier, entry.nbytes)
                entry.dirty = True
            else:
                record = self._cold.append(key, array)
                if old is not None:
                    self._remove(key)
                self._cold_records[key] = record
                entry.cold_record = record
                entry.dirty = False
                self.counters['cold_writes'] += 1
            self._entries[key] = entry
            self._touch(entry)
            self.counters['puts'] += 1
            return entry

    def _remove(self, key: Hashable) -> None:
        entry = self._entries.pop(key)
        self._invalidate_staged(entry)
        if entry.tier.is_memory:
            self._release(entry.tier, entry.nbytes)
            self._retire(self._buffers.pop(key))
        self._cold_records.pop(key, None)

    def delete(self, key: Hashable) -> None:
        """Remove an entry entirely."""
        with self._lock:
            self._entry(key)
            self._remove(key)

    def get(self, key: Hashable) -> Tuple[np.ndarray, TierTag]:
        """
        Return a read-only view of the tensor and its tier.

        A Cold entry is paged into Host synchronously first. An error left
        by a failed prefetch of this key is raised here.

        Raises:
            MissingKeyError: If key is unknown
            TierIOError: On a failed transfer or cold read
        """
        with self._lock:
            entry = self._entry(key)
            if entry.last_error is not None:
                error, entry.last_error = entry.last_error, None
                raise TierIOError(f"{self.name}: transfer of {key!r} failed: {error}")
            if entry.tier == TierTag.COLD:
                self._invalidate_staged(entry)
                self._move(entry, TierTag.HOST)
                self.counters['page_ins'] += 1
            self._touch(entry)
            self.counters['gets'] += 1
            view = self._buffers[key].view()
            view.flags.writeable = False
            return view, entry.tier

    def write_back(self, key: Hashable, tensor, tier: Optional[TierTag] = None) -> StoreEntry:
        """
        Replace an entry's content as a whole buffer.

        The entry stays in its memory tier (or moves to `tier` when given);
        Cold entries are written back to Host. Pending prefetches of the old
        content are discarded. Unknown keys are created.
        """
        array = np.array(tensor, copy=True)
        with self._lock:
            if key not in self._entries:
                return self.put(key, array, tier or TierTag.HOST)
            entry = self._entries[key]
            target = TierTag.parse(tier) if tier is not None else (
                entry.tier if entry.tier.is_memory else TierTag.HOST)
            if target == TierTag.COLD:
                raise PinnedEntryError(f"write_back targets a memory tier, got cold for {key!r}")
            self._invalidate_staged(entry)

            old_tier, old_buffer = entry.tier, None
            if old_tier.is_memory:
                self._release(old_tier, entry.nbytes)
                old_buffer = self._buffers.pop(key)
                entry.tier = TierTag.COLD  # transiently bufferless
            try:
                self._make_room(target, array.nbytes, exclude=key)
            except CapacityExhaustedError:
                if old_buffer is not None:
                    self._buffers[key] = old_buffer
                    self._charge(old_tier, entry.nbytes)
                entry.tier = old_tier
                raise
            self._retire(old_buffer)
            entry.nbytes = array.nbytes
            entry.dtype = array.dtype.str
            entry.shape = tuple(array.shape)
            self._buffers[key] = array
            self._charge(target, entry.nbytes)
            entry.tier = target
            entry.dirty = True
            entry.cold_record = None
            self._cold_records.pop(key, None)
            self._touch(entry)
            return entry

    def flush(self, key: Hashable) -> bool:
        """
        Persist a memory-resident entry to the cold file if dirty.

        Returns:
            bool: True if a record was written
        """
        with self._lock:
            entry = self._entry(key)
            if not entry.tier.is_memory:
                return False
            writes = self.counters['cold_writes']
            self._flush(entry)
            return self.counters['cold_writes'] > writes

    def demote(self, key: Hashable, to_tier: TierTag) -> StoreEntry:
        """
        Move an entry to a slower tier; dirty entries are flushed before
        leaving memory.

        Raises:
            PinnedEntryError: If the entry is pinned
            TierIOError: If the flush fails
        """
        to_tier = TierTag.parse(to_tier)
        with self._lock:
            entry = self._entry(key)
            if to_tier.rank <= entry.tier.rank:
                return entry
            if entry.pinned:
                raise PinnedEntryError(f"{key!r} is pinned to {entry.tier.value}")
            self._invalidate_staged(entry)
            self._move(entry, to_tier)
            return entry

    def promote(self, key: Hashable, to_tier: TierTag) -> StoreEntry:
        """
        Move an entry to a faster tier synchronously.

        Raises:
            CapacityExhaustedError: If the target tier cannot make room
            TierIOError: If the cold read fails
        """
        to_tier = TierTag.parse(to_tier)
        with self._lock:
            entry = self._entry(key)
            if to_tier.rank >= entry.tier.rank:
                return entry
            self._invalidate_staged(entry)
            was_cold = entry.tier == TierTag.COLD
            self._move(entry, to_tier)
            if was_cold:
                self.counters['page_ins'] += 1
            self._touch(entry)
            return entry

    def pin(self, key: Hashable, pinned: bool = True) -> None:
        """Pin or unpin an entry."""
        with self._lock:
            self._entry(key).pinned = pinned

    def reclaim(self, key: Hashable) -> int:
        """
        Release an entry's memory buffer, leaving the cold copy.

        Returns:
            int: Bytes freed

        Raises:
            DirtyNotPersistedError: If the latest content is not in the cold file
            PinnedEntryError: If the entry is pinned
        """
        with self._lock:
            entry = self._entry(key)
            if not entry.tier.is_memory:
                return 0
            if entry.pinned:
                raise PinnedEntryError(f"{key!r} is pinned to {entry.tier.value}")
            if entry.dirty or key not in self._cold_records:
                raise DirtyNotPersistedError(f"{key!r} has unpersisted changes; flush it first")
            self._invalidate_staged(entry)
            self._release(entry.tier, entry.nbytes)
            self._retire(self._buffers.pop(key))
            entry.tier = TierTag.COLD
            self.counters['reclaims'] += 1
            return entry.nbytes

    # Prefetch path

    def _transfer_delay_us(self, nbytes: int) -> float:
        delay = self.latency_us
        if self.bandwidth > 0:
            delay += nbytes / self.bandwidth * 1e6
        return delay

    def _ensure_worker(self) -> None:
        if self._worker is None:
            self._worker = threading.Thread(target=self._transfer_loop, name=f"{self.name}-transfer",
                                            daemon=True)
            self._worker.start()

    def prefetch(self, key: Hashable, to_tier: TierTag = TierTag.HOT) -> Optional[int]:
        """
        Queue an asynchronous move toward a faster tier and return at once.

        A second prefetch of a key with a transfer already in flight is
        coalesced into the first.

        Returns:
            Optional[int]: Transfer ticket, None if there is nothing to move
        """
        to_tier = TierTag.parse(to_tier)
        with self._lock:
            if self._closed:
                return None
            entry = self._entries.get(key)
            if entry is None:
                logger.warning(f"{self.name}: prefetch of unknown key {key!r} ignored")
                return None
            if entry.tier.rank <= to_tier.rank:
                return None
            self.counters['prefetches'] += 1
            staged = entry.staged_copy
            if staged is not None and not staged.failed:
                self.counters['coalesced'] += 1
                return staged.ticket

            self._ticket_counter += 1
            ticket = self._ticket_counter
            entry.staged_copy = StagedCopy(to_tier, ticket)
            self._staged[ticket] = key
            delay_us = self._transfer_delay_us(entry.nbytes)
            if self.clock is not None:
                self._staged_ready_at[ticket] = self.clock.now_us + delay_us
            self._ensure_worker()
            self._queue.put((key, ticket, entry.generation, delay_us))
            return ticket

    def _transfer_loop(self) -> None:
        """Worker: copy queued entries into staged buffers."""
        while True:
            item = self._queue.get()
            if item is None:
                return
            key, ticket, generation, delay_us = item
            if self.clock is None and delay_us > 0:
                time.sleep(delay_us * 1e-6)
            with self._lock:
                entry = self._entries.get(key)
                if (entry is None or entry.generation != generation or entry.staged_copy is None
                        or entry.staged_copy.ticket != ticket):
                    self.counters['stale_transfers'] += 1
                    continue
                self._fill_staged(entry, ticket)

    def _fill_staged(self, entry: StoreEntry, ticket: int) -> None:
        """Copy an entry into its staged buffer unless already done (lock held)."""
        staged = entry.staged_copy
        if staged.complete or staged.failed:
            return
        try:
            if entry.tier.is_memory:
                data = self._buffers[entry.key].copy()
            else:
                data = self._read_cold(entry)
            self._staged_data[ticket] = data
            staged.complete = True
            self.counters['transfers'] += 1
        except TierIOError as e:
            staged.failed = True
            entry.last_error = e
            self.counters['failed_transfers'] += 1
            logger.warning(f"{self.name}: transfer of {entry.key!r} failed: {e}")

    def _staged_ready(self, ticket: int, entry: StoreEntry) -> bool:
        """Check readiness of a staged copy (lock held)."""
        staged = entry.staged_copy
        if self.clock is None:
            return staged.complete or staged.failed
        if self.clock.now_us < self._staged_ready_at.get(ticket, 0.0):
            return False
        # arrived on the simulated clock; copy now if the worker has not
        self._fill_staged(entry, ticket)
        return True

    def drain_ready(self, max_items: int = config.HOOK_DRAIN_BUDGET) -> int:
        """
        Install up to max_items completed transfers, oldest ticket first.

        Never waits for a transfer that has not arrived.

        Returns:
            int: Number of entries promoted
        """
        installed = 0
        with self._lock:
            for ticket in sorted(self._staged):
                if installed >= max_items:
                    break
                key = self._staged.get(ticket)
                entry = self._entries.get(key)
                staged = None if entry is None else entry.staged_copy
                if staged is None or staged.ticket != ticket:
                    self._staged.pop(ticket, None)
                    self._staged_data.pop(ticket, None)
                    self._staged_ready_at.pop(ticket, None)
                    continue
                if not self._staged_ready(ticket, entry):
                    continue
                if staged.failed:
                    self._invalidate_staged(entry)
                    continue
                data = self._staged_data.pop(ticket)
                self._invalidate_staged(entry)
                was_cold = entry.tier == TierTag.COLD
                try:
                    self._move(entry, staged.target, data=data)
                except CapacityExhaustedError as e:
                    logger.warning(f"{self.name}: dropping prefetch of {key!r}: {e}")
                    continue
                if was_cold:
                    self.counters['page_ins'] += 1
                self.counters['drained'] += 1
                installed += 1
        return installed

    def pending_transfers(self) -> int:
        """Return the number of staged copies not yet installed."""
        with self._lock:
            return len(self._staged)

    # Inspection

    def contains(self, key: Hashable) -> bool:
        """Check whether key is stored."""
        with self._lock:
            return key in self._entries

    def tier_of(self, key: Hashable) -> TierTag:
        """Return the tier of an entry."""
        with self._lock:
            return self._entry(key).tier

    def entry(self, key: Hashable) -> StoreEntry:
        """Return the bookkeeping of an entry."""
        with self._lock:
            return self._entry(key)

    def keys(self) -> List[Hashable]:
        """Return all keys."""
        with self._lock:
            return list(self._entries)

    def resident_bytes(self, tier: TierTag) -> int:
        """Return the bytes resident in a memory tier."""
        with self._lock:
            return self._resident[TierTag.parse(tier)]

    def audit(self) -> List[str]:
        """
        Check gauges and entry invariants.

        Returns:
            List[str]: Violations (empty if consistent)
        """
        errors = []
        with self._lock:
            sums = {tier: 0 for tier in MEMORY_TIERS}
            for key, entry in self._entries.items():
                if entry.tier.is_memory:
                    sums[entry.tier] += entry.nbytes
                    if key not in self._buffers:
                        errors.append(f"{key!r} is in {entry.tier.value} without a buffer")
                else:
                    if entry.dirty:
                        errors.append(f"{key!r} is dirty in cold")
                    if key not in self._cold_records:
                        errors.append(f"{key!r} is cold without a file record")
                    if key in self._buffers:
                        errors.append(f"{key!r} is cold but holds a buffer")
            for tier in MEMORY_TIERS:
                if sums[tier] != self._resident[tier]:
                    errors.append(f"{tier.value} gauge {self._resident[tier]} != entry sum {sums[tier]}")
                capacity = self.budget.capacity(tier)
                if self._resident[tier] > capacity:
                    errors.append(f"{tier.value} resident {self._resident[tier]} exceeds {capacity}")
        return errors

    def check(self) -> None:
        """
        Raise if audit() finds violations.

        Raises:
            InvariantAuditError: On any violation
        """
        errors = self.audit()
        if errors:
            raise InvariantAuditError(f"{self.name}: " + "; ".join(errors))

    def stats(self) -> Dict[str, Any]:
        """Return counters, gauges and high-water marks."""
        with self._lock:
            stats: Dict[str, Any] = dict(self.counters)
            for tier in MEMORY_TIERS:
                stats[f'{tier.value}_resident_bytes'] = self._resident[tier]
                stats[f'{tier.value}_high_water_bytes'] = self._high_water[tier]
            stats['entries'] = len(self._entries)
            stats['cold_file_bytes'] = self._cold.bytes_written
            return stats

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        return (f"TierStore({self.name}, entries={len(self._entries)}, "
                f"hot={self._resident[TierTag.HOT]}, host={self._resident[TierTag.HOST]})")
