"""
Tests for the three-tier tensor store.

Includes a model-based state machine and a long random run against a
dictionary oracle, auditing the store's accounting as it goes.
"""

import time

import numpy as np
import pytest
import hypothesis.strategies as st
from hypothesis import HealthCheck, settings
from hypothesis.stateful import (RuleBasedStateMachine, initialize, invariant, rule,
                                 run_state_machine_as_test)

from precond_runtime.core.simnet import SimClock
from precond_runtime.core.tierstore import ColdFile, TierStore
from precond_runtime.errors import (CapacityExhaustedError, DirtyNotPersistedError, MissingKeyError,
                                    PinnedEntryError, TierIOError)
from precond_runtime.models.store import ResidencyBudget, TierTag
from precond_runtime import config

KEYS = [("blk", role) for role in ("L", "R", "inv_L", "inv_R", "Q_L", "Q_R")] + [("W1", "L"), ("W1", "R")]


@pytest.fixture
def store(tmp_path):
    with TierStore(ResidencyBudget(1024, 2048), tmp_path / "store.cold",
                   transfer_bandwidth_bytes_per_sec=0, transfer_latency_us=0) as tier_store:
        yield tier_store


def test_put_get_roundtrip(store):
    data = np.arange(16.0)
    store.put("a", data, TierTag.HOT)
    view, tier = store.get("a")

    assert tier == TierTag.HOT
    assert np.array_equal(view, data)
    with pytest.raises(ValueError):
        view[0] = 1.0
    assert store.entry("a").dirty


def test_missing_key(store):
    with pytest.raises(MissingKeyError):
        store.get("nope")


def test_cold_put_is_clean_and_pages_into_host(store):
    store.put("c", np.ones(8), TierTag.COLD)
    assert not store.entry("c").dirty
    assert store.resident_bytes(TierTag.HOST) == 0

    view, tier = store.get("c")
    assert tier == TierTag.HOST
    assert np.array_equal(view, np.ones(8))
    assert store.stats()['page_ins'] == 1


def test_lru_eviction_cascades_to_cold(store):
    for index in range(4):
        store.put(f"h{index}", np.full(32, float(index)), TierTag.HOT)  # 256 bytes each
    store.get("h0")
    store.put("h4", np.zeros(32), TierTag.HOT)

    # h1 was least recently touched
    assert store.tier_of("h1") == TierTag.HOST
    assert store.tier_of("h0") == TierTag.HOT
    assert store.resident_bytes(TierTag.HOT) <= 1024
    store.check()

    for index in range(8):
        store.put(f"x{index}", np.zeros(32), TierTag.HOST)
    assert store.tier_of("h1") == TierTag.COLD
    assert np.array_equal(store.get("h1")[0], np.full(32, 1.0))
    store.check()


def test_pinned_entries_block_eviction(store):
    store.put("p", np.zeros(96), TierTag.HOT, pinned=True)  # 768 bytes
    with pytest.raises(CapacityExhaustedError):
        store.put("q", np.zeros(64), TierTag.HOT)
    with pytest.raises(PinnedEntryError):
        store.demote("p", TierTag.HOST)

    store.pin("p", False)
    store.demote("p", TierTag.HOST)
    assert store.tier_of("p") == TierTag.HOST


def test_oversized_tensor(store):
    with pytest.raises(CapacityExhaustedError):
        store.put("big", np.zeros(256), TierTag.HOT)


def test_write_back_keeps_old_content_when_room_cannot_be_made(store):
    store.put("p", np.zeros(96), TierTag.HOT, pinned=True)
    store.put("w", np.ones(8), TierTag.HOT)
    with pytest.raises(CapacityExhaustedError):
        store.write_back("w", np.ones(64))

    assert np.array_equal(store.get("w")[0], np.ones(8))
    store.check()


def test_failed_put_keeps_previous_entry(store):
    store.put("p", np.zeros(120), TierTag.HOT, pinned=True)
    store.put("w", np.ones(4), TierTag.HOT)
    with pytest.raises(CapacityExhaustedError):
        store.put("w", np.ones(64), TierTag.HOT)

    view, tier = store.get("w")
    assert tier == TierTag.HOT
    assert np.array_equal(view, np.ones(4))
    store.check()


def test_put_reuses_its_own_room(store):
    store.put("p", np.zeros(64), TierTag.HOT, pinned=True)
    store.put("w", np.ones(64), TierTag.HOT)
    store.put("w", np.full(64, 2.0), TierTag.HOT)

    assert store.tier_of("p") == TierTag.HOT
    assert np.array_equal(store.get("w")[0], np.full(64, 2.0))
    assert store.resident_bytes(TierTag.HOT) == 1024
    assert store.stats()['evictions'] == 0


def test_reclaim_requires_flush(store):
    store.put("r", np.arange(4.0), TierTag.HOST)
    with pytest.raises(DirtyNotPersistedError):
        store.reclaim("r")

    assert store.flush("r")
    assert not store.flush("r")
    assert store.reclaim("r") == 32
    assert store.tier_of("r") == TierTag.COLD
    assert np.array_equal(store.get("r")[0], np.arange(4.0))


def test_write_back_marks_dirty_and_discards_cold_copy(store):
    store.put("w", np.zeros(4), TierTag.HOST)
    store.flush("w")
    store.write_back("w", np.ones(4))

    entry = store.entry("w")
    assert entry.dirty and entry.cold_record is None
    with pytest.raises(DirtyNotPersistedError):
        store.reclaim("w")


def test_demote_flushes_dirty_entries(store):
    store.put("d", np.arange(6.0), TierTag.HOT)
    store.demote("d", TierTag.COLD)

    assert store.tier_of("d") == TierTag.COLD
    assert store.resident_bytes(TierTag.HOT) == 0
    assert np.array_equal(store.get("d")[0], np.arange(6.0))


def test_prefetch_drains_on_real_completion(store):
    store.put("f", np.arange(8.0), TierTag.COLD)
    ticket = store.prefetch("f", TierTag.HOT)
    assert ticket is not None
    assert store.prefetch("f", TierTag.HOT) == ticket  # coalesced

    deadline = time.monotonic() + 5.0
    while store.drain_ready() == 0 and time.monotonic() < deadline:
        time.sleep(0.001)
    assert store.tier_of("f") == TierTag.HOT
    assert store.stats()['coalesced'] == 1
    assert store.pending_transfers() == 0


def test_prefetch_waits_for_simulated_arrival(tmp_path):
    clock = SimClock()
    with TierStore(ResidencyBudget(1024, 2048), tmp_path / "sim.cold",
                   transfer_bandwidth_bytes_per_sec=1e6, transfer_latency_us=10, clock=clock) as sim_store:
        sim_store.put("f", np.zeros(8), TierTag.HOST)  # 64 bytes -> 10 + 64 us
        sim_store.prefetch("f", TierTag.HOT)

        clock.advance(50)
        assert sim_store.drain_ready() == 0
        assert sim_store.tier_of("f") == TierTag.HOST

        clock.advance(30)
        assert sim_store.drain_ready() == 1
        assert sim_store.tier_of("f") == TierTag.HOT


def test_simulated_arrival_drains_without_the_worker(tmp_path):
    clock = SimClock()
    with TierStore(ResidencyBudget(1024, 2048), tmp_path / "nowait.cold",
                   transfer_bandwidth_bytes_per_sec=0, transfer_latency_us=10, clock=clock) as sim_store:
        sim_store.put("f", np.arange(8.0), TierTag.COLD)
        # holding the store lock keeps the transfer worker from copying
        with sim_store._lock:
            sim_store.prefetch("f", TierTag.HOT)
            clock.advance(10)
            started = time.monotonic()
            assert sim_store.drain_ready() == 1
            assert time.monotonic() - started < 1.0

        assert sim_store.tier_of("f") == TierTag.HOT
        assert np.array_equal(sim_store.get("f")[0], np.arange(8.0))
        assert sim_store.stats()['transfers'] == 1


def test_write_back_invalidates_inflight_prefetch(tmp_path):
    clock = SimClock()
    with TierStore(ResidencyBudget(1024, 2048), tmp_path / "inv.cold", clock=clock,
                   transfer_bandwidth_bytes_per_sec=0, transfer_latency_us=5) as sim_store:
        sim_store.put("f", np.zeros(8), TierTag.HOST)
        sim_store.prefetch("f", TierTag.HOT)
        sim_store.write_back("f", np.ones(8))
        clock.advance(10)

        assert sim_store.drain_ready() == 0
        assert np.array_equal(sim_store.get("f")[0], np.ones(8))


def test_corrupted_cold_record_is_detected(tmp_path):
    path = tmp_path / "bad.cold"
    with TierStore(ResidencyBudget(1024, 2048), path) as bad_store:
        bad_store.put("c", np.arange(8.0), TierTag.COLD)
        with open(path, 'r+b') as handle:
            handle.seek(-1, 2)
            handle.write(b'\xff')
        with pytest.raises(TierIOError):
            bad_store.get("c")


def test_cold_file_header(store):
    magic, version = ColdFile.read_header(store.cold_path)
    assert magic == config.COLD_FILE_MAGIC
    assert version == config.COLD_RECORD_VERSION


def test_high_water_and_stats(store):
    store.put("a", np.zeros(64), TierTag.HOT)
    store.delete("a")
    stats = store.stats()

    assert stats['hot_high_water_bytes'] == 512
    assert stats['hot_resident_bytes'] == 0
    assert stats['entries'] == 0
    assert stats['cold_file_bytes'] == ColdFile.FILE_HEADER.size


def test_poisoned_buffers_are_nan(tmp_path):
    with TierStore(ResidencyBudget(1024, 2048), tmp_path / "p.cold", poison_retired=True) as poison_store:
        poison_store.put("p", np.ones(4), TierTag.HOST)
        stale, _ = poison_store.get("p")
        poison_store.write_back("p", np.zeros(4))
        assert np.all(np.isnan(stale))


class TierStoreMachine(RuleBasedStateMachine):
    """Random store operations checked against a plain dictionary."""

    @initialize()
    def setup(self):
        self.store = TierStore(ResidencyBudget(1024, 2048), transfer_bandwidth_bytes_per_sec=0,
                               transfer_latency_us=0, name="machine")
        self.oracle = {}

    def teardown(self):
        store = getattr(self, 'store', None)
        if store is not None:
            store.close()

    @rule(key=st.sampled_from(KEYS), size=st.integers(1, 64), fill=st.floats(-1e3, 1e3),
          tier=st.sampled_from(list(TierTag)))
    def put(self, key, size, fill, tier):
        data = np.full(size, fill)
        self.store.put(key, data, tier)
        self.oracle[key] = data

    @rule(key=st.sampled_from(KEYS), size=st.integers(1, 64), fill=st.floats(-1e3, 1e3))
    def write_back(self, key, size, fill):
        data = np.full(size, fill)
        self.store.write_back(key, data)
        self.oracle[key] = data

    @rule(key=st.sampled_from(KEYS))
    def get(self, key):
        if key not in self.oracle:
            with pytest.raises(MissingKeyError):
                self.store.get(key)
            return
        view, _ = self.store.get(key)
        assert np.array_equal(view, self.oracle[key])

    @rule(key=st.sampled_from(KEYS), tier=st.sampled_from(list(TierTag)))
    def move(self, key, tier):
        if key not in self.oracle:
            return
        if tier.rank > self.store.tier_of(key).rank:
            self.store.demote(key, tier)
        else:
            self.store.promote(key, tier)

    @rule(key=st.sampled_from(KEYS))
    def flush_and_reclaim(self, key):
        if key not in self.oracle:
            return
        self.store.flush(key)
        self.store.reclaim(key)
        assert self.store.tier_of(key) == TierTag.COLD

    @rule(key=st.sampled_from(KEYS))
    def prefetch_and_drain(self, key):
        if key in self.oracle:
            self.store.prefetch(key, TierTag.HOT)
        self.store.drain_ready()

    @rule(key=st.sampled_from(KEYS))
    def delete(self, key):
        if key in self.oracle:
            self.store.delete(key)
            del self.oracle[key]

    @invariant()
    def accounting_is_consistent(self):
        if not hasattr(self, 'store'):
            return
        assert self.store.audit() == []
        assert sorted(self.store.keys()) == sorted(self.oracle)
        assert self.store.resident_bytes(TierTag.HOT) <= 1024
        assert self.store.resident_bytes(TierTag.HOST) <= 2048


def test_tier_store_state_machine():
    run_state_machine_as_test(TierStoreMachine,
                              settings=settings(max_examples=40, stateful_step_count=60, deadline=None,
                                                suppress_health_check=list(HealthCheck)))


def test_long_random_run_against_oracle(tmp_path):
    rng = np.random.default_rng(7)
    keys = [("blk", index) for index in range(24)]
    oracle = {}
    pinned = set()
    operations = 100_000

    with TierStore(ResidencyBudget(4096, 8192), tmp_path / "long.cold",
                   transfer_bandwidth_bytes_per_sec=0, transfer_latency_us=0) as long_store:
        for op in range(operations):
            key = keys[rng.integers(len(keys))]
            choice = rng.integers(9)
            try:
                if choice == 0:
                    data = rng.standard_normal(rng.integers(1, 65))
                    tier = list(TierTag)[rng.integers(3)]
                    try:
                        long_store.put(key, data, tier)
                        oracle[key] = data
                        pinned.discard(key)
                    except CapacityExhaustedError:
                        # the previous entry survives a failed put
                        if key in oracle:
                            assert np.array_equal(long_store.get(key)[0], oracle[key])
                elif choice == 1:
                    data = rng.standard_normal(rng.integers(1, 65))
                    try:
                        long_store.write_back(key, data)
                        oracle[key] = data
                    except CapacityExhaustedError:
                        pass
                elif choice == 2 and key in oracle:
                    try:
                        view, _ = long_store.get(key)
                        assert np.array_equal(view, oracle[key])
                    except CapacityExhaustedError:
                        pass
                elif choice == 3 and key in oracle:
                    try:
                        long_store.promote(key, TierTag.HOT)
                    except CapacityExhaustedError:
                        pass
                elif choice == 4 and key in oracle and key not in pinned:
                    long_store.demote(key, list(TierTag)[rng.integers(1, 3)])
                elif choice == 5 and key in oracle and key not in pinned:
                    long_store.flush(key)
                    long_store.reclaim(key)
                elif choice == 6 and key in oracle:
                    long_store.prefetch(key, TierTag.HOT)
                    long_store.drain_ready()
                elif choice == 7 and key in oracle:
                    pin = key not in pinned and len(pinned) < 2
                    long_store.pin(key, pin)
                    if pin:
                        pinned.add(key)
                    else:
                        pinned.discard(key)
                elif choice == 8 and key in oracle:
                    long_store.delete(key)
                    del oracle[key]
                    pinned.discard(key)
            except TierIOError as e:
                pytest.fail(f"operation {op}: unexpected tier I/O error {e}")

            if op % 1000 == 0:
                long_store.check()
                assert sorted(long_store.keys()) == sorted(oracle)

        for key, data in oracle.items():
            try:
                view, _ = long_store.get(key)
            except CapacityExhaustedError:
                continue
            assert np.array_equal(view, data)
        long_store.check()
