"""
Tests for the shadow refresh scheduler on a simulated timeline.
"""

import time

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from precond_runtime.core.asyncsched import ShadowScheduler, SimulatedPool, store_key
from precond_runtime.core.precond import accumulate_factors, partition_param
from precond_runtime.core.simnet import SimClock
from precond_runtime.core.tierstore import TierStore
from precond_runtime.errors import StaleUninitializedError, WorkerPoolDownError
from precond_runtime.models.blocks import PrecondBlock
from precond_runtime.models.jobs import HookEvent, HookKind, StalenessPolicy
from precond_runtime.models.optimizer_config import OptimizerConfig
from precond_runtime.models.store import ResidencyBudget, TierTag
from precond_runtime.utils.validators import TraceIntegrityValidator

STEP_US = 1000.0


class Rig:
    """One block, one rank, a simulated clock and a driver for the step order."""

    def __init__(self, tmp_path, S, pf=10, delay_steps=5.0, unit="steps", method="Shampoo",
                 timing="simulated", damping=1e-3):
        self.cfg = OptimizerConfig(method=method, damping=damping)
        self.block = PrecondBlock(partition_param((4, 3), 2048, "W0")[0])
        self.clock = SimClock()
        self.store = TierStore(ResidencyBudget(1 << 20, 1 << 20), tmp_path / "rig.cold",
                               clock=self.clock if timing == "simulated" else None)
        self.policy = StalenessPolicy(S, pf, unit)
        self.scheduler = ShadowScheduler({self.block.block_id: self.block}, self.cfg, self.policy,
                                         self.store, clock=self.clock, timing=timing, pool_size=1,
                                         job_delay_steps=delay_steps, step_compute_us=STEP_US,
                                         install_us_per_mib=0.0)
        self.rng = np.random.default_rng(0)
        self.waits = {}

    def step(self, step, accumulate=True):
        self.scheduler.on_hook(HookEvent(HookKind.FORWARD_POST, 0, step))
        self.scheduler.on_hook(HookEvent(HookKind.BACKWARD_PRE, 0, step))
        self.clock.advance(STEP_US)
        if accumulate:
            accumulate_factors(self.block, self.rng.standard_normal((4, 3)), self.cfg)
        self.scheduler.maybe_dispatch(self.block, step)
        self.waits[step] = self.scheduler.staleness_barrier(self.block, step)
        tensors = self.scheduler.consume(self.block, step)
        self.scheduler.on_hook(HookEvent(HookKind.STEP_END, 0, step))
        return tensors

    def run(self, steps):
        for step in range(steps):
            self.step(step)
            assert self.scheduler.audit(step) == []

    def close(self):
        self.scheduler.shutdown()
        self.store.close()


@pytest.fixture
def make_rig(tmp_path):
    rigs = []

    def factory(**kwargs):
        rig = Rig(tmp_path, **kwargs)
        rigs.append(rig)
        return rig

    yield factory
    for rig in rigs:
        rig.close()


def test_synchronous_policy_waits_every_refresh(make_rig):
    rig = make_rig(S=0)
    rig.run(21)

    assert rig.waits[0] == pytest.approx(5 * STEP_US)
    assert rig.waits[10] == pytest.approx(5 * STEP_US)
    assert rig.waits[20] == pytest.approx(5 * STEP_US)
    assert all(rig.waits[step] == 0.0 for step in range(21) if step % 10)
    assert rig.block.version == 3


def test_first_refresh_is_always_awaited(make_rig):
    rig = make_rig(S=5)
    rig.step(0)
    assert rig.waits[0] == pytest.approx(5 * STEP_US)
    assert rig.block.version == 1


def test_async_policy_hides_refresh_behind_steps(make_rig):
    rig = make_rig(S=5)
    rig.run(30)

    assert all(rig.waits[step] == 0.0 for step in range(1, 30))
    installs = [event for event in rig.scheduler.events if event['event'] == 'install']
    # dispatched at 10 and 20, each done five step-times later
    assert [event['step'] for event in installs] == [0, 15, 25]
    assert TraceIntegrityValidator.validate_all(rig.scheduler.events, 5, 10) == []


def test_barrier_enforces_pending_age(make_rig):
    rig = make_rig(S=2)
    rig.run(14)

    assert rig.waits[13] == pytest.approx(2 * STEP_US)
    assert all(rig.waits[step] == 0.0 for step in (10, 11, 12))
    assert rig.scheduler.counters['barrier_waits'] == 2


def test_staleness_unit_in_periods(make_rig):
    rig = make_rig(S=1, pf=2, unit="pf", delay_steps=3.0)
    rig.run(12)

    consumed = [event for event in rig.scheduler.events if event['event'] == 'consume']
    assert consumed
    assert all(event['step'] - event['snapshot_step'] <= (1 + 1) * 2 for event in consumed)


def test_due_refresh_with_job_outstanding_is_coalesced(make_rig):
    rig = make_rig(S=10, pf=1, delay_steps=4.0)
    rig.run(12)

    assert rig.scheduler.counters['coalesced'] > 0
    assert TraceIntegrityValidator.validate_coalescing(rig.scheduler.events) == []
    assert TraceIntegrityValidator.validate_versions(rig.scheduler.events) == []


def test_consume_before_install(make_rig):
    rig = make_rig(S=5)
    with pytest.raises(StaleUninitializedError):
        rig.scheduler.consume(rig.block, 0)


def test_failed_refresh_takes_pool_down(make_rig):
    rig = make_rig(S=0, damping=None)
    # zero factors with relative damping are singular
    with pytest.raises(WorkerPoolDownError):
        rig.step(0, accumulate=False)
    with pytest.raises(WorkerPoolDownError):
        rig.scheduler.maybe_dispatch(rig.block, 10)


def test_shutdown_rejects_dispatch(make_rig):
    rig = make_rig(S=5)
    rig.scheduler.shutdown()
    with pytest.raises(WorkerPoolDownError):
        rig.scheduler.maybe_dispatch(rig.block, 0)


def test_installed_tensors_prefetched_and_drained(make_rig):
    rig = make_rig(S=0)
    rig.step(0)
    key = store_key(rig.block.block_id, 'inv_L')
    assert rig.store.contains(key)

    rig.clock.advance(1e6)
    deadline = time.monotonic() + 5.0
    while rig.store.tier_of(key) != TierTag.HOT and time.monotonic() < deadline:
        rig.scheduler.on_hook(HookEvent(HookKind.FORWARD_POST, 0, 1))
    assert rig.store.tier_of(key) == TierTag.HOT


def test_backward_hook_prefetches_consumed_roles(make_rig):
    rig = make_rig(S=0)
    rig.step(0)
    key = store_key(rig.block.block_id, 'inv_L')
    rig.store.demote(key, TierTag.COLD)
    actions = rig.scheduler.on_hook(HookEvent(HookKind.BACKWARD_PRE, 0, 1))
    hooks = [event for event in rig.scheduler.events if event['event'] == 'hook']

    assert actions['prefetched'] >= 1
    assert actions['installed'] == 0
    assert hooks[-1]['hook'] == 'BackwardPre'


def test_republish_and_read_installed(make_rig):
    rig = make_rig(S=0)
    rig.step(0)
    rig.scheduler.republish(rig.block.block_id, 'inv_L', 2.0 * np.eye(4))

    assert np.array_equal(rig.scheduler.read_installed(rig.block.block_id, 'inv_L'), 2.0 * np.eye(4))
    assert np.array_equal(rig.block.inv_L.to_array(), 2.0 * np.eye(4))
    assert rig.scheduler.counters['republished'] == 1
    with pytest.raises(KeyError):
        rig.scheduler.republish(rig.block.block_id, 'L', np.eye(4))


def test_soap_consumes_rotations(make_rig):
    rig = make_rig(S=0, method="SOAP")
    tensors = rig.step(0)
    assert set(tensors) == {'Q_L', 'Q_R'}
    q = tensors['Q_L']
    assert np.allclose(q.T @ q, np.eye(4), atol=1e-10)


def test_step_timing_resets(make_rig):
    rig = make_rig(S=0)
    rig.step(0)
    wait, install = rig.scheduler.take_step_timing()
    assert wait == pytest.approx(5 * STEP_US)
    assert install == 0.0
    assert rig.scheduler.take_step_timing() == (0.0, 0.0)


def test_pool_stats_and_activity(make_rig):
    rig = make_rig(S=5)
    rig.run(12)
    stats = rig.scheduler.pool_stats()

    assert stats['dispatched'] == 2
    assert stats['pending'] == 1
    assert stats['workers'] == 1
    active, idle = rig.scheduler.worker_activity(rig.clock.now_us)
    assert active == pytest.approx(10 * STEP_US)
    assert idle == pytest.approx(rig.clock.now_us - active)


def test_completion_is_counted_before_install(make_rig):
    rig = make_rig(S=10, delay_steps=2.0)
    rig.run(11)
    assert rig.scheduler.pool_stats()['completed'] == 1

    rig.clock.advance(3 * STEP_US)
    rig.scheduler.on_hook(HookEvent(HookKind.FORWARD_POST, 0, 11))
    stats = rig.scheduler.pool_stats()
    assert (stats['completed'], stats['installed'], stats['pending']) == (2, 1, 1)
    since_hook = [event['event'] for event in rig.scheduler.events[-4:]]
    assert 'job_done' in since_hook and 'install' not in since_hook

    rig.scheduler.on_hook(HookEvent(HookKind.STEP_END, 0, 11))
    stats = rig.scheduler.pool_stats()
    assert (stats['completed'], stats['installed']) == (2, 2)
    assert sum(1 for event in rig.scheduler.events if event['event'] == 'job_done') == 2


def test_wall_timing_installs_real_results(make_rig):
    rig = make_rig(S=0, timing="wall", delay_steps=0.0)
    rig.run(3)
    assert rig.block.version == 1
    assert rig.waits[0] >= 0.0


def test_simulated_pool_assigns_earliest_free_worker():
    pool = SimulatedPool(2)
    assert pool.schedule(0.0, 10.0) == (0, 0.0, 10.0)
    assert pool.schedule(0.0, 10.0) == (1, 0.0, 10.0)
    assert pool.schedule(5.0, 10.0) == (0, 10.0, 20.0)
    assert pool.activity(30.0) == (30.0, 30.0)
    with pytest.raises(ValueError):
        SimulatedPool(0)


@settings(max_examples=20, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(S=st.sampled_from([0, 1, 3, 5, 10]), delay=st.floats(0.0, 3.0), pf=st.sampled_from([1, 3, 10]))
def test_randomized_schedules_keep_bounded_staleness(tmp_path, S, delay, pf):
    rig = Rig(tmp_path, S=S, pf=pf, delay_steps=delay)
    try:
        rig.run(120)
        events = rig.scheduler.events
        assert len([event for event in events if event['event'] == 'consume']) == 120
        assert TraceIntegrityValidator.validate_bounded_staleness(events, S, pf) == []
        assert TraceIntegrityValidator.validate_coalescing(events) == []
    finally:
        rig.close()
