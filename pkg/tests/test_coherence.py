"""
Tests for bounded-staleness coherence of replicated blocks.
"""

import math
import threading

import numpy as np
import pytest

from precond_runtime.core.coherence import (CoherenceEngine, CoherenceRegistry, discover_topology,
                                            select_stale)
from precond_runtime.core.simnet import Communicator, SimClock, SimNetwork, flat_ring_bytes
from precond_runtime.errors import ConfigInvalidError, GroupFailureError
from precond_runtime.models.coherence_records import CoherenceBudget
from precond_runtime.models.network import CostClass, TopologyGraph
from precond_runtime.models.run_config import RunConfig, TopologyConfig

BLOCKS = ["W0[0:4,0:3]", "W1[0:2,0:4]"]


class Replicas:
    """Per-rank tensors behind the reader/writer callbacks."""

    def __init__(self, ranks, roles, seed=0, shape=(4, 4)):
        rng = np.random.default_rng(seed)
        self.data = {(rank, block_id, role): rng.standard_normal(shape)
                     for rank in ranks for block_id in BLOCKS for role in roles}
        self.writes = 0

    def read(self, rank, block_id, role):
        value = self.data.get((rank, block_id, role))
        return None if value is None else value.copy()

    def write(self, rank, block_id, role, tensor):
        self.data[(rank, block_id, role)] = np.array(tensor, copy=True)
        self.writes += 1


def make_engine(topology, budget=4, roles=('inv_L', 'inv_R'), seed=0):
    network = SimNetwork(topology)
    registries = {rank: CoherenceRegistry(BLOCKS) for rank in topology.ranks}
    replicas = Replicas(topology.ranks, roles, seed)
    engine = CoherenceEngine(network, registries, CoherenceBudget(budget), replicas.read,
                             replicas.write, roles)
    return engine, replicas


def test_select_stale_uses_budget():
    registry = CoherenceRegistry(BLOCKS)
    registry.record(BLOCKS[0]).last_sync_step = 3
    assert select_stale(registry, 5, CoherenceBudget(4)) == [BLOCKS[1]]
    assert select_stale(registry, 8, CoherenceBudget(4)) == BLOCKS
    assert select_stale(registry, 100, CoherenceBudget('inf')) == []


def test_registry_tracking_is_idempotent():
    registry = CoherenceRegistry()
    first = registry.track("b")
    assert registry.track("b") is first
    assert len(registry) == 1
    assert registry.to_dict() == {'b': {'block_id': 'b', 'version': 0, 'last_sync_step': 0}}


def test_sync_is_bit_identical_and_size_weighted_mean():
    topology = TopologyGraph([[0, 1, 2], [3]])
    engine, replicas = make_engine(topology)
    expected = {(block_id, role): np.mean([replicas.data[(rank, block_id, role)] for rank in topology.ranks],
                                          axis=0)
                for block_id in BLOCKS for role in ('inv_L', 'inv_R')}

    result = engine.hierarchical_sync(BLOCKS[0], step=4)
    assert result is not None
    for role in ('inv_L', 'inv_R'):
        values = [replicas.data[(rank, BLOCKS[0], role)] for rank in topology.ranks]
        assert all(np.array_equal(values[0], value) for value in values[1:])
        assert np.max(np.abs(values[0] - expected[(BLOCKS[0], role)])) < 1e-12
    # the other block is untouched
    assert not np.array_equal(replicas.data[(0, BLOCKS[1], 'inv_L')], replicas.data[(3, BLOCKS[1], 'inv_L')])


def test_sync_versions_and_last_sync():
    topology = TopologyGraph.uniform(2, 2)
    engine, _ = make_engine(topology)
    engine.registries[2].record(BLOCKS[0]).version = 3

    result = engine.hierarchical_sync(BLOCKS[0], step=7)
    assert result.version == 4
    for rank in topology.ranks:
        record = engine.registries[rank].record(BLOCKS[0])
        assert record.version == 4
        assert record.last_sync_step == 7


def test_rotation_roles_stay_orthonormal():
    topology = TopologyGraph.uniform(2, 2)
    engine, replicas = make_engine(topology, roles=('Q_L', 'Q_R'))
    rng = np.random.default_rng(3)
    for key in replicas.data:
        replicas.data[key] = np.linalg.qr(rng.standard_normal((4, 4)))[0]

    engine.hierarchical_sync(BLOCKS[0], step=4)
    q = replicas.data[(0, BLOCKS[0], 'Q_L')]
    assert np.allclose(q.T @ q, np.eye(4), atol=1e-10)
    assert all(np.array_equal(q, replicas.data[(rank, BLOCKS[0], 'Q_L')]) for rank in topology.ranks)


def test_missing_replica_counts_as_hit():
    topology = TopologyGraph.uniform(1, 2)
    engine, replicas = make_engine(topology, budget=1)
    del replicas.data[(1, BLOCKS[0], 'inv_R')]

    report = engine.coherence_tick(1)
    assert [result.block_id for result in report.synced] == [BLOCKS[1]]
    assert report.hits == [BLOCKS[0]]
    assert report.conserved


@pytest.mark.parametrize("budget,steps", [(1, 10), (4, 20), (5, 23), (8, 64), (4, 400), (7, 400)])
def test_sync_count_per_block_follows_budget(budget, steps):
    topology = TopologyGraph.uniform(2, 2)
    engine, replicas = make_engine(topology, budget=budget)
    syncs = {block_id: 0 for block_id in BLOCKS}
    for step in range(steps):
        report = engine.coherence_tick(step)
        assert report.conserved
        for result in report.synced:
            syncs[result.block_id] += 1
            for role in ('inv_L', 'inv_R'):
                first = replicas.data[(topology.ranks[0], result.block_id, role)]
                assert all(np.array_equal(replicas.data[(rank, result.block_id, role)], first)
                           for rank in topology.ranks)

    for count in syncs.values():
        assert abs(count - steps // budget) <= 1


def test_infinite_budget_never_syncs():
    topology = TopologyGraph.uniform(2, 2)
    engine, replicas = make_engine(topology, budget='inf')
    for step in range(20):
        report = engine.coherence_tick(step)
        assert not report.synced
    assert replicas.writes == 0
    assert engine.network.ledger.total_bytes == 0


@pytest.mark.parametrize("nodes", [2, 3, 4])
@pytest.mark.parametrize("ranks_per_node", [2, 3, 4])
def test_hierarchical_moves_fewer_inter_node_bytes_than_flat_ring(nodes, ranks_per_node):
    topology = TopologyGraph.uniform(nodes, ranks_per_node)
    engine, _ = make_engine(topology, roles=('inv_L',))
    result = engine.hierarchical_sync(BLOCKS[0], step=4)
    tensor_bytes = 4 * 4 * 8

    assert result.inter_bytes == 2 * (nodes - 1) * tensor_bytes
    assert result.inter_bytes < flat_ring_bytes(topology, tensor_bytes)[CostClass.INTER_NODE]


def test_trace_events_per_tick():
    topology = TopologyGraph.uniform(2, 1)
    engine, _ = make_engine(topology, budget=2)
    for step in range(3):
        engine.coherence_tick(step)
    events = engine.trace_events()

    assert len(events) == 3 * len(BLOCKS)
    assert [event['action'] for event in events if event['step'] == 2] == ['sync', 'sync']
    assert all(event['intra_bytes'] == 0 for event in events)


def test_unreachable_rank_fails_sync():
    topology = TopologyGraph.uniform(2, 2)
    engine, _ = make_engine(topology)
    engine.network.mark_down(1)
    with pytest.raises(GroupFailureError):
        engine.hierarchical_sync(BLOCKS[0], step=4)


def test_engine_requires_registry_per_rank():
    topology = TopologyGraph.uniform(1, 2)
    with pytest.raises(ConfigInvalidError):
        CoherenceEngine(SimNetwork(topology), {0: CoherenceRegistry(BLOCKS)}, CoherenceBudget(4),
                        lambda *args: None, lambda *args: None)


def test_collective_tick_from_rank_threads():
    topology = TopologyGraph.uniform(2, 2)
    engine, replicas = make_engine(topology, budget=1)
    clocks = {rank: SimClock(now_us=float(rank)) for rank in topology.ranks}
    reports = {}

    def body(rank):
        communicator = Communicator(engine.network, rank, clocks[rank])
        reports[rank] = engine.collective_tick(communicator, 1)

    threads = [threading.Thread(target=body, args=(rank,)) for rank in topology.ranks]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join(timeout=30)

    assert len({id(report) for report in reports.values()}) == 1
    assert len(reports[0].synced) == len(BLOCKS)
    assert len({clock.now_us for clock in clocks.values()}) == 1
    assert clocks[0].now_us > 3.0


def test_discover_topology_inputs():
    assert discover_topology({'nodes': 2, 'ranks': 4}).world_size == 4
    assert discover_topology(TopologyConfig(layout=[[0], [1, 2]])).num_nodes == 2
    assert discover_topology(RunConfig()).world_size >= 1
    with pytest.raises(ConfigInvalidError):
        discover_topology(42)


def test_budget_parsing():
    assert CoherenceBudget('inf').disabled
    assert CoherenceBudget(4).B == 4
    assert math.isinf(CoherenceBudget('Infinity').B)
    with pytest.raises(ConfigInvalidError):
        CoherenceBudget(0)
