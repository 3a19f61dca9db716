"""
Tests for the simulated network: topology, collectives, charging and the
per-rank communicator.
"""

import math
import threading

import numpy as np
import pytest

from precond_runtime.core.simnet import (Communicator, Rendezvous, SimClock, SimNetwork,
                                         flat_ring_bytes)
from precond_runtime.errors import (GroupFailureError, InvalidLayoutError, RendezvousTimeoutError,
                                    ShapeMismatchError)
from precond_runtime.models.network import CostClass, TopologyGraph


@pytest.fixture
def topology():
    return TopologyGraph.uniform(2, 2)


@pytest.fixture
def network(topology):
    return SimNetwork(topology, intra_latency_us=5, inter_latency_us=50, intra_bw=math.inf,
                      inter_bw=math.inf)


def run_ranks(ranks, body):
    """Run body(rank) on one thread per rank and return results by rank."""
    results, errors = {}, []

    def target(rank):
        try:
            results[rank] = body(rank)
        except Exception as e:  # surfaced below
            errors.append(e)

    threads = [threading.Thread(target=target, args=(rank,)) for rank in ranks]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join(timeout=30)
    if errors:
        raise errors[0]
    return results


def test_topology_layout_checks():
    graph = TopologyGraph([[3, 1], [0, 2]])
    assert graph.representatives == {0: 1, 1: 0}
    assert graph.node_members(0) == (1, 3)
    assert graph.edge_cost(1, 3) == CostClass.INTRA_NODE
    assert graph.edge_cost(0, 1) == CostClass.INTER_NODE

    with pytest.raises(InvalidLayoutError):
        TopologyGraph([[0, 1], []])
    with pytest.raises(InvalidLayoutError):
        TopologyGraph([[0, 1], [1, 2]])


def test_allreduce_weighted_mean_and_copies(network, topology):
    world = network.world_group()
    tensors = {rank: np.full(3, float(rank)) for rank in topology.ranks}
    weights = {0: 1.0, 1: 1.0, 2: 2.0, 3: 0.0}
    result = network.allreduce_avg(world, tensors, weights)

    assert np.allclose(result[0], np.full(3, 5.0 / 4.0))
    assert all(np.array_equal(result[0], result[rank]) for rank in topology.ranks)
    result[0][0] = 99.0
    assert result[1][0] != 99.0


def test_singleton_group_is_free(network):
    group = network.group([2])
    tensor = np.arange(4.0)
    result = network.allreduce_avg(group, {2: tensor})

    assert np.array_equal(result[2], tensor) and result[2] is not tensor
    assert network.ledger.total_bytes == 0
    assert network.ledger.simulated_latency_us == 0.0


def test_star_charging_per_class(network):
    world = network.world_group()
    tensors = {rank: np.zeros(10) for rank in range(4)}  # 80 bytes
    network.allreduce_avg(world, tensors)

    # root 0 shares a node with rank 1; ranks 2 and 3 are remote
    assert network.ledger.intra_bytes == 2 * 80
    assert network.ledger.inter_bytes == 2 * 2 * 80
    assert network.ledger.simulated_latency_us == pytest.approx(2 * 50)


def test_broadcast_charges_one_phase(network):
    node = network.node_group(1)
    result = network.broadcast(node, 2, np.ones(4))

    assert set(result) == {2, 3}
    assert network.ledger.intra_bytes == 32
    assert network.ledger.inter_bytes == 0
    with pytest.raises(GroupFailureError):
        network.broadcast(node, 0, np.ones(4))


def test_bandwidth_term_in_latency(topology):
    network = SimNetwork(topology, intra_latency_us=1, inter_latency_us=10, intra_bw=1e6, inter_bw=1e6)
    world = network.world_group()
    assert network.collective_latency_us(world, 100, "allreduce") == pytest.approx(2 * (10 + 100))
    assert network.collective_latency_us(network.node_group(0), 100, "broadcast") == pytest.approx(1 + 100)
    assert network.collective_latency_us(network.group([1]), 100) == 0.0


def test_ring_charging_counts_crossing_edges():
    graph = TopologyGraph.uniform(2, 2)
    bytes_per_class = flat_ring_bytes(graph, 1000)
    # ring 0-1-2-3-0 crosses nodes on edges 1-2 and 3-0
    share = 2.0 * 1000 * 3 / 4
    assert bytes_per_class[CostClass.INTER_NODE] == round(2 * share)
    assert bytes_per_class[CostClass.INTRA_NODE] == round(2 * share)


def test_operand_checks(network):
    world = network.world_group()
    with pytest.raises(GroupFailureError):
        network.allreduce_avg(world, {0: np.zeros(2)})
    with pytest.raises(ShapeMismatchError):
        network.allreduce_avg(world, {0: np.zeros(2), 1: np.zeros(2), 2: np.zeros(2), 3: np.zeros(3)})


def test_unreachable_rank_fails_group(network):
    network.mark_down(3)
    with pytest.raises(GroupFailureError):
        network.allreduce_avg(network.world_group(), {rank: np.zeros(1) for rank in range(4)})
    # node 0 is still healthy
    network.allreduce_avg(network.node_group(0), {0: np.zeros(1), 1: np.ones(1)})


def test_ledger_snapshot_and_minus(network):
    before = network.ledger_snapshot()
    network.barrier(network.world_group())
    moved = network.ledger.minus(before)

    assert moved.total_bytes == 0
    assert moved.ops[CostClass.INTER_NODE] == 1
    assert moved.simulated_latency_us == pytest.approx(50.0)
    assert before.simulated_latency_us == 0.0


def test_communicator_allreduce_advances_clocks_to_latest_arrival(network, topology):
    clocks = {rank: SimClock(now_us=10.0 * rank) for rank in topology.ranks}

    def body(rank):
        communicator = Communicator(network, rank, clocks[rank])
        return communicator.allreduce_avg(network.world_group(), np.full(2, float(rank)))

    results = run_ranks(topology.ranks, body)
    assert all(np.allclose(result, 1.5) for result in results.values())
    # latest arrival is rank 3 at 30us, plus two inter-node phases
    assert all(clock.now_us == pytest.approx(30.0 + 100.0) for clock in clocks.values())


def test_communicator_broadcast_and_barrier(network, topology):
    def body(rank):
        communicator = Communicator(network, rank)
        value = communicator.broadcast(network.world_group(), 2,
                                       np.arange(3.0) if rank == 2 else None)
        communicator.barrier(network.world_group())
        return value, communicator.clock.now_us

    results = run_ranks(topology.ranks, body)
    assert all(np.array_equal(value, np.arange(3.0)) for value, _ in results.values())
    assert len({now for _, now in results.values()}) == 1


def test_rendezvous_timeout_and_abort():
    meeting = Rendezvous([0, 1], timeout_ms=50)
    with pytest.raises(RendezvousTimeoutError):
        meeting.arrive(0, None, lambda values: values)

    meeting.abort("peer failed")
    with pytest.raises(GroupFailureError):
        meeting.arrive(1, None, lambda values: values)


def test_rendezvous_rejects_foreign_rank():
    with pytest.raises(GroupFailureError):
        Rendezvous([0, 1]).arrive(5, None, lambda values: values)


def test_rendezvous_propagates_action_errors():
    meeting = Rendezvous([0])

    def failing(values):
        raise ValueError("bad reduction")

    with pytest.raises(ValueError):
        meeting.arrive(0, None, failing)
    assert meeting.generation == 1
