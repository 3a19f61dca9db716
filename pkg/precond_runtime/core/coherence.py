"""
Bounded-staleness coherence of replicated preconditioner blocks.

Every rank holds its own copy of each block's installed tensors. A block is
left alone while it is within the coherence budget; once stale it is
averaged within each node, averaged across node representatives weighted by
node size, and broadcast back inside each node, so every rank ends with the
same bytes.
"""

import logging
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np

from ..errors import ConfigInvalidError
from ..models.coherence_records import CoherenceBudget, CoherenceRecord, SyncReport, SyncResult
from ..models.network import TopologyGraph
from ..models.run_config import RunConfig, TopologyConfig
from .simnet import Communicator, SimNetwork

logger = logging.getLogger(__name__)

# reader(rank, block_id, role) -> tensor or None; writer(rank, block_id, role, tensor)
ReplicaReader = Callable[[int, str, str], Optional[np.ndarray]]
ReplicaWriter = Callable[[int, str, str, np.ndarray], None]

ORTHONORMAL_ROLES = ('Q_L', 'Q_R')


def discover_topology(cfg) -> TopologyGraph:
    """
    Build the topology graph from a run or topology configuration.

    Args:
        cfg: RunConfig, TopologyConfig or a dict with 'nodes', 'ranks' and
            optionally 'layout'

    Raises:
        InvalidLayoutError: On an empty node or a duplicated rank
        ConfigInvalidError: If the configuration type is not understood
    """
    if isinstance(cfg, RunConfig):
        cfg = cfg.topology
    if isinstance(cfg, dict):
        cfg = TopologyConfig.from_dict(cfg)
    if not isinstance(cfg, TopologyConfig):
        raise ConfigInvalidError(f"cannot derive a topology from {type(cfg).__name__}")
    graph = cfg.build()
    logger.debug(f"Discovered {graph!r} with representatives {graph.representatives}")
    return graph


class CoherenceRegistry:
    """Per-rank version and last-sync bookkeeping of replicated blocks."""

    def __init__(self, block_ids: Iterable[str] = ()):
        self._records: Dict[str, CoherenceRecord] = {}
        for block_id in block_ids:
            self.track(block_id)

    def track(self, block_id: str) -> CoherenceRecord:
        """Start tracking a block (idempotent)."""
        if block_id not in self._records:
            self._records[block_id] = CoherenceRecord(block_id)
        return self._records[block_id]

    def record(self, block_id: str) -> CoherenceRecord:
        """Return the record of a tracked block."""
        return self._records[block_id]

    def block_ids(self) -> List[str]:
        """Return tracked block ids in sorted order."""
        return sorted(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def to_dict(self) -> dict:
        """Convert the registry to a dictionary."""
        return {block_id: record.to_dict() for block_id, record in sorted(self._records.items())}


def select_stale(registry: CoherenceRegistry, step: int, budget: CoherenceBudget) -> List[str]:
    """Return the blocks with step - last_sync_step > B, in block order."""
    if budget.disabled:
        return []
    return [block_id for block_id in registry.block_ids()
            if step - registry.record(block_id).last_sync_step > budget.B]


def _orthonormalize(q: np.ndarray) -> np.ndarray:
    """Nearest-basis repair of an averaged rotation (QR with positive diagonal)."""
    basis, triangle = np.linalg.qr(q)
    signs = np.sign(np.diag(triangle))
    signs[signs == 0] = 1.0
    return basis * signs


class CoherenceEngine:
    """
    Runs coherence ticks over all ranks' replicas.

    The engine does not own any tensors: a reader fetches a rank's replica
    and a writer republishes the synchronized value on that rank.
    """

    def __init__(self, network: SimNetwork, registries: Dict[int, CoherenceRegistry],
                 budget: CoherenceBudget, reader: ReplicaReader, writer: ReplicaWriter,
                 roles: Sequence[str] = ('inv_L', 'inv_R')):
        """
        Initialize a CoherenceEngine.

        Args:
            network (SimNetwork): Collective substrate and ledger
            registries (Dict[int, CoherenceRegistry]): One registry per rank
            budget (CoherenceBudget): B
            reader (ReplicaReader): Replica access
            writer (ReplicaWriter): Replica update
            roles (Sequence[str]): Tensor roles synchronized per block
        """
        self.network = network
        self.topology = network.topology
        missing = set(self.topology.ranks) - set(registries)
        if missing:
            raise ConfigInvalidError(f"no coherence registry for ranks {sorted(missing)}")
        self.registries = registries
        self.budget = budget
        self.reader = reader
        self.writer = writer
        self.roles = tuple(roles)
        self.reports: List[SyncReport] = []
        self.logger = logging.getLogger(__name__)

    @property
    def leader_registry(self) -> CoherenceRegistry:
        """Get the registry of the lowest rank."""
        return self.registries[self.topology.ranks[0]]

    def hierarchical_average(self, replicas: Dict[int, np.ndarray]) -> Dict[int, np.ndarray]:
        """
        Average replicas in three phases and return each rank's result.

        Node-local mean with equal weights, then a mean over representatives
        weighted by node size, then a broadcast from each representative to
        its node.

        Raises:
            GroupFailureError: If a rank is unreachable
        """
        node_means = {}
        for node_id in range(self.topology.num_nodes):
            group = self.network.node_group(node_id)
            local = self.network.allreduce_avg(group, {rank: replicas[rank] for rank in group.members})
            node_means[node_id] = local[group.root]

        representatives = self.topology.representatives
        reps_group = self.network.representatives_group()
        sizes = self.topology.node_sizes()
        merged = self.network.allreduce_avg(
            reps_group,
            {representatives[node_id]: node_means[node_id] for node_id in node_means},
            {representatives[node_id]: float(sizes[node_id]) for node_id in node_means})

        results = {}
        for node_id in range(self.topology.num_nodes):
            group = self.network.node_group(node_id)
            root = representatives[node_id]
            results.update(self.network.broadcast(group, root, merged[root]))
        return results

    def hierarchical_sync(self, block_id: str, step: int) -> Optional[SyncResult]:
        """
        Synchronize every role of a block across all ranks.

        Returns:
            Optional[SyncResult]: None if some rank has no replica yet

        Raises:
            GroupFailureError: If a rank is unreachable
        """
        ranks = self.topology.ranks
        replicas_by_role = {}
        for role in self.roles:
            replicas = {rank: self.reader(rank, block_id, role) for rank in ranks}
            if any(replica is None for replica in replicas.values()):
                return None
            replicas_by_role[role] = replicas

        before = self.network.ledger_snapshot()
        for role, replicas in replicas_by_role.items():
            synced = self.hierarchical_average(replicas)
            if role in ORTHONORMAL_ROLES:
                # one repair computed once, so replicas stay identical
                repaired = _orthonormalize(synced[ranks[0]])
                synced = {rank: repaired.copy() for rank in ranks}
            for rank in ranks:
                self.writer(rank, block_id, role, synced[rank])
        moved = self.network.ledger.minus(before)

        version = max(self.registries[rank].record(block_id).version for rank in ranks) + 1
        for rank in ranks:
            record = self.registries[rank].record(block_id)
            record.version = version
            record.last_sync_step = step
        return SyncResult(block_id, step, moved.intra_bytes, moved.inter_bytes, version)

    def coherence_tick(self, step: int) -> SyncReport:
        """
        Synchronize the blocks that would exceed the budget at the next step.

        Runs at StepEnd of `step`; a block is selected when (step + 1) minus
        its last sync exceeds B, and is recorded as synced at `step`.
        """
        registry = self.leader_registry
        report = SyncReport(step, len(registry))
        stale = set(select_stale(registry, step + 1, self.budget))
        for block_id in registry.block_ids():
            result = self.hierarchical_sync(block_id, step) if block_id in stale else None
            if result is None:
                report.add_hit(block_id)
            else:
                report.add_sync(result)
        if report.synced:
            self.logger.debug(f"step {step}: synced {len(report.synced)} blocks, "
                              f"{report.intra_bytes}B intra / {report.inter_bytes}B inter")
        self.reports.append(report)
        return report

    def collective_tick(self, communicator: Communicator, step: int) -> SyncReport:
        """
        Run coherence_tick as a world collective from a rank thread.

        The last rank to arrive runs the tick for everyone; all ranks then
        advance to the tick's completion time.
        """
        world = self.network.world_group()

        def action(values):
            before = self.network.ledger_snapshot()
            report = self.coherence_tick(step)
            results = {rank: report for rank in values}
            results['__latency__'] = self.network.ledger.minus(before).simulated_latency_us
            return results

        return communicator.run_collective(world, "coherence", None, action)

    def trace_events(self) -> List[dict]:
        """Return the coherence trace records of every tick so far."""
        events = []
        for report in self.reports:
            events.extend(report.trace_events())
        return events
