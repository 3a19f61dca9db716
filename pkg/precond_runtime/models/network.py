"""
Network models for the Shadow Preconditioner Runtime.

Defines communication cost classes, the rank/node TopologyGraph, collective
groups and the CostLedger that accumulates bytes and simulated latency.
"""

import threading
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from ..errors import InvalidLayoutError
from .. import config


class CostClass(Enum):
    """Per-edge communication cost classes."""
    INTRA_NODE = "IntraNode"
    INTER_NODE = "InterNode"

    @property
    def weight(self) -> int:
        """Get the relative cost of an edge of this class."""
        return config.INTRA_NODE_COST if self == CostClass.INTRA_NODE else config.INTER_NODE_COST


class TopologyGraph:
    """
    Rank membership and edge costs for a set of simulated nodes.

    Each node is declared as the list of ranks it hosts. The representative
    of a node is its minimum rank.
    """

    def __init__(self, node_ranks: Sequence[Sequence[int]]):
        """
        Initialize a TopologyGraph.

        Args:
            node_ranks (Sequence[Sequence[int]]): Ranks per node, in node order

        Raises:
            InvalidLayoutError: If a node is empty or a rank appears twice
        """
        if not node_ranks:
            raise InvalidLayoutError("topology must declare at least one node")

        node_of: Dict[int, int] = {}
        members: List[Tuple[int, ...]] = []
        for node_id, ranks in enumerate(node_ranks):
            ranks = tuple(int(rank) for rank in ranks)
            if not ranks:
                raise InvalidLayoutError(f"node {node_id} has no ranks")
            for rank in ranks:
                if rank < 0:
                    raise InvalidLayoutError(f"rank {rank} is negative")
                if rank in node_of:
                    raise InvalidLayoutError(f"rank {rank} is declared on more than one node")
                node_of[rank] = node_id
            members.append(tuple(sorted(ranks)))

        self._node_of = node_of
        self._members = members
        self._ranks = sorted(node_of)

    @classmethod
    def uniform(cls, nodes: int, ranks_per_node: int) -> 'TopologyGraph':
        """Build a graph of equal-sized nodes with consecutive rank numbers."""
        if nodes < 1 or ranks_per_node < 1:
            raise InvalidLayoutError(
                f"nodes and ranks_per_node must be positive, got {nodes} x {ranks_per_node}"
            )
        return cls([range(node * ranks_per_node, (node + 1) * ranks_per_node)
                    for node in range(nodes)])

    @property
    def ranks(self) -> List[int]:
        """Get all ranks in ascending order."""
        return list(self._ranks)

    @property
    def world_size(self) -> int:
        """Get the total number of ranks."""
        return len(self._ranks)

    @property
    def num_nodes(self) -> int:
        """Get the number of nodes."""
        return len(self._members)

    def node_of(self, rank: int) -> int:
        """Return the node hosting a rank."""
        return self._node_of[rank]

    def node_members(self, node_id: int) -> Tuple[int, ...]:
        """Return the ranks of one node in ascending order."""
        return self._members[node_id]

    @property
    def representatives(self) -> Dict[int, int]:
        """Get node id mapped to its representative (minimum) rank."""
        return {node_id: ranks[0] for node_id, ranks in enumerate(self._members)}

    def is_representative(self, rank: int) -> bool:
        """Check whether a rank represents its node."""
        return self._members[self._node_of[rank]][0] == rank

    def edge_cost(self, a: int, b: int) -> CostClass:
        """Return the cost class of the edge between two ranks."""
        return CostClass.INTRA_NODE if self._node_of[a] == self._node_of[b] else CostClass.INTER_NODE

    def node_sizes(self) -> Dict[int, int]:
        """Return node id mapped to its rank count."""
        return {node_id: len(ranks) for node_id, ranks in enumerate(self._members)}

    def to_dict(self) -> dict:
        """Convert the topology to a dictionary."""
        return {'nodes': [list(ranks) for ranks in self._members]}

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        return f"TopologyGraph(nodes={self.num_nodes}, ranks={self.world_size})"


class Group:
    """A set of distinct ranks that take part in one collective."""

    def __init__(self, members: Iterable[int], topology: TopologyGraph, name: str = ""):
        """
        Initialize a Group.

        Args:
            members (Iterable[int]): Participating ranks
            topology (TopologyGraph): Graph used to classify edges
            name (str): Label used in logs

        Raises:
            InvalidLayoutError: If the group is empty or has duplicates
        """
        members = [int(rank) for rank in members]
        if not members:
            raise InvalidLayoutError("group must have at least one member")
        if len(set(members)) != len(members):
            raise InvalidLayoutError(f"group members must be distinct, got {members}")
        for rank in members:
            if rank not in topology.ranks:
                raise InvalidLayoutError(f"rank {rank} is not part of the topology")
        self.members = tuple(sorted(members))
        self.topology = topology
        self.name = name or "group" + "-".join(str(rank) for rank in self.members)

    @property
    def size(self) -> int:
        """Get the number of members."""
        return len(self.members)

    @property
    def root(self) -> int:
        """Get the lowest member rank."""
        return self.members[0]

    def cost_class_of_pair(self, a: int, b: int) -> CostClass:
        """Return the cost class between two members."""
        return self.topology.edge_cost(a, b)

    def worst_cost_class(self) -> CostClass:
        """Return InterNode if any pair of members spans nodes."""
        nodes = {self.topology.node_of(rank) for rank in self.members}
        return CostClass.INTER_NODE if len(nodes) > 1 else CostClass.INTRA_NODE

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        return f"Group({self.name}, members={list(self.members)})"


class CostLedger:
    """
    Monotonic communication counters per cost class.

    Latency is held in integer nanoseconds so that totals do not depend on
    the order in which floating-point charges arrive.
    """

    def __init__(self):
        self.bytes: Dict[CostClass, int] = {cost: 0 for cost in CostClass}
        self.ops: Dict[CostClass, int] = {cost: 0 for cost in CostClass}
        self._latency_ns = 0
        self._lock = threading.Lock()

    def charge(self, cost_class: CostClass, nbytes: int, latency_us: float = 0.0) -> None:
        """Add bytes, one operation and latency to a cost class."""
        with self._lock:
            self.bytes[cost_class] += int(nbytes)
            self.ops[cost_class] += 1
            self._latency_ns += int(round(latency_us * 1000.0))

    @property
    def simulated_latency_us(self) -> float:
        """Get the accumulated simulated latency in microseconds."""
        return self._latency_ns / 1000.0

    @property
    def intra_bytes(self) -> int:
        """Get the IntraNode byte total."""
        return self.bytes[CostClass.INTRA_NODE]

    @property
    def inter_bytes(self) -> int:
        """Get the InterNode byte total."""
        return self.bytes[CostClass.INTER_NODE]

    @property
    def total_bytes(self) -> int:
        """Get the byte total across classes."""
        return self.intra_bytes + self.inter_bytes

    def snapshot(self) -> 'CostLedger':
        """Return an independent copy of the counters."""
        with self._lock:
            copy = CostLedger()
            copy.bytes = dict(self.bytes)
            copy.ops = dict(self.ops)
            copy._latency_ns = self._latency_ns
            return copy

    def minus(self, other: Optional['CostLedger']) -> 'CostLedger':
        """Return the difference between this ledger and an earlier snapshot."""
        diff = self.snapshot()
        if other is not None:
            for cost in CostClass:
                diff.bytes[cost] -= other.bytes[cost]
                diff.ops[cost] -= other.ops[cost]
            diff._latency_ns -= other._latency_ns
        return diff

    def to_dict(self) -> dict:
        """Convert the ledger to a dictionary."""
        return {
            'intra_bytes': self.intra_bytes,
            'inter_bytes': self.inter_bytes,
            'intra_ops': self.ops[CostClass.INTRA_NODE],
            'inter_ops': self.ops[CostClass.INTER_NODE],
            'simulated_latency_us': self.simulated_latency_us,
        }

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        return (f"CostLedger(intra={self.intra_bytes}B, inter={self.inter_bytes}B, "
                f"latency={self.simulated_latency_us:.1f}us)")
