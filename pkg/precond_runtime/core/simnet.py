"""
In-process network simulation.

Simulated ranks are threads of one process. Collectives meet at a
generation-counted rendezvous; the last member to arrive computes the result
for everyone, charges the CostLedger and advances the members' simulated
clocks to the common completion time.
"""

import logging
import math
import threading
import time
from typing import Callable, Dict, Hashable, Iterable, Optional

import numpy as np

from ..errors import GroupFailureError, RendezvousTimeoutError, ShapeMismatchError
from ..models.network import CostClass, CostLedger, Group, TopologyGraph
from .. import config

logger = logging.getLogger(__name__)


class SimClock:
    """Simulated microsecond clock of one rank."""

    def __init__(self, now_us: float = 0.0):
        self.now_us = float(now_us)

    def advance(self, us: float) -> float:
        """Move the clock forward by us and return the new time."""
        if us < 0:
            raise ValueError(f"cannot advance a clock by {us} us")
        self.now_us += us
        return self.now_us

    def advance_to(self, t_us: float) -> float:
        """Move the clock to t_us if that is later; return the wait."""
        waited = max(0.0, t_us - self.now_us)
        self.now_us += waited
        return waited

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        return f"SimClock({self.now_us:.3f}us)"


class Rendezvous:
    """
    Generation-counted meeting point for a fixed set of ranks.

    Each arrival deposits a value; the last arrival runs the action over all
    values and every participant receives its share of the result.
    """

    def __init__(self, members: Iterable[int], timeout_ms: int = config.DEFAULT_RENDEZVOUS_TIMEOUT_MS,
                 name: str = "rendezvous"):
        self.members = frozenset(members)
        self.timeout_s = timeout_ms / 1000.0
        self.name = name
        self._cond = threading.Condition()
        self._generation = 0
        self._values: Dict[int, object] = {}
        self._outcome = None
        self._aborted: Optional[str] = None

    @property
    def generation(self) -> int:
        """Get the number of completed meetings."""
        return self._generation

    def abort(self, reason: str) -> None:
        """Fail current and future arrivals with GroupFailureError."""
        with self._cond:
            self._aborted = reason
            self._cond.notify_all()

    def arrive(self, rank: int, value, action: Callable[[Dict[int, object]], Dict[int, object]]):
        """
        Deposit a value and wait for the other members.

        Returns:
            The result the action assigned to this rank

        Raises:
            RendezvousTimeoutError: If the others do not arrive in time
            GroupFailureError: If the rendezvous was aborted or rank is foreign
        """
        with self._cond:
            if self._aborted is not None:
                raise GroupFailureError(f"{self.name}: aborted ({self._aborted})")
            if rank not in self.members:
                raise GroupFailureError(f"{self.name}: rank {rank} is not a member")
            if rank in self._values:
                raise GroupFailureError(f"{self.name}: rank {rank} arrived twice")

            generation = self._generation
            self._values[rank] = value
            if len(self._values) == len(self.members):
                values, self._values = self._values, {}
                try:
                    self._outcome = (action(values), None)
                except Exception as e:
                    self._outcome = (None, e)
                self._generation += 1
                self._cond.notify_all()
            else:
                deadline = time.monotonic() + self.timeout_s
                while self._generation == generation and self._aborted is None:
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        self._values.pop(rank, None)
                        missing = sorted(self.members - set(self._values) - {rank})
                        raise RendezvousTimeoutError(
                            f"{self.name}: ranks {missing} did not arrive within {self.timeout_s * 1000:.0f} ms"
                        )
                    self._cond.wait(timeout=remaining)
                if self._generation == generation:
                    raise GroupFailureError(f"{self.name}: aborted ({self._aborted})")

            results, error = self._outcome
            if error is not None:
                raise error
            return results[rank]


class SimNetwork:
    """
    Collectives over groups of a TopologyGraph with per-class cost accounting.

    The batch operations take every member's operand at once and are what the
    rendezvous leader calls; Communicator wraps them for per-rank threads.
    """

    def __init__(self, topology: TopologyGraph, intra_latency_us: float = config.DEFAULT_INTRA_LATENCY_US,
                 inter_latency_us: float = config.DEFAULT_INTER_LATENCY_US,
                 intra_bw: float = config.DEFAULT_INTRA_BW, inter_bw: float = config.DEFAULT_INTER_BW,
                 rendezvous_timeout_ms: int = config.DEFAULT_RENDEZVOUS_TIMEOUT_MS,
                 charging_model: str = config.DEFAULT_CHARGING_MODEL):
        self.topology = topology
        self.latency_us = {CostClass.INTRA_NODE: float(intra_latency_us),
                           CostClass.INTER_NODE: float(inter_latency_us)}
        self.bandwidth = {CostClass.INTRA_NODE: float(intra_bw), CostClass.INTER_NODE: float(inter_bw)}
        self.rendezvous_timeout_ms = rendezvous_timeout_ms
        if charging_model not in config.CHARGING_MODELS:
            raise ValueError(f"unknown charging model: {charging_model}")
        self.charging_model = charging_model
        self.ledger = CostLedger()
        self._rendezvous: Dict[Hashable, Rendezvous] = {}
        self._down: set = set()
        self._lock = threading.Lock()

    @classmethod
    def from_config(cls, topology: TopologyGraph, simnet_config) -> 'SimNetwork':
        """Build a network from a SimnetConfig."""
        return cls(topology, simnet_config.intra_latency_us, simnet_config.inter_latency_us,
                   simnet_config.intra_bw, simnet_config.inter_bw,
                   simnet_config.rendezvous_timeout_ms, simnet_config.charging_model)

    # Groups and failure

    def group(self, members: Iterable[int], name: str = "") -> Group:
        """Return a Group over this topology."""
        return Group(members, self.topology, name)

    def world_group(self) -> Group:
        """Return the group of all ranks."""
        return Group(self.topology.ranks, self.topology, "world")

    def node_group(self, node_id: int) -> Group:
        """Return the ranks of one node as a group."""
        return Group(self.topology.node_members(node_id), self.topology, f"node{node_id}")

    def representatives_group(self) -> Group:
        """Return the group of node representatives."""
        return Group(self.topology.representatives.values(), self.topology, "representatives")

    def mark_down(self, rank: int) -> None:
        """Make a rank unreachable; collectives involving it fail."""
        with self._lock:
            self._down.add(rank)
        logger.warning(f"rank {rank} marked unreachable")

    def _check_reachable(self, group: Group) -> None:
        down = self._down.intersection(group.members)
        if down:
            raise GroupFailureError(f"{group.name}: ranks {sorted(down)} are unreachable")

    def rendezvous(self, group: Group, tag: str = "") -> Rendezvous:
        """Return the shared rendezvous for a group and tag."""
        key = (group.members, tag)
        with self._lock:
            if key not in self._rendezvous:
                self._rendezvous[key] = Rendezvous(group.members, self.rendezvous_timeout_ms,
                                                   f"{group.name}{':' + tag if tag else ''}")
            return self._rendezvous[key]

    def abort_all(self, reason: str) -> None:
        """Abort every rendezvous so no rank waits on a failed peer."""
        with self._lock:
            meeting_points = list(self._rendezvous.values())
        for meeting in meeting_points:
            meeting.abort(reason)

    # Charging

    def _phase_latency_us(self, cost_class: CostClass, nbytes: int) -> float:
        bandwidth = self.bandwidth[cost_class]
        transfer = nbytes / bandwidth * 1e6 if 0 < bandwidth < math.inf else 0.0
        return self.latency_us[cost_class] + transfer

    def _edge_bytes(self, group: Group, nbytes: int, phases: int, ring: bool,
                    root: Optional[int] = None) -> Dict[CostClass, int]:
        """Bytes per cost class moved by one collective."""
        root = group.root if root is None else root
        per_class = {cost: 0 for cost in CostClass}
        members = group.members
        if group.size < 2:
            return per_class
        if ring:
            edges = [(members[i], members[(i + 1) % group.size]) for i in range(group.size)]
            share = 2.0 * nbytes * (group.size - 1) / group.size
            counts = {cost: 0 for cost in CostClass}
            for a, b in edges:
                counts[group.cost_class_of_pair(a, b)] += 1
            for cost, count in counts.items():
                per_class[cost] = int(round(count * share))
        else:
            for member in members:
                if member != root:
                    per_class[group.cost_class_of_pair(root, member)] += phases * nbytes
        return per_class

    def _charge(self, group: Group, nbytes: int, phases: int, ring: bool = False,
                root: Optional[int] = None) -> float:
        """Charge a collective to the ledger and return its simulated latency."""
        if group.size < 2:
            return 0.0
        per_class = self._edge_bytes(group, nbytes, phases, ring, root)
        worst = group.worst_cost_class()
        latency = phases * self._phase_latency_us(worst, nbytes)
        for cost in CostClass:
            if per_class[cost] or cost == worst:
                self.ledger.charge(cost, per_class[cost], latency if cost == worst else 0.0)
        return latency

    def expected_bytes(self, group: Group, nbytes: int, op: str = "allreduce") -> Dict[CostClass, int]:
        """Return the bytes per class the charging model assigns to an op."""
        phases = 2 if op == "allreduce" else 1
        ring = self.charging_model == "ring" and op == "allreduce"
        return self._edge_bytes(group, nbytes, phases, ring)

    # Batch collectives

    @staticmethod
    def _check_operands(group: Group, tensors: Dict[int, np.ndarray]) -> None:
        if set(tensors) != set(group.members):
            raise GroupFailureError(
                f"{group.name}: operands from {sorted(tensors)} but members are {list(group.members)}"
            )
        shapes = {np.shape(tensor) for tensor in tensors.values()}
        if len(shapes) != 1:
            raise ShapeMismatchError(f"{group.name}: operand shapes differ: {sorted(shapes)}")

    def allreduce_avg(self, group: Group, tensors: Dict[int, np.ndarray],
                      weights: Optional[Dict[int, float]] = None) -> Dict[int, np.ndarray]:
        """
        Weighted mean of the members' tensors, delivered to every member.

        Terms are summed in ascending rank order. A singleton group returns
        an exact copy and moves no bytes.

        Returns:
            Dict[int, np.ndarray]: Independent result per member
        """
        self._check_reachable(group)
        self._check_operands(group, tensors)
        if group.size == 1:
            return {group.root: np.array(tensors[group.root], copy=True)}

        weights = weights or {rank: 1.0 for rank in group.members}
        total_weight = 0.0
        accumulator = None
        for rank in group.members:
            term = weights[rank] * np.asarray(tensors[rank], dtype=np.float64)
            accumulator = term if accumulator is None else accumulator + term
            total_weight += weights[rank]
        mean = accumulator / total_weight

        nbytes = int(np.asarray(tensors[group.root]).nbytes)
        latency = self._charge(group, nbytes, phases=2, ring=self.charging_model == "ring")
        logger.debug(f"{group.name}: allreduce of {nbytes} bytes, {latency:.2f}us")
        return {rank: mean.copy() for rank in group.members}

    def broadcast(self, group: Group, root: int, tensor: np.ndarray) -> Dict[int, np.ndarray]:
        """Copy root's tensor to every member."""
        self._check_reachable(group)
        if root not in group.members:
            raise GroupFailureError(f"{group.name}: broadcast root {root} is not a member")
        source = np.asarray(tensor)
        self._charge(group, int(source.nbytes), phases=1, root=root)
        return {rank: np.array(source, copy=True) for rank in group.members}

    def barrier(self, group: Group) -> float:
        """Charge a zero-byte synchronization and return its latency."""
        self._check_reachable(group)
        if group.size < 2:
            return 0.0
        worst = group.worst_cost_class()
        latency = self._phase_latency_us(worst, 0)
        self.ledger.charge(worst, 0, latency)
        return latency

    def collective_latency_us(self, group: Group, nbytes: int, op: str = "allreduce") -> float:
        """Return the simulated latency of one op without charging it."""
        if group.size < 2:
            return 0.0
        phases = 2 if op == "allreduce" else 1
        return phases * self._phase_latency_us(group.worst_cost_class(), nbytes)

    def ledger_snapshot(self) -> CostLedger:
        """Return an independent copy of the ledger."""
        return self.ledger.snapshot()


def flat_ring_bytes(topology: TopologyGraph, nbytes: int) -> Dict[CostClass, int]:
    """Bytes per class of one ring allreduce over all ranks in rank order."""
    network = SimNetwork(topology, charging_model="ring")
    return network.expected_bytes(network.world_group(), nbytes, "allreduce")


class Communicator:
    """
    One rank's handle on the network.

    Each call blocks until every group member has made the same call, then
    returns this rank's result and moves the rank's clock to the collective's
    completion time (latest arrival plus simulated latency).
    """

    def __init__(self, network: SimNetwork, rank: int, clock: Optional[SimClock] = None):
        self.network = network
        self.rank = rank
        self.clock = clock or SimClock()
        self.logger = logging.getLogger(__name__)

    def _meet(self, group: Group, tag: str, operand, compute: Callable[[Dict[int, object]], Dict[int, object]]):
        """Run compute once over all operands and return (result, wait, latency)."""
        def action(values):
            results = compute({rank: value[0] for rank, value in values.items()})
            start = max(value[1] for value in values.values())
            latency = results.pop('__latency__', 0.0)
            return {rank: (results[rank], start + latency, latency) for rank in values}

        result, done_us, latency = self.network.rendezvous(group, tag).arrive(
            self.rank, (operand, self.clock.now_us), action)
        self.clock.advance_to(done_us)
        return result, latency

    def allreduce_avg(self, group: Group, tensor: np.ndarray, weight: float = 1.0) -> np.ndarray:
        """Weighted mean of the members' tensors."""
        def compute(operands):
            tensors = {rank: operand[0] for rank, operand in operands.items()}
            weights = {rank: operand[1] for rank, operand in operands.items()}
            results = self.network.allreduce_avg(group, tensors, weights)
            results['__latency__'] = self.network.collective_latency_us(
                group, int(np.asarray(tensor).nbytes), "allreduce")
            return results

        result, _ = self._meet(group, "allreduce", (tensor, float(weight)), compute)
        return result

    def broadcast(self, group: Group, root: int, tensor: Optional[np.ndarray]) -> np.ndarray:
        """Receive root's tensor; non-root members may pass None."""
        def compute(operands):
            source = operands[root]
            results = self.network.broadcast(group, root, source)
            results['__latency__'] = self.network.collective_latency_us(
                group, int(np.asarray(source).nbytes), "broadcast")
            return results

        result, _ = self._meet(group, "broadcast", tensor, compute)
        return result

    def barrier(self, group: Group) -> None:
        """Wait for every member."""
        def compute(operands):
            latency = self.network.barrier(group)
            results = {rank: None for rank in operands}
            results['__latency__'] = latency
            return results

        self._meet(group, "barrier", None, compute)

    def run_collective(self, group: Group, tag: str, value,
                       action: Callable[[Dict[int, object]], Dict[int, object]]):
        """
        Rendezvous with a custom leader action.

        The action receives every member's value, returns a result per rank
        and may add a '__latency__' entry charged to all members' clocks.
        """
        result, _ = self._meet(group, tag, value, action)
        return result
