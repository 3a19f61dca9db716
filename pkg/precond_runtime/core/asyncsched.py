"""
Shadow refresh pipeline.

A ShadowScheduler belongs to one training rank. It snapshots factors at
refresh steps and hands them to a worker pool, drains and prefetches tier
transfers from hook events, installs finished refreshes at StepEnd (or at
the barrier that waited for them) and enforces the staleness bound.

Timing is either simulated (a virtual worker pool charged on the rank's
SimClock, bit-reproducible) or wall-clock (measured with perf_counter).
The numerical work runs on real threads in both modes.
"""

import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..errors import StaleUninitializedError, WorkerPoolDownError
from ..models.blocks import PrecondBlock
from ..models.jobs import AsyncJob, FreshnessRecord, HookEvent, HookKind, JobStatus, StalenessPolicy
from ..models.matrices import EigenPair, Layout, SymMatrix
from ..models.optimizer_config import Method, OptimizerConfig
from ..models.store import TierTag
from .precond import compute_refresh, install_refresh, take_snapshot
from .simnet import SimClock
from .tierstore import TierStore
from .. import config

logger = logging.getLogger(__name__)

MIB = float(1 << 20)


def consumed_roles(method: Method) -> Sequence[str]:
    """Return the store roles a method reads when preconditioning."""
    return ('Q_L', 'Q_R') if method == Method.SOAP else ('inv_L', 'inv_R')


def store_key(block_id: str, role: str) -> tuple:
    """Return the tier-store key of a block tensor."""
    return (block_id, role)


class SimulatedPool:
    """
    Virtual worker pool on a simulated timeline.

    Each job goes to the worker that frees up first (lowest index on ties)
    and occupies it for its cost.
    """

    def __init__(self, workers: int):
        if workers < 1:
            raise ValueError(f"a pool needs at least one worker, got {workers}")
        self._free_at = [0.0] * workers
        self._busy = [0.0] * workers

    @property
    def workers(self) -> int:
        """Get the number of virtual workers."""
        return len(self._free_at)

    def schedule(self, now_us: float, cost_us: float):
        """
        Place a job and return (worker, start_us, done_us).
        """
        worker = min(range(len(self._free_at)), key=lambda index: (self._free_at[index], index))
        start = max(now_us, self._free_at[worker])
        done = start + cost_us
        self._free_at[worker] = done
        self._busy[worker] += cost_us
        return worker, start, done

    def activity(self, horizon_us: float):
        """Return (active_us, idle_us) summed over workers up to horizon_us."""
        active = sum(self._busy)
        idle = max(0.0, self.workers * horizon_us - active)
        return active, idle


class ShadowScheduler:
    """
    Per-rank refresh scheduler for a set of preconditioner blocks.

    The training thread calls maybe_dispatch, staleness_barrier and consume
    for each block every step, and on_hook at ForwardPost, BackwardPre and
    StepEnd. Installed state is only mutated on the training thread.
    """

    def __init__(self, blocks: Dict[str, PrecondBlock], cfg: OptimizerConfig, policy: StalenessPolicy,
                 store: TierStore, rank: int = 0, clock: Optional[SimClock] = None,
                 executor: Optional[ThreadPoolExecutor] = None,
                 module_blocks: Optional[Dict[int, List[str]]] = None,
                 placement: Optional[Dict[str, str]] = None,
                 timing: str = config.DEFAULT_TIMING,
                 pool_size: int = config.DEFAULT_POOL_SIZE,
                 job_delay_steps: float = config.DEFAULT_JOB_DELAY_STEPS,
                 step_compute_us: float = config.DEFAULT_STEP_COMPUTE_US,
                 install_us_per_mib: float = config.DEFAULT_INSTALL_US_PER_MIB,
                 hook_drain_budget: int = config.HOOK_DRAIN_BUDGET,
                 visible_mode: str = "prefetch", paging_mode: str = "none"):
        """
        Initialize a ShadowScheduler.

        Args:
            blocks (Dict[str, PrecondBlock]): Blocks owned by this rank, by id
            cfg (OptimizerConfig): Optimizer settings (method, damping, solver)
            policy (StalenessPolicy): S and pf
            store (TierStore): This rank's tier store
            rank (int): Rank id used in trace events
            clock (SimClock, optional): Rank clock; required for simulated timing
            executor (ThreadPoolExecutor, optional): Shared worker pool; owned if None
            module_blocks (Dict[int, List[str]], optional): Blocks per model module
            placement (Dict[str, str], optional): Tier per tensor role
            timing (str): 'simulated' or 'wall'
            pool_size (int): Worker count, 0 for automatic
            job_delay_steps (float): Injected refresh cost in step-times
            step_compute_us (float): This rank's compute time per step
            install_us_per_mib (float): Simulated install cost
            hook_drain_budget (int): Max transfers installed per ForwardPost
            visible_mode (str): 'prefetch' or 'explicit'
            paging_mode (str): 'none' or 'backward_jit'
        """
        self.blocks = blocks
        self.cfg = cfg
        self.policy = policy
        self.store = store
        self.rank = rank
        self.clock = clock or SimClock()
        self.timing = timing
        self.job_delay_steps = float(job_delay_steps)
        self.step_compute_us = float(step_compute_us)
        self.install_us_per_mib = float(install_us_per_mib)
        self.hook_drain_budget = hook_drain_budget
        self.visible_mode = visible_mode
        self.paging_mode = paging_mode
        self.roles = consumed_roles(cfg.method)
        self.module_blocks = module_blocks or {0: sorted(blocks)}
        table = placement or config.get_placement()
        self.placement = {role: TierTag.parse(tier) for role, tier in table.items()}
        self.logger = logging.getLogger(__name__)

        workers = pool_size or max(1, len(blocks))
        self.sim_pool = SimulatedPool(workers)
        self._owns_executor = executor is None
        if executor is None:
            executor = ThreadPoolExecutor(max_workers=max(1, min(workers, os.cpu_count() or 1)),
                                          thread_name_prefix=f"refresh-r{rank}")
        self.executor = executor

        self.freshness = {block_id: FreshnessRecord(block_id) for block_id in blocks}
        self.pending: Dict[str, AsyncJob] = {}
        self.events: List[dict] = []
        self._seq = 0
        self._job_counter = 0
        self._finished: set = set()
        self._wall_origin = time.perf_counter()
        self._down = False
        self._step_install_us = 0.0
        self._step_barrier_us = 0.0
        self.counters = {
            'dispatched': 0, 'completed': 0, 'installed': 0, 'coalesced': 0, 'failed': 0,
            'barrier_waits': 0, 'prefetches': 0, 'drained': 0, 'republished': 0,
        }
        self.wait_us_total = 0.0
        self.install_us_total = 0.0
        self._wall_busy_us = 0.0
        self._busy_lock = threading.Lock()

        for block in blocks.values():
            self._publish_factors(block)

    # Trace

    def _now_us(self) -> float:
        if self.timing == "wall":
            return (time.perf_counter() - self._wall_origin) * 1e6
        return self.clock.now_us

    def _emit(self, event: str, step: int, block_id: Optional[str] = None,
              version: Optional[int] = None, t_micros: Optional[float] = None, **extra) -> None:
        record = {
            'step': step,
            'worker': self.rank,
            'seq': self._seq,
            'event': event,
            'block_id': block_id,
            'version': version,
            't_micros': round(self._now_us() if t_micros is None else t_micros, 3),
        }
        record.update(extra)
        self._seq += 1
        self.events.append(record)

    # Store helpers

    def _publish_factors(self, block: PrecondBlock) -> None:
        """Keep the block's factors current in the store."""
        for role, matrix in (('L', block.L), ('R', block.R)):
            tier = self.placement.get(role, TierTag.HOT)
            self.store.write_back(store_key(block.block_id, role), matrix.to_array(), tier=tier)
            block.residency[role] = self.store.tier_of(store_key(block.block_id, role))

    def _charge_install(self, nbytes: int) -> float:
        cost = nbytes / MIB * self.install_us_per_mib
        if self.timing == "simulated":
            self.clock.advance(cost)
        self._step_install_us += cost
        self.install_us_total += cost
        return cost

    # Dispatch

    def _job_cost_us(self) -> float:
        return self.job_delay_steps * self.step_compute_us

    def _run_job(self, job: AsyncJob) -> AsyncJob:
        """Worker thread body: refresh from the snapshot."""
        started = time.perf_counter()
        try:
            job.advance(JobStatus.RUNNING)
            job.start_checksum = job.snapshot.compute_checksum()
            if self.timing == "wall" and self._job_cost_us() > 0:
                time.sleep(self._job_cost_us() * 1e-6)
            job.result = compute_refresh(job.snapshot, self.cfg)
            job.advance(JobStatus.DONE)
        except Exception as e:
            job.error = e
            job.advance(JobStatus.FAILED)
        if self.timing == "wall":
            elapsed = (time.perf_counter() - started) * 1e6
            job.busy_us = elapsed
            with self._busy_lock:
                self._wall_busy_us += elapsed
        return job

    def maybe_dispatch(self, block: PrecondBlock, step: int) -> Optional[AsyncJob]:
        """
        Dispatch a refresh of block if step is a refresh step and none is pending.

        The factors are copied before this returns. A due refresh for a block
        with a job outstanding is coalesced into that job.

        Raises:
            WorkerPoolDownError: If the scheduler has been shut down
        """
        if self._down:
            raise WorkerPoolDownError(f"rank {self.rank}: scheduler is shut down")
        if not self.policy.dispatch_due(step):
            return None
        if block.block_id in self.pending:
            self.counters['coalesced'] += 1
            self.logger.debug(f"rank {self.rank}: refresh of {block.block_id} at step {step} coalesced")
            return None

        self._publish_factors(block)
        self._job_counter += 1
        job = AsyncJob(self._job_counter, block.block_id, take_snapshot(block, step), step)
        job.dispatch_us = self.clock.now_us
        if self.timing == "simulated":
            _, job.start_us, job.done_us = self.sim_pool.schedule(self.clock.now_us, self._job_cost_us())
            job.busy_us = self._job_cost_us()
        try:
            job.future = self.executor.submit(self._run_job, job)
        except RuntimeError as e:
            self._down = True
            raise WorkerPoolDownError(f"rank {self.rank}: worker pool rejected job: {e}")

        self.pending[block.block_id] = job
        self.freshness[block.block_id].dispatch_step_of_pending = step
        self.counters['dispatched'] += 1
        self._emit('dispatch', step, block.block_id, block.version, snapshot_step=step)
        return job

    # Completion and install

    def _is_complete(self, job: AsyncJob) -> bool:
        if self.timing == "simulated":
            return job.done_us <= self.clock.now_us
        return job.future.done()

    def _await(self, job: AsyncJob) -> None:
        """Block until the job's real computation has finished."""
        job.future.result()
        if job.error is not None:
            self.counters['failed'] += 1
            self._down = True
            raise WorkerPoolDownError(f"refresh of {job.block_id} failed: {job.error}") from job.error

    def _record_finished(self, job: AsyncJob, step: int) -> None:
        """Count a finished job and trace its start and end once."""
        if job.job_id in self._finished:
            return
        self._finished.add(job.job_id)
        self.counters['completed'] += 1
        version = self.blocks[job.block_id].version
        self._emit('job_start', step, job.block_id, version,
                   t_micros=job.start_us if self.timing == "simulated" else None)
        self._emit('job_done', step, job.block_id, version,
                   t_micros=job.done_us if self.timing == "simulated" else None)

    def note_finished(self, step: int) -> int:
        """
        Record pending jobs that finished since the last check.

        Simulated jobs finish when the clock passes their done time, wall
        jobs when their pool future is done. Failed jobs are left to the
        barrier or install that awaits them.

        Returns:
            int: Number of jobs newly recorded
        """
        noted = 0
        for block_id in sorted(self.pending):
            job = self.pending[block_id]
            if job.job_id in self._finished or not self._is_complete(job):
                continue
            if job.status == JobStatus.FAILED:
                continue
            self._record_finished(job, step)
            noted += 1
        return noted

    def install(self, job: AsyncJob, step: int) -> int:
        """
        Install a finished job: swap the tensors in the store and bump the version.

        Returns:
            int: The block's new version
        """
        self._await(job)
        self._record_finished(job, step)
        block = self.blocks[job.block_id]
        result = job.result

        install_refresh(block, result, step)
        nbytes = 0
        for role, tensor in result.tensors().items():
            key = store_key(block.block_id, role)
            self.store.write_back(key, tensor, tier=self.placement[role])
            nbytes += tensor.nbytes
            if self.paging_mode == "backward_jit":
                self.store.flush(key)
                self.store.reclaim(key)
            elif self.visible_mode == "explicit":
                self.store.promote(key, TierTag.HOT)
            elif self.placement[role] != TierTag.HOT:
                if self.store.prefetch(key, TierTag.HOT) is not None:
                    self.counters['prefetches'] += 1
                    self._emit('prefetch', step, block.block_id, block.version, role=role)
            block.residency[role] = self.store.tier_of(key)

        self._charge_install(nbytes)
        if self.visible_mode == "explicit":
            self._charge_install(nbytes)

        self.freshness[block.block_id].record_install(block.version, step, result.snapshot_step)
        job.advance(JobStatus.INSTALLED)
        del self.pending[block.block_id]
        self._finished.discard(job.job_id)
        self.counters['installed'] += 1
        self._emit('install', step, block.block_id, block.version, snapshot_step=result.snapshot_step)
        return block.version

    def collect_and_install(self, step: int) -> int:
        """Install every job that has completed; never waits on a running one."""
        installed = 0
        for block_id in sorted(self.pending):
            job = self.pending[block_id]
            if self._is_complete(job):
                self.install(job, step)
                installed += 1
        return installed

    # Hooks

    def on_hook(self, event: HookEvent) -> Dict[str, int]:
        """
        React to a training-loop hook.

        Every hook first records jobs that have finished. ForwardPost drains
        ready transfers (budgeted); BackwardPre prefetches the consumed
        tensors of the module's blocks; StepEnd installs completed jobs.

        Returns:
            Dict[str, int]: Counts of the actions taken
        """
        actions = {'drained': 0, 'prefetched': 0, 'installed': 0}
        self._emit('hook', event.step, hook=event.kind.value, module_id=event.module_id)
        self.note_finished(event.step)

        if event.kind == HookKind.FORWARD_POST:
            self.store.set_step(event.step)
            drained = self.store.drain_ready(self.hook_drain_budget)
            if drained:
                self.counters['drained'] += drained
                self._emit('drain', event.step, count=drained)
            actions['drained'] = drained
        elif event.kind == HookKind.BACKWARD_PRE:
            for block_id in self.module_blocks.get(event.module_id, []):
                block = self.blocks[block_id]
                for role in self.roles:
                    key = store_key(block_id, role)
                    if not self.store.contains(key):
                        continue
                    if self.store.prefetch(key, TierTag.HOT) is not None:
                        actions['prefetched'] += 1
                        self.counters['prefetches'] += 1
                        self._emit('prefetch', event.step, block_id, block.version, role=role)
        elif event.kind == HookKind.STEP_END:
            actions['installed'] = self.collect_and_install(event.step)
        return actions

    # Barrier and consumption

    def _must_wait(self, block: PrecondBlock, job: AsyncJob, step: int) -> bool:
        if self.policy.synchronous or block.version == 0:
            return True
        if step - job.dispatch_step > self.policy.threshold_steps:
            return True
        installed_age = step - self.freshness[block.block_id].installed_snapshot_step
        return installed_age > self.policy.max_consume_age

    def staleness_barrier(self, block: PrecondBlock, step: int) -> float:
        """
        Wait for the block's pending job if the staleness bound requires it.

        A job waited on here is installed before returning.

        Returns:
            float: Microseconds waited

        Raises:
            WorkerPoolDownError: If the awaited job failed
        """
        job = self.pending.get(block.block_id)
        if job is None or not self._must_wait(block, job, step):
            return 0.0

        self._emit('barrier_wait_begin', step, block.block_id, block.version,
                    age=step - job.dispatch_step)
        if self.timing == "simulated":
            waited = self.clock.advance_to(job.done_us)
            self._await(job)
        else:
            started = time.perf_counter()
            self._await(job)
            waited = (time.perf_counter() - started) * 1e6
        self._emit('barrier_wait_end', step, block.block_id, block.version, waited_us=round(waited, 3))
        self.counters['barrier_waits'] += 1
        self.wait_us_total += waited
        self._step_barrier_us += waited
        self.install(job, step)
        return waited

    def consume(self, block: PrecondBlock, step: int) -> Dict[str, np.ndarray]:
        """
        Read the installed preconditioner tensors of a block from the store.

        Raises:
            StaleUninitializedError: If nothing has been installed yet
        """
        if block.version == 0:
            raise StaleUninitializedError(f"block {block.block_id} consumed before its first install")
        tensors = {}
        for role in self.roles:
            tensor, tier = self.store.get(store_key(block.block_id, role))
            tensors[role] = tensor
            block.residency[role] = tier
        self._emit('consume', step, block.block_id, block.version,
                   snapshot_step=block.source_snapshot_step)
        return tensors

    def republish(self, block_id: str, role: str, tensor: np.ndarray) -> None:
        """Replace an installed tensor with a synchronized value."""
        block = self.blocks[block_id]
        tensor = np.array(tensor, dtype=np.float64, copy=True)
        if role in ('inv_L', 'inv_R'):
            setattr(block, role, SymMatrix(tensor.shape[0], tensor, Layout.FULL, validate=False))
        elif role in ('Q_L', 'Q_R'):
            side = 'eig_L' if role == 'Q_L' else 'eig_R'
            setattr(block, side, EigenPair(getattr(block, side).values.copy(), tensor))
        else:
            raise KeyError(role)
        key = store_key(block_id, role)
        self.store.write_back(key, tensor, tier=self.placement[role])
        block.residency[role] = self.store.tier_of(key)
        self.counters['republished'] += 1

    def read_installed(self, block_id: str, role: str) -> np.ndarray:
        """Return a copy of an installed tensor from the store."""
        tensor, _ = self.store.get(store_key(block_id, role))
        return np.array(tensor, copy=True)

    # Step accounting

    def take_step_timing(self):
        """Return and reset (barrier_wait_us, install_us) accumulated this step."""
        timing = (self._step_barrier_us, self._step_install_us)
        self._step_barrier_us = 0.0
        self._step_install_us = 0.0
        return timing

    def audit(self, step: int) -> List[str]:
        """Check freshness bookkeeping against the blocks."""
        errors = []
        for block_id, record in self.freshness.items():
            block = self.blocks[block_id]
            if record.installed_version != block.version:
                errors.append(f"rank {self.rank} {block_id}: record version {record.installed_version} "
                              f"!= block version {block.version}")
            if record.has_pending and record.dispatch_step_of_pending > step:
                errors.append(f"rank {self.rank} {block_id}: pending job dispatched in the future")
            if record.has_pending != (block_id in self.pending):
                errors.append(f"rank {self.rank} {block_id}: pending flag disagrees with queue")
        return errors

    def pool_stats(self) -> Dict[str, float]:
        """Return job counters, wait totals and queue depths."""
        stats = dict(self.counters)
        stats['wait_us_total'] = self.wait_us_total
        stats['install_us_total'] = self.install_us_total
        stats['pending'] = len(self.pending)
        stats['running'] = sum(1 for job in self.pending.values() if job.status == JobStatus.RUNNING)
        stats['queued'] = sum(1 for job in self.pending.values() if job.status == JobStatus.QUEUED)
        stats['staged_transfers'] = self.store.pending_transfers()
        stats['workers'] = self.sim_pool.workers
        return stats

    def worker_activity(self, horizon_us: float):
        """Return (active_us, idle_us) of the refresh workers."""
        if self.timing == "simulated":
            return self.sim_pool.activity(horizon_us)
        with self._busy_lock:
            active = self._wall_busy_us
        return active, max(0.0, self.sim_pool.workers * horizon_us - active)

    def shutdown(self, wait: bool = True) -> None:
        """Stop accepting jobs; shut the executor down if this scheduler owns it."""
        self._down = True
        if self._owns_executor:
            self.executor.shutdown(wait=wait)
        self.logger.debug(f"rank {self.rank}: scheduler shut down with {len(self.pending)} pending jobs")
