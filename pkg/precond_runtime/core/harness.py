"""
Deterministic data-parallel training harness.

Each simulated rank runs on its own thread with its own tier store and
shadow scheduler. Ranks average gradients over the simulated network every
step, fire ForwardPost / BackwardPre / StepEnd hooks, consume (possibly
stale) preconditioners and meet for coherence ticks at StepEnd.

Also provides the single-threaded reference trainer used as the synchronous
oracle, finite-difference gradient checks, parameter sweeps, optimizer
ranking on the ill-conditioned quadratic, and the step-time spike benchmark.
"""

import logging
import os
import math
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ConfigInvalidError, InvariantAuditError, PrecondRuntimeError
from ..models.blocks import array_checksum
from ..models.jobs import HookEvent, HookKind
from ..models.optimizer_config import Method, OptimizerConfig
from ..models.run_config import Activation, ModelSpec, RunConfig, Task, TaskKind
from ..models.traces import RunSummary, StepRecord
from ..utils.run_files import RunFileHandler
from ..utils.summary_generator import SummaryGenerator
from ..utils.validators import TraceIntegrityValidator
from .asyncsched import ShadowScheduler, store_key
from .coherence import CoherenceEngine, CoherenceRegistry, discover_topology
from .metrics import spike_stats
from .precond import (ParamState, accumulate_factors, apply_update, compute_refresh, get_update_rule,
                      install_refresh, take_snapshot)
from .simnet import Communicator, SimClock, SimNetwork
from .tierstore import TierStore
from .. import config

logger = logging.getLogger(__name__)

EVAL_STREAM = 2 ** 31 - 1


# Models and tasks

class MLP:
    """Bias-free fully connected network; hidden layers use the configured activation."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.shapes = spec.param_shapes

    @property
    def names(self) -> List[str]:
        """Get parameter names in layer order."""
        return list(self.shapes)

    def init_params(self) -> Dict[str, np.ndarray]:
        """Draw weights from N(0, 1/fan_in) with the model seed."""
        rng = np.random.default_rng(self.spec.seed)
        return {name: rng.normal(size=shape) / math.sqrt(shape[1]) for name, shape in self.shapes.items()}

    def _activate(self, z: np.ndarray) -> np.ndarray:
        return np.tanh(z) if self.spec.activation == Activation.TANH else z

    def _activate_grad(self, z: np.ndarray) -> np.ndarray:
        if self.spec.activation == Activation.TANH:
            return 1.0 - np.tanh(z) ** 2
        return np.ones_like(z)

    def forward(self, params: Dict[str, np.ndarray], x: np.ndarray):
        """Return (logits, cache of layer inputs and pre-activations)."""
        inputs, pre = [], []
        h = x
        names = self.names
        for index, name in enumerate(names):
            inputs.append(h)
            z = h @ params[name].T
            pre.append(z)
            h = z if index == len(names) - 1 else self._activate(z)
        return h, (inputs, pre)

    def loss(self, params: Dict[str, np.ndarray], x: np.ndarray, y: np.ndarray) -> float:
        """Mean softmax cross-entropy."""
        if len(x) == 0:
            return 0.0
        logits, _ = self.forward(params, x)
        return float(np.mean(_cross_entropy(logits, y)))

    def loss_and_grad(self, params: Dict[str, np.ndarray], x: np.ndarray, y: np.ndarray):
        """Return (mean loss, gradients by name)."""
        n = len(x)
        if n == 0:
            return 0.0, {name: np.zeros(shape) for name, shape in self.shapes.items()}
        logits, (inputs, pre) = self.forward(params, x)
        loss = float(np.mean(_cross_entropy(logits, y)))

        delta = _softmax(logits)
        delta[np.arange(n), y] -= 1.0
        delta /= n
        grads = {}
        names = self.names
        for index in range(len(names) - 1, -1, -1):
            name = names[index]
            grads[name] = delta.T @ inputs[index]
            if index > 0:
                delta = (delta @ params[name]) * self._activate_grad(pre[index - 1])
        return loss, grads


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _cross_entropy(logits: np.ndarray, y: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    return log_norm - shifted[np.arange(len(y)), y]


class SyntheticClassifier:
    """
    Labels from a random tanh labelling network.

    Training batches are drawn from default_rng((seed, step)); the eval set
    is fixed per seed.
    """

    def __init__(self, task: Task, spec: ModelSpec, seed: int):
        self.task = task
        self.model = MLP(spec)
        self.seed = seed
        self.d_in = spec.layer_dims[0]
        self.classes = spec.layer_dims[-1]
        rng = np.random.default_rng(task.label_seed)
        self.labeller = (
            rng.normal(size=(task.label_hidden, self.d_in)) / math.sqrt(self.d_in),
            rng.normal(size=(self.classes, task.label_hidden)) / math.sqrt(task.label_hidden) * 3.0,
        )
        self.eval_x = np.random.default_rng((seed, EVAL_STREAM)).normal(size=(task.eval_size, self.d_in))
        self.eval_y = self.labels(self.eval_x)

    @property
    def param_shapes(self) -> Dict[str, tuple]:
        return self.model.shapes

    def labels(self, x: np.ndarray) -> np.ndarray:
        """Return the labelling network's class for each row of x."""
        hidden = np.tanh(x @ self.labeller[0].T)
        return np.argmax(hidden @ self.labeller[1].T, axis=1)

    def init_params(self) -> Dict[str, np.ndarray]:
        return self.model.init_params()

    def batch(self, step: int):
        """Return the full training batch of a step."""
        x = np.random.default_rng((self.seed, step)).normal(size=(self.task.batch_size, self.d_in))
        return x, self.labels(x)

    def shard(self, step: int, rank_index: int, world_size: int):
        """Return (data, weight) of one rank's contiguous share of the batch."""
        x, y = self.batch(step)
        rows = np.array_split(np.arange(len(x)), world_size)[rank_index]
        return (x[rows], y[rows]), float(len(rows))

    def loss_and_grad(self, params, data):
        x, y = data
        return self.model.loss_and_grad(params, x, y)

    def eval_loss(self, params) -> float:
        return self.model.loss(params, self.eval_x, self.eval_y)


class IllConditionedQuadratic:
    """
    0.5 * ||A W B - C||^2 with A = U diag(a) Uᵀ, B = V diag(b) Vᵀ.

    a² and b² are log-spaced over [1, sqrt(condition)], so the Hessian
    (BBᵀ) ⊗ (AᵀA) has condition number `condition`. The optimum
    W* = U diag(w) Vᵀ has |w| in [0.6, 1.4]·1e-2 with random signs.
    """

    def __init__(self, dim: int = 8, condition: float = config.QUADRATIC_CONDITION, seed: int = 0):
        if condition < 1:
            raise ConfigInvalidError(f"condition number must be >= 1, got {condition}")
        rng = np.random.default_rng(seed)
        self.dim = dim
        self.condition = condition
        self.U, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        self.V, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        exponent = math.log10(condition) / 2.0
        self.a = np.sqrt(np.logspace(0.0, exponent, dim))
        self.b = np.sqrt(np.logspace(0.0, exponent, dim))
        self.A = (self.U * self.a) @ self.U.T
        self.B = (self.V * self.b) @ self.V.T
        w = rng.uniform(0.6, 1.4, size=dim) * 1e-2 * rng.choice([-1.0, 1.0], size=dim)
        self.W_star = (self.U * w) @ self.V.T
        self.C = self.A @ self.W_star @ self.B

    @property
    def param_shapes(self) -> Dict[str, tuple]:
        return {'W': (self.dim, self.dim)}

    def init_params(self) -> Dict[str, np.ndarray]:
        return {'W': np.zeros((self.dim, self.dim))}

    def shard(self, step: int, rank_index: int, world_size: int):
        """Every rank sees the full objective."""
        return None, 1.0

    def loss_and_grad(self, params, data=None):
        residual = self.A @ params['W'] @ self.B - self.C
        return 0.5 * float(np.sum(residual * residual)), {'W': self.A.T @ residual @ self.B.T}

    def loss(self, params) -> float:
        return self.loss_and_grad(params)[0]

    def eval_loss(self, params) -> float:
        return self.loss(params)


def build_workload(cfg: RunConfig):
    """Return the workload object of a run configuration."""
    if cfg.task.kind == TaskKind.QUADRATIC:
        return IllConditionedQuadratic(cfg.task.dim, cfg.task.condition, cfg.run.seed)
    return SyntheticClassifier(cfg.task, cfg.model, cfg.run.seed)


def module_of(param_name: str) -> int:
    """Return the module index that owns a parameter (W3 -> 3)."""
    digits = param_name.lstrip('W')
    return int(digits) if digits.isdigit() else 0


# Step helpers shared by the harness and the reference trainer

def warmup_lr(cfg: OptimizerConfig, step: int, total_steps: int) -> float:
    """Linear warmup over the first WARMUP_FRACTION of steps."""
    warmup_steps = max(1, int(round(config.WARMUP_FRACTION * total_steps)))
    return cfg.lr * min(1.0, (step + 1) / warmup_steps)


def clip_gradients(grads: Dict[str, np.ndarray], max_norm: float = config.GRAD_CLIP_NORM) -> float:
    """Scale gradients in place to a global norm of at most max_norm; return the original norm."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for name in grads:
            grads[name] = grads[name] * scale
    return norm


def _flatten(grads: Dict[str, np.ndarray], names: Sequence[str], loss: float) -> np.ndarray:
    return np.concatenate([grads[name].ravel() for name in names] + [np.array([loss])])


def _unflatten(vector: np.ndarray, shapes: Dict[str, tuple], names: Sequence[str]):
    grads, offset = {}, 0
    for name in names:
        size = int(np.prod(shapes[name]))
        grads[name] = vector[offset:offset + size].reshape(shapes[name])
        offset += size
    return grads, float(vector[offset])


def params_digest(params: Dict[str, np.ndarray]) -> str:
    """Checksum of all parameters in name order."""
    return array_checksum(*(params[name] for name in sorted(params)))


# Data-parallel run

class _Rank:
    """Per-rank training state."""

    def __init__(self, rank: int, index: int, cfg: RunConfig, workload, network: SimNetwork,
                 executor: ThreadPoolExecutor):
        self.rank = rank
        self.index = index
        self.cfg = cfg
        self.workload = workload
        self.world_size = network.topology.world_size
        self.clock = SimClock()
        self.comm = Communicator(network, rank, self.clock)
        self.params = workload.init_params()
        self.names = list(workload.param_shapes)
        self.states = {name: ParamState(name, shape, cfg.optimizer)
                       for name, shape in workload.param_shapes.items()}
        self.step_compute_us = cfg.scheduler.step_compute_us / self.world_size
        self.simulated = cfg.scheduler.timing == "simulated"

        tiers = cfg.tiers
        self.store = TierStore(tiers.budget, _rank_cold_path(tiers.cold_path, rank),
                               tiers.transfer_bandwidth_bytes_per_sec, tiers.transfer_latency_us,
                               clock=self.clock if self.simulated else None,
                               poison_retired=cfg.scheduler.poison_retired, name=f"store-r{rank}")
        blocks, module_blocks = {}, {}
        for name, state in self.states.items():
            for block_id, block in state.blocks.items():
                blocks[block_id] = block
                module_blocks.setdefault(module_of(name), []).append(block_id)
        self.scheduler = None
        if blocks:
            sched = cfg.scheduler
            self.scheduler = ShadowScheduler(
                blocks, cfg.optimizer, cfg.staleness_policy, self.store, rank=rank, clock=self.clock,
                executor=executor, module_blocks=module_blocks, placement=tiers.placement,
                timing=sched.timing, pool_size=sched.pool_size,
                job_delay_steps=sched.inject_job_delay_steps, step_compute_us=self.step_compute_us,
                install_us_per_mib=sched.install_us_per_mib, hook_drain_budget=sched.hook_drain_budget,
                visible_mode=tiers.visible_mode, paging_mode=tiers.paging_mode)
        self.modules = sorted({module_of(name) for name in self.names})
        self.records: List[StepRecord] = []
        self.losses: List[float] = []
        self.history: List[Dict[str, np.ndarray]] = []
        self.trainer_active_us = 0.0
        self.coherence = None

    def _now(self) -> float:
        return self.clock.now_us if self.simulated else time.perf_counter() * 1e6

    def _hook(self, kind: HookKind, module_id: int, step: int) -> None:
        if self.scheduler is not None:
            self.scheduler.on_hook(HookEvent(kind, module_id, step))

    def step(self, step: int, total_steps: int) -> None:
        cfg = self.cfg
        start = self._now()
        self.store.set_step(step)

        for module_id in self.modules:
            self._hook(HookKind.FORWARD_POST, module_id, step)
        for module_id in reversed(self.modules):
            self._hook(HookKind.BACKWARD_PRE, module_id, step)

        compute_start = self._now()
        data, weight = self.workload.shard(step, self.index, self.world_size)
        loss, grads = self.workload.loss_and_grad(self.params, data)
        if self.simulated:
            self.clock.advance(self.step_compute_us)
        compute_us = self._now() - compute_start

        collective_start = self._now()
        vector = _flatten(grads, self.names, loss)
        averaged = self.comm.allreduce_avg(self.comm.network.world_group(), vector, weight)
        grads, loss = _unflatten(averaged, self.workload.param_shapes, self.names)
        collective_us = self._now() - collective_start

        clip_gradients(grads)
        lr = warmup_lr(cfg.optimizer, step, total_steps)
        for name in self.names:
            state = self.states[name]
            self.params[name] = apply_update(self.params[name], self._direction(state, grads[name], step),
                                             cfg.optimizer, lr)

        self._hook(HookKind.STEP_END, 0, step)
        if self.coherence is not None:
            tick_start = self._now()
            self.coherence.collective_tick(self.comm, step)
            collective_us += self._now() - tick_start

        barrier_us, install_us = self.scheduler.take_step_timing() if self.scheduler else (0.0, 0.0)
        total_us = self._now() - start
        self.trainer_active_us += compute_us + install_us
        self.losses.append(loss)
        self.records.append(StepRecord(step, loss, total_us, compute_us, collective_us, barrier_us,
                                       install_us, self.clock.now_us if self.simulated else total_us))
        if cfg.run.record_params:
            self.history.append({name: value.copy() for name, value in self.params.items()})
        if cfg.run.audit:
            self.audit(step)

    def _direction(self, state: ParamState, g: np.ndarray, step: int) -> np.ndarray:
        rule = get_update_rule(self.cfg.optimizer.method)
        if not state.second_order:
            return rule(state.adam, g, self.cfg.optimizer, step, {})
        direction = np.zeros_like(g)
        for block, tile in state.block_gradients(g):
            accumulate_factors(block, tile, self.cfg.optimizer)
            self.scheduler.maybe_dispatch(block, step)
            self.scheduler.staleness_barrier(block, step)
            tensors = self.scheduler.consume(block, step)
            direction[block.spec.slices()] = rule(block, tile, self.cfg.optimizer, step, tensors)
        return direction

    def audit(self, step: int) -> None:
        errors = self.store.audit()
        if self.scheduler is not None:
            errors += self.scheduler.audit(step)
        if errors:
            raise InvariantAuditError(f"rank {self.rank} step {step}: " + "; ".join(errors))

    def run(self, steps: int) -> None:
        for step in range(steps):
            self.step(step, steps)

    def close(self) -> None:
        if self.scheduler is not None:
            self.scheduler.shutdown(wait=False)
        self.store.close()


def _rank_cold_path(cold_path: Optional[str], rank: int) -> Optional[Path]:
    if cold_path is None:
        return None
    path = Path(cold_path)
    return path.with_name(f"{path.stem}.rank{rank}{path.suffix or '.cold'}")


def merge_events(event_lists: Iterable[List[dict]]) -> List[dict]:
    """Merge per-rank events ordered by (step, worker, seq)."""
    merged = [event for events in event_lists for event in events]
    merged.sort(key=lambda event: (event['step'], event['worker'], event['seq']))
    return merged


def run_training(cfg: RunConfig) -> RunSummary:
    """
    Run a data-parallel training job described by cfg.

    Returns:
        RunSummary: Losses, timing trace, events, ledgers and final parameters

    Raises:
        ConfigInvalidError: If the configuration is inconsistent
        InvariantAuditError: If run.audit is set and an invariant fails
        RunOutputError: If a run file cannot be written
    """
    topology = discover_topology(cfg)
    network = SimNetwork.from_config(topology, cfg.simnet)
    workload = build_workload(cfg)
    steps = cfg.task.steps
    logger.info(f"Starting run: {cfg!r}, {steps} steps on {topology.world_size} ranks")

    total_blocks = sum(len(ParamState(name, shape, cfg.optimizer).blocks)
                       for name, shape in workload.param_shapes.items())
    executor = ThreadPoolExecutor(max_workers=max(1, min(max(total_blocks, 1) * topology.world_size,
                                                         _cpu_count())),
                                  thread_name_prefix="refresh")
    ranks = [_Rank(rank, index, cfg, workload, network, executor)
             for index, rank in enumerate(topology.ranks)]

    engine = None
    if topology.world_size > 1 and ranks[0].scheduler is not None:
        engine = _build_coherence(cfg, network, ranks)
        for rank_state in ranks:
            rank_state.coherence = engine

    try:
        with ThreadPoolExecutor(max_workers=len(ranks), thread_name_prefix="rank") as rank_pool:
            futures = [rank_pool.submit(_run_rank, rank_state, steps, network) for rank_state in ranks]
            errors = []
            for future in futures:
                try:
                    future.result()
                except Exception as e:
                    errors.append(e)
        if errors:
            primary = next((e for e in errors if not _is_abort_echo(e)), errors[0])
            raise primary
        summary = _summarize(cfg, workload, ranks, network, engine)
    finally:
        for rank_state in ranks:
            rank_state.close()
        executor.shutdown(wait=True)

    if cfg.run.audit:
        violations = TraceIntegrityValidator.validate_all(
            summary.events, cfg.scheduler.staleness_S, cfg.optimizer.precondition_frequency)
        if violations:
            raise InvariantAuditError("; ".join(violations[:10]))

    if cfg.run.output_dir or cfg.run.trace_path:
        write_run_outputs(cfg, summary)
    logger.info(f"Run finished: final loss {summary.final_loss:.6g}, eval {summary.final_eval_loss:.6g}")
    return summary


def _cpu_count() -> int:
    return os.cpu_count() or 1


def _run_rank(rank_state: _Rank, steps: int, network: SimNetwork) -> None:
    try:
        rank_state.run(steps)
    except Exception as e:
        network.abort_all(f"rank {rank_state.rank} failed: {type(e).__name__}")
        raise


def _is_abort_echo(error: Exception) -> bool:
    return "aborted" in str(error)


def _build_coherence(cfg: RunConfig, network: SimNetwork, ranks: List[_Rank]) -> CoherenceEngine:
    by_rank = {rank_state.rank: rank_state for rank_state in ranks}
    scheduler0 = ranks[0].scheduler
    registries = {rank: CoherenceRegistry(by_rank[rank].scheduler.blocks) for rank in by_rank}

    def reader(rank, block_id, role):
        scheduler = by_rank[rank].scheduler
        if scheduler.blocks[block_id].version == 0 or not scheduler.store.contains(store_key(block_id, role)):
            return None
        return scheduler.read_installed(block_id, role)

    def writer(rank, block_id, role, tensor):
        by_rank[rank].scheduler.republish(block_id, role, tensor)

    return CoherenceEngine(network, registries, cfg.coherence, reader, writer, scheduler0.roles)


def _summarize(cfg: RunConfig, workload, ranks: List[_Rank], network: SimNetwork,
               engine: Optional[CoherenceEngine]) -> RunSummary:
    lead = ranks[0]
    summary = RunSummary(cfg.to_dict())
    summary.losses = list(lead.losses)
    summary.initial_loss = lead.losses[0] if lead.losses else math.nan
    summary.final_eval_loss = float(workload.eval_loss(lead.params))
    for record in lead.records:
        summary.trace.add(record)
    summary.events = merge_events(rank_state.scheduler.events for rank_state in ranks
                                  if rank_state.scheduler is not None)
    if engine is not None:
        summary.coherence_events = engine.trace_events()
    summary.ledger = network.ledger.to_dict()
    for rank_state in ranks:
        summary.store_stats[rank_state.rank] = rank_state.store.stats()
        summary.param_digests[rank_state.rank] = params_digest(rank_state.params)
        if rank_state.scheduler is not None:
            summary.pool_stats[rank_state.rank] = rank_state.scheduler.pool_stats()
    summary.final_params = {name: value.copy() for name, value in lead.params.items()}
    if cfg.run.record_params:
        summary.param_history = lead.history

    trainer_active = trainer_idle = worker_active = worker_idle = 0.0
    for rank_state in ranks:
        horizon = sum(record.total_us for record in rank_state.records)
        trainer_active += rank_state.trainer_active_us
        trainer_idle += max(0.0, horizon - rank_state.trainer_active_us)
        if rank_state.scheduler is not None:
            active, idle = rank_state.scheduler.worker_activity(horizon)
            worker_active += active
            worker_idle += idle
    summary.activity = {'trainer': (trainer_active, trainer_idle)}
    if any(rank_state.scheduler is not None for rank_state in ranks):
        summary.activity['host_worker'] = (worker_active, worker_idle)
    summary.energy_joules = cfg.energy.energy_joules(summary.activity)

    if cfg.task.kind == TaskKind.QUADRATIC:
        summary.steps_to_target = next(
            (step for step, loss in enumerate(summary.losses) if loss <= config.RANKING_TARGET_LOSS), None)
    return summary


def trace_records(summary: RunSummary) -> List[dict]:
    """Return scheduler events followed by coherence records, as written to trace.jsonl."""
    records = list(summary.events)
    for seq, event in enumerate(summary.coherence_events):
        record = {'event': 'coherence', 'worker': -1, 'seq': seq}
        record.update(event)
        records.append(record)
    return records


def write_run_outputs(cfg: RunConfig, summary: RunSummary, run_dir: Optional[Path] = None) -> Optional[Path]:
    """Write config.json, loss.csv, series.csv, trace.jsonl, summary.json and summary.md."""
    target = run_dir or (Path(cfg.run.output_dir) if cfg.run.output_dir else None)
    events = trace_records(summary)
    if cfg.run.trace_path:
        trace_handler = RunFileHandler(Path(cfg.run.trace_path).parent)
        trace_handler.require(trace_handler.write_jsonl(Path(cfg.run.trace_path), events))
    if target is None:
        return None

    handler = RunFileHandler(target)
    data = summary.to_dict()
    handler.require(
        handler.save_config(cfg.to_dict()),
        handler.save_loss_curve([{'step': record.step, 'loss': repr(record.loss),
                                  'simulated_time_us': repr(record.sim_time_us)}
                                 for record in summary.trace]),
        handler.save_series(summary.trace.to_rows()),
        handler.save_trace(events),
        handler.save_summary(data, SummaryGenerator().generate_run_summary(data, target.name)),
    )
    logger.info(f"Run outputs written to {target}")
    return target


# Reference trainer

def reference_training(cfg: RunConfig) -> Tuple[List[float], List[Dict[str, np.ndarray]]]:
    """
    Single-threaded synchronous trainer without store, scheduler or network.

    Refreshes every preconditioner in place at each refresh step before
    using it. Serves as the oracle for the S = 0 pipeline.

    Returns:
        (losses, parameters after every step)
    """
    workload = build_workload(cfg)
    opt = cfg.optimizer
    steps = cfg.task.steps
    params = workload.init_params()
    names = list(workload.param_shapes)
    states = {name: ParamState(name, shape, opt) for name, shape in workload.param_shapes.items()}
    rule = get_update_rule(opt.method)
    losses, history = [], []

    for step in range(steps):
        data, _ = workload.shard(step, 0, 1)
        loss, grads = workload.loss_and_grad(params, data)
        clip_gradients(grads)
        lr = warmup_lr(opt, step, steps)
        for name in names:
            state = states[name]
            g = grads[name]
            if not state.second_order:
                direction = rule(state.adam, g, opt, step, {})
            else:
                direction = np.zeros_like(g)
                for block, tile in state.block_gradients(g):
                    accumulate_factors(block, tile, opt)
                    if step % opt.precondition_frequency == 0:
                        install_refresh(block, compute_refresh(take_snapshot(block, step), opt), step)
                    direction[block.spec.slices()] = rule(block, tile, opt, step, {})
            params[name] = apply_update(params[name], direction, opt, lr)
        losses.append(loss)
        history.append({name: value.copy() for name, value in params.items()})
    return losses, history


# Gradient check

def gradient_check(model: MLP, x: np.ndarray, y: np.ndarray,
                   params: Optional[Dict[str, np.ndarray]] = None,
                   h: float = config.GRADCHECK_STEP) -> float:
    """
    Compare analytic gradients with central finite differences.

    Returns:
        float: Max over parameters of ||g_fd - g|| / (||g_fd|| + ||g||), 0 when both vanish
    """
    params = {name: np.array(value, dtype=np.float64) for name, value in
              (params or model.init_params()).items()}
    _, analytic = model.loss_and_grad(params, x, y)
    worst = 0.0
    for name, value in params.items():
        numeric = np.zeros_like(value)
        for index in np.ndindex(value.shape):
            original = value[index]
            value[index] = original + h
            plus = model.loss(params, x, y)
            value[index] = original - h
            minus = model.loss(params, x, y)
            value[index] = original
            numeric[index] = (plus - minus) / (2.0 * h)
        scale = float(np.linalg.norm(numeric) + np.linalg.norm(analytic[name]))
        if scale > 0:
            worst = max(worst, float(np.linalg.norm(numeric - analytic[name])) / scale)
    return worst


# Presets

def classifier_preset(method=Method.SHAMPOO, steps: int = config.DEFAULT_STEPS, **sections) -> RunConfig:
    """Synthetic-classifier run with damping suited to rank-deficient early factors."""
    base = RunConfig(optimizer=OptimizerConfig(method=method, lr=5e-3, damping=1e-3),
                     task=Task(TaskKind.CLASSIFIER, steps=steps))
    return base.replace(**sections) if sections else base


def quadratic_preset(method=Method.SHAMPOO, lr: float = 1e-2, steps: int = config.RANKING_MAX_STEPS,
                     **sections) -> RunConfig:
    """Ill-conditioned quadratic run without weight decay."""
    base = RunConfig(optimizer=OptimizerConfig(method=method, lr=lr, weight_decay=0.0),
                     task=Task(TaskKind.QUADRATIC, steps=steps))
    return base.replace(**sections) if sections else base


# Sweeps

SWEEP_COLUMNS = ['axis', 'value', 'total_sim_us', 'final_loss', 'final_eval_loss', 'barrier_wait_us',
                 'intra_bytes', 'inter_bytes', 'coherence_syncs', 'coherence_inter_bytes',
                 'energy_joules']


def sweep_config(cfg: RunConfig, axis: str, value) -> RunConfig:
    """Return cfg with one axis set to value."""
    if axis == 'staleness':
        return cfg.replace(scheduler={'staleness_S': int(value)})
    if axis == 'nodes':
        per_node = max(1, cfg.topology.ranks // cfg.topology.nodes)
        return cfg.replace(topology={'nodes': int(value), 'ranks': int(value) * per_node, 'layout': None})
    if axis == 'budget':
        return cfg.replace(coherence={'budget': value})
    raise ConfigInvalidError(f"unknown sweep axis '{axis}' (expected staleness, nodes or budget)")


def default_sweep_values(axis: str) -> Tuple:
    """Return the protocol values of an axis."""
    table = {'staleness': config.STALENESS_SWEEP, 'nodes': config.NODE_SWEEP,
             'budget': config.BUDGET_SWEEP}
    if axis not in table:
        raise ConfigInvalidError(f"unknown sweep axis '{axis}'")
    return table[axis]


def sweep(cfg: RunConfig, axis: str, values: Optional[Sequence] = None,
          output_dir: Optional[Path] = None) -> List[Dict[str, Any]]:
    """
    One run per axis value with shared seeds.

    Returns:
        List[Dict[str, Any]]: One row per value, in the given order
    """
    values = list(values) if values is not None else list(default_sweep_values(axis))
    rows = []
    for value in values:
        run_cfg = sweep_config(cfg, axis, value)
        if output_dir is not None:
            run_cfg = run_cfg.replace(run={'output_dir': str(Path(output_dir) / f"{axis}_{value}")})
        summary = run_training(run_cfg)
        syncs = [event for event in summary.coherence_events if event['action'] == 'sync']
        rows.append({
            'axis': axis,
            'value': value,
            'total_sim_us': summary.total_sim_us,
            'final_loss': summary.final_loss,
            'final_eval_loss': summary.final_eval_loss,
            'barrier_wait_us': summary.barrier_wait_us,
            'intra_bytes': summary.ledger.get('intra_bytes', 0),
            'inter_bytes': summary.ledger.get('inter_bytes', 0),
            'coherence_syncs': len(syncs),
            'coherence_inter_bytes': sum(event['inter_bytes'] for event in syncs),
            'energy_joules': summary.energy_joules,
        })
        logger.info(f"sweep {axis}={value}: total {rows[-1]['total_sim_us']:.1f}us, "
                    f"eval {rows[-1]['final_eval_loss']:.5g}")
    if output_dir is not None:
        handler = RunFileHandler(Path(output_dir))
        handler.require(handler.save_sweep(rows, SWEEP_COLUMNS))
    return rows


# Optimizer ranking

def steps_to_target(method, lr: float, problem: Optional[IllConditionedQuadratic] = None,
                    precondition_frequency: int = config.DEFAULT_PRECONDITION_FREQUENCY,
                    max_steps: int = config.RANKING_MAX_STEPS,
                    target: float = config.RANKING_TARGET_LOSS) -> int:
    """
    Count full-gradient steps until the quadratic loss reaches target.

    No clipping, warmup or weight decay.

    Returns:
        int: Updates taken, or max_steps + 1 if the target is never reached
    """
    problem = problem or IllConditionedQuadratic()
    opt = OptimizerConfig(method=method, lr=lr, weight_decay=0.0,
                          precondition_frequency=precondition_frequency)
    params = problem.init_params()
    state = ParamState('W', (problem.dim, problem.dim), opt)
    rule = get_update_rule(opt.method)

    for step in range(max_steps):
        loss, grads = problem.loss_and_grad(params)
        if not math.isfinite(loss):
            return max_steps + 1
        if loss <= target:
            return step
        g = grads['W']
        if state.second_order:
            direction = np.zeros_like(g)
            for block, tile in state.block_gradients(g):
                accumulate_factors(block, tile, opt)
                if step % precondition_frequency == 0:
                    install_refresh(block, compute_refresh(take_snapshot(block, step), opt), step)
                direction[block.spec.slices()] = rule(block, tile, opt, step, {})
        else:
            direction = rule(state.adam, g, opt, step, {})
        try:
            params['W'] = apply_update(params['W'], direction, opt)
        except PrecondRuntimeError:
            return max_steps + 1
    return max_steps if problem.loss(params) <= target else max_steps + 1


def rank_optimizers(condition: float = config.QUADRATIC_CONDITION, dim: int = 8, seed: int = 0,
                    lr_grid: Sequence[float] = config.LR_GRID,
                    methods: Sequence = (Method.ADAMW, Method.SHAMPOO, Method.SOAP),
                    max_steps: int = config.RANKING_MAX_STEPS) -> Dict[str, Dict[str, float]]:
    """
    Best steps-to-target per method over the lr grid.

    Returns:
        Dict[str, Dict[str, float]]: method -> {'steps', 'lr'}
    """
    problem = IllConditionedQuadratic(dim, condition, seed)
    ranking = {}
    for method in methods:
        method = Method(method) if not isinstance(method, Method) else method
        results = [(steps_to_target(method, lr, problem, max_steps=max_steps), lr) for lr in lr_grid]
        best_steps, best_lr = min(results, key=lambda item: (item[0], item[1]))
        ranking[method.value] = {'steps': best_steps, 'lr': best_lr}
        logger.info(f"{method.value}: {best_steps} steps at lr {best_lr}")
    return ranking


# Spike benchmark

def bench_spikes(cfg: Optional[RunConfig] = None, job_cost: float = 5.0,
                 async_staleness: int = config.DEFAULT_STALENESS_S) -> Dict[str, Any]:
    """
    Compare step-time spikes of synchronous (S = 0) and asynchronous refresh.

    Statistics cover the steady state after the first refresh period, which
    both modes spend waiting for their first preconditioner.

    Returns:
        Dict[str, Any]: Per-mode spike statistics and final losses
    """
    cfg = cfg or classifier_preset()
    cfg = cfg.replace(scheduler={'inject_job_delay_steps': float(job_cost)})
    pf = cfg.optimizer.precondition_frequency
    results = {}
    for mode, staleness in (('sync', 0), ('async', async_staleness)):
        summary = run_training(cfg.replace(scheduler={'staleness_S': staleness}))
        stats = spike_stats(summary.trace.window(pf))
        results[mode] = {'staleness_S': staleness, 'spikes': stats.to_dict(),
                         'final_loss': summary.final_loss, 'final_eval_loss': summary.final_eval_loss,
                         'total_sim_us': summary.total_sim_us}
        logger.info(f"{mode}: spike ratio {stats.spike_ratio:.3f}")
    return results
