"""
Run configuration models for the Shadow Preconditioner Runtime.

A RunConfig is one JSON document with one section per subsystem. Each
section maps to a class here with to_dict/from_dict; missing keys take the
defaults from config.py and unknown keys are rejected. A RunConfig saved
next to a run's outputs reproduces that run.
"""

import copy
import json
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from ..errors import ConfigInvalidError
from ..utils.validators import ConfigValidator
from .. import config
from .coherence_records import CoherenceBudget
from .jobs import StalenessPolicy
from .network import TopologyGraph
from .optimizer_config import OptimizerConfig, _parse_enum
from .store import ResidencyBudget, TierTag
from .traces import EnergyModel

logger = logging.getLogger(__name__)


class Activation(Enum):
    """Hidden-layer activations."""
    IDENTITY = "Identity"
    TANH = "Tanh"


class TaskKind(Enum):
    """Training tasks."""
    QUADRATIC = "IllConditionedQuadratic"
    CLASSIFIER = "SyntheticClassifier"


class Task:
    """
    Training task definition.

    The quadratic task minimizes 0.5 * ||A W B - C||^2 over a dim x dim W with
    condition number `condition`. The classifier task learns labels produced
    by a random tanh labelling network.
    """

    FIELDS = ('kind', 'batch_size', 'steps', 'condition', 'dim', 'label_seed',
              'label_hidden', 'eval_size')

    def __init__(self, kind=TaskKind.CLASSIFIER, batch_size: int = config.DEFAULT_BATCH_SIZE,
                 steps: int = config.DEFAULT_STEPS, condition: float = config.QUADRATIC_CONDITION,
                 dim: int = 8, label_seed: int = 1234, label_hidden: int = 16,
                 eval_size: int = config.DEFAULT_EVAL_SIZE):
        self.kind = _parse_enum(TaskKind, kind, "task.kind")
        self.batch_size = ConfigValidator.validate_int(batch_size, "task.batch_size", minimum=1)
        self.steps = ConfigValidator.validate_int(steps, "task.steps", minimum=1)
        self.condition = ConfigValidator.validate_float(condition, "task.condition", minimum=1.0)
        self.dim = ConfigValidator.validate_int(dim, "task.dim", minimum=1)
        self.label_seed = ConfigValidator.validate_int(label_seed, "task.label_seed", minimum=0)
        self.label_hidden = ConfigValidator.validate_int(label_hidden, "task.label_hidden", minimum=1)
        self.eval_size = ConfigValidator.validate_int(eval_size, "task.eval_size", minimum=1)

    def to_dict(self) -> dict:
        """Convert the task to a dictionary."""
        return {'kind': self.kind.value, 'batch_size': self.batch_size, 'steps': self.steps,
                'condition': self.condition, 'dim': self.dim, 'label_seed': self.label_seed,
                'label_hidden': self.label_hidden, 'eval_size': self.eval_size}

    @classmethod
    def from_dict(cls, data: dict) -> 'Task':
        """Create a Task from a dictionary."""
        return cls(**ConfigValidator.validate_keys(data, cls.FIELDS, 'task'))


class ModelSpec:
    """
    Layer dimensions of a fully connected network with matrix parameters only.

    layer_dims [d0, d1, ..., dk] gives weights W_i of shape (d_{i+1}, d_i).
    """

    FIELDS = ('layer_dims', 'activation', 'seed')

    def __init__(self, layer_dims: Optional[List[int]] = None, activation=Activation.TANH,
                 seed: int = config.DEFAULT_SEED):
        layer_dims = [16, 32, 4] if layer_dims is None else list(layer_dims)
        if len(layer_dims) < 2:
            raise ConfigInvalidError("model.layer_dims needs at least an input and an output size")
        self.layer_dims = [ConfigValidator.validate_int(dim, "model.layer_dims", minimum=1)
                           for dim in layer_dims]
        self.activation = _parse_enum(Activation, activation, "model.activation")
        self.seed = ConfigValidator.validate_int(seed, "model.seed", minimum=0)

    @property
    def param_shapes(self) -> Dict[str, tuple]:
        """Get parameter names mapped to their 2-D shapes."""
        return {f"W{index}": (self.layer_dims[index + 1], self.layer_dims[index])
                for index in range(len(self.layer_dims) - 1)}

    def to_dict(self) -> dict:
        """Convert the model spec to a dictionary."""
        return {'layer_dims': list(self.layer_dims), 'activation': self.activation.value,
                'seed': self.seed}

    @classmethod
    def from_dict(cls, data: dict) -> 'ModelSpec':
        """Create a ModelSpec from a dictionary."""
        return cls(**ConfigValidator.validate_keys(data, cls.FIELDS, 'model'))


class SchedulerConfig:
    """Shadow scheduler settings."""

    FIELDS = ('staleness_S', 'staleness_unit', 'pool_size', 'inject_job_delay_steps', 'timing',
              'step_compute_us', 'install_us_per_mib', 'hook_drain_budget', 'poison_retired')

    def __init__(self, staleness_S: int = config.DEFAULT_STALENESS_S,
                 staleness_unit: str = config.DEFAULT_STALENESS_UNIT,
                 pool_size: int = config.DEFAULT_POOL_SIZE,
                 inject_job_delay_steps: float = config.DEFAULT_JOB_DELAY_STEPS,
                 timing: str = config.DEFAULT_TIMING,
                 step_compute_us: float = config.DEFAULT_STEP_COMPUTE_US,
                 install_us_per_mib: float = config.DEFAULT_INSTALL_US_PER_MIB,
                 hook_drain_budget: int = config.HOOK_DRAIN_BUDGET,
                 poison_retired: bool = False):
        self.staleness_S = ConfigValidator.validate_int(staleness_S, "staleness_S", minimum=0)
        self.staleness_unit = ConfigValidator.validate_choice(
            staleness_unit, "staleness_unit", config.STALENESS_UNITS)
        self.pool_size = ConfigValidator.validate_int(pool_size, "pool_size", minimum=0)
        self.inject_job_delay_steps = ConfigValidator.validate_float(
            inject_job_delay_steps, "inject_job_delay_steps", minimum=0.0)
        self.timing = ConfigValidator.validate_choice(timing, "timing", config.TIMING_MODES)
        self.step_compute_us = ConfigValidator.validate_float(
            step_compute_us, "step_compute_us", minimum=0.0)
        self.install_us_per_mib = ConfigValidator.validate_float(
            install_us_per_mib, "install_us_per_mib", minimum=0.0)
        self.hook_drain_budget = ConfigValidator.validate_int(
            hook_drain_budget, "hook_drain_budget", minimum=1)
        self.poison_retired = ConfigValidator.validate_bool(poison_retired, "poison_retired")

    def to_dict(self) -> dict:
        """Convert the scheduler settings to a dictionary."""
        return {name: getattr(self, name) for name in self.FIELDS}

    @classmethod
    def from_dict(cls, data: dict) -> 'SchedulerConfig':
        """Create a SchedulerConfig from a dictionary."""
        return cls(**ConfigValidator.validate_keys(data, cls.FIELDS, 'scheduler'))


class TierConfig:
    """Tier store capacities, cold file location, transfer model and policies."""

    FIELDS = ('hot_capacity_bytes', 'host_capacity_bytes', 'cold_path',
              'transfer_bandwidth_bytes_per_sec', 'transfer_latency_us', 'visible_mode',
              'paging_mode', 'placement')

    def __init__(self, hot_capacity_bytes: int = config.DEFAULT_HOT_CAPACITY_BYTES,
                 host_capacity_bytes: int = config.DEFAULT_HOST_CAPACITY_BYTES,
                 cold_path: Optional[str] = None,
                 transfer_bandwidth_bytes_per_sec: float = config.DEFAULT_TRANSFER_BANDWIDTH,
                 transfer_latency_us: float = config.DEFAULT_TRANSFER_LATENCY_US,
                 visible_mode: str = "prefetch", paging_mode: str = "none",
                 placement: Optional[Dict[str, str]] = None):
        self.budget = ResidencyBudget(hot_capacity_bytes, host_capacity_bytes)
        self.cold_path = None if cold_path is None else str(
            ConfigValidator.validate_path(cold_path, "cold_path"))
        self.transfer_bandwidth_bytes_per_sec = ConfigValidator.validate_float(
            transfer_bandwidth_bytes_per_sec, "transfer_bandwidth_bytes_per_sec", minimum=0.0)
        self.transfer_latency_us = ConfigValidator.validate_float(
            transfer_latency_us, "transfer_latency_us", minimum=0.0)
        self.visible_mode = ConfigValidator.validate_choice(visible_mode, "visible_mode",
                                                            config.VISIBLE_MODES)
        self.paging_mode = ConfigValidator.validate_choice(paging_mode, "paging_mode",
                                                           config.PAGING_MODES)
        table = config.get_placement()
        for role, tier in (placement or {}).items():
            if role not in table:
                raise ConfigInvalidError(f"unknown tensor role in placement: {role!r}")
            try:
                table[role] = TierTag.parse(tier).value
            except ValueError:
                raise ConfigInvalidError(f"placement for {role} must be hot, host or cold, got {tier!r}")
        self.placement = table

    @property
    def hot_capacity_bytes(self) -> int:
        """Get the Hot tier capacity."""
        return self.budget.hot_capacity_bytes

    @property
    def host_capacity_bytes(self) -> int:
        """Get the Host tier capacity."""
        return self.budget.host_capacity_bytes

    def to_dict(self) -> dict:
        """Convert the tier settings to a dictionary."""
        return {
            'hot_capacity_bytes': self.hot_capacity_bytes,
            'host_capacity_bytes': self.host_capacity_bytes,
            'cold_path': self.cold_path,
            'transfer_bandwidth_bytes_per_sec': self.transfer_bandwidth_bytes_per_sec,
            'transfer_latency_us': self.transfer_latency_us,
            'visible_mode': self.visible_mode,
            'paging_mode': self.paging_mode,
            'placement': dict(self.placement),
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'TierConfig':
        """Create a TierConfig from a dictionary."""
        return cls(**ConfigValidator.validate_keys(data, cls.FIELDS, 'tiers'))


class TopologyConfig:
    """
    Declared node layout.

    Either `nodes` equal nodes sharing `ranks` total ranks, or an explicit
    `layout` listing the ranks of every node.
    """

    FIELDS = ('nodes', 'ranks', 'layout')

    def __init__(self, nodes: int = config.DEFAULT_NODES,
                 ranks: Optional[int] = None, layout: Optional[List[List[int]]] = None):
        self.nodes = ConfigValidator.validate_int(nodes, "nodes", minimum=1)
        if ranks is None:
            ranks = self.nodes * config.DEFAULT_RANKS_PER_NODE
        self.ranks = ConfigValidator.validate_int(ranks, "ranks", minimum=1)
        if layout is not None:
            if not isinstance(layout, list):
                raise ConfigInvalidError("layout must be a list of rank lists")
            self.layout = [list(node) for node in layout]
            self.nodes = len(self.layout)
            self.ranks = sum(len(node) for node in self.layout)
        else:
            if self.ranks % self.nodes:
                raise ConfigInvalidError(
                    f"ranks ({self.ranks}) must be a multiple of nodes ({self.nodes})"
                )
            self.layout = None

    def build(self) -> TopologyGraph:
        """Build the TopologyGraph for this layout."""
        if self.layout is not None:
            return TopologyGraph(self.layout)
        return TopologyGraph.uniform(self.nodes, self.ranks // self.nodes)

    def to_dict(self) -> dict:
        """Convert the layout to a dictionary."""
        data = {'nodes': self.nodes, 'ranks': self.ranks}
        if self.layout is not None:
            data['layout'] = [list(node) for node in self.layout]
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'TopologyConfig':
        """Create a TopologyConfig from a dictionary."""
        return cls(**ConfigValidator.validate_keys(data, cls.FIELDS, 'topology'))


class SimnetConfig:
    """Simulated network latency, bandwidth and collective charging model."""

    FIELDS = ('intra_latency_us', 'inter_latency_us', 'intra_bw', 'inter_bw',
              'rendezvous_timeout_ms', 'charging_model')

    def __init__(self, intra_latency_us: float = config.DEFAULT_INTRA_LATENCY_US,
                 inter_latency_us: float = config.DEFAULT_INTER_LATENCY_US,
                 intra_bw: float = config.DEFAULT_INTRA_BW,
                 inter_bw: float = config.DEFAULT_INTER_BW,
                 rendezvous_timeout_ms: int = config.DEFAULT_RENDEZVOUS_TIMEOUT_MS,
                 charging_model: str = config.DEFAULT_CHARGING_MODEL):
        self.intra_latency_us = ConfigValidator.validate_float(intra_latency_us, "intra_latency_us", minimum=0.0)
        self.inter_latency_us = ConfigValidator.validate_float(inter_latency_us, "inter_latency_us", minimum=0.0)
        self.intra_bw = ConfigValidator.validate_float(intra_bw, "intra_bw", minimum=0.0, allow_inf=True)
        self.inter_bw = ConfigValidator.validate_float(inter_bw, "inter_bw", minimum=0.0, allow_inf=True)
        self.rendezvous_timeout_ms = ConfigValidator.validate_int(
            rendezvous_timeout_ms, "rendezvous_timeout_ms", minimum=1)
        self.charging_model = ConfigValidator.validate_choice(
            charging_model, "charging_model", config.CHARGING_MODELS)

    def to_dict(self) -> dict:
        """Convert the network settings to a dictionary."""
        return {name: getattr(self, name) for name in self.FIELDS}

    @classmethod
    def from_dict(cls, data: dict) -> 'SimnetConfig':
        """Create a SimnetConfig from a dictionary."""
        return cls(**ConfigValidator.validate_keys(data, cls.FIELDS, 'simnet'))


class RunSettings:
    """Seed, output location and audit switches of a run."""

    FIELDS = ('seed', 'output_dir', 'trace_path', 'audit', 'record_params', 'vocab_size')

    def __init__(self, seed: int = config.DEFAULT_SEED, output_dir: Optional[str] = None,
                 trace_path: Optional[str] = None, audit: bool = False,
                 record_params: bool = False, vocab_size: int = config.DEFAULT_VOCAB_SIZE):
        self.seed = ConfigValidator.validate_int(seed, "run.seed", minimum=0)
        self.output_dir = None if output_dir is None else str(
            ConfigValidator.validate_path(output_dir, "output_dir"))
        self.trace_path = None if trace_path is None else str(
            ConfigValidator.validate_path(trace_path, "trace_path"))
        self.audit = ConfigValidator.validate_bool(audit, "run.audit")
        self.record_params = ConfigValidator.validate_bool(record_params, "run.record_params")
        self.vocab_size = ConfigValidator.validate_int(vocab_size, "run.vocab_size", minimum=2)

    def to_dict(self) -> dict:
        """Convert the run settings to a dictionary."""
        return {name: getattr(self, name) for name in self.FIELDS}

    @classmethod
    def from_dict(cls, data: dict) -> 'RunSettings':
        """Create RunSettings from a dictionary."""
        return cls(**ConfigValidator.validate_keys(data, cls.FIELDS, 'run'))


class RunConfig:
    """
    Complete description of one training run.

    Sections: optimizer, scheduler, coherence, topology, simnet, tiers, task,
    model, run and energy.
    """

    SECTIONS = ('optimizer', 'scheduler', 'coherence', 'topology', 'simnet', 'tiers',
                'task', 'model', 'run', 'energy')

    def __init__(self, optimizer: Optional[OptimizerConfig] = None,
                 scheduler: Optional[SchedulerConfig] = None,
                 coherence: Optional[CoherenceBudget] = None,
                 topology: Optional[TopologyConfig] = None,
                 simnet: Optional[SimnetConfig] = None,
                 tiers: Optional[TierConfig] = None,
                 task: Optional[Task] = None,
                 model: Optional[ModelSpec] = None,
                 run: Optional[RunSettings] = None,
                 energy: Optional[EnergyModel] = None):
        self.optimizer = optimizer or OptimizerConfig()
        self.scheduler = scheduler or SchedulerConfig()
        self.coherence = coherence or CoherenceBudget(config.DEFAULT_COHERENCE_BUDGET)
        self.topology = topology or TopologyConfig()
        self.simnet = simnet or SimnetConfig()
        self.tiers = tiers or TierConfig()
        self.task = task or Task()
        self.model = model or ModelSpec()
        self.run = run or RunSettings()
        self.energy = energy or EnergyModel()

    @property
    def staleness_policy(self) -> StalenessPolicy:
        """Get the staleness policy formed by the scheduler and optimizer sections."""
        return StalenessPolicy(self.scheduler.staleness_S, self.optimizer.precondition_frequency,
                               self.scheduler.staleness_unit)

    def to_dict(self) -> dict:
        """Convert the RunConfig to a JSON-compatible dictionary."""
        return {
            'optimizer': self.optimizer.to_dict(),
            'scheduler': self.scheduler.to_dict(),
            'coherence': self.coherence.to_dict(),
            'topology': self.topology.to_dict(),
            'simnet': self.simnet.to_dict(),
            'tiers': self.tiers.to_dict(),
            'task': self.task.to_dict(),
            'model': self.model.to_dict(),
            'run': self.run.to_dict(),
            'energy': self.energy.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'RunConfig':
        """
        Create a RunConfig from a dictionary.

        Raises:
            ConfigInvalidError: If a section or key is unknown or a value invalid
        """
        data = ConfigValidator.validate_keys(data, cls.SECTIONS, 'config')
        coherence = None
        if 'coherence' in data:
            section = ConfigValidator.validate_keys(data['coherence'], ('budget',), 'coherence')
            coherence = CoherenceBudget(section.get('budget', config.DEFAULT_COHERENCE_BUDGET))
        return cls(
            optimizer=OptimizerConfig.from_dict(data['optimizer']) if 'optimizer' in data else None,
            scheduler=SchedulerConfig.from_dict(data['scheduler']) if 'scheduler' in data else None,
            coherence=coherence,
            topology=TopologyConfig.from_dict(data['topology']) if 'topology' in data else None,
            simnet=SimnetConfig.from_dict(data['simnet']) if 'simnet' in data else None,
            tiers=TierConfig.from_dict(data['tiers']) if 'tiers' in data else None,
            task=Task.from_dict(data['task']) if 'task' in data else None,
            model=ModelSpec.from_dict(data['model']) if 'model' in data else None,
            run=RunSettings.from_dict(data['run']) if 'run' in data else None,
            energy=EnergyModel.from_dict(data['energy']) if 'energy' in data else None,
        )

    def replace(self, **section_changes: Dict[str, Any]) -> 'RunConfig':
        """
        Return a copy with keys of some sections changed.

        Example: cfg.replace(scheduler={'staleness_S': 0}, optimizer={'pf': 1})
        """
        data = self.to_dict()
        for section, changes in section_changes.items():
            if section not in self.SECTIONS:
                raise ConfigInvalidError(f"unknown config section: {section}")
            merged = copy.deepcopy(data[section])
            merged.update(changes)
            if section == 'optimizer' and 'pf' in changes:
                merged.pop('precondition_frequency', None)
            data[section] = merged
        return RunConfig.from_dict(data)

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'RunConfig':
        """
        Load a RunConfig from a JSON file.

        Raises:
            ConfigInvalidError: If the file is missing or not valid JSON
        """
        path = Path(path)
        try:
            with open(path, 'r', encoding='utf-8') as file:
                data = json.load(file)
        except FileNotFoundError:
            raise ConfigInvalidError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigInvalidError(f"config file {path} is not valid JSON: {e}")
        logger.info(f"Loaded run config from {path}")
        return cls.from_dict(data)

    def save(self, path: Union[str, Path]) -> Path:
        """Write the RunConfig as JSON and return the path."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as file:
            json.dump(self.to_dict(), file, indent=2, sort_keys=True)
        logger.info(f"Saved run config to {path}")
        return path

    def __eq__(self, other) -> bool:
        """Check equality of the serialized form."""
        return isinstance(other, RunConfig) and self.to_dict() == other.to_dict()

    __hash__ = None

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        return (f"RunConfig(method={self.optimizer.method.value}, task={self.task.kind.value}, "
                f"S={self.scheduler.staleness_S}, ranks={self.topology.ranks})")
