"""
Models package for the Shadow Preconditioner Runtime.

This package contains the data types shared by the runtime modules.
"""

from .matrices import DenseMatrix, Layout, SymMatrix, EigenPair, as_dense, packed_length
from .optimizer_config import Method, Accumulation, OptimizerConfig
from .store import TierTag, StagedCopy, StoreEntry, ResidencyBudget
from .blocks import BlockSpec, PrecondBlock, FactorSnapshot, RefreshResult, array_checksum
from .jobs import JobStatus, AsyncJob, FreshnessRecord, HookKind, HookEvent, StalenessPolicy
from .network import CostClass, TopologyGraph, Group, CostLedger
from .coherence_records import CoherenceRecord, CoherenceBudget, SyncResult, SyncReport
from .traces import (StepRecord, StepTimeTrace, SpikeStats, BoundaryExposure, EnergyModel,
                     EfficiencyInput, RunSummary)
from .run_config import (Activation, TaskKind, Task, ModelSpec, SchedulerConfig, TierConfig,
                         TopologyConfig, SimnetConfig, RunSettings, RunConfig)

__all__ = [
    'DenseMatrix', 'Layout', 'SymMatrix', 'EigenPair', 'as_dense', 'packed_length',
    'Method', 'Accumulation', 'OptimizerConfig',
    'TierTag', 'StagedCopy', 'StoreEntry', 'ResidencyBudget',
    'BlockSpec', 'PrecondBlock', 'FactorSnapshot', 'RefreshResult', 'array_checksum',
    'JobStatus', 'AsyncJob', 'FreshnessRecord', 'HookKind', 'HookEvent', 'StalenessPolicy',
    'CostClass', 'TopologyGraph', 'Group', 'CostLedger',
    'CoherenceRecord', 'CoherenceBudget', 'SyncResult', 'SyncReport',
    'StepRecord', 'StepTimeTrace', 'SpikeStats', 'BoundaryExposure', 'EnergyModel',
    'EfficiencyInput', 'RunSummary',
    'Activation', 'TaskKind', 'Task', 'ModelSpec', 'SchedulerConfig', 'TierConfig',
    'TopologyConfig', 'SimnetConfig', 'RunSettings', 'RunConfig',
]
