"""
Core package for the Shadow Preconditioner Runtime.

This package contains the runtime modules: dense linear algebra, the
preconditioner engine, the tier store, the asynchronous scheduler, the
coherence protocol, the simulated network, the training harness and the
metrics layer.
"""

from .densela import sym_eig, inv_root, pack_spd, unpack_spd, matmul, gram_left, gram_right
from .precond import (partition_param, accumulate_factors, take_snapshot, compute_refresh,
                      install_refresh, refresh_inverse, precondition_shampoo, precondition_soap,
                      adamw_step, apply_update, register_update_rule, get_update_rule, ParamState)
from .tierstore import TierStore, ColdFile
from .simnet import SimClock, SimNetwork, Communicator, flat_ring_bytes
from .asyncsched import ShadowScheduler
from .coherence import CoherenceRegistry, CoherenceEngine, discover_topology, select_stale
from .metrics import spike_stats, exposure_breakdown, compute_eta, report
from .harness import run_training, reference_training, gradient_check, sweep, rank_optimizers, bench_spikes

__all__ = [
    'sym_eig', 'inv_root', 'pack_spd', 'unpack_spd', 'matmul', 'gram_left', 'gram_right',
    'partition_param', 'accumulate_factors', 'take_snapshot', 'compute_refresh',
    'install_refresh', 'refresh_inverse', 'precondition_shampoo', 'precondition_soap',
    'adamw_step', 'apply_update', 'register_update_rule', 'get_update_rule', 'ParamState',
    'TierStore', 'ColdFile',
    'SimClock', 'SimNetwork', 'Communicator', 'flat_ring_bytes',
    'ShadowScheduler',
    'CoherenceRegistry', 'CoherenceEngine', 'discover_topology', 'select_stale',
    'spike_stats', 'exposure_breakdown', 'compute_eta', 'report',
    'run_training', 'reference_training', 'gradient_check', 'sweep', 'rank_optimizers', 'bench_spikes',
]
