"""
Shadow Preconditioner Runtime

Asynchronous Kronecker-factored preconditioning (Shampoo and SOAP) with
tiered optimizer state, bounded-staleness refresh and hierarchical
cross-rank coherence, run over a deterministic simulated cluster.

The package provides:

- Dense linear algebra: symmetric eigendecomposition and inverse p-th roots
- Preconditioner engine: factor accumulation, refresh and update rules
- Tier store: Hot / Host / Cold residency with prefetch and eviction
- Shadow scheduler: off-path refresh jobs under a staleness bound
- Coherence: budgeted hierarchical synchronization of replicas
- Training harness and trace metrics, with a command-line interface

Usage:
    from precond_runtime import RunConfig, run_training
    summary = run_training(RunConfig())

Or run directly:
    python -m precond_runtime.main train --config c.json
"""

__version__ = "1.0.0"
__license__ = "MIT"

# Package metadata
__title__ = "Shadow Preconditioner Runtime"
__description__ = "Asynchronous Kronecker-factored preconditioning with tiered state"

# Version info tuple
VERSION_INFO = tuple(int(part) for part in __version__.split('.'))

from .errors import PrecondRuntimeError, ConfigInvalidError, InvariantAuditError
from .models import RunConfig, OptimizerConfig, Method, RunSummary
from .core import run_training, reference_training, sweep, bench_spikes, rank_optimizers, report

__all__ = [
    'PrecondRuntimeError',
    'ConfigInvalidError',
    'InvariantAuditError',
    'RunConfig',
    'OptimizerConfig',
    'Method',
    'RunSummary',
    'run_training',
    'reference_training',
    'sweep',
    'bench_spikes',
    'rank_optimizers',
    'report',
]


def get_version():
    """Return the version string."""
    return __version__
