"""
Configuration settings for the Shadow Preconditioner Runtime.

This module contains the default values for every configurable part of the
runtime: optimizer hyperparameters, the asynchronous scheduler, the tier
store, the simulated network, the training harness and the metrics layer.
Run configurations loaded from JSON fall back to these values for any key
they leave out.
"""

from pathlib import Path

# Application Information
APP_NAME = "Shadow Preconditioner Runtime"
APP_VERSION = "1.0.0"
APP_DESCRIPTION = "Asynchronous Kronecker-factored preconditioning with tiered state"

# File Paths
BASE_DIR = Path(__file__).parent
LOGS_DIR = BASE_DIR / "logs"
RUNS_DIR = Path.cwd() / "runs"

# Run Output Files
LOSS_FILE_NAME = "loss.csv"
SERIES_FILE_NAME = "series.csv"
TRACE_FILE_NAME = "trace.jsonl"
SUMMARY_JSON_NAME = "summary.json"
SUMMARY_MD_NAME = "summary.md"
CONFIG_FILE_NAME = "config.json"
SWEEP_FILE_NAME = "sweep.csv"
REPORT_MD_NAME = "report.md"
REPORT_CSV_NAME = "report.csv"
REPORT_SERIES_NAME = "report_series.csv"

# Optimizer Defaults
DEFAULT_METHOD = "Shampoo"
DEFAULT_LR = 3e-3
DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.999
DEFAULT_EPS = 1e-8
DEFAULT_WEIGHT_DECAY = 0.0
DEFAULT_PRECONDITION_FREQUENCY = 10
DEFAULT_BLOCK_DIM_LIMIT = 2048
SOAP_ACCUMULATION_BETA = 0.95
ROOT_ORDER = 4

# Dense Linear Algebra
RELATIVE_DAMPING = 1e-8
DEFAULT_EIG_METHOD = "jacobi"  # jacobi or eigh
JACOBI_MAX_SWEEPS = 30
JACOBI_TOLERANCE = 1e-12
SYMMETRY_TOLERANCE = 1e-12

# Scheduler Defaults
DEFAULT_STALENESS_S = 5
STALENESS_UNITS = ("steps", "pf")
DEFAULT_STALENESS_UNIT = "steps"
TIMING_MODES = ("simulated", "wall")
DEFAULT_TIMING = "simulated"
DEFAULT_POOL_SIZE = 0  # 0 means min(blocks, available parallelism)
DEFAULT_JOB_DELAY_STEPS = 0.0
DEFAULT_STEP_COMPUTE_US = 10000.0
DEFAULT_INSTALL_US_PER_MIB = 50.0
HOOK_DRAIN_BUDGET = 4

# Tier Store Defaults
DEFAULT_HOT_CAPACITY_BYTES = 256 * 1024 * 1024
DEFAULT_HOST_CAPACITY_BYTES = 1024 * 1024 * 1024
DEFAULT_TRANSFER_BANDWIDTH = 0.0  # bytes/sec, 0 means instantaneous
DEFAULT_TRANSFER_LATENCY_US = 0.0
COLD_FILE_MAGIC = b"ASTRCOLD"
COLD_RECORD_VERSION = 1
VISIBLE_MODES = ("prefetch", "explicit")
PAGING_MODES = ("none", "backward_jit")
DEFAULT_PLACEMENT = {
    'L': 'hot',
    'R': 'hot',
    'inv_L': 'host',
    'inv_R': 'host',
    'Q_L': 'host',
    'Q_R': 'host',
}

# Coherence Defaults
DEFAULT_COHERENCE_BUDGET = 4
INTRA_NODE_COST = 1
INTER_NODE_COST = 10

# Simulated Network Defaults
DEFAULT_NODES = 1
DEFAULT_RANKS_PER_NODE = 1
DEFAULT_INTRA_LATENCY_US = 5.0
DEFAULT_INTER_LATENCY_US = 50.0
DEFAULT_INTRA_BW = 50e9   # bytes/sec
DEFAULT_INTER_BW = 12.5e9  # bytes/sec
DEFAULT_RENDEZVOUS_TIMEOUT_MS = 60000
CHARGING_MODELS = ("star", "ring")
DEFAULT_CHARGING_MODEL = "star"

# Harness Defaults
DEFAULT_STEPS = 200
DEFAULT_BATCH_SIZE = 64
DEFAULT_EVAL_SIZE = 512
DEFAULT_SEED = 0
WARMUP_FRACTION = 0.05
GRAD_CLIP_NORM = 1.0
QUALITY_BAND = 0.02
GRADCHECK_STEP = 1e-5

# Experiment Protocol
STALENESS_SWEEP = (1, 2, 3, 5, 10)
NODE_SWEEP = (2, 4, 8, 16)
BUDGET_SWEEP = (1, 2, 4, 8)
LR_GRID = (1e-3, 3e-3, 1e-2)
RANKING_TARGET_LOSS = 1e-6
RANKING_MAX_STEPS = 3000
QUADRATIC_CONDITION = 1e4

# Metrics Defaults
DEFAULT_VOCAB_SIZE = 32128
DEFAULT_ENERGY_RATES = {
    'trainer': {'compute_watts': 300.0, 'idle_watts': 60.0},
    'host_worker': {'compute_watts': 45.0, 'idle_watts': 5.0},
}

# Exit Codes
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_AUDIT_FAILURE = 3

# Logging Configuration
LOG_LEVEL = 'INFO'
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_FILE_NAME = "precond_runtime.log"
LOG_FILE_MAX_SIZE = 10 * 1024 * 1024  # 10MB
LOG_BACKUP_COUNT = 5

# Development Settings
DEBUG_MODE = False


def get_config(key: str, default=None):
    """Get configuration value by key."""
    return globals().get(key, default)


def update_config(key: str, value):
    """Update configuration value (for runtime changes)."""
    if key in globals():
        globals()[key] = value
        return True
    return False


def get_placement():
    """Get the default tensor-role placement table."""
    return DEFAULT_PLACEMENT.copy()


def get_energy_rates():
    """Get the default per-worker-class energy rates."""
    return {name: rates.copy() for name, rates in DEFAULT_ENERGY_RATES.items()}
