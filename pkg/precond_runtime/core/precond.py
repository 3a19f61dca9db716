"""
Optimizer state machines and update rules.

Implements parameter blocking under the block dimension limit, Kronecker
factor accumulation, the inverse-root refresh (split into a pure compute
half that may run on a worker and an install half that runs on the
training thread), Shampoo and SOAP preconditioning, the AdamW baseline, and
the parameter update.
"""

import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ConfigInvalidError, NonFiniteError, ShapeMismatchError, StaleUninitializedError
from ..models.blocks import BlockSpec, FactorSnapshot, PrecondBlock, RefreshResult
from ..models.matrices import Layout, SymMatrix, as_dense
from ..models.optimizer_config import Accumulation, Method, OptimizerConfig
from .. import config
from .densela import gram_left, gram_right, inv_root, sym_eig, symmetrize

logger = logging.getLogger(__name__)


def as_matrix_shape(shape: Sequence[int]) -> Tuple[int, int]:
    """Map a parameter shape to the 2-D shape it is blocked as."""
    shape = tuple(int(dim) for dim in shape)
    if len(shape) == 0:
        return (1, 1)
    if len(shape) == 1:
        return (shape[0], 1)
    return (int(np.prod(shape[:-1])), shape[-1])


def partition_param(shape: Sequence[int], limit: int, param_id: str = "param") -> List[BlockSpec]:
    """
    Tile a parameter into blocks with sides no larger than limit.

    Tiles are listed row-major; remainder tiles come last in each direction.

    Args:
        shape (Sequence[int]): Parameter shape (scalars and vectors allowed)
        limit (int): Maximum block side
        param_id (str): Identifier of the parameter

    Returns:
        List[BlockSpec]: Tiles covering the parameter exactly once
    """
    if limit < 1:
        raise ConfigInvalidError(f"block_dim_limit must be at least 1, got {limit}")
    rows, cols = as_matrix_shape(shape)
    specs = []
    for row_start in range(0, rows, limit):
        for col_start in range(0, cols, limit):
            specs.append(BlockSpec(param_id,
                                   (row_start, min(row_start + limit, rows)),
                                   (col_start, min(col_start + limit, cols)),
                                   limit))
    return specs


def _check_gradient(block: PrecondBlock, g) -> np.ndarray:
    """Coerce a gradient block and check it against the block shape."""
    g = as_dense(g, "gradient")
    if g.shape != block.spec.shape:
        raise ShapeMismatchError(
            f"gradient shape {g.shape} does not match block {block.block_id} {block.spec.shape}"
        )
    return g


def accumulate_factors(block: PrecondBlock, g, cfg: OptimizerConfig) -> PrecondBlock:
    """
    Fold a gradient block into the Kronecker factors.

    Sum mode adds G·Gᵀ and Gᵀ·G; EMA mode blends them in with
    cfg.accumulation_beta.

    Raises:
        ShapeMismatchError: If g does not match the block
        NonFiniteError: If g contains NaN or Inf
    """
    g = _check_gradient(block, g)
    left = gram_left(g).storage
    right = gram_right(g).storage

    if cfg.resolved_accumulation == Accumulation.SUM:
        new_L = block.L.to_array() + left
        new_R = block.R.to_array() + right
    else:
        beta = cfg.accumulation_beta
        new_L = beta * block.L.to_array() + (1.0 - beta) * left
        new_R = beta * block.R.to_array() + (1.0 - beta) * right

    block.L = SymMatrix(block.spec.rows, new_L, Layout.FULL, validate=False)
    block.R = SymMatrix(block.spec.cols, new_R, Layout.FULL, validate=False)
    return block


def take_snapshot(block: PrecondBlock, step: int) -> FactorSnapshot:
    """Copy a block's factors for an off-thread refresh."""
    return FactorSnapshot(block.block_id, step, block.L.to_array(), block.R.to_array())


def compute_refresh(snapshot: FactorSnapshot, cfg: OptimizerConfig) -> RefreshResult:
    """
    Compute refreshed preconditioner tensors from a snapshot.

    Pure over its inputs; safe on any worker thread.

    Raises:
        NotPSDError: If a damped factor is not positive definite
        NoConvergenceError: If the eigensolver fails
    """
    L = SymMatrix(snapshot.L.shape[0], snapshot.L, Layout.FULL, validate=False)
    R = SymMatrix(snapshot.R.shape[0], snapshot.R, Layout.FULL, validate=False)

    if cfg.method == Method.SOAP:
        return RefreshResult(snapshot.block_id, snapshot.step,
                             eig_L=sym_eig(L, cfg.eig_method), eig_R=sym_eig(R, cfg.eig_method))

    inv_L = inv_root(L, config.ROOT_ORDER, cfg.damping, method=cfg.eig_method)
    inv_R = inv_root(R, config.ROOT_ORDER, cfg.damping, method=cfg.eig_method)
    return RefreshResult(snapshot.block_id, snapshot.step, inv_L=inv_L, inv_R=inv_R)


def install_refresh(block: PrecondBlock, result: RefreshResult, step: int) -> PrecondBlock:
    """
    Install a refresh result into a block.

    Bumps the version by one and records the install step. For SOAP, the
    rotated moments are re-projected from the installed basis to the new
    one: m' = A·m·Bᵀ and v' = (A∘A)·v·(B∘B)ᵀ with A = Q_L,newᵀ·Q_L,old and
    B = Q_R,newᵀ·Q_R,old.
    """
    if result.block_id != block.block_id:
        raise ShapeMismatchError(f"result for {result.block_id} cannot install into {block.block_id}")

    if result.is_soap:
        if block.eig_L is not None and block.eig_R is not None:
            rot_L = result.eig_L.vectors.T @ block.eig_L.vectors
            rot_R = result.eig_R.vectors.T @ block.eig_R.vectors
            block.rotated_m = rot_L @ block.rotated_m @ rot_R.T
            block.rotated_v = np.maximum((rot_L * rot_L) @ block.rotated_v @ (rot_R * rot_R).T, 0.0)
        block.eig_L = result.eig_L
        block.eig_R = result.eig_R
    else:
        block.inv_L = result.inv_L
        block.inv_R = result.inv_R

    block.version = block.version + 1
    block.last_refresh_step = step
    block.source_snapshot_step = result.snapshot_step
    return block


def refresh_inverse(block: PrecondBlock, cfg: OptimizerConfig, step: int) -> PrecondBlock:
    """
    Refresh a block's preconditioner without touching the input block.

    Returns:
        PrecondBlock: A copy with the refresh installed
    """
    result = compute_refresh(take_snapshot(block, step), cfg)
    return install_refresh(block.copy(), result, step)


def _require_initialized(block: PrecondBlock) -> None:
    """Reject consumption before the first installed refresh."""
    if block.version == 0:
        raise StaleUninitializedError(f"block {block.block_id} has no installed preconditioner")


def precondition_shampoo(block: PrecondBlock, g, inv_L: Optional[np.ndarray] = None,
                         inv_R: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Return inv_L · G · inv_R.

    inv_L and inv_R default to the block's installed factors; the harness
    passes the copies it read from the tier store.

    Raises:
        StaleUninitializedError: If no refresh has been installed
    """
    _require_initialized(block)
    g = _check_gradient(block, g)
    left = block.inv_L.to_array() if inv_L is None else inv_L
    right = block.inv_R.to_array() if inv_R is None else inv_R
    return left @ g @ right


def precondition_soap(block: PrecondBlock, g, cfg: OptimizerConfig, step: int,
                      Q_L: Optional[np.ndarray] = None,
                      Q_R: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Adam in the eigenbasis of the factors: Q_L · φ(Q_Lᵀ · G · Q_R) · Q_Rᵀ.

    Updates the block's rotated moments in place. Bias correction uses
    t = step + 1.

    Raises:
        StaleUninitializedError: If no basis has been installed
    """
    _require_initialized(block)
    g = _check_gradient(block, g)
    left = block.eig_L.vectors if Q_L is None else Q_L
    right = block.eig_R.vectors if Q_R is None else Q_R

    rotated = left.T @ g @ right
    block.rotated_m = cfg.beta1 * block.rotated_m + (1.0 - cfg.beta1) * rotated
    block.rotated_v = cfg.beta2 * block.rotated_v + (1.0 - cfg.beta2) * rotated * rotated

    t = step + 1
    m_hat = block.rotated_m / (1.0 - cfg.beta1 ** t)
    v_hat = block.rotated_v / (1.0 - cfg.beta2 ** t)
    return left @ (m_hat / (np.sqrt(v_hat) + cfg.eps)) @ right.T


class AdamState:
    """First and second moments of a diagonally preconditioned parameter."""

    def __init__(self, shape: Tuple[int, ...]):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)

    def copy(self) -> 'AdamState':
        """Return a deep copy."""
        clone = AdamState(self.m.shape)
        clone.m = self.m.copy()
        clone.v = self.v.copy()
        return clone


def adamw_step(state: AdamState, g, cfg: OptimizerConfig, step: int) -> np.ndarray:
    """
    Advance Adam moments and return the bias-corrected direction.

    Weight decay is applied by apply_update, never to the moments.

    Raises:
        NonFiniteError: If g contains NaN or Inf
    """
    g = np.asarray(g, dtype=np.float64)
    if g.shape != state.m.shape:
        raise ShapeMismatchError(f"gradient shape {g.shape} does not match {state.m.shape}")
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("gradient contains non-finite entries")

    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * g * g

    t = step + 1
    m_hat = state.m / (1.0 - cfg.beta1 ** t)
    v_hat = state.v / (1.0 - cfg.beta2 ** t)
    return m_hat / (np.sqrt(v_hat) + cfg.eps)


def apply_update(theta, update, cfg: OptimizerConfig, lr: Optional[float] = None) -> np.ndarray:
    """
    Return θ − lr·(update + weight_decay·θ).

    Args:
        theta: Parameter values
        update: Preconditioned direction of the same shape
        cfg (OptimizerConfig): Supplies lr and weight_decay
        lr (float, optional): Overrides cfg.lr (warmup)

    Raises:
        ShapeMismatchError: If shapes differ
        NonFiniteError: If the result is not finite
    """
    theta = np.asarray(theta, dtype=np.float64)
    update = np.asarray(update, dtype=np.float64)
    if theta.shape != update.shape:
        raise ShapeMismatchError(f"update shape {update.shape} does not match {theta.shape}")
    rate = cfg.lr if lr is None else lr
    result = theta - rate * (update + cfg.weight_decay * theta)
    if not np.all(np.isfinite(result)):
        raise NonFiniteError("parameter update produced non-finite values")
    return result


# Update-rule registry. A rule maps (state, gradient, cfg, step, tensors) to a
# preconditioned direction; `state` is a PrecondBlock for second-order rules
# and an AdamState for diagonal ones.
UpdateRule = Callable[[object, np.ndarray, OptimizerConfig, int, Dict[str, np.ndarray]], np.ndarray]

_UPDATE_RULES: Dict[str, UpdateRule] = {}


def register_update_rule(name: str, rule: UpdateRule, replace: bool = False) -> None:
    """
    Register a preconditioning rule under a method name.

    Raises:
        ConfigInvalidError: If the name is taken and replace is False
    """
    if name in _UPDATE_RULES and not replace:
        raise ConfigInvalidError(f"update rule '{name}' is already registered")
    _UPDATE_RULES[name] = rule
    logger.debug(f"Registered update rule {name}")


def get_update_rule(method) -> UpdateRule:
    """
    Look up the rule for a method (Method or name).

    Raises:
        ConfigInvalidError: If no rule is registered
    """
    name = method.value if isinstance(method, Method) else str(method)
    try:
        return _UPDATE_RULES[name]
    except KeyError:
        raise ConfigInvalidError(
            f"no update rule registered for '{name}' (known: {', '.join(sorted(_UPDATE_RULES))})"
        )


def registered_update_rules() -> List[str]:
    """Return the registered method names."""
    return sorted(_UPDATE_RULES)


register_update_rule(
    Method.ADAMW.value,
    lambda state, g, cfg, step, tensors: adamw_step(state, g, cfg, step))
register_update_rule(
    Method.SHAMPOO.value,
    lambda block, g, cfg, step, tensors: precondition_shampoo(
        block, g, tensors.get('inv_L'), tensors.get('inv_R')))
register_update_rule(
    Method.SOAP.value,
    lambda block, g, cfg, step, tensors: precondition_soap(
        block, g, cfg, step, tensors.get('Q_L'), tensors.get('Q_R')))


class ParamState:
    """
    Optimizer state of one parameter.

    Second-order methods keep one PrecondBlock per tile; AdamW, and any
    parameter that is not a matrix, keeps an AdamState instead.
    """

    def __init__(self, name: str, shape: Tuple[int, ...], cfg: OptimizerConfig):
        self.name = name
        self.shape = tuple(shape)
        self.second_order = cfg.method.is_second_order and len(self.shape) == 2
        self.specs = partition_param(self.shape, cfg.block_dim_limit, name) if self.second_order else []
        self.blocks: Dict[str, PrecondBlock] = {spec.block_id: PrecondBlock(spec) for spec in self.specs}
        self.adam = None if self.second_order else AdamState(self.shape)

    def block_gradients(self, g: np.ndarray):
        """Yield (block, gradient tile) pairs in tile order."""
        for spec in self.specs:
            yield self.blocks[spec.block_id], g[spec.slices()]

    def copy(self) -> 'ParamState':
        """Return a deep copy."""
        clone = ParamState.__new__(ParamState)
        clone.name = self.name
        clone.shape = self.shape
        clone.second_order = self.second_order
        clone.specs = list(self.specs)
        clone.blocks = {block_id: block.copy() for block_id, block in self.blocks.items()}
        clone.adam = None if self.adam is None else self.adam.copy()
        return clone

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        return f"ParamState({self.name}, shape={self.shape}, blocks={len(self.blocks)})"
