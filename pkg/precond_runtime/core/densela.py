"""
Dense symmetric linear algebra.

Symmetric eigendecomposition, damped inverse p-th roots, Gram products and
packed lower-triangular storage. Every function is pure over its inputs and
may be called from any worker thread.
"""

import logging
from typing import List, Optional, Tuple

import numpy as np

from ..errors import (LayoutMismatchError, NoConvergenceError, NonFiniteError, NotPSDError,
                      ShapeMismatchError)
from ..models.matrices import DenseMatrix, EigenPair, Layout, SymMatrix, as_dense
from .. import config

logger = logging.getLogger(__name__)


def _full_array(m: SymMatrix) -> np.ndarray:
    """Return the full array of a symmetric matrix, checking finiteness."""
    array = m.to_array()
    if not np.all(np.isfinite(array)):
        raise NonFiniteError("symmetric matrix contains NaN or Inf")
    return array


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return 0.5 * (a + aᵀ)."""
    return 0.5 * (a + a.T)


def _round_robin(n: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Split all (p, q) pairs of range(n) into n - 1 rounds of disjoint pairs (p < q)."""
    players = list(range(n + n % 2))
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        pairs = [(players[i], players[size - 1 - i]) for i in range(size // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p < n and q < n]
        if pairs:
            p, q = zip(*pairs)
            rounds.append((np.array(p), np.array(q)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _jacobi_eig(a: np.ndarray, max_sweeps: int, tolerance: float):
    """
    Cyclic Jacobi eigenvalue iteration.

    A sweep visits every (p, q) pair once, in round-robin rounds of disjoint
    pairs; the plane rotations of one round commute and are applied together.
    Sweeps stop once the off-diagonal Frobenius norm drops to
    tolerance * ||a||_F.

    Raises:
        NoConvergenceError: If max_sweeps sweeps do not converge
    """
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    vectors = np.eye(n)
    threshold = tolerance * float(np.linalg.norm(a))
    rounds = _round_robin(n)

    def off_norm():
        return float(np.linalg.norm(a - np.diag(np.diag(a))))

    for sweep in range(max_sweeps):
        if off_norm() <= threshold:
            logger.debug(f"Jacobi converged after {sweep} sweeps (dim {n})")
            return np.diag(a).copy(), vectors
        for p, q in rounds:
            apq = a[p, q]
            active = apq != 0.0
            if not active.any():
                continue
            with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
                theta = np.where(active, (a[q, q] - a[p, p]) / (2.0 * apq), 0.0)
                t = np.where(np.abs(theta) > 1e150, 0.5 / theta,
                             np.where(theta >= 0.0, 1.0, -1.0) / (np.abs(theta) + np.sqrt(theta * theta + 1.0)))
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c

            col_p = a[:, p].copy()
            col_q = a[:, q]
            a[:, p] = c * col_p - s * col_q
            a[:, q] = s * col_p + c * col_q
            row_p = a[p, :].copy()
            row_q = a[q, :]
            a[p, :] = c[:, None] * row_p - s[:, None] * row_q
            a[q, :] = s[:, None] * row_p + c[:, None] * row_q
            a[p, q] = 0.0
            a[q, p] = 0.0

            vec_p = vectors[:, p].copy()
            vec_q = vectors[:, q]
            vectors[:, p] = c * vec_p - s * vec_q
            vectors[:, q] = s * vec_p + c * vec_q

    if off_norm() <= threshold:
        return np.diag(a).copy(), vectors
    raise NoConvergenceError(
        f"Jacobi eigensolver did not converge in {max_sweeps} sweeps "
        f"(off-diagonal norm {off_norm():.3e}, threshold {threshold:.3e})"
    )


def sym_eig(m: SymMatrix, method: Optional[str] = None) -> EigenPair:
    """
    Symmetric eigendecomposition with ascending eigenvalues.

    Args:
        m (SymMatrix): Finite symmetric matrix, full or packed
        method (str, optional): 'jacobi' (cyclic Jacobi) or 'eigh' (LAPACK); defaults to config

    Returns:
        EigenPair: Eigenvalues ascending, orthonormal eigenvector columns

    Raises:
        NonFiniteError: If m contains NaN or Inf
        NoConvergenceError: If the solver fails to converge
    """
    array = _full_array(m)
    method = method or config.DEFAULT_EIG_METHOD

    if method == "jacobi":
        values, vectors = _jacobi_eig(array, config.JACOBI_MAX_SWEEPS, config.JACOBI_TOLERANCE)
    elif method == "eigh":
        try:
            values, vectors = np.linalg.eigh(array)
        except np.linalg.LinAlgError as e:
            raise NoConvergenceError(f"eigh failed: {e}")
    else:
        raise ValueError(f"unknown eigensolver: {method}")

    order = np.argsort(values, kind='stable')
    return EigenPair(values[order], vectors[:, order])


def default_damping(m: SymMatrix) -> float:
    """Return the relative damping RELATIVE_DAMPING * trace / dim."""
    return config.RELATIVE_DAMPING * m.trace() / m.dim


def inv_root(m: SymMatrix, root_order: int = config.ROOT_ORDER, damping: Optional[float] = None,
             method: Optional[str] = None, pair: Optional[EigenPair] = None) -> SymMatrix:
    """
    Compute (m + εI)^(-1/p) through an eigendecomposition.

    Args:
        m (SymMatrix): Symmetric positive semidefinite matrix
        root_order (int): p >= 1
        damping (float, optional): ε; None means relative damping
        method (str, optional): Eigensolver name
        pair (EigenPair, optional): Precomputed decomposition of m

    Returns:
        SymMatrix: Symmetric full-layout result

    Raises:
        NotPSDError: If any damped eigenvalue is not strictly positive
        NonFiniteError: If m or the result is not finite
    """
    if root_order < 1:
        raise ValueError(f"root_order must be positive, got {root_order}")
    eps = default_damping(m) if damping is None else float(damping)
    pair = pair if pair is not None else sym_eig(m, method)

    damped = pair.values + eps
    if np.any(damped <= 0.0):
        raise NotPSDError(
            f"damped eigenvalue {float(np.min(damped)):.3e} is not positive (damping {eps:.3e})"
        )
    scale = damped ** (-1.0 / root_order)
    result = symmetrize((pair.vectors * scale) @ pair.vectors.T)
    if not np.all(np.isfinite(result)):
        raise NonFiniteError("inverse root is not finite")
    return SymMatrix(m.dim, result, Layout.FULL, validate=False)


def pack_spd(m: SymMatrix) -> SymMatrix:
    """
    Convert a full symmetric matrix to packed lower-triangular storage.

    Raises:
        LayoutMismatchError: If m is already packed
    """
    if m.layout != Layout.FULL:
        raise LayoutMismatchError("pack_spd expects a full-layout matrix")
    rows, cols = np.tril_indices(m.dim)
    return SymMatrix(m.dim, m.storage[rows, cols].copy(), Layout.PACKED_LOWER, validate=False)


def unpack_spd(m: SymMatrix) -> SymMatrix:
    """
    Convert a packed lower-triangular matrix to full storage.

    Raises:
        LayoutMismatchError: If m is not packed
    """
    if m.layout != Layout.PACKED_LOWER:
        raise LayoutMismatchError("unpack_spd expects a packed matrix")
    return SymMatrix(m.dim, m.to_array(), Layout.FULL, validate=False)


def packed_saving(dim: int) -> float:
    """Return the fraction of storage saved by packing a dim x dim matrix."""
    return (dim * dim - dim * (dim + 1) / 2) / (dim * dim)


def matmul(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    """
    Multiply two dense matrices.

    Raises:
        ShapeMismatchError: If the inner dimensions differ
    """
    a = as_dense(a, "a")
    b = as_dense(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def gram_left(g: DenseMatrix) -> SymMatrix:
    """Return G·Gᵀ as a full symmetric matrix."""
    g = as_dense(g, "gradient")
    return SymMatrix(g.shape[0], symmetrize(g @ g.T), Layout.FULL, validate=False)


def gram_right(g: DenseMatrix) -> SymMatrix:
    """Return Gᵀ·G as a full symmetric matrix."""
    g = as_dense(g, "gradient")
    return SymMatrix(g.shape[1], symmetrize(g.T @ g), Layout.FULL, validate=False)


def min_eigenvalue(m: SymMatrix) -> float:
    """Return the smallest eigenvalue of m."""
    return float(np.linalg.eigvalsh(_full_array(m))[0])


def is_psd(m: SymMatrix, relative_tolerance: float = 1e-10) -> bool:
    """Check min eigenvalue >= -relative_tolerance * |trace|."""
    return min_eigenvalue(m) >= -relative_tolerance * abs(m.trace())
