"""
Matrix types for the Shadow Preconditioner Runtime.

Dense matrices are plain 2-D float64 numpy arrays. Symmetric matrices carry
their storage layout explicitly so that packed lower-triangular buffers and
full buffers are never confused, and eigendecompositions are kept together
with their ascending eigenvalues.
"""

from enum import Enum

import numpy as np

from ..errors import LayoutMismatchError, NonFiniteError, ShapeMismatchError
from .. import config

# A dense matrix is a C-contiguous 2-D float64 numpy array.
DenseMatrix = np.ndarray


class Layout(Enum):
    """Storage layouts for symmetric matrices."""
    FULL = "full"
    PACKED_LOWER = "packed_lower"


def packed_length(dim: int) -> int:
    """Return the number of stored values for a packed matrix of size dim."""
    return dim * (dim + 1) // 2


class SymMatrix:
    """
    A symmetric matrix in either full or packed lower-triangular storage.

    Full storage is a (dim, dim) array; packed storage is the row-major lower
    triangle as a flat array of dim*(dim+1)/2 values.
    """

    def __init__(self, dim: int, storage: np.ndarray, layout: Layout = Layout.FULL,
                 validate: bool = True):
        """
        Initialize a SymMatrix.

        Args:
            dim (int): Matrix dimension
            storage (np.ndarray): Backing buffer for the chosen layout
            layout (Layout): FULL or PACKED_LOWER
            validate (bool): Check finiteness and symmetry on construction

        Raises:
            ShapeMismatchError: If the buffer length does not match the layout
            NonFiniteError: If the buffer holds NaN or Inf
            LayoutMismatchError: If a full buffer is not symmetric
        """
        if dim < 1:
            raise ShapeMismatchError(f"dim must be positive, got {dim}")
        storage = np.asarray(storage, dtype=np.float64)

        if layout == Layout.FULL and storage.shape != (dim, dim):
            raise ShapeMismatchError(f"full storage must be {(dim, dim)}, got {storage.shape}")
        if layout == Layout.PACKED_LOWER and storage.shape != (packed_length(dim),):
            raise ShapeMismatchError(
                f"packed storage must have length {packed_length(dim)}, got {storage.shape}"
            )

        if validate:
            if not np.all(np.isfinite(storage)):
                raise NonFiniteError("symmetric matrix contains non-finite entries")
            if layout == Layout.FULL:
                scale = max(1.0, float(np.max(np.abs(storage))))
                asymmetry = float(np.max(np.abs(storage - storage.T)))
                if asymmetry > config.SYMMETRY_TOLERANCE * scale:
                    raise LayoutMismatchError(
                        f"full storage is not symmetric (max deviation {asymmetry:.3e})"
                    )

        self._dim = dim
        self._storage = storage
        self._layout = layout

    @classmethod
    def full(cls, array: np.ndarray, validate: bool = True) -> 'SymMatrix':
        """Wrap a square array as a full-layout symmetric matrix."""
        array = np.asarray(array, dtype=np.float64)
        if array.ndim != 2 or array.shape[0] != array.shape[1]:
            raise ShapeMismatchError(f"expected a square matrix, got shape {array.shape}")
        return cls(array.shape[0], array, Layout.FULL, validate=validate)

    @classmethod
    def identity(cls, dim: int) -> 'SymMatrix':
        """Return the dim x dim identity in full layout."""
        return cls(dim, np.eye(dim), Layout.FULL, validate=False)

    @classmethod
    def zeros(cls, dim: int) -> 'SymMatrix':
        """Return the dim x dim zero matrix in full layout."""
        return cls(dim, np.zeros((dim, dim)), Layout.FULL, validate=False)

    @property
    def dim(self) -> int:
        """Get the matrix dimension."""
        return self._dim

    @property
    def storage(self) -> np.ndarray:
        """Get the backing buffer."""
        return self._storage

    @property
    def layout(self) -> Layout:
        """Get the storage layout."""
        return self._layout

    @property
    def is_packed(self) -> bool:
        """Check whether the matrix uses packed storage."""
        return self._layout == Layout.PACKED_LOWER

    @property
    def nbytes(self) -> int:
        """Get the size of the backing buffer in bytes."""
        return int(self._storage.nbytes)

    def to_array(self) -> np.ndarray:
        """
        Return the matrix as a full (dim, dim) array.

        For full storage this is the backing array itself; callers must not
        mutate it.
        """
        if self._layout == Layout.FULL:
            return self._storage
        rows, cols = np.tril_indices(self._dim)
        full = np.zeros((self._dim, self._dim))
        full[rows, cols] = self._storage
        full[cols, rows] = self._storage
        return full

    def copy(self) -> 'SymMatrix':
        """Return a deep copy."""
        return SymMatrix(self._dim, self._storage.copy(), self._layout, validate=False)

    def trace(self) -> float:
        """Return the sum of the diagonal."""
        if self._layout == Layout.FULL:
            return float(np.trace(self._storage))
        diag_positions = np.cumsum(np.arange(1, self._dim + 1)) - 1
        return float(np.sum(self._storage[diag_positions]))

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        return f"SymMatrix(dim={self._dim}, layout={self._layout.value})"

    def __eq__(self, other) -> bool:
        """Check exact equality of layout and stored values."""
        if not isinstance(other, SymMatrix):
            return False
        return (self._dim == other._dim and self._layout == other._layout
                and np.array_equal(self._storage, other._storage))

    __hash__ = None


class EigenPair:
    """Eigenvalues in ascending order with eigenvectors stored as columns."""

    def __init__(self, values: np.ndarray, vectors: np.ndarray):
        """
        Initialize an EigenPair.

        Args:
            values (np.ndarray): Eigenvalues, ascending
            vectors (np.ndarray): Square matrix whose columns are eigenvectors

        Raises:
            ShapeMismatchError: If shapes disagree
            LayoutMismatchError: If values are not sorted ascending
        """
        values = np.asarray(values, dtype=np.float64)
        vectors = np.asarray(vectors, dtype=np.float64)
        if values.ndim != 1 or vectors.shape != (values.shape[0], values.shape[0]):
            raise ShapeMismatchError(
                f"eigenpair shapes disagree: values {values.shape}, vectors {vectors.shape}"
            )
        if values.shape[0] > 1 and np.any(np.diff(values) < 0):
            raise LayoutMismatchError("eigenvalues must be sorted ascending")
        self._values = values
        self._vectors = vectors

    @property
    def values(self) -> np.ndarray:
        """Get the ascending eigenvalues."""
        return self._values

    @property
    def vectors(self) -> np.ndarray:
        """Get the eigenvector matrix (columns)."""
        return self._vectors

    @property
    def dim(self) -> int:
        """Get the problem dimension."""
        return int(self._values.shape[0])

    def orthonormality_error(self) -> float:
        """Return max |VᵀV − I| over all column pairs."""
        gram = self._vectors.T @ self._vectors
        return float(np.max(np.abs(gram - np.eye(self.dim))))

    def reconstruct(self) -> np.ndarray:
        """Return V·diag(λ)·Vᵀ."""
        return (self._vectors * self._values) @ self._vectors.T

    def copy(self) -> 'EigenPair':
        """Return a deep copy."""
        return EigenPair(self._values.copy(), self._vectors.copy())

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        low = self._values[0] if self.dim else float('nan')
        high = self._values[-1] if self.dim else float('nan')
        return f"EigenPair(dim={self.dim}, range=[{low:.3e}, {high:.3e}])"


def as_dense(array, name: str = "matrix", check_finite: bool = True) -> DenseMatrix:
    """
    Coerce input to a 2-D float64 array.

    Args:
        array: Array-like input
        name (str): Name used in error messages
        check_finite (bool): Reject NaN/Inf entries

    Returns:
        DenseMatrix: The coerced array

    Raises:
        ShapeMismatchError: If the input is not 2-D
        NonFiniteError: If check_finite and any entry is NaN or Inf
    """
    dense = np.asarray(array, dtype=np.float64)
    if dense.ndim != 2:
        raise ShapeMismatchError(f"{name} must be 2-D, got shape {dense.shape}")
    if check_finite and not np.all(np.isfinite(dense)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return dense
