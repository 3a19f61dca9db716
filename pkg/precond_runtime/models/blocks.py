"""
Preconditioner block models for the Shadow Preconditioner Runtime.

A parameter matrix is tiled into BlockSpecs no larger than the block
dimension limit. Each tile owns a PrecondBlock holding its Kronecker
factors, the installed inverse factors or eigenbases, SOAP moments, and the
version bookkeeping the scheduler relies on. FactorSnapshot and
RefreshResult are the two halves of an off-thread refresh.
"""

import hashlib
from typing import Dict, Optional, Tuple

import numpy as np

from ..errors import ConfigInvalidError, ShapeMismatchError
from .matrices import EigenPair, SymMatrix
from .store import TierTag


def array_checksum(*arrays: Optional[np.ndarray]) -> str:
    """Return a hex digest over the bytes of the given arrays (None skipped)."""
    digest = hashlib.blake2b(digest_size=16)
    for array in arrays:
        if array is None:
            digest.update(b"\x00")
            continue
        contiguous = np.ascontiguousarray(array)
        digest.update(str(contiguous.shape).encode('utf-8'))
        digest.update(contiguous.tobytes())
    return digest.hexdigest()


class BlockSpec:
    """
    One rectangular tile of a parameter matrix.

    Ranges are half-open [start, stop) index intervals.
    """

    def __init__(self, param_id: str, row_range: Tuple[int, int], col_range: Tuple[int, int],
                 block_dim_limit: int):
        """
        Initialize a BlockSpec.

        Args:
            param_id (str): Identifier of the owning parameter
            row_range (Tuple[int, int]): Row interval [start, stop)
            col_range (Tuple[int, int]): Column interval [start, stop)
            block_dim_limit (int): Maximum side length

        Raises:
            ConfigInvalidError: If an interval is empty or exceeds the limit
        """
        row_range = (int(row_range[0]), int(row_range[1]))
        col_range = (int(col_range[0]), int(col_range[1]))
        for name, (start, stop) in (("row_range", row_range), ("col_range", col_range)):
            if start < 0 or stop <= start:
                raise ConfigInvalidError(f"{name} must be a nonempty interval, got [{start}, {stop})")
            if stop - start > block_dim_limit:
                raise ConfigInvalidError(
                    f"{name} side {stop - start} exceeds block_dim_limit {block_dim_limit}"
                )
        self._param_id = str(param_id)
        self._row_range = row_range
        self._col_range = col_range
        self._block_dim_limit = int(block_dim_limit)

    @property
    def param_id(self) -> str:
        """Get the owning parameter id."""
        return self._param_id

    @property
    def row_range(self) -> Tuple[int, int]:
        """Get the row interval."""
        return self._row_range

    @property
    def col_range(self) -> Tuple[int, int]:
        """Get the column interval."""
        return self._col_range

    @property
    def block_dim_limit(self) -> int:
        """Get the maximum side length."""
        return self._block_dim_limit

    @property
    def rows(self) -> int:
        """Get the number of rows."""
        return self._row_range[1] - self._row_range[0]

    @property
    def cols(self) -> int:
        """Get the number of columns."""
        return self._col_range[1] - self._col_range[0]

    @property
    def shape(self) -> Tuple[int, int]:
        """Get the (rows, cols) shape."""
        return (self.rows, self.cols)

    @property
    def area(self) -> int:
        """Get the number of covered entries."""
        return self.rows * self.cols

    @property
    def block_id(self) -> str:
        """Get a stable identifier for this tile."""
        return (f"{self._param_id}[{self._row_range[0]}:{self._row_range[1]},"
                f"{self._col_range[0]}:{self._col_range[1]}]")

    def slices(self) -> Tuple[slice, slice]:
        """Return the (row, col) slices selecting this tile."""
        return (slice(*self._row_range), slice(*self._col_range))

    def to_dict(self) -> dict:
        """Convert the BlockSpec to a dictionary representation."""
        return {
            'param_id': self._param_id,
            'row_range': list(self._row_range),
            'col_range': list(self._col_range),
            'block_dim_limit': self._block_dim_limit,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'BlockSpec':
        """Create a BlockSpec from a dictionary."""
        return cls(data['param_id'], tuple(data['row_range']), tuple(data['col_range']),
                   data['block_dim_limit'])

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        return f"BlockSpec({self.block_id}, limit={self._block_dim_limit})"

    def __eq__(self, other) -> bool:
        """Check equality of owning parameter and ranges."""
        if not isinstance(other, BlockSpec):
            return False
        return (self._param_id == other._param_id and self._row_range == other._row_range
                and self._col_range == other._col_range)

    def __hash__(self) -> int:
        """Return hash based on the tile identity."""
        return hash((self._param_id, self._row_range, self._col_range))


class PrecondBlock:
    """
    Second-order state of one parameter tile.

    L and R are the left and right Kronecker factors. Shampoo installs
    inv_L and inv_R; SOAP installs eig_L and eig_R and keeps its Adam moments
    in the rotated basis. The version counts installed refreshes.
    """

    def __init__(self, spec: BlockSpec):
        """
        Initialize an empty PrecondBlock for a tile.

        Args:
            spec (BlockSpec): The tile this block preconditions
        """
        self._spec = spec
        self.L = SymMatrix.zeros(spec.rows)
        self.R = SymMatrix.zeros(spec.cols)
        self.inv_L: Optional[SymMatrix] = None
        self.inv_R: Optional[SymMatrix] = None
        self.eig_L: Optional[EigenPair] = None
        self.eig_R: Optional[EigenPair] = None
        self.rotated_m = np.zeros(spec.shape)
        self.rotated_v = np.zeros(spec.shape)
        self.residency: Dict[str, TierTag] = {}
        self._version = 0
        self.last_refresh_step = -1
        self.source_snapshot_step = -1

    @property
    def spec(self) -> BlockSpec:
        """Get the tile bounds."""
        return self._spec

    @property
    def block_id(self) -> str:
        """Get the tile identifier."""
        return self._spec.block_id

    @property
    def version(self) -> int:
        """Get the number of installed refreshes."""
        return self._version

    @version.setter
    def version(self, value: int) -> None:
        """
        Set the installed version.

        Raises:
            ConfigInvalidError: If the version would decrease
        """
        if value < self._version:
            raise ConfigInvalidError(
                f"block {self.block_id} version cannot decrease from {self._version} to {value}"
            )
        self._version = int(value)

    @property
    def is_initialized(self) -> bool:
        """Check whether at least one refresh has been installed."""
        return self._version >= 1

    def factor_checksum(self) -> str:
        """Return a checksum over the current factors."""
        return array_checksum(self.L.to_array(), self.R.to_array())

    def copy(self) -> 'PrecondBlock':
        """Return a deep copy of the block."""
        clone = PrecondBlock(self._spec)
        clone.L = self.L.copy()
        clone.R = self.R.copy()
        clone.inv_L = None if self.inv_L is None else self.inv_L.copy()
        clone.inv_R = None if self.inv_R is None else self.inv_R.copy()
        clone.eig_L = None if self.eig_L is None else self.eig_L.copy()
        clone.eig_R = None if self.eig_R is None else self.eig_R.copy()
        clone.rotated_m = self.rotated_m.copy()
        clone.rotated_v = self.rotated_v.copy()
        clone.residency = dict(self.residency)
        clone._version = self._version
        clone.last_refresh_step = self.last_refresh_step
        clone.source_snapshot_step = self.source_snapshot_step
        return clone

    def to_dict(self) -> dict:
        """
        Convert the block bookkeeping to a dictionary.

        Tensors are not included; they live in the tier store.
        """
        return {
            'block_id': self.block_id,
            'spec': self._spec.to_dict(),
            'version': self._version,
            'last_refresh_step': self.last_refresh_step,
            'source_snapshot_step': self.source_snapshot_step,
            'residency': {role: tag.value for role, tag in sorted(self.residency.items())},
        }

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        return (f"PrecondBlock({self.block_id}, version={self._version}, "
                f"last_refresh_step={self.last_refresh_step})")


class FactorSnapshot:
    """
    Copies of a block's factors taken at dispatch.

    The training thread keeps accumulating into the live factors; the worker
    only ever reads this copy.
    """

    def __init__(self, block_id: str, step: int, L: np.ndarray, R: np.ndarray):
        """
        Initialize a FactorSnapshot from arrays that are copied here.

        Args:
            block_id (str): Source block
            step (int): Dispatch step
            L (np.ndarray): Left factor
            R (np.ndarray): Right factor
        """
        if L.ndim != 2 or R.ndim != 2:
            raise ShapeMismatchError("snapshot factors must be 2-D")
        self.block_id = block_id
        self.step = int(step)
        self.L = np.array(L, dtype=np.float64, copy=True)
        self.R = np.array(R, dtype=np.float64, copy=True)
        self.checksum = self.compute_checksum()

    def compute_checksum(self) -> str:
        """Return a checksum over the snapshot contents."""
        return array_checksum(self.L, self.R)

    @property
    def nbytes(self) -> int:
        """Get the snapshot size in bytes."""
        return int(self.L.nbytes + self.R.nbytes)

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        return f"FactorSnapshot({self.block_id}, step={self.step})"


class RefreshResult:
    """
    Tensors produced by one inverse-root refresh.

    Shampoo results carry inv_L and inv_R. SOAP results carry eig_L and
    eig_R; the moment re-projection happens at install time against
    whichever basis is installed then.
    """

    def __init__(self, block_id: str, snapshot_step: int,
                 inv_L: Optional[SymMatrix] = None, inv_R: Optional[SymMatrix] = None,
                 eig_L: Optional[EigenPair] = None, eig_R: Optional[EigenPair] = None):
        self.block_id = block_id
        self.snapshot_step = int(snapshot_step)
        self.inv_L = inv_L
        self.inv_R = inv_R
        self.eig_L = eig_L
        self.eig_R = eig_R

    @property
    def is_soap(self) -> bool:
        """Check whether the result carries eigenbases."""
        return self.eig_L is not None

    def tensors(self) -> Dict[str, np.ndarray]:
        """Return the installable tensors keyed by role."""
        if self.is_soap:
            return {'Q_L': self.eig_L.vectors, 'Q_R': self.eig_R.vectors}
        return {'inv_L': self.inv_L.to_array(), 'inv_R': self.inv_R.to_array()}

    @property
    def nbytes(self) -> int:
        """Get the total size of the installable tensors."""
        return int(sum(array.nbytes for array in self.tensors().values()))

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        kind = "soap" if self.is_soap else "shampoo"
        return f"RefreshResult({self.block_id}, {kind}, snapshot_step={self.snapshot_step})"
