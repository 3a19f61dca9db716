"""
OptimizerConfig model for the Shadow Preconditioner Runtime.

This module defines the optimizer method and accumulation enumerations and
the OptimizerConfig class that carries every hyperparameter of the AdamW,
Shampoo and SOAP update rules.
"""

from enum import Enum
from typing import Optional

from ..errors import ConfigInvalidError
from ..utils.validators import ConfigValidator
from .. import config


class Method(Enum):
    """Enumeration of optimizer methods."""
    ADAMW = "AdamW"
    SHAMPOO = "Shampoo"
    SOAP = "SOAP"

    @property
    def is_second_order(self) -> bool:
        """Check whether the method keeps Kronecker factors."""
        return self != Method.ADAMW


class Accumulation(Enum):
    """Enumeration of factor accumulation modes."""
    SUM = "Sum"
    EMA = "EMA"


def _parse_enum(enum_cls, value, field_name: str):
    """Parse an enum from an instance, a value string or a member name."""
    if isinstance(value, enum_cls):
        return value
    if isinstance(value, str):
        for member in enum_cls:
            if value.lower() in (member.value.lower(), member.name.lower()):
                return member
    choices = ', '.join(member.value for member in enum_cls)
    raise ConfigInvalidError(f"{field_name} must be one of {choices}, got {value!r}")


class OptimizerConfig:
    """
    Hyperparameters for one optimizer run.

    Accumulation and damping may be left unset: accumulation then follows the
    method (Sum for Shampoo, EMA for SOAP) and damping is relative to the
    factor trace.
    """

    FIELDS = (
        'method', 'lr', 'beta1', 'beta2', 'eps', 'weight_decay',
        'precondition_frequency', 'accumulation', 'accumulation_beta',
        'damping', 'block_dim_limit', 'eig_method',
    )

    def __init__(self, method=config.DEFAULT_METHOD, lr: float = config.DEFAULT_LR,
                 beta1: float = config.DEFAULT_BETA1, beta2: float = config.DEFAULT_BETA2,
                 eps: float = config.DEFAULT_EPS,
                 weight_decay: float = config.DEFAULT_WEIGHT_DECAY,
                 precondition_frequency: int = config.DEFAULT_PRECONDITION_FREQUENCY,
                 accumulation=None,
                 accumulation_beta: float = config.SOAP_ACCUMULATION_BETA,
                 damping: Optional[float] = None,
                 block_dim_limit: int = config.DEFAULT_BLOCK_DIM_LIMIT,
                 eig_method: str = config.DEFAULT_EIG_METHOD):
        """
        Initialize an OptimizerConfig.

        Args:
            method (Method or str): AdamW, Shampoo or SOAP
            lr (float): Learning rate
            beta1 (float): First-moment decay
            beta2 (float): Second-moment decay
            eps (float): Adam denominator epsilon
            weight_decay (float): Decoupled weight decay
            precondition_frequency (int): Steps between inverse-root refreshes
            accumulation (Accumulation or str, optional): Sum or EMA
            accumulation_beta (float): Decay used by EMA accumulation
            damping (float, optional): Absolute damping; None means relative
            block_dim_limit (int): Maximum preconditioner side length
            eig_method (str): jacobi or eigh

        Raises:
            ConfigInvalidError: If any value is out of range
        """
        self.method = method
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.precondition_frequency = precondition_frequency
        self.accumulation = accumulation
        self.accumulation_beta = accumulation_beta
        self.damping = damping
        self.block_dim_limit = block_dim_limit
        self.eig_method = eig_method

    @property
    def method(self) -> Method:
        """Get the optimizer method."""
        return self._method

    @method.setter
    def method(self, value) -> None:
        """Set the optimizer method."""
        self._method = _parse_enum(Method, value, "method")

    @property
    def lr(self) -> float:
        """Get the learning rate."""
        return self._lr

    @lr.setter
    def lr(self, value: float) -> None:
        """Set the learning rate (nonnegative)."""
        self._lr = ConfigValidator.validate_float(value, "lr", minimum=0.0)

    @property
    def beta1(self) -> float:
        """Get the first-moment decay."""
        return self._beta1

    @beta1.setter
    def beta1(self, value: float) -> None:
        """Set the first-moment decay in [0, 1)."""
        self._beta1 = ConfigValidator.validate_decay(value, "beta1")

    @property
    def beta2(self) -> float:
        """Get the second-moment decay."""
        return self._beta2

    @beta2.setter
    def beta2(self, value: float) -> None:
        """Set the second-moment decay in [0, 1)."""
        self._beta2 = ConfigValidator.validate_decay(value, "beta2")

    @property
    def accumulation_beta(self) -> float:
        """Get the EMA decay for factor accumulation."""
        return self._accumulation_beta

    @accumulation_beta.setter
    def accumulation_beta(self, value: float) -> None:
        """Set the EMA decay for factor accumulation in [0, 1)."""
        self._accumulation_beta = ConfigValidator.validate_decay(value, "accumulation_beta")

    @property
    def eps(self) -> float:
        """Get the Adam denominator epsilon."""
        return self._eps

    @eps.setter
    def eps(self, value: float) -> None:
        """Set the Adam denominator epsilon (nonnegative)."""
        self._eps = ConfigValidator.validate_float(value, "eps", minimum=0.0)

    @property
    def weight_decay(self) -> float:
        """Get the decoupled weight decay."""
        return self._weight_decay

    @weight_decay.setter
    def weight_decay(self, value: float) -> None:
        """Set the decoupled weight decay (nonnegative)."""
        self._weight_decay = ConfigValidator.validate_float(value, "weight_decay", minimum=0.0)

    @property
    def precondition_frequency(self) -> int:
        """Get the precondition frequency pf."""
        return self._precondition_frequency

    @precondition_frequency.setter
    def precondition_frequency(self, value: int) -> None:
        """Set the precondition frequency (pf >= 1)."""
        self._precondition_frequency = ConfigValidator.validate_int(
            value, "precondition_frequency", minimum=1)

    @property
    def pf(self) -> int:
        """Short alias for precondition_frequency."""
        return self._precondition_frequency

    @property
    def accumulation(self) -> Optional[Accumulation]:
        """Get the configured accumulation mode (None means method default)."""
        return self._accumulation

    @accumulation.setter
    def accumulation(self, value) -> None:
        """Set the accumulation mode."""
        self._accumulation = None if value is None else _parse_enum(Accumulation, value, "accumulation")

    @property
    def resolved_accumulation(self) -> Accumulation:
        """Get the accumulation mode after applying the per-method default."""
        if self._accumulation is not None:
            return self._accumulation
        return Accumulation.EMA if self._method == Method.SOAP else Accumulation.SUM

    @property
    def damping(self) -> Optional[float]:
        """Get the absolute damping (None means relative to the trace)."""
        return self._damping

    @damping.setter
    def damping(self, value: Optional[float]) -> None:
        """Set the absolute damping."""
        if value is not None:
            value = ConfigValidator.validate_float(value, "damping", minimum=0.0)
        self._damping = value

    @property
    def block_dim_limit(self) -> int:
        """Get the maximum preconditioner side length."""
        return self._block_dim_limit

    @block_dim_limit.setter
    def block_dim_limit(self, value: int) -> None:
        """Set the maximum preconditioner side length (>= 1)."""
        self._block_dim_limit = ConfigValidator.validate_int(value, "block_dim_limit", minimum=1)

    @property
    def eig_method(self) -> str:
        """Get the eigensolver name."""
        return self._eig_method

    @eig_method.setter
    def eig_method(self, value: str) -> None:
        """Set the eigensolver name."""
        self._eig_method = ConfigValidator.validate_choice(value, "eig_method", ("eigh", "jacobi"))

    def replace(self, **changes) -> 'OptimizerConfig':
        """Return a copy with some fields changed."""
        data = self.to_dict()
        data.update(changes)
        return OptimizerConfig.from_dict(data)

    def to_dict(self) -> dict:
        """
        Convert the OptimizerConfig to a dictionary representation.

        Returns:
            dict: Field names mapped to JSON-compatible values
        """
        return {
            'method': self.method.value,
            'lr': self.lr,
            'beta1': self.beta1,
            'beta2': self.beta2,
            'eps': self.eps,
            'weight_decay': self.weight_decay,
            'precondition_frequency': self.precondition_frequency,
            'accumulation': None if self.accumulation is None else self.accumulation.value,
            'accumulation_beta': self.accumulation_beta,
            'damping': self.damping,
            'block_dim_limit': self.block_dim_limit,
            'eig_method': self.eig_method,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'OptimizerConfig':
        """
        Create an OptimizerConfig from a dictionary.

        The key 'pf' is accepted as an alias for 'precondition_frequency'.

        Args:
            data (dict): Field values

        Returns:
            OptimizerConfig: New instance

        Raises:
            ConfigInvalidError: If keys are unknown or values invalid
        """
        data = dict(data)
        if 'pf' in data:
            if 'precondition_frequency' in data and data['precondition_frequency'] != data['pf']:
                raise ConfigInvalidError("both 'pf' and 'precondition_frequency' given with different values")
            data['precondition_frequency'] = data.pop('pf')
        unknown = set(data) - set(cls.FIELDS)
        if unknown:
            raise ConfigInvalidError(f"unknown optimizer keys: {', '.join(sorted(unknown))}")
        return cls(**data)

    def __repr__(self) -> str:
        """Return detailed string representation for debugging."""
        return (f"OptimizerConfig(method={self.method.value}, lr={self.lr}, "
                f"pf={self.precondition_frequency}, "
                f"accumulation={self.resolved_accumulation.value})")

    def __eq__(self, other) -> bool:
        """Check equality of all fields."""
        if not isinstance(other, OptimizerConfig):
            return False
        return self.to_dict() == other.to_dict()

    __hash__ = None
