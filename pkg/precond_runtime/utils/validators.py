"""
Validation utilities for the Shadow Preconditioner Runtime.

This module provides validation functions for run configuration values and
integrity checks over emitted scheduler traces.
"""

import math
from collections import defaultdict
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

from ..errors import ConfigInvalidError

# Validation failures are configuration errors; the CLI maps them to exit code 2.
ValidationError = ConfigInvalidError


class ConfigValidator:
    """
    Validation helpers for configuration values.

    Every method returns the normalized value or raises ValidationError with
    a message naming the offending field.
    """

    @staticmethod
    def validate_int(value: Any, field_name: str, minimum: Optional[int] = None,
                     maximum: Optional[int] = None) -> int:
        """
        Validate an integer field.

        Args:
            value (Any): The value to validate
            field_name (str): Name of the field for error messages
            minimum (int, optional): Smallest allowed value
            maximum (int, optional): Largest allowed value

        Returns:
            int: The validated integer

        Raises:
            ValidationError: If validation fails
        """
        if isinstance(value, bool):
            raise ValidationError(f"{field_name} must be an integer, got a boolean")
        try:
            as_int = int(value)
        except (TypeError, ValueError):
            raise ValidationError(f"{field_name} must be an integer, got {value!r}")
        if isinstance(value, float) and as_int != value:
            raise ValidationError(f"{field_name} must be a whole number, got {value}")
        if isinstance(value, str) and value.strip() != str(as_int):
            raise ValidationError(f"{field_name} must be an integer, got {value!r}")

        if minimum is not None and as_int < minimum:
            raise ValidationError(f"{field_name} must be at least {minimum}, got {as_int}")
        if maximum is not None and as_int > maximum:
            raise ValidationError(f"{field_name} must not exceed {maximum}, got {as_int}")
        return as_int

    @staticmethod
    def validate_float(value: Any, field_name: str, minimum: Optional[float] = None,
                       maximum: Optional[float] = None, allow_inf: bool = False) -> float:
        """
        Validate a float field.

        Args:
            value (Any): The value to validate
            field_name (str): Name of the field for error messages
            minimum (float, optional): Smallest allowed value (inclusive)
            maximum (float, optional): Largest allowed value (inclusive)
            allow_inf (bool): Accept +inf

        Returns:
            float: The validated float

        Raises:
            ValidationError: If validation fails
        """
        if isinstance(value, bool):
            raise ValidationError(f"{field_name} must be a number, got a boolean")
        try:
            as_float = float(value)
        except (TypeError, ValueError):
            raise ValidationError(f"{field_name} must be a number, got {value!r}")

        if math.isnan(as_float) or (math.isinf(as_float) and not (allow_inf and as_float > 0)):
            raise ValidationError(f"{field_name} must be finite, got {as_float}")
        if minimum is not None and as_float < minimum:
            raise ValidationError(f"{field_name} must be at least {minimum}, got {as_float}")
        if maximum is not None and as_float > maximum:
            raise ValidationError(f"{field_name} must not exceed {maximum}, got {as_float}")
        return as_float

    @staticmethod
    def validate_decay(value: Any, field_name: str) -> float:
        """
        Validate a decay coefficient in [0, 1).

        Args:
            value (Any): The value to validate
            field_name (str): Name of the field for error messages

        Returns:
            float: The validated coefficient

        Raises:
            ValidationError: If validation fails
        """
        as_float = ConfigValidator.validate_float(value, field_name, minimum=0.0)
        if as_float >= 1.0:
            raise ValidationError(f"{field_name} must be below 1, got {as_float}")
        return as_float

    @staticmethod
    def validate_choice(value: Any, field_name: str, choices: Sequence[str]) -> str:
        """
        Validate that a string is one of the allowed choices.

        Args:
            value (Any): The value to validate
            field_name (str): Name of the field for error messages
            choices (Sequence[str]): Allowed values

        Returns:
            str: The validated choice

        Raises:
            ValidationError: If validation fails
        """
        if not isinstance(value, str) or value not in choices:
            raise ValidationError(f"{field_name} must be one of {', '.join(choices)}, got {value!r}")
        return value

    @staticmethod
    def validate_bool(value: Any, field_name: str) -> bool:
        """
        Validate a boolean flag.

        Args:
            value (Any): The value to validate
            field_name (str): Name of the field for error messages

        Returns:
            bool: The validated flag

        Raises:
            ValidationError: If validation fails
        """
        if not isinstance(value, bool):
            raise ValidationError(f"{field_name} must be true or false, got {value!r}")
        return value

    @staticmethod
    def validate_path(value: Any, field_name: str) -> Path:
        """
        Validate a filesystem path field.

        Args:
            value (Any): The value to validate
            field_name (str): Name of the field for error messages

        Returns:
            Path: The path

        Raises:
            ValidationError: If validation fails
        """
        if isinstance(value, Path):
            return value
        if not isinstance(value, str) or not value.strip():
            raise ValidationError(f"{field_name} must be a non-empty path string")
        return Path(value.strip())

    @staticmethod
    def validate_keys(data: Any, allowed: Iterable[str], section: str) -> Dict[str, Any]:
        """
        Validate that a config section is a mapping with only known keys.

        Args:
            data (Any): The section to validate
            allowed (Iterable[str]): Known keys
            section (str): Section name for error messages

        Returns:
            Dict[str, Any]: A shallow copy of the section

        Raises:
            ValidationError: If validation fails
        """
        if not isinstance(data, dict):
            raise ValidationError(f"section '{section}' must be an object")
        unknown = set(data) - set(allowed)
        if unknown:
            raise ValidationError(f"unknown keys in '{section}': {', '.join(sorted(unknown))}")
        return dict(data)


class TraceIntegrityValidator:
    """
    Validates runtime invariants over emitted trace events.

    Each method returns a list of violation messages; an empty list means the
    trace satisfies the invariant.
    """

    @staticmethod
    def validate_bounded_staleness(events: List[dict], staleness: int, pf: int) -> List[str]:
        """
        Check that every consumption uses a preconditioner of bounded age.

        Args:
            events (List[dict]): Trace events
            staleness (int): Staleness bound S
            pf (int): Precondition frequency

        Returns:
            List[str]: Violations (empty if valid)
        """
        errors = []
        bound = (staleness + 1) * pf
        for event in events:
            if event.get('event') != 'consume':
                continue
            age = event['step'] - event['snapshot_step']
            if age > bound:
                errors.append(
                    f"worker {event['worker']} block {event['block_id']} consumed a preconditioner "
                    f"of age {age} at step {event['step']} (bound {bound})"
                )
        return errors

    @staticmethod
    def validate_coalescing(events: List[dict]) -> List[str]:
        """
        Check that no block ever has two jobs outstanding.

        Args:
            events (List[dict]): Trace events

        Returns:
            List[str]: Violations (empty if valid)
        """
        errors = []
        outstanding = defaultdict(int)
        for event in events:
            key = (event.get('worker'), event.get('block_id'))
            if event.get('event') == 'dispatch':
                outstanding[key] += 1
                if outstanding[key] > 1:
                    errors.append(
                        f"worker {key[0]} block {key[1]} has {outstanding[key]} pending jobs "
                        f"at step {event['step']}"
                    )
            elif event.get('event') == 'install':
                outstanding[key] = max(0, outstanding[key] - 1)
        return errors

    @staticmethod
    def validate_hook_ordering(events: List[dict]) -> List[str]:
        """
        Check per-worker hook ordering.

        Every step must show a BackwardPre hook before its StepEnd hook, and
        StepEnd steps must be strictly increasing.

        Args:
            events (List[dict]): Trace events

        Returns:
            List[str]: Violations (empty if valid)
        """
        errors = []
        saw_backward = defaultdict(set)
        last_step_end = {}
        for event in events:
            if event.get('event') != 'hook':
                continue
            worker = event['worker']
            step = event['step']
            if event['hook'] == 'BackwardPre':
                saw_backward[worker].add(step)
            elif event['hook'] == 'StepEnd':
                if step not in saw_backward[worker]:
                    errors.append(f"worker {worker} step {step}: StepEnd without a preceding BackwardPre")
                previous = last_step_end.get(worker)
                if previous is not None and step <= previous:
                    errors.append(f"worker {worker}: StepEnd step {step} does not follow {previous}")
                last_step_end[worker] = step
        return errors

    @staticmethod
    def validate_versions(events: List[dict]) -> List[str]:
        """
        Check that installed versions strictly increase per block.

        Args:
            events (List[dict]): Trace events

        Returns:
            List[str]: Violations (empty if valid)
        """
        errors = []
        last_version = {}
        for event in events:
            if event.get('event') != 'install':
                continue
            key = (event['worker'], event['block_id'])
            previous = last_version.get(key, 0)
            if event['version'] <= previous:
                errors.append(
                    f"worker {key[0]} block {key[1]}: version {event['version']} after {previous}"
                )
            last_version[key] = event['version']
        return errors

    @staticmethod
    def validate_all(events: List[dict], staleness: int, pf: int) -> List[str]:
        """Run every trace check and concatenate the violations."""
        return (TraceIntegrityValidator.validate_bounded_staleness(events, staleness, pf)
                + TraceIntegrityValidator.validate_coalescing(events)
                + TraceIntegrityValidator.validate_hook_ordering(events)
                + TraceIntegrityValidator.validate_versions(events))
