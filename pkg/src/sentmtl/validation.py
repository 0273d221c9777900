"""Input validation helpers shared across the package.

Small, sklearn-style ``check_*`` functions that raise early with a message
naming the offending argument, so estimator and analysis entry points fail
before any compute starts.
"""

from __future__ import annotations

import hashlib
from typing import Sequence

import numpy as np


class ValidationError(ValueError):
    """Raised when an input fails a structural or cross-reference check."""


def check_equal_length(a: Sequence, b: Sequence, name_a: str = "a", name_b: str = "b") -> None:
    if len(a) != len(b):
        raise ValidationError(
            f"{name_a} and {name_b} must have equal length, got {len(a)} vs {len(b)}"
        )


def check_probabilities(p, name: str = "p") -> np.ndarray:
    """Coerce to float array and verify every entry is in [0, 1]."""
    arr = np.asarray(p, dtype=float)
    if arr.size == 0:
        raise ValidationError(f"{name} must be non-empty")
    if np.any(arr < 0) or np.any(arr > 1):
        raise ValidationError(f"{name} must lie in [0, 1], got range [{arr.min()}, {arr.max()}]")
    return arr


def check_simplex(p, name: str = "p", tol: float = 1e-6) -> np.ndarray:
    arr = check_probabilities(p, name)
    total = float(arr.sum())
    if abs(total - 1.0) > tol:
        raise ValidationError(f"{name} must sum to 1 (got {total})")
    return arr


def check_binary(y, name: str = "y") -> np.ndarray:
    arr = np.asarray(y, dtype=float)
    if not np.all((arr == 0) | (arr == 1)):
        raise ValidationError(f"{name} must be a 0/1 vector")
    return arr


def check_positive(value, name: str) -> None:
    if value <= 0:
        raise ValidationError(f"{name} must be positive, got {value}")


def check_non_negative(value, name: str) -> None:
    if value < 0:
        raise ValidationError(f"{name} must be non-negative, got {value}")


def derive_seed(master: int, *scope: str) -> int:
    """Derive a stable component seed from a master seed and a name path.

    Keyed derivation keeps each component's random stream independent of
    which other components exist, so e.g. adding an auxiliary head does not
    shift the primary head's initialization.
    """
    key = ":".join([str(int(master)), *scope]).encode("utf-8")
    digest = hashlib.sha256(key).digest()
    return int.from_bytes(digest[:8], "little") % (2**63)
