"""Age/gender one-hot encoding (length 11).

Bit layout: ``[age groups 0-6, age missing, male, female, gender missing]``.
The layout is part of the checkpoint contract; do not reorder.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ParameterError

# lower edges of the age groups, in years: 0-4, 5-14, 15-22, 23-41, 42-56, 57-68, 69+
AGE_EDGES = (0.0, 5.0, 15.0, 23.0, 42.0, 57.0, 69.0)
AGE_MISSING = 7
MALE, FEMALE, GENDER_MISSING = 8, 9, 10
DEMOG_DIM = 11
MAX_AGE = 130.0


@dataclass(frozen=True)
class Demographics:
    age: Optional[float] = None
    gender: Optional[str] = None  # "male" | "female" | None

    def __post_init__(self):
        if self.age is not None and not (0.0 <= self.age <= MAX_AGE):
            raise ParameterError(f"age must lie in [0, {MAX_AGE}], got {self.age}")
        if self.gender not in (None, "male", "female"):
            raise ParameterError(f"gender must be 'male', 'female' or None, got {self.gender!r}")


def parse_gender(token: Optional[str]) -> Optional[str]:
    """Map manifest tokens to a gender; anything unrecognized is missing."""
    if token is None:
        return None
    t = token.strip().lower()
    if t in ("m", "male"):
        return "male"
    if t in ("f", "female"):
        return "female"
    return None


def age_group(age: Optional[float]) -> int:
    if age is None or (isinstance(age, float) and math.isnan(age)):
        return AGE_MISSING
    if age < 0:
        raise ParameterError(f"age must be non-negative, got {age}")
    group = 0
    for i, edge in enumerate(AGE_EDGES):
        if age >= edge:
            group = i
    return group


def encode(d: Demographics) -> np.ndarray:
    bits = np.zeros(DEMOG_DIM)
    bits[age_group(d.age)] = 1.0
    bits[{"male": MALE, "female": FEMALE, None: GENDER_MISSING}[d.gender]] = 1.0
    return bits


def encode_batch(items) -> np.ndarray:
    return np.stack([encode(d) for d in items]) if items else np.zeros((0, DEMOG_DIM))
