"""Shared vocabulary: race categories, race vectors, records, sampler settings."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np


class RaceCategory(enum.IntEnum):
    WHITE = 0
    BLACK = 1
    HISPANIC = 2
    ASIAN = 3
    OTHER = 4

    @property
    def label(self) -> str:
        return self.name.lower()


RACES: tuple[str, ...] = tuple(r.label for r in RaceCategory)
J = len(RACES)

# lower-cased input label -> category
RACE_SYNONYMS: dict[str, RaceCategory] = {}
for _cat, _names in {
    RaceCategory.WHITE: ("white", "w", "whi", "nh_white", "caucasian", "european"),
    RaceCategory.BLACK: ("black", "b", "bla", "nh_black", "african american",
                         "african-american", "black or african american", "aa"),
    RaceCategory.HISPANIC: ("hispanic", "h", "his", "hisp", "latino", "latina",
                            "latinx", "hispanic or latino", "hispanic/latino"),
    RaceCategory.ASIAN: ("asian", "a", "asi", "api", "nh_asian", "asian/pacific islander",
                         "asian or pacific islander", "pacific islander", "aapi"),
    RaceCategory.OTHER: ("other", "o", "oth", "aian", "native american",
                         "american indian", "multiracial", "multi-racial", "mixed",
                         "two or more", "2prace", "other race"),
}.items():
    for _n in _names:
        RACE_SYNONYMS[_n] = _cat


class FbisgError(Exception):
    """Base class for errors raised by this package."""


class DataError(FbisgError):
    """Input data could not be used (bad file layout, bad values)."""


class UnknownGeographyError(DataError, KeyError):
    """A geography id is not present in the loaded table."""

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class EmptyGeographyError(DataError):
    """A geography has a zero total count, so its race prior is undefined."""


def parse_race(label) -> RaceCategory:
    """Map a race label from an input file onto a category.

    Accepts category members, ordinal indices and the synonyms in
    ``RACE_SYNONYMS`` (case-insensitive, surrounding whitespace ignored).
    """
    if isinstance(label, RaceCategory):
        return label
    if isinstance(label, (int, np.integer)):
        if not 0 <= int(label) < len(RaceCategory):
            raise DataError(f"race index {label!r} out of range")
        return RaceCategory(int(label))
    key = str(label).strip().lower()
    try:
        return RACE_SYNONYMS[key]
    except KeyError:
        raise DataError(f"unrecognised race label {label!r}") from None


def validate_probability_vector(v, tol: float = 1e-9) -> bool:
    """True iff `v` has J entries in [0, 1] summing to 1 within `tol`."""
    a = np.asarray(v, dtype=float)
    if a.shape != (J,) or not np.all(np.isfinite(a)):
        return False
    if np.any(a < 0.0) or np.any(a > 1.0):
        return False
    return bool(abs(a.sum() - 1.0) <= tol)


def as_count_vector(v, integer: bool = False) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.shape != (J,):
        raise ValueError(f"race vector must have {J} entries, got shape {a.shape}")
    if np.any(~np.isfinite(a)) or np.any(a < 0):
        raise ValueError("count vector entries must be finite and nonnegative")
    if integer and np.any(a != np.round(a)):
        raise ValueError("count vector entries must be integers")
    return a


def normalize_counts(v) -> np.ndarray:
    """Normalize a count vector to a probability vector (uniform if all zero)."""
    a = np.asarray(v, dtype=float)
    s = a.sum()
    if s <= 0:
        return np.full(J, 1.0 / J)
    return a / s


@dataclass(frozen=True)
class PersonRecord:
    record_id: str
    surname_key: str
    geo_id: str
    first_key: Optional[str] = None
    middle_key: Optional[str] = None
    true_race: Optional[RaceCategory] = None


NAME_FIELD_SETS: dict[str, tuple[str, ...]] = {
    "last": ("surname",),
    "last_first": ("surname", "first"),
    "last_first_middle": ("surname", "first", "middle"),
}
# spellings accepted on the command line
NAME_FIELD_ALIASES = {
    "last": "last",
    "last+first": "last_first",
    "last+first+middle": "last_first_middle",
    "last_first": "last_first",
    "last_first_middle": "last_first_middle",
}


@dataclass(frozen=True)
class SamplerConfig:
    """Settings for one fBISG run.

    ``posterior_estimator`` is ``"label_frequency"`` (share of kept sweeps
    in which each label was drawn) or ``"rao_blackwell"`` (mean of the
    full conditionals over kept sweeps).  ``init`` picks the starting
    labels: the BISG MAP label, or a draw from the BISG posterior.
    """

    iterations_total: int = 1500
    burn_in: int = 500
    alpha: tuple[float, ...] = (1.0,) * J
    seed: int = 0
    posterior_estimator: str = "label_frequency"
    name_fields: str = "last"
    parallel_partitions: int = 1
    init: str = "map"

    def __post_init__(self):
        if int(self.iterations_total) < 1:
            raise ValueError("iterations_total must be positive")
        if not 0 <= int(self.burn_in) < int(self.iterations_total):
            raise ValueError("burn_in must satisfy 0 <= burn_in < iterations_total")
        alpha = tuple(float(a) for a in np.broadcast_to(np.asarray(self.alpha, float), (J,)))
        if any(not np.isfinite(a) or a <= 0 for a in alpha):
            raise ValueError("alpha entries must be positive")
        object.__setattr__(self, "alpha", alpha)
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.posterior_estimator not in ("label_frequency", "rao_blackwell"):
            raise ValueError(f"unknown posterior_estimator {self.posterior_estimator!r}")
        if self.name_fields not in NAME_FIELD_SETS:
            raise ValueError(f"unknown name_fields {self.name_fields!r}")
        if int(self.parallel_partitions) < 1:
            raise ValueError("parallel_partitions must be positive")
        if self.init not in ("map", "sample"):
            raise ValueError(f"unknown init {self.init!r}")

    @property
    def kept_iterations(self) -> int:
        return self.iterations_total - self.burn_in
