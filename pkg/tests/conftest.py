import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from fbisg import DictionarySet, GeoTable, NameDictionary, PersonRecord, RaceCategory  # noqa: E402


@pytest.fixture
def two_race_dicts():
    """Surname dictionary where only White and Black are populated."""
    counts = np.array([[2, 1, 0, 0, 0],
                       [1, 2, 0, 0, 0]], float)
    d = NameDictionary("surname", ["SMITH", "JONES"], counts, national_counts=[50, 50, 0, 0, 0])
    return DictionarySet(surname=d)


@pytest.fixture
def small_geo():
    return GeoTable(["A", "B", "Z"], [[5, 2, 1, 0, 0], [0, 0, 4, 4, 1], [0, 0, 0, 0, 0]])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_record(rid, surname, geo, race=None, first=None, middle=None):
    return PersonRecord(rid, surname, geo, first_key=first, middle_key=middle,
                        true_race=None if race is None else RaceCategory(race))


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(RESULTS):
            terminalreporter.write_line(line)

