import numpy as np
import pytest
from hypothesis import given, strategies as st

from fbisg.core import (J, RACES, DataError, PersonRecord, RaceCategory, SamplerConfig,
                        UnknownGeographyError, as_count_vector, normalize_counts, parse_race,
                        validate_probability_vector)


def test_race_order_and_labels():
    assert RACES == ("white", "black", "hispanic", "asian", "other")
    assert J == 5
    assert RaceCategory.ASIAN.label == "asian"


@pytest.mark.parametrize("label,race", [
    ("API", RaceCategory.ASIAN), ("asian", RaceCategory.ASIAN), (" Latino ", RaceCategory.HISPANIC),
    ("WHITE", RaceCategory.WHITE), ("aian", RaceCategory.OTHER), (1, RaceCategory.BLACK),
])
def test_parse_race_synonyms(label, race):
    assert parse_race(label) is race


@pytest.mark.parametrize("bad", ["martian", "", 7])
def test_parse_race_rejects(bad):
    with pytest.raises(DataError):
        parse_race(bad)


@pytest.mark.parametrize("v,ok", [
    ((0.2,) * 5, True),
    ((1, 0, 0, 0, 0), True),
    ((0.5, 0.5, 0.5, -0.5, 0), False),
    ((0.5, 0.5, 0.1, 0, 0), False),
    ((0.5, 0.5, 0, 0), False),
    ((np.nan, 1, 0, 0, 0), False),
])
def test_validate_probability_vector(v, ok):
    assert validate_probability_vector(v) is ok


def test_count_vector_rules():
    assert as_count_vector([1, 2, 3, 4, 5]).sum() == 15
    with pytest.raises(ValueError):
        as_count_vector([1, -1, 0, 0, 0])
    with pytest.raises(ValueError):
        as_count_vector([1.5, 0, 0, 0, 0], integer=True)
    np.testing.assert_allclose(normalize_counts([0] * 5), np.full(5, 0.2))


@given(st.lists(st.floats(0, 1e6), min_size=5, max_size=5).filter(lambda v: sum(v) > 0))
def test_normalize_counts_is_a_probability_vector(v):
    assert validate_probability_vector(normalize_counts(v))


def test_unknown_geography_error_is_data_and_key_error():
    err = UnknownGeographyError("no such geography 'X'")
    assert isinstance(err, DataError) and isinstance(err, KeyError)
    assert str(err) == "no such geography 'X'"


def test_person_record_is_immutable():
    r = PersonRecord("1", "SMITH", "G1")
    with pytest.raises(Exception):
        r.surname_key = "JONES"


def test_sampler_config_defaults_and_validation():
    c = SamplerConfig()
    assert (c.iterations_total, c.burn_in, c.kept_iterations) == (1500, 500, 1000)
    assert c.alpha == (1.0,) * 5
    assert SamplerConfig(alpha=2.0).alpha == (2.0,) * 5
    for bad in (dict(burn_in=1500), dict(alpha=0.0), dict(posterior_estimator="mean"),
                dict(name_fields="first"), dict(parallel_partitions=0), dict(init="random"),
                dict(seed=-1)):
        with pytest.raises(ValueError):
            SamplerConfig(**bad)
