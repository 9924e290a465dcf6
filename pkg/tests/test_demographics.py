import numpy as np
import pytest
from hypothesis import given, strategies as st

from x3ecg.demographics import (
    AGE_MISSING, DEMOG_DIM, FEMALE, GENDER_MISSING, MALE, Demographics, age_group, encode, encode_batch,
    parse_gender,
)
from x3ecg.errors import ParameterError


def test_thirty_is_in_the_23_to_41_group():
    assert age_group(30) == 3


@pytest.mark.parametrize("age,group", [(4.9, 0), (5.0, 1), (0, 0), (14.99, 1), (15, 2), (22.5, 2), (23, 3),
                                       (41.9, 3), (42, 4), (56.9, 4), (57, 5), (68.9, 5), (69, 6), (130, 6)])
def test_half_open_group_boundaries(age, group):
    assert age_group(age) == group


def test_missing_age():
    assert age_group(None) == AGE_MISSING == 7
    assert age_group(float("nan")) == 7


def test_negative_age_raises():
    with pytest.raises(ParameterError):
        age_group(-1)
    with pytest.raises(ParameterError):
        Demographics(age=-0.5)


def test_age_above_range_rejected():
    with pytest.raises(ParameterError):
        Demographics(age=131)


def test_afib_mean_profile():
    bits = encode(Demographics(72.9, "male"))
    assert set(np.flatnonzero(bits)) == {6, MALE}


def test_double_missing():
    assert set(np.flatnonzero(encode(Demographics()))) == {7, GENDER_MISSING}


def test_newborn_female():
    assert set(np.flatnonzero(encode(Demographics(0, "female")))) == {0, FEMALE}


@pytest.mark.parametrize("token,want", [("m", "male"), ("M", "male"), ("male", "male"), (" f ", "female"),
                                        ("Female", "female"), ("", None), ("x", None), ("unknown", None),
                                        (None, None)])
def test_parse_gender(token, want):
    assert parse_gender(token) == want


@given(st.one_of(st.none(), st.floats(0, 130)), st.sampled_from(["male", "female", None]))
def test_exactly_two_bits(age, gender):
    bits = encode(Demographics(age, gender))
    assert bits.shape == (DEMOG_DIM,)
    assert set(np.unique(bits)) <= {0.0, 1.0}
    assert bits[:8].sum() == 1 and bits[8:].sum() == 1


def test_encode_batch_shape():
    out = encode_batch([Demographics(30, "male"), Demographics()])
    assert out.shape == (2, 11)
    assert encode_batch([]).shape == (0, 11)


def test_layout_matches_group_index():
    for age in np.arange(0, 130.5, 0.5):
        assert np.flatnonzero(encode(Demographics(float(age), None))[:8])[0] == age_group(float(age))
