import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ucprop import io
from ucprop.dyadic import CubeFamily, Root, maximal_paths
from ucprop.geometry import Grid, RegionMask
from ucprop.solver import SolutionField

GRID = Grid(2, 0.125, (9, 11), (-0.25, 0.1))


@given(arrays(bool, GRID.shape))
def test_mask_roundtrip(mask):
    back = io.mask_from_bytes(io.mask_to_bytes(RegionMask(GRID, mask)))
    assert back.grid == GRID
    assert np.array_equal(back.mask, mask)


@given(arrays(np.float64, GRID.shape, elements=st.floats(allow_nan=False, width=64)))
def test_field_roundtrip(values):
    sol = SolutionField(GRID, values, 3.5e-11, "fourier(cap=1,seed=2,member=3)")
    back = io.field_from_bytes(io.field_to_bytes(sol))
    assert back.grid == GRID
    assert np.array_equal(back.u, values)
    assert back.residual_norm == sol.residual_norm
    assert back.boundary == sol.boundary


def test_field_header_checked():
    blob = io.field_to_bytes(SolutionField(GRID, np.zeros(GRID.shape), 0.0))
    with pytest.raises(ValueError):
        io.mask_from_bytes(blob)
    with pytest.raises(ValueError):
        io.field_from_bytes(blob[:-8])


paths = st.lists(st.lists(st.integers(1, 4), max_size=4).map(tuple), min_size=1, max_size=8).map(maximal_paths)


@given(paths)
def test_family_roundtrip(ps):
    fam = CubeFamily(Root((0.5, 0.5), 1.0), ps)
    text = io.family_to_text(fam)
    back = io.family_from_text(text)
    assert back.paths == fam.paths
    assert back.root == fam.root
    assert io.family_to_text(back) == text


def test_family_text_format():
    fam = CubeFamily(Root((0.5, 0.5), 1.0), frozenset({(2, 1), (1,)}))
    assert io.family_to_text(fam) == "root 0.5 0.5 side 1.0\n1 1\n2 2,1\n"
    with pytest.raises(ValueError):
        io.family_from_text("root 0.5 0.5 side 1.0\n2 1\n")


def test_format_value():
    assert io.format_value(0.1) == "0.10000000000000001"
    assert io.format_value(3) == "3"
    assert io.format_value(True) == "true"
    assert io.format_value(math.nan) == "nan"
    assert io.format_value(-math.inf) == "-inf"
    assert io.format_value((1, 0.5)) == "1 0.5"


def test_csv_columns():
    text = io.rows_to_csv([{"a": 1, "b": 0.25}, {"b": 2.0, "c": "x"}])
    assert text == "a,b,c\n1,0.25,\n,2,x\n"
    assert io.rows_to_csv([{"a": 1}], ["b", "a"]) == "b,a\n,1\n"


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_format_float_roundtrip(x):
    assert float(io.format_value(x)) == x


def test_json_sorted_and_safe():
    text = io.to_json({"b": np.float64(1.5), "a": [np.int64(2), math.inf], "c": np.array([True])})
    assert json.loads(text) == {"a": [2, "inf"], "b": 1.5, "c": [True]}
    assert text.index('"a"') < text.index('"b"')
