import json
import math

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from plspoly.report import csv_sections, csv_table, dumps


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), max_size=8))
def test_floats_reload_exactly(values):
    doc = json.loads(dumps({"v": values}))
    assert doc["v"] == values


def test_numpy_and_non_finite():
    text = dumps({"a": np.array([1.5, np.nan]), "b": np.int64(3), "c": np.bool_(True), "d": math.inf})
    assert json.loads(text) == {"a": [1.5, None], "b": 3, "c": True, "d": None}


def test_nested_layout_is_stable():
    doc = {"rows": [{"k": 0, "x": [0.1, 0.2]}, {"k": 1, "x": []}]}
    assert dumps(doc) == dumps(json.loads(dumps(doc)))
    assert '"x": [0.10000000000000001, 0.20000000000000001]' in dumps(doc)


def test_csv():
    assert csv_table(["a", "b"], [[1, 0.1], [None, True]]) == "a,b\n1,0.10000000000000001\n,true\n"
    text = csv_sections([("one", ["x"], [[1]]), ("two", ["y"], [[2]])])
    assert text.splitlines() == ["# section: one", "x", "1", "", "# section: two", "y", "2"]
