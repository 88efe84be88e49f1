import json
import math
from pathlib import Path

import numpy as np
import pytest

from lindahl import (ParseError, fixtures, instance_from_json, instance_to_json, splc_from_json,
                     splc_to_json)
from lindahl.jsonio import dumps, load_candidate

from _gen import random_capped, random_splc

DATA = Path(__file__).parent / "data"


def same_instance(a, b):
    return (np.array_equal(a.indptr, b.indptr) and np.array_equal(a.indices, b.indices)
            and np.array_equal(a.data, b.data) and np.array_equal(a.budgets, b.budgets)
            and np.array_equal(a.caps, b.caps) and a.total_budget == b.total_budget
            and a.agent_ids == b.agent_ids and a.project_ids == b.project_ids)


def test_random_instances_round_trip_bit_exact():
    rng = np.random.default_rng(81)
    for _ in range(20):
        inst = random_capped(rng, 5, 6)
        back = instance_from_json(json.loads(dumps(instance_to_json(inst))))
        assert same_instance(inst, back)


@pytest.mark.parametrize("name", ["non_unique", "capped_nash", "underspend", "irrational"])
def test_data_files_match_fixtures(name):
    assert same_instance(instance_from_json(DATA / f"{name}.json"), fixtures.ALL[name]())


def test_infinite_caps_are_null():
    d = instance_to_json(fixtures.underspend())
    assert [p["cap"] for p in d["projects"]] == [0.25, None]
    assert "Infinity" not in dumps(d)


def test_equal_split_and_inferred_projects():
    inst = instance_from_json('{"budget": 3, "agents": [{"valuations": {"b": 1}}, '
                              '{"valuations": {"a": 2, "b": 1}}, {"valuations": {"a": 1}}]}')
    assert inst.budgets.tolist() == [1.0, 1.0, 1.0]
    assert inst.project_ids == ("a", "b") and np.all(np.isinf(inst.caps))
    assert inst.agent_ids == ("1", "2", "3")


@pytest.mark.parametrize("text", [
    '{"budget": 1, "agents": [{"budget": 1, "valuations": {"z": 1}}], "projects": ["a"]}',
    '{"budget": 2, "agents": [{"budget": 1, "valuations": {"a": 1}}, {"valuations": {"a": 1}}]}',
    '{"agents": []}',
    '{"budget": 1, "agents": [{"id": "x"}, {"id": "x"}]}',
])
def test_invalid_instances(text):
    with pytest.raises(ParseError):
        instance_from_json(text)


def test_syntax_error_reports_line():
    with pytest.raises(ParseError) as err:
        instance_from_json('{"budget": 1,\n "agents": [\n}')
    assert err.value.line == 3


def test_splc_round_trip():
    rng = np.random.default_rng(82)
    for _ in range(10):
        s = random_splc(rng, 3, 3)
        back = splc_from_json(json.loads(dumps(splc_to_json(s))))
        for j in range(s.m):
            assert np.array_equal(back.lengths[j], s.lengths[j])
            assert np.array_equal(back.slopes[j], s.slopes[j])
        assert back.functions == s.functions


def test_splc_bad_segments():
    with pytest.raises(ParseError):
        splc_from_json('{"budget": 1, "agents": [{"utilities": {"a": [[1]]}}]}')


def test_dumps_handles_numpy_and_infinities():
    out = json.loads(dumps({"a": np.float64(1.5), "b": np.arange(2), "c": math.inf,
                            "d": np.bool_(True), "e": math.nan}))
    assert out == {"a": 1.5, "b": [0, 1], "c": "inf", "d": True, "e": None}


def test_floats_round_trip_exactly():
    vals = [0.1, 1 / 3, math.pi * 1e-12, 2.5e300]
    assert json.loads(dumps(vals)) == vals


def test_load_candidate_shapes():
    inst = fixtures.non_unique()
    x, p = load_candidate({"x": [1, 0.5, 0.5]}, inst)
    assert p is None and x.tolist() == [1, 0.5, 0.5]
    with pytest.raises(ParseError):
        load_candidate({"x": [1, 0.5]}, inst)
    with pytest.raises(ParseError):
        load_candidate({"x": [1, 0.5, 0.5], "prices": [[1, 1, 1]]}, inst)
    with pytest.raises(ParseError):
        load_candidate({"prices": []}, inst)
