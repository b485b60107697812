import json

import numpy as np
import pytest

from robust_pomdp import io
from robust_pomdp.benchmarks import BirdParams, RockSampleParams, bird_fixture, gen_bird, gen_rocksample, prop1_fixture
from robust_pomdp.hsvi import solve_me
from robust_pomdp.model import validate
from robust_pomdp.transforms import ab_to_posg, me_to_ab

from oracles import random_me


def round_trip(m):
    text = io.dumps(io.model_to_dict(m))
    back = io.model_from_dict(json.loads(text))
    return text, back


@pytest.mark.parametrize(
    "make",
    [
        bird_fixture,
        prop1_fixture,
        lambda: gen_bird(BirdParams(num_states=5, num_actions=3, num_experts=3, seed=2)),
        lambda: gen_rocksample(RockSampleParams()),
        lambda: gen_rocksample(RockSampleParams(formulation="ab")),
        lambda: me_to_ab(bird_fixture())[0],
        lambda: ab_to_posg(me_to_ab(prop1_fixture())[0])[0],
        lambda: random_me(5),
    ],
)
def test_round_trip_is_byte_stable(make):
    m = make()
    text, back = round_trip(m)
    assert io.dumps(io.model_to_dict(back)) == text
    assert type(back) is type(m)
    assert np.array_equal(back.transition, m.transition)
    assert np.array_equal(back.observation, m.observation)
    assert np.array_equal(back.reward, m.reward)
    assert validate(back) == []


def test_available_actions_survive():
    ab, _ = me_to_ab(bird_fixture())
    _, back = round_trip(ab)
    assert np.array_equal(back.action_mask, ab.action_mask)
    assert back.belief_support == ab.belief_support


def test_decimal_strings_are_read_exactly():
    d = io.model_to_dict(bird_fixture())
    env = d["environments"][1]
    env["transition"]["s_L"]["C"] = {"s_L": "0.2", "s_M": "0.6", "s_H": "0.2"}
    m = io.model_from_dict(d)
    assert m.transition[1, 0, 0].tolist() == [0.2, 0.6, 0.2]
    assert validate(m) == []


def test_no_renormalisation_on_load():
    d = io.model_to_dict(bird_fixture())
    d["environments"][0]["transition"]["s_L"]["C"] = {"s_L": 0.5, "s_M": 0.4}
    m = io.model_from_dict(d)
    assert m.transition[0, 0, 0].sum() == pytest.approx(0.9)
    assert any("s_L" in p for p in validate(m))


@pytest.mark.parametrize(
    "edit",
    [
        lambda d: d.update(type="mdp"),
        lambda d: d.pop("discount"),
        lambda d: d.update(states=["a", "a", "b"]),
        lambda d: d.update(horizon=2.5),
        lambda d: d.update(environments=[]),
        lambda d: d["environments"][0]["transition"].update(nowhere={}),
        lambda d: d["environments"][0].update(reward=[[1, 2]]),
        lambda d: d["environments"][0]["transition"]["s_L"].update(C={"s_L": "lots"}),
        lambda d: d["environments"][0].pop("initial_belief"),
    ],
)
def test_malformed_documents(edit):
    d = io.model_to_dict(bird_fixture())
    edit(d)
    with pytest.raises(io.FormatError):
        io.model_from_dict(d)


def test_ab_needs_support():
    d = io.model_to_dict(gen_rocksample(RockSampleParams(formulation="ab")))
    del d["belief_support"]
    with pytest.raises(io.FormatError):
        io.model_from_dict(d)


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(io.FormatError):
        io.load_model(p)


def test_save_and_load(tmp_path):
    p = tmp_path / "m.json"
    io.save_model(p, bird_fixture(), {"note": "x"})
    m = io.load_model(p)
    assert m.metadata == {"note": "x"}
    io.save_model(tmp_path / "again.json", m)
    assert (tmp_path / "again.json").read_bytes() == p.read_bytes()


def test_policy_round_trip():
    me = prop1_fixture()
    mp = solve_me(me, exact=True).policy
    d = io.policy_to_dict(mp, me)
    back = io.policy_from_dict(json.loads(io.dumps(d)), me)
    assert np.allclose(back.weights, mp.weights)
    assert [g.nodes[g.root].action for g in back.graphs] == [g.nodes[g.root].action for g in mp.graphs]


def test_policy_with_unknown_action():
    me = prop1_fixture()
    d = io.policy_to_dict(solve_me(me, exact=True).policy, me)
    d["components"][0]["nodes"][0]["action"] = "jump"
    with pytest.raises(io.FormatError):
        io.policy_from_dict(d, me)


def test_record_round_trip():
    _, rec = me_to_ab(bird_fixture())
    back = io.record_from_dict(json.loads(io.dumps(io.record_to_dict(rec))))
    assert back.kind == rec.kind
    assert back.sentinel == rec.sentinel
    assert back.state_map == rec.state_map


@pytest.mark.parametrize("make", [bird_fixture, lambda: gen_rocksample(RockSampleParams(formulation="ab"))])
def test_emitted_files_match_the_schema(make):
    jsonschema = pytest.importorskip("jsonschema")
    from pathlib import Path

    schema = json.loads((Path(__file__).parents[1] / "docs" / "model.schema.json").read_text())
    jsonschema.validate(io.model_to_dict(make()), schema)
    posg = io.model_to_dict(ab_to_posg(me_to_ab(prop1_fixture())[0])[0])
    jsonschema.validate(posg, schema)
