import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from procagent import flowsheet as fsmod
from procagent.errors import (
    InvalidPort,
    InvalidUnitParams,
    PortOccupied,
    SchemaError,
    UnknownComponent,
    UnknownUnit,
    WrongRequestKind,
)
from procagent.flowsheet import Flowsheet, create_flowsheet, validate_topology
from procagent.task import TaskSpec

DESIGN = TaskSpec("Design", ["water"])


def linear_chain() -> Flowsheet:
    fs = create_flowsheet(DESIGN)
    fs.add_component("water")
    f = fs.add_unit("Feed", {"flows": {"water": 10.0}, "T": 300.0, "P": 101325.0})
    h = fs.add_unit("Heater", {"T_out": 350.0})
    p = fs.add_unit("Product")
    fs.connect((f, 0), (h, 0))
    fs.connect((h, 0), (p, 0))
    return fs


def test_create_flowsheet_is_empty_with_unique_ids():
    a, b = create_flowsheet(DESIGN), create_flowsheet(DESIGN)
    assert not a.units and not a.streams
    assert a.id != b.id


def test_create_flowsheet_rejects_thermo_request():
    with pytest.raises(WrongRequestKind):
        create_flowsheet(TaskSpec("ThermoAnalysis", ["water", "ethanol"]))


def test_add_component_is_idempotent_and_resolves_synonyms():
    fs = create_flowsheet()
    assert fs.add_component("Water") == "water"
    fs.add_component("H2O")
    assert fs.components == ["water"]


def test_unknown_component_suggests_matches():
    fs = create_flowsheet()
    with pytest.raises(UnknownComponent) as exc:
        fs.add_component("ethanoll")
    assert "ethanol" in exc.value.suggestions
    with pytest.raises(UnknownComponent):
        fs.add_component("unobtainium")


def test_unit_ids_are_prefix_plus_counter():
    fs = create_flowsheet()
    assert fs.add_unit("Flash", {"T": 350.0, "P": 101325.0}) == "flash1"
    assert fs.add_unit("Flash", {"T": 360.0, "P": 101325.0}) == "flash2"
    assert fs.add_unit("Product") == "prod1"


@pytest.mark.parametrize(
    "kind, params, key",
    [
        ("Splitter", {"fractions": [0.6, 0.5]}, "fractions"),
        ("Heater", {"T_out": -10.0}, "T_out"),
        ("Flash", {"T": 350.0}, "P"),
        ("Pump", {"P_out": 1e5, "speed": 3}, "speed"),
        ("ConversionReactor", {"stoichiometry": {"water": 1.0}, "key_component": "water", "conversion": 0.5},
         "key_component"),
        ("ComponentSplitter", {"split_fractions": {"water": 1.5}}, "split_fractions.water"),
    ],
)
def test_invalid_params_name_the_key(kind, params, key):
    with pytest.raises(InvalidUnitParams) as exc:
        create_flowsheet().add_unit(kind, params)
    assert exc.value.key == key


def test_port_arity_table():
    assert fsmod.port_arity("Feed", {}) == (0, 1)
    assert fsmod.port_arity("Product", {}) == (1, 0)
    assert fsmod.port_arity("Mixer", {"inlets": 3}) == (3, 1)
    assert fsmod.port_arity("Splitter", {"fractions": [0.2, 0.3, 0.5]}) == (1, 3)
    assert fsmod.port_arity("Flash", {}) == (1, 2)
    assert fsmod.port_arity("ConversionReactor", {}) == (1, 1)


def test_connect_rules_and_cycles():
    fs = create_flowsheet()
    f = fs.add_unit("Feed", {"flows": {}, "T": 300.0, "P": 1e5})
    m = fs.add_unit("Mixer", {"inlets": 2})
    s = fs.add_unit("Splitter", {"fractions": [0.5, 0.5]})
    fs.connect((f, 0), (m, 0))
    with pytest.raises(PortOccupied):
        fs.connect((f, 0), (m, 1))
    with pytest.raises(InvalidPort):
        fs.connect((m, 1), (s, 0))
    fs.connect((m, 0), (s, 0))
    fs.connect((s, 1), (m, 1))  # recycle is legal
    assert len(fs.streams) == 3


def test_cascade_delete():
    fs = create_flowsheet()
    f1 = fs.add_unit("Feed", {"flows": {}, "T": 300.0, "P": 1e5})
    f2 = fs.add_unit("Feed", {"flows": {}, "T": 300.0, "P": 1e5})
    m = fs.add_unit("Mixer", {"inlets": 2})
    p = fs.add_unit("Product")
    lone = fs.add_unit("Heater", {"T_out": 300.0})
    fs.connect((f1, 0), (m, 0))
    fs.connect((f2, 0), (m, 1))
    fs.connect((m, 0), (p, 0))
    removed = fs.cascade_delete(m)
    assert removed == {m, "s1", "s2", "s3"}
    assert fs.cascade_delete(lone) == {lone}
    with pytest.raises(UnknownUnit):
        fs.cascade_delete(m)
    # freed ports can be bound again
    fs.connect((f1, 0), (p, 0))


def test_validate_single_outlet_flash():
    fs = create_flowsheet()
    fs.add_component("benzene")
    f = fs.add_unit("Feed", {"flows": {"benzene": 1.0}, "T": 300.0, "P": 1e5})
    fl = fs.add_unit("Flash", {"T": 350.0, "P": 1e5})
    p = fs.add_unit("Product")
    fs.connect((f, 0), (fl, 0))
    fs.connect((fl, 1), (p, 0))
    violations = validate_topology(fs)
    assert [(v.code, v.location) for v in violations] == [("UnboundPort", "flash1.out0")]


def test_validate_empty_flowsheet():
    codes = [v.code for v in validate_topology(create_flowsheet())]
    assert codes == ["NoFeed", "NoProduct", "EmptyComponents"]


def test_validate_complete_chain_and_purity():
    fs = linear_chain()
    assert validate_topology(fs) == []
    assert validate_topology(fs) == validate_topology(fs)


def test_validate_unreachable_and_disconnected():
    fs = linear_chain()
    h = fs.add_unit("Heater", {"T_out": 320.0})
    p = fs.add_unit("Product")
    fs.connect((h, 0), (p, 0))
    codes = [(v.code, v.unit) for v in validate_topology(fs)]
    assert ("UnboundPort", h) in codes
    assert ("UnreachableUnit", h) in codes
    assert ("UnreachableUnit", p) in codes


def test_undeclared_feed_component():
    fs = linear_chain()
    fs.update_params("feed1", {"flows": {"water": 1.0, "ethanol": 1.0}, "T": 300.0, "P": 1e5})
    v = validate_topology(fs)
    assert [x.code for x in v] == ["UndeclaredComponent"]
    assert v[0].detail == "ethanol"


def test_round_trip(tmp_path):
    fs = linear_chain()
    fs.set_property_method("Margules", {("water", "ethanol"): 1.6})
    path = fsmod.save_design(fs, tmp_path / "fs.json")
    back = fsmod.load_design(path)
    assert back == fs
    assert fsmod.dumps(back) == fsmod.dumps(fs)


def test_schema_errors_carry_pointers():
    doc = fsmod.to_dict(linear_chain())
    missing = {k: v for k, v in doc.items() if k != "units"}
    with pytest.raises(SchemaError) as exc:
        fsmod.from_dict(missing)
    assert exc.value.pointer == "/units"

    dangling = json.loads(json.dumps(doc))
    dangling["streams"][0]["to"] = ["ghost9", 0]
    with pytest.raises(SchemaError) as exc:
        fsmod.from_dict(dangling)
    assert exc.value.pointer.startswith("/streams/0")
    assert "s1" in str(exc.value)


def test_describe_changes():
    old = linear_chain()
    new = old.copy()
    new.update_params("heat1", {"T_out": 355.0})
    new.add_unit("Product")
    text = fsmod.describe_changes(old, new)
    assert "heat1.T_out: 350 -> 355" in text
    assert "+unit prod2 (Product)" in text


# ---------------------------------------------------------------------------
# Generative mutation sequences
# ---------------------------------------------------------------------------

KINDS = ["Feed", "Product", "Mixer", "Splitter", "Heater", "Flash", "ComponentSplitter"]
PARAMS = {
    "Feed": {"flows": {"water": 1.0}, "T": 300.0, "P": 1e5},
    "Product": {},
    "Mixer": {"inlets": 2},
    "Splitter": {"fractions": [0.3, 0.7]},
    "Heater": {"T_out": 320.0},
    "Flash": {"T": 350.0, "P": 1e5},
    "ComponentSplitter": {"split_fractions": {"water": 0.5}},
}

ops = st.lists(
    st.one_of(
        st.tuples(st.just("add"), st.sampled_from(KINDS)),
        st.tuples(st.just("connect"), st.integers(0, 20), st.integers(0, 2), st.integers(0, 20), st.integers(0, 2)),
        st.tuples(st.just("delete"), st.integers(0, 20)),
    ),
    max_size=40,
)


def check_invariants(fs: Flowsheet) -> None:
    seen = set()
    for s in fs.streams.values():
        for uid, port, side in ((s.source[0], s.source[1], 1), (s.target[0], s.target[1], 0)):
            assert uid in fs.units
            assert 0 <= port < fs.units[uid].arity[side]
            assert (uid, port, side) not in seen
            seen.add((uid, port, side))
    assert not set(fs.units) & set(fs.streams)


@settings(max_examples=150, deadline=None)
@given(ops)
def test_mutation_closure(sequence):
    fs = create_flowsheet()
    fs.add_component("water")
    for op in sequence:
        ids = sorted(fs.units, key=fsmod.id_key)
        try:
            if op[0] == "add":
                fs.add_unit(op[1], PARAMS[op[1]])
            elif op[0] == "connect" and ids:
                fs.connect((ids[op[1] % len(ids)], op[2]), (ids[op[3] % len(ids)], op[4]))
            elif op[0] == "delete" and ids:
                fs.cascade_delete(ids[op[1] % len(ids)])
        except (InvalidPort, PortOccupied):
            pass
        check_invariants(fs)
    assert fsmod.from_dict(fsmod.to_dict(fs)) == fs
    if not validate_topology(fs):
        for u in fs.units.values():
            n_in, n_out = u.arity
            assert len(fs.inlet_streams(u.id)) == n_in
            assert len(fs.outlet_streams(u.id)) == n_out
