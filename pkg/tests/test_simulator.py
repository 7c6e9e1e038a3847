import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from procagent.flowsheet import Flowsheet, StreamState, UnitOp, create_flowsheet, load_design
from procagent.simulator import SimulationResult, order_units, run_simulation, simulate_unit
from procagent.errors import InfeasibleConversion
from procagent.thermo import method_for


def recycle_loop(recycle: float = 0.5, feed: float = 100.0) -> Flowsheet:
    fs = create_flowsheet()
    fs.add_component("water")
    f = fs.add_unit("Feed", {"flows": {"water": feed}, "T": 300.0, "P": 101325.0})
    m = fs.add_unit("Mixer", {"inlets": 2})
    s = fs.add_unit("Splitter", {"fractions": [1.0 - recycle, recycle]})
    p = fs.add_unit("Product")
    fs.connect((f, 0), (m, 0))
    fs.connect((m, 0), (s, 0))
    fs.connect((s, 0), (p, 0))
    fs.connect((s, 1), (m, 1))
    return fs


def test_heater_passthrough_and_duty():
    unit = UnitOp("heat1", "Heater", {"T_out": 350.0})
    res = simulate_unit(unit, [StreamState({"water": 100.0}, 300.0, 1e5)], ["water"])
    out = res.outlets[0]
    assert out.flows == {"water": 100.0} and out.T == 350.0
    assert res.duty == pytest.approx(100.0 * 75.3 * 50.0, rel=0.05)


def test_mixer_flow_weighted_temperature():
    unit = UnitOp("mix1", "Mixer", {"inlets": 2})
    a = StreamState({"water": 10.0}, 300.0, 2e5)
    b = StreamState({"water": 10.0}, 350.0, 1e5)
    out = simulate_unit(unit, [a, b], ["water"]).outlets[0]
    assert out.T == 325.0 and out.P == 1e5 and out.flows["water"] == 20.0


def test_flash_matches_bisection_oracle():
    from procagent.thermo import saturation_pressure

    T, P = 368.0, 101325.0
    K = [saturation_pressure(c, T) / P for c in ("benzene", "toluene")]
    beta = oracles.rr_bisection([0.5, 0.5], K)
    unit = UnitOp("flash1", "Flash", {"T": T, "P": P})
    vap, liq = simulate_unit(unit, [StreamState({"benzene": 50.0, "toluene": 50.0}, 300.0, P)],
                             ["benzene", "toluene"]).outlets
    assert vap.total == pytest.approx(100.0 * beta, abs=1e-7)
    y_benzene = 0.5 * K[0] / (1 + beta * (K[0] - 1))
    assert vap.flows["benzene"] / vap.total == pytest.approx(y_benzene, abs=1e-9)
    assert liq.flows["benzene"] + vap.flows["benzene"] == pytest.approx(50.0, abs=1e-12)
    assert vap.T == liq.T == T


def test_reactor_extent_and_infeasible_conversion():
    params = {"stoichiometry": {"ethylene": -1.0, "water": -1.0, "ethanol": 1.0},
              "key_component": "ethylene", "conversion": 0.5}
    unit = UnitOp("rxn1", "ConversionReactor", params)
    ids = ["ethylene", "water", "ethanol"]
    res = simulate_unit(unit, [StreamState({"ethylene": 10.0, "water": 20.0}, 400.0, 1e5)], ids)
    assert res.outlets[0].flows == {"ethylene": 5.0, "water": 15.0, "ethanol": 5.0}
    assert res.generation["ethanol"] == 5.0
    starved = UnitOp("rxn1", "ConversionReactor", {**params, "conversion": 1.0})
    with pytest.raises(InfeasibleConversion):
        simulate_unit(starved, [StreamState({"ethylene": 10.0, "water": 5.0}, 400.0, 1e5)], ids)


def test_order_units_acyclic_and_single_loop(corpus_paths):
    fs = load_design([p for p in corpus_paths if p.stem == "flash-benzene-toluene"][0])
    seq, tears = order_units(fs)
    assert seq[:3] == ["feed1", "heat1", "flash1"] and tears == []
    seq, tears = order_units(recycle_loop())
    assert len(tears) == 1


def test_nested_loops_tear_count_is_minimal():
    fs = create_flowsheet()
    fs.add_component("water")
    f = fs.add_unit("Feed", {"flows": {"water": 10.0}, "T": 300.0, "P": 1e5})
    m1 = fs.add_unit("Mixer", {"inlets": 2})
    m2 = fs.add_unit("Mixer", {"inlets": 2})
    s1 = fs.add_unit("Splitter", {"fractions": [0.5, 0.5]})
    s2 = fs.add_unit("Splitter", {"fractions": [0.5, 0.5]})
    p = fs.add_unit("Product")
    fs.connect((f, 0), (m1, 0))
    fs.connect((m1, 0), (m2, 0))
    fs.connect((m2, 0), (s1, 0))
    fs.connect((s1, 0), (s2, 0))
    fs.connect((s1, 1), (m2, 1))  # inner loop
    fs.connect((s2, 1), (m1, 1))  # outer loop shares m2 -> s1
    fs.connect((s2, 0), (p, 0))
    _, tears = order_units(fs)
    nodes = list(fs.units)
    edges = [(s.source[0], s.target[0]) for s in fs.streams.values()]
    assert len(tears) <= 2
    assert len(tears) >= oracles.min_feedback_edges(nodes, edges)
    result = run_simulation(fs)
    assert result.converged
    assert result.streams[fs.inlet_streams(p)[0].id].total == pytest.approx(10.0, rel=1e-6)


def test_linear_chain_converges_in_one_pass(corpus_paths):
    fs = load_design([p for p in corpus_paths if p.stem == "heater-chain"][0])
    r = run_simulation(fs)
    assert r.converged and r.iterations == 1
    assert r.component_balance_residual <= 1e-12


def test_mixer_splitter_recycle_closed_form():
    r = run_simulation(recycle_loop())
    assert r.converged
    mixer_out = r.streams["s2"]
    assert abs(mixer_out.total - 100.0 / (1 - 0.5)) <= 1e-4


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 0.9), st.floats(1.0, 500.0))
def test_recycle_geometric_series(recycle, feed):
    r = run_simulation(recycle_loop(recycle, feed))
    assert r.converged
    assert r.streams["s2"].total == pytest.approx(feed / (1 - recycle), rel=1e-5)
    assert r.component_balance_residual <= 1e-8


def test_wegstein_never_worse_on_recycle_corpus(corpus_paths):
    for path in corpus_paths:
        fs = load_design(path)
        if not order_units(fs)[1]:
            continue
        fast = run_simulation(fs)
        slow = run_simulation(fs, accelerate=False)
        assert fast.converged and slow.converged
        assert fast.iterations <= slow.iterations, path.stem


def test_flash_outside_property_range_is_a_failure_result(corpus_paths):
    fs = load_design([p for p in corpus_paths if p.stem == "flash-benzene-toluene"][0])
    fs.update_params("flash1", {"T": 900.0, "P": 101325.0})
    fs.update_params("heat1", {"T_out": 900.0})
    r = run_simulation(fs)
    assert not r.converged
    assert r.failure_reason == "PropertyRangeExceeded"
    assert r.failed_unit == "flash1"


def test_non_converging_recycle_is_data():
    r = run_simulation(recycle_loop(0.999), max_iter=3)
    assert not r.converged
    assert r.failure_reason == "NotConverged"
    assert r.tear_residual > 1e-6


def test_invalid_topology_is_data():
    fs = recycle_loop()
    fs.cascade_delete("prod1")
    r = run_simulation(fs)
    assert r.failure_reason == "TopologyInvalid" and r.iterations == 0


def test_corpus_conservation_and_determinism(corpus_paths):
    assert len(corpus_paths) >= 15
    recycles = 0
    for path in corpus_paths:
        fs = load_design(path)
        recycles += bool(order_units(fs)[1])
        a, b = run_simulation(fs), run_simulation(fs)
        assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
        if a.converged:
            assert a.component_balance_residual <= 1e-8, path.stem
            assert a.tear_residual <= 1e-6
        else:
            assert a.failure_reason
    assert recycles >= 3


def test_result_document_round_trip():
    r = run_simulation(recycle_loop())
    assert SimulationResult.from_dict(json.loads(json.dumps(r.to_dict()))).to_dict() == r.to_dict()


def test_margules_flash_in_flowsheet_conserves():
    fs = create_flowsheet()
    for c in ("ethanol", "water"):
        fs.add_component(c)
    pm = method_for(fs.components, "Margules")
    fs.set_property_method(pm.variant, pm.margules_params)
    f = fs.add_unit("Feed", {"flows": {"ethanol": 30.0, "water": 70.0}, "T": 300.0, "P": 101325.0})
    fl = fs.add_unit("Flash", {"T": 358.0, "P": 101325.0})
    fs.connect((f, 0), (fl, 0))
    fs.connect((fl, 0), (fs.add_unit("Product"), 0))
    fs.connect((fl, 1), (fs.add_unit("Product"), 0))
    r = run_simulation(fs)
    assert r.converged and r.component_balance_residual <= 1e-8
