"""Regenerate the bundled golden flowsheet corpus under src/procagent/data/flowsheets."""

from __future__ import annotations

import sys
from pathlib import Path

from procagent.flowsheet import Flowsheet, save_design
from procagent.thermo import method_for

OUT = Path(__file__).resolve().parents[1] / "src" / "procagent" / "data" / "flowsheets"
ATM = 101325.0


def base(fid: str, comps: list[str], variant: str = "IdealRaoult") -> Flowsheet:
    fs = Flowsheet(id=fid)
    for c in comps:
        fs.add_component(c)
    pm = method_for(fs.components, variant)
    fs.set_property_method(pm.variant, pm.margules_params)
    return fs


def chain(fs: Flowsheet, *units: str) -> None:
    for a, b in zip(units, units[1:]):
        fs.connect((a, 0), (b, 0))


def feed(fs, flows, T=300.0, P=ATM):
    return fs.add_unit("Feed", {"flows": flows, "T": T, "P": P})


def heater_chain():
    fs = base("heater-chain", ["water"])
    chain(fs, feed(fs, {"water": 100.0}), fs.add_unit("Heater", {"T_out": 350.0}), fs.add_unit("Product"))
    return fs


def heat_then_cool():
    fs = base("heat-then-cool", ["toluene"])
    chain(fs, feed(fs, {"toluene": 40.0}), fs.add_unit("Heater", {"T_out": 380.0}),
          fs.add_unit("Heater", {"T_out": 320.0}), fs.add_unit("Product"))
    return fs


def pump_valve():
    fs = base("pump-valve", ["benzene"])
    chain(fs, feed(fs, {"benzene": 25.0}), fs.add_unit("Pump", {"P_out": 5e5}),
          fs.add_unit("Valve", {"P_out": 1.5e5}), fs.add_unit("Product"))
    return fs


def mixer_two_feeds():
    fs = base("mixer-two-feeds", ["methanol", "water"])
    f1 = feed(fs, {"methanol": 30.0})
    f2 = feed(fs, {"water": 70.0}, T=320.0)
    mix = fs.add_unit("Mixer", {"inlets": 2})
    fs.connect((f1, 0), (mix, 0))
    fs.connect((f2, 0), (mix, 1))
    fs.connect((mix, 0), (fs.add_unit("Product"), 0))
    return fs


def splitter_three():
    fs = base("splitter-three", ["n-hexane", "toluene"])
    f = feed(fs, {"n-hexane": 60.0, "toluene": 40.0})
    sp = fs.add_unit("Splitter", {"fractions": [0.2, 0.3, 0.5]})
    fs.connect((f, 0), (sp, 0))
    for k in range(3):
        fs.connect((sp, k), (fs.add_unit("Product"), 0))
    return fs


def flash(fid, comps, flows, T, P=ATM, variant="IdealRaoult"):
    fs = base(fid, comps, variant)
    f = feed(fs, flows)
    h = fs.add_unit("Heater", {"T_out": T})
    fl = fs.add_unit("Flash", {"T": T, "P": P})
    chain(fs, f, h, fl)
    fs.connect((fl, 0), (fs.add_unit("Product"), 0))
    fs.connect((fl, 1), (fs.add_unit("Product"), 0))
    return fs


def component_splitter():
    fs = base("component-splitter", ["benzene", "toluene"])
    f = feed(fs, {"benzene": 50.0, "toluene": 50.0})
    cs = fs.add_unit("ComponentSplitter", {"split_fractions": {"benzene": 0.95, "toluene": 0.05}})
    fs.connect((f, 0), (cs, 0))
    fs.connect((cs, 0), (fs.add_unit("Product"), 0))
    fs.connect((cs, 1), (fs.add_unit("Product"), 0))
    return fs


HYDRATION = {"stoichiometry": {"ethylene": -1.0, "water": -1.0, "ethanol": 1.0}, "key_component": "ethylene"}


def hydration_reactor():
    fs = base("hydration-reactor", ["ethylene", "water", "ethanol"])
    f = feed(fs, {"ethylene": 50.0, "water": 60.0})
    h = fs.add_unit("Heater", {"T_out": 450.0})
    r = fs.add_unit("ConversionReactor", {**HYDRATION, "conversion": 0.6})
    cs = fs.add_unit("ComponentSplitter", {"split_fractions": {"ethylene": 0.95, "water": 0.05, "ethanol": 0.05}})
    chain(fs, f, h, r, cs)
    fs.connect((cs, 0), (fs.add_unit("Product"), 0))
    fs.connect((cs, 1), (fs.add_unit("Product"), 0))
    return fs


def mixer_splitter_recycle():
    fs = base("mixer-splitter-recycle", ["water"])
    f = feed(fs, {"water": 100.0})
    mix = fs.add_unit("Mixer", {"inlets": 2})
    sp = fs.add_unit("Splitter", {"fractions": [0.5, 0.5]})
    fs.connect((f, 0), (mix, 0))
    fs.connect((mix, 0), (sp, 0))
    fs.connect((sp, 0), (fs.add_unit("Product"), 0))
    fs.connect((sp, 1), (mix, 1))
    return fs


def csplit_recycle():
    fs = base("csplit-recycle", ["ethanol", "water"], "Margules")
    f = feed(fs, {"ethanol": 40.0, "water": 60.0})
    mix = fs.add_unit("Mixer", {"inlets": 2})
    cs = fs.add_unit("ComponentSplitter", {"split_fractions": {"ethanol": 0.9, "water": 0.1}})
    sp = fs.add_unit("Splitter", {"fractions": [0.5, 0.5]})
    fs.connect((f, 0), (mix, 0))
    fs.connect((mix, 0), (cs, 0))
    fs.connect((cs, 0), (fs.add_unit("Product"), 0))
    fs.connect((cs, 1), (sp, 0))
    fs.connect((sp, 0), (fs.add_unit("Product"), 0))
    fs.connect((sp, 1), (mix, 1))
    return fs


def flash_reflux_recycle():
    fs = base("flash-reflux-recycle", ["benzene", "toluene"])
    f = feed(fs, {"benzene": 50.0, "toluene": 50.0})
    mix = fs.add_unit("Mixer", {"inlets": 2})
    h = fs.add_unit("Heater", {"T_out": 368.0})
    fl = fs.add_unit("Flash", {"T": 368.0, "P": ATM})
    sp = fs.add_unit("Splitter", {"fractions": [0.6, 0.4]})
    fs.connect((f, 0), (mix, 0))
    chain(fs, mix, h, fl)
    fs.connect((fl, 0), (fs.add_unit("Product"), 0))
    fs.connect((fl, 1), (sp, 0))
    fs.connect((sp, 0), (fs.add_unit("Product"), 0))
    fs.connect((sp, 1), (mix, 1))
    return fs


def reactor_recycle():
    fs = base("reactor-recycle", ["ethylene", "water", "ethanol"])
    f = feed(fs, {"ethylene": 50.0, "water": 60.0})
    mix = fs.add_unit("Mixer", {"inlets": 2})
    r = fs.add_unit("ConversionReactor", {**HYDRATION, "conversion": 0.3})
    cs = fs.add_unit("ComponentSplitter", {"split_fractions": {"ethylene": 0.98, "water": 0.02, "ethanol": 0.01}})
    purge = fs.add_unit("Splitter", {"fractions": [0.1, 0.9]})
    fs.connect((f, 0), (mix, 0))
    chain(fs, mix, r, cs)
    fs.connect((cs, 0), (purge, 0))
    fs.connect((cs, 1), (fs.add_unit("Product"), 0))
    fs.connect((purge, 0), (fs.add_unit("Product"), 0))
    fs.connect((purge, 1), (mix, 1))
    return fs


def single_outlet_flash():
    fs = base("single-outlet-flash", ["benzene", "toluene"])
    f = feed(fs, {"benzene": 50.0, "toluene": 50.0})
    h = fs.add_unit("Heater", {"T_out": 368.0})
    fl = fs.add_unit("Flash", {"T": 368.0, "P": ATM})
    chain(fs, f, h, fl)
    fs.connect((fl, 1), (fs.add_unit("Product"), 0))
    return fs


BUILDERS = [
    heater_chain,
    heat_then_cool,
    pump_valve,
    mixer_two_feeds,
    splitter_three,
    lambda: flash("flash-benzene-toluene", ["benzene", "toluene"], {"benzene": 50.0, "toluene": 50.0}, 368.0),
    lambda: flash("flash-ethanol-water", ["ethanol", "water"], {"ethanol": 30.0, "water": 70.0}, 358.0,
                  variant="Margules"),
    lambda: flash("flash-methanol-water", ["methanol", "water"], {"methanol": 50.0, "water": 50.0}, 352.0,
                  variant="Margules"),
    lambda: flash("flash-hexane-toluene", ["n-hexane", "toluene"], {"n-hexane": 40.0, "toluene": 60.0}, 366.0),
    lambda: flash("flash-light-gases", ["ethylene", "propane"], {"ethylene": 30.0, "propane": 70.0}, 250.0, 5.0e5),
    component_splitter,
    hydration_reactor,
    mixer_splitter_recycle,
    csplit_recycle,
    flash_reflux_recycle,
    reactor_recycle,
    single_outlet_flash,
]


def main() -> int:
    OUT.mkdir(parents=True, exist_ok=True)
    for build in BUILDERS:
        fs = build()
        save_design(fs, OUT / f"{fs.id}.json")
        print(fs.id)
    return 0


if __name__ == "__main__":
    sys.exit(main())
