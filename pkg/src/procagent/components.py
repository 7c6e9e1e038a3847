"""Embedded pure-component property database.

Antoine constants were taken from the common ``log10(P/mmHg) = A - B/(t/degC + C)``
tables and converted to the natural-log / pascal / kelvin form used here::

    ln(Psat / Pa) = A - B / (T / K + C)

The declared validity windows are wider than the fitted ranges of the source
tables so that flash drums can run a little above the normal boiling points;
each window stays below the critical temperature.
"""

from __future__ import annotations

import difflib
import math
from dataclasses import dataclass
from typing import Mapping

from .errors import UnknownComponent

_LN10 = math.log(10.0)
_LN_MMHG_PA = math.log(133.322368)


@dataclass(frozen=True)
class ChemComponent:
    id: str
    name: str
    formula: str
    molar_mass: float  # kg/kmol
    antoine: tuple[float, float, float]  # (A, B, C): ln(Pa), K
    t_range: tuple[float, float]  # K
    cp_liq: float  # kJ/(kmol K)
    hvap: float  # kJ/kmol
    flammable: bool

    def __post_init__(self) -> None:
        if self.molar_mass <= 0:
            raise ValueError(f"{self.id}: molar_mass must be positive")
        t_min, t_max = self.t_range
        if not t_min < t_max:
            raise ValueError(f"{self.id}: T_min must be below T_max")
        a, b, c = self.antoine
        if b <= 0 or t_min + c <= 0:
            raise ValueError(f"{self.id}: Antoine form not increasing over range")


def _from_mmhg_celsius(a10: float, b10: float, c10: float) -> tuple[float, float, float]:
    return (_LN10 * a10 + _LN_MMHG_PA, _LN10 * b10, c10 - 273.15)


def _make(id, name, formula, mw, a10, b10, c10, t_range, cp, hvap, flammable):
    return ChemComponent(
        id=id,
        name=name,
        formula=formula,
        molar_mass=mw,
        antoine=_from_mmhg_celsius(a10, b10, c10),
        t_range=t_range,
        cp_liq=cp,
        hvap=hvap,
        flammable=flammable,
    )


DATABASE: dict[str, ChemComponent] = {
    c.id: c
    for c in (
        _make("water", "Water", "H2O", 18.015, 8.07131, 1730.63, 233.426, (274.0, 450.0), 75.3, 40660.0, False),
        _make("ethanol", "Ethanol", "C2H6O", 46.069, 8.20417, 1642.89, 230.300, (250.0, 450.0), 112.4, 38560.0, True),
        _make("methanol", "Methanol", "CH4O", 32.042, 8.08097, 1582.271, 239.726, (250.0, 450.0), 81.1, 35210.0, True),
        _make("benzene", "Benzene", "C6H6", 78.114, 6.90565, 1211.033, 220.790, (280.0, 450.0), 136.0, 30720.0, True),
        _make("toluene", "Toluene", "C7H8", 92.141, 6.95464, 1344.800, 219.482, (280.0, 450.0), 157.3, 33180.0, True),
        _make("n-hexane", "n-Hexane", "C6H14", 86.178, 6.87601, 1171.170, 224.410, (250.0, 450.0), 195.6, 28850.0, True),
        _make("propane", "Propane", "C3H8", 44.097, 6.80398, 803.810, 246.990, (160.0, 369.0), 98.4, 19040.0, True),
        _make("ethylene", "Ethylene", "C2H4", 28.054, 6.74756, 585.000, 255.000, (120.0, 282.0), 67.4, 13530.0, True),
    )
}

SYNONYMS: dict[str, str] = {
    "water": "water",
    "h2o": "water",
    "ethanol": "ethanol",
    "ethyl alcohol": "ethanol",
    "etoh": "ethanol",
    "methanol": "methanol",
    "methyl alcohol": "methanol",
    "meoh": "methanol",
    "benzene": "benzene",
    "toluene": "toluene",
    "methylbenzene": "toluene",
    "n-hexane": "n-hexane",
    "hexane": "n-hexane",
    "propane": "propane",
    "ethylene": "ethylene",
    "ethene": "ethylene",
}

# Symmetric two-suffix Margules coefficients (dimensionless) for known
# non-ideal pairs; any pair not listed is ideal.
MARGULES_TABLE: dict[frozenset[str], float] = {
    frozenset(("ethanol", "water")): 1.6,
    frozenset(("methanol", "water")): 0.55,
}


def resolve(name: str) -> str:
    """Map a user-facing name to a database id (case-insensitive)."""
    key = " ".join(name.strip().lower().split())
    if key in SYNONYMS:
        return SYNONYMS[key]
    if key in DATABASE:
        return key
    close = difflib.get_close_matches(key, list(SYNONYMS), n=3, cutoff=0.5)
    raise UnknownComponent(name, sorted({SYNONYMS[c] for c in close}))


def get(component_id: str) -> ChemComponent:
    try:
        return DATABASE[component_id]
    except KeyError:
        raise UnknownComponent(component_id, []) from None


def margules_pairs(ids: list[str], table: Mapping[frozenset[str], float] = MARGULES_TABLE) -> dict[frozenset[str], float]:
    """Known Margules coefficients among ``ids``."""
    out = {}
    for i, a in enumerate(ids):
        for b in ids[i + 1 :]:
            pair = frozenset((a, b))
            if pair in table:
                out[pair] = table[pair]
    return out
