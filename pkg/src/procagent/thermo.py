"""Vapor pressure, K-values, isothermal flash and binary VLE analysis."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

from scipy.optimize import brentq

from . import components as db
from .components import ChemComponent
from .errors import InvalidKValues, PropertyRangeExceeded
from .flowsheet import PropertyMethod

FRACTION_TOL = 1e-9

CompLike = Union[str, ChemComponent]


def _comp(c: CompLike) -> ChemComponent:
    return c if isinstance(c, ChemComponent) else db.get(c)


def saturation_pressure(comp: CompLike, T: float) -> float:
    """Antoine vapor pressure in Pa; raises outside the declared window."""
    comp = _comp(comp)
    t_min, t_max = comp.t_range
    if not t_min <= T <= t_max:
        raise PropertyRangeExceeded(
            f"{comp.id}: T={T:.6g} K outside Antoine range [{t_min}, {t_max}] K"
        )
    a, b, c = comp.antoine
    return math.exp(a - b / (T + c))


def method_for(ids: Sequence[str], variant: str = "IdealRaoult") -> PropertyMethod:
    """Property method using the database's Margules table for ``ids``."""
    if variant == "Margules":
        return PropertyMethod("Margules", db.margules_pairs(list(ids)))
    return PropertyMethod(variant)


def activity_coefficients(ids: Sequence[str], x: Sequence[float], method: Optional[PropertyMethod]) -> list[float]:
    """Two-suffix Margules: ln g_k = sum_i A_ki x_i - sum_{i<j} A_ij x_i x_j.

    For a binary this is ln g1 = A12 x2^2, ln g2 = A12 x1^2.
    """
    n = len(ids)
    if method is None or method.variant != "Margules" or not method.margules_params:
        return [1.0] * n
    A = [[method.coefficient(ids[i], ids[j]) if i != j else 0.0 for j in range(n)] for i in range(n)]
    excess = sum(A[i][j] * x[i] * x[j] for i in range(n) for j in range(i + 1, n))
    return [math.exp(sum(A[k][i] * x[i] for i in range(n)) - excess) for k in range(n)]


def k_values(
    ids: Sequence[str],
    T: float,
    P: float,
    method: Optional[PropertyMethod] = None,
    x: Optional[Sequence[float]] = None,
    active: Optional[Sequence[bool]] = None,
) -> list[float]:
    """K_i = gamma_i Psat_i(T) / P.

    ``active`` masks components whose vapor pressure is not needed (absent
    from the mixture); their K is reported as 1.0.
    """
    if P <= 0:
        raise ValueError("pressure must be positive")
    n = len(ids)
    if x is None:
        x = [1.0 / n] * n
    if abs(sum(x) - 1.0) > FRACTION_TOL:
        raise ValueError(f"liquid mole fractions sum to {sum(x)}, not 1")
    gamma = activity_coefficients(ids, x, method)
    out = []
    for i, cid in enumerate(ids):
        if active is not None and not active[i]:
            out.append(1.0)
        else:
            out.append(gamma[i] * saturation_pressure(cid, T) / P)
    return out


def rachford_rice(z: Sequence[float], K: Sequence[float]) -> tuple[float, list[float], list[float]]:
    """Vapor fraction and phase compositions of an isothermal flash.

    Solves ``sum z_i (K_i - 1) / (1 + beta (K_i - 1)) = 0`` on [0, 1] by Newton
    steps safeguarded with bisection.
    """
    if any(not (k > 0) or not math.isfinite(k) for k in K):
        raise InvalidKValues(f"K-values must be positive and finite, got {list(K)}")
    z = list(z)
    K = list(K)
    if all(k == 1.0 for k in K):
        return 0.5, z[:], z[:]

    def f(beta: float) -> float:
        return sum(zi * (ki - 1.0) / (1.0 + beta * (ki - 1.0)) for zi, ki in zip(z, K))

    if f(0.0) <= 0.0:
        kz = [ki * zi for ki, zi in zip(K, z)]
        s = sum(kz)
        return 0.0, z[:], [v / s for v in kz]
    if f(1.0) >= 0.0:
        zk = [zi / ki for ki, zi in zip(K, z)]
        s = sum(zk)
        return 1.0, [v / s for v in zk], z[:]

    lo, hi = 0.0, 1.0
    beta = 0.5
    for _ in range(200):
        fv = f(beta)
        if fv > 0:
            lo = beta
        else:
            hi = beta
        if abs(fv) < 1e-14 or hi - lo < 1e-15:
            break
        df = -sum(zi * (ki - 1.0) ** 2 / (1.0 + beta * (ki - 1.0)) ** 2 for zi, ki in zip(z, K))
        step = beta - fv / df if df != 0 else 0.5 * (lo + hi)
        beta = step if lo < step < hi else 0.5 * (lo + hi)
    x = [zi / (1.0 + beta * (ki - 1.0)) for zi, ki in zip(z, K)]
    y = [ki * xi for ki, xi in zip(K, x)]
    return beta, x, y


def flash_tp(
    ids: Sequence[str],
    z: Sequence[float],
    T: float,
    P: float,
    method: Optional[PropertyMethod] = None,
    max_iter: int = 500,
) -> tuple[float, list[float], list[float]]:
    """Isothermal flash; activity models are handled by successive substitution on x."""
    active = [zi > 0 for zi in z]
    nonideal = method is not None and method.variant == "Margules" and bool(method.margules_params)
    K = k_values(ids, T, P, method, z, active)
    beta, x, y = rachford_rice(z, K)
    if not nonideal:
        return beta, x, y
    for _ in range(max_iter):
        s = sum(x)
        xn = [v / s for v in x]
        K = k_values(ids, T, P, method, xn, active)
        beta_new, x_new, y = rachford_rice(z, K)
        delta = max(abs(a - b) for a, b in zip(x_new, x))
        beta, x = beta_new, x_new
        if delta < 1e-13:
            break
    return beta, x, y


def _root_window(ids: Sequence[str], mask: Sequence[bool]) -> tuple[float, float]:
    lo = max(db.get(c).t_range[0] for c, m in zip(ids, mask) if m)
    hi = min(db.get(c).t_range[1] for c, m in zip(ids, mask) if m)
    return lo, hi


def bubble_temperature(ids: Sequence[str], x: Sequence[float], P: float,
                       method: Optional[PropertyMethod] = None) -> float:
    """T with sum x_i gamma_i Psat_i(T) = P."""
    mask = [xi > 0 for xi in x]
    gamma = activity_coefficients(ids, x, method)
    lo, hi = _root_window(ids, mask)

    def g(T: float) -> float:
        return sum(xi * gi * saturation_pressure(c, T) for c, xi, gi, m in zip(ids, x, gamma, mask) if m) - P

    if lo >= hi or g(lo) > 0 or g(hi) < 0:
        raise PropertyRangeExceeded(
            f"bubble point of {list(ids)} at {P:.6g} Pa not bracketed within Antoine ranges"
        )
    return brentq(g, lo, hi, xtol=1e-12, rtol=1e-15, maxiter=500)


def dew_temperature(ids: Sequence[str], y: Sequence[float], P: float) -> float:
    """Ideal dew point: sum y_i P / Psat_i(T) = 1."""
    mask = [yi > 0 for yi in y]
    lo, hi = _root_window(ids, mask)

    def g(T: float) -> float:
        return sum(yi * P / saturation_pressure(c, T) for c, yi, m in zip(ids, y, mask) if m) - 1.0

    if lo >= hi or g(lo) < 0 or g(hi) > 0:
        raise PropertyRangeExceeded(
            f"dew point of {list(ids)} at {P:.6g} Pa not bracketed within Antoine ranges"
        )
    return brentq(g, lo, hi, xtol=1e-12, rtol=1e-15, maxiter=500)


# ---------------------------------------------------------------------------
# Binary VLE analysis
# ---------------------------------------------------------------------------


@dataclass
class VleResult:
    components: tuple[str, str]
    pressure: float
    method: str
    points: list[tuple[float, float, float]]  # (x1, y1, T_bubble)
    azeotropes: list[tuple[float, float]] = field(default_factory=list)  # (x1, T)
    relative_volatility_range: tuple[float, float] = (math.nan, math.nan)

    @property
    def azeotrope(self) -> Optional[tuple[float, float]]:
        return self.azeotropes[0] if self.azeotropes else None

    def to_dict(self) -> dict:
        return {
            "components": list(self.components),
            "pressure": self.pressure,
            "method": self.method,
            "points": [{"x1": x, "y1": y, "T": t} for x, y, t in self.points],
            "azeotrope": None if self.azeotrope is None else {"x1": self.azeotrope[0], "T": self.azeotrope[1]},
            "relative_volatility_range": list(self.relative_volatility_range),
        }

    def summary(self) -> str:
        a, b = self.components
        lines = [f"{a}-{b} at {self.pressure:.6g} Pa ({self.method})"]
        if self.azeotrope is None:
            lines.append("azeotrope: none")
        else:
            x1, t = self.azeotrope
            lines.append(f"azeotrope: x1={x1:.6f} T={t:.4f} K")
        lo, hi = self.relative_volatility_range
        lines.append(f"relative volatility: {lo:.4g} .. {hi:.4g}")
        return "\n".join(lines)


def _binary_point(ids, x1, x2, P, method):
    """(y1, T) at liquid composition (x1, x2); y1 = x1 at pure endpoints."""
    x = [x1, x2]
    T = bubble_temperature(ids, x, P, method)
    if x1 == 0.0 or x2 == 0.0:
        return x1, T, math.nan
    g1, g2 = activity_coefficients(ids, x, method)
    y1 = x1 * g1 * saturation_pressure(ids[0], T) / P
    y2 = x2 * g2 * saturation_pressure(ids[1], T) / P
    return y1, T, (y1 / x1) / (y2 / x2)


def analyze_binary_vle(c1: str, c2: str, P: float, method: Optional[PropertyMethod] = None,
                       n_grid: int = 101) -> VleResult:
    """Bubble-point T-x-y curve on a uniform grid plus azeotrope search."""
    if P <= 0:
        raise ValueError("pressure must be positive")
    ids = [db.resolve(c1), db.resolve(c2)]
    if ids[0] == ids[1]:
        raise ValueError("binary analysis needs two distinct components")
    if method is None:
        method = PropertyMethod()
    n = n_grid - 1
    points = []
    alphas = []
    for i in range(n_grid):
        x1, x2 = i / n, (n - i) / n
        y1, T, alpha = _binary_point(ids, x1, x2, P, method)
        points.append((x1, y1, T))
        if not math.isnan(alpha):
            alphas.append(alpha)

    azeotropes = []
    d = [y - x for x, y, _ in points]
    for i in range(1, n - 1):
        if d[i] == 0.0:
            azeotropes.append((points[i][0], points[i][2]))
        elif d[i] * d[i + 1] < 0:
            azeotropes.append(_refine_azeotrope(ids, P, method, points[i][0], points[i + 1][0], d[i]))
    alpha_range = (min(alphas), max(alphas)) if alphas else (math.nan, math.nan)
    return VleResult(tuple(ids), P, method.variant, points, azeotropes, alpha_range)


def _refine_azeotrope(ids, P, method, lo, hi, d_lo):
    sign_lo = d_lo > 0
    mid = 0.5 * (lo + hi)
    T = math.nan
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        y1, T, _ = _binary_point(ids, mid, 1.0 - mid, P, method)
        dm = y1 - mid
        if abs(dm) < 1e-9 and hi - lo < 1e-10:
            break
        if (dm > 0) == sign_lo:
            lo = mid
        else:
            hi = mid
    return mid, T
