"""Numerical verification of the small-capacity expansion machinery.

The one-step recursion of the capacity x admits, for channels whose
fourth moment is quadratically controlled (gamma-normal), the local map

    x1 = A x - B x^2 + O(x^3),
    A  = (r-1) d lambda^2,
    B  = (r-1)(r-2) d lambda^3 + (r-1)^2 E[b(b-1)] lambda^4,

whose ingredients reduce to eleven closed-form pattern sums over the
per-edge posterior products alpha(theta, y) = prod(1 + theta_i y_i).
This module carries those closed forms, a brute-force enumeration
oracle for them, the coefficient arithmetic, and a one-step fit harness
that measures A and B from exact evolution steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable

import numpy as np

from . import bms
from .bms import ThetaCloud, make_bsc
from .bp import _bp_step_exact_full
from .broadcast import BohtParams, OffspringDist
from .errors import ParameterError, ResourceLimitError

__all__ = [
    "MomentSumKind",
    "moment_sum_closed",
    "moment_sum_bruteforce",
    "ExpansionCoeffs",
    "expansion_coeffs",
    "fit_local_map",
    "gamma_normal_check",
    "apriori_ratio_check",
    "gamma_preservation_check",
    "truncation_check",
]


class MomentSumKind(Enum):
    """The eleven alpha-pattern sums with closed forms, keyed by the powers
    (j, k) in sum_y alpha(theta,y)^j * alpha(theta,-y)^k."""

    A1 = (1, 0)
    A2 = (2, 0)
    A1M1 = (1, 1)
    A3 = (3, 0)
    A2M1 = (2, 1)
    A4 = (4, 0)
    A3M1 = (3, 1)
    A2M2 = (2, 2)
    A5 = (5, 0)
    A4M1 = (4, 1)
    A3M2 = (3, 2)


# closed form: E sum_y alpha^j alpha(-y)^k = 2^ell * base(x, z)^ell
_CLOSED_BASE = {
    MomentSumKind.A1: lambda x, z: 1.0,
    MomentSumKind.A2: lambda x, z: 1 + x,
    MomentSumKind.A1M1: lambda x, z: 1 - x,
    MomentSumKind.A3: lambda x, z: 1 + 3 * x,
    MomentSumKind.A2M1: lambda x, z: 1 - x,
    MomentSumKind.A4: lambda x, z: 1 + 6 * x + z,
    MomentSumKind.A3M1: lambda x, z: 1 - z,
    MomentSumKind.A2M2: lambda x, z: 1 - 2 * x + z,
    MomentSumKind.A5: lambda x, z: 1 + 10 * x + 5 * z,
    MomentSumKind.A4M1: lambda x, z: 1 + 2 * x - 3 * z,
    MomentSumKind.A3M2: lambda x, z: 1 - 2 * x + z,
}


def moment_sum_closed(kind: MomentSumKind, ell: int, x: float, z: float) -> float:
    """Closed form of E sum_y alpha^j alpha(-y)^k over y in {+-}^ell for
    i.i.d. theta slots with E theta = x and E theta^3 = z."""
    if ell < 0:
        raise ParameterError("ell must be >= 0")
    if not (0 <= x <= 1 and 0 <= z <= x + 1e-12):
        raise ParameterError("need 0 <= z <= x <= 1")
    return 2.0 ** ell * _CLOSED_BASE[kind](x, z) ** ell


def moment_sum_bruteforce(kind: MomentSumKind, ell: int, cloud: ThetaCloud,
                          max_work: int = 20_000_000) -> float:
    """Exact enumeration oracle for the same sums.

    Enumerates all (atom, sign) assignments to the ell slots; each slot
    contributes a factor (1 + t*y) to the alpha product and (1 - t*y) to
    the mirrored one.  Kept deliberately independent of the closed forms.
    """
    if ell < 0:
        raise ParameterError("ell must be >= 0")
    if cloud.atom_count > 32 or ell > 6:
        raise ResourceLimitError("brute-force sums capped at 32 atoms, ell <= 6")
    if (2 * cloud.atom_count) ** max(ell, 1) > max_work:
        raise ResourceLimitError("enumeration size exceeds cap")
    j, k = kind.value
    # slot values u = t*y for y = +-1, each with the atom's weight
    u = np.concatenate([cloud.thetas, -cloud.thetas])
    wu = np.concatenate([cloud.weights, cloud.weights])
    p = np.array([1.0])
    q = np.array([1.0])
    w = np.array([1.0])
    for _ in range(ell):
        p = (p[:, None] * (1 + u)[None, :]).ravel()
        q = (q[:, None] * (1 - u)[None, :]).ravel()
        w = (w[:, None] * wu[None, :]).ravel()
    return float(np.sum(w * p ** j * q ** k))


@dataclass(frozen=True)
class ExpansionCoeffs:
    """Linear and quadratic coefficients of the one-step capacity map."""

    r: int
    d: float
    lam: float
    offspring_kind: str
    A: float
    B: float

    @property
    def normalized_B(self) -> float:
        return self.B / self.A if self.A != 0 else math.inf


def factorial_second_moment(kind: str, d: float) -> float:
    """E b(b-1) for the offspring law; d may be non-integral here because
    coefficient sweeps move d continuously."""
    if kind == "point":
        return d * (d - 1)
    if kind == "poisson":
        return d * d
    raise ParameterError(f"unknown offspring kind {kind!r}")


def expansion_coeffs(r: int, offspring_kind: str, d: float, lam: float
                     ) -> ExpansionCoeffs:
    if r < 2:
        raise ParameterError("r must be >= 2")
    if d < 0:
        raise ParameterError("d must be >= 0")
    eb2 = factorial_second_moment(offspring_kind, d)
    A = (r - 1) * d * lam ** 2
    B = (r - 1) * (r - 2) * d * lam ** 3 + (r - 1) ** 2 * eb2 * lam ** 4
    return ExpansionCoeffs(r=r, d=d, lam=lam, offspring_kind=offspring_kind,
                           A=A, B=B)


def fit_local_map(r: int, offspring: OffspringDist, lam: float,
                  x_grid: Iterable[float] | None = None,
                  merge_tol: float = 1e-13) -> dict:
    """Measure the local map empirically: run one exact evolution step
    from BSC starts with capacity x (gamma-normal with gamma = 1), then
    least-squares fit x1/x = A - B x.

    Returns the fitted coefficients, their predicted values, and the fit
    residual; lam = 0 is reported as degenerate (x1 is identically 0).
    """
    if x_grid is None:
        x_grid = np.geomspace(1e-4, 1e-3, 6)
    xs = np.asarray(sorted(x_grid), dtype=np.float64)
    if xs.size < 4:
        raise ParameterError("need at least 4 grid points")
    if np.any((xs <= 0) | (xs > 1e-2)):
        raise ParameterError("x grid must lie in (0, 1e-2]")
    params = BohtParams(r, lam, offspring)
    x1 = np.empty(xs.size)
    for i, x in enumerate(xs.tolist()):
        start = make_bsc((1 - math.sqrt(x)) / 2)
        x1[i] = _bp_step_exact_full(start, params, merge_tol,
                                    atom_cap=2_000_000).cloud.moment(2)
    pred = expansion_coeffs(r, offspring.kind, offspring.mean(), lam)
    if np.all(x1 == 0):
        return {"degenerate": True, "A_hat": 0.0, "B_hat": 0.0,
                "residual": 0.0, "A": pred.A, "B": pred.B}
    # x1/x = A - B x, linear least squares in (1, x)
    design = np.stack([np.ones_like(xs), -xs], axis=1)
    target = x1 / xs
    coef, res, *_ = np.linalg.lstsq(design, target, rcond=None)
    a_hat, b_hat = float(coef[0]), float(coef[1])
    resid = float(np.sqrt(np.mean((design @ coef - target) ** 2)))
    return {"degenerate": False, "A_hat": a_hat, "B_hat": b_hat,
            "residual": resid, "A": pred.A, "B": pred.B,
            "A_rel_err": abs(a_hat - pred.A) / pred.A if pred.A else math.inf,
            "B_rel_err": abs(b_hat - pred.B) / pred.B if pred.B else math.inf}


def gamma_normal_check(channel, gamma: float) -> bool:
    """E theta^4 <= gamma (E theta^2)^2; a zero channel passes."""
    x = channel.moment(2)
    y = channel.moment(4)
    return y <= gamma * x * x or (x == 0 and y == 0)


def apriori_ratio_check(r: int, lam: float, x0_grid: Iterable[float],
                        merge_tol: float = 1e-13) -> dict:
    """First-order edge-step estimate: x1' from one exact edge composition
    (offspring plays no role) satisfies |x1' - (r-1) lam^2 x0| <= C lam^2 x0^2;
    reports the fitted C and the worst ratio drift."""
    params = BohtParams(r, lam, OffspringDist("point", 1))
    rows = []
    for x0 in x0_grid:
        start = make_bsc((1 - math.sqrt(x0)) / 2)
        res = _bp_step_exact_full(start, params, merge_tol, atom_cap=2_000_000)
        xp = res.edge_cloud.moment(2)
        lead = (r - 1) * lam ** 2 * x0
        c = abs(xp - lead) / (lam ** 2 * x0 ** 2) if lam != 0 else 0.0
        rows.append({"x0": x0, "x_prime": xp, "ratio": xp / lead if lead else 0.0,
                     "C": c})
    c_fit = max(row["C"] for row in rows)
    worst = max(abs(row["ratio"] - 1) for row in rows if row["ratio"])
    return {"rows": rows, "C_fitted": c_fit, "worst_ratio_drift": worst}


def gamma_preservation_check(r: int, offspring: OffspringDist, lam: float,
                             gamma: float, x_grid: Iterable[float],
                             merge_tol: float = 1e-13) -> dict:
    """One step preserves gamma-normality on the tested grid; reports the
    smallest gamma that would have passed."""
    params = BohtParams(r, lam, offspring)
    worst_gamma = 0.0
    ok = True
    for x in x_grid:
        start = make_bsc((1 - math.sqrt(x)) / 2)
        out = _bp_step_exact_full(start, params, merge_tol,
                                  atom_cap=2_000_000).cloud
        x1, y1 = out.moment(2), out.moment(4)
        if x1 > 0:
            worst_gamma = max(worst_gamma, y1 / x1 ** 2)
        if not gamma_normal_check(out, gamma):
            ok = False
    return {"ok": ok, "gamma": gamma, "smallest_passing_gamma": worst_gamma}


def truncation_check(kind: str, d_values: Iterable[float], m_max: int = 3,
                     x_scale: float = 1e-3) -> dict:
    """Low-degree polynomial truncation of E (1+x)^b.

    |E(1+x)^b - sum_{i<=m} E C(b,i) x^i| <= C (d x)^(m+1) for both
    offspring laws; reports the fitted C over the grid d <= 50,
    x <= x_scale/d, m <= m_max.
    """
    worst_c = 0.0
    rows = []
    for d in d_values:
        if d <= 0 or d > 50:
            raise ParameterError("d grid must lie in (0, 50]")
        for m in range(1, m_max + 1):
            for x in np.geomspace(x_scale / d / 100, x_scale / d, 5).tolist():
                if kind == "point":
                    full = (1 + x) ** d
                    partial = sum(math.comb(int(d), i) * x ** i
                                  for i in range(m + 1))
                elif kind == "poisson":
                    full = math.exp(d * x)
                    partial = sum(d ** i / math.factorial(i) * x ** i
                                  for i in range(m + 1))
                else:
                    raise ParameterError(f"unknown offspring kind {kind!r}")
                c = abs(full - partial) / (d * x) ** (m + 1)
                worst_c = max(worst_c, c)
                rows.append({"d": d, "m": m, "x": x, "C": c})
    return {"kind": kind, "C_fitted": worst_c, "rows": rows}
