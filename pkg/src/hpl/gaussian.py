"""Large-degree Gaussian fixed-point analysis.

For large expected degree, one density-evolution step acts on the
capacity x through g_rw(x) = g(s_rw(x)) where

    g(s)      = E_{Z~N(0,1)} tanh(s + sqrt(s) Z),
    s_rw(x)   = (w/2) * ((1+x)^(r-1) - (1-x)^(r-1)),

and w stands for d*lambda^2.  Contraction of g_rw on (0, 1] decides
reconstructibility in the large-degree limit, so this module provides
both a fast Gauss-Hermite evaluation of g and a rigorous step-function
bracket good enough to certify strict contraction on a grid, plus the
bisection solver for the largest contracting w.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import special

from .errors import InconclusiveError, ParameterError, VerificationError

__all__ = [
    "GaussHermite",
    "RigorousRiemann",
    "g_of_s",
    "s_rw",
    "g_rw",
    "certify_contraction",
    "CertificationReport",
    "w_star",
]

GH_NODES_DEFAULT = 101
RIEMANN_N_DEFAULT = 1000
Z_CUT_DEFAULT = 5.0
# the tail bound published with the z_cut=5 procedure; erfc(5/sqrt 2) < 1e-6
TAIL_BOUND_Z5 = 1e-6


@dataclass(frozen=True)
class GaussHermite:
    """Fast quadrature for smooth exploration; heuristic error estimate."""

    nodes: int = GH_NODES_DEFAULT

    def __post_init__(self):
        if self.nodes < 3:
            raise ParameterError("need at least 3 quadrature nodes")


@dataclass(frozen=True)
class RigorousRiemann:
    """Step-function bracket: 2*z_cut*n right-endpoint cells plus an exact
    normal tail bound."""

    n: int = RIEMANN_N_DEFAULT
    z_cut: float = Z_CUT_DEFAULT

    def __post_init__(self):
        if self.n < 1:
            raise ParameterError("n must be >= 1")
        if self.z_cut <= 0:
            raise ParameterError("z_cut must be > 0")

    def tail(self) -> float:
        exact = float(special.erfc(self.z_cut / math.sqrt(2)))
        if self.z_cut == 5.0:
            return max(exact, TAIL_BOUND_Z5)
        return exact


_GH_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gh_rule(nodes: int) -> tuple[np.ndarray, np.ndarray]:
    if nodes not in _GH_CACHE:
        x, w = np.polynomial.hermite.hermgauss(nodes)
        # E f(Z) = sum w_i f(sqrt(2) x_i) / sqrt(pi)
        _GH_CACHE[nodes] = (x * math.sqrt(2), w / math.sqrt(math.pi))
    return _GH_CACHE[nodes]


def _g_gh(s: np.ndarray, nodes: int) -> np.ndarray:
    z, w = _gh_rule(nodes)
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    vals = np.tanh(s[:, None] + np.sqrt(s)[:, None] * z[None, :]) @ w
    return vals


def _g_riemann(s: np.ndarray, n: int, z_cut: float, side: Literal["upper", "lower"],
               tail: float, block: int = 256) -> np.ndarray:
    """Rigorous per-cell bracket of E tanh(s + sqrt(s) Z).

    The integrand factor tanh(s + sqrt(s) t) is increasing in t, so on a
    cell it is bounded by its value at the right (upper) or left (lower)
    endpoint.  The density factor is then bounded by the cell's max or
    min density according to the sign of that tanh value, which keeps
    the product bound valid on cells where tanh is negative.
    """
    m = int(round(2 * z_cut * n))
    i = np.arange(m)
    t0 = -z_cut + i / n
    t1 = -z_cut + (i + 1) / n
    # cell density extremes; a cell straddling 0 has max density e^0
    lo_sq = np.minimum(t0 ** 2, t1 ** 2)
    lo_sq[(t0 < 0) & (t1 > 0)] = 0.0
    hi_sq = np.maximum(t0 ** 2, t1 ** 2)
    dens_max = np.exp(-lo_sq / 2) / math.sqrt(2 * math.pi)
    dens_min = np.exp(-hi_sq / 2) / math.sqrt(2 * math.pi)

    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    root = np.sqrt(s)
    t_eval = t1 if side == "upper" else t0
    out = np.empty(s.size)
    for start in range(0, s.size, block):
        sl = slice(start, min(start + block, s.size))
        f = np.tanh(s[sl, None] + root[sl, None] * t_eval[None, :])
        if side == "upper":
            dens = np.where(f >= 0, dens_max[None, :], dens_min[None, :])
        else:
            dens = np.where(f >= 0, dens_min[None, :], dens_max[None, :])
        out[sl] = np.sum(f * dens, axis=1) / n
    return out + (tail if side == "upper" else -tail)


def g_of_s(s: float | np.ndarray, quadrature: GaussHermite | RigorousRiemann = GaussHermite()
           ) -> tuple[np.ndarray | float, np.ndarray | float]:
    """Evaluate g(s) = E tanh(s + sqrt(s) Z).

    GaussHermite returns (value, heuristic error estimate); RigorousRiemann
    returns (upper bound, bracket width) where value in [upper - width, upper].
    """
    scalar = np.isscalar(s)
    s_arr = np.atleast_1d(np.asarray(s, dtype=np.float64))
    if np.any(s_arr < 0):
        raise ParameterError("s must be >= 0")
    if isinstance(quadrature, GaussHermite):
        v = _g_gh(s_arr, quadrature.nodes)
        v2 = _g_gh(s_arr, quadrature.nodes + 24)
        err = np.abs(v - v2) + 1e-15
        return (float(v[0]), float(err[0])) if scalar else (v, err)
    tail = quadrature.tail()
    hi = _g_riemann(s_arr, quadrature.n, quadrature.z_cut, "upper", tail)
    lo = _g_riemann(s_arr, quadrature.n, quadrature.z_cut, "lower", tail)
    width = hi - lo
    return (float(hi[0]), float(width[0])) if scalar else (hi, width)


def g_lower(s: float | np.ndarray, quadrature: RigorousRiemann) -> np.ndarray | float:
    """Rigorous lower bound of g(s)."""
    scalar = np.isscalar(s)
    s_arr = np.atleast_1d(np.asarray(s, dtype=np.float64))
    lo = _g_riemann(s_arr, quadrature.n, quadrature.z_cut, "lower", quadrature.tail())
    return float(lo[0]) if scalar else lo


def s_rw(r: int, w: float, x: float | np.ndarray) -> float | np.ndarray:
    """Effective Gaussian signal strength of capacity x at hyperedge size r."""
    if r < 2:
        raise ParameterError("r must be >= 2")
    if w < 0:
        raise ParameterError("w must be >= 0")
    x_arr = np.asarray(x, dtype=np.float64)
    if np.any(x_arr < 0) or np.any(x_arr > 1):
        raise ParameterError("x must lie in [0, 1]")
    out = w / 2 * ((1 + x_arr) ** (r - 1) - (1 - x_arr) ** (r - 1))
    return float(out) if np.isscalar(x) else out


def g_rw(r: int, w: float, x: float | np.ndarray,
         quadrature: GaussHermite | RigorousRiemann = GaussHermite()):
    """The composed fixed-point map g(s_rw(x)) with its error bound."""
    return g_of_s(s_rw(r, w, x), quadrature)


# ---------------------------------------------------------------------------
# contraction certification

@dataclass(frozen=True)
class CertificationReport:
    r: int
    w: float
    delta: float
    grid_step: float
    n: int
    z_cut: float
    target_margin: float
    certified: bool
    failed_x: float | None
    min_margin: float
    tail_bound: float
    lipschitz: float
    small_x_regime: str
    grid_x: np.ndarray = field(repr=False, default=None)
    margins: np.ndarray = field(repr=False, default=None)

    def to_json_dict(self, include_grid: bool = True) -> dict:
        out = {
            "r": self.r, "w": self.w, "delta": self.delta,
            "grid_step": self.grid_step, "n": self.n, "z_cut": self.z_cut,
            "target_margin": self.target_margin,
            "verdict": "certified" if self.certified else "failed",
            "failed_x": self.failed_x,
            "min_margin": self.min_margin,
            "tail_bound": self.tail_bound,
            "lipschitz": self.lipschitz,
            "small_x_regime": self.small_x_regime,
        }
        if include_grid:
            out["grid"] = [{"x": float(x), "margin": float(m)}
                           for x, m in zip(self.grid_x, self.margins)]
        return out


def _lipschitz_bound(r: int, w: float, delta: float) -> float:
    """Lipschitz constant of x -> g(s_rw(x)) on [delta, 1].

    |g(s) - g(s')| <= |s - s'| + sqrt(2/pi) |sqrt(s) - sqrt(s')| since
    tanh is 1-Lipschitz and E|Z| = sqrt(2/pi).  ds/dx is increasing, so
    its max is at x=1; the sqrt(s) slope is scanned on a fine grid with
    a 5% safety factor (it is smooth and slowly varying on [delta, 1]).
    """
    # ds/dx = (w/2)(r-1)((1+x)^(r-2) + (1-x)^(r-2)) is increasing; max at x=1
    ds_max = w * (r - 1) * 2 ** (r - 3)
    xs = np.linspace(delta, 1.0, 4001)
    s = s_rw(r, w, xs)
    dsdx = w / 2 * (r - 1) * ((1 + xs) ** (r - 2) + (1 - xs) ** (r - 2))
    with np.errstate(divide="ignore"):
        droot = np.where(s > 0, dsdx / (2 * np.sqrt(s)), np.inf)
    droot_max = float(np.max(droot)) * 1.05
    return ds_max + math.sqrt(2 / math.pi) * droot_max


def _small_x_certificate(r: int, w: float, delta: float) -> str:
    """Certify g_rw(x) < x on (0, delta] analytically.

    For (r=6, w=1/5, delta<=0.1): s <= x + x^2/4 and g(s) <= s - (2/3)s^2
    for s <= 0.105, giving g <= x - (5/12)x^2 < x.
    Otherwise require delta <= 1e-3 and slope w(r-1) + c2*delta^2 < 1 with
    the exact quadratic coefficient c2 = w*(2^(r-2) - (r-1)) of s(x)/x,
    so that g <= s < x on (0, delta].
    """
    if r == 6 and abs(w - 0.2) < 1e-15 and delta <= 0.1 + 1e-12:
        # s(x) = x + 2x^3 + x^5/5 <= x + 0.2002 x^2 <= x + x^2/4 on (0, 0.1]
        # and s <= 0.105 there; both checked numerically below
        xs = np.linspace(1e-6, delta, 2001)
        s = s_rw(r, w, xs)
        if np.any(s > xs + xs ** 2 / 4) or s[-1] > 0.105:
            raise VerificationError("small-x envelope failed unexpectedly")
        return "taylor-envelope"
    if delta > 1e-3 + 1e-12:
        raise ParameterError(
            "small-x regime only certified analytically for delta <= 1e-3 "
            "(or the r=6, w=1/5, delta<=0.1 constants)")
    c2 = w * (2 ** (r - 2) - (r - 1))
    if w * (r - 1) + max(c2, 0.0) * delta ** 2 >= 1 - 1e-12:
        raise ParameterError(
            f"slope bound w(r-1)={w * (r - 1):.6f} too close to 1 to cover "
            "(0, delta] analytically")
    return "slope-bound"


def certify_contraction(r: int, w: float, delta: float = 0.1,
                        grid_step: float = 0.001, n: int = RIEMANN_N_DEFAULT,
                        target_margin: float = 0.006,
                        z_cut: float = Z_CUT_DEFAULT,
                        threads: int = 1) -> CertificationReport:
    """Certify g_rw(x) < x for all x in (0, 1].

    Grid points of [delta, 1] are checked with the rigorous upper bound;
    the margin budget must dominate the Lipschitz slack (L+1)*step/2 so
    grid certification extends to the whole interval, and the (0, delta]
    regime is covered analytically.  Raises ParameterError before any
    computation when the budget is infeasible.
    """
    if not 0 < delta < 1:
        raise ParameterError("delta must lie in (0, 1)")
    if grid_step <= 0 or target_margin <= 0:
        raise ParameterError("grid_step and target_margin must be > 0")
    lip = _lipschitz_bound(r, w, delta)
    if target_margin < (lip + 1) * grid_step / 2:
        raise ParameterError(
            f"target margin {target_margin} cannot cover grid step "
            f"{grid_step} with Lipschitz constant {lip:.2f}; need >= "
            f"{(lip + 1) * grid_step / 2:.3g}")
    small_x = _small_x_certificate(r, w, delta)

    count = int(round((1 - delta) / grid_step)) + 1
    xs = delta + grid_step * np.arange(count)
    xs = np.clip(xs, 0.0, 1.0)
    if xs[-1] < 1.0 - 1e-12:
        xs = np.append(xs, 1.0)
    quad = RigorousRiemann(n=n, z_cut=z_cut)
    s = s_rw(r, w, xs)

    if threads > 1:
        chunks = np.array_split(np.arange(xs.size), threads * 4)
        uppers = np.empty(xs.size)

        def work(ix):
            return ix, _g_riemann(s[ix], n, z_cut, "upper", quad.tail())

        with ThreadPoolExecutor(max_workers=threads) as pool:
            for ix, vals in pool.map(work, [c for c in chunks if c.size]):
                uppers[ix] = vals
    else:
        uppers = _g_riemann(s, n, z_cut, "upper", quad.tail())

    margins = xs - uppers
    min_margin = float(margins.min())
    ok = min_margin >= target_margin
    failed_x = None if ok else float(xs[int(np.argmin(margins))])
    return CertificationReport(
        r=r, w=w, delta=delta, grid_step=grid_step, n=n, z_cut=z_cut,
        target_margin=target_margin, certified=bool(ok), failed_x=failed_x,
        min_margin=min_margin, tail_bound=quad.tail(), lipschitz=lip,
        small_x_regime=small_x, grid_x=xs, margins=margins,
    )


# ---------------------------------------------------------------------------
# largest contracting w

def _accept_analytic(r: int, w: float) -> bool:
    """s_rw(x)/x has nonnegative coefficients with total w*2^(r-2), so
    w <= 1/2^(r-2) forces s <= x and hence g <= s <= x everywhere."""
    return w * 2 ** (r - 2) <= 1.0


def _reject_heuristic(r: int, w: float, nodes: int) -> bool:
    xs = np.linspace(1e-4, 1.0, 10001)
    vals, _ = g_rw(r, w, xs, GaussHermite(nodes))
    return bool(np.any(vals - xs > 1e-9))


def _accept_heuristic(r: int, w: float, nodes: int) -> bool:
    xs = np.linspace(1e-4, 1.0, 10001)
    vals, _ = g_rw(r, w, xs, GaussHermite(nodes))
    diff = vals - xs
    if np.any(diff > -1e-12):
        # refine 10x around the near-contact point
        x0 = xs[int(np.argmax(diff))]
        fine = np.clip(np.linspace(x0 - 2e-4, x0 + 2e-4, 4001), 1e-6, 1.0)
        fv, _ = g_rw(r, w, fine, GaussHermite(nodes))
        return bool(np.all(fv - fine < 0))
    return True


def _reject_certified(r: int, w: float, n: int, z_cut: float) -> bool:
    """Exhibit x with a rigorous lower bound of g above x."""
    xs = np.linspace(1e-3, 1.0, 1001)
    quad = RigorousRiemann(n=n, z_cut=z_cut)
    lows = g_lower(s_rw(r, w, xs), quad)
    return bool(np.any(lows - xs > 0))


def _accept_certified(r: int, w: float, n: int, z_cut: float,
                      step: float = 1e-4) -> bool:
    """Certified acceptance of one w for the bisection.

    Margins of x - g_rw(x) vanish linearly as x -> 0, so a uniform grid
    margin can never hold all the way down; the cutoff delta is sized so
    the analytic slope bound covers (0, delta] while the grid margin at
    delta still clears the Lipschitz budget.
    """
    if _accept_analytic(r, w):
        return True
    slope_gap = 1 - w * (r - 1)
    if slope_gap <= 0:
        return False  # grid cannot help; contraction fails near 0 anyway
    lip = _lipschitz_bound(r, w, 1e-3)
    budget = (lip + 1) * step / 2
    delta = min(max(1e-3, 1.5 * budget / slope_gap), 0.05)
    c2 = w * (2 ** (r - 2) - (r - 1))
    if w * (r - 1) + max(c2, 0.0) * delta ** 2 >= 1 - 1e-12:
        return False
    try:
        rep = certify_contraction(r, w, delta=delta, grid_step=step, n=n,
                                  target_margin=budget * 1.02, z_cut=z_cut)
    except ParameterError:
        return False
    return rep.certified


def w_star(r: int, tol: float = 1e-4,
           mode: Literal["heuristic", "certified"] = "heuristic",
           n: int = RIEMANN_N_DEFAULT, z_cut: float = Z_CUT_DEFAULT,
           gh_nodes: int = 201, max_iters: int = 200) -> tuple[float, float]:
    """Bracket the largest w for which g_rw contracts on (0, 1].

    Bisection: a w is accepted when certification (certified mode) or a
    fine-grid check (heuristic mode) confirms g_rw <= x on [0, 1], and
    rejected when some x is exhibited with g_rw(x) > x.  An undecidable
    midpoint is first nudged within the bracket, then retried at higher
    quadrature resolution; only when that fails does the solver raise
    InconclusiveError carrying the offending w.
    """
    if r < 2:
        raise ParameterError("r must be >= 2")
    if tol <= 0:
        raise ParameterError("tol must be > 0")

    def accept(w: float, level: int = 0) -> bool:
        if mode == "certified":
            return _accept_certified(r, w, n * 4 ** level, z_cut,
                                     step=1e-4 / 2 ** level)
        return _accept_heuristic(r, w, gh_nodes + 100 * level)

    def reject(w: float, level: int = 0) -> bool:
        if mode == "certified":
            return _reject_certified(r, w, n * 4 ** level, z_cut)
        return _reject_heuristic(r, w, gh_nodes + 100 * level)

    lo = 1 / 2 ** (r - 2)  # always accepted analytically
    hi = 1.5 / (r - 1)
    while not reject(hi):
        lo = max(lo, hi)
        hi *= 2
        if hi > 64:
            raise InconclusiveError("no rejectable w found", witness=hi)
    if not accept(lo):
        raise InconclusiveError("analytic floor failed to accept", witness=lo)

    for _ in range(max_iters):
        if hi - lo <= tol:
            return lo, hi
        mid = (lo + hi) / 2
        decided = False
        for probe in (mid, mid - (hi - lo) / 6, mid + (hi - lo) / 6):
            if not lo < probe < hi:
                continue
            for level in (0, 1, 2):
                if accept(probe, level):
                    lo, decided = probe, True
                    break
                if reject(probe, level):
                    hi, decided = probe, True
                    break
            if decided:
                break
        if not decided:
            raise InconclusiveError(
                f"w={mid} neither certifies nor refutes at this resolution",
                witness=mid)
    return lo, hi
