"""Density evolution for broadcasting on hypertrees.

One evolution step composes the current channel with every hyperedge
below a vertex (the per-edge posterior update) and then aggregates the
independent edges (evidence combination), averaged over the offspring
law.  Both an exact finite-atom form and a Monte Carlo population form
are provided; the exact form is the oracle, the population form scales.

Exact clouds are held internally in folded (magnitude, pair mass) form,
which keeps the BMS pairing identity exact through every merge.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import bms
from .bms import ParticlePopulation, ThetaCloud, merge_folded
from .broadcast import BohtParams, _sign_patterns
from .errors import ParameterError, ResourceLimitError

__all__ = [
    "EvolutionTrace",
    "Verdict",
    "bp_step_exact",
    "bp_step_mc",
    "evolve",
    "verdict",
]

ATOM_CAP_DEFAULT = 1_000_000
MERGE_TOL_DEFAULT = 1e-12
ZERO_TOL_DEFAULT = 1e-8
EDGE_WORK_CAP = 100_000  # max b*(r-1) draws per output particle
POISSON_TAIL_TOL = 1e-12


# ---------------------------------------------------------------------------
# exact step, folded representation

def _edge_fold(mags: np.ndarray, masses: np.ndarray, r: int, lam: float,
               merge_tol: float, atom_cap: int) -> tuple[np.ndarray, np.ndarray]:
    """Folded cloud of the channel "parent -> one hyperedge of noisy children".

    Enumerates u = theta*y jointly over the signed support: the joint
    weight of a u-tuple is prod(pair masses) times the outcome mass
    R+(u) = ((1-lam) + lam*prod(1+u_i)) / 2^(r-1), and the posterior is
    lam*(P - Q) / (2(1-lam) + lam*(P + Q)) with P = prod(1+u), Q = prod(1-u).
    """
    u_vals = np.concatenate([mags, -mags])
    u_mass = np.concatenate([masses, masses])
    n_signed = u_vals.size
    if n_signed ** (r - 1) > atom_cap:
        raise ResourceLimitError(
            f"edge enumeration {n_signed}^{r - 1} exceeds atom cap {atom_cap}; "
            "use Monte Carlo mode or a coarser merge tolerance")
    p = np.array([1.0])
    q = np.array([1.0])
    w = np.array([1.0])
    for _ in range(r - 1):
        p = (p[:, None] * (1 + u_vals)[None, :]).ravel()
        q = (q[:, None] * (1 - u_vals)[None, :]).ravel()
        w = (w[:, None] * u_mass[None, :]).ravel()
    out_mass = w * ((1 - lam) + lam * p) / 2 ** (r - 1)
    den = 2 * (1 - lam) + lam * (p + q)
    theta = np.where(den <= 0, 0.0, lam * (p - q) / np.where(den <= 0, 1.0, den))
    return merge_folded(np.abs(theta), out_mass, merge_tol)


def _star_fold(a1: np.ndarray, m1: np.ndarray, a2: np.ndarray, m2: np.ndarray,
               merge_tol: float, atom_cap: int) -> tuple[np.ndarray, np.ndarray]:
    """Folded cloud of the product channel of two independent observations.

    For pair atoms (a1, m1) x (a2, m2) the combined magnitudes are
    (a1+a2)/(1+a1*a2) carrying the agreeing sign mass and
    |a1-a2|/(1-a1*a2) carrying the disagreeing mass.
    """
    if 2 * a1.size * a2.size > atom_cap:
        raise ResourceLimitError(
            f"star enumeration 2*{a1.size}*{a2.size} exceeds atom cap {atom_cap}; "
            "use Monte Carlo mode or a coarser merge tolerance")
    w1p, w1m = m1 * (1 + a1) / 2, m1 * (1 - a1) / 2
    w2p, w2m = m2 * (1 + a2) / 2, m2 * (1 - a2) / 2
    A, B = a1[:, None], a2[None, :]
    v_agree = (A + B) / (1 + A * B)
    den = 1 - A * B
    v_diff = np.where(den == 0, 0.0, np.abs(A - B) / np.where(den == 0, 1.0, den))
    mass_agree = w1p[:, None] * w2p[None, :] + w1m[:, None] * w2m[None, :]
    mass_diff = w1p[:, None] * w2m[None, :] + w1m[:, None] * w2p[None, :]
    vals = np.concatenate([v_agree.ravel(), v_diff.ravel()])
    mass = np.concatenate([mass_agree.ravel(), mass_diff.ravel()])
    return merge_folded(np.clip(vals, 0.0, 1.0), mass, merge_tol)


@dataclass
class _ExactStepResult:
    cloud: ThetaCloud
    edge_cloud: ThetaCloud  # the intermediate one-hyperedge channel


def _folded_moment(mags: np.ndarray, masses: np.ndarray, k: int) -> float:
    # moments of the expanded pair cloud: odd k gives E theta^(k+1)'s partner
    if k % 2 == 0:
        return float(np.sum(masses * mags ** k))
    return float(np.sum(masses * mags ** (k + 1)))


def bp_step_exact(cloud: ThetaCloud, params: BohtParams,
                  merge_tol: float = MERGE_TOL_DEFAULT,
                  atom_cap: int = ATOM_CAP_DEFAULT) -> ThetaCloud:
    """One exact density-evolution step on an atom cloud."""
    return _bp_step_exact_full(cloud, params, merge_tol, atom_cap).cloud


def _bp_step_exact_full(cloud: ThetaCloud, params: BohtParams,
                        merge_tol: float, atom_cap: int) -> _ExactStepResult:
    if not cloud.exact:
        raise ParameterError("exact evolution needs an exact cloud")
    mags, masses = cloud.to_folded()
    bs, pb = params.offspring.truncated_pmf(POISSON_TAIL_TOL)
    ea, em = _edge_fold(mags, masses, params.r, params.lam, merge_tol, atom_cap)
    mix_vals, mix_mass = [], []
    cur_a, cur_m = np.array([0.0]), np.array([1.0])  # star power 0
    b_prev = 0
    for b, prob in zip(bs.tolist(), pb.tolist()):
        while b_prev < b:
            cur_a, cur_m = _star_fold(cur_a, cur_m, ea, em, merge_tol, atom_cap)
            b_prev += 1
        if prob > 0:
            mix_vals.append(cur_a)
            mix_mass.append(cur_m * prob)
    out_a, out_m = merge_folded(np.concatenate(mix_vals),
                                np.concatenate(mix_mass), merge_tol)
    return _ExactStepResult(
        cloud=ThetaCloud.from_folded(out_a, out_m),
        edge_cloud=ThetaCloud.from_folded(ea, em),
    )


# ---------------------------------------------------------------------------
# Monte Carlo step

def bp_step_mc(pop: ParticlePopulation, params: BohtParams,
               rng: np.random.Generator,
               edge_work_cap: int = EDGE_WORK_CAP) -> ParticlePopulation:
    """One population-dynamics step: each output particle resamples its
    children with replacement, pushes them through a hyperedge draw, and
    combines its edges."""
    n = pop.size
    r, lam = params.r, params.lam
    b = params.offspring.sample(rng, size=n)
    if np.any(b * (r - 1) > edge_work_cap):
        raise ResourceLimitError(
            f"offspring draw needs more than {edge_work_cap} child samples "
            "for one particle")
    total_edges = int(b.sum())
    if total_edges == 0:
        out = np.zeros(n)
    else:
        idx = rng.integers(0, n, size=(total_edges, r - 1))
        th = pop.particles[idx]
        # outcome sampling: P(y) = ((1-lam) + lam*prod(1+th*y)) / 2^(r-1)
        signs = _sign_patterns(r - 1)
        alpha = np.prod(1 + th[:, None, :] * signs[None, :, :], axis=2)
        probs = ((1 - lam) + lam * alpha) / 2 ** (r - 1)
        probs = np.clip(probs, 0.0, None)
        cdf = np.cumsum(probs, axis=1)
        u = rng.random(total_edges) * cdf[:, -1]
        pick = (u[:, None] > cdf).sum(axis=1)
        y = signs[pick]
        a_plus = np.prod(1 + th * y, axis=1)
        a_minus = np.prod(1 - th * y, axis=1)
        den = 2 * (1 - lam) + lam * (a_plus + a_minus)
        edge_theta = np.where(den <= 0, 0.0,
                              lam * (a_plus - a_minus) / np.where(den <= 0, 1.0, den))
        edge_theta = np.clip(edge_theta, -1.0, 1.0)
        # segmented combine in log space: tanh((sum log1p(t) - sum log1p(-t))/2)
        with np.errstate(divide="ignore", invalid="ignore"):
            lp = np.log1p(edge_theta)
            lm = np.log1p(-edge_theta)
        starts = np.concatenate([[0], np.cumsum(b)[:-1]])
        if np.any(np.isinf(lp)) or np.any(np.isinf(lm)):
            # hard evidence |theta| = 1 present (lambda = 1 corner): exact path
            out = _combine_segments_safe(edge_theta, starts, b, np.zeros(n))
        else:
            has_edges = b > 0
            seg_lp = np.zeros(n)
            seg_lm = np.zeros(n)
            csum_lp = np.concatenate([[0.0], np.cumsum(lp)])
            csum_lm = np.concatenate([[0.0], np.cumsum(lm)])
            ends = starts + b
            seg_lp[has_edges] = csum_lp[ends[has_edges]] - csum_lp[starts[has_edges]]
            seg_lm[has_edges] = csum_lm[ends[has_edges]] - csum_lm[starts[has_edges]]
            out = np.tanh((seg_lp - seg_lm) / 2)
    return ParticlePopulation(out, seed=pop.seed, generation=pop.generation + 1)


def _combine_segments_safe(edge_theta, starts, counts, fallback):
    """Exact per-segment combine for populations containing |theta| = 1."""
    out = fallback.copy()
    t = edge_theta
    for i, (s, c) in enumerate(zip(starts.tolist(), counts.tolist())):
        if c == 0:
            out[i] = 0.0
            continue
        seg = t[s:s + c]
        ones = np.count_nonzero(seg == 1.0)
        minus = np.count_nonzero(seg == -1.0)
        if ones and minus:
            out[i] = 0.0
        elif ones:
            out[i] = 1.0
        elif minus:
            out[i] = -1.0
        else:
            lp = float(np.sum(np.log1p(seg)))
            lm = float(np.sum(np.log1p(-seg)))
            out[i] = float(np.tanh((lp - lm) / 2))
    return out


# ---------------------------------------------------------------------------
# evolution driver and verdicts

@dataclass
class EvolutionTrace:
    """Per-iteration second/fourth moments of the evolving channel."""

    params: BohtParams
    mode: Literal["exact", "mc"]
    seed: int | None
    ks: list[int] = field(default_factory=list)
    x: list[float] = field(default_factory=list)
    y: list[float] = field(default_factory=list)
    x_prime: list[float | None] = field(default_factory=list)
    y_prime: list[float | None] = field(default_factory=list)
    size: list[int] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def record(self, k, x, y, xp, yp, size, secs):
        if not (-1e-12 <= y <= x + 1e-12 and x <= 1 + 1e-12):
            raise ParameterError(f"moment ordering violated at k={k}: x={x} y={y}")
        self.ks.append(k)
        self.x.append(float(x))
        self.y.append(float(y))
        self.x_prime.append(None if xp is None else float(xp))
        self.y_prime.append(None if yp is None else float(yp))
        self.size.append(int(size))
        self.seconds.append(float(secs))

    def final_x(self) -> float:
        return self.x[-1]

    def to_rows(self) -> list[dict]:
        rows = []
        for i in range(len(self.ks)):
            rows.append({
                "k": self.ks[i], "x": self.x[i], "y": self.y[i],
                "x_prime": self.x_prime[i], "y_prime": self.y_prime[i],
                "size": self.size[i], "seconds": self.seconds[i],
            })
        return rows

    def to_json_dict(self) -> dict:
        return {
            "params": {
                "r": self.params.r,
                "lambda": self.params.lam,
                "offspring": {"kind": self.params.offspring.kind,
                              "d": self.params.offspring.d},
            },
            "mode": self.mode,
            "seed": self.seed,
            "rows": self.to_rows(),
        }


@dataclass(frozen=True)
class Verdict:
    kind: Literal["reconstructible", "not_reconstructible", "inconclusive"]
    final_x: float
    iterations: int
    stat_error: float


def evolve(start: ThetaCloud | ParticlePopulation, params: BohtParams,
           max_iters: int, mode: Literal["exact", "mc"] = "exact",
           merge_tol: float = MERGE_TOL_DEFAULT, atom_cap: int = ATOM_CAP_DEFAULT,
           pop_size: int = 1_000_000, rng: np.random.Generator | None = None,
           seed: int | None = None) -> EvolutionTrace:
    """Iterate density evolution, recording moments each iteration.

    In exact mode ``start`` must be a ThetaCloud; the intermediate
    one-hyperedge channel's moments are recorded too.  In Monte Carlo
    mode a ThetaCloud start is sampled into ``pop_size`` particles.
    """
    trace = EvolutionTrace(params=params, mode=mode, seed=seed)
    if mode == "exact":
        if not isinstance(start, ThetaCloud):
            raise ParameterError("exact mode starts from a ThetaCloud")
        cur = start
        trace.record(0, cur.moment(2), cur.moment(4), None, None,
                     cur.atom_count, 0.0)
        for k in range(1, max_iters + 1):
            t0 = time.perf_counter()
            res = _bp_step_exact_full(cur, params, merge_tol, atom_cap)
            cur = res.cloud
            trace.record(k, cur.moment(2), cur.moment(4),
                         res.edge_cloud.moment(2), res.edge_cloud.moment(4),
                         cur.atom_count, time.perf_counter() - t0)
        return trace
    if mode == "mc":
        if rng is None:
            rng = np.random.Generator(np.random.Philox(seed if seed is not None else 0))
        if isinstance(start, ThetaCloud):
            particles = rng.choice(start.thetas, size=pop_size, p=start.weights)
            pop = ParticlePopulation(particles, seed=seed or 0, generation=0)
        else:
            pop = start
        trace.record(0, pop.moment(2), pop.moment(4), None, None, pop.size, 0.0)
        for k in range(1, max_iters + 1):
            t0 = time.perf_counter()
            pop = bp_step_mc(pop, params, rng)
            trace.record(k, pop.moment(2), pop.moment(4), None, None,
                         pop.size, time.perf_counter() - t0)
        return trace
    raise ParameterError(f"unknown mode {mode!r}")


def verdict(trace: EvolutionTrace, zero_tol: float = ZERO_TOL_DEFAULT,
            stability_window: int = 10) -> Verdict:
    """Interpret a finite trace.

    Any finite-depth call is a heuristic: near-critical parameter points
    may legitimately come out inconclusive.
    """
    if len(trace.ks) - 1 < stability_window:
        raise ParameterError("trace shorter than the stability window")
    x_final = trace.final_x()
    stat_err = 0.0
    threshold = zero_tol
    if trace.mode == "mc":
        stat_err = np.sqrt(max(trace.x[-1], 0.0)) / np.sqrt(trace.size[-1])
        threshold = max(zero_tol, 3 * stat_err)
    if x_final < threshold:
        return Verdict("not_reconstructible", x_final, trace.ks[-1], stat_err)
    window = trace.x[-stability_window:]
    rel_change = (max(window) - min(window)) / max(window)
    if rel_change < 1e-3 and x_final > 100 * zero_tol:
        return Verdict("reconstructible", x_final, trace.ks[-1], stat_err)
    return Verdict("inconclusive", x_final, trace.ks[-1], stat_err)
