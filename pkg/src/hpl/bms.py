"""Binary memoryless symmetric channels as weighted signed-theta atom clouds.

A BMS channel is equivalent to a random mixture of binary symmetric
channels and is fully described by the distribution of the signed
statistic theta = (P(y|+) - P(y|-)) / (P(y|+) + P(y|-)) of the
observation y drawn under the "+" input.  A BSC with flip probability
delta contributes a *pair* of atoms,

    theta = 1 - 2*delta   with probability 1 - delta,
    theta = 2*delta - 1   with probability delta,

so a channel that is exactly BMS satisfies the pairing identity
w(+t)*(1-t) = w(-t)*(1+t) for every magnitude t, which in turn forces
E theta^(2k-1) = E theta^(2k).  The chi^2-capacity is E theta^2.

Two representations are provided: :class:`ThetaCloud` (finite atom
list, exact arithmetic) and :class:`ParticlePopulation` (Monte Carlo
sample of theta values, for large-scale density evolution).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParameterError

MERGE_TOL_DEFAULT = 1e-12
PAIRING_TOL = 1e-12
WEIGHT_SUM_TOL = 1e-12
MOMENT_PAIR_TOL = 1e-10
MAX_MOMENT = 8

__all__ = [
    "ThetaCloud",
    "ParticlePopulation",
    "make_bsc",
    "from_delta_distribution",
    "chi2_capacity",
    "moment",
    "validate",
    "merge_folded",
]


def merge_folded(mags: np.ndarray, masses: np.ndarray, tol: float,
                 prune: float = 1e-250) -> tuple[np.ndarray, np.ndarray]:
    """Merge folded (|theta|, mass) pairs whose magnitudes fall in the same
    tol-wide bin, replacing each bin by its mass-weighted mean magnitude.

    Mass is conserved exactly (up to the renormalisation of float dust),
    the pairing identity is preserved by construction, and the first
    moment of |theta| is preserved exactly per merge; higher moments move
    by O(tol^2).  Bins whose mass underflows below ``prune`` are dropped
    and the rest renormalised.
    """
    if mags.size == 0:
        return np.array([0.0]), np.array([1.0])
    keys = np.round(mags / max(tol, 1e-16)).astype(np.int64)
    _, inv = np.unique(keys, return_inverse=True)
    m = np.bincount(inv, weights=masses)
    am = np.bincount(inv, weights=masses * mags)
    keep = m > prune
    m, am = m[keep], am[keep]
    if m.size == 0:
        return np.array([0.0]), np.array([1.0])
    mags = np.clip(am / m, 0.0, 1.0)
    return mags, m / m.sum()


def _merge_signed(thetas: np.ndarray, weights: np.ndarray, tol: float
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Deduplicate signed atoms whose theta values coincide within tol."""
    keys = np.round(thetas / max(tol, 1e-16)).astype(np.int64)
    _, inv = np.unique(keys, return_inverse=True)
    w = np.bincount(inv, weights=weights)
    tw = np.bincount(inv, weights=weights * thetas)
    keep = w > 0
    w, tw = w[keep], tw[keep]
    t = np.clip(tw / w, -1.0, 1.0)
    order = np.argsort(t)
    return t[order], w[order]


@dataclass(frozen=True)
class ThetaCloud:
    """A finite mixture of signed theta atoms under the "+" output law.

    ``exact=True`` asserts the atoms came from exact channel arithmetic
    and must satisfy the BMS pairing identity; ``exact=False`` marks
    clouds of statistical origin where only the range and normalisation
    invariants are enforced.
    """

    thetas: np.ndarray
    weights: np.ndarray
    exact: bool = True

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.thetas, dtype=np.float64))
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        if t.shape != w.shape or t.ndim != 1:
            raise ParameterError("atoms need matching 1-d theta and weight arrays")
        if t.size == 0:
            raise ParameterError("empty cloud")
        if np.any(np.abs(t) > 1 + 1e-12):
            raise ParameterError("theta atoms must lie in [-1, 1]")
        if np.any(w <= 0):
            raise ParameterError("weights must be positive")
        if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ParameterError(f"weights sum to {w.sum()!r}, not 1")
        t, w = _merge_signed(np.clip(t, -1.0, 1.0), w, MERGE_TOL_DEFAULT)
        t.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "thetas", t)
        object.__setattr__(self, "weights", w)

    @property
    def atom_count(self) -> int:
        return int(self.thetas.size)

    def moment(self, k: int) -> float:
        if not 1 <= k <= MAX_MOMENT:
            raise ParameterError(f"moment order must be in [1, {MAX_MOMENT}]")
        return float(np.sum(self.weights * self.thetas ** k))

    def chi2_capacity(self) -> float:
        return self.moment(2)

    def to_folded(self) -> tuple[np.ndarray, np.ndarray]:
        """Fold mirror atoms into (|theta|, pair mass) form.

        Only meaningful for exact clouds; the mass at magnitude t is
        w(+t) + w(-t) and the expansion back is w(+-t) = m*(1 +- t)/2.
        """
        return merge_folded(np.abs(self.thetas), self.weights, 1e-15, prune=0.0)

    @classmethod
    def from_folded(cls, mags: np.ndarray, masses: np.ndarray) -> "ThetaCloud":
        t = np.concatenate([mags, -mags])
        w = np.concatenate([masses * (1 + mags) / 2, masses * (1 - mags) / 2])
        keep = w > 0
        return cls(t[keep], w[keep] / w[keep].sum(), exact=True)

    def to_json(self) -> str:
        return json.dumps({
            "atoms": [[float(t), float(w)] for t, w in zip(self.thetas, self.weights)],
            "exact": self.exact,
        })

    @classmethod
    def from_json(cls, text: str) -> "ThetaCloud":
        obj = json.loads(text)
        atoms = np.asarray(obj["atoms"], dtype=np.float64)
        return cls(atoms[:, 0], atoms[:, 1], exact=bool(obj["exact"]))


@dataclass(frozen=True)
class ParticlePopulation:
    """Monte Carlo stand-in for a ThetaCloud: i.i.d. theta samples.

    Carries the seed it was grown from and a generation counter so runs
    can be replayed exactly.
    """

    particles: np.ndarray
    seed: int
    generation: int = 0

    def __post_init__(self):
        p = np.asarray(self.particles, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise ParameterError("population must be a nonempty 1-d array")
        if np.any(np.abs(p) > 1 + 1e-12):
            raise ParameterError("particle theta values must lie in [-1, 1]")
        if self.generation < 0:
            raise ParameterError("generation must be >= 0")
        p = np.clip(p, -1.0, 1.0)
        p.setflags(write=False)
        object.__setattr__(self, "particles", p)

    @property
    def size(self) -> int:
        return int(self.particles.size)

    def moment(self, k: int) -> float:
        if not 1 <= k <= MAX_MOMENT:
            raise ParameterError(f"moment order must be in [1, {MAX_MOMENT}]")
        # numpy's pairwise summation keeps the reduction order-stable
        return float(np.mean(self.particles ** k))

    def chi2_capacity(self) -> float:
        return self.moment(2)

    def stderr(self, k: int = 2) -> float:
        v = self.particles ** k
        return float(np.std(v) / np.sqrt(v.size))

    def save(self, path: str | Path) -> dict:
        """Write particles as little-endian float64 raw binary; return metadata."""
        path = Path(path)
        self.particles.astype("<f8").tofile(path)
        return {"particles_file": str(path), "seed": int(self.seed),
                "generation": int(self.generation)}

    @classmethod
    def load(cls, meta: dict) -> "ParticlePopulation":
        arr = np.fromfile(meta["particles_file"], dtype="<f8")
        return cls(arr, seed=int(meta["seed"]), generation=int(meta.get("generation", 0)))


def make_bsc(delta: float) -> ThetaCloud:
    """The binary symmetric channel with flip probability delta as a cloud.

    delta=0 is the noiseless identity (single atom at 1), delta=1/2 the
    pure-noise channel (single atom at 0).
    """
    if not 0 <= delta <= 0.5:
        raise ParameterError(f"delta must lie in [0, 1/2], got {delta}")
    t = 1 - 2 * delta
    if t == 0:
        return ThetaCloud(np.array([0.0]), np.array([1.0]), exact=True)
    if delta == 0:
        return ThetaCloud(np.array([1.0]), np.array([1.0]), exact=True)
    return ThetaCloud(np.array([t, -t]), np.array([1 - delta, delta]), exact=True)


def from_delta_distribution(deltas: Iterable[tuple[float, float]]) -> ThetaCloud:
    """Push a finite distribution over BSC noise levels to its theta cloud."""
    pairs = list(deltas)
    if not pairs:
        raise ParameterError("empty delta distribution")
    w_total = sum(w for _, w in pairs)
    if abs(w_total - 1.0) > WEIGHT_SUM_TOL:
        raise ParameterError(f"delta weights sum to {w_total}, not 1")
    ts, ws = [], []
    for d, w in pairs:
        if not 0 <= d <= 0.5:
            raise ParameterError(f"delta {d} outside [0, 1/2]")
        if w <= 0:
            raise ParameterError("delta weights must be positive")
        t = 1 - 2 * d
        ts.extend([t, -t])
        ws.extend([w * (1 - d), w * d])
    t = np.array(ts)
    w = np.array(ws)
    keep = w > 0
    return ThetaCloud(t[keep], w[keep], exact=True)


def chi2_capacity(channel: ThetaCloud | ParticlePopulation) -> float:
    """E theta^2, the chi^2-capacity; equals E theta for exact clouds."""
    return channel.chi2_capacity()


def moment(channel: ThetaCloud | ParticlePopulation, k: int) -> float:
    """E theta^k for k up to 8."""
    return channel.moment(k)


def validate(cloud: ThetaCloud) -> dict:
    """Check every cloud invariant; returns per-check pass/fail with the
    violated quantity."""
    checks = {}

    w = cloud.weights
    checks["weights_sum_to_one"] = {
        "ok": bool(abs(w.sum() - 1.0) <= WEIGHT_SUM_TOL),
        "value": float(w.sum()),
    }
    checks["theta_in_range"] = {
        "ok": bool(np.all(np.abs(cloud.thetas) <= 1.0)),
        "value": float(np.max(np.abs(cloud.thetas))),
    }

    if cloud.exact:
        worst = 0.0
        lookup = {round(t / PAIRING_TOL): (t, w) for t, w in
                  zip(cloud.thetas.tolist(), cloud.weights.tolist())}
        for t, wt in zip(cloud.thetas.tolist(), cloud.weights.tolist()):
            if t <= 0:
                continue
            mirror = lookup.get(round(-t / PAIRING_TOL))
            w_minus = mirror[1] if mirror is not None else 0.0
            # w(+t)(1-t) = w(-t)(1+t); an unmirrored atom is legal only at t=1
            worst = max(worst, abs(wt * (1 - t) - w_minus * (1 + t)))
        checks["pairing"] = {"ok": bool(worst <= PAIRING_TOL), "value": worst}

        worst_m = 0.0
        for k in (1, 2, 3, 4):
            worst_m = max(worst_m, abs(cloud.moment(2 * k - 1) - cloud.moment(2 * k)))
        checks["odd_even_moments"] = {"ok": bool(worst_m <= MOMENT_PAIR_TOL),
                                      "value": worst_m}

    checks["ok"] = all(v["ok"] for k, v in checks.items() if k != "ok")
    return checks


def validate_population(pop: ParticlePopulation) -> dict:
    """Statistical BMS check: sample means of theta and theta^2 agree
    within 4 standard errors."""
    m1 = pop.moment(1)
    m2 = pop.moment(2)
    diff = pop.particles - pop.particles ** 2
    se = float(np.std(diff) / np.sqrt(pop.size))
    ok = abs(m1 - m2) <= 4 * se or abs(m1 - m2) <= 1e-12
    return {"ok": bool(ok), "mean_theta": m1, "mean_theta_sq": m2,
            "stderr": se, "value": abs(m1 - m2)}
