"""The hyperedge broadcast channel and its per-edge posterior algebra.

A hyperedge of size r carries the parent label to its r-1 children: with
probability weight lambda the children all copy the parent, and the
remaining mass is spread uniformly over all sign patterns.  Conditioned
on the children's noisy theta statistics, an observed pattern y updates
the parent posterior through the product alpha(theta, y) = prod(1 + theta_i*y_i);
independent edges below one vertex combine by the evidence product rule.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import ParameterError, ResourceLimitError

__all__ = [
    "OffspringDist",
    "BohtParams",
    "LabeledHypertree",
    "lambda_floor",
    "broadcast_kernel",
    "edge_plus_law",
    "edge_theta",
    "combine_edges",
    "apply_bsc_noise",
    "sample_hypertree",
]

R_MAX = 16
TREE_VERTEX_CAP = 10_000_000
LOG_SPACE_THRESHOLD = 1 - 1e-9


def lambda_floor(r: int) -> float:
    return -1.0 / (2 ** (r - 1) - 1)


@dataclass(frozen=True)
class OffspringDist:
    """Offspring law of the hypertree: point mass at d or Poisson(d)."""

    kind: Literal["point", "poisson"]
    d: float

    def __post_init__(self):
        if self.kind not in ("point", "poisson"):
            raise ParameterError(f"unknown offspring kind {self.kind!r}")
        if self.d < 0:
            raise ParameterError("offspring mean d must be >= 0")
        if self.kind == "point" and self.d != int(self.d):
            raise ParameterError("point offspring requires integral d")

    def mean(self) -> float:
        return float(self.d)

    def factorial_second_moment(self) -> float:
        """E b(b-1): d(d-1) for a point mass, d^2 for Poisson."""
        return self.d * (self.d - 1) if self.kind == "point" else self.d ** 2

    def sample(self, rng: np.random.Generator, size: int | None = None):
        if self.kind == "point":
            b = int(self.d)
            return b if size is None else np.full(size, b, dtype=np.int64)
        return (int(rng.poisson(self.d)) if size is None
                else rng.poisson(self.d, size=size).astype(np.int64))

    def truncated_pmf(self, tail_tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
        """Finite support (b, P(b)) for exact mixtures.

        Poisson mass beyond the smallest b_max with tail < tail_tol is
        folded into b_max so the mixture stays normalised.
        """
        if self.kind == "point":
            return np.array([int(self.d)]), np.array([1.0])
        d = self.d
        probs = [math.exp(-d)]
        b = 0
        while 1.0 - sum(probs) >= tail_tol:
            b += 1
            probs.append(probs[-1] * d / b)
            if b > 10_000:
                raise ResourceLimitError("poisson truncation did not converge")
        p = np.array(probs)
        p[-1] += 1.0 - p.sum()
        return np.arange(b + 1), p


@dataclass(frozen=True)
class BohtParams:
    """Hyperedge size r, strength lambda, and the offspring law."""

    r: int
    lam: float
    offspring: OffspringDist

    def __post_init__(self):
        if not 2 <= self.r <= R_MAX:
            raise ParameterError(f"r must be in [2, {R_MAX}]")
        lo = lambda_floor(self.r)
        if not lo - 1e-12 <= self.lam <= 1 + 1e-12:
            raise ParameterError(f"lambda {self.lam} outside [{lo}, 1] for r={self.r}")

    def ks_value(self) -> float:
        """(r-1) d lambda^2; the critical surface is at 1."""
        return (self.r - 1) * self.offspring.mean() * self.lam ** 2


def broadcast_kernel(r: int, lam: float, parent: int, children: tuple[int, ...]) -> float:
    """P(children sign pattern | parent sign) for one hyperedge."""
    if len(children) != r - 1:
        raise ParameterError(f"expected {r - 1} children signs")
    BohtParams(r, lam, OffspringDist("point", 0))
    base = (1 - lam) / 2 ** (r - 1)
    if all(c == parent for c in children):
        return lam + base
    return base


def edge_plus_law(thetas: np.ndarray, lam: float) -> np.ndarray:
    """Distribution of the children pattern y in {+-}^(r-1) under a "+"
    parent, conditioned on the children's channel atoms.

    Returns the 2^(r-1) probabilities in lexicographic y order with +
    encoded as +1 first, i.e. index bits 0 -> +1, 1 -> -1.
    """
    thetas = np.asarray(thetas, dtype=np.float64)
    r = thetas.size + 1
    lo = lambda_floor(r)
    if lam < lo - 1e-12 or lam > 1 + 1e-12:
        raise ParameterError(f"lambda {lam} outside [{lo}, 1] for r={r}")
    if np.any(np.abs(thetas) > 1 + 1e-12):
        raise ParameterError("theta values must lie in [-1, 1]")
    signs = _sign_patterns(r - 1)
    alpha = np.prod(1 + thetas[None, :] * signs, axis=1)
    p = ((1 - lam) + lam * alpha) / 2 ** (r - 1)
    if np.any(p < -1e-12):
        raise ParameterError("negative outcome probability: lambda below legal floor")
    return np.clip(p, 0.0, None)


def edge_theta(thetas: np.ndarray, y: np.ndarray, lam: float) -> float:
    """Posterior theta statistic of the parent after observing pattern y
    through one hyperedge whose children have the given theta atoms.

    Zero-probability outcomes return 0 (they are never sampled; a total
    function keeps callers branch-free).
    """
    thetas = np.asarray(thetas, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    a_plus = float(np.prod(1 + thetas * y))
    a_minus = float(np.prod(1 - thetas * y))
    den = 2 * (1 - lam) + lam * (a_plus + a_minus)
    if den <= 0:
        return 0.0
    return lam * (a_plus - a_minus) / den


def combine_edges(edge_thetas: np.ndarray) -> float:
    """Aggregate independent per-edge posterior thetas for one vertex.

    Uses the product form (prod(1+t) - prod(1-t)) / (prod(1+t) + prod(1-t)),
    switching to log-space when any |t| is within 1e-9 of 1 so the products
    cannot overflow or lose the leading digits.  Contradictory evidence
    (+1 and -1 both present) returns 0.
    """
    t = np.asarray(edge_thetas, dtype=np.float64)
    if t.size == 0:
        return 0.0
    if np.any(np.abs(t) > 1 + 1e-12):
        raise ParameterError("theta values must lie in [-1, 1]")
    t = np.clip(t, -1.0, 1.0)
    if np.any(np.abs(t) > LOG_SPACE_THRESHOLD):
        has_one = np.any(t == 1.0)
        has_minus_one = np.any(t == -1.0)
        if has_one and has_minus_one:
            return 0.0
        if has_one:
            return 1.0
        if has_minus_one:
            return -1.0
        lp = np.sum(np.log1p(t))
        lm = np.sum(np.log1p(-t))
        # (e^lp - e^lm)/(e^lp + e^lm) = tanh((lp - lm)/2)
        return float(np.tanh((lp - lm) / 2))
    p = float(np.prod(1 + t))
    m = float(np.prod(1 - t))
    if p + m == 0:
        return 0.0
    return (p - m) / (p + m)


def combine_pair(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorised two-way combine: (a+b)/(1+a*b), with 0 on contradictions."""
    den = 1 + a * b
    return np.where(den == 0, 0.0, (a + b) / np.where(den == 0, 1.0, den))


def apply_bsc_noise(channel, delta: float):
    """Compose a channel with an extra BSC(delta) flip stage.

    Every posterior statistic shrinks by the factor 1-2*delta, so
    E theta^2 can only decrease (the data processing inequality).  For
    exact clouds the scaling acts on folded (magnitude, mass) pairs,
    which keeps the pairing identity exact; raw arrays scale directly.
    """
    if not 0 <= delta <= 0.5:
        raise ParameterError("delta must lie in [0, 1/2]")
    from .bms import ThetaCloud
    if isinstance(channel, ThetaCloud):
        mags, masses = channel.to_folded()
        return ThetaCloud.from_folded(mags * (1 - 2 * delta), masses)
    return np.asarray(channel) * (1 - 2 * delta)


_SIGN_CACHE: dict[int, np.ndarray] = {}


def _sign_patterns(k: int) -> np.ndarray:
    """All vectors in {+1,-1}^k, lexicographic, bit 0 of the row index
    giving the last coordinate (0 -> +1)."""
    if k not in _SIGN_CACHE:
        grid = np.indices((2,) * k).reshape(k, -1).T
        _SIGN_CACHE[k] = 1 - 2 * grid.astype(np.float64)
    return _SIGN_CACHE[k]


@dataclass
class LabeledHypertree:
    """A sampled labeled linear hypertree in BFS layout.

    ``levels[v]`` is the depth of vertex v, ``labels[v]`` its +-1 sign,
    ``parent_edge[v]`` the index of the unique upward hyperedge (-1 for
    the root), and ``edges[e] = (parent, children tuple)``.
    """

    levels: np.ndarray
    labels: np.ndarray
    parent_edge: np.ndarray
    edges: list[tuple[int, tuple[int, ...]]] = field(default_factory=list)

    @property
    def vertex_count(self) -> int:
        return int(self.labels.size)

    def vertices_at_level(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.levels == k)

    def to_jsonl(self) -> str:
        lines = []
        for v in range(self.vertex_count):
            lines.append(json.dumps({
                "id": int(v),
                "level": int(self.levels[v]),
                "parent_edge": int(self.parent_edge[v]),
                "label": "+" if self.labels[v] > 0 else "-",
            }))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "LabeledHypertree":
        rows = [json.loads(line) for line in text.strip().splitlines()]
        rows.sort(key=lambda r: r["id"])
        levels = np.array([r["level"] for r in rows], dtype=np.int64)
        labels = np.array([1 if r["label"] == "+" else -1 for r in rows], dtype=np.int64)
        parent_edge = np.array([r["parent_edge"] for r in rows], dtype=np.int64)
        return cls(levels, labels, parent_edge)


def sample_hypertree(params: BohtParams, depth: int, rng: np.random.Generator,
                     vertex_cap: int = TREE_VERTEX_CAP) -> LabeledHypertree:
    """Grow a labeled Galton-Watson hypertree to the given depth.

    The root sign is uniform; every vertex above the last level draws
    b ~ D downward hyperedges and each edge's children are drawn jointly
    from the broadcast kernel given the parent sign.
    """
    if depth < 0:
        raise ParameterError("depth must be >= 0")
    r, lam = params.r, params.lam
    base = (1 - lam) / 2 ** (r - 1)
    levels = [0]
    labels = [1 if rng.random() < 0.5 else -1]
    parent_edge = [-1]
    edges: list[tuple[int, tuple[int, ...]]] = []
    frontier = [0]
    patterns = _sign_patterns(r - 1)
    # outcome law for a + parent (row 0 is all-+); a - parent flips the pattern
    probs_plus = np.full(2 ** (r - 1), base)
    probs_plus[0] += lam
    probs_plus = np.clip(probs_plus, 0.0, None)
    probs_plus /= probs_plus.sum()
    for level in range(depth):
        next_frontier = []
        for v in frontier:
            b = params.offspring.sample(rng)
            for _ in range(int(b)):
                if len(labels) + (r - 1) > vertex_cap:
                    raise ResourceLimitError(
                        f"tree exceeded vertex cap {vertex_cap}")
                idx = int(rng.choice(len(probs_plus), p=probs_plus))
                child_signs = patterns[idx] * labels[v]
                children = []
                for s in child_signs:
                    children.append(len(labels))
                    labels.append(int(s))
                    levels.append(level + 1)
                    parent_edge.append(len(edges))
                edges.append((v, tuple(children)))
                next_frontier.extend(children)
        frontier = next_frontier
    return LabeledHypertree(
        np.array(levels, dtype=np.int64),
        np.array(labels, dtype=np.int64),
        np.array(parent_edge, dtype=np.int64),
        edges,
    )
