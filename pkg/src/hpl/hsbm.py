"""Hypergraph block-model instances and the good-balanced-partition
weak-recovery estimator.

An instance plants i.i.d. +-1 labels and includes every r-subset with
probability a/C(n, r-1) when monochromatic and b/C(n, r-1) otherwise.
The estimator scans almost balanced partitions (plus-class within
n^0.6 of n/2) for one whose in-community hyperedge count is within
n^0.6 of a*n/(2^(r-1) r), returning the lexicographically smallest such
partition ('+' sorts before '-') so the output is deterministic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations, islice
from typing import Iterable

import numpy as np
from numba import njit

from .errors import ParameterError, ResourceLimitError
from .thresholds import HsbmParams

__all__ = [
    "Hypergraph",
    "Partition",
    "PlantedDraw",
    "Windows",
    "windows_for",
    "sample_hsbm",
    "sample_planted_fixed_m",
    "sample_planted_simple",
    "hamming_overlap",
    "count_in_community",
    "recover_exhaustive",
    "recover_local_search",
]

SUBSET_CAP_DEFAULT = 100_000_000
EXHAUSTIVE_N_MAX = 26


@dataclass(frozen=True)
class Hypergraph:
    """Simple r-uniform hypergraph: sorted, deduplicated r-subsets of [n]."""

    n: int
    r: int
    edges: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        seen = set()
        for e in self.edges:
            if len(set(e)) != self.r:
                raise ParameterError(f"edge {e} is not a {self.r}-subset")
            if any(v < 0 or v >= self.n for v in e):
                raise ParameterError(f"edge {e} out of vertex range")
            key = tuple(sorted(e))
            if key in seen:
                raise ParameterError(f"duplicate edge {e}")
            seen.add(key)
        object.__setattr__(
            self, "edges", tuple(tuple(sorted(e)) for e in self.edges))

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def to_json(self) -> str:
        return json.dumps({"n": self.n, "r": self.r,
                           "edges": [list(e) for e in self.edges]})

    @classmethod
    def from_json(cls, text: str) -> "Hypergraph":
        obj = json.loads(text)
        return cls(obj["n"], obj["r"], tuple(tuple(e) for e in obj["edges"]))


@dataclass(frozen=True)
class Partition:
    """A +-1 labelling of [n]."""

    signs: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.signs, dtype=np.int8)
        if s.ndim != 1 or not np.all(np.abs(s) == 1):
            raise ParameterError("signs must be a 1-d array over {+1, -1}")
        s.setflags(write=False)
        object.__setattr__(self, "signs", s)

    @property
    def n(self) -> int:
        return int(self.signs.size)

    def to_json(self) -> str:
        return json.dumps(
            {"signs": "".join("+" if v > 0 else "-" for v in self.signs)})

    @classmethod
    def from_json(cls, text: str) -> "Partition":
        s = json.loads(text)["signs"]
        return cls(np.array([1 if c == "+" else -1 for c in s], dtype=np.int8))


def sample_hsbm(params: HsbmParams, rng: np.random.Generator,
                subset_cap: int = SUBSET_CAP_DEFAULT
                ) -> tuple[Partition, Hypergraph]:
    """Draw labels and an instance; every r-subset is tested independently."""
    n, r, a, b = params.n, params.r, params.a, params.b
    denom = math.comb(n, r - 1)
    pa, pb = a / denom, b / denom
    if pa > 1 or pb > 1:
        raise ParameterError("edge probability above 1; lower a or b")
    total = math.comb(n, r)
    if total > subset_cap:
        raise ResourceLimitError(f"{total} subsets exceed cap {subset_cap}")
    X = rng.integers(0, 2, size=n).astype(np.int8) * 2 - 1
    edges = []
    it = combinations(range(n), r)
    chunk_size = 65536
    while True:
        chunk = list(islice(it, chunk_size))
        if not chunk:
            break
        arr = np.array(chunk, dtype=np.int64)
        labels = X[arr]
        mono = np.all(labels == labels[:, :1], axis=1)
        p = np.where(mono, pa, pb)
        hits = rng.random(len(chunk)) < p
        edges.extend(tuple(map(int, row)) for row in arr[hits])
    return Partition(X), Hypergraph(n, r, tuple(edges))


@dataclass(frozen=True)
class PlantedDraw:
    """Output of the fixed-edge-count planted model; edges may repeat or
    touch fewer than r distinct vertices."""

    n: int
    r: int
    edges: tuple[tuple[int, ...], ...]
    degenerate: tuple[bool, ...]

    @property
    def is_simple(self) -> bool:
        if any(self.degenerate):
            return False
        keys = [tuple(sorted(e)) for e in self.edges]
        return len(set(keys)) == len(keys)


def sample_planted_fixed_m(n: int, m: int, X: Partition, r: int,
                           a: float, b: float, rng: np.random.Generator
                           ) -> PlantedDraw:
    """Draw exactly m hyperedges i.i.d.: first a sign pattern with the
    monochromatic tilt, then uniform vertices inside each label class."""
    if m < 0:
        raise ParameterError("m must be >= 0")
    signs = X.signs
    plus_class = np.flatnonzero(signs > 0)
    minus_class = np.flatnonzero(signs < 0)
    if plus_class.size == 0 or minus_class.size == 0:
        raise ParameterError("both label classes must be nonempty")
    z = a - b + 2 ** (r - 1) * b
    if z <= 0:
        raise ParameterError("a - b + 2^(r-1) b must be positive")
    p_mono_each = 0.5 * a / z        # per all-equal pattern (2 of them)
    p_other_each = 0.5 * b / z       # per remaining pattern
    n_patterns = 2 ** r
    probs = np.full(n_patterns, p_other_each)
    probs[0] = p_mono_each           # all +
    probs[-1] = p_mono_each          # all -
    probs = probs / probs.sum()
    pattern_ids = rng.choice(n_patterns, size=m, p=probs)
    edges = []
    degenerate = []
    for pid in pattern_ids.tolist():
        bits = [(pid >> (r - 1 - i)) & 1 for i in range(r)]  # 0 -> '+'
        verts = tuple(
            int(rng.choice(minus_class if bit else plus_class))
            for bit in bits)
        edges.append(verts)
        degenerate.append(len(set(verts)) < r)
    return PlantedDraw(n, r, tuple(edges), tuple(degenerate))


def sample_planted_simple(n: int, m: int, X: Partition, r: int,
                          a: float, b: float, rng: np.random.Generator,
                          max_tries: int = 10_000) -> Hypergraph:
    """Rejection wrapper: resample the whole draw until it is simple."""
    for _ in range(max_tries):
        draw = sample_planted_fixed_m(n, m, X, r, a, b, rng)
        if draw.is_simple:
            return Hypergraph(n, r, draw.edges)
    raise ResourceLimitError(f"no simple draw in {max_tries} attempts")


def hamming_overlap(X: Partition, Y: Partition) -> tuple[int, float]:
    """Hamming distance up to global flip and the overlap 1 - 2 d_H / n."""
    if X.n != Y.n:
        raise ParameterError("partitions have different lengths")
    h = int(np.sum(X.signs != Y.signs))
    d_h = min(h, X.n - h)
    return d_h, 1 - 2 * d_h / X.n


def count_in_community(graph: Hypergraph, Y: Partition) -> int:
    """Number of hyperedges whose vertices all share Y's sign."""
    if Y.n != graph.n:
        raise ParameterError("partition length does not match the graph")
    count = 0
    for e in graph.edges:
        s = Y.signs[e[0]]
        if all(Y.signs[v] == s for v in e[1:]):
            count += 1
    return count


@dataclass(frozen=True)
class Windows:
    """Acceptance windows of the estimator."""

    count_center: float
    count_halfwidth: float
    balance_halfwidth: float

    def count_ok(self, c: float) -> bool:
        return abs(c - self.count_center) <= self.count_halfwidth

    def balance_ok(self, n_plus: int, n: int) -> bool:
        return abs(n_plus - n / 2) <= self.balance_halfwidth


def windows_for(params: HsbmParams, scale: float = 1.0) -> Windows:
    """The estimator's windows: center a n/(2^(r-1) r), half-widths n^0.6
    (optionally scaled for experiments)."""
    n, r, a = params.n, params.r, params.a
    w = scale * n ** 0.6
    return Windows(a * n / (2 ** (r - 1) * r), w, w)


@njit(cache=True, nogil=True)
def _scan_range(i_begin: np.int64, i_end: np.int64, n: int, r: int,
                inc_off: np.ndarray, inc_edge: np.ndarray,
                edge_vert_off: np.ndarray, edge_vert: np.ndarray,
                lo: float, hi: float, bal: float) -> np.int64:
    """Scan Gray codes i in [i_begin, i_end) over partitions with vertex 0
    pinned to '+'; return the minimum canonical codeword among qualifying
    partitions, or -1.

    Gray code g = i ^ (i >> 1); bit v-1 of g set means vertex v is '-'.
    The canonical codeword orders vertex 1 as the most significant bit so
    integer order equals lexicographic order of the sign string.
    """
    m = edge_vert_off.size - 1
    g = i_begin ^ (i_begin >> np.int64(1))
    signs = np.zeros(n, dtype=np.int8)  # 0 '+', 1 '-'
    for v in range(1, n):
        if (g >> np.int64(v - 1)) & np.int64(1):
            signs[v] = 1
    cplus = np.empty(m, dtype=np.int64)
    incomm = 0
    nplus = 0
    for v in range(n):
        if signs[v] == 0:
            nplus += 1
    for e in range(m):
        c = 0
        for ii in range(edge_vert_off[e], edge_vert_off[e + 1]):
            if signs[edge_vert[ii]] == 0:
                c += 1
        cplus[e] = c
        if c == r or c == 0:
            incomm += 1
    ci = np.int64(0)
    for v in range(1, n):
        if signs[v] == 1:
            ci |= np.int64(1) << np.int64(n - 1 - v)
    best = np.int64(-1)
    half = n / 2.0
    if abs(nplus - half) <= bal and lo <= incomm <= hi:
        best = ci
    i = i_begin
    while i + 1 < i_end:
        i += 1
        t = i
        fb = 0
        while t & np.int64(1) == 0:
            t >>= np.int64(1)
            fb += 1
        v = fb + 1
        ci ^= np.int64(1) << np.int64(n - 1 - v)
        if signs[v] == 0:
            signs[v] = 1
            nplus -= 1
            for ii in range(inc_off[v], inc_off[v + 1]):
                e = inc_edge[ii]
                if cplus[e] == r or cplus[e] == 0:
                    incomm -= 1
                cplus[e] -= 1
                if cplus[e] == 0:
                    incomm += 1
        else:
            signs[v] = 0
            nplus += 1
            for ii in range(inc_off[v], inc_off[v + 1]):
                e = inc_edge[ii]
                if cplus[e] == r or cplus[e] == 0:
                    incomm -= 1
                cplus[e] += 1
                if cplus[e] == r:
                    incomm += 1
        if abs(nplus - half) <= bal and lo <= incomm <= hi:
            if best == np.int64(-1) or ci < best:
                best = ci
    return best


def _incidence(graph: Hypergraph):
    n, m = graph.n, graph.edge_count
    deg = np.zeros(n, dtype=np.int64)
    for e in graph.edges:
        for v in e:
            deg[v] += 1
    inc_off = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(deg, out=inc_off[1:])
    inc_edge = np.zeros(inc_off[-1], dtype=np.int64)
    ptr = inc_off[:-1].copy()
    for ei, e in enumerate(graph.edges):
        for v in e:
            inc_edge[ptr[v]] = ei
            ptr[v] += 1
    edge_vert_off = np.arange(0, (m + 1) * graph.r, graph.r, dtype=np.int64)
    edge_vert = np.array([v for e in graph.edges for v in e], dtype=np.int64)
    return inc_off, inc_edge, edge_vert_off, edge_vert


def _partition_from_code(ci: int, n: int) -> Partition:
    signs = np.ones(n, dtype=np.int8)
    for v in range(1, n):
        if (ci >> (n - 1 - v)) & 1:
            signs[v] = -1
    return Partition(signs)


@dataclass(frozen=True)
class RecoveryResult:
    partition: Partition | None
    in_community: int | None = None
    n_plus: int | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return self.partition is None


def recover_exhaustive(graph: Hypergraph, windows: Windows,
                       threads: int = 1) -> RecoveryResult:
    """Scan every partition (vertex 0 pinned '+'; windows are invariant
    under the global flip) and return the lexicographically smallest good
    almost-balanced one."""
    n = graph.n
    if n > EXHAUSTIVE_N_MAX:
        raise ResourceLimitError(
            f"exhaustive scan capped at n={EXHAUSTIVE_N_MAX}; "
            "use recover_local_search")
    inc_off, inc_edge, ev_off, ev = _incidence(graph)
    total = np.int64(1) << (n - 1)
    lo = windows.count_center - windows.count_halfwidth
    hi = windows.count_center + windows.count_halfwidth
    bal = windows.balance_halfwidth
    if threads <= 1:
        best = int(_scan_range(np.int64(0), total, n, graph.r, inc_off,
                               inc_edge, ev_off, ev, lo, hi, bal))
    else:
        from concurrent.futures import ThreadPoolExecutor
        bounds = np.linspace(0, int(total), threads + 1, dtype=np.int64)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(
                lambda se: int(_scan_range(np.int64(se[0]), np.int64(se[1]),
                                           n, graph.r, inc_off, inc_edge,
                                           ev_off, ev, lo, hi, bal)),
                [(bounds[i], bounds[i + 1]) for i in range(threads)
                 if bounds[i] < bounds[i + 1]]))
        hits = [b for b in results if b >= 0]
        best = min(hits) if hits else -1
    if best < 0:
        return RecoveryResult(None, diagnostics={"scanned": int(total)})
    part = _partition_from_code(best, n)
    count = count_in_community(graph, part)
    n_plus = int(np.sum(part.signs > 0))
    if not (windows.count_ok(count) and windows.balance_ok(n_plus, n)):
        raise ParameterError("scan returned a partition failing its windows")
    return RecoveryResult(part, count, n_plus)


@njit(cache=True, nogil=True)
def _local_search(n: int, r: int, inc_off: np.ndarray, inc_edge: np.ndarray,
                  edge_vert_off: np.ndarray, edge_vert: np.ndarray,
                  lo: float, hi: float, bal: float, budget: np.int64,
                  seed: np.int64):
    """Randomized single-flip search toward the windows.

    Distance = balance excess (heavily weighted) + in-community count
    distance to the window; sideways and mildly worse moves are accepted
    with small probability; restarts from fresh random signs.
    """
    m = edge_vert_off.size - 1
    rng_state = np.uint64(seed * 2862933555777941757 + 3037000493)

    def _next(state):
        state = np.uint64(state) * np.uint64(6364136223846793005) + np.uint64(1442695040888963407)
        return state

    best_dist = np.inf
    best_signs = np.zeros(n, dtype=np.int8)
    signs = np.zeros(n, dtype=np.int8)
    cplus = np.zeros(m, dtype=np.int64)
    flips = np.int64(0)
    found = False
    while flips < budget and not found:
        # fresh random balanced-ish start
        nplus = 0
        for v in range(n):
            rng_state = _next(rng_state)
            signs[v] = 1 if (rng_state >> np.uint64(63)) else 0
        nplus = 0
        for v in range(n):
            if signs[v] == 0:
                nplus += 1
        incomm = 0
        for e in range(m):
            c = 0
            for ii in range(edge_vert_off[e], edge_vert_off[e + 1]):
                if signs[edge_vert[ii]] == 0:
                    c += 1
            cplus[e] = c
            if c == r or c == 0:
                incomm += 1
        half = n / 2.0
        restart_len = np.int64(40 * n)
        steps = np.int64(0)
        while flips < budget and steps < restart_len:
            bal_excess = max(abs(nplus - half) - bal, 0.0)
            cdist = 0.0
            if incomm < lo:
                cdist = lo - incomm
            elif incomm > hi:
                cdist = incomm - hi
            dist = bal_excess * (hi - lo + n) + cdist
            if dist == 0.0:
                found = True
                best_dist = 0.0
                for v in range(n):
                    best_signs[v] = signs[v]
                break
            if dist < best_dist:
                best_dist = dist
                for v in range(n):
                    best_signs[v] = signs[v]
            rng_state = _next(rng_state)
            v = int(rng_state % np.uint64(n))
            # try the flip
            delta_inc = 0
            if signs[v] == 0:
                for ii in range(inc_off[v], inc_off[v + 1]):
                    e = inc_edge[ii]
                    if cplus[e] == r or cplus[e] == 0:
                        delta_inc -= 1
                    if cplus[e] - 1 == 0:
                        delta_inc += 1
                new_nplus = nplus - 1
            else:
                for ii in range(inc_off[v], inc_off[v + 1]):
                    e = inc_edge[ii]
                    if cplus[e] == r or cplus[e] == 0:
                        delta_inc -= 1
                    if cplus[e] + 1 == r:
                        delta_inc += 1
                new_nplus = nplus + 1
            new_incomm = incomm + delta_inc
            nb = max(abs(new_nplus - half) - bal, 0.0)
            nc = 0.0
            if new_incomm < lo:
                nc = lo - new_incomm
            elif new_incomm > hi:
                nc = new_incomm - hi
            new_dist = nb * (hi - lo + n) + nc
            rng_state = _next(rng_state)
            accept = new_dist <= dist or (rng_state % np.uint64(100)) < np.uint64(5)
            flips += 1
            steps += 1
            if accept:
                if signs[v] == 0:
                    signs[v] = 1
                    for ii in range(inc_off[v], inc_off[v + 1]):
                        e = inc_edge[ii]
                        if cplus[e] == r or cplus[e] == 0:
                            incomm -= 1
                        cplus[e] -= 1
                        if cplus[e] == 0:
                            incomm += 1
                else:
                    signs[v] = 0
                    for ii in range(inc_off[v], inc_off[v + 1]):
                        e = inc_edge[ii]
                        if cplus[e] == r or cplus[e] == 0:
                            incomm -= 1
                        cplus[e] += 1
                        if cplus[e] == r:
                            incomm += 1
                nplus = new_nplus
    return found, best_signs, best_dist, flips


def recover_local_search(graph: Hypergraph, windows: Windows, budget: int,
                         rng: np.random.Generator) -> RecoveryResult:
    """Scalable stand-in for the exhaustive scan: random restarts plus
    single-flip moves toward the windows; any returned partition is
    independently re-checked against both windows."""
    if budget <= 0:
        raise ParameterError("budget must be > 0")
    inc_off, inc_edge, ev_off, ev = _incidence(graph)
    lo = windows.count_center - windows.count_halfwidth
    hi = windows.count_center + windows.count_halfwidth
    seed = int(rng.integers(0, 2 ** 62))
    found, signs01, best_dist, flips = _local_search(
        graph.n, graph.r, inc_off, inc_edge, ev_off, ev,
        lo, hi, windows.balance_halfwidth, np.int64(budget), np.int64(seed))
    part = Partition(np.where(signs01 == 0, 1, -1).astype(np.int8))
    count = count_in_community(graph, part)
    n_plus = int(np.sum(part.signs > 0))
    if found:
        if not (windows.count_ok(count) and windows.balance_ok(n_plus, graph.n)):
            raise ParameterError("local search returned a partition failing "
                                 "its windows")
        return RecoveryResult(part, count, n_plus,
                              diagnostics={"flips": int(flips)})
    return RecoveryResult(None, diagnostics={
        "flips": int(flips), "best_distance": float(best_dist),
        "best_partition": part.to_json(), "best_count": count,
        "best_n_plus": n_plus})
