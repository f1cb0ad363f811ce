"""The four graph families on point configurations.

Each builder has an accelerated path (uniform grid index) and a
brute-force path (dense distance matrices) used as an oracle.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import Callable, Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import ArgumentError, DegenerateInputError
from .sampling import MarkedPointConfig, add_point

ORIGIN = -1  # synthetic origin vertex of the radial spanning tree
NO_TARGET = -2  # minimal-mark vertex of the ONNG

FAMILIES = ("onng", "gilbert", "knn", "rst")


class Edge(NamedTuple):
    i: int
    j: int
    length: float


# ---------------------------------------------------------------------------
# grid index
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _ring(d: int, k: int) -> Tuple[Tuple[int, ...], ...]:
    """Integer offsets with Chebyshev norm exactly k."""
    if k == 0:
        return ((0,) * d,)
    return tuple(o for o in product(range(-k, k + 1), repeat=d) if max(abs(c) for c in o) == k)


@lru_cache(maxsize=None)
def _half_neighbourhood(d: int) -> Tuple[Tuple[int, ...], ...]:
    """Offsets in {-1,0,1}^d that are lexicographically positive."""
    return tuple(o for o in product((-1, 0, 1), repeat=d) if o > (0,) * d)


def default_cell_size(positions: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float:
    """Side length giving about one point per cell.

    Flat sides are padded to span/n so that degenerate (e.g. collinear)
    clouds do not produce a vanishing cell and an enormous ring count.
    """
    n = max(len(positions), 1)
    span = max(float(np.max(hi - lo)), 1e-12)
    extent = np.maximum(hi - lo, span / n)
    return float((np.prod(extent) / n) ** (1.0 / len(extent)))


class GridIndex:
    """Uniform grid over a fixed point array; points are added by index.

    Nearest-type queries expand Chebyshev rings of cells around the query
    cell and stop once no unvisited cell can hold a closer point.
    """

    def __init__(self, positions: np.ndarray, cell: Optional[float] = None, populate: bool = True):
        self.positions = np.asarray(positions, dtype=float)
        n, self.d = self.positions.shape
        if n:
            self.lo = self.positions.min(axis=0)
            hi = self.positions.max(axis=0)
        else:
            self.lo = np.zeros(self.d)
            hi = np.ones(self.d)
        self.cell = float(cell) if cell else default_cell_size(self.positions, self.lo, hi)
        self.keys = np.floor((self.positions - self.lo) / self.cell).astype(np.int64)
        self.kmax = self.keys.max(axis=0) if n else np.zeros(self.d, dtype=np.int64)
        self.cells: Dict[Tuple[int, ...], List[int]] = {}
        self.size = 0
        if populate:
            for i in range(n):
                self.insert(i)

    def insert(self, i: int) -> None:
        self.cells.setdefault(tuple(self.keys[i]), []).append(int(i))
        self.size += 1

    def _query_key(self, x: np.ndarray) -> np.ndarray:
        return np.floor((x - self.lo) / self.cell).astype(np.int64)

    def _max_ring(self, key: np.ndarray) -> int:
        return int(np.max(np.maximum(np.abs(key), np.abs(self.kmax - key)))) + 1

    def _ring_range(self, key: np.ndarray) -> Tuple[int, int, bool]:
        """First and last useful ring for ``key``, and whether a linear scan is cheaper.

        Rings closer than the grid's bounding cells are empty, and a query far
        outside the grid would sweep many empty cells, so it scans instead.
        """
        gap = np.maximum(np.maximum(-key, key - self.kmax), 0)
        first = int(gap.max())
        return first, self._max_ring(key), first > int(self.kmax.max()) + 1

    def _indexed(self) -> List[int]:
        return [i for bucket in self.cells.values() for i in bucket]

    def _ring_members(self, key: np.ndarray, k: int) -> List[int]:
        out: List[int] = []
        cells = self.cells
        for off in _ring(self.d, k):
            bucket = cells.get(tuple(int(a + b) for a, b in zip(key, off)))
            if bucket:
                out.extend(bucket)
        return out

    def nearest(
        self,
        x: np.ndarray,
        accept: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        bound: float = math.inf,
    ) -> Tuple[Optional[int], float]:
        """Closest accepted indexed point strictly nearer than ``bound``."""
        x = np.asarray(x, dtype=float)
        if self.size == 0:
            return None, bound
        key = self._query_key(x)
        best_i, best_d = None, bound
        first, last, scan = self._ring_range(key)
        for k in [None] if scan else range(first, last + 1):
            cand = self._indexed() if scan else self._ring_members(key, k)
            if cand:
                idx = np.array(cand)
                if accept is not None:
                    idx = idx[accept(idx)]
                if len(idx):
                    dist = np.sqrt(np.sum((self.positions[idx] - x) ** 2, axis=1))
                    j = int(np.argmin(dist))
                    if dist[j] < best_d:
                        best_i, best_d = int(idx[j]), float(dist[j])
            if not scan and best_d <= k * self.cell:
                break
        return best_i, best_d

    def k_nearest(self, x: np.ndarray, k: int, exclude: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Indices and distances of the k closest indexed points (ascending)."""
        x = np.asarray(x, dtype=float)
        key = self._query_key(x)
        found_i: List[int] = []
        found_d: List[float] = []
        first, last, scan = self._ring_range(key)
        kth = math.inf
        for ring in [None] if scan else range(first, last + 1):
            cand = self._indexed() if scan else self._ring_members(key, ring)
            if exclude is not None:
                cand = [c for c in cand if c != exclude]
            if cand:
                idx = np.array(cand)
                dist = np.sqrt(np.sum((self.positions[idx] - x) ** 2, axis=1))
                found_i.extend(idx.tolist())
                found_d.extend(dist.tolist())
                if len(found_d) >= k:
                    kth = np.partition(np.array(found_d), k - 1)[k - 1]
            if not scan and kth <= ring * self.cell:
                break
        fi, fd = np.array(found_i, dtype=np.int64), np.array(found_d)
        order = np.argsort(fd, kind="stable")[:k]
        return fi[order], fd[order]

    def in_ball(self, center: np.ndarray, radius: float) -> np.ndarray:
        """Sorted indices with |y - center| <= radius."""
        center = np.asarray(center, dtype=float)
        if self.size == 0 or radius < 0:
            return np.zeros(0, dtype=np.int64)
        lo_key = self._query_key(center - radius)
        hi_key = self._query_key(center + radius)
        lo_key = np.maximum(lo_key, 0)
        hi_key = np.minimum(hi_key, self.kmax)
        cand: List[int] = []
        if np.all(hi_key >= lo_key):
            for key in product(*(range(int(a), int(b) + 1) for a, b in zip(lo_key, hi_key))):
                bucket = self.cells.get(key)
                if bucket:
                    cand.extend(bucket)
        if not cand:
            return np.zeros(0, dtype=np.int64)
        idx = np.array(cand, dtype=np.int64)
        dist2 = np.sum((self.positions[idx] - center) ** 2, axis=1)
        return np.sort(idx[dist2 <= radius * radius])


# ---------------------------------------------------------------------------
# graph container
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GeometricGraph:
    family: str
    pairs: np.ndarray
    lengths: np.ndarray
    config: MarkedPointConfig
    params: dict = field(default_factory=dict)
    connects_to: Optional[np.ndarray] = None

    @property
    def n_edges(self) -> int:
        return len(self.lengths)

    @property
    def edges(self) -> List[Edge]:
        return [Edge(int(i), int(j), float(l)) for (i, j), l in zip(self.pairs, self.lengths)]

    def out_lengths(self) -> np.ndarray:
        """Per-vertex length of the out-edge (0 where there is none); directed families only."""
        if self.connects_to is None:
            raise ArgumentError(f"{self.family} graphs have no directed out-edges")
        out = np.zeros(self.config.n)
        out[self.pairs[:, 0]] = self.lengths
        return out

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.config.n, dtype=np.int64)
        for col in (0, 1):
            v = self.pairs[:, col]
            np.add.at(deg, v[v >= 0], 1)
        return deg

    def same_edges(self, other: "GeometricGraph", rtol: float = 1e-12) -> bool:
        """Exact index equality of edge lists and lengths equal to ``rtol``."""
        if self.family != other.family or self.pairs.shape != other.pairs.shape:
            return False
        if not np.array_equal(self.pairs, other.pairs):
            return False
        if self.connects_to is not None and not np.array_equal(self.connects_to, other.connects_to):
            return False
        return bool(np.allclose(self.lengths, other.lengths, rtol=rtol, atol=0.0))

    def dumps(self) -> str:
        buf = io.StringIO()
        params = " ".join(f"{k}={v}" for k, v in sorted(self.params.items()))
        buf.write(f"# family={self.family} n={self.config.n} edges={self.n_edges} {params}".rstrip() + "\n")
        for (i, j), l in zip(self.pairs, self.lengths):
            buf.write(f"{int(i)} {int(j)} {format(float(l), '.17g')}\n")
        return buf.getvalue()


def parse_edge_list(text: str) -> Tuple[dict, np.ndarray, np.ndarray]:
    """Inverse of :meth:`GeometricGraph.dumps`: (header fields, pairs, lengths)."""
    lines = text.splitlines()
    header = dict(tok.split("=", 1) for tok in lines[0].lstrip("# ").split())
    rows = [ln.split() for ln in lines[1:] if ln.strip()]
    pairs = np.array([[int(r[0]), int(r[1])] for r in rows], dtype=np.int64).reshape(-1, 2)
    lengths = np.array([float(r[2]) for r in rows])
    return header, pairs, lengths


def _directed_graph(family, config, targets, params=None) -> GeometricGraph:
    has = targets != NO_TARGET
    src = np.nonzero(has)[0]
    dst = targets[has]
    pos = config.positions
    dst_pos = np.where((dst == ORIGIN)[:, None], 0.0, pos[np.maximum(dst, 0)])
    lengths = np.sqrt(np.sum((pos[src] - dst_pos) ** 2, axis=1))
    pairs = np.column_stack([src, dst]).astype(np.int64).reshape(-1, 2)
    targets = targets.astype(np.int64)
    targets.setflags(write=False)
    return GeometricGraph(family, pairs, lengths, config, params or {}, targets)


def _undirected_graph(family, config, pairs, params) -> GeometricGraph:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs):
        pairs = np.sort(pairs, axis=1)
        pairs = np.unique(pairs, axis=0)
    pos = config.positions
    lengths = np.sqrt(np.sum((pos[pairs[:, 0]] - pos[pairs[:, 1]]) ** 2, axis=1))
    return GeometricGraph(family, pairs, lengths, config, params, None)


# ---------------------------------------------------------------------------
# online nearest neighbour graph
# ---------------------------------------------------------------------------

def _require_marks(config: MarkedPointConfig):
    if not config.marked:
        raise ArgumentError("the online nearest neighbour graph needs a marked configuration")


def build_onng(config: MarkedPointConfig) -> GeometricGraph:
    """Insert points in mark order; each connects to its nearest predecessor."""
    _require_marks(config)
    n = config.n
    targets = np.full(n, NO_TARGET, dtype=np.int64)
    if n:
        grid = GridIndex(config.positions, populate=False)
        for i in np.argsort(config.marks, kind="stable"):
            j, _ = grid.nearest(config.positions[i])
            if j is not None:
                targets[i] = j
            grid.insert(i)
    return _directed_graph("onng", config, targets)


def build_onng_brute(config: MarkedPointConfig) -> GeometricGraph:
    _require_marks(config)
    n = config.n
    targets = np.full(n, NO_TARGET, dtype=np.int64)
    if n > 1:
        dist = squareform(pdist(config.positions))
        earlier = config.marks[None, :] < config.marks[:, None]
        dist = np.where(earlier, dist, np.inf)
        best = np.argmin(dist, axis=1)
        ok = np.isfinite(dist[np.arange(n), best])
        targets[ok] = best[ok]
    return _directed_graph("onng", config, targets)


# ---------------------------------------------------------------------------
# Gilbert graph
# ---------------------------------------------------------------------------

def _check_epsilon(epsilon):
    if not epsilon > 0:
        raise ArgumentError("epsilon must be positive")


def build_gilbert(config: MarkedPointConfig, epsilon: float) -> GeometricGraph:
    """Edges between points strictly closer than ``epsilon`` (grid of side >= epsilon)."""
    _check_epsilon(epsilon)
    pos = config.positions
    n, d = pos.shape
    params = {"epsilon": float(epsilon)}
    if n < 2:
        return _undirected_graph("gilbert", config, np.zeros((0, 2)), params)
    lo, hi = pos.min(axis=0), pos.max(axis=0)
    cell = max(float(epsilon), default_cell_size(pos, lo, hi))
    keys = np.floor((pos - lo) / cell).astype(np.int64)
    order = np.lexsort(keys.T[::-1])
    skeys = keys[order]
    bounds = np.nonzero(np.any(skeys[1:] != skeys[:-1], axis=1))[0] + 1
    starts = np.concatenate([[0], bounds])
    stops = np.concatenate([bounds, [n]])
    buckets = {tuple(skeys[a]): order[a:b] for a, b in zip(starts, stops)}
    eps2 = float(epsilon) ** 2
    found = []
    for key, members in buckets.items():
        p = pos[members]
        if len(members) > 1:
            d2 = np.sum((p[:, None, :] - p[None, :, :]) ** 2, axis=2)
            a, b = np.nonzero(np.triu(d2 < eps2, 1))
            if len(a):
                found.append(np.column_stack([members[a], members[b]]))
        for off in _half_neighbourhood(d):
            other = buckets.get(tuple(k + o for k, o in zip(key, off)))
            if other is None:
                continue
            d2 = np.sum((p[:, None, :] - pos[other][None, :, :]) ** 2, axis=2)
            a, b = np.nonzero(d2 < eps2)
            if len(a):
                found.append(np.column_stack([members[a], other[b]]))
    pairs = np.vstack(found) if found else np.zeros((0, 2))
    return _undirected_graph("gilbert", config, pairs, params)


def build_gilbert_brute(config: MarkedPointConfig, epsilon: float) -> GeometricGraph:
    _check_epsilon(epsilon)
    n = config.n
    params = {"epsilon": float(epsilon)}
    if n < 2:
        return _undirected_graph("gilbert", config, np.zeros((0, 2)), params)
    dist = squareform(pdist(config.positions))
    a, b = np.nonzero(np.triu(dist < epsilon, 1))
    return _undirected_graph("gilbert", config, np.column_stack([a, b]), params)


# ---------------------------------------------------------------------------
# k-nearest neighbour graph
# ---------------------------------------------------------------------------

def _check_k(config, k):
    if int(k) != k or k < 1:
        raise ArgumentError("k must be a positive integer")
    if config.n <= k:
        raise ArgumentError(f"need more than k={k} points, got {config.n}")


def build_knn(config: MarkedPointConfig, k: int) -> GeometricGraph:
    """Undirected union of the directed k-nearest-neighbour relations."""
    _check_k(config, k)
    grid = GridIndex(config.positions)
    rows = []
    for i in range(config.n):
        nbrs, _ = grid.k_nearest(config.positions[i], k, exclude=i)
        rows.append(np.column_stack([np.full(k, i), nbrs]))
    return _undirected_graph("knn", config, np.vstack(rows), {"k": int(k)})


def build_knn_brute(config: MarkedPointConfig, k: int) -> GeometricGraph:
    _check_k(config, k)
    n = config.n
    dist = squareform(pdist(config.positions))
    np.fill_diagonal(dist, np.inf)
    nbrs = np.argsort(dist, axis=1, kind="stable")[:, :k]
    pairs = np.column_stack([np.repeat(np.arange(n), k), nbrs.reshape(-1)])
    return _undirected_graph("knn", config, pairs, {"k": int(k)})


# ---------------------------------------------------------------------------
# radial spanning tree
# ---------------------------------------------------------------------------

def _rst_norms(config: MarkedPointConfig) -> np.ndarray:
    norms = np.linalg.norm(config.positions, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateInputError("radial spanning tree needs points away from the origin")
    if len(np.unique(norms)) != len(norms):
        raise DegenerateInputError("configuration is not generic with respect to the origin")
    return norms


def build_rst(config: MarkedPointConfig) -> GeometricGraph:
    """Each point joins its nearest neighbour among {0} and the points of smaller norm."""
    norms = _rst_norms(config)
    n = config.n
    targets = np.full(n, ORIGIN, dtype=np.int64)
    if n:
        grid = GridIndex(config.positions)
        for i in range(n):
            ni = norms[i]
            j, dist = grid.nearest(config.positions[i], accept=lambda idx: norms[idx] < ni, bound=ni)
            if j is not None:
                if dist == ni:
                    raise DegenerateInputError("radial nearest neighbour is tied with the origin")
                targets[i] = j
    return _directed_graph("rst", config, targets)


def build_rst_brute(config: MarkedPointConfig) -> GeometricGraph:
    norms = _rst_norms(config)
    n = config.n
    targets = np.full(n, ORIGIN, dtype=np.int64)
    if n > 1:
        dist = squareform(pdist(config.positions))
        dist = np.where(norms[None, :] < norms[:, None], dist, np.inf)
        best = np.argmin(dist, axis=1)
        bd = dist[np.arange(n), best]
        closer = bd < norms
        targets[closer] = best[closer]
    return _directed_graph("rst", config, targets)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def build_graph(family: str, config: MarkedPointConfig, brute: bool = False, **params) -> GeometricGraph:
    if family == "onng":
        return (build_onng_brute if brute else build_onng)(config)
    if family == "gilbert":
        return (build_gilbert_brute if brute else build_gilbert)(config, params["epsilon"])
    if family == "knn":
        return (build_knn_brute if brute else build_knn)(config, params["k"])
    if family == "rst":
        return (build_rst_brute if brute else build_rst)(config)
    raise ArgumentError(f"unknown graph family {family!r}")


# ---------------------------------------------------------------------------
# incremental insertion (ONNG, Gilbert, RST)
# ---------------------------------------------------------------------------

class Insertion(NamedTuple):
    """Effect of adding one vertex to a directed or Gilbert graph.

    ``own`` lists the new vertex's edge lengths (one entry for ONNG/RST,
    possibly none for the minimal-mark ONNG point, all neighbours for
    Gilbert); ``rewired`` lists (vertex, old_length, new_length) for
    existing vertices whose out-edge moves to the new vertex, with
    old_length 0 for a vertex that had no out-edge.
    """

    graph: GeometricGraph
    own: np.ndarray
    rewired: List[Tuple[int, float, float]]


def insert_vertex(graph: GeometricGraph, position, mark: Optional[float] = None) -> Insertion:
    """Add one point to ``graph`` without rebuilding it."""
    config = graph.config
    x = np.asarray(position, dtype=float).reshape(config.dimension)
    new_config = add_point(config, x, mark)
    new = config.n
    pos = config.positions
    dist = np.sqrt(np.sum((pos - x) ** 2, axis=1))

    if graph.family == "gilbert":
        eps = graph.params["epsilon"]
        nbrs = np.nonzero(dist < eps)[0]
        pairs = np.vstack([graph.pairs, np.column_stack([nbrs, np.full(len(nbrs), new)])])
        g = _undirected_graph("gilbert", new_config, pairs, dict(graph.params))
        return Insertion(g, dist[nbrs], [])

    if graph.family == "onng":
        old_len = graph.out_lengths()
        earlier = config.marks < mark
        targets = np.append(graph.connects_to, NO_TARGET)
        own = np.zeros(0)
        if earlier.any():
            cand = np.nonzero(earlier)[0]
            j = int(cand[np.argmin(dist[cand])])
            targets[new] = j
            own = np.array([dist[j]])
        later = config.marks > mark
        moves = later & ((graph.connects_to == NO_TARGET) | (dist < old_len))
    elif graph.family == "rst":
        norms = _rst_norms(new_config)
        old_len = graph.out_lengths()
        nx = norms[new]
        inner = norms[:new] < nx
        targets = np.append(graph.connects_to, ORIGIN)
        own_len = nx
        if inner.any():
            cand = np.nonzero(inner)[0]
            j = int(cand[np.argmin(dist[cand])])
            if dist[j] < nx:
                targets[new] = j
                own_len = dist[j]
        own = np.array([own_len])
        moves = (norms[:new] > nx) & (dist < old_len)
    else:
        raise ArgumentError(f"incremental insertion is not available for {graph.family}")

    movers = np.nonzero(moves)[0]
    targets[movers] = new
    rewired = [(int(v), float(old_len[v]), float(dist[v])) for v in movers]
    g = _directed_graph(graph.family, new_config, targets, dict(graph.params))
    return Insertion(g, own, rewired)


# ---------------------------------------------------------------------------
# point queries
# ---------------------------------------------------------------------------

def nearest_in_subset(
    config: MarkedPointConfig,
    x,
    predicate: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    index: Optional[GridIndex] = None,
) -> Optional[Tuple[int, float]]:
    """Closest point of ``config`` satisfying ``predicate`` (vectorized over indices).

    Returns None when no point qualifies.
    """
    if config.n == 0:
        return None
    grid = index if index is not None else GridIndex(config.positions)
    j, dist = grid.nearest(np.asarray(x, dtype=float), accept=predicate)
    return None if j is None else (j, dist)


def points_in_ball(config: MarkedPointConfig, center, radius: float, index: Optional[GridIndex] = None) -> List[int]:
    if config.n == 0:
        return []
    grid = index if index is not None else GridIndex(config.positions)
    return grid.in_ball(center, radius).tolist()
