"""Edge functionals, add-one costs, the cone radius R_theta and the L term."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Tuple

import numpy as np

from .errors import ArgumentError, NumericError
from .geometry import ConeCover, cone_cover
from .graphs import (
    FAMILIES,
    NO_TARGET,
    GeometricGraph,
    GridIndex,
    build_graph,
    insert_vertex,
)
from .sampling import MarkedPointConfig, add_point

PHI_CATALOGUE = ("inv_power", "exp")
DIRECTED = ("onng", "rst")


# ---------------------------------------------------------------------------
# functional specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FunctionalSpec:
    """Which edge statistic to compute and on which graph.

    ``weight`` is ``"power"`` (|e|^alpha) or ``"phi"`` with ``phi`` naming a
    catalogue entry: ``inv_power`` (x^-a, a >= 0) or ``exp`` (e^-x).
    ``graph_params`` carries ``epsilon`` for Gilbert and ``k`` for kNN.
    A length of 0 always stands for "no edge" and contributes 0.
    """

    family: str
    weight: str = "power"
    alpha: float = 1.0
    phi: Optional[str] = None
    phi_a: float = 1.0
    graph_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ArgumentError(f"unknown graph family {self.family!r}")
        if self.weight not in ("power", "phi"):
            raise ArgumentError("weight must be 'power' or 'phi'")
        if self.weight == "phi":
            if self.phi not in PHI_CATALOGUE:
                raise ArgumentError(f"phi must be one of {PHI_CATALOGUE}")
            if self.phi == "inv_power" and self.phi_a < 0:
                raise ArgumentError("inv_power needs a >= 0")
        if self.family == "gilbert" and "epsilon" not in self.graph_params:
            raise ArgumentError("gilbert functional needs graph_params['epsilon']")
        if self.family == "knn" and "k" not in self.graph_params:
            raise ArgumentError("knn functional needs graph_params['k']")
        if self.weight == "power":
            self._warn_range()

    def _warn_range(self):
        a = self.alpha
        if self.family == "onng" and not 0 < a:
            warnings.warn("ONNG results are stated for alpha in (0, d/2]", stacklevel=3)

    @classmethod
    def power(cls, family: str, alpha: float, **graph_params) -> "FunctionalSpec":
        return cls(family, "power", float(alpha), graph_params=graph_params)

    @classmethod
    def phi_weight(cls, family: str, phi: str, a: float = 1.0, **graph_params) -> "FunctionalSpec":
        return cls(family, "phi", 0.0, phi, float(a), graph_params=graph_params)

    def weights(self, lengths) -> np.ndarray:
        """Per-edge weights; zero length (absent edge) maps to 0."""
        lengths = np.asarray(lengths, dtype=float)
        present = lengths > 0
        safe = np.where(present, lengths, 1.0)
        if self.weight == "power":
            w = safe**self.alpha
        elif self.phi == "inv_power":
            w = safe ** (-self.phi_a)
        else:
            w = np.exp(-safe)
        w = np.where(present, w, 0.0)
        if not np.all(np.isfinite(w)):
            raise NumericError("edge weight is not finite")
        return w

    def weight_of(self, length: float) -> float:
        return float(self.weights(np.array([length]))[0])

    def build(self, config: MarkedPointConfig, brute: bool = False) -> GeometricGraph:
        return build_graph(self.family, config, brute=brute, **self.graph_params)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "weight": self.weight,
            "alpha": self.alpha,
            "phi": self.phi,
            "phi_a": self.phi_a,
            "graph_params": dict(self.graph_params),
        }


def evaluate(spec: FunctionalSpec, graph: GeometricGraph) -> float:
    """Sum of edge weights: once per undirected edge, once per out-edge for ONNG/RST."""
    if graph.family != spec.family:
        raise ArgumentError(f"spec is for {spec.family}, graph is {graph.family}")
    return math.fsum(spec.weights(graph.lengths))


def functional_value(spec: FunctionalSpec, config: MarkedPointConfig) -> float:
    return evaluate(spec, spec.build(config))


# ---------------------------------------------------------------------------
# first-order add-one cost
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AddOneCostResult:
    """D_x F split into the new vertex's own edges and changes to old edges.

    ``rewired_contributions`` holds (vertex, old_length, new_length); 0 marks
    an absent edge. For undirected families the vertex is the smaller
    endpoint of a changed edge. ``terms`` keeps the signed weights whose
    exact sum is ``first_order``, so differences of costs can be summed
    without intermediate rounding.
    """

    first_order: float
    own_edge_term: float
    rewired_contributions: Tuple[Tuple[int, float, float], ...] = ()
    used_oracle: bool = False
    terms: Tuple[float, ...] = field(default=(), repr=False, compare=False)

    def rewired_sum(self, spec: FunctionalSpec) -> float:
        if not self.rewired_contributions:
            return 0.0
        arr = np.array([(o, n) for _, o, n in self.rewired_contributions], dtype=float)
        return math.fsum(np.concatenate([spec.weights(arr[:, 1]), -spec.weights(arr[:, 0])]))


def _check_probe(config: MarkedPointConfig, position, mark):
    position = np.asarray(position, dtype=float).reshape(config.dimension)
    if config.marked and mark is None:
        raise ArgumentError("marked configuration needs a probe mark")
    return position


def _edge_map(graph: GeometricGraph) -> dict:
    return {(int(i), int(j)): float(l) for (i, j), l in zip(graph.pairs, graph.lengths)}


def add_one_cost_oracle(spec: FunctionalSpec, config: MarkedPointConfig, position, mark=None) -> AddOneCostResult:
    """F(mu + delta_x) - F(mu) by rebuilding the graph from scratch."""
    position = _check_probe(config, position, mark)
    before = spec.build(config)
    after = spec.build(add_point(config, position, mark))
    new = config.n
    old_edges = _edge_map(before)
    new_edges = _edge_map(after)

    rewired: List[Tuple[int, float, float]] = []
    if spec.family in DIRECTED:
        old_out = before.out_lengths() if config.n else np.zeros(0)
        new_out = after.out_lengths()
        own = [new_out[new]] if after.connects_to[new] != NO_TARGET else []
        changed = np.nonzero(after.connects_to[:new] != before.connects_to)[0] if config.n else []
        rewired = [(int(v), float(old_out[v]), float(new_out[v])) for v in changed]
    else:
        own = [l for (i, j), l in new_edges.items() if i == new or j == new]
        for key in set(old_edges) | set(new_edges):
            if new in key:
                continue
            o = old_edges.get(key, 0.0)
            n = new_edges.get(key, 0.0)
            if o != n:
                rewired.append((key[0], o, n))
        rewired.sort()

    terms = np.concatenate([spec.weights(after.lengths), -spec.weights(before.lengths)])
    own_term = math.fsum(spec.weights(own))
    return AddOneCostResult(math.fsum(terms), own_term, tuple(rewired), True, tuple(terms.tolist()))


def add_one_cost_fast(
    spec: FunctionalSpec,
    config: MarkedPointConfig,
    graph: Optional[GeometricGraph],
    position,
    mark=None,
) -> AddOneCostResult:
    """D_x F from the local structure of ``graph`` (built on ``config``).

    ONNG: own edge to the nearest earlier-marked point plus later-marked
    points whose edge is longer than their distance to x. Gilbert: sum over
    neighbours within epsilon. RST: own radial edge plus outer points y with
    |x - y| < g(y). kNN falls back to the rebuild oracle.
    """
    position = _check_probe(config, position, mark)
    if spec.family == "knn":
        return add_one_cost_oracle(spec, config, position, mark)
    if graph is None:
        graph = spec.build(config)
    if graph.config is not config and graph.config != config:
        raise ArgumentError("graph was not built from this configuration")
    ins = insert_vertex(graph, position, mark)
    own_w = spec.weights(ins.own)
    if ins.rewired:
        arr = np.array([(o, n) for _, o, n in ins.rewired], dtype=float)
        deltas = [spec.weights(arr[:, 1]), -spec.weights(arr[:, 0])]
    else:
        deltas = []
    terms = np.concatenate([own_w, *deltas])
    return AddOneCostResult(math.fsum(terms), math.fsum(own_w), tuple(ins.rewired), False, tuple(terms.tolist()))


def add_one_cost(spec, config, position, mark=None, graph=None) -> float:
    return add_one_cost_fast(spec, config, graph, position, mark).first_order


def second_add_one_cost(
    spec: FunctionalSpec,
    config: MarkedPointConfig,
    x,
    y,
    mark_x=None,
    mark_y=None,
    oracle: bool = False,
) -> float:
    """D^2_{x,y} F = D_x F(mu + delta_y) - D_x F(mu)."""
    x = _check_probe(config, x, mark_x)
    y = _check_probe(config, y, mark_y)
    with_y = add_point(config, y, mark_y)
    if oracle or spec.family == "knn":
        d_plus = add_one_cost_oracle(spec, with_y, x, mark_x)
        d_base = add_one_cost_oracle(spec, config, x, mark_x)
    else:
        base = spec.build(config)
        graph_y = insert_vertex(base, y, mark_y).graph
        d_plus = add_one_cost_fast(spec, graph_y.config, graph_y, x, mark_x)
        d_base = add_one_cost_fast(spec, config, base, x, mark_x)
    # one correctly rounded sum: weights shared by both costs cancel exactly
    return math.fsum(d_plus.terms + tuple(-w for w in d_base.terms))


def gilbert_second_cost_closed_form(x, y, epsilon: float, alpha: float) -> float:
    # same floating-point expression as the graph code uses for edge lengths
    diff = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
    dist = np.sqrt(np.sum(diff[None, :] ** 2, axis=1))
    return float((dist**alpha)[0]) if dist[0] < epsilon else 0.0


def gilbert_first_cost_closed_form(config: MarkedPointConfig, x, epsilon: float, alpha: float) -> float:
    dist = np.linalg.norm(config.positions - np.asarray(x, dtype=float), axis=1)
    return math.fsum(dist[dist < epsilon] ** alpha)


# ---------------------------------------------------------------------------
# ONNG cone radius and L term
# ---------------------------------------------------------------------------

def onng_radius_brute(config: MarkedPointConfig, x, theta: float, cover: Optional[ConeCover] = None) -> float:
    """R_theta(x): max over cones of the distance to the nearest mark-<theta point
    in the widened cone, capped at the body diameter."""
    x = np.asarray(x, dtype=float).reshape(config.dimension)
    cover = cover or cone_cover(config.dimension)
    diam = config.body.diameter
    if not config.marked:
        raise ArgumentError("cone radius needs a marked configuration")
    early = config.marks < theta
    if not early.any():
        return diam
    vec = config.positions[early] - x
    dist = np.linalg.norm(vec, axis=1)
    member = cover.members(vec, widened=True)
    per_cone = np.where(member, dist[:, None], np.inf).min(axis=0)
    return float(np.max(np.minimum(per_cone, diam)))


def onng_radius(
    config: MarkedPointConfig,
    x,
    theta: float,
    cover: Optional[ConeCover] = None,
    index: Optional[GridIndex] = None,
) -> float:
    """Grid-accelerated R_theta(x): grows a search ball until every widened
    cone holds an early point or the ball reaches the body diameter."""
    x = np.asarray(x, dtype=float).reshape(config.dimension)
    cover = cover or cone_cover(config.dimension)
    diam = config.body.diameter
    if not config.marked:
        raise ArgumentError("cone radius needs a marked configuration")
    if config.n == 0 or not np.any(config.marks < theta):
        return diam
    grid = index if index is not None else GridIndex(config.positions)
    best = np.full(cover.size, np.inf)
    r = grid.cell
    while True:
        idx = grid.in_ball(x, min(r, diam))
        idx = idx[config.marks[idx] < theta]
        if len(idx):
            vec = config.positions[idx] - x
            dist = np.linalg.norm(vec, axis=1)
            member = cover.members(vec, widened=True)
            best = np.where(member, dist[:, None], np.inf).min(axis=0)
        if np.all(np.isfinite(best)) or r >= diam:
            break
        r *= 2.0
    return float(np.max(np.minimum(best, diam)))


def onng_L_term(spec: FunctionalSpec, config: MarkedPointConfig, x, s: float, graph=None) -> float:
    """Sum of old edge weights of later-marked points that connect to (x, s) after insertion."""
    if spec.family != "onng":
        raise ArgumentError("the L term is defined for the ONNG")
    if config.n == 0:
        return 0.0
    graph = graph if graph is not None else spec.build(config)
    ins = insert_vertex(graph, x, s)
    old = np.array([o for _, o, _ in ins.rewired], dtype=float)
    return math.fsum(spec.weights(old))


def onng_L_term_from_oracle(spec: FunctionalSpec, config: MarkedPointConfig, x, s: float) -> float:
    """Same quantity, extracted from the rebuild oracle's edge diff."""
    res = add_one_cost_oracle(spec, config, x, s)
    after = build_graph("onng", add_point(config, x, s))
    new = config.n
    old = [o for v, o, _ in res.rewired_contributions if after.connects_to[v] == new]
    return math.fsum(spec.weights(old))


# ---------------------------------------------------------------------------
# probe sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    position: np.ndarray
    mark: Optional[float]
    d1: float
    d2: Optional[float]
    r_theta: Optional[float]
    l_term: Optional[float]


def probe_sweep(
    spec: FunctionalSpec,
    config: MarkedPointConfig,
    probes: Iterable,
    marks: Optional[Iterable[float]] = None,
    partner=None,
    partner_mark=None,
) -> List[SweepRow]:
    """Evaluate D1 (and D2 against ``partner``, R_theta, L for ONNG) at each probe."""
    graph = spec.build(config)
    probes = [np.asarray(p, dtype=float) for p in probes]
    marks = list(marks) if marks is not None else [None] * len(probes)
    cover = cone_cover(config.dimension) if spec.family == "onng" else None
    index = GridIndex(config.positions) if spec.family == "onng" and config.n else None
    rows = []
    for p, m in zip(probes, marks):
        d1 = add_one_cost_fast(spec, config, graph, p, m).first_order
        d2 = None
        if partner is not None:
            d2 = second_add_one_cost(spec, config, p, partner, m, partner_mark)
        r = l_term = None
        if spec.family == "onng":
            r = onng_radius(config, p, m, cover, index)
            l_term = onng_L_term(spec, config, p, m, graph)
        rows.append(SweepRow(p, m, d1, d2, r, l_term))
    return rows


def write_sweep_csv(rows: List[SweepRow], stream) -> None:
    if not rows:
        return
    d = len(rows[0].position)
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow([f"probe_x{i}" for i in range(d)] + ["mark", "D1", "D2", "R_theta", "L_term"])

    def fmt(v):
        return "" if v is None else format(float(v), ".17g")

    for r in rows:
        writer.writerow([fmt(c) for c in r.position] + [fmt(r.mark), fmt(r.d1), fmt(r.d2), fmt(r.r_theta), fmt(r.l_term)])
