"""Seeded sampling of (marked) homogeneous Poisson point processes."""

from __future__ import annotations

import io
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from scipy.spatial.distance import pdist

from .errors import ArgumentError, CapacityError, DegenerateInputError
from .geometry import ConvexBody

MAX_RESAMPLE = 16
# exact pairwise-distance tie checks are quadratic; above this size only
# positions and marks are checked (ties among ~n^2/2 random doubles are
# vanishingly unlikely)
PAIRWISE_CHECK_LIMIT = 3000
MAX_MOMENT_ORDER = 30


@dataclass(frozen=True)
class RngStream:
    """An independent random stream identified by (base_seed, stream_id)."""

    base_seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.base_seed), spawn_key=(int(self.stream_id),))
        return np.random.default_rng(ss)


def derive_stream_id(subcommand: int, t_index: int, replicate: int) -> int:
    """Pack (subcommand id, t-index, replicate-index) into one 64-bit stream id."""
    if not (0 <= subcommand < 1 << 16 and 0 <= t_index < 1 << 16 and 0 <= replicate < 1 << 32):
        raise ArgumentError("stream id component out of range")
    return (subcommand << 48) | (t_index << 32) | replicate


@dataclass(frozen=True, eq=False)
class MarkedPointConfig:
    """A finite point set in a convex body, optionally carrying marks in [0, 1]."""

    positions: np.ndarray
    body: ConvexBody
    marks: Optional[np.ndarray] = None
    seed_record: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, self.body.dimension)
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        if self.marks is not None:
            m = np.asarray(self.marks, dtype=float).reshape(-1)
            if len(m) != len(pos):
                raise ArgumentError("marks and positions differ in length")
            if np.any((m < 0.0) | (m > 1.0)):
                raise ArgumentError("marks must lie in [0, 1]")
            m.setflags(write=False)
            object.__setattr__(self, "marks", m)

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def dimension(self) -> int:
        return self.body.dimension

    @property
    def marked(self) -> bool:
        return self.marks is not None

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if not isinstance(other, MarkedPointConfig):
            return NotImplemented
        if self.body != other.body or self.marked != other.marked:
            return False
        if not np.array_equal(self.positions, other.positions):
            return False
        return not self.marked or np.array_equal(self.marks, other.marks)

    __hash__ = None

    def with_points(self, positions, marks=None) -> "MarkedPointConfig":
        return MarkedPointConfig(positions, self.body, marks, self.seed_record)

    def subset(self, mask) -> "MarkedPointConfig":
        marks = self.marks[mask] if self.marked else None
        return MarkedPointConfig(self.positions[mask], self.body, marks, self.seed_record)

    def remove_last(self) -> "MarkedPointConfig":
        if self.n == 0:
            raise ArgumentError("cannot remove from an empty configuration")
        return self.subset(slice(0, self.n - 1))

    # -- plain-text serialization ------------------------------------------

    def dumps(self) -> str:
        seed, stream = self.seed_record if self.seed_record else (0, 0)
        buf = io.StringIO()
        buf.write(f"{self.dimension} {int(self.marked)} {self.n} {seed} {stream}\n")
        for i in range(self.n):
            fields = [format(float(c), ".17g") for c in self.positions[i]]
            if self.marked:
                fields.append(format(float(self.marks[i]), ".17g"))
            buf.write(" ".join(fields) + "\n")
        return buf.getvalue()

    @classmethod
    def loads(cls, text: str, body: ConvexBody) -> "MarkedPointConfig":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        d, marked, n, seed, stream = (int(v) for v in lines[0].split())
        if d != body.dimension:
            raise ArgumentError("dimension in header does not match the body")
        rows = np.array([[float(v) for v in ln.split()] for ln in lines[1:1 + n]]).reshape(n, d + marked)
        marks = rows[:, d] if marked else None
        return cls(rows[:, :d], body, marks, (seed, stream))


# ---------------------------------------------------------------------------
# genericity
# ---------------------------------------------------------------------------

def _first_duplicate(values: np.ndarray) -> Optional[int]:
    """Index of a later member of some tied group, or None."""
    if len(values) < 2:
        return None
    order = np.argsort(values, kind="stable")
    sv = values[order]
    ties = np.nonzero(sv[1:] == sv[:-1])[0]
    if len(ties) == 0:
        return None
    return int(max(order[ties[0]], order[ties[0] + 1]))


def find_degenerate(
    positions: np.ndarray, marks: Optional[np.ndarray] = None, pairwise: bool = True
) -> Optional[int]:
    """Return the index of a point violating genericity, or None.

    ``pairwise=False`` skips the distinct-distance check, for samples that
    never feed a graph.
    """
    n = len(positions)
    if n < 2:
        return None
    # identical positions
    _, first, counts = np.unique(positions, axis=0, return_index=True, return_counts=True)
    if np.any(counts > 1):
        dup = np.setdiff1d(np.arange(n), first)
        return int(dup[0])
    if marks is not None:
        j = _first_duplicate(np.asarray(marks))
        if j is not None:
            return j
    if pairwise and n <= PAIRWISE_CHECK_LIMIT:
        dists = pdist(positions)
        k = _first_duplicate(dists)
        if k is not None:
            # map condensed index back to the larger vertex index of that pair
            tied = dists[k]
            pairs = np.nonzero(dists == tied)[0]
            _, cols = np.triu_indices(n, 1)
            return int(cols[pairs[-1]])
    return None


def is_generic(positions: np.ndarray, marks: Optional[np.ndarray] = None) -> bool:
    return find_degenerate(positions, marks) is None


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def sample_poisson(
    body: ConvexBody,
    intensity: float,
    marked: bool,
    stream: RngStream,
    max_points: Optional[int] = None,
    pairwise_check: bool = True,
) -> MarkedPointConfig:
    """Homogeneous Poisson process of the given intensity on ``body``.

    Marks, when requested, are i.i.d. uniform on [0, 1] and independent of
    the positions.
    """
    if not intensity >= 0:
        raise ArgumentError("intensity must be nonnegative")
    rng = stream.generator()
    n = int(rng.poisson(intensity * body.volume))
    if max_points is not None and n > max_points:
        raise CapacityError(f"replicate drew {n} points, cap is {max_points}")
    positions = body.sample_uniform(rng, n)
    marks = rng.random(n) if marked else None
    for _ in range(MAX_RESAMPLE + 1):
        bad = find_degenerate(positions, marks, pairwise_check)
        if bad is None:
            return MarkedPointConfig(positions, body, marks, (stream.base_seed, stream.stream_id))
        positions[bad] = body.sample_uniform(rng, 1)[0]
        if marks is not None:
            marks[bad] = rng.random()
    raise DegenerateInputError("could not produce a generic configuration")


def add_point(config: MarkedPointConfig, position, mark: Optional[float] = None) -> MarkedPointConfig:
    """A new configuration with ``(position, mark)`` appended; ``config`` is unchanged."""
    position = np.asarray(position, dtype=float).reshape(config.dimension)
    if config.marked and mark is None:
        raise ArgumentError("configuration is marked; a mark is required")
    if not config.marked and mark is not None:
        raise ArgumentError("configuration is unmarked; no mark expected")
    positions = np.vstack([config.positions, position[None, :]])
    marks = np.append(config.marks, float(mark)) if config.marked else None
    if find_degenerate(positions, marks) is not None:
        raise DegenerateInputError("added point breaks genericity")
    return MarkedPointConfig(positions, config.body, marks, config.seed_record)


# ---------------------------------------------------------------------------
# Poisson moments
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def stirling2_table(m_max: int = MAX_MOMENT_ORDER) -> Tuple[Tuple[int, ...], ...]:
    """Rows S(m, 0..m) of Stirling numbers of the second kind for m <= m_max."""
    rows = [(1,)]
    for m in range(1, m_max + 1):
        prev = rows[-1]
        row = [0] * (m + 1)
        for k in range(1, m + 1):
            left = prev[k - 1]
            right = prev[k] if k < len(prev) else 0
            row[k] = left + k * right
        rows.append(tuple(row))
    return tuple(rows)


def bell_number(m: int) -> int:
    return sum(stirling2_table()[m])


def poisson_raw_moment(lam: float, m: int) -> float:
    """E[Z^m] for Z ~ Poisson(lam), via sum_i S(m, i) lam^i."""
    if not 1 <= m <= MAX_MOMENT_ORDER or int(m) != m:
        raise ArgumentError(f"moment order must be an integer in [1, {MAX_MOMENT_ORDER}]")
    if not lam >= 0:
        raise ArgumentError("lambda must be nonnegative")
    row = stirling2_table()[int(m)]
    return float(sum(s * lam**i for i, s in enumerate(row) if i >= 1))
