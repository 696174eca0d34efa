"""Finite quasi-metric measure spaces with exactly computable geometry.

A space is N points with positive masses and a symmetric positive distance
matrix.  Balls are strict: B(x, rho) = {y : d(x, y) < rho}.  Because the space
is finite, every supremum over radii is attained on the critical set
{d(x, y)} union {d(x, y) + ulp}, which turns the usual a-priori constants into
exact sweeps:

* quasi_triangle_constant  -- smallest c_d with d(x,y) <= c_d (d(x,z) + d(z,y)),
* doubling_constants       -- c_mu = sup mu(B(x,2rho)) / mu(B(x,rho)) and
                              D_mu = log2(c_mu).

Trees enter through ``dyadic_metric``: the distance between two points is the
mass of the smallest tree node containing both.  That metric is an ultrametric
(c_d = 1) whose balls are exactly the tree nodes, which makes it the reference
model for everything dyadic downstream.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import MetricViolation


@dataclass(frozen=True, eq=False)
class Ball:
    """A strict metric ball together with its realized radius and measure."""

    center: int
    radius: float
    members: np.ndarray  # boolean mask over points
    measure: float

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.members)

    @property
    def size(self) -> int:
        return int(self.members.sum())


class DyadicTree:
    """Rooted tree whose leaves are the points 0..N-1.

    Internal nodes have at least two children (a single-child node would carry
    no oscillation and is forbidden), children are stored sorted by their
    smallest point, and node 0 is the root.  The structure is mass-agnostic;
    masses live on the space.
    """

    def __init__(self, children: list[list[int]], node_points: list[np.ndarray],
                 parent: np.ndarray, leaf_of_point: np.ndarray):
        self.children = [list(c) for c in children]
        self.node_points = [np.asarray(p, dtype=np.intp) for p in node_points]
        self.parent = np.asarray(parent, dtype=np.intp)
        self.leaf_of_point = np.asarray(leaf_of_point, dtype=np.intp)
        self._validate()

    # -- construction -----------------------------------------------------

    @classmethod
    def from_nested(cls, nested) -> "DyadicTree":
        """Build from nested lists of point ids, e.g. [[0, 1], [2, [3, 4]]].

        Integers are leaves.  Children are re-ordered canonically (ascending
        smallest point) so equal structures behave identically downstream.
        """
        children: list[list[int]] = []
        node_points: list[list[int]] = []
        parent: list[int] = []

        def build(spec, par):
            idx = len(children)
            children.append([])
            node_points.append([])
            parent.append(par)
            if isinstance(spec, (int, np.integer)):
                node_points[idx] = [int(spec)]
                return idx
            if len(spec) < 2:
                raise ValueError("internal tree nodes need at least two children")
            kids = [build(sub, idx) for sub in spec]
            kids.sort(key=lambda k: min(node_points[k]))
            children[idx] = kids
            pts = sorted(p for k in kids for p in node_points[k])
            node_points[idx] = pts
            return idx

        build(nested, -1)
        n_points = len(node_points[0])
        leaf_of_point = np.full(n_points, -1, dtype=np.intp)
        for i, (ch, pts) in enumerate(zip(children, node_points)):
            if not ch:
                leaf_of_point[pts[0]] = i
        return cls(children, [np.asarray(p) for p in node_points],
                   np.asarray(parent), leaf_of_point)

    @classmethod
    def full_binary(cls, depth: int) -> "DyadicTree":
        """Complete binary tree over 2**depth consecutive points."""

        def split(lo, hi):
            if hi - lo == 1:
                return lo
            mid = (lo + hi) // 2
            return [split(lo, mid), split(mid, hi)]

        return cls.from_nested(split(0, 2 ** depth))

    @classmethod
    def random(cls, n_points: int, rng: np.random.Generator,
               max_arity: int = 3) -> "DyadicTree":
        """Random tree over n_points leaves with arities in [2, max_arity]."""

        def split(points):
            if len(points) == 1:
                return int(points[0])
            arity = int(rng.integers(2, min(max_arity, len(points)) + 1))
            cuts = np.sort(rng.choice(np.arange(1, len(points)), size=arity - 1,
                                      replace=False))
            parts = np.split(points, cuts)
            return [split(p) for p in parts]

        return cls.from_nested(split(np.arange(n_points)))

    # -- structure --------------------------------------------------------

    def _validate(self):
        n_points = self.leaf_of_point.shape[0]
        seen = np.zeros(n_points, dtype=bool)
        for i, ch in enumerate(self.children):
            if len(ch) == 1:
                raise ValueError(f"node {i} has a single child")
            if not ch:
                pts = self.node_points[i]
                if pts.shape[0] != 1:
                    raise ValueError(f"leaf node {i} holds {pts.shape[0]} points")
                if seen[pts[0]]:
                    raise ValueError(f"point {pts[0]} appears twice")
                seen[pts[0]] = True
        if not seen.all():
            raise ValueError("tree leaves do not cover all points")

    @property
    def n_nodes(self) -> int:
        return len(self.children)

    @property
    def n_points(self) -> int:
        return self.leaf_of_point.shape[0]

    @cached_property
    def depth(self) -> np.ndarray:
        d = np.zeros(self.n_nodes, dtype=np.intp)
        for i in range(1, self.n_nodes):
            d[i] = d[self.parent[i]] + 1
        return d

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())

    def is_leaf(self, node: int) -> bool:
        return not self.children[node]

    def node_masses(self, masses: np.ndarray) -> np.ndarray:
        out = np.empty(self.n_nodes)
        for i in range(self.n_nodes):
            out[i] = masses[self.node_points[i]].sum()
        return out

    def ancestors(self, node: int) -> list[int]:
        """node, parent, ..., root."""
        chain = [node]
        while self.parent[chain[-1]] >= 0:
            chain.append(int(self.parent[chain[-1]]))
        return chain


@dataclass(frozen=True, eq=False)
class FiniteSpace:
    """N massed points with a symmetric positive distance matrix.

    ``tree`` is attached when the metric came from ``dyadic_metric``; dyadic
    construction then uses the tree directly instead of greedy nets.
    """

    masses: np.ndarray
    dist: np.ndarray
    tree: DyadicTree | None = None

    def __post_init__(self):
        masses = np.asarray(self.masses, dtype=np.float64)
        dist = np.asarray(self.dist, dtype=np.float64)
        if masses.ndim != 1 or dist.shape != (masses.size, masses.size):
            raise MetricViolation("shape mismatch between masses and distances")
        if not (masses > 0).all():
            raise MetricViolation("all point masses must be positive")
        dist = 0.5 * (dist + dist.T)  # symmetrize away representation noise
        if np.diagonal(dist).any():
            raise MetricViolation("self-distances must vanish")
        off = dist + np.diag(np.full(masses.size, np.inf))
        if not (off > 0).all():
            bad = np.argwhere(off <= 0)[0]
            raise MetricViolation(f"zero distance between distinct points {tuple(bad)}")
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "dist", dist)

    # -- basics -----------------------------------------------------------

    @property
    def n(self) -> int:
        return self.masses.shape[0]

    @cached_property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    @cached_property
    def diameter(self) -> float:
        return float(self.dist.max())

    def mu(self, members: np.ndarray) -> float:
        """Measure of a point set given as mask or index array."""
        return float(self.masses[members].sum())

    def ball(self, center: int, radius: float) -> Ball:
        members = self.dist[center] < radius
        # prefix-sum measure, so ball(), ball_measure_fn and unique_balls
        # agree to the last bit (sweeps compare these across routes)
        k = int(np.searchsorted(self.sorted_dist[center], radius, side="left"))
        measure = float(self.cum_mass[center, k - 1]) if k else 0.0
        return Ball(int(center), float(radius), members, measure)

    # -- sorted-prefix machinery ------------------------------------------
    #
    # All ball sweeps reduce to prefixes of the distance-sorted point order at
    # each center: the distinct balls centered at x are exactly the prefixes
    # that end at a group of tied distances.

    @cached_property
    def order(self) -> np.ndarray:
        """(N, N) int; row c lists points by increasing distance from c, ties by index."""
        return np.argsort(self.dist, axis=1, kind="stable")

    @cached_property
    def rank(self) -> np.ndarray:
        """Inverse permutations of ``order``: rank[c, order[c, k]] = k."""
        r = np.empty_like(self.order)
        rows = np.arange(self.n)[:, None]
        r[rows, self.order] = np.arange(self.n)[None, :]
        return r

    @cached_property
    def sorted_dist(self) -> np.ndarray:
        return np.take_along_axis(self.dist, self.order, axis=1)

    @cached_property
    def cum_mass(self) -> np.ndarray:
        """cum_mass[c, k] = mass of the first k+1 points in row order."""
        return np.cumsum(self.masses[self.order], axis=1)

    def prefix_ends(self, center: int) -> np.ndarray:
        """Prefix sizes k such that the first k sorted points form a ball.

        k qualifies when sorted_dist[k-1] < sorted_dist[k] (or k = N); the
        realized radius is nextafter(sorted_dist[k-1], inf).
        """
        ds = self.sorted_dist[center]
        ends = np.flatnonzero(ds[:-1] < ds[1:]) + 1
        return np.concatenate([ends, [self.n]])

    @cached_property
    def prefix_boundary_mask(self) -> np.ndarray:
        """(N, N) bool; [c, L-1] marks prefix lengths L that realize balls."""
        mask = np.zeros((self.n, self.n), dtype=bool)
        for c in range(self.n):
            mask[c, self.prefix_ends(c) - 1] = True
        return mask

    def critical_radii(self, center: int) -> np.ndarray:
        """{d(center, y)} union {d(center, y) + ulp}, positive values only."""
        u = np.unique(self.dist[center])
        radii = np.unique(np.concatenate([u[u > 0], np.nextafter(u, np.inf)]))
        return radii

    def ball_measure_fn(self, center: int):
        """Vectorized rho -> mu(B(center, rho)) using the sorted prefix sums."""
        ds = self.sorted_dist[center]
        cum = self.cum_mass[center]

        def measure(rho):
            idx = np.searchsorted(ds, rho, side="left")
            out = np.where(idx > 0, cum[np.maximum(idx, 1) - 1], 0.0)
            return out if np.ndim(rho) else float(out)

        return measure

    @cached_property
    def _unique_balls(self) -> list[Ball]:
        seen: set[bytes] = set()
        out: list[Ball] = []
        for c in range(self.n):
            ds = self.sorted_dist[c]
            for k in self.prefix_ends(c):
                members = np.zeros(self.n, dtype=bool)
                members[self.order[c, :k]] = True
                key = members.tobytes()
                if key in seen:
                    continue
                seen.add(key)
                radius = float(np.nextafter(ds[k - 1], np.inf))
                out.append(Ball(c, radius, members, float(self.cum_mass[c, k - 1])))
        return out

    def unique_balls(self) -> list[Ball]:
        """All distinct balls of the space, deduplicated by member set.

        Iteration order (centers ascending, radii ascending) is deterministic,
        and the first realization of each member set wins.  The list is built
        once per space; callers get a fresh list over the shared Ball objects.
        """
        return list(self._unique_balls)


# -- exact constants --------------------------------------------------------


def quasi_triangle_constant(space: FiniteSpace) -> float:
    """Smallest c_d >= 1 with d(x,y) <= c_d (d(x,z) + d(z,y)) for all triples.

    Exhaustive over ordered triples of distinct points; exact, not an a-priori
    bound.  O(N^3) as one N x N sweep per intermediate point.
    """
    D = space.dist
    n = space.n
    worst = 1.0
    idx = np.arange(n)
    for z in range(n):
        denom = D[:, z][:, None] + D[z, :][None, :]
        ratio = np.divide(D, denom, out=np.zeros_like(D), where=denom > 0)
        ratio[z, :] = 0.0
        ratio[:, z] = 0.0
        ratio[idx, idx] = 0.0
        worst = max(worst, float(ratio.max()))
    return worst


def doubling_constants(space: FiniteSpace) -> tuple[float, float]:
    """(c_mu, D_mu): exact doubling constant and its log2.

    c_mu = sup over centers and rho > 0 of mu(B(x, 2 rho)) / mu(B(x, rho)).
    The sup over all real rho is attained on the critical radius set, swept
    here per center with prefix sums.
    """
    worst = 1.0
    for c in range(space.n):
        radii = space.critical_radii(c)
        measure = space.ball_measure_fn(c)
        small = measure(radii)
        big = measure(2.0 * radii)
        worst = max(worst, float((big / small).max()))
    return worst, float(np.log2(worst))


# -- constructors ------------------------------------------------------------


def dyadic_metric(tree: DyadicTree, masses) -> FiniteSpace:
    """Ultrametric space of a tree: d(x, y) = mass of the smallest node holding both.

    Balls coincide with tree nodes and c_d = 1.  The tree rides along on the
    returned space so dyadic construction can use it directly.
    """
    masses = np.asarray(masses, dtype=np.float64)
    if masses.shape != (tree.n_points,):
        raise ValueError("masses must match the tree's points")
    node_mass = tree.node_masses(masses)
    n = tree.n_points
    dist = np.zeros((n, n))
    for node, kids in enumerate(tree.children):
        for i in range(len(kids)):
            pi = tree.node_points[kids[i]]
            for j in range(i + 1, len(kids)):
                pj = tree.node_points[kids[j]]
                dist[np.ix_(pi, pj)] = node_mass[node]
                dist[np.ix_(pj, pi)] = node_mass[node]
    return FiniteSpace(masses, dist, tree=tree)


def line_space(positions, masses=None) -> FiniteSpace:
    """Points on the real line with |x - y| distances."""
    positions = np.asarray(positions, dtype=np.float64)
    if masses is None:
        masses = np.ones_like(positions)
    dist = np.abs(positions[:, None] - positions[None, :])
    return FiniteSpace(np.asarray(masses, dtype=np.float64), dist)


def snowflake(space: FiniteSpace, t: float) -> FiniteSpace:
    """Raise distances to the power t >= 1 (quasi-metric with larger c_d)."""
    if t < 1:
        raise ValueError("snowflake exponent must be >= 1")
    return FiniteSpace(space.masses.copy(), space.dist ** t)
