"""Dyadic systems: construction, dilation, covering partitions, sparsity.

A dyadic system is a hierarchy of partitions ("levels", coarse to fine) whose
cells carry centers and scale delta**k, certified against three structural
properties rather than assumed:

1. each level partitions the space,
2. cells refine across levels (nesting),
3. every cube Q at level k is sandwiched between balls at its center,
   B(z_Q, c0 delta**k) <= Q <= B(z_Q, C0 delta**k), with measured (c0, C0).

Two construction routes.  Tree-backed spaces cut the tree at each depth
(leaves persist as singletons); delta is the worst child/parent mass ratio and
the sandwich constants come out exact.  General spaces use greedy maximal
delta**k-separated nets, nested across levels, with bottom-up parent
assignment; constants are measured from the result.

Dilations are balls: alpha Q := B(z_Q, alpha * C0 * delta**k).

The sparseness certificates at the bottom of the module are exact: a family is
eta-sparse iff disjoint witness mass assignments exist (a max-flow feasibility
problem -- on atomic spaces witnesses are fractional sub-masses, which is what
makes the equivalence with the Carleson packing condition exact), and the
Carleson constant is a finite max of packing ratios.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import networkx as nx
import numpy as np

from .errors import ConstructionFailed, CoverageFailed
from .space import Ball, FiniteSpace

_RELTOL = 1e-12


@dataclass(frozen=True, eq=False)
class Cube:
    """One cell of a dyadic system: (level, idx) is its identity."""

    level: int
    idx: int
    center: int
    members: np.ndarray  # boolean mask over points
    measure: float
    node: int = -1  # backing tree node, -1 for net-built systems

    @property
    def key(self) -> tuple[int, int]:
        return (self.level, self.idx)

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.members)

    @property
    def size(self) -> int:
        return int(self.members.sum())


class DyadicSystem:
    """Certified hierarchy of dyadic cubes over a finite space."""

    def __init__(self, space: FiniteSpace, delta: float, levels: list[list[Cube]],
                 c0: float, C0: float, seed=None):
        self.space = space
        self.delta = float(delta)
        self.levels = levels
        self.c0 = float(c0)
        self.C0 = float(C0)
        self.seed = seed
        self._index_points()
        self._certify()

    # -- lookups ------------------------------------------------------------

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def root(self) -> Cube:
        return self.levels[0][0]

    def all_cubes(self):
        for level in self.levels:
            yield from level

    def cube_of_point(self, level: int, x: int) -> Cube:
        return self.levels[level][self.point_cube[level, x]]

    def parent(self, cube: Cube) -> Cube | None:
        if cube.level == 0:
            return None
        return self.cube_of_point(cube.level - 1, cube.center)

    def children(self, cube: Cube) -> list[Cube]:
        if cube.level + 1 >= self.n_levels:
            return []
        nxt = self.levels[cube.level + 1]
        ids = np.unique(self.point_cube[cube.level + 1][cube.members])
        return [nxt[i] for i in ids]

    def splitting_children(self, cube: Cube) -> list[Cube]:
        """Children in the lattice of distinct cubes.

        Skips levels where the cube persists unchanged (a singleton copied to
        finer levels) and returns [] when the cube never splits (singletons).
        """
        current = cube
        while True:
            kids = self.children(current)
            if not kids:
                return []
            if len(kids) == 1 and kids[0].size == current.size:
                current = kids[0]
                continue
            return kids

    def descendants(self, cube: Cube):
        """cube and every strictly finer distinct cube below it."""
        stack = [cube]
        while stack:
            q = stack.pop()
            yield q
            stack.extend(reversed(self.splitting_children(q)))

    def _index_points(self):
        n = self.space.n
        self.point_cube = np.full((self.n_levels, n), -1, dtype=np.intp)
        for k, level in enumerate(self.levels):
            for cube in level:
                self.point_cube[k, cube.members] = cube.idx

    # -- certification ------------------------------------------------------

    def _certify(self):
        space = self.space
        if (self.point_cube < 0).any():
            raise ConstructionFailed("some level fails to cover the space")
        for k, level in enumerate(self.levels):
            total = sum(c.size for c in level)
            if total != space.n:
                raise ConstructionFailed(f"level {k} is not a partition")
            for cube in level:
                if not cube.members[cube.center]:
                    raise ConstructionFailed(f"center outside cube {cube.key}")
                par = self.parent(cube)
                if par is not None and (cube.members & ~par.members).any():
                    raise ConstructionFailed(f"cube {cube.key} leaks out of its parent")
                rad = self.delta ** k
                inner = space.ball(cube.center, self.c0 * rad)
                outer = space.ball(cube.center, self.C0 * rad)
                if (inner.members & ~cube.members).any():
                    raise ConstructionFailed(f"inner ball leaks out of cube {cube.key}")
                if (cube.members & ~outer.members).any():
                    raise ConstructionFailed(f"cube {cube.key} leaks out of outer ball")
        if not (0 < self.c0 <= self.C0):
            raise ConstructionFailed(f"bad sandwich constants ({self.c0}, {self.C0})")

    # -- serialization --------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "c0": self.c0,
            "C0": self.C0,
            "seed": self.seed,
            "levels": [
                [{"center": c.center, "points": c.indices.tolist()} for c in level]
                for level in self.levels
            ],
        }

    @cached_property
    def cube_diameters(self) -> dict[tuple[int, int], float]:
        out = {}
        D = self.space.dist
        for cube in self.all_cubes():
            pts = cube.indices
            out[cube.key] = float(D[np.ix_(pts, pts)].max()) if pts.size > 1 else 0.0
        return out


def build_dyadic_system(space: FiniteSpace, delta: float = 0.5, seed=None) -> DyadicSystem:
    """Construct and certify a dyadic system.

    Tree-backed spaces ignore ``delta``/``seed`` and cut the tree by depth:
    the scale factor is the worst child/parent mass ratio, centers are the
    smallest point of each node, and leaves persist to the finest level.

    Otherwise greedy nets: level k centers form a maximal r_k-separated set
    (r_k = diam * delta**k), each level's net extends the previous one, cubes
    are unions of finer cubes assigned to their nearest coarser center (ties
    to the lowest point index).  ``seed`` shuffles the candidate order (None
    keeps natural order), which is what adjacent families vary.
    """
    if space.tree is not None:
        return _build_from_tree(space)
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return _build_from_nets(space, delta, seed)


def _build_from_tree(space: FiniteSpace) -> DyadicSystem:
    tree = space.tree
    node_mass = tree.node_masses(space.masses)
    depth = tree.depth
    K = tree.max_depth
    ratios = [node_mass[v] / node_mass[tree.parent[v]]
              for v in range(1, tree.n_nodes)]
    delta = min(ratios) if ratios else 0.5

    levels: list[list[Cube]] = []
    for k in range(K + 1):
        active = [v for v in range(tree.n_nodes)
                  if depth[v] == k or (tree.is_leaf(v) and depth[v] < k)]
        active.sort(key=lambda v: tree.node_points[v][0])
        row = []
        for idx, v in enumerate(active):
            pts = tree.node_points[v]
            members = np.zeros(space.n, dtype=bool)
            members[pts] = True
            row.append(Cube(k, idx, int(pts[0]), members,
                            float(node_mass[v]), node=v))
        levels.append(row)

    scale = np.array([delta ** k for k in range(K + 1)])
    c0_raw, C0_raw = np.inf, 0.0
    for k, row in enumerate(levels):
        for cube in row:
            v = cube.node
            if tree.parent[v] >= 0:
                c0_raw = min(c0_raw, node_mass[tree.parent[v]] / scale[k])
            if not tree.is_leaf(v) and depth[v] == k:
                C0_raw = max(C0_raw, node_mass[v] / scale[k])
    if C0_raw == 0.0:  # single-point space
        C0_raw = float(node_mass[0])
        c0_raw = C0_raw
    C0 = C0_raw * (1 + 1e-9)
    # strict shrink: the nearest outside point sits at exactly c0_raw * rad on
    # the attaining cube, and rounding of c0 * rad must not pull it inside the
    # (open) inner ball
    c0 = min(c0_raw * (1 - 1e-9), C0)
    return DyadicSystem(space, delta, levels, c0, C0, seed=None)


def _build_from_nets(space: FiniteSpace, delta: float, seed) -> DyadicSystem:
    n = space.n
    D = space.dist
    base_order = (np.arange(n) if seed is None
                  else np.random.default_rng(seed).permutation(n))
    R0 = max(space.diameter, np.finfo(float).tiny) * (1 + 1e-9)
    min_gap = D[D > 0].min() if n > 1 else R0

    nets: list[np.ndarray] = []
    centers: list[int] = []
    k = 0
    while True:
        r = R0 * delta ** k
        chosen = list(centers)
        for p in base_order:
            if p in chosen:
                continue
            if all(D[p, c] >= r for c in chosen):
                chosen.append(int(p))
        centers = chosen
        nets.append(np.array(chosen, dtype=np.intp))
        if len(chosen) == n:
            break
        k += 1
        if k > 200:
            raise ConstructionFailed("net refinement did not terminate")

    K = len(nets) - 1
    # members bottom-up: finest level is all singletons.
    members_of = [dict() for _ in range(K + 1)]
    for z in nets[K]:
        m = np.zeros(n, dtype=bool)
        m[z] = True
        members_of[K][int(z)] = m
    for k in range(K - 1, -1, -1):
        coarse = nets[k]
        for z in coarse:
            members_of[k][int(z)] = np.zeros(n, dtype=bool)
        for z in nets[k + 1]:
            d = D[coarse, z]
            best = d.min()
            parent = int(coarse[d <= best].min())
            members_of[k][parent] |= members_of[k + 1][int(z)]

    levels: list[list[Cube]] = []
    for k in range(K + 1):
        row = []
        for idx, z in enumerate(sorted(members_of[k])):
            m = members_of[k][z]
            row.append(Cube(k, idx, z, m, space.mu(m)))
        levels.append(row)

    c0_raw, C0_raw = np.inf, 0.0
    for k, row in enumerate(levels):
        rad = delta ** k
        for cube in row:
            inside = D[cube.center, cube.members]
            C0_raw = max(C0_raw, inside.max() / rad)
            outside = D[cube.center, ~cube.members]
            if outside.size:
                c0_raw = min(c0_raw, outside.min() / rad)
    if C0_raw == 0.0:
        C0_raw = 1.0
        c0_raw = 1.0
    C0 = C0_raw * (1 + 1e-9)
    # strict shrink, mirroring the C0 inflation: the nearest outside point sits
    # at exactly c0_raw * rad on the attaining cube, and rounding of c0 * rad
    # must not pull it inside the (open) inner ball
    c0 = min(c0_raw * (1 - 1e-9), C0)
    return DyadicSystem(space, delta, levels, c0, C0, seed=seed)


def dilate(system: DyadicSystem, cube: Cube, alpha: float) -> Ball:
    """alpha Q = B(z_Q, alpha * C0 * delta**level): dilations are balls.

    alpha = 1 already contains the cube (outer sandwich), so alpha >= 1 always
    dilates outward.
    """
    if alpha < 1:
        raise ValueError("dilation factor must be >= 1")
    radius = alpha * system.C0 * system.delta ** cube.level
    return system.space.ball(cube.center, radius)


# -- adjacent families -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AdjacentFamily:
    """m systems such that every ball embeds in a comparably-sized cube.

    For every ball B(x, rho) some cube Q of some system satisfies B <= Q and
    diam(Q) <= gamma * rho.  gamma is measured over all distinct balls at
    their smallest realizing radius, hence certifies every real radius.
    """

    systems: tuple[DyadicSystem, ...]
    gamma: float

    @property
    def m(self) -> int:
        return len(self.systems)

    def smallest_covering_cube(self, ball: Ball) -> tuple[int, Cube]:
        """(system index, cube) minimizing cube diameter among covers of ball."""
        best = None
        for j, system in enumerate(self.systems):
            cube = _smallest_cover_in_system(system, ball)
            if cube is None:
                continue
            d = system.cube_diameters[cube.key]
            if best is None or d < best[0]:
                best = (d, j, cube)
        if best is None:  # cannot happen: the root cube covers everything
            raise CoverageFailed(self.m, np.inf, np.inf)
        return best[1], best[2]


def _smallest_cover_in_system(system: DyadicSystem, ball: Ball) -> Cube | None:
    """Finest cube of the chain at ball.center containing the ball."""
    found = None
    for k in range(system.n_levels):
        cube = system.cube_of_point(k, ball.center)
        if (ball.members & ~cube.members).any():
            break
        found = cube
    return found


def build_adjacent_family(space: FiniteSpace, delta: float = 0.5, m_max: int = 8,
                          seed: int = 0, gamma_target: float | None = None) -> AdjacentFamily:
    """Smallest family of shifted systems meeting the covering target.

    Systems are built with seeds seed, seed+1, ... (the first system of a
    tree-backed space needs no shift: balls are cubes and gamma = 1).  The
    default target gamma <= 8/delta is a generous comparable-size factor;
    raises CoverageFailed when m_max systems cannot reach it.
    """
    if gamma_target is None:
        gamma_target = 8.0 / delta
    balls = space.unique_balls()
    if space.tree is not None:
        system = build_dyadic_system(space)
        fam = AdjacentFamily((system,), 1.0)
        gamma = _family_gamma(fam.systems, balls)
        return AdjacentFamily((system,), max(1.0, gamma))

    systems: list[DyadicSystem] = []
    best_by_ball = np.full(len(balls), np.inf)
    for j in range(m_max):
        systems.append(build_dyadic_system(space, delta, seed=seed + j))
        system = systems[-1]
        for i, ball in enumerate(balls):
            cube = _smallest_cover_in_system(system, ball)
            if cube is None:
                continue
            ratio = system.cube_diameters[cube.key] / ball.radius
            best_by_ball[i] = min(best_by_ball[i], ratio)
        gamma = max(1.0, float(best_by_ball.max()))
        if gamma <= gamma_target:
            return AdjacentFamily(tuple(systems), gamma)
    raise CoverageFailed(m_max, gamma_target, max(1.0, float(best_by_ball.max())))


def _family_gamma(systems, balls) -> float:
    worst = 1.0
    for ball in balls:
        best = np.inf
        for system in systems:
            cube = _smallest_cover_in_system(system, ball)
            if cube is not None:
                best = min(best, system.cube_diameters[cube.key] / ball.radius)
        worst = max(worst, best)
    return worst


# -- covering partitions ------------------------------------------------------


def covering_partition(system: DyadicSystem, E: np.ndarray, alpha: float) -> list[Cube]:
    """Partition of the space by cubes Q whose dilation alpha*Q swallows E.

    Greedy maximal refinement: a cube is replaced by its children only when
    every child still satisfies E <= alpha*child.  The root always qualifies
    (alpha >= 1 and the outer sandwich), so a partition exists for any E; for
    E far from everything the partition refines away from E and stays coarse
    near it.  Requires alpha >= 3 c_d^2 / delta (the dilation regime every
    downstream use assumes).
    """
    E = np.asarray(E, dtype=bool)
    floor = 3.0 * quasi_constant(system.space) ** 2 / system.delta
    if alpha < floor * (1 - 1e-12):
        raise ValueError(f"alpha={alpha} below admissible floor {floor}")

    def swallows(cube: Cube) -> bool:
        return not (E & ~dilate(system, cube, alpha).members).any()

    if not swallows(system.root):
        raise ConstructionFailed("root dilation misses E; sandwich broken")

    out: list[Cube] = []

    def refine(cube: Cube):
        kids = system.children(cube)
        if kids and all(swallows(c) for c in kids):
            for c in kids:
                refine(c)
        else:
            out.append(cube)

    refine(system.root)
    return out


def quasi_constant(space: FiniteSpace) -> float:
    from .space import quasi_triangle_constant
    if not hasattr(space, "_c_d"):
        object.__setattr__(space, "_c_d", quasi_triangle_constant(space))
    return space._c_d


# -- sparsity and Carleson -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class SparseCertificate:
    """Outcome of the witness max-flow.

    feasible: witnesses[i] is a nonnegative mass vector supported in cubes[i]
    with total >= eta * mu(cubes[i]); the vectors sum to at most the point
    masses (disjointness in the fractional sense).

    infeasible: (deficit_cubes, deficit_points, deficit) exhibits a Hall
    violation -- those cubes demand more than the mass their members hold.
    """

    eta: float
    feasible: bool
    witnesses: list[np.ndarray] | None = None
    deficit_cubes: tuple[int, ...] = ()
    deficit_points: tuple[int, ...] = ()
    deficit: float = 0.0


def certify_sparse(space: FiniteSpace, cubes: list[Cube], eta: float) -> SparseCertificate:
    """Decide eta-sparseness exactly via max-flow witness assignment.

    Source -> cube arcs carry the demands eta*mu(Q); cube -> member arcs are
    uncapacitated; point -> sink arcs carry point masses.  Saturation of all
    demands is equivalent to the existence of disjoint fractional witnesses.
    """
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    if not cubes:
        return SparseCertificate(eta, True, [])
    total_demand = eta * sum(c.measure for c in cubes)
    scale = max(total_demand, space.total_mass)

    G = nx.DiGraph()
    for i, cube in enumerate(cubes):
        G.add_edge("s", ("q", i), capacity=eta * cube.measure)
        for p in cube.indices:
            G.add_edge(("q", i), ("p", int(p)), capacity=float("inf"))
    for p in range(space.n):
        G.add_edge(("p", p), "t", capacity=float(space.masses[p]))

    flow_value, flow = nx.maximum_flow(G, "s", "t")
    if flow_value >= total_demand - _RELTOL * scale:
        witnesses = []
        for i, cube in enumerate(cubes):
            w = np.zeros(space.n)
            for node, amount in flow[("q", i)].items():
                if isinstance(node, tuple) and node[0] == "p":
                    w[node[1]] = amount
            witnesses.append(w)
        return SparseCertificate(eta, True, witnesses)

    cut_value, (source_side, _) = nx.minimum_cut(G, "s", "t")
    bad_cubes = tuple(sorted(n[1] for n in source_side
                             if isinstance(n, tuple) and n[0] == "q"))
    bad_points = tuple(sorted(n[1] for n in source_side
                              if isinstance(n, tuple) and n[0] == "p"))
    deficit = total_demand - cut_value
    return SparseCertificate(eta, False, None, bad_cubes, bad_points, deficit)


def carleson_constant(space: FiniteSpace, cubes: list[Cube]) -> tuple[float, Cube | None]:
    """Exact packing constant sup_Q sum_{P <= Q} mu(P) / mu(Q) and its witness.

    Containment is by member sets, so the family may mix levels and systems.
    """
    if not cubes:
        return 0.0, None
    M = np.stack([c.members for c in cubes]).astype(np.int64)
    outside = M @ (1 - M).T  # [i, j] = #points of i outside j
    contained = outside == 0
    measures = np.array([c.measure for c in cubes])
    packing = contained.T @ measures  # sum over i contained in j
    ratios = packing / measures
    j = int(np.argmax(ratios))
    return float(ratios[j]), cubes[j]
