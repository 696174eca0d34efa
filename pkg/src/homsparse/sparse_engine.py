"""Stopping-time sparse decomposition with convex-body coefficients.

calibrate_config measures, over every distinct cube of a dyadic system, exact
level-set envelopes for the three stopping statistics -- the L^s maximal
function, the localized operator itself, and its grand truncation oscillation
-- each normalized per John axis of the convex body of f over the dilated
cube.  With rho = 1/(6 n c1 c2) each exceptional piece has measure at most
rho mu(Q) at every cube the recursion can visit, so the selected stopping
children carry at most half the mass: the produced family is 1/2-sparse by
construction and that is asserted, not assumed.

sparse_dominate drives the recursion and returns the decomposition: an exact
telescoping reconstruction of T(f 1_{alpha Q0}), per-cube residuals with
membership certificates r_Q(x) in kappa * K_{alpha Q}, minimal-norm
representing kernels for the worst residual of each cube, and both the
predicted kappa (from the envelopes) and the measured one (exact).

t1_sparse swaps the measured envelopes for the classical formulas driven by
testing and tail constants of the kernel alone; maximal_stopping_family is
the simpler 3/4-sparse stopping tree used for maximal-function bounds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .convex_body import (JohnEllipsoid, john_ellipsoid, kernel_representation,
                          support_function)
from .dyadic import Cube, DyadicSystem, dilate, quasi_constant
from .errors import ConstructionFailed, HypothesisFailed
from .matrix_weight import spd_power, reducing_matrix, uncentered_maximal
from .operators import hormander_constants, sharp_grand_maximal, t1_testing_condition
from .space import Ball, FiniteSpace


@dataclass(frozen=True)
class StoppingConfig:
    """Calibrated stopping parameters.

    c1 bounds the dilation mass ratio, c2 the stopping density (a power of
    two), rho = 1/(6 n c1 c2) the per-test exceptional mass fraction.  psi
    (maximal-function test) and phi (operator and oscillation tests) are the
    smallest threshold multipliers whose level sets stay below rho mu(Q) on
    every cube; w_meas is the measured weak-(1,1) constant of the ball
    maximal on the slice family, and kappa_formula the resulting predicted
    domination constant n (3B + B (w/rho)^{1/s}) with B = max(psi, phi).
    """

    s: float
    alpha: float
    c1: float
    c2: int
    rho: float
    psi: float
    phi: float
    w_meas: float
    kappa_formula: float


class _CubeData:
    """Geometry and the three stopping statistics of one cube (rho-free)."""

    __slots__ = ("cube", "dilation", "ell", "U", "sigma", "A", "stats")

    def __init__(self, space: FiniteSpace, system: DyadicSystem,
                 kernel: np.ndarray, f: np.ndarray, s: float, alpha: float,
                 cube: Cube):
        self.cube = cube
        self.dilation = dilate(system, cube, alpha)
        self.ell = john_ellipsoid(space, self.dilation.members, f, s)
        live = self.ell.semi_axes > 0
        self.U = self.ell.axes[live]
        self.sigma = self.ell.semi_axes[live]
        if self.U.shape[0]:
            self.A = support_function(space, self.dilation.members, f, s, self.U)
            g = (f @ self.U.T) * self.dilation.members[:, None]
            stat_m = np.stack([
                uncentered_maximal(space, np.abs(g[:, i]) ** s) ** (1.0 / s)
                for i in range(g.shape[1])])
            stat_t = np.abs(kernel @ (space.masses[:, None] * g)).T
            stat_o = np.stack([
                sharp_grand_maximal(space, kernel, g[:, i], alpha)
                for i in range(g.shape[1])])
            self.stats = [stat_m, stat_t, stat_o]
        else:
            self.A = np.zeros(0)
            self.stats = [np.zeros((0, space.n))] * 3


def _default_alpha(space: FiniteSpace, system: DyadicSystem) -> float:
    return max(1.0, 3.0 * quasi_constant(space) ** 2 / system.delta)


def _as_field(f: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    return f[:, None] if f.ndim == 1 else f


def _distinct_cubes(system: DyadicSystem) -> dict:
    seen: dict[bytes, Cube] = {}
    for cube in system.all_cubes():
        seen.setdefault(cube.members.tobytes(), cube)
    return seen


def _build_cache(space, system, kernel, f, s, alpha) -> dict:
    return {key: _CubeData(space, system, kernel, f, s, alpha, cube)
            for key, cube in _distinct_cubes(system).items()}


def _min_threshold(vals: np.ndarray, masses: np.ndarray, allowed: float) -> float:
    """Smallest t with mass({vals >= t}) <= allowed (may exceed max(vals))."""
    order = np.argsort(vals)
    v, m = vals[order], masses[order]
    suffix = np.cumsum(m[::-1])[::-1]
    uniq, first = np.unique(v, return_index=True)
    ok = suffix[first] <= allowed
    if ok.any():
        return float(uniq[np.argmax(ok)])
    return float(np.nextafter(uniq[-1], np.inf))


def _envelopes(space: FiniteSpace, cache: dict, rho: float) -> tuple[float, float]:
    psi = phi = 0.0
    for data in cache.values():
        qmask = data.cube.members
        mm = space.masses[qmask]
        allowed = rho * data.cube.measure
        for i in range(data.A.size):
            for k, stat in enumerate(data.stats):
                ratio = _min_threshold(stat[i][qmask], mm, allowed) / data.A[i]
                if k == 0:
                    psi = max(psi, ratio)
                else:
                    phi = max(phi, ratio)
    return psi, phi


def _weak_constant(space: FiniteSpace, cache: dict, s: float) -> float:
    w = 0.0
    for data in cache.values():
        for i in range(data.A.size):
            M = data.stats[0][i] ** s  # maximal function of |g_i|^s
            norm1 = data.dilation.measure * data.A[i] ** s
            order = np.argsort(M)
            v, m = M[order], space.masses[order]
            suffix = np.cumsum(m[::-1])[::-1]
            uniq, first = np.unique(v, return_index=True)
            w = max(w, float((uniq * suffix[first]).max() / norm1))
    return w


def _omega_mask(space: FiniteSpace, data: _CubeData, psi: float, phi: float) -> np.ndarray:
    omega = np.zeros(space.n, dtype=bool)
    caps = (psi, phi, phi)
    for i in range(data.A.size):
        for k, stat in enumerate(data.stats):
            omega |= stat[i] >= caps[k] * data.A[i] * (1 + 1e-12)
    omega &= data.cube.members
    return omega


def _select_stopping(space, system, cube, omega, c2) -> list[Cube]:
    """Maximal strict subcubes with omega-density above 1/c2 (ties select)."""
    out = []
    for child in system.splitting_children(cube):
        if space.mu(child.members & omega) * c2 >= child.measure:
            out.append(child)
        else:
            out.extend(_select_stopping(space, system, child, omega, c2))
    return out


def calibrate_config(space: FiniteSpace, system: DyadicSystem, kernel: np.ndarray,
                     f: np.ndarray, s: float = 2.0, alpha: float | None = None,
                     c2_max: int = 1 << 20):
    """Measure stopping constants for (T, f, s); returns (config, stats cache).

    c2 starts at 2 and doubles until the selected children at the root carry
    at most half the root mass (with exact envelopes this holds immediately;
    the loop guards atomic pathologies).
    """
    f = _as_field(f)
    if alpha is None:
        alpha = _default_alpha(space, system)
    cache = _build_cache(space, system, kernel, f, s, alpha)
    n = f.shape[1]
    c1 = max(d.dilation.measure / d.cube.measure for d in cache.values())
    root = system.root
    c2 = 2
    while True:
        rho = 1.0 / (6.0 * n * c1 * c2)
        psi, phi = _envelopes(space, cache, rho)
        rdata = cache[root.members.tobytes()]
        omega = _omega_mask(space, rdata, psi, phi)
        selected = _select_stopping(space, system, root, omega, c2)
        if sum(P.measure for P in selected) <= 0.5 * root.measure * (1 + 1e-12):
            break
        c2 *= 2
        if c2 > c2_max:
            raise ConstructionFailed("stopping calibration did not stabilize")
    w = _weak_constant(space, cache, s)
    B = max(psi, phi)
    kappa_formula = n * (3.0 * B + B * (w / rho) ** (1.0 / s))
    config = StoppingConfig(s, alpha, float(c1), c2, rho, psi, phi, w, kappa_formula)
    return config, cache


def one_step_decompose(space, system, kernel, f, config: StoppingConfig,
                       cube: Cube | None = None, cache: dict | None = None):
    """One stopping step at a cube: (selected children, exceptional set, data).

    The selected cubes are the maximal strict subcubes whose share of the
    exceptional set exceeds 1/c2; their total mass is at most half of the
    cube's, which is asserted.
    """
    f = _as_field(f)
    if cube is None:
        cube = system.root
    key = cube.members.tobytes()
    if cache is None or key not in cache:
        data = _CubeData(space, system, kernel, f, config.s, config.alpha, cube)
        if cache is not None:
            cache[key] = data
    else:
        data = cache[key]
    omega = _omega_mask(space, data, config.psi, config.phi)
    selected = _select_stopping(space, system, cube, omega, config.c2)
    if sum(P.measure for P in selected) > 0.5 * cube.measure * (1 + 1e-9):
        raise ConstructionFailed(
            f"stopping children exceed half the mass of cube {cube.key}")
    return selected, omega, data


@dataclass
class SparseNode:
    """One cube of the sparse family with its certified residual."""

    cube: Cube
    parent: int                 # index into the node list, -1 at the root
    dilation: Ball
    ellipsoid: JohnEllipsoid
    residual: np.ndarray        # (N, n) values of r_Q, zero off the cube
    witness: np.ndarray         # cube minus the selected children
    axis_ratio: float           # rank * max |<r, u_i>| / sigma_i over the cube
    kernel: np.ndarray | None = None  # (N,) representer of the worst residual
    target: np.ndarray | None = None  # its body element, r_Q(x*) / kappa


@dataclass
class SparseDecomposition:
    config: StoppingConfig
    nodes: list[SparseNode]
    kappa_measured: float
    degenerate_residual: float  # largest residual component on a dead axis
    f: np.ndarray

    def reconstruct(self) -> np.ndarray:
        """sum_Q chi_Q r_Q == T(f 1_{alpha Q0}), exactly (telescoping)."""
        return sum(node.residual for node in self.nodes)

    @property
    def cubes(self) -> list[Cube]:
        return [node.cube for node in self.nodes]

    @property
    def witnesses(self) -> list[np.ndarray]:
        return [node.witness for node in self.nodes]


def sparse_dominate(space: FiniteSpace, system: DyadicSystem, kernel: np.ndarray,
                    f: np.ndarray, s: float = 2.0, alpha: float | None = None,
                    config: StoppingConfig | None = None) -> SparseDecomposition:
    """Full stopping recursion from the root; see the module docstring."""
    f = _as_field(f)
    if config is None:
        config, cache = calibrate_config(space, system, kernel, f, s, alpha)
    else:
        cache = _build_cache(space, system, kernel, f, config.s, config.alpha)
    mf = space.masses[:, None] * f
    tf_cache: dict[bytes, np.ndarray] = {}

    def tf(data: _CubeData) -> np.ndarray:
        key = data.cube.members.tobytes()
        if key not in tf_cache:
            tf_cache[key] = kernel @ (mf * data.dilation.members[:, None])
        return tf_cache[key]

    nodes: list[SparseNode] = []
    kappa = 0.0
    degen = 0.0
    queue: list[tuple[Cube, int]] = [(system.root, -1)]
    while queue:
        cube, parent = queue.pop(0)
        data = cache[cube.members.tobytes()]
        selected, _, _ = one_step_decompose(space, system, kernel, f, config,
                                            cube=data.cube, cache=cache)
        r = np.zeros_like(f)
        r[cube.members] = tf(data)[cube.members]
        witness = cube.members.copy()
        for P in selected:
            r[P.members] -= tf(cache[P.members.tobytes()])[P.members]
            witness &= ~P.members
        ratio = 0.0
        if data.U.shape[0]:
            comps = np.abs(r[cube.members] @ data.U.T) / data.sigma[None, :]
            ratio = float(data.U.shape[0] * comps.max(initial=0.0))
        dead = data.ell.axes[data.ell.semi_axes == 0]
        if dead.size:
            degen = max(degen, float(np.abs(r[cube.members] @ dead.T).max(initial=0.0)))
        kappa = max(kappa, ratio)
        idx = len(nodes)
        nodes.append(SparseNode(data.cube, parent, data.dilation, data.ell,
                                r, witness, ratio))
        queue.extend((P, idx) for P in selected)

    if kappa > 0:
        for node in nodes:
            data = cache[node.cube.members.tobytes()]
            if not data.U.shape[0]:
                continue
            per_x = (np.abs(node.residual[node.cube.members] @ data.U.T)
                     / data.sigma[None, :]).max(axis=1)
            x_star = node.cube.indices[int(np.argmax(per_x))]
            target = node.residual[x_star] / kappa
            rep = kernel_representation(space, node.dilation.members, f,
                                        config.s, target)
            node.kernel = rep.kernels[0]
            node.target = target
    return SparseDecomposition(config, nodes, kappa, degen, f)


def bilinear_sparse_form(space: FiniteSpace, dec: SparseDecomposition,
                         g: np.ndarray) -> tuple[float, float]:
    """(<Tf, g>, kappa sum_Q int_Q h_{K_alpha Q}(g)): the sparse pairing bound.

    The left side uses the exact reconstruction; the right side dominates it
    because every residual lies in kappa times the cube's body.
    """
    g = _as_field(g)
    lhs = float(np.sum(space.masses[:, None] * dec.reconstruct() * g))
    rhs = 0.0
    for node in dec.nodes:
        pts = node.cube.members
        h = support_function(space, node.dilation.members, dec.f,
                             dec.config.s, g[pts])
        rhs += float(space.masses[pts] @ h)
    return lhs, dec.kappa_measured * rhs


@dataclass
class MultiSystemEntry:
    system_index: int
    cube: Cube                 # covering cube in the adjacent family
    source: Cube               # original sparse cube
    witness: np.ndarray
    kernel: np.ndarray | None
    target: np.ndarray | None


@dataclass
class MultiSystemForm:
    entries: list[MultiSystemEntry]
    c: float      # max mu(P') / mu(P) over the transfer
    eta: float    # 1 / (2c): the witnesses certify this sparseness
    s: float


def to_multi_system_form(space: FiniteSpace, dec: SparseDecomposition,
                         family) -> MultiSystemForm:
    """Transfer dilated cubes to undilated cubes of an adjacent family.

    Each alpha P is swallowed by the smallest covering cube P' of one of the
    family's systems; kernels are rescaled by (mu(P')/mu(alpha P)) c^{-1/s}
    so their mixed norms stay at most one, and the inherited witnesses make
    each per-system family 1/(2c)-sparse.
    """
    s = dec.config.s
    found = [family.smallest_covering_cube(node.dilation) for node in dec.nodes]
    c = max(P.measure / node.cube.measure
            for (_, P), node in zip(found, dec.nodes))
    entries = []
    for (j, P), node in zip(found, dec.nodes):
        scale = (P.measure / node.dilation.measure) * c ** (-1.0 / s)
        entries.append(MultiSystemEntry(
            j, P, node.cube, node.witness,
            None if node.kernel is None else node.kernel * scale,
            None if node.target is None else node.target * c ** (-1.0 / s)))
    return MultiSystemForm(entries, float(c), 1.0 / (2.0 * c), s)


def t1_sparse(space: FiniteSpace, system: DyadicSystem, kernel: np.ndarray,
              f: np.ndarray, r: float = 2.0, alpha: float | None = None,
              cap: float = 1e9) -> SparseDecomposition:
    """Sparse domination calibrated from testing and tail constants alone.

    Instead of measured envelopes: psi = (2 c1 c' / rho)^2 from the testing
    constant c', phi = (c' + H_r)/rho from the r-tail constant, body exponent
    s = r'.  Any constant beyond ``cap`` raises HypothesisFailed -- the
    kernel is then too far from satisfying the assumed conditions for the
    decomposition to be meaningful.
    """
    if r <= 1:
        raise ValueError("r must be > 1")
    f = _as_field(f)
    if alpha is None:
        alpha = _default_alpha(space, system)
    s = r / (r - 1.0)
    n = f.shape[1]
    c1 = max(dilate(system, cube, alpha).measure / cube.measure
             for cube in _distinct_cubes(system).values())
    ctest = max(t1_testing_condition(space, kernel),
                t1_testing_condition(space, kernel.T))
    ch = max(hormander_constants(space, kernel, r))
    c2 = 2
    rho = 1.0 / (6.0 * n * c1 * c2)
    psi = (2.0 * c1 * ctest / rho) ** 2
    phi = (ctest + ch) / rho
    B = max(psi, phi)
    # the weak-type constant of the ball maximal is a geometry constant;
    # c1 is the measured stand-in on this space
    kappa_formula = n * (3.0 * B + B * (c1 / rho) ** (1.0 / s))
    for name, val in (("psi", psi), ("phi", phi), ("kappa", kappa_formula)):
        if not np.isfinite(val) or val > cap:
            raise HypothesisFailed(name, float(val), cap)
    config = StoppingConfig(s, alpha, float(c1), c2, rho, psi, phi, float(c1),
                            kappa_formula)
    return sparse_dominate(space, system, kernel, f, s=s, alpha=alpha,
                           config=config)


def maximal_stopping_family(space: FiniteSpace, system: DyadicSystem,
                            W: np.ndarray, p: float, f: np.ndarray,
                            threshold_factor: float = 4.0):
    """Stopping tree for the weighted maximal function; 3/4-sparse.

    At a cube J the stopping children are the maximal strict subcubes where
    the average of |R_J W^{-1/p} f| exceeds threshold_factor times its
    J-average (R_J the reducing matrix of W on J); by Chebyshev they carry at
    most 1/threshold_factor of the mass.  Returns (cubes, witnesses).
    """
    f = _as_field(f)
    g = np.einsum("xij,xj->xi", spd_power(W, -1.0 / p), f)

    def local_avg(v, members):
        return float(space.masses[members] @ v[members]) / space.mu(members)

    cubes: list[Cube] = []
    witnesses: list[np.ndarray] = []
    queue = [system.root]
    while queue:
        J = queue.pop(0)
        R = reducing_matrix(space, J.members, W, p)
        v = np.linalg.norm(g @ R, axis=1)  # R is symmetric
        bar = threshold_factor * local_avg(v, J.members)

        def select(cube):
            out = []
            for child in system.splitting_children(cube):
                if local_avg(v, child.members) > bar:
                    out.append(child)
                else:
                    out.extend(select(child))
            return out

        children = select(J) if bar > 0 else []
        total = sum(L.measure for L in children)
        if total > J.measure / threshold_factor * (1 + 1e-9):
            raise ConstructionFailed(
                f"stopping children exceed 1/{threshold_factor} of cube {J.key}")
        witness = J.members.copy()
        for L in children:
            witness &= ~L.members
        cubes.append(J)
        witnesses.append(witness)
        queue.extend(children)
    return cubes, witnesses
