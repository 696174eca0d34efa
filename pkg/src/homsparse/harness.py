"""Scenario generators, weighted-inequality campaigns, and reporting.

Everything here is driven by a Scenario: a small dict-backed description of a
space, a weight, an operator, and exponents.  Verifiers evaluate both sides of
a weighted bound exactly on the finite space and record the ratio; campaigns
replay a scenario across seeded instances and track the running maximum, so a
regression is a comparison of suprema, never an assertion about the hidden
constant in front of an inequality.

Reports are bit-identical for a fixed seed: every random draw flows from one
PCG64 stream per instance, all reductions run serially in index order, and
serialization uses shortest round-trip floats with sorted keys.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .dyadic import DyadicSystem, build_dyadic_system, certify_sparse, quasi_constant
from .errors import HypothesisFailed
from .matrix_weight import (a1_constant, ap_constant, sc_ainfty_constant, scalar_ap,
                            spd_power)
from .operators import (build_haar_system, christ_goldberg_maximal, eta_regularity_check,
                        haar_multiplier, hormander_constants, petermichl_eta)
from .space import DyadicTree, FiniteSpace, doubling_constants, dyadic_metric, line_space, snowflake
from .sparse_engine import sparse_dominate

CSV_COLUMNS = ("scenario_id", "inequality_id", "n", "N", "p", "q", "r",
               "lhs", "rhs", "ratio", "weight_constants", "seed")

_INEQUALITIES = ("maximal", "cz", "endpoint", "a2-scaling", "decompose", "all")


# -- scenarios ---------------------------------------------------------------


@dataclass
class Scenario:
    """One verification instance: space + weight + operator + exponents."""

    scenario_id: str
    inequality: str
    space: dict
    weight: dict
    operator: dict = field(default_factory=lambda: {"kind": "multiplier"})
    field_spec: dict = field(default_factory=lambda: {"kind": "random"})
    p: float = 2.0
    q: float | None = None
    r: float | None = None
    s: float = 2.0
    alpha: float | None = None
    seed: int = 0
    campaign: int = 0


_SCENARIO_KEYS = {"scenario_id", "inequality", "space", "weight", "operator",
                  "field", "p", "q", "r", "s", "alpha", "seed", "campaign"}


def scenario_from_dict(d: dict) -> Scenario:
    unknown = set(d) - _SCENARIO_KEYS
    if unknown:
        raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
    for key in ("scenario_id", "inequality", "space", "weight"):
        if key not in d:
            raise ValueError(f"scenario missing required key {key!r}")
    if d["inequality"] not in _INEQUALITIES:
        raise ValueError(f"unknown inequality {d['inequality']!r}; "
                         f"expected one of {_INEQUALITIES}")
    sc = Scenario(
        scenario_id=str(d["scenario_id"]),
        inequality=str(d["inequality"]),
        space=dict(d["space"]),
        weight=dict(d["weight"]),
        operator=dict(d.get("operator", {"kind": "multiplier"})),
        field_spec=dict(d.get("field", {"kind": "random"})),
        p=float(d.get("p", 2.0)),
        q=None if d.get("q") is None else float(d["q"]),
        r=None if d.get("r") is None else float(d["r"]),
        s=float(d.get("s", 2.0)),
        alpha=None if d.get("alpha") is None else float(d["alpha"]),
        seed=int(d.get("seed", 0)),
        campaign=int(d.get("campaign", 0)),
    )
    if sc.p < 1:
        raise ValueError("p must be >= 1")
    if sc.q is not None and sc.q < 1:
        raise ValueError("q must be >= 1")
    if sc.r is not None and sc.r < 1:
        raise ValueError("r must be >= 1")
    if sc.s < 1:
        raise ValueError("s must be >= 1")
    if sc.campaign < 0:
        raise ValueError("campaign size must be >= 0")
    return sc


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"scenario file {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValueError(f"scenario file {path}: expected a JSON object")
    return scenario_from_dict(raw)


# -- spaces ------------------------------------------------------------------


def position_coordinate(space: FiniteSpace) -> np.ndarray:
    """t(x) in (0, 1): normalized rank of d(x, x_0), ties by index.

    On line and balanced-tree spaces this recovers (i + 1/2) / N in point
    order, giving weight builders a coordinate that exists on any space.
    """
    t = np.empty(space.n)
    t[space.order[0]] = (np.arange(space.n) + 0.5) / space.n
    return t


def _balanced_nested(points: list):
    if len(points) == 1:
        return points[0]
    half = len(points) // 2
    return [_balanced_nested(points[:half]), _balanced_nested(points[half:])]


def tree_space(leaves: int) -> FiniteSpace:
    """Balanced binary tree on ``leaves`` points (uneven halves off powers of 2)."""
    if leaves < 2:
        raise ValueError("tree needs at least 2 leaves")
    tree = DyadicTree.from_nested(_balanced_nested(list(range(leaves))))
    return dyadic_metric(tree, np.full(leaves, 1.0 / leaves))


def _space_from_points_metric(spec: dict) -> FiniteSpace:
    pts = spec["points"]
    ids = [int(p["id"]) for p in pts]
    if sorted(ids) != list(range(len(ids))):
        raise ValueError("point ids must be a permutation of 0..N-1")
    masses = np.empty(len(ids))
    for p in pts:
        masses[int(p["id"])] = float(p["mass"])
    metric = spec["metric"]
    if not isinstance(metric, dict) or len(metric) != 1:
        raise ValueError("metric must be one of matrix / tree / line")
    kind, payload = next(iter(metric.items()))
    n = len(ids)
    if kind == "matrix":
        flat = np.asarray(payload, dtype=float)
        if flat.size != n * n:
            raise ValueError(f"metric matrix needs {n * n} entries, got {flat.size}")
        return FiniteSpace(masses, flat.reshape(n, n))
    if kind == "tree":
        return dyadic_metric(DyadicTree.from_nested(payload), masses)
    if kind == "line":
        coords = np.asarray(payload, dtype=float)
        if coords.shape != (n,):
            raise ValueError("line metric needs one coordinate per point")
        return FiniteSpace(masses, np.abs(coords[:, None] - coords[None, :]))
    raise ValueError(f"unknown metric kind {kind!r}")


def space_from_spec(spec: dict, rng: np.random.Generator) -> FiniteSpace:
    """Build a space from a generator spec or the explicit points/metric form."""
    if "points" in spec:
        return _space_from_points_metric(spec)
    kind = spec.get("kind")
    npts = int(spec.get("points_n", spec.get("leaves", 16)))
    if kind == "line":
        return line_space((np.arange(npts) + 0.5) / npts, np.full(npts, 1.0 / npts))
    if kind == "tree":
        return tree_space(npts)
    if kind == "net":
        xy = rng.uniform(size=(npts, 2))
        dist = np.linalg.norm(xy[:, None, :] - xy[None, :, :], axis=-1)
        # nudge exact duplicates apart; a metric needs positive off-diagonals
        while (dist + np.eye(npts) <= 0).any():  # pragma: no cover
            xy = rng.uniform(size=(npts, 2))
            dist = np.linalg.norm(xy[:, None, :] - xy[None, :, :], axis=-1)
        masses = rng.uniform(0.5, 1.5, size=npts) / npts
        return FiniteSpace(masses, dist)
    if kind == "snowflake":
        base = space_from_spec({"kind": "net", "points_n": npts}, rng)
        return snowflake(base, float(spec.get("theta", 2.0)))
    raise ValueError(f"unknown space kind {kind!r}")


# -- weights -----------------------------------------------------------------


def _smooth_fields(space: FiniteSpace, k: int, rng: np.random.Generator,
                   n_anchors: int = 4) -> np.ndarray:
    """(k, N) random fields, smooth in the metric: Gaussians off anchor points."""
    anchors = rng.choice(space.n, size=min(n_anchors, space.n), replace=False)
    scale = max(space.diameter, 1e-12) / 2.0
    feats = np.exp(-((space.dist[anchors] / scale) ** 2))  # (A, N)
    coef = rng.normal(size=(k, feats.shape[0]))
    g = coef @ feats
    g -= g.mean(axis=1, keepdims=True)
    amp = np.abs(g).max(axis=1, keepdims=True)
    amp[amp == 0] = 1.0
    return g / amp


def identity_weight(space: FiniteSpace, n: int) -> np.ndarray:
    return np.broadcast_to(np.eye(n), (space.n, n, n)).copy()


def power_weight(space: FiniteSpace, a: float) -> np.ndarray:
    """n = 1 weight t(x)^a off the position coordinate."""
    t = position_coordinate(space)
    return (t ** a).reshape(space.n, 1, 1)


def diagonal_weight(space: FiniteSpace, n: int, spread: float,
                    rng: np.random.Generator) -> np.ndarray:
    g = _smooth_fields(space, n, rng)
    W = np.zeros((space.n, n, n))
    diag = np.exp(spread * g)  # (n, N)
    for j in range(n):
        W[:, j, j] = diag[j]
    return W


def rotation_weight(space: FiniteSpace, u: float, omega: float = 1.0) -> np.ndarray:
    """n = 2 rotating-eigenvector weight; eigenvalues u^{+-(2t-1)}."""
    t = position_coordinate(space)
    theta = math.pi * omega * t
    c, s = np.cos(theta), np.sin(theta)
    lam = u ** (2.0 * t - 1.0)
    W = np.empty((space.n, 2, 2))
    W[:, 0, 0] = lam * c**2 + s**2 / lam
    W[:, 1, 1] = lam * s**2 + c**2 / lam
    W[:, 0, 1] = W[:, 1, 0] = (lam - 1.0 / lam) * c * s
    return W


def random_spd_weight(space: FiniteSpace, n: int, spread: float,
                      rng: np.random.Generator) -> np.ndarray:
    """exp of a smooth random symmetric field; eigenvalue spread ~ e^{+-spread}."""
    k = n * (n + 1) // 2
    g = spread * _smooth_fields(space, k, rng)
    S = np.zeros((space.n, n, n))
    row = 0
    for i in range(n):
        for j in range(i, n):
            S[:, i, j] = g[row]
            S[:, j, i] = g[row]
            row += 1
    lam, V = np.linalg.eigh(S)
    return (V * np.exp(lam)[:, None, :]) @ np.swapaxes(V, -1, -2)


def near_degenerate_weight(space: FiniteSpace, n: int, cond: float) -> np.ndarray:
    """Planted ill-conditioned weight: one eigenvalue decays to 1/cond."""
    t = position_coordinate(space)
    lam = np.ones((space.n, n))
    lam[:, 0] = cond ** (-t)
    theta = math.pi * t
    W = np.zeros((space.n, n, n))
    if n == 1:
        W[:, 0, 0] = lam[:, 0]
        return W
    c, s = np.cos(theta), np.sin(theta)
    R = np.zeros((space.n, n, n))
    R[:, 0, 0], R[:, 0, 1], R[:, 1, 0], R[:, 1, 1] = c, -s, s, c
    for j in range(2, n):
        R[:, j, j] = 1.0
    return (R * lam[:, None, :]) @ np.swapaxes(R, -1, -2)


def weight_from_spec(spec: dict, space: FiniteSpace,
                     rng: np.random.Generator) -> np.ndarray:
    kind = spec.get("kind")
    if kind == "identity":
        return identity_weight(space, int(spec.get("n", 1)))
    if kind == "power":
        return power_weight(space, float(spec["a"]))
    if kind == "diagonal":
        return diagonal_weight(space, int(spec.get("n", 2)),
                               float(spec.get("spread", 1.0)), rng)
    if kind == "rotation":
        return rotation_weight(space, float(spec.get("u", 4.0)),
                               float(spec.get("omega", 1.0)))
    if kind == "random-spd":
        return random_spd_weight(space, int(spec.get("n", 2)),
                                 float(spec.get("spread", 1.0)), rng)
    if kind == "near-degenerate":
        return near_degenerate_weight(space, int(spec.get("n", 2)),
                                      float(spec.get("cond", 1e6)))
    raise ValueError(f"unknown weight kind {kind!r}")


def field_from_spec(spec: dict, space: FiniteSpace, n: int,
                    rng: np.random.Generator) -> np.ndarray:
    kind = spec.get("kind", "random")
    if kind == "random":
        return rng.normal(size=(space.n, n))
    if kind == "zero":
        return np.zeros((space.n, n))
    if kind == "ones":
        return np.ones((space.n, n))
    if kind == "e1":
        f = np.zeros((space.n, n))
        f[:, 0] = 1.0
        return f
    if kind == "point-mass":
        f = np.zeros((space.n, n))
        f[int(spec.get("at", 0)), 0] = 1.0
        return f
    raise ValueError(f"unknown field kind {kind!r}")


# -- operators ---------------------------------------------------------------


@dataclass
class OperatorPack:
    name: str
    kernel: np.ndarray
    system: DyadicSystem | None = None
    haar: object = None
    eta: np.ndarray | None = None


def random_eta(haar, bound: float, rng: np.random.Generator) -> np.ndarray:
    """Symbol constant on each child of its cube, values in [-bound, bound]."""
    system = haar.system
    eta = np.zeros((haar.n_functions, haar.space.n))
    for h in haar.functions:
        for child in system.children(h.cube):
            eta[h.index, child.members] = rng.uniform(-bound, bound)
    return eta


def operator_from_spec(spec: dict, space: FiniteSpace,
                       rng: np.random.Generator) -> OperatorPack:
    kind = spec.get("kind", "multiplier")
    if kind == "identity":
        return OperatorPack("identity", np.diag(1.0 / space.masses))
    system = build_dyadic_system(space, delta=float(spec.get("delta", 0.5)),
                                 seed=int(spec.get("seed", 0)))
    haar = build_haar_system(system)
    if kind == "petermichl":
        eta = petermichl_eta(haar)
    elif kind == "multiplier":
        eta = random_eta(haar, float(spec.get("bound", 1.0)), rng)
    else:
        raise ValueError(f"unknown operator kind {kind!r}")
    mult = haar_multiplier(haar, eta)
    return OperatorPack(kind, mult.kernel, system, haar, eta)


def apply_kernel(space: FiniteSpace, kernel: np.ndarray, f: np.ndarray) -> np.ndarray:
    """T f(x) = sum_y m_y K(x, y) f(y); f scalar (N,) or vector (N, n)."""
    return (kernel * space.masses[None, :]) @ f


# -- norms -------------------------------------------------------------------


def lp_norm(space: FiniteSpace, f: np.ndarray, p: float) -> float:
    """(sum m |f|^p)^{1/p}; |f| is the euclidean norm pointwise for fields."""
    f = np.asarray(f, dtype=float)
    mag = np.abs(f) if f.ndim == 1 else np.linalg.norm(f, axis=1)
    if np.isinf(p):
        return float(mag.max(initial=0.0))
    return float((space.masses @ mag ** p) ** (1.0 / p))


def weighted_norm(space: FiniteSpace, W: np.ndarray, p: float, f: np.ndarray) -> float:
    """|| W^{1/p} f ||_{L^p}."""
    g = np.einsum("xij,xj->xi", spd_power(W, 1.0 / p), np.atleast_2d(f.T).T)
    return lp_norm(space, g, p)


def weak_norm_sweep(space: FiniteSpace, g: np.ndarray) -> float:
    """sup_{t>0} t * mu({|g| > t}), exact: max_v v * mu({|g| >= v})."""
    mag = np.abs(g) if g.ndim == 1 else np.linalg.norm(g, axis=1)
    order = np.argsort(-mag, kind="stable")
    cum = np.cumsum(space.masses[order])
    return float((mag[order] * cum).max(initial=0.0))


# -- reports -----------------------------------------------------------------


@dataclass
class BoundReport:
    scenario_id: str
    inequality_id: str
    n: int
    N: int
    p: float
    q: float | None
    r: float | None
    lhs: float
    rhs: float
    weight_constants: dict
    seed: int
    fingerprint: str

    @property
    def ratio(self) -> float:
        if self.lhs == 0.0:
            return 0.0
        return self.lhs / self.rhs

    def row(self) -> list:
        flat = ";".join(f"{k}={repr(v)}" for k, v in sorted(self.weight_constants.items()))
        opt = lambda v: "" if v is None else repr(v)
        return [self.scenario_id, self.inequality_id, self.n, self.N,
                repr(self.p), opt(self.q), opt(self.r),
                repr(self.lhs), repr(self.rhs), repr(self.ratio), flat, self.seed]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ratio"] = self.ratio
        return d


def _fingerprint(space: FiniteSpace, W: np.ndarray, f: np.ndarray, tag: str) -> str:
    h = hashlib.sha256()
    for arr in (space.masses, space.dist, W, f):
        h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
    h.update(tag.encode())
    return h.hexdigest()[:12]


def write_reports_csv(reports: list, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rep in reports:
            writer.writerow(rep.row())


def reports_csv_text(reports: list) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(CSV_COLUMNS)
    for rep in reports:
        writer.writerow(rep.row())
    return buf.getvalue()


# -- instances ---------------------------------------------------------------


@dataclass
class Instance:
    scenario: Scenario
    space: FiniteSpace
    W: np.ndarray
    f: np.ndarray
    op: OperatorPack | None = None


def build_instance(sc: Scenario, need_operator: bool = False) -> Instance:
    rng = np.random.default_rng(np.random.PCG64(sc.seed))
    space = space_from_spec(sc.space, rng)
    W = weight_from_spec(sc.weight, space, rng)
    f = field_from_spec(sc.field_spec, space, W.shape[-1], rng)
    op = operator_from_spec(sc.operator, space, rng) if need_operator else None
    return Instance(sc, space, W, f, op)


# -- verifiers ---------------------------------------------------------------


def verify_maximal_bound(sc: Scenario) -> list[BoundReport]:
    """Twisted maximal bound: constants [A_p]^{1/p} [dual sc-A_infty]^{1/p},
    plus the single-constant [A_q]^{1/p} variant for a q < p."""
    if sc.p <= 1:
        raise ValueError("maximal bound verification needs p > 1")
    inst = build_instance(sc)
    space, W, f, p = inst.space, inst.W, inst.f, sc.p
    n = W.shape[-1]
    Mf = christ_goldberg_maximal(space, W, p, f)
    lhs = lp_norm(space, Mf, p)
    fnorm = lp_norm(space, f, p)

    apc = ap_constant(space, W, p)
    dual = spd_power(W, -1.0 / (p - 1.0))
    pp = p / (p - 1.0)
    scd = sc_ainfty_constant(space, dual, pp)
    rhs = apc ** (1.0 / p) * scd ** (1.0 / p) * fnorm

    q = sc.q if sc.q is not None else 0.5 * (1.0 + p)
    if not 1.0 <= q < p:
        raise ValueError(f"q must lie in [1, p); got q={q}, p={p}")
    aqc = a1_constant(space, W) if q == 1.0 else ap_constant(space, W, q)
    rhs_q = aqc ** (1.0 / p) * fnorm

    fp = _fingerprint(space, W, f, sc.scenario_id)
    consts = {"ap": apc, "sc_dual": scd, "aq": aqc}
    return [
        BoundReport(sc.scenario_id, "maximal-ap", n, space.n, p, q, sc.r,
                    lhs, rhs, consts, sc.seed, fp),
        BoundReport(sc.scenario_id, "maximal-aq", n, space.n, p, q, sc.r,
                    lhs, rhs_q, consts, sc.seed, fp),
    ]


def verify_cz_bound(sc: Scenario) -> list[BoundReport]:
    """Weighted bound for a kernel with finite L^{r'} smoothness constants.

    Both sides use the twisted form: lhs = || W^{1/p} T(W^{-1/p} f) ||_{L^p},
    rhs = constant product * || f ||_{L^p}.  Route one is the three-constant
    A_{p/r} product; route two the (p/(rq))' [A_q] variant when p/q > r.
    """
    r = sc.r if sc.r is not None else 1.0
    p = sc.p
    if not 1.0 <= r < p:
        raise ValueError(f"need 1 <= r < p; got r={r}, p={p}")
    inst = build_instance(sc, need_operator=True)
    space, W, f, op = inst.space, inst.W, inst.f, inst.op
    n = W.shape[-1]

    rprime = np.inf if r == 1.0 else r / (r - 1.0)
    hr, hr_adj = hormander_constants(space, op.kernel, rprime)

    g = np.einsum("xij,xj->xi", spd_power(W, -1.0 / p), f)
    Tg = apply_kernel(space, op.kernel, g)
    lhs = lp_norm(space, np.einsum("xij,xj->xi", spd_power(W, 1.0 / p), Tg), p)
    fnorm = lp_norm(space, f, p)

    pr = p / r
    prp = pr / (pr - 1.0)
    apr = ap_constant(space, W, pr)
    dual = spd_power(W, -(r / p) * prp)
    sc_dual = sc_ainfty_constant(space, dual, prp)
    sc_w = sc_ainfty_constant(space, W, pr)
    pprime = p / (p - 1.0)
    rhs = apr ** (1.0 / p) * sc_dual ** (1.0 / p) * sc_w ** (1.0 / pprime) * fnorm

    q = sc.q if sc.q is not None else 0.5 * (1.0 + pr)
    if not 1.0 <= q < pr:
        raise ValueError(f"q must lie in [1, p/r); got q={q}, p/r={pr}")
    aqc = a1_constant(space, W) if q == 1.0 else ap_constant(space, W, q)
    sc_q = sc_ainfty_constant(space, W, q)
    prq = p / (r * q)
    factor = prq / (prq - 1.0)
    rhs_q = factor * aqc ** (1.0 / p) * sc_q ** (1.0 / pprime) * fnorm

    fp = _fingerprint(space, W, f, sc.scenario_id + op.name)
    consts = {"ap_pr": apr, "sc_dual": sc_dual, "sc_w": sc_w,
              "aq": aqc, "sc_q": sc_q, "hormander": hr, "hormander_adj": hr_adj}
    return [
        BoundReport(sc.scenario_id, "cz-apr", n, space.n, p, q, r,
                    lhs, rhs, consts, sc.seed, fp),
        BoundReport(sc.scenario_id, "cz-aq", n, space.n, p, q, r,
                    lhs, rhs_q, consts, sc.seed, fp),
    ]


def verify_endpoint(sc: Scenario) -> list[BoundReport]:
    """Weak (1,1): sup_t t mu({|W T(W^{-1} f)| > t}) against [A_1][sc-A_infty,1]
    times the L^1 norm; same sweep for the twisted maximal function."""
    inst = build_instance(sc, need_operator=True)
    space, W, f, op = inst.space, inst.W, inst.f, inst.op
    n = W.shape[-1]

    Winv = spd_power(W, -1.0)
    Tg = apply_kernel(space, op.kernel, np.einsum("xij,xj->xi", Winv, f))
    g = np.einsum("xij,xj->xi", W, Tg)
    lhs_t = weak_norm_sweep(space, g)
    Mf = christ_goldberg_maximal(space, W, 1.0, f)
    lhs_m = weak_norm_sweep(space, Mf)

    a1c = a1_constant(space, W)
    scc = sc_ainfty_constant(space, W, 1.0)
    rhs = a1c * scc * lp_norm(space, f, 1.0)

    fp = _fingerprint(space, W, f, sc.scenario_id + op.name)
    consts = {"a1": a1c, "sc_w": scc}
    return [
        BoundReport(sc.scenario_id, "endpoint-cz", n, space.n, 1.0, sc.q, sc.r,
                    lhs_t, rhs, consts, sc.seed, fp),
        BoundReport(sc.scenario_id, "endpoint-maximal", n, space.n, 1.0, sc.q,
                    sc.r, lhs_m, rhs, consts, sc.seed, fp),
    ]


_VERIFIERS = {"maximal": verify_maximal_bound, "cz": verify_cz_bound,
              "endpoint": verify_endpoint}


# -- campaigns ---------------------------------------------------------------

_SPACE_CYCLE = ("line", "net", "snowflake")


def _campaign_scenario(base: Scenario, i: int, child_seed: int,
                       rng: np.random.Generator) -> Scenario:
    """Instance i of a campaign: cycle space kinds and weight families while
    drawing sizes and spreads from the instance stream."""
    n = (1, 2, 3)[i % 3]
    heavy = base.inequality == "cz" or n > 1
    n_max = int(base.space.get("points_n", 48 if not heavy else 32))
    n_min = min(12, n_max)
    npts = int(rng.integers(n_min, n_max + 1))
    space_spec = {"kind": _SPACE_CYCLE[i % len(_SPACE_CYCLE)], "points_n": npts}
    if space_spec["kind"] == "snowflake":
        space_spec["theta"] = float(rng.uniform(1.2, 2.0))

    if n == 1:
        cap = (base.p if base.inequality != "cz" else base.p / (base.r or 1.0)) - 1.0
        a = float(rng.uniform(-0.9, 0.9) * min(cap, 1.0)) if base.p > 1 else \
            float(rng.uniform(-0.5, 0.5))
        weight_spec = {"kind": "power", "a": a}
    elif n == 2:
        if i % 2 == 0:
            weight_spec = {"kind": "rotation", "u": float(rng.uniform(1.5, 6.0)),
                           "omega": float(rng.uniform(0.5, 2.0))}
        else:
            weight_spec = {"kind": "diagonal", "n": 2,
                           "spread": float(rng.uniform(0.3, 1.5))}
    else:
        weight_spec = {"kind": "random-spd", "n": 3,
                       "spread": float(rng.uniform(0.3, 1.2))}

    return dataclasses.replace(
        base, scenario_id=f"{base.scenario_id}#{i:03d}", space=space_spec,
        weight=weight_spec, seed=child_seed, campaign=0)


def run_campaign(base: Scenario, k: int) -> list[BoundReport]:
    """k seeded instances of a scenario, serial, reports in instance order."""
    if base.inequality not in _VERIFIERS:
        raise ValueError(f"campaigns need a verifiable inequality, "
                         f"got {base.inequality!r}")
    verifier = _VERIFIERS[base.inequality]
    children = np.random.SeedSequence(base.seed).spawn(k)
    reports = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        child_seed = int(child.generate_state(1)[0])
        reports.extend(verifier(_campaign_scenario(base, i, child_seed, rng)))
    return reports


def campaign_maxima(reports: list) -> dict:
    out: dict = {}
    for rep in reports:
        out[rep.inequality_id] = max(out.get(rep.inequality_id, 0.0), rep.ratio)
    return out


def reference_campaigns() -> dict:
    """The frozen campaign bases whose maxima are regression-tracked."""
    return {
        "maximal": scenario_from_dict({
            "scenario_id": "ref-maximal", "inequality": "maximal",
            "space": {"kind": "line", "points_n": 48},
            "weight": {"kind": "power", "a": 0.5},
            "p": 2.0, "seed": 7,
        }),
        "cz": scenario_from_dict({
            "scenario_id": "ref-cz", "inequality": "cz",
            "space": {"kind": "line", "points_n": 32},
            "weight": {"kind": "power", "a": 0.5},
            "operator": {"kind": "multiplier"},
            "p": 2.0, "r": 1.0, "seed": 7,
        }),
        "endpoint": scenario_from_dict({
            "scenario_id": "ref-endpoint", "inequality": "endpoint",
            "space": {"kind": "line", "points_n": 48},
            "weight": {"kind": "power", "a": 0.5},
            "operator": {"kind": "multiplier"},
            "seed": 7,
        }),
    }


# -- A2 scaling --------------------------------------------------------------


@dataclass
class A2ScalingEntry:
    exponent: float
    ap2: float
    bound: float


@dataclass
class A2ScalingReport:
    entries: list
    slope: float
    intercept: float
    decades: float
    slope_cap: float

    @property
    def passed(self) -> bool:
        return self.slope <= self.slope_cap

    def to_dict(self) -> dict:
        return {"entries": [dataclasses.asdict(e) for e in self.entries],
                "slope": self.slope, "intercept": self.intercept,
                "decades": self.decades, "slope_cap": self.slope_cap,
                "passed": self.passed}


def verify_a2_scaling(leaves: int = 256,
                      exponents=(0.0, 0.75, 1.5, 2.25, 3.0, 3.75),
                      seed: int = 0, n_random: int = 4,
                      slope_cap: float = 1.5 + 0.1) -> A2ScalingReport:
    """Power-weight ladder against the measured weighted norm of the shift.

    For each exponent the scalar A_2 constant is exact; the operator norm is
    bounded below by the best ratio ||T f||_{L^2(w)} / ||f||_{L^2(w)} over
    indicator/dual-indicator candidates near the singular end plus seeded
    random fields.  The report fits log(bound) against log(constant).
    """
    space = tree_space(leaves)
    system = build_dyadic_system(space)
    haar = build_haar_system(system)
    kernel = haar_multiplier(haar, petermichl_eta(haar)).kernel
    t = position_coordinate(space)
    rng = np.random.default_rng(np.random.PCG64(seed))
    randoms = [rng.normal(size=space.n) for _ in range(n_random)]

    entries = []
    for a in exponents:
        w = t ** a
        ap2 = scalar_ap(space, w, 2.0)
        candidates = list(randoms)
        for k in range(1, int(math.log2(leaves))):
            mask = t < 2.0 ** (-k)
            if not mask.any():
                break
            candidates.append(np.where(mask, 1.0, 0.0))
            candidates.append(np.where(mask, 1.0 / w, 0.0))
        bound = 0.0
        for f in candidates:
            denom = math.sqrt(float(space.masses @ (w * f * f)))
            if denom == 0.0:
                continue
            Tf = apply_kernel(space, kernel, f)
            bound = max(bound, math.sqrt(float(space.masses @ (w * Tf * Tf))) / denom)
        assert bound > 0.0
        entries.append(A2ScalingEntry(float(a), ap2, bound))

    x = np.log([e.ap2 for e in entries])
    y = np.log([e.bound for e in entries])
    slope, intercept = np.polyfit(x, y, 1)
    decades = float((x.max() - x.min()) / math.log(10.0))
    return A2ScalingReport(entries, float(slope), float(intercept), decades,
                           slope_cap)


# -- certificates and the full pipeline --------------------------------------


@dataclass
class Certificate:
    name: str
    passed: bool
    detail: str = ""

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def scenario_constants(sc: Scenario) -> dict:
    """The constants block of a report: space, system, weight, operator."""
    inst = build_instance(sc, need_operator=True)
    space, W, op = inst.space, inst.W, inst.op
    p = sc.p
    out = {
        "N": space.n,
        "n": int(W.shape[-1]),
        "total_mass": space.total_mass,
        "quasi_triangle": quasi_constant(space),
        "doubling": doubling_constants(space)[0],
    }
    if op.system is not None:
        out["delta"] = op.system.delta
        out["C0"] = op.system.C0
        out["c0"] = op.system.c0
        out["n_levels"] = op.system.n_levels
    out["ap"] = a1_constant(space, W) if p == 1.0 else ap_constant(space, W, p)
    out["sc_w"] = sc_ainfty_constant(space, W, p)
    if p > 1.0:
        pp = p / (p - 1.0)
        out["sc_dual"] = sc_ainfty_constant(space, spd_power(W, -1.0 / (p - 1.0)), pp)
    if op.eta is not None:
        ka, kb, _ = eta_regularity_check(op.haar, op.eta,
                                         ka_cap=np.inf, kb_cap=np.inf)
        out["eta_ka"] = ka
        out["eta_kb"] = kb
    rprime = np.inf if (sc.r or 1.0) == 1.0 else sc.r / (sc.r - 1.0)
    hr, hr_adj = hormander_constants(space, op.kernel, rprime)
    out["hormander"] = hr
    out["hormander_adj"] = hr_adj
    return out


def decompose_certificates(sc: Scenario) -> tuple[object, list]:
    """Run the sparse decomposition and check every certificate it promises."""
    inst = build_instance(sc, need_operator=True)
    space, op = inst.space, inst.op
    if op.system is None:
        raise ValueError("decomposition needs a dyadic operator")
    f = inst.f
    dec = sparse_dominate(space, op.system, op.kernel, f, s=sc.s, alpha=sc.alpha)
    certs = []

    cert = certify_sparse(space, dec.cubes, 0.5)
    certs.append(Certificate("sparse-family", cert.feasible,
                             f"eta=0.5 over {len(dec.cubes)} cubes"))

    err = float(np.abs(dec.reconstruct()
                       - apply_kernel(space, op.kernel, f)).max())
    scale = max(float(np.abs(f).max()), 1.0)
    certs.append(Certificate("reconstruction", err <= 1e-7 * scale,
                             f"max error {err:.3e}"))

    worst_norm = 0.0
    sprime = np.inf if sc.s == 1.0 else sc.s / (sc.s - 1.0)
    for node in dec.nodes:
        if node.kernel is None:
            continue
        mem = node.dilation.members
        wloc = space.masses[mem] / space.mu(mem)
        phi = node.kernel[mem]
        nrm = float(np.abs(phi).max(initial=0.0)) if np.isinf(sprime) else \
            float((wloc @ np.abs(phi) ** sprime) ** (1.0 / sprime))
        worst_norm = max(worst_norm, nrm)
    certs.append(Certificate("mixed-norms", worst_norm <= 1.0 + 1e-9,
                             f"max kernel norm {worst_norm!r}"))

    half_ok = True
    worst_frac = 0.0
    for i, node in enumerate(dec.nodes):
        kids = sum(space.mu(m.cube.members) for m in dec.nodes if m.parent == i)
        frac = kids / space.mu(node.cube.members)
        worst_frac = max(worst_frac, frac)
        half_ok &= frac <= 0.5 + 1e-12
    certs.append(Certificate("half-measure", half_ok,
                             f"max child fraction {worst_frac!r}"))

    if op.eta is not None:
        ka_cap = float(sc.operator.get("ka_cap", np.inf))
        kb_cap = float(sc.operator.get("kb_cap", np.inf))
        ka, kb, ok = eta_regularity_check(op.haar, op.eta, ka_cap=ka_cap,
                                          kb_cap=kb_cap)
        certs.append(Certificate("eta-regularity", bool(ok),
                                 f"K_a={ka!r} K_b={kb!r}"))
    return dec, certs


@dataclass
class RunResult:
    exit_code: int
    reports: list
    certificates: list
    summary: dict


def run_scenario(sc: Scenario, out_dir=None, certify: bool = False,
                 campaign: int | None = None) -> RunResult:
    """Full pipeline: constants -> decomposition -> verifications -> files.

    Exit code 0 iff every certificate passes; the first failure is named in
    the summary.  Writes report.csv and summary.json under out_dir.
    """
    reports: list = []
    certs: list = []
    summary: dict = {"scenario_id": sc.scenario_id, "seed": sc.seed,
                     "inequality": sc.inequality}

    if sc.inequality == "a2-scaling":
        rep = verify_a2_scaling(leaves=int(sc.space.get("leaves", 256)),
                                seed=sc.seed)
        summary["a2_scaling"] = rep.to_dict()
        certs.append(Certificate("a2-slope", rep.passed,
                                 f"slope {rep.slope!r} cap {rep.slope_cap!r}"))
    else:
        summary["constants"] = scenario_constants(sc)
        if sc.inequality in ("decompose", "all"):
            try:
                _, certs_d = decompose_certificates(sc)
                certs.extend(certs_d)
            except HypothesisFailed as exc:
                certs.append(Certificate("decompose-hypothesis", False, str(exc)))
        names = [sc.inequality] if sc.inequality in _VERIFIERS else \
            list(_VERIFIERS) if sc.inequality == "all" else []
        k = campaign if campaign is not None else sc.campaign
        for name in names:
            if certify and any(not c.passed for c in certs):
                break
            scn = dataclasses.replace(sc, inequality=name)
            new = run_campaign(scn, k) if k > 0 else _VERIFIERS[name](scn)
            reports.extend(new)

    for rep in reports:
        ok = math.isfinite(rep.ratio) and (rep.rhs > 0.0 or rep.lhs == 0.0)
        certs.append(Certificate(f"finite-ratio:{rep.inequality_id}", ok,
                                 f"{rep.scenario_id} ratio {rep.ratio!r}"))

    failed = [c for c in certs if not c.passed]
    summary["certificates"] = [c.to_dict() for c in certs]
    summary["reports"] = [r.to_dict() for r in reports]
    if reports:
        summary["campaign_maxima"] = campaign_maxima(reports)
    summary["passed"] = not failed
    if failed:
        summary["first_failure"] = failed[0].name

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_reports_csv(reports, os.path.join(out_dir, "report.csv"))
        with open(os.path.join(out_dir, "summary.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(summary, fh, indent=1, sort_keys=True)
            fh.write("\n")

    return RunResult(0 if not failed else 1, reports, certs, summary)
