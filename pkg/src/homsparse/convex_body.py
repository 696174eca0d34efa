"""Convex-body averages of vector fields and their ellipsoid geometry.

The s-average of a vector field f over a cell Q is the symmetric convex body

    K = { avg_Q phi f dmu : ||phi||_{L^{s'}(Q, dmu/mu(Q))} <= 1 },

whose support function is exactly computable:

    h(u) = ( avg_Q |<f, u>|^s dmu )^{1/s},        1/s + 1/s' = 1.

Everything else is derived from h.  Membership tests search for separating
directions (a separator found is an exact certificate that x lies outside).
John ellipsoids are inscribed: E <= K <= sqrt(r)(1+1e-4) E with r the
dimension of the span of f over Q -- exact for s = 2, where K itself is the
second-moment ellipsoid, and solved as a small maximal-volume-inscribed-
ellipsoid program with measured certification otherwise.  Kernel
representations invert the averaging map with minimal dual norm, which is the
constructive ("witness") form of membership used by the sparse decomposition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .errors import EllipsoidNotConverged, InfeasibleRepresentation
from .space import FiniteSpace

_SEED = 0xB0D7
_JOHN_SLACK = 1e-4


def _body_data(space: FiniteSpace, members: np.ndarray, f: np.ndarray):
    members = np.asarray(members, dtype=bool)
    F = np.atleast_2d(np.asarray(f, dtype=float))[members]
    m = space.masses[members]
    return F, m / m.sum()


def support_function(space: FiniteSpace, members: np.ndarray, f: np.ndarray,
                     s: float, U: np.ndarray) -> np.ndarray:
    """h(u) = (avg |<f,u>|^s)^{1/s} for each row u of U; exact."""
    if s < 1:
        raise ValueError("s must be >= 1")
    F, w = _body_data(space, members, f)
    U = np.atleast_2d(np.asarray(U, dtype=float))
    inner = np.abs(F @ U.T)  # (B, K)
    return (w @ inner**s) ** (1.0 / s)


@dataclass(frozen=True)
class MembershipResult:
    inside: bool
    ratio: float       # max over found directions of <x,u>/h(u); <=1 inside
    direction: np.ndarray  # maximizing direction; a separator when ratio > 1

    def __bool__(self) -> bool:
        return self.inside


def membership(space: FiniteSpace, members: np.ndarray, f: np.ndarray, s: float,
               x: np.ndarray, tol: float = 1e-9) -> MembershipResult:
    """Search for a separating direction of x against the body.

    ratio > 1 certifies x outside (the direction is an exact separator,
    both sides being closed-form evaluations); ratio <= 1 means no separator
    was found over the grid + ascent search.  Exact in the scalar case.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n == 1:
        h = support_function(space, members, f, s, np.ones((1, 1)))[0]
        ratio = np.abs(x[0]) / h if h > 0 else (np.inf if abs(x[0]) > 0 else 0.0)
        return MembershipResult(ratio <= 1 + tol, float(ratio), np.ones(1))

    def ratio_of(U):
        U = np.atleast_2d(U)
        num = U @ x
        den = support_function(space, members, f, s, U)
        out = np.full(len(U), -np.inf)
        pos = den > 1e-300
        out[pos] = num[pos] / den[pos]
        out[~pos & (np.abs(num) > tol * np.linalg.norm(x))] = np.inf
        return out

    rng = np.random.default_rng(_SEED)
    grid = rng.normal(size=(max(4 * n * n, 128), n))
    grid /= np.linalg.norm(grid, axis=1, keepdims=True)
    pieces = [grid, np.eye(n), -np.eye(n)]
    if np.linalg.norm(x) > 0:
        pieces.append(x[None] / np.linalg.norm(x))
    grid = np.vstack(pieces)
    vals = ratio_of(grid)
    best = float(np.max(vals))
    u = grid[int(np.argmax(vals))]
    if np.isfinite(best):
        for start in np.argsort(vals)[::-1][:4]:
            res = scipy.optimize.minimize(
                lambda v: -ratio_of(v[None])[0] if np.linalg.norm(v) > 1e-12 else 0.0,
                grid[start], method="Nelder-Mead",
                options={"maxfev": 100 * n, "xatol": 1e-7, "fatol": 1e-13})
            if -res.fun > best:
                best, u = float(-res.fun), res.x / np.linalg.norm(res.x)
    return MembershipResult(best <= 1 + tol, best, u)


@dataclass(frozen=True)
class JohnEllipsoid:
    """E = {B v : |v| <= 1}; axes rows are principal directions."""

    B: np.ndarray
    axes: np.ndarray
    semi_axes: np.ndarray

    @property
    def rank(self) -> int:
        return int((self.semi_axes > 0).sum())

    def support(self, U: np.ndarray) -> np.ndarray:
        return np.linalg.norm(np.atleast_2d(U) @ self.B.T, axis=1)

    def gauge(self, x: np.ndarray, tol: float = 1e-9) -> float:
        """min {t : x in t E}; inf when x leaves the span of E."""
        x = np.asarray(x, dtype=float)
        comps = self.axes @ x
        scale = max(np.linalg.norm(x), 1e-300)
        off = comps[self.semi_axes == 0]
        if off.size and np.abs(off).max() > tol * scale:
            return np.inf
        live = self.semi_axes > 0
        return float(np.linalg.norm(comps[live] / self.semi_axes[live]))


def _mvie_symmetric(U: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Max-volume B (SPD) with |B u_k| <= h_k: inscribed ellipsoid of the slab
    polytope {x : |<x, u_k>| <= h_k}.  Small convex program via SLSQP."""
    r = U.shape[1]
    tri = np.tril_indices(r)

    def unpack(z):
        B = np.zeros((r, r))
        B[tri] = z
        return B + np.tril(B, -1).T

    def neg_logdet(z):
        sign, ld = np.linalg.slogdet(unpack(z))
        return np.inf if sign <= 0 else -ld

    def cons(z):
        return h - np.linalg.norm(U @ unpack(z).T, axis=1)

    z0 = np.zeros(tri[0].size)
    diag_pos = tri[0] == tri[1]
    z0[diag_pos] = 0.5 * h.min()
    res = scipy.optimize.minimize(
        neg_logdet, z0, method="SLSQP",
        constraints=[{"type": "ineq", "fun": cons}],
        options={"maxiter": 400, "ftol": 1e-12})
    B = unpack(res.x)
    lam, V = np.linalg.eigh(B)
    if lam.min() <= 0:
        raise EllipsoidNotConverged("inscribed ellipsoid collapsed")
    # rescale onto the feasible side in case SLSQP ends a hair outside
    ratio = (np.linalg.norm(U @ B.T, axis=1) / h).max()
    if ratio > 1.0:
        B = B / (ratio * (1 + 1e-12))
    return B


def john_ellipsoid(space: FiniteSpace, members: np.ndarray, f: np.ndarray,
                   s: float) -> JohnEllipsoid:
    """Inscribed ellipsoid with E <= K <= sqrt(rank) (1 + 1e-4) E.

    s = 2 is a closed form (K is the second-moment ellipsoid; equality both
    sides).  Otherwise: restrict to the span of f over the cell, take the
    outer polytope from exact support values on a direction grid, inscribe the
    maximal ellipsoid, deflate by the measured worst overshoot against h, and
    certify the sqrt(rank) cover on a probe grid.  Degenerate directions get
    semi-axis 0.
    """
    F, w = _body_data(space, members, f)
    n = F.shape[1]
    second = (w[:, None] * F).T @ F
    lam, V = np.linalg.eigh(second)
    lam = np.clip(lam, 0.0, None)

    if s == 2:
        B = (V * np.sqrt(lam)) @ V.T
        order = np.argsort(np.sqrt(lam))[::-1]
        return JohnEllipsoid(B, V.T[order], np.sqrt(lam)[order])

    if lam.max() == 0.0:  # f vanishes on the cell: the body is {0}
        return JohnEllipsoid(np.zeros((n, n)), np.eye(n), np.zeros(n))
    live = lam > lam.max() * 1e-26
    r = int(live.sum())
    Vr = V[:, live]  # (n, r) basis of the span
    Fr = F @ Vr

    rng = np.random.default_rng(_SEED)
    U = rng.normal(size=(max(6 * r * r, 96), r))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    U = np.vstack([U, np.eye(r)])

    def h_r(Ur):
        return (w @ np.abs(Fr @ np.atleast_2d(Ur).T) ** s) ** (1.0 / s)

    Br = _mvie_symmetric(U, h_r(U))

    probe = rng.normal(size=(max(10 * r * r, 256), r))
    probe /= np.linalg.norm(probe, axis=1, keepdims=True)
    probe = np.vstack([probe, U])

    def overshoot(u):
        return np.linalg.norm(Br @ u) / h_r(u)[0]

    ratios = np.linalg.norm(probe @ Br.T, axis=1) / h_r(probe)
    lam_hat, worst_dir = float(ratios.max()), probe[int(ratios.argmax())]
    res = scipy.optimize.minimize(
        lambda v: -overshoot(v) if np.linalg.norm(v) > 1e-12 else 0.0,
        worst_dir, method="Nelder-Mead",
        options={"maxfev": 120 * r, "xatol": 1e-7, "fatol": 1e-13})
    lam_hat = max(lam_hat, float(-res.fun))
    if lam_hat > 1.0:
        Br = Br / (lam_hat * (1 + 1e-9))

    cover = (h_r(probe) / (np.sqrt(r) * np.linalg.norm(probe @ Br.T, axis=1))).max()
    if cover > 1.0 + _JOHN_SLACK:
        raise EllipsoidNotConverged(
            f"inscribed ellipsoid covers only within sqrt(r)*{cover:.6f}")

    B = Vr @ Br @ Vr.T
    lamB, VB = np.linalg.eigh(0.5 * (B + B.T))
    lamB = np.clip(lamB, 0.0, None)
    order = np.argsort(lamB)[::-1]
    return JohnEllipsoid(B, VB.T[order], lamB[order])


def axis_membership_criterion(ell: JohnEllipsoid, x: np.ndarray, kappa: float,
                              tol: float = 1e-9) -> tuple[bool, np.ndarray]:
    """Sufficient per-axis test for x in kappa * K.

    If |<x, u_i>| <= (kappa / r) sigma_i on every live axis (and x has no
    component off the span), then x is a convex combination of points of
    kappa E <= kappa K.  Returns (ok, per-axis ratios against that budget).
    """
    x = np.asarray(x, dtype=float)
    comps = ell.axes @ x
    live = ell.semi_axes > 0
    r = max(int(live.sum()), 1)
    scale = max(np.linalg.norm(x), 1e-300)
    if (~live).any() and np.abs(comps[~live]).max() > tol * scale:
        return False, np.full(x.size, np.inf)
    ratios = np.zeros(x.size)
    ratios[live] = np.abs(comps[live]) / ((kappa / r) * ell.semi_axes[live])
    return bool((ratios <= 1.0 + tol).all()), ratios


@dataclass(frozen=True)
class Representation:
    """Kernels k[x_i, :] with avg_Q k[i] f dmu/mu = target_i, minimal dual norm."""

    kernels: np.ndarray  # (K, N), zero off the cell
    norms: np.ndarray    # (K,) values ||k[i]||_{L^{s'}(dmu/mu(Q))}
    s: float


def _apply_avg(F, w, phi):
    return (w * phi) @ F


def kernel_representation(space: FiniteSpace, members: np.ndarray, f: np.ndarray,
                          s: float, targets: np.ndarray,
                          feas_tol: float = 1e-8) -> Representation:
    """Minimal-L^{s'} densities phi with avg(phi f) = target, per target row.

    s = 2 is the least-squares/moment closed form.  s in (1, 2) u (2, inf):
    smooth concave dual maximized by L-BFGS-B (warm-started at the moment
    solution) followed by a moment-space equality polish.  s = 1 (dual norm
    sup): the minimal sup-norm level is a closed form in the scalar case and a
    direction search otherwise; among densities at that level the returned one
    has minimal L^2 (Huber-dual smoothing).  Raises InfeasibleRepresentation
    when a target leaves the span of f (no density exists).
    """
    if s < 1:
        raise ValueError("s must be >= 1")
    members = np.asarray(members, dtype=bool)
    F, w = _body_data(space, members, f)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    K, n = targets.shape
    sprime = np.inf if s == 1 else s / (s - 1.0)

    second = (w[:, None] * F).T @ F
    lam2, V2 = np.linalg.eigh(second)
    live = lam2 > max(lam2.max(), 0) * 1e-13
    pinv = (V2[:, live] / lam2[live]) @ V2[:, live].T

    kernels = np.zeros((K, space.n))
    norms = np.zeros(K)
    for i, v in enumerate(targets):
        resid = v - second @ (pinv @ v)
        if np.linalg.norm(resid) > feas_tol * max(np.linalg.norm(v), 1e-300):
            raise InfeasibleRepresentation(
                i, f"target leaves the span of f (residual {np.linalg.norm(resid):.2e})")
        if np.linalg.norm(v) == 0.0:
            phi = np.zeros(F.shape[0])
        elif s == 2:
            phi = F @ (pinv @ v)
        elif s == 1:
            phi = _rep_sup_norm(F, w, v)
        else:
            phi = _rep_smooth(F, w, v, s, pinv)
        kernels[i, members] = phi
        if np.isinf(sprime):
            norms[i] = np.abs(phi).max(initial=0.0)
        else:
            norms[i] = float((w @ np.abs(phi) ** sprime) ** (1.0 / sprime))
    return Representation(kernels, norms, s)


def _rep_smooth(F, w, v, s, pinv, max_rounds=3):
    """Dual ascent for min ||phi||_{s'} s.t. avg(phi f) = v, 1 < s' < inf.

    Optimal phi = sign(<lam, f>) |<lam, f>|^{s-1}; the dual is smooth and
    concave, so L-BFGS-B from the moment warm start converges fast; a final
    least-squares step in moment space restores the equality to solver
    precision.
    """

    def negdual(lam):
        t = F @ lam
        val = (w @ np.abs(t) ** s) / s - lam @ v
        grad = _apply_avg(F, w, np.sign(t) * np.abs(t) ** (s - 1.0)) - v
        return val, grad

    lam0 = pinv @ v
    scale = np.linalg.norm(F @ lam0)
    if scale > 0 and s != 2:  # |<lam,f>|^(s-1) should match the moment phi's size
        lam0 = lam0 * scale ** ((2.0 - s) / (s - 1.0))
    res = scipy.optimize.minimize(negdual, lam0, jac=True, method="L-BFGS-B",
                                  options={"maxiter": 500, "ftol": 1e-15, "gtol": 1e-12})
    lam = res.x
    t = F @ lam
    phi = np.sign(t) * np.abs(t) ** (s - 1.0)
    for _ in range(max_rounds):
        gap = v - _apply_avg(F, w, phi)
        if np.linalg.norm(gap) <= 1e-12 * max(np.linalg.norm(v), 1e-300):
            break
        phi = phi + F @ (pinv @ gap)
    return phi


def _rep_sup_norm(F, w, v):
    """Minimal sup-norm density, then minimal L^2 among those (s = 1)."""
    n = F.shape[1]
    if n == 1:
        denom = w @ np.abs(F[:, 0])
        t = abs(v[0]) / denom
        return t * np.sign(v[0]) * np.sign(F[:, 0])

    def level(lam):
        den = w @ np.abs(F @ lam)
        return (lam @ v) / den if den > 1e-300 else -np.inf

    rng = np.random.default_rng(_SEED)
    grid = rng.normal(size=(max(8 * n * n, 128), n))
    grid = np.vstack([grid, np.eye(n), [v]])
    vals = np.array([level(g) for g in grid])
    t_star, best = float(vals.max()), grid[int(vals.argmax())]
    res = scipy.optimize.minimize(lambda g: -level(g), best, method="Nelder-Mead",
                                  options={"maxfev": 200 * n, "fatol": 1e-13})
    t_star = max(t_star, float(-res.fun))
    t = t_star * (1 + 1e-6)

    def neghuber(lam):
        z = (F @ lam) / t
        inner = np.abs(z) <= 1.0
        hub = np.where(inner, 0.5 * z * z, np.abs(z) - 0.5)
        val = t * t * (w @ hub) - lam @ v
        phi = t * np.clip(z, -1.0, 1.0)
        return val, _apply_avg(F, w, phi) - v

    res = scipy.optimize.minimize(neghuber, np.zeros(n), jac=True, method="L-BFGS-B",
                                  options={"maxiter": 2000, "ftol": 1e-16, "gtol": 1e-14})
    phi = t * np.clip((F @ res.x) / t, -1.0, 1.0)
    free = np.abs(phi) < t * (1 - 1e-9)
    gap = v - _apply_avg(F, w, phi)
    if np.linalg.norm(gap) > 1e-13 and free.any():
        Ff, wf = F[free], w[free]
        Gf = (wf[:, None] * Ff).T @ Ff
        lamf, Vf = np.linalg.eigh(Gf)
        livef = lamf > max(lamf.max(), 0) * 1e-13
        if livef.any():
            pinvf = (Vf[:, livef] / lamf[livef]) @ Vf[:, livef].T
            phi[free] += Ff @ (pinvf @ gap)
    return phi
