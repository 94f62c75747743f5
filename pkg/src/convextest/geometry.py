"""Bounded convex sets with Euclidean projection, support and membership oracles.

Four representations are provided: :class:`Box`, :class:`Ball`,
:class:`Ellipsoid` (``{y : (y - c)^T S^{-1} (y - c) <= 1}``) and
:class:`Polytope` (convex hull of a finite vertex list).  All of them are
immutable; the module-level :func:`contains`, :func:`project` and
:func:`support` dispatch to the per-set methods.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import DimensionMismatch, NonConvergence

ELLIPSOID_TOL = 1e-10
FW_TOL = 1e-6  # FW stops at gap <= FW_TOL**2 = 1e-12
MAX_ITERS = 100_000

# relative floor under which polytope distances and FW gaps are round-off
_ROUNDOFF = 1e-13


def _frozen(a, ndim):
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite entries")
    arr.setflags(write=False)
    return arr


def _vector(x, dim):
    x = np.asarray(x, dtype=float)
    if x.shape != (dim,):
        raise DimensionMismatch(f"expected a vector of length {dim}, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo, up = _frozen(self.lower, 1), _frozen(self.upper, 1)
        if lo.shape != up.shape:
            raise DimensionMismatch("lower and upper have different lengths")
        if np.any(lo > up):
            raise ValueError("box requires lower <= upper coordinatewise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)

    @property
    def dim(self):
        return self.lower.size

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    @property
    def radius(self):
        """Radius of a ball around :attr:`center` containing the set."""
        return 0.5 * float(np.linalg.norm(self.upper - self.lower))

    def contains(self, x, tol=0.0):
        x = _vector(x, self.dim)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def project(self, x, tol=ELLIPSOID_TOL):
        return np.clip(_vector(x, self.dim), self.lower, self.upper)

    def support(self, d):
        d = _vector(d, self.dim)
        return float(np.sum(np.where(d > 0, self.upper, self.lower) * d))


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _frozen(self.center, 1))
        r = float(self.radius)
        if not np.isfinite(r) or r < 0:
            raise ValueError("ball radius must be finite and nonnegative")
        object.__setattr__(self, "radius", r)

    @property
    def dim(self):
        return self.center.size

    def contains(self, x, tol=0.0):
        x = _vector(x, self.dim)
        return bool(np.linalg.norm(x - self.center) <= self.radius + tol)

    def project(self, x, tol=ELLIPSOID_TOL):
        x = _vector(x, self.dim)
        v = x - self.center
        n = np.linalg.norm(v)
        if n <= self.radius:
            return x.copy()
        return self.center + v * (self.radius / n)

    def support(self, d):
        d = _vector(d, self.dim)
        return float(d @ self.center + self.radius * np.linalg.norm(d))


@dataclass(frozen=True)
class Ellipsoid:
    """``{y : (y - center)^T shape^{-1} (y - center) <= 1}``; semi-axes are sqrt(eig(shape))."""

    center: np.ndarray
    shape: np.ndarray
    _eigvals: np.ndarray = field(init=False, repr=False, compare=False)
    _eigvecs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        c = _frozen(self.center, 1)
        S = _frozen(self.shape, 2)
        if S.shape != (c.size, c.size):
            raise DimensionMismatch(f"shape must be {c.size}x{c.size}, got {S.shape}")
        if not np.allclose(S, S.T, rtol=0, atol=1e-12 * max(1.0, np.abs(S).max())):
            raise ValueError("ellipsoid shape matrix must be symmetric")
        lam, Q = np.linalg.eigh(0.5 * (S + S.T))
        if lam[0] <= 0:
            raise ValueError("ellipsoid shape matrix must be positive definite")
        lam.setflags(write=False)
        Q.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "shape", S)
        object.__setattr__(self, "_eigvals", lam)
        object.__setattr__(self, "_eigvecs", Q)

    @property
    def dim(self):
        return self.center.size

    @property
    def radius(self):
        return float(np.sqrt(self._eigvals[-1]))

    def _gauge_sq(self, x):
        z = self._eigvecs.T @ (x - self.center)
        return float(np.sum(z * z / self._eigvals))

    def contains(self, x, tol=0.0):
        x = _vector(x, self.dim)
        return self._gauge_sq(x) <= 1.0 + tol

    def project(self, x, tol=ELLIPSOID_TOL, max_iters=MAX_ITERS):
        """Euclidean projection by Newton's method on the constraint multiplier.

        With ``z`` the rotated offset and ``lam`` the eigenvalues of the shape
        matrix, the projection is ``lam * z / (lam + mu)`` where ``mu >= 0``
        solves ``q(mu) = sum(lam z^2 / (lam + mu)^2) = 1``.  Newton is applied to
        ``1/sqrt(q) - 1``, which is concave and nearly linear in ``mu``, so the
        iterates increase monotonically from ``mu = 0``.
        """
        x = _vector(x, self.dim)
        lam = self._eigvals
        z = self._eigvecs.T @ (x - self.center)
        a = lam * z * z
        if np.sum(a / (lam * lam)) <= 1.0:
            return x.copy()
        mu = 0.0
        for _ in range(max_iters):
            t = lam + mu
            q = np.sum(a / (t * t))
            if abs(q - 1.0) <= tol:
                break
            dq = -2.0 * np.sum(a / (t * t * t))
            step = (1.0 - q ** -0.5) / (-0.5 * q ** -1.5 * dq)
            if step <= 0:  # round-off: q is already as close to 1 as it gets
                break
            mu += step
        else:
            raise NonConvergence("ellipsoid projection did not converge", residual=abs(q - 1.0))
        y = lam * z / (lam + mu)
        # Newton approaches from outside; pull the point onto the boundary
        g = float(np.sum(y * y / lam))
        if g > 1.0:
            y = y / np.sqrt(g)
        return self.center + self._eigvecs @ y

    def support(self, d):
        d = _vector(d, self.dim)
        return float(d @ self.center + np.sqrt(max(d @ self.shape @ d, 0.0)))


@dataclass(frozen=True)
class Polytope:
    """Convex hull of ``vertices`` (one vertex per row)."""

    vertices: np.ndarray

    def __post_init__(self):
        V = _frozen(self.vertices, 2)
        if V.shape[0] < 1:
            raise ValueError("polytope needs at least one vertex")
        object.__setattr__(self, "vertices", V)

    @property
    def dim(self):
        return self.vertices.shape[1]

    @property
    def center(self):
        return self.vertices.mean(axis=0)

    @property
    def radius(self):
        return float(np.linalg.norm(self.vertices - self.center, axis=1).max())

    def _scale(self, x):
        return max(1.0, float(np.abs(self.vertices).max()), float(np.abs(x).max()))

    def contains(self, x, tol=0.0):
        x = _vector(x, self.dim)
        p = self.project(x)
        return bool(np.linalg.norm(p - x) <= tol + _ROUNDOFF * self._scale(x))

    def project(self, x, tol=FW_TOL, max_iters=MAX_ITERS):
        x = _vector(x, self.dim)
        p, _ = project_polytope_weights(self.vertices, x, tol=tol, max_iters=max_iters)
        return p

    def support(self, d):
        d = _vector(d, self.dim)
        return float(np.max(self.vertices @ d))


ConvexSet = Union[Box, Ball, Ellipsoid, Polytope]


def _affine_minimizer(V, x):
    """Weights summing to one minimizing ||w @ V - x|| over the affine hull of V's rows."""
    v0 = V[0]
    if V.shape[0] == 1:
        return np.ones(1)
    B = V[1:] - v0
    alpha, *_ = np.linalg.lstsq(B.T, x - v0, rcond=None)
    return np.concatenate(([1.0 - alpha.sum()], alpha))


def project_polytope_weights(V, x, tol=FW_TOL, max_iters=MAX_ITERS, weights=None):
    """Project ``x`` onto conv(rows of ``V``); return the point and its simplex weights.

    Frank-Wolfe with away steps and exact line search on
    ``||w @ V - x||^2``.  After every step the active vertices are corrected
    towards their affine-hull minimizer (Wolfe's minor cycle), which makes the
    iteration terminate on the optimal face instead of zig-zagging towards it.
    Stops once the FW duality gap is <= ``tol**2`` (so the point is within
    ``tol`` of the true projection) or has reached round-off level.

    ``weights`` warm-starts the iteration.
    """
    V = np.asarray(V, dtype=float)
    m = V.shape[0]
    if weights is None:
        w = np.zeros(m)
        w[np.argmin(np.sum((V - x) ** 2, axis=1))] = 1.0
    else:
        w = np.array(weights, dtype=float)
    scale = max(1.0, float(np.abs(V).max()), float(np.abs(x).max()))
    floor = _ROUNDOFF * scale * scale
    target = max(tol * tol, floor)
    gap = np.inf
    for _ in range(max_iters):
        p = w @ V
        r = p - x
        g = 2.0 * (V @ r)
        s = int(np.argmin(g))
        gap = float(w @ g - g[s])
        if gap <= target:
            return p, w
        active = np.flatnonzero(w > 0)
        a = active[np.argmax(g[active])]
        away_gain = g[a] - w @ g
        if gap >= away_gain or w[a] >= 1.0:
            d = -w.copy()
            d[s] += 1.0
            gmax = 1.0
        else:
            d = w.copy()
            d[a] -= 1.0
            gmax = w[a] / (1.0 - w[a])
        u = d @ V
        uu = float(u @ u)
        gamma = gmax if uu == 0 else min(gmax, max(0.0, -float(r @ u) / uu))
        w = w + gamma * d
        w[w < 1e-15] = 0.0
        w /= w.sum()
        w = _minor_cycles(V, x, w)
    raise NonConvergence("polytope projection did not converge", residual=gap, state=w)


def _minor_cycles(V, x, w):
    active = np.flatnonzero(w > 0)
    base = float(np.sum((w @ V - x) ** 2))
    while active.size > 1:
        y = _affine_minimizer(V[active], x)
        if np.all(y > 0):
            cand = np.zeros_like(w)
            cand[active] = y
            if np.sum((cand @ V - x) ** 2) <= base:
                return cand
            return w
        # move towards y until the first weight hits zero, then drop it
        wa = w[active]
        neg = y <= 0
        t = np.min(wa[neg] / (wa[neg] - y[neg]))
        wa = wa + t * (y - wa)
        wa[wa < 1e-15] = 0.0
        cand = np.zeros_like(w)
        cand[active] = wa
        cand /= cand.sum()
        val = float(np.sum((cand @ V - x) ** 2))
        if val > base:
            return w
        w, base = cand, val
        active = np.flatnonzero(w > 0)
    return w


def _check(s, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (s.dim,):
        raise DimensionMismatch(f"set has dimension {s.dim}, vector has shape {x.shape}")
    return x


def contains(s: ConvexSet, x, tol: float = 0.0) -> bool:
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    return s.contains(_check(s, x), tol)


def project(s: ConvexSet, x, tol: float | None = None) -> np.ndarray:
    x = _check(s, x)
    if tol is None:
        return s.project(x)
    if tol <= 0:
        raise ValueError("tol must be positive")
    return s.project(x, tol=tol)


def support(s: ConvexSet, direction) -> float:
    return s.support(_check(s, direction))


def set_center(s: ConvexSet) -> np.ndarray:
    """A point of ``s`` (used as a solver starting point)."""
    return np.array(s.center, dtype=float)
