"""Finite observation schemes: surrogate risks, exponential-loss saddle problems
and the reduction to a likelihood ratio test between the Hellinger-closest pair.

A :class:`DiscreteScheme` is a finite grid of pmfs over ``K`` outcomes, each
labelled -1 (null) or +1 (alternative).  Detectors are arbitrary tabulated
functions of the outcome.  Because ``E_theta[exp(+-h)]`` is linear in the pmf,
a supremum over a grid equals the supremum over its convex hull, so the grid
stands for the convex hypothesis it spans.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logsumexp

from .errors import NonConvergence, ZeroMassOutcome

H_CAP = 30.0
SUBGRAD_ITERS = 50_000
SUBGRAD_TOL = 1e-7
DIRECT_RESTARTS = 16
PMF_TOL = 1e-12


@dataclass(frozen=True)
class DiscreteScheme:
    pmfs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        P = np.array(self.pmfs, dtype=float)
        s = np.array(self.labels)
        if P.ndim != 2 or P.shape[0] < 1 or P.shape[1] < 1:
            raise ValueError(f"pmfs must be an (M, K) array, got shape {P.shape}")
        if s.shape != (P.shape[0],):
            raise ValueError(f"need one label per pmf, got {s.shape} for {P.shape[0]} pmfs")
        if not np.all(np.isfinite(P)) or np.any(P < 0):
            raise ValueError("pmf entries must be finite and nonnegative")
        bad = np.flatnonzero(np.abs(P.sum(axis=1) - 1.0) > PMF_TOL)
        if bad.size:
            raise ValueError(f"pmf {int(bad[0])} sums to {P[bad[0]].sum()!r}, not 1")
        if not np.all(np.isin(s, (-1, 1))):
            raise ValueError("labels must be -1 or +1")
        s = s.astype(int)
        if not (np.any(s == -1) and np.any(s == 1)):
            raise ValueError("both labels -1 and +1 must be present")
        P.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "pmfs", P)
        object.__setattr__(self, "labels", s)

    @property
    def outcomes(self) -> int:
        return self.pmfs.shape[1]

    @property
    def null_indices(self) -> np.ndarray:
        return np.flatnonzero(self.labels == -1)

    @property
    def alt_indices(self) -> np.ndarray:
        return np.flatnonzero(self.labels == 1)

    def flipped(self) -> "DiscreteScheme":
        return DiscreteScheme(self.pmfs, -self.labels)


@dataclass(frozen=True)
class TabulatedDetector:
    """``h(x)`` for each outcome; the test says +1 where ``h >= 0``.

    ``capped`` lists outcomes whose log-ratio was infinite and clipped to
    ``+-H_CAP``.
    """

    values: np.ndarray
    capped: tuple = ()

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ValueError("detector values must be a finite vector")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "capped", tuple(int(i) for i in self.capped))

    def decide(self) -> np.ndarray:
        return np.where(self.values >= 0, 1, -1)

    def __neg__(self):
        return TabulatedDetector(-self.values, self.capped)


class SurrogateLoss(enum.Enum):
    HINGE = "hinge"
    EXP = "exp"
    LOGISTIC = "logistic"

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if self is SurrogateLoss.HINGE:
            return np.maximum(1.0 + u, 0.0)
        if self is SurrogateLoss.EXP:
            return np.exp(u)
        return np.logaddexp(0.0, u)

    def derivative(self, u):
        """A subgradient; for hinge the right derivative at the kink is used."""
        u = np.asarray(u, dtype=float)
        if self is SurrogateLoss.HINGE:
            return (u >= -1.0).astype(float)
        if self is SurrogateLoss.EXP:
            return np.exp(u)
        return expit(u)


def _h(h):
    return h.values if isinstance(h, TabulatedDetector) else np.asarray(h, dtype=float)


def phi_risk(scheme: DiscreteScheme, h, index: int, loss: SurrogateLoss) -> float:
    """``E_theta[phi(-h(X) s(theta))]`` for grid point ``index``."""
    s = scheme.labels[index]
    return float(scheme.pmfs[index] @ loss(-_h(h) * s))


def log_g_exp(scheme: DiscreteScheme, h, index: int) -> float:
    """``log E_theta[exp(-h(X) s(theta))]`` via a weighted log-sum-exp."""
    s = scheme.labels[index]
    return float(logsumexp(-_h(h) * s, b=scheme.pmfs[index]))


def _log_moments(P, z):
    """Row-wise ``log sum_x P[i, x] exp(z[x])`` and the matching softmax weights."""
    with np.errstate(divide="ignore"):
        logw = np.log(P) + z
    m = logw.max(axis=1, keepdims=True)
    e = np.exp(logw - m)
    tot = e.sum(axis=1, keepdims=True)
    return (m + np.log(tot))[:, 0], e / tot


def pair_objective(scheme: DiscreteScheme, h, i0: int, i1: int):
    """``log G(h, theta_i0) + log G(h, theta_i1)`` and its gradient in ``h``."""
    if scheme.labels[i0] != -1 or scheme.labels[i1] != 1:
        raise ValueError("i0 must index a null (-1) point and i1 an alternative (+1) point")
    h = _h(h)
    (l0,), (w0,) = _log_moments(scheme.pmfs[[i0]], h)
    (l1,), (w1,) = _log_moments(scheme.pmfs[[i1]], -h)
    return float(l0 + l1), w0 - w1


def hellinger_affinity(p, q) -> float:
    """``sum_x sqrt(p(x) q(x))``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("pmfs must have the same length")
    return min(float(np.sum(np.sqrt(p * q))), 1.0)


def optimal_detector_for_pair(p0, p1, cap: float | None = None):
    """Minimizer ``h = log(p1/p0)/2`` of the pair objective and its value ``2 log(affinity)``.

    Outcomes where exactly one pmf vanishes make ``h`` unbounded: they raise
    :class:`ZeroMassOutcome` unless ``cap`` is given, in which case they are
    clipped to ``+-cap`` and listed in ``detector.capped``.  Outcomes with no
    mass under either pmf get ``h = 0``.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    z0, z1 = p0 == 0, p1 == 0
    lonely = np.flatnonzero(z0 ^ z1)
    if lonely.size and cap is None:
        raise ZeroMassOutcome(f"outcomes {lonely.tolist()} have mass under only one pmf", lonely)
    h = np.zeros_like(p0)
    both = ~(z0 | z1)
    h[both] = 0.5 * (np.log(p1[both]) - np.log(p0[both]))
    if lonely.size:
        h[z0 & ~z1] = cap
        h[z1 & ~z0] = -cap
    a = hellinger_affinity(p0, p1)
    value = 2.0 * math.log(a) if a > 0 else -math.inf
    return TabulatedDetector(h, capped=lonely), value


def hellinger_closest_pair(scheme: DiscreteScheme):
    """Exhaustive argmax of the affinity over null x alternative grid pairs.

    Ties go to the lexicographically smallest ``(i0, i1)``.
    """
    i0s, i1s = scheme.null_indices, scheme.alt_indices
    R = np.sqrt(scheme.pmfs)
    aff = R[i0s] @ R[i1s].T
    k = int(np.argmax(aff))
    a, b = divmod(k, len(i1s))
    return int(i0s[a]), int(i1s[b]), min(float(aff[a, b]), 1.0)


def affinity_matrix(scheme: DiscreteScheme) -> np.ndarray:
    R = np.sqrt(scheme.pmfs)
    return R[scheme.null_indices] @ R[scheme.alt_indices].T


def closest_pair_is_saddle(scheme: DiscreteScheme, i0: int, i1: int, tol: float = 1e-12) -> bool:
    """Whether grid pair ``(i0, i1)`` is also closest over the convex hulls of the two grids.

    Equivalent to the log-ratio detector of the pair being a saddle point of
    the product problem: every null point must satisfy
    ``E[sqrt(p1/p0)] <= affinity`` and every alternative point
    ``E[sqrt(p0/p1)] <= affinity``.
    """
    p0, p1 = scheme.pmfs[i0], scheme.pmfs[i1]
    if np.any((p0 == 0) ^ (p1 == 0)):
        return False
    h, value = optimal_detector_for_pair(p0, p1)
    a, b = _sup_log_g(scheme, h.values)
    return max(a, b) <= 0.5 * value + tol


def _sup_log_g(scheme, h):
    l0, _ = _log_moments(scheme.pmfs[scheme.null_indices], h)
    l1, _ = _log_moments(scheme.pmfs[scheme.alt_indices], -h)
    return float(l0.max()), float(l1.max())


def product_objective(scheme: DiscreteScheme, h) -> float:
    """``max over grid pairs of log G(h, theta) + log G(h, theta_bar)``."""
    a, b = _sup_log_g(scheme, _h(h))
    return a + b


def balance(scheme: DiscreteScheme, h) -> np.ndarray:
    """Shift ``h`` by the constant that equalizes the two one-sided log-moment suprema.

    The product objective is invariant to constant shifts; the balanced
    representative is the one whose sign test has both one-sided errors
    bounded by ``exp(value / 2)``.
    """
    h = _h(h)
    a, b = _sup_log_g(scheme, h)
    return h + 0.5 * (b - a)


@dataclass(frozen=True)
class ProductSaddle:
    detector: TabulatedDetector
    value: float
    pair: tuple
    lower_bound: float
    iterations: int

    @property
    def gap(self) -> float:
        return self.value - self.lower_bound


def _concave_step(deriv, gmax):
    """Maximizer on [0, gmax] of a concave function given its derivative."""
    if deriv(gmax) >= 0:
        return gmax
    if deriv(0.0) <= 0:
        return 0.0
    return brentq(deriv, 0.0, gmax, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def _fw_block(P, lam, other):
    """One away-step Frank-Wolfe ascent step on ``2 log sum sqrt(p q)`` in one block.

    ``P`` holds the block's pmfs, ``lam`` its mixture weights and ``other`` the
    fixed mixture of the other block.  Returns new weights and the FW gap.
    """
    p = lam @ P
    tiny = 1e-300
    r = np.sqrt(other / np.maximum(p, tiny))
    A = float(np.sum(np.sqrt(p * other)))
    grad = (P @ r) / A
    s = int(np.argmax(grad))
    fw_gap = float(grad[s] - lam @ grad)
    active = np.flatnonzero(lam > 0)
    a = active[np.argmin(grad[active])]
    away_gain = float(lam @ grad - grad[a])
    if fw_gap >= away_gain or lam[a] >= 1.0:
        d = -lam.copy()
        d[s] += 1.0
        gmax = 1.0
    else:
        d = lam.copy()
        d[a] -= 1.0
        gmax = lam[a] / (1.0 - lam[a])
    u = d @ P

    def deriv(g):
        pg = np.maximum(p + g * u, tiny)
        return float(np.sum(u * np.sqrt(other / pg)))

    if fw_gap <= 0:
        return lam, 0.0
    g = _concave_step(deriv, gmax)
    lam = lam + g * d
    lam[lam < 1e-16] = 0.0
    return lam / lam.sum(), fw_gap


def _dual_value(p, q):
    A = float(np.sum(np.sqrt(p * q)))
    return 2.0 * math.log(A) if A > 0 else -math.inf


def _ratio_detector(p, q):
    with np.errstate(divide="ignore"):
        h = 0.5 * (np.log(q) - np.log(p))
    h[(p == 0) & (q == 0)] = 0.0
    return np.clip(h, -H_CAP, H_CAP)


def saddle_solve_product(scheme: DiscreteScheme, tol: float = SUBGRAD_TOL,
                         max_iters: int = SUBGRAD_ITERS) -> ProductSaddle:
    """Minimize ``F(h) = max_{(i0, i1)} log G(h, i0) + log G(h, i1)`` over all tabulated ``h``.

    Primal: subgradient descent with Polyak steps aimed at the best known
    lower bound, keeping the best iterate.  Lower bounds come from the dual
    problem, the maximization of ``2 log affinity(p, q)`` over mixtures ``p``
    of the null pmfs and ``q`` of the alternative pmfs, run by block
    Frank-Wolfe with away steps; every dual iterate also proposes the primal
    candidate ``log(q/p)/2``.  Stops once ``F(h_best) - lower_bound <= tol``.

    The returned detector is balanced (see :func:`balance`) and ``pair`` is the
    grid pair attaining the max at it.
    """
    P0 = scheme.pmfs[scheme.null_indices]
    P1 = scheme.pmfs[scheme.alt_indices]
    lam = np.full(P0.shape[0], 1.0 / P0.shape[0])
    mu = np.full(P1.shape[0], 1.0 / P1.shape[0])

    def F(h):
        l0, w0 = _log_moments(P0, h)
        l1, w1 = _log_moments(P1, -h)
        i, j = int(np.argmax(l0)), int(np.argmax(l1))
        return float(l0[i] + l1[j]), w0[i] - w1[j]

    h = np.zeros(scheme.outcomes)
    f, g = F(h)
    best_h, best_f = h, f
    lb = _dual_value(lam @ P0, mu @ P1)
    it = 0
    for it in range(1, max_iters + 1):
        if best_f - lb <= tol:
            break
        gg = float(g @ g)
        if gg > 0 and f > lb:
            h = h - (f - lb) / gg * g
            f, g = F(h)
            if f < best_f:
                best_h, best_f = h, f
        lam, _ = _fw_block(P0, lam, mu @ P1)
        mu, _ = _fw_block(P1, mu, lam @ P0)
        p, q = lam @ P0, mu @ P1
        lb = max(lb, _dual_value(p, q))
        hd = _ratio_detector(p, q)
        fd, _ = F(hd)
        if fd < best_f:
            best_h, best_f = hd, fd
            if fd < f:
                h, f, g = hd, *F(hd)
    else:
        if best_f - lb > tol:
            state = _finish(scheme, best_h, lb, max_iters)
            raise NonConvergence(f"product saddle solver stopped with gap {best_f - lb:.3g}",
                                 residual=best_f - lb, state=state)
    return _finish(scheme, best_h, lb, it)


def _finish(scheme, h, lb, iterations):
    h = balance(scheme, h)
    l0, _ = _log_moments(scheme.pmfs[scheme.null_indices], h)
    l1, _ = _log_moments(scheme.pmfs[scheme.alt_indices], -h)
    i, j = int(np.argmax(l0)), int(np.argmax(l1))
    capped = np.flatnonzero(np.abs(h) >= H_CAP)
    return ProductSaddle(
        detector=TabulatedDetector(h, capped=capped),
        value=float(l0[i] + l1[j]),
        pair=(int(scheme.null_indices[i]), int(scheme.alt_indices[j])),
        lower_bound=lb, iterations=iterations)


def direct_objective(scheme: DiscreteScheme, h) -> float:
    """``max over all grid points of log G(h, theta)``."""
    return max(_sup_log_g(scheme, _h(h)))


def direct_solve(scheme: DiscreteScheme, restarts: int = DIRECT_RESTARTS, tol: float = SUBGRAD_TOL,
                 iters_per_restart: int = 200, seed: int = 0, warm_start=None):
    """Heuristic for ``min_h max_theta log G(h, theta)`` (not convex-concave).

    Alternates an exact inner maximization over the grid with one normalized
    subgradient step on the active log-moment, followed by the exact
    minimization along constant shifts of ``h``.  The first restart is
    warm-started from the product saddle detector (computed if not supplied),
    the others from seeded Gaussian draws.  Returns the best ``(h, value)`` seen.
    """
    K = scheme.outcomes
    if warm_start is None:
        try:
            warm_start = saddle_solve_product(scheme).detector
        except NonConvergence as err:
            warm_start = err.state.detector
    rng = np.random.default_rng(seed)
    starts = [_h(warm_start)] + [rng.standard_normal(K) for _ in range(max(restarts - 1, 0))]
    P = scheme.pmfs
    s = scheme.labels
    null = s == -1
    best_h, best_v = None, math.inf
    for h in starts:
        for k in range(iters_per_restart):
            lse, w = _log_moments(P, -np.outer(s, h))
            a, b = lse[null].max(), lse[~null].max()
            c = 0.5 * (b - a)
            h = h + c
            lse = lse + np.where(null, c, -c)
            v = 0.5 * float(a + b)
            if v < best_v:
                best_h, best_v = h, v
            i = int(np.argmax(lse))
            g = -s[i] * w[i]
            g = g - g.mean()
            gn = float(np.linalg.norm(g))
            if gn <= tol:
                break
            h = h - g / (gn * math.sqrt(k + 1.0))
    return TabulatedDetector(best_h), best_v


@dataclass(frozen=True)
class SupremaSandwich:
    a: float
    b: float
    sup_single: float
    sup_product_sum: float
    right_holds: bool
    left_holds: Optional[bool]

    @property
    def in_regime(self) -> bool:
        return self.left_holds is not None


def sandwich_product_check(scheme: DiscreteScheme, h, slack: float = 1e-12) -> SupremaSandwich:
    """Compare the single-grid supremum with the product-grid supremum of the log-moments.

    ``a``/``b`` are the suprema over the null/alternative grids.  The right
    inequality ``a + b <= 2 max(a, b)`` always holds; the left one
    ``max(a, b) <= a + b`` needs ``min(a, b) >= 0`` and is only evaluated
    when ``min(a, b) >= -slack``.
    """
    a, b = _sup_log_g(scheme, _h(h))
    single, prod = max(a, b), a + b
    return SupremaSandwich(
        a=a, b=b, sup_single=single, sup_product_sum=prod,
        right_holds=prod <= 2.0 * single,
        left_holds=(single <= prod + slack) if min(a, b) >= -slack else None,
    )


def worst_case_error(scheme: DiscreteScheme, decisions) -> float:
    """``max_theta P_theta(T(X) != s(theta))`` by exact enumeration."""
    T = np.asarray(decisions)
    if T.shape != (scheme.outcomes,) or not np.all(np.isin(T, (-1, 1))):
        raise ValueError("decisions must be a vector of -1/+1 of length K")
    wrong = T[None, :] != scheme.labels[:, None]
    return float(np.max(np.sum(scheme.pmfs * wrong, axis=1)))


@dataclass(frozen=True)
class SurrogateRow:
    loss: SurrogateLoss
    value: float
    worst_case_error: float
    converged: bool
    detector: TabulatedDetector = field(repr=False)


def _surrogate_objective(P0, P1, loss, h):
    r0 = P0 @ loss(h)
    r1 = P1 @ loss(-h)
    i, j = int(np.argmax(r0)), int(np.argmax(r1))
    g = P0[i] * loss.derivative(h) - P1[j] * loss.derivative(-h)
    return float(r0[i] + r1[j]), g


def minimize_surrogate(scheme: DiscreteScheme, loss: SurrogateLoss, tol: float = SUBGRAD_TOL,
                       max_iters: int = SUBGRAD_ITERS, patience: int = 50):
    """Minimize ``max_{i0} G_phi(h, i0) + max_{i1} G_phi(h, i1)`` by subgradient descent.

    Polyak steps towards the level ``best - delta``; ``delta`` is halved
    (and the iterate reset to the best one) after ``patience`` steps without
    an improvement of at least ``delta / 2``.  Converged means ``delta``
    dropped below ``tol`` or a zero subgradient was hit.
    """
    P0 = scheme.pmfs[scheme.null_indices]
    P1 = scheme.pmfs[scheme.alt_indices]
    h = np.zeros(scheme.outcomes)
    f, g = _surrogate_objective(P0, P1, loss, h)
    best_h, best_f = h, f
    delta = max(0.5 * abs(f), 1e-3)
    stall = 0
    converged = False
    for _ in range(max_iters):
        if delta <= tol:
            converged = True
            break
        gg = float(g @ g)
        if gg == 0:
            converged = True
            break
        h = h - (f - (best_f - delta)) / gg * g
        f, g = _surrogate_objective(P0, P1, loss, h)
        if f <= best_f - 0.5 * delta:
            best_h, best_f = h, f
            stall = 0
            continue
        if f < best_f:
            best_h, best_f = h, f
        stall += 1
        if stall >= patience:
            delta *= 0.5
            stall = 0
            h = best_h
            f, g = _surrogate_objective(P0, P1, loss, h)
    return TabulatedDetector(best_h), best_f, converged


def compare_surrogates(scheme: DiscreteScheme, losses: Sequence[SurrogateLoss] = tuple(SurrogateLoss),
                       tol: float = SUBGRAD_TOL, max_iters: int = SUBGRAD_ITERS):
    """One row per loss: minimized product surrogate risk and the 0-1 worst-case error of its sign test."""
    rows = []
    for loss in losses:
        loss = SurrogateLoss(loss)
        h, value, ok = minimize_surrogate(scheme, loss, tol=tol, max_iters=max_iters)
        rows.append(SurrogateRow(loss, value, worst_case_error(scheme, h.decide()), ok, h))
    return rows


def reduction_residual(product_h, pair_h) -> float:
    """``min_c ||product_h - pair_h - c||_inf``: distance up to an additive constant."""
    d = _h(product_h) - _h(pair_h)
    return 0.5 * float(d.max() - d.min())
