"""Randomized evidence campaigns.

Each campaign draws independent random instances (seeded per instance from
the campaign seed), runs the relevant solvers and bound calculators and
returns one :class:`EvidenceRow` per instance.  Failures are recorded in the
row rather than raised.  Output is sorted by instance id, so it does not
depend on how instances were scheduled.

CSV column order per kind is given by :data:`COLUMNS`.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import discrete as ds
from . import gaussian as gs
from .errors import ConvexTestError
from .geometry import Ball, Box, Ellipsoid, Polytope
from .io import csv_text

KINDS = ("gaussian_bounds", "sandwich", "reduction_equiv", "surrogate_table", "suprema_sandwich")

BOUND_SLACK = 1e-12
EQUIV_TOL = 1e-6
UNIQUE_MARGIN = 1e-6

_BOUND_COLS = ["bound_gjn", "bound_exact_reference", "bound_normalized_reference"]

COLUMNS = {
    "gaussian_bounds": [
        "instance", "seed", "dim", "set0", "set1", "rho_star", "epsilon_star", "delta_raw",
        "delta_norm", "iterations", *_BOUND_COLS, "worst_case_risk", "mc0", "stderr0", "mc1",
        "stderr1", "converged", "mc0_within_3se", "mc1_within_3se", "bounds_consistent",
        "violation", "error",
    ],
    "sandwich": [
        "instance", "seed", "base_instance", "dim", "set0", "set1", "rho_star", "rho_tilde",
        "delta_raw", "delta_norm", "epsilon_star", "epsilon_tilde", *_BOUND_COLS, "raw_lower",
        "raw_upper", "norm_lower", "norm_upper", "gjn_holds", "exact_reference_holds",
        "normalized_reference_holds", "violation", "error",
    ],
    "reduction_equiv": [
        "instance", "seed", "outcomes", "params", "rejected", "i0", "i1", "affinity",
        "runner_up_affinity", "pair_value", "product_value", "product_i0", "product_i1",
        "residual", "worst_case_error", "unique", "hull_closest", "equivalent", "pair_matches",
        "exp_moment_bound", "violation", "error",
    ],
    "surrogate_table": [
        "instance", "seed", "outcomes", "params", "product_value", "product_wce", "direct_value",
        "direct_wce", "hinge_value", "hinge_wce", "hinge_converged", "exp_value", "exp_wce",
        "exp_converged", "logistic_value", "logistic_wce", "logistic_converged",
        "exp_value_rel_err", "direct_within_product", "exp_moment_bound", "violation", "error",
    ],
    "suprema_sandwich": [
        "instance", "seed", "outcomes", "params", "a", "b", "sup_single", "sup_product_sum",
        "right_holds", "left_holds", "violation", "error",
    ],
}

# flags that enter the pass rate (None = not evaluated)
FLAGS = {
    "gaussian_bounds": ["converged", "mc0_within_3se", "mc1_within_3se", "bounds_consistent"],
    "sandwich": ["raw_lower", "raw_upper", "norm_lower", "norm_upper", "gjn_holds",
                 "exact_reference_holds", "normalized_reference_holds"],
    "reduction_equiv": ["equivalent", "pair_matches", "exp_moment_bound"],
    "surrogate_table": ["direct_within_product", "exp_moment_bound"],
    "suprema_sandwich": ["right_holds", "left_holds"],
}


@dataclass(frozen=True)
class Campaign:
    kind: str
    n_instances: int
    seed: int = 0
    dims: tuple = (2, 20)
    outcomes: tuple = (2, 8)
    params: tuple = (2, 6)
    mc_samples: int = 20_000
    perturbations_per_instance: int = 10
    tol_delta: float = gs.TOL_DELTA
    max_iters: int = gs.MAX_ITERS
    # reduction_equiv: redraw until the closest pair is unique and closest over the hulls
    condition_regime: bool = False
    # gaussian_bounds: use this scheme for every instance instead of random ones
    problem: Optional[gs.GaussianScheme] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown campaign kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.n_instances < 1:
            raise ValueError("n_instances must be >= 1")
        if not (1 <= self.dims[0] <= self.dims[1]):
            raise ValueError("dims must be a range (lo, hi) with 1 <= lo <= hi")

    def describe(self) -> dict:
        return {"kind": self.kind, "n_instances": self.n_instances, "seed": self.seed,
                "dims": list(self.dims), "outcomes": list(self.outcomes), "params": list(self.params),
                "mc_samples": self.mc_samples, "mc_chunk": gs.MC_CHUNK,
                "perturbations_per_instance": self.perturbations_per_instance,
                "tol_delta": self.tol_delta, "max_iters": self.max_iters,
                "condition_regime": self.condition_regime, "fixed_problem": self.problem is not None}


@dataclass
class EvidenceRow:
    values: dict = field(default_factory=dict)

    @property
    def instance(self) -> int:
        return self.values["instance"]

    def flags(self, kind) -> dict:
        return {k: self.values.get(k) for k in FLAGS[kind]}

    def passed(self, kind) -> bool:
        if self.values.get("error"):
            return False
        return all(v is not False for v in self.flags(kind).values())


def instance_seed(seed: int, instance: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(instance,)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# random instances


def random_covariance(rng, dim, cond_max=1e3):
    """``Q diag(ev) Q^T`` with ``Q`` from a Gram-Schmidt (QR) basis; condition number <= cond_max."""
    Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    cond = 10.0 ** rng.uniform(0.0, math.log10(cond_max))
    ev = np.exp(rng.uniform(0.0, math.log(cond), dim))
    ev[0] = 1.0
    if dim > 1:
        ev[-1] = cond
    S = (Q * ev) @ Q.T
    return 0.5 * (S + S.T)


def random_set(rng, dim, center, radius):
    """A random set of a random type inside the ball(center, radius)."""
    kind = int(rng.integers(4))
    if kind == 0:
        half = rng.uniform(0.1, 1.0, dim)
        half *= radius / np.linalg.norm(half)
        return Box(center - half, center + half)
    if kind == 1:
        return Ball(center, radius * rng.uniform(0.3, 1.0))
    if kind == 2:
        Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        axes = radius * rng.uniform(0.2, 1.0, dim)
        return Ellipsoid(center, (Q * axes**2) @ Q.T)
    m = int(rng.integers(dim + 1, 2 * dim + 3))
    U = rng.standard_normal((m, dim))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    return Polytope(center + radius * U * rng.uniform(0.3, 1.0, (m, 1)))


def random_gaussian_scheme(rng, dim):
    """Two random sets with separated bounding balls and a random covariance."""
    r0, r1 = rng.uniform(0.5, 2.0, 2)
    u = rng.standard_normal(dim)
    u /= np.linalg.norm(u)
    sep = (r0 + r1) * (1.0 + rng.uniform(0.02, 1.0))
    c0 = rng.uniform(-1.0, 1.0, dim)
    return gs.GaussianScheme(random_covariance(rng, dim), random_set(rng, dim, c0, r0),
                             random_set(rng, dim, c0 + sep * u, r1))


def rescaled(scheme, factor):
    return gs.GaussianScheme(scheme.sigma * factor, scheme.theta0, scheme.theta1)


def random_discrete_scheme(rng, outcomes=(2, 8), params=(2, 6)):
    K = int(rng.integers(outcomes[0], outcomes[1] + 1))
    M = int(rng.integers(max(params[0], 2), params[1] + 1))
    m0 = int(rng.integers(1, M))
    conc = rng.uniform(0.5, 3.0)
    P = rng.dirichlet(np.full(K, conc), size=M)
    P = np.maximum(P, 1e-6)
    P /= P.sum(axis=1, keepdims=True)
    return ds.DiscreteScheme(P, [-1] * m0 + [1] * (M - m0))


def _set_name(s):
    return type(s).__name__.lower()


# ---------------------------------------------------------------------------
# per-kind instance runners; each returns a list of row dicts


def _gaussian_bounds(c: Campaign, i: int):
    seed = instance_seed(c.seed, i)
    rng = np.random.default_rng(seed)
    row = {"instance": i, "seed": seed}
    try:
        if c.problem is not None:
            scheme = c.problem
        else:
            scheme = random_gaussian_scheme(rng, int(rng.integers(c.dims[0], c.dims[1] + 1)))
            # rescale sigma so that rho* lands in [0.5, 4]; the closest pair is scale invariant
            sol = gs.solve_closest_pair(scheme, c.tol_delta, c.max_iters)
            scheme = rescaled(scheme, (sol.rho / rng.uniform(0.5, 4.0)) ** 2)
        row.update(dim=scheme.dim, set0=_set_name(scheme.theta0), set1=_set_name(scheme.theta1))
        init = None if c.problem is not None else (sol.theta0_star, sol.theta1_star)
        sol = gs.solve_closest_pair(scheme, c.tol_delta, c.max_iters, init=init)
        cert = sol.certificate
        b = gs.degraded_bounds(sol.rho, sol.rho, cert.delta_raw, cert.delta_norm)["bounds"]
        risk = gs.worst_case_risk(scheme, sol.detector)
        mc0 = gs.mc_error(sol.detector, sol.theta0_star, scheme.sigma, -1, c.mc_samples, seed, stream=0)
        mc1 = gs.mc_error(sol.detector, sol.theta1_star, scheme.sigma, 1, c.mc_samples, seed, stream=1)
        eps = sol.epsilon_star
        bvals = [b["gjn"], b["exact_reference"], b["normalized_reference"]]
        row.update(
            rho_star=sol.rho, epsilon_star=eps, delta_raw=cert.delta_raw, delta_norm=cert.delta_norm,
            iterations=sol.iterations, bound_gjn=bvals[0], bound_exact_reference=bvals[1],
            bound_normalized_reference=bvals[2], worst_case_risk=risk,
            mc0=mc0.estimate, stderr0=mc0.stderr, mc1=mc1.estimate, stderr1=mc1.stderr,
            converged=True,
            mc0_within_3se=abs(mc0.estimate - eps) <= 3 * mc0.stderr,
            mc1_within_3se=abs(mc1.estimate - eps) <= 3 * mc1.stderr,
            bounds_consistent=all(v is not None and v >= eps - BOUND_SLACK for v in bvals)
            and risk <= bvals[0] + BOUND_SLACK,
            violation=max(abs(mc0.estimate - eps) - 3 * mc0.stderr, abs(mc1.estimate - eps) - 3 * mc1.stderr),
        )
    except ConvexTestError as err:
        row.update(converged=False, error=f"{type(err).__name__}: {err}")
    return [row]


def perturb_pair(rng, scheme, sol):
    """Feasible random pair near the exact one: Gaussian step of random size, then projection."""
    scale = max(np.linalg.norm(sol.theta0_star - sol.theta1_star), 1e-12)
    out = []
    for t, s in ((sol.theta0_star, scheme.theta0), (sol.theta1_star, scheme.theta1)):
        size = scale * 10.0 ** rng.uniform(-4.0, 0.0)
        step = rng.standard_normal(t.size) * size / math.sqrt(t.size)
        out.append(s.project(t + step))
    return tuple(out)


def _sandwich(c: Campaign, group: int):
    per = c.perturbations_per_instance
    first = group * per
    ids = range(first, min(first + per, c.n_instances))
    seed = instance_seed(c.seed, group)
    rng = np.random.default_rng(seed)
    base = {"seed": seed, "base_instance": group}
    try:
        scheme = random_gaussian_scheme(rng, int(rng.integers(c.dims[0], c.dims[1] + 1)))
        sol = gs.solve_closest_pair(scheme, c.tol_delta, c.max_iters)
    except ConvexTestError as err:
        return [dict(base, instance=i, error=f"{type(err).__name__}: {err}") for i in ids]
    base.update(dim=scheme.dim, set0=_set_name(scheme.theta0), set1=_set_name(scheme.theta1),
                rho_star=sol.rho, epsilon_star=sol.epsilon_star)
    rows = []
    for i in ids:
        row = dict(base, instance=i)
        try:
            pair = perturb_pair(rng, scheme, sol)
            rep = gs.sandwich_check(scheme, sol, pair)
            det = gs.AffineDetector.from_pair(scheme, *pair)
            eps_t = gs.worst_case_risk(scheme, det)
            bb = gs.degraded_bounds(rep.rho_tilde, rep.rho_star, rep.delta_raw, rep.delta_norm)["bounds"]
            row.update(
                rho_tilde=rep.rho_tilde, delta_raw=rep.delta_raw, delta_norm=rep.delta_norm,
                epsilon_tilde=eps_t, bound_gjn=bb["gjn"], bound_exact_reference=bb["exact_reference"],
                bound_normalized_reference=bb["normalized_reference"],
                raw_lower=rep.raw_lower, raw_upper=rep.raw_upper, norm_lower=rep.norm_lower,
                norm_upper=rep.norm_upper,
                gjn_holds=eps_t <= bb["gjn"] + BOUND_SLACK,
                exact_reference_holds=None if bb["exact_reference"] is None
                else eps_t <= bb["exact_reference"] + BOUND_SLACK,
                normalized_reference_holds=None if rep.delta_norm > 0.5
                else eps_t <= bb["normalized_reference"] + BOUND_SLACK,
                violation=rep.violation(),
            )
        except ConvexTestError as err:
            row["error"] = f"{type(err).__name__}: {err}"
        rows.append(row)
    return rows


def _closest_pair_info(scheme):
    i0, i1, aff = ds.hellinger_closest_pair(scheme)
    A = np.sort(ds.affinity_matrix(scheme).ravel())
    runner = float(A[-2]) if A.size > 1 else -math.inf
    unique = A.size == 1 or aff - runner > UNIQUE_MARGIN
    return i0, i1, aff, runner, unique, ds.closest_pair_is_saddle(scheme, i0, i1)


def _reduction(c: Campaign, i: int):
    seed = instance_seed(c.seed, i)
    rng = np.random.default_rng(seed)
    row = {"instance": i, "seed": seed}
    rejected = 0
    while True:
        scheme = random_discrete_scheme(rng, c.outcomes, c.params)
        i0, i1, aff, runner, unique, hull = _closest_pair_info(scheme)
        if not c.condition_regime or (unique and hull) or rejected >= 10_000:
            break
        rejected += 1
    row.update(outcomes=scheme.outcomes, params=len(scheme.labels), rejected=rejected, i0=i0, i1=i1,
               affinity=aff, runner_up_affinity=runner, unique=unique, hull_closest=hull)
    try:
        sol = ds.saddle_solve_product(scheme)
    except ConvexTestError as err:
        row["error"] = f"{type(err).__name__}: {err}"
        return [row]
    h_pair, v_pair = ds.optimal_detector_for_pair(scheme.pmfs[i0], scheme.pmfs[i1], cap=ds.H_CAP)
    res = ds.reduction_residual(sol.detector, h_pair)
    wce = ds.worst_case_error(scheme, sol.detector.decide())
    regime = unique and hull
    row.update(
        pair_value=v_pair, product_value=sol.value, product_i0=sol.pair[0], product_i1=sol.pair[1],
        residual=res, worst_case_error=wce,
        equivalent=(res <= EQUIV_TOL) if regime else None,
        pair_matches=(sol.pair == (i0, i1)) if regime else None,
        exp_moment_bound=wce <= math.exp(sol.value / 2) + 1e-9,
        violation=(res - EQUIV_TOL) if regime else None,
    )
    return [row]


def _surrogates(c: Campaign, i: int):
    seed = instance_seed(c.seed, i)
    rng = np.random.default_rng(seed)
    scheme = random_discrete_scheme(rng, c.outcomes, c.params)
    row = {"instance": i, "seed": seed, "outcomes": scheme.outcomes, "params": len(scheme.labels)}
    try:
        sol = ds.saddle_solve_product(scheme)
        hd, vd = ds.direct_solve(scheme, seed=seed, warm_start=sol.detector)
        rows = ds.compare_surrogates(scheme)
    except ConvexTestError as err:
        row["error"] = f"{type(err).__name__}: {err}"
        return [row]
    pw = ds.worst_case_error(scheme, sol.detector.decide())
    row.update(product_value=sol.value, product_wce=pw, direct_value=vd,
               direct_wce=ds.worst_case_error(scheme, hd.decide()))
    for r in rows:
        name = r.loss.value
        row.update({f"{name}_value": r.value, f"{name}_wce": r.worst_case_error,
                    f"{name}_converged": r.converged})
    exp_ref = 2.0 * math.exp(sol.value / 2)
    row.update(
        exp_value_rel_err=abs(row["exp_value"] - exp_ref) / exp_ref,
        direct_within_product=vd <= sol.value / 2 + ds.SUBGRAD_TOL,
        exp_moment_bound=pw <= math.exp(sol.value / 2) + 1e-9,
        violation=vd - sol.value / 2,
    )
    return [row]


def _suprema(c: Campaign, i: int):
    seed = instance_seed(c.seed, i)
    rng = np.random.default_rng(seed)
    scheme = random_discrete_scheme(rng, c.outcomes, c.params)
    h = rng.standard_normal(scheme.outcomes) * 10.0 ** rng.uniform(-2.0, 1.0) + rng.normal() * rng.uniform(0, 2)
    r = ds.sandwich_product_check(scheme, h)
    viol = [r.sup_product_sum - 2.0 * r.sup_single]
    if r.left_holds is not None:
        viol.append(r.sup_single - r.sup_product_sum)
    return [{"instance": i, "seed": seed, "outcomes": scheme.outcomes, "params": len(scheme.labels),
             "a": r.a, "b": r.b, "sup_single": r.sup_single, "sup_product_sum": r.sup_product_sum,
             "right_holds": r.right_holds, "left_holds": r.left_holds, "violation": max(viol)}]


_RUNNERS = {
    "gaussian_bounds": _gaussian_bounds,
    "reduction_equiv": _reduction,
    "surrogate_table": _surrogates,
    "suprema_sandwich": _suprema,
}


def run_campaign(campaign: Campaign, workers: int | None = 1) -> list[EvidenceRow]:
    """Run every instance of ``campaign``; rows come back sorted by instance id.

    ``workers=None`` uses ``CONVEXTEST_THREADS`` (or the CPU count).
    """
    c = campaign
    if c.kind == "sandwich":
        per = c.perturbations_per_instance
        units = range((c.n_instances + per - 1) // per)
        fn = _sandwich
    else:
        units = range(c.n_instances)
        fn = _RUNNERS[c.kind]
    workers = gs.default_workers() if workers is None else workers
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            chunks = list(ex.map(lambda u: fn(c, u), units))
    else:
        chunks = [fn(c, u) for u in units]
    rows = [EvidenceRow(r) for chunk in chunks for r in chunk]
    rows.sort(key=lambda r: r.instance)
    return rows


def summarize(campaign: Campaign, rows: list[EvidenceRow]) -> dict:
    kind = campaign.kind
    passed = sum(r.passed(kind) for r in rows)
    viol = [r.values["violation"] for r in rows if r.values.get("violation") is not None]
    out = {"campaign": campaign.describe(), "rows": len(rows),
           "pass_rate": passed / len(rows),
           "worst_violation": max(viol) if viol else None,
           "errors": sum(bool(r.values.get("error")) for r in rows)}
    for flag in FLAGS[kind]:
        vals = [r.values.get(flag) for r in rows]
        ev = [v for v in vals if v is not None]
        out[f"{flag}_evaluated"] = len(ev)
        out[f"{flag}_failures"] = sum(v is False for v in ev)
    if kind == "suprema_sandwich":
        out["out_of_regime_fraction"] = sum(r.values["left_holds"] is None for r in rows) / len(rows)
    if kind == "reduction_equiv":
        out["in_regime"] = sum(r.values.get("equivalent") is not None for r in rows)
        out["rejected_draws"] = sum(r.values.get("rejected", 0) for r in rows)
    return out


def rows_csv(campaign: Campaign, rows: list[EvidenceRow]) -> str:
    return csv_text(COLUMNS[campaign.kind], [r.values for r in rows])
