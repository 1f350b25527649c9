"""Optimal discrete mechanisms under l1 uncertainty about the prior.

Every constraint of the robust design polytope acts on a single output column,
and all columns share the same polyhedral cone ``K``; the only coupling is the
row-sum equality. A mechanism therefore is a set of columns ``theta_r * r``
with ``r`` on extreme rays of ``K`` and ``sum_r theta_r r = 1``. The vertices
of the polytope are the basic solutions of that system, and since sub-linear
utilities are positively homogeneous, the utility of such a vertex is linear in
``theta``. :func:`vertex_search` enumerates rays by active sets, then either
walks all bases or solves the equivalent LP over ray weights.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np
from scipy.optimize import linprog

from pmlkit.errors import InfeasibleError, InputError, NumericalError
from pmlkit.leakage import Mechanism, sensitivity_region
from pmlkit.prob import Distribution

EXHAUSTIVE_MAX_N = 6
FIXED_ESTIMATE_MAX_N = 16
MAX_BASES = 2_000_000
MEMBERSHIP_TOL = 1e-9
RENORMALIZE_TOL = 1e-9
PATHS = ("closed_form", "vertex", "fixed_estimate")


class Utility(Protocol):
    """Sub-convex utility: a sum over output columns of a sub-linear function."""

    name: str

    def column(self, cols: np.ndarray, prior: np.ndarray) -> np.ndarray:
        """Evaluate the per-column term on ``cols`` of shape ``(..., N)``."""

    def __call__(self, mech: Mechanism, prior: Distribution) -> float: ...


class MutualInformationUtility:
    name = "mutual_information"

    def column(self, cols, prior):
        cols = np.asarray(cols, dtype=float)
        mass = cols @ prior
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(cols > 0, cols / mass[..., None], 1.0)
            terms = np.where(cols > 0, prior * cols * np.log(ratio), 0.0)
        return terms.sum(axis=-1)

    def __call__(self, mech, prior):
        return float(self.column(mech.matrix.T, prior.probs).sum())


class CustomUtility:
    """Wraps a user-supplied sub-linear column function ``mu(col, prior)``.

    Homogeneity and convexity are the caller's responsibility; vertex search is
    only exact for functions with both properties.
    """

    def __init__(self, mu: Callable[[np.ndarray, np.ndarray], float], name: str = "custom_sublinear"):
        self.mu = mu
        self.name = name

    def column(self, cols, prior):
        cols = np.asarray(cols, dtype=float)
        flat = cols.reshape(-1, cols.shape[-1])
        vals = np.array([self.mu(c, prior) for c in flat], dtype=float)
        return vals.reshape(cols.shape[:-1])

    def __call__(self, mech, prior):
        return float(self.column(mech.matrix.T, prior.probs).sum())


MUTUAL_INFORMATION = MutualInformationUtility()


def mutual_information(mech: Mechanism, prior: Distribution) -> float:
    """``I(X; Y)`` in nats for input law ``prior``."""
    return MUTUAL_INFORMATION(mech, prior)


@dataclass(frozen=True)
class DesignProblem:
    """Find a mechanism that is eps-PML for every prior in ``B_beta(estimate)``.

    ``beta`` may equal ``2 * min(estimate)``; the ball then touches the simplex
    boundary, which is how randomized response arises at ``beta = 1``.
    """

    estimate: Distribution
    beta: float
    eps: float
    utility: str = "mutual_information"

    def __post_init__(self):
        if self.eps < 0:
            raise InputError(f"eps must be non-negative, got {self.eps}")
        if self.beta < 0:
            raise InputError(f"beta must be non-negative, got {self.beta}")
        if not self.estimate.full_support:
            raise InputError("the estimate has a zero-mass symbol; smooth it before designing")
        if self.beta > 2 * self.estimate.p_min:
            raise InfeasibleError(
                f"beta = {self.beta} exceeds 2 * min estimate = {2 * self.estimate.p_min}"
            )
        if self.utility not in ("mutual_information", "custom_sublinear"):
            raise InputError(f"unknown utility {self.utility!r}")

    @property
    def n(self) -> int:
        return self.estimate.alphabet_size


@dataclass(frozen=True)
class ConstraintSet:
    """Linear description of the robust mechanism polytope over ``vec(P)``.

    Variables are the ``N * N`` entries in row-major order. ``a_ub @ x <= 0``
    holds one row per ``(i, i', j)``; ``a_eq @ x == 1`` are the row sums;
    ``x >= 0`` is implicit. ``column_cone`` is the ``N^2 x N`` block shared by
    all columns: ``column_cone @ col <= 0``.
    """

    n: int
    eps: float
    beta: float
    eps_prime: float
    estimate: np.ndarray
    a_ub: np.ndarray
    a_eq: np.ndarray
    column_cone: np.ndarray

    @property
    def b_ub(self) -> np.ndarray:
        return np.zeros(self.a_ub.shape[0])

    @property
    def b_eq(self) -> np.ndarray:
        return np.ones(self.n)

    @property
    def counts(self) -> tuple[int, int, int]:
        """(inequalities, equalities, non-negativity bounds)."""
        return self.a_ub.shape[0], self.a_eq.shape[0], self.n * self.n


def eps_prime_transform(eps: float, beta: float) -> float:
    """Design level at the estimate that certifies eps over ``B_beta``: ``log(e^eps / (1 + beta e^eps / 2))``."""
    if eps < 0:
        raise InputError(f"eps must be non-negative, got {eps}")
    if not 0 <= beta < 2:
        raise InputError(f"beta must lie in [0, 2), got {beta}")
    return eps - math.log1p(beta / 2 * math.exp(eps))


def _cone_rows(estimate: np.ndarray, beta: float, eps_prime: float) -> np.ndarray:
    n = estimate.size
    scale = math.exp(eps_prime)
    rows = np.empty((n * n, n))
    for i in range(n):
        for i2 in range(n):
            row = -scale * estimate.copy()
            row[i] += 1.0
            row[i2] -= scale * beta / 2
            rows[i * n + i2] = row
    return rows


def lccp_constraints(problem: DesignProblem) -> ConstraintSet:
    n = problem.n
    est = problem.estimate.probs
    eps_prime = eps_prime_transform(problem.eps, problem.beta)
    cone = _cone_rows(est, problem.beta, eps_prime)
    a_ub = np.zeros((n**3, n * n))
    for i in range(n):
        for i2 in range(n):
            for j in range(n):
                a_ub[(i * n + i2) * n + j, j::n] = cone[i * n + i2]
    a_eq = np.kron(np.eye(n), np.ones(n))
    return ConstraintSet(n, problem.eps, problem.beta, eps_prime, est.copy(), a_ub, a_eq, cone)


@dataclass(frozen=True)
class Membership:
    ok: bool
    max_violation: float

    def __bool__(self):
        return self.ok


def membership_check(mech: Mechanism, problem: DesignProblem, tol: float = MEMBERSHIP_TOL) -> Membership:
    """Whether ``mech`` lies in the robust polytope of ``problem``."""
    n = problem.n
    w = mech.matrix
    if w.shape[0] != n or w.shape[1] > n:
        raise InputError(f"mechanism shape {w.shape} does not fit an alphabet of size {n}")
    if w.shape[1] < n:
        w = np.hstack([w, np.zeros((n, n - w.shape[1]))])
    cs = lccp_constraints(problem)
    x = w.reshape(-1)
    viol = max(
        float((cs.a_ub @ x).max()),
        float(np.abs(cs.a_eq @ x - 1.0).max()),
        float((-x).max()),
    )
    viol = max(viol, 0.0)
    return Membership(viol <= tol, viol)


def optimal_binary_mechanism(p1: float, beta: float, eps: float) -> Mechanism:
    """Closed-form optimum for a binary estimate ``(p1, 1 - p1)`` and radius ``beta``.

    Valid for ``0 <= eps <= -log(p1 - beta/2)``. If ``p1 < 0.5`` the problem is
    solved for the relabelled estimate and both labels are swapped back.
    """
    if not 0 < p1 < 1:
        raise InputError(f"p1 must lie in (0, 1), got {p1}")
    if p1 < 0.5:
        flipped = optimal_binary_mechanism(1 - p1, beta, eps)
        return Mechanism(flipped.matrix[::-1, ::-1], dict(flipped.meta, p1=p1))
    if beta < 0 or beta > 2 * (1 - p1):
        raise InfeasibleError(f"beta = {beta} must lie in [0, 2 * (1 - p1)] = [0, {2 * (1 - p1)}]")
    if eps < 0:
        raise InputError(f"eps must be non-negative, got {eps}")
    low = p1 - beta / 2
    if low > 0 and eps > -math.log(low) + 1e-12:
        raise InfeasibleError(f"eps = {eps} exceeds the first-region limit -log(p1 - beta/2) = {-math.log(low)}")
    e = math.exp(eps)
    norm = 1 + beta * e
    w = np.array(
        [
            [e * (1 - p1 + beta / 2), 1 - e * (1 - p1 - beta / 2)],
            [1 - e * (p1 - beta / 2), e * (p1 + beta / 2)],
        ]
    ) / norm
    w = np.clip(w, 0.0, 1.0)
    meta = {"eps": eps, "beta": beta, "eps_prime": eps_prime_transform(eps, beta) if beta < 2 else None,
            "path": "closed_form", "p1": p1}
    return Mechanism(w, meta)


def k_singular_mechanism(n: int, k: int) -> Mechanism:
    """Circulant 0/(1/k) doubly stochastic matrix; row ``i`` covers outputs ``i, ..., i+k-1`` (mod n)."""
    if n < 2 or k < 1 or n % k:
        raise InputError(f"k = {k} must be a divisor of n = {n}")
    w = np.zeros((n, n))
    for i in range(n):
        w[i, (i + np.arange(k)) % n] = 1.0 / k
    return Mechanism(w, {"path": "k_singular", "k": k})


def _dedupe_rays(rays: np.ndarray) -> np.ndarray:
    if rays.size == 0:
        return rays
    rays = rays / rays.sum(axis=1, keepdims=True)
    keys = np.round(rays, 9)
    _, first = np.unique(keys, axis=0, return_index=True)
    out = rays[np.sort(first)]
    order = np.lexsort(np.round(out, 9).T[::-1])
    return out[order]


def _fixed_estimate_rays(estimate: np.ndarray, eps_prime: float) -> np.ndarray:
    """Extreme rays of ``{c >= 0 : c_i <= e^eps' * <estimate, c>}``.

    ``N - 1`` coordinates sit at 0 or at the cap; the remaining one is fixed by
    the normalisation ``<estimate, c> = 1``.
    """
    n = estimate.size
    cap = math.exp(eps_prime)
    labels = (np.arange(2 ** (n - 1))[:, None] >> np.arange(n - 1)) & 1
    found = []
    for free in range(n):
        others = np.delete(np.arange(n), free)
        c = np.zeros((labels.shape[0], n))
        c[:, others] = labels * cap
        c[:, free] = (1.0 - c[:, others] @ estimate[others]) / estimate[free]
        ok = (c[:, free] >= -1e-12) & (c[:, free] <= cap * (1 + 1e-12))
        c = c[ok]
        c[:, free] = np.clip(c[:, free], 0.0, cap)
        found.append(c)
    return _dedupe_rays(np.vstack(found))


def _active_set_rays(cone: np.ndarray, chunk: int = 100_000) -> np.ndarray:
    """Extreme rays of ``{c : cone @ c <= 0, c >= 0}`` by enumerating ``N-1`` active rows."""
    n = cone.shape[1]
    rows = np.vstack([cone, -np.eye(n)])
    rows = rows / np.linalg.norm(rows, axis=1, keepdims=True)
    found = []
    combos = itertools.combinations(range(rows.shape[0]), n - 1)
    while True:
        block = np.array(list(itertools.islice(combos, chunk)), dtype=np.intp)
        if block.size == 0:
            break
        a = rows[block]
        _, s, vt = np.linalg.svd(a)
        r = vt[:, -1, :]
        keep = s[:, -1] > 1e-9
        r = r[keep]
        r = r * np.where(r.sum(axis=1) < 0, -1.0, 1.0)[:, None]
        feasible = (r @ rows.T).max(axis=1) <= 1e-10
        r = r[feasible & (r.sum(axis=1) > 1e-12)]
        if r.size:
            found.append(r)
    if not found:
        return np.zeros((0, n))
    return _dedupe_rays(np.clip(np.vstack(found), 0.0, None))


def cone_rays(constraints: ConstraintSet) -> np.ndarray:
    """Extreme rays of the shared column cone, normalised to unit sum."""
    if constraints.beta == 0:
        return _fixed_estimate_rays(constraints.estimate, constraints.eps_prime)
    n = constraints.n
    # rows with i == i' are implied by the others, so they never define a ray
    off_diagonal = [i * n + i2 for i in range(n) for i2 in range(n) if i != i2]
    return _active_set_rays(constraints.column_cone[off_diagonal])


def _canonical(columns: np.ndarray, n: int) -> np.ndarray:
    """Pad to ``n`` columns and order them by row of their maximum, then descending."""
    cols = [c for c in columns.T if c.max() > 0]
    def key(c):
        top = int(np.flatnonzero(c >= c.max() - 1e-12)[0])
        return (top, tuple(-np.round(c, 12)))
    cols.sort(key=key)
    w = np.zeros((n, n))
    if cols:
        w[:, : len(cols)] = np.column_stack(cols)
    return w


def _assemble(rays: np.ndarray, weights: np.ndarray, n: int) -> np.ndarray:
    use = weights > 1e-13
    w = _canonical((rays[use] * weights[use, None]).T, n)
    sums = w.sum(axis=1)
    drift = float(np.abs(sums - 1.0).max())
    if drift > RENORMALIZE_TOL:
        raise NumericalError(f"assembled mechanism rows drift from 1 by {drift:.3g}")
    return w / sums[:, None]


def _bases(rays: np.ndarray, n: int, chunk: int = 50_000):
    """Yield ``(subsets, weights)`` for every feasible basis of ``rays.T @ theta = 1``."""
    combos = itertools.combinations(range(rays.shape[0]), n)
    ones = np.ones(n)
    while True:
        block = np.array(list(itertools.islice(combos, chunk)), dtype=np.intp)
        if block.size == 0:
            return
        mats = np.transpose(rays[block], (0, 2, 1))
        dets = np.abs(np.linalg.det(mats))
        block, mats = block[dets > 1e-12], mats[dets > 1e-12]
        if block.size == 0:
            continue
        theta = np.linalg.solve(mats, np.broadcast_to(ones, (mats.shape[0], n))[..., None])[..., 0]
        ok = (theta >= -1e-11).all(axis=1)
        if ok.any():
            yield block[ok], np.clip(theta[ok], 0.0, None)


def enumerate_vertices(constraints: ConstraintSet, max_bases: int = MAX_BASES) -> list[Mechanism]:
    """All vertices of the mechanism polytope (up to output relabelling)."""
    n = constraints.n
    rays = cone_rays(constraints)
    if math.comb(rays.shape[0], n) > max_bases:
        raise InputError(f"{rays.shape[0]} rays give too many bases to enumerate for N = {n}")
    seen = {}
    for block, theta in _bases(rays, n):
        for subset, weights in zip(block, theta):
            w = _assemble(rays[subset], weights, n)
            seen.setdefault(tuple(np.round(w, 10).ravel()), w)
    return [Mechanism(w) for _, w in sorted(seen.items(), reverse=True)]


def _solve_ray_lp(rays: np.ndarray, values: np.ndarray, n: int) -> np.ndarray:
    res = linprog(-values, A_eq=rays.T, b_eq=np.ones(n), bounds=(0, None), method="highs-ds")
    if res.status != 0:
        raise InfeasibleError(f"ray LP failed: {res.message}")
    return res.x


def vertex_search(
    constraints: ConstraintSet,
    utility: Utility = MUTUAL_INFORMATION,
    estimate: Distribution | None = None,
    max_bases: int = MAX_BASES,
) -> Mechanism:
    """Maximise a sub-convex utility over the vertices of ``constraints``.

    All bases are walked when there are at most ``max_bases`` of them; ties are
    broken towards the lexicographically largest canonical matrix. Otherwise the
    equivalent LP over ray weights is solved with the dual simplex, which also
    ends on a vertex.
    """
    n = constraints.n
    if n > EXHAUSTIVE_MAX_N:
        raise InputError(f"exhaustive mode limited to N ≤ {EXHAUSTIVE_MAX_N}, got N = {n}")
    prior = constraints.estimate if estimate is None else estimate.probs
    rays = cone_rays(constraints)
    if rays.shape[0] == 0:
        raise InfeasibleError("the constraint cone has no extreme rays")
    values = utility.column(rays, prior)
    if math.comb(rays.shape[0], n) <= max_bases:
        best_val, best = -math.inf, []
        for block, theta in _bases(rays, n):
            scores = (theta * values[block]).sum(axis=1)
            top = scores.max()
            if top > best_val + 1e-12:
                best_val, best = top, []
            if top >= best_val - 1e-12:
                for idx in np.flatnonzero(scores >= best_val - 1e-12):
                    best.append(_assemble(rays[block[idx]], theta[idx], n))
        if not best:
            raise InfeasibleError("no feasible basis found")
        w = max(best, key=lambda m: tuple(np.round(m, 12).ravel()))
        search = "bases"
    else:
        w = _assemble(rays, _solve_ray_lp(rays, values, n), n)
        search = "ray_lp"
    return Mechanism(w, {"search": search, "n_rays": int(rays.shape[0])})


def _optimize_fixed(problem: DesignProblem, utility: Utility) -> Mechanism:
    n = problem.n
    cs = lccp_constraints(problem)
    if n <= EXHAUSTIVE_MAX_N:
        return vertex_search(cs, utility, problem.estimate)
    if n > FIXED_ESTIMATE_MAX_N:
        raise InputError(f"fixed-estimate design is limited to N <= {FIXED_ESTIMATE_MAX_N}, got N = {n}")
    rays = cone_rays(cs)
    if rays.shape[0] == 0:
        raise InfeasibleError("no mechanism satisfies the transformed guarantee")
    values = utility.column(rays, problem.estimate.probs)
    w = _assemble(rays, _solve_ray_lp(rays, values, n), n)
    return Mechanism(w, {"search": "ray_lp", "n_rays": int(rays.shape[0])})


def _rank_one(n: int) -> np.ndarray:
    return np.full((n, n), 1.0 / n)


def _finish(w: np.ndarray, problem: DesignProblem, path: str, extra: dict | None = None) -> Mechanism:
    meta = {
        "eps": problem.eps,
        "beta": problem.beta,
        "eps_prime": eps_prime_transform(problem.eps, problem.beta),
        "path": path,
    }
    meta.update(extra or {})
    mech = Mechanism(w, meta)
    check = membership_check(mech, problem)
    if not check.ok:
        raise NumericalError(f"designed mechanism violates its constraints by {check.max_violation:.3g}")
    return mech


def design_via_fixed_estimate(problem: DesignProblem, utility: Utility = MUTUAL_INFORMATION) -> Mechanism:
    """Optimise over mechanisms that are eps'-PML at the estimate itself.

    That set is contained in the robust polytope, so the result is valid for
    the whole ball but may lose utility against :func:`design_vertex`.
    """
    eps_prime = eps_prime_transform(problem.eps, problem.beta)
    if eps_prime < 0:
        raise InfeasibleError(
            f"eps' = {eps_prime:.6g} < 0: no mechanism is eps'-PML at the estimate (eps = {problem.eps}, beta = {problem.beta})"
        )
    extra = {"note": "optimal over a subset of the robust polytope"}
    if eps_prime == 0:
        w = _rank_one(problem.n)
    else:
        fixed = DesignProblem(problem.estimate, 0.0, eps_prime, problem.utility)
        found = _optimize_fixed(fixed, utility)
        w = found.matrix
        extra.update(found.meta)
    return _finish(w, problem, "fixed_estimate", extra)


def design_vertex(problem: DesignProblem, utility: Utility = MUTUAL_INFORMATION) -> Mechanism:
    """Optimise over the full robust polytope by vertex search (``N <= 6``)."""
    if problem.n > EXHAUSTIVE_MAX_N:
        raise InputError(f"exhaustive mode limited to N ≤ {EXHAUSTIVE_MAX_N}, got N = {problem.n}")
    if problem.eps == 0:
        return _finish(_rank_one(problem.n), problem, "vertex")
    found = vertex_search(lccp_constraints(problem), utility, problem.estimate)
    return _finish(found.matrix, problem, "vertex", found.meta)


def design_closed_form(problem: DesignProblem) -> Mechanism:
    if problem.n != 2:
        raise InputError(f"closed_form mode needs a binary alphabet, got N = {problem.n}")
    p1 = float(problem.estimate.probs[0])
    mech = optimal_binary_mechanism(p1, problem.beta, problem.eps)
    return _finish(mech.matrix, problem, "closed_form")


def design(problem: DesignProblem, mode: str, utility: Utility = MUTUAL_INFORMATION) -> Mechanism:
    if mode == "closed_form":
        return design_closed_form(problem)
    if mode == "vertex":
        return design_vertex(problem, utility)
    if mode == "fixed_estimate":
        return design_via_fixed_estimate(problem, utility)
    raise InputError(f"unknown design mode {mode!r}; choose one of {', '.join(PATHS)}")


def zero_pattern_violations(mech: Mechanism, eps: float, prior: Distribution) -> int:
    """Number of columns with more than ``k - 1`` zeros, ``k`` the region of ``eps``."""
    k = sensitivity_region(eps, prior)
    zeros = (mech.matrix <= 1e-12).sum(axis=0)
    live = mech.matrix.max(axis=0) > 0
    return int((zeros[live] > k - 1).sum())
