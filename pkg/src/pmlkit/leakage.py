"""Pointwise maximal leakage of discrete mechanisms and its behaviour over l1 balls.

For a row-stochastic matrix ``W`` (rows are inputs, columns are outputs) and a
full-support prior ``P``, the leakage to outcome ``y`` is

    l(X -> y) = log( max_x W[x, y] / P_Y(y) ),   P_Y = P @ W,

and ``eps_min`` is its maximum over outcomes with positive output mass.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from pmlkit.errors import InfeasibleError, InputError, InsufficientSamplesError
from pmlkit.prob import (
    PROB_TOL,
    Distribution,
    UncertaintySet,
    beta_star,
    l1_distance,
    log_two_pow_minus_two,
    sample_priors_in_ball,
)

OUTPUT_MASS_FLOOR = 1e-300
REGION_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Mechanism:
    """Row-stochastic matrix ``P_{Y|X}``; ``matrix[i, j] = P(Y = y_j | X = x_i)``."""

    matrix: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.array(self.matrix, dtype=float)
        if w.ndim != 2 or w.shape[0] < 2 or w.shape[1] < 1:
            raise InputError(f"mechanism matrix must be N x M with N >= 2, got shape {w.shape}")
        if not np.all(np.isfinite(w)) or w.min() < -PROB_TOL or w.max() > 1 + PROB_TOL:
            raise InputError("mechanism entries must lie in [0, 1]")
        drift = np.abs(w.sum(axis=1) - 1.0).max()
        if drift > PROB_TOL:
            raise InputError(f"mechanism rows must sum to 1 (max deviation {drift:.3g})")
        w = np.clip(w, 0.0, 1.0)
        w.setflags(write=False)
        object.__setattr__(self, "matrix", w)

    @property
    def n_inputs(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.matrix.shape[1]

    def to_dict(self) -> dict:
        out = {"matrix": [[float(v) for v in row] for row in self.matrix]}
        if self.meta:
            out["meta"] = dict(self.meta)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "Mechanism":
        if "matrix" not in data:
            raise InputError("mechanism JSON needs a 'matrix' field")
        return cls(data["matrix"], dict(data.get("meta", {})))

    @classmethod
    def from_json(cls, text: str) -> "Mechanism":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class LeakageProfile:
    per_outcome: np.ndarray
    support: tuple[int, ...]
    eps_min: float
    output_dist: np.ndarray
    excluded_outcomes: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {
            "per_outcome": [float(v) for v in self.per_outcome],
            "eps_min": float(self.eps_min),
            "excluded_outcomes": list(self.excluded_outcomes),
        }


class Provenance(str, enum.Enum):
    EXACT = "exact"
    L1_BOUND = "l1_bound"
    LIPSCHITZ_BOUND = "lipschitz_bound"
    COMPOSED = "composed"


@dataclass(frozen=True)
class PrivacyGuarantee:
    eps: float
    delta: float
    provenance: Provenance

    def __post_init__(self):
        if not self.eps >= 0:
            raise InputError(f"eps must be non-negative, got {self.eps}")
        if not 0.0 <= self.delta <= 1.0:
            raise InputError(f"delta must lie in [0, 1], got {self.delta}")
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    def to_dict(self) -> dict:
        return {"eps": float(self.eps), "delta": float(self.delta), "provenance": self.provenance.value}

    @classmethod
    def from_dict(cls, data: dict) -> "PrivacyGuarantee":
        return cls(data["eps"], data["delta"], data["provenance"])


def _require_full_support(prior: Distribution, n: int | None = None) -> None:
    if n is not None and prior.alphabet_size != n:
        raise InputError(f"prior has {prior.alphabet_size} symbols, mechanism has {n} inputs")
    if not prior.full_support:
        raise InputError("leakage is only defined for full-support priors")


def pml_per_outcome(mech: Mechanism, prior: Distribution) -> LeakageProfile:
    """Leakage to every outcome with positive probability under ``prior``."""
    _require_full_support(prior, mech.n_inputs)
    w = mech.matrix
    p_y = prior.probs @ w
    supported = p_y > OUTPUT_MASS_FLOOR
    if not supported.any():
        raise InputError("the mechanism produces no outcome with positive probability")
    col_max = w.max(axis=0)
    ell = np.maximum(np.log(col_max[supported]) - np.log(p_y[supported]), 0.0)
    return LeakageProfile(
        per_outcome=ell,
        support=tuple(int(j) for j in np.flatnonzero(supported)),
        eps_min=float(ell.max()),
        output_dist=p_y,
        excluded_outcomes=tuple(int(j) for j in np.flatnonzero(~supported)),
    )


def eps_min(mech: Mechanism, prior: Distribution) -> float:
    return pml_per_outcome(mech, prior).eps_min


def eps_min_batch(matrix: np.ndarray, priors: np.ndarray) -> np.ndarray:
    """``eps_min`` for each row of ``priors`` (shape ``n x N``), vectorised."""
    matrix = np.asarray(matrix, dtype=float)
    p_y = np.atleast_2d(priors) @ matrix
    col_max = matrix.max(axis=0)
    with np.errstate(divide="ignore"):
        ell = np.where(p_y > OUTPUT_MASS_FLOOR, np.log(col_max) - np.log(np.maximum(p_y, OUTPUT_MASS_FLOOR)), -np.inf)
    return np.maximum(ell.max(axis=1), 0.0)


def output_divergence(mech: Mechanism, p: Distribution, q: Distribution) -> float:
    """``D_inf(P_Y || Q_Y)`` for the output laws induced by priors ``p`` and ``q``."""
    p_y = p.probs @ mech.matrix
    q_y = q.probs @ mech.matrix
    mask = p_y > OUTPUT_MASS_FLOOR
    if np.any(q_y[mask] <= 0):
        return math.inf
    return float(np.log(p_y[mask] / q_y[mask]).max())


def eps_max(prior: Distribution) -> float:
    """Leakage level satisfied by every mechanism: ``-log min_x P(x)``."""
    if not prior.full_support:
        raise InputError("eps_max is infinite for priors with a zero-mass symbol")
    return -math.log(prior.p_min)


def region_thresholds(prior: Distribution) -> np.ndarray:
    """``[eps_0, eps_1, ..., eps_{N-1}]`` with ``eps_0 = 0``."""
    desc = np.sort(prior.probs)[::-1]
    heads = np.cumsum(desc)[:-1]  # heads[t-1] = mass of the t largest symbols
    n = prior.alphabet_size
    eps_k = [-math.log(heads[n - k - 1]) for k in range(1, n)]
    return np.array([0.0] + eps_k)


def privacy_region(eps: float, prior: Distribution) -> int:
    """Index ``k`` with ``eps`` in ``[eps_{k-1}, eps_k)``.

    Values within ``REGION_TOL`` of a threshold are assigned to the region that
    starts there.
    """
    _require_full_support(prior)
    if eps < 0:
        raise InputError(f"eps must be non-negative, got {eps}")
    thresholds = region_thresholds(prior)
    for k in range(1, thresholds.size):
        if eps < thresholds[k] - REGION_TOL:
            return k
    raise InputError(f"eps = {eps} is not below eps_max = {thresholds[-1]}")


def sensitivity_region(eps: float, prior: Distribution) -> int:
    """Like :func:`privacy_region`, but maps ``eps >= eps_max`` to ``N``.

    Every mechanism satisfies ``eps_max``-PML, so the ``k > 1`` sensitivity
    bound still applies there.
    """
    try:
        return privacy_region(eps, prior)
    except InputError:
        if eps < 0:
            raise
        return prior.alphabet_size


def worst_case_prior(mech: Mechanism, center: Distribution, beta: float, outcome_j: int) -> Distribution:
    """Prior in ``B_beta(center)`` that minimises ``P_Y(outcome_j)``.

    Mass ``beta/2`` is taken from the lowest-index input attaining the largest
    entry of the column and put on the lowest-index input attaining the
    smallest entry. If that input holds too little mass and the maximum is
    tied, the removal is spread over the tied inputs in proportion to their
    prior mass, which lowers ``P_Y`` by the same amount.
    """
    _require_full_support(center, mech.n_inputs)
    if beta < 0:
        raise InputError(f"beta must be non-negative, got {beta}")
    if beta == 0:
        return center
    col = mech.matrix[:, outcome_j]
    top = int(np.argmax(col))
    bottom = int(np.argmin(col))
    q = center.probs.copy()
    if beta / 2 < q[top]:
        q[top] -= beta / 2
    else:
        tied = np.isclose(col, col[top], rtol=0.0, atol=1e-15)
        pool = center.probs[tied].sum()
        if beta / 2 >= pool:
            raise InfeasibleError(
                f"beta = {beta} would empty the inputs holding the column maximum (mass {pool})"
            )
        q[tied] -= (beta / 2) * center.probs[tied] / pool
    q[bottom] += beta / 2
    return Distribution(q)


def l1_sensitivity_bound(eps: float, beta: float, region_k: int, p_min: float, *, strict: bool = True) -> float:
    """Upper bound on the leakage increase over ``B_beta(P)`` for an eps-PML mechanism.

    ``region_k`` is the privacy region of ``eps`` under the reference prior and
    ``p_min`` its smallest mass. With ``strict`` the ball must stay inside the
    simplex interior (``beta < 2 p_min``); the bound remains valid but loses
    tightness when this is relaxed.
    """
    if beta < 0 or eps < 0:
        raise InputError("eps and beta must be non-negative")
    if region_k < 1:
        raise InputError(f"privacy regions start at 1, got {region_k}")
    if strict and beta >= 2 * p_min:
        raise InfeasibleError(f"beta = {beta} is not below 2 * p_min = {2 * p_min}")
    if beta == 0:
        return 0.0
    if region_k == 1:
        shrink = (beta / 2) * math.expm1(eps) / p_min
    else:
        shrink = beta * math.exp(eps) / 2
    if shrink >= 1:
        raise InfeasibleError(f"bound is vacuous for eps = {eps}, beta = {beta} (k = {region_k})")
    return -math.log1p(-shrink)


def leakage_bound_in_ball(eps: float, beta: float) -> float:
    """Largest ``eps_min`` over ``B_beta(P)`` for any mechanism that is eps-PML at ``P``."""
    if beta < 0 or eps < 0:
        raise InputError("eps and beta must be non-negative")
    if beta >= 2 * math.exp(-eps):
        raise InfeasibleError(f"beta = {beta} must be below 2 exp(-eps) = {2 * math.exp(-eps)}")
    return eps - math.log1p(-math.exp(eps) * beta / 2)


def capacity_upper_bound(mech: Mechanism, uset: UncertaintySet, *, strict: bool = True) -> float:
    """Certified upper bound on the set-local capacity: ``eps_center + S``."""
    center = uset.center
    eps_c = eps_min(mech, center)
    k = sensitivity_region(eps_c, center)
    return eps_c + l1_sensitivity_bound(eps_c, uset.radius_beta, k, center.p_min, strict=strict)


def leakage_capacity(mech: Mechanism, uset: UncertaintySet, n_samples: int, seed: int) -> float:
    """Sampling lower bound on ``sup_{Q in ball} eps_min(mech, Q)``.

    Evaluates the center, one crafted worst-case prior per outcome and
    ``n_samples`` random priors. Pair with :func:`capacity_upper_bound`.
    """
    if not uset.bounds_feasible:
        raise InfeasibleError(
            f"beta = {uset.radius_beta} is not below 2 * p_min = {2 * uset.center.p_min}"
        )
    candidates = [uset.center.probs]
    if uset.radius_beta > 0:
        for j in range(mech.n_outputs):
            if mech.matrix[:, j].max() > 0:
                candidates.append(worst_case_prior(mech, uset.center, uset.radius_beta, j).probs)
    priors = np.vstack(candidates)
    if n_samples > 0:
        priors = np.vstack([priors, sample_priors_in_ball(uset, n_samples, seed)])
    return float(eps_min_batch(mech.matrix, priors).max())


def lipschitz_bound(mech: Mechanism, uset: UncertaintySet, p: Distribution, q: Distribution) -> float:
    """``exp(C) * ||p - q||_1`` with ``C`` the certified capacity bound of the set."""
    for name, dist in (("p", p), ("q", q)):
        if not uset.contains(dist):
            raise InputError(f"{name} lies outside the uncertainty set")
    return math.exp(capacity_upper_bound(mech, uset)) * l1_distance(p, q)


def eps_prime_of_delta(eps: float, delta: float, m: int, n: int) -> float:
    """Leakage level that holds with probability ``1 - delta`` after ``m`` samples."""
    shrink = beta_star(delta, m, n) * math.exp(eps) / 2
    if shrink >= 1:
        raise InsufficientSamplesError(
            f"insufficient samples for eps = {eps}, delta = {delta}: m = {m} gives beta* e^eps / 2 = {shrink:.4g}"
        )
    return eps - math.log1p(-shrink)


def delta_min_of_eps_prime(eps: float, eps_prime: float, m: int, n: int) -> float:
    """Failure probability of an ``eps_prime`` guarantee for a mechanism designed at ``eps``."""
    if not eps_prime > eps:
        raise InputError(f"eps_prime = {eps_prime} must exceed eps = {eps}")
    gap = math.exp(-eps) - math.exp(-eps_prime)
    log_delta = log_two_pow_minus_two(n) - 2.0 * m * gap * gap
    return min(1.0, math.exp(log_delta))


@dataclass(frozen=True)
class ConvexityReport:
    lambdas: np.ndarray
    max_violation: float
    max_outcome_violation: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return max(self.max_violation, self.max_outcome_violation) <= self.tolerance


def convexity_audit(
    mech: Mechanism,
    p: Distribution,
    q: Distribution,
    lambdas: Sequence[float] = tuple(np.linspace(0.0, 1.0, 11)),
    tol: float = 1e-12,
) -> ConvexityReport:
    """Check that ``eps_min`` and each ``l(X -> y)`` are convex along ``p -> q``."""
    _require_full_support(p, mech.n_inputs)
    _require_full_support(q, mech.n_inputs)
    lam = np.asarray(lambdas, dtype=float)
    w = mech.matrix
    live = w.max(axis=0) > 0
    log_max = np.log(w.max(axis=0)[live])

    def per_outcome(prior):
        return log_max - np.log(prior @ w[:, live])

    ell_p, ell_q = per_outcome(p.probs), per_outcome(q.probs)
    worst_total = worst_outcome = -math.inf
    for t in lam:
        mix = t * p.probs + (1 - t) * q.probs
        ell_mix = per_outcome(mix)
        chord = t * ell_p + (1 - t) * ell_q
        worst_outcome = max(worst_outcome, float((ell_mix - chord).max()))
        worst_total = max(worst_total, ell_mix.max() - (t * ell_p.max() + (1 - t) * ell_q.max()))
    return ConvexityReport(lam, max(worst_total, 0.0), max(worst_outcome, 0.0), tol)
