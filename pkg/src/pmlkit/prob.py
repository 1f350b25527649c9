"""Finite-alphabet distributions, empirical estimation and l1 concentration.

All logarithms are natural. Probability vectors are validated against a single
tolerance, ``PROB_TOL``, so that every module agrees on what counts as a pmf.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from pmlkit.errors import InfeasibleError, InputError

PROB_TOL = 1e-12
KAPPA_EXACT_MAX_N = 20


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Distribution:
    """Probability mass function on the alphabet ``{0, ..., N-1}``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen_array(self.probs)
        if probs.ndim != 1 or probs.size < 2:
            raise InputError(f"a distribution needs at least two symbols, got shape {probs.shape}")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise InputError(f"probabilities must be finite and non-negative: {probs.tolist()}")
        if abs(probs.sum() - 1.0) > PROB_TOL:
            raise InputError(f"probabilities sum to {probs.sum()!r}, not 1")
        object.__setattr__(self, "probs", probs)

    @property
    def alphabet_size(self) -> int:
        return int(self.probs.size)

    @property
    def full_support(self) -> bool:
        return bool(np.all(self.probs > 0))

    @property
    def p_min(self) -> float:
        return float(self.probs.min())

    def __eq__(self, other):
        if not isinstance(other, Distribution):
            return NotImplemented
        return np.array_equal(self.probs, other.probs)

    def __repr__(self):
        return f"Distribution({self.probs.tolist()})"

    @classmethod
    def uniform(cls, n: int) -> "Distribution":
        return cls(np.full(n, 1.0 / n))

    def to_dict(self) -> dict:
        return {"probs": [float(p) for p in self.probs]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "Distribution":
        if "probs" not in data:
            raise InputError("distribution JSON needs a 'probs' field")
        return cls(data["probs"])

    @classmethod
    def from_json(cls, text: str) -> "Distribution":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Per-symbol occurrence counts of ``m`` observations."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or counts.size < 2:
            raise InputError("counts must be a vector over at least two symbols")
        if not np.all(np.equal(np.mod(counts, 1), 0)) or np.any(counts < 0):
            raise InputError(f"counts must be non-negative integers: {counts.tolist()}")
        object.__setattr__(self, "counts", _frozen_array(counts, dtype=np.int64))

    @property
    def m(self) -> int:
        return int(self.counts.sum())

    def to_dict(self) -> dict:
        return {"counts": [int(c) for c in self.counts]}

    @classmethod
    def from_dict(cls, data: dict) -> "SampleSet":
        if "counts" not in data:
            raise InputError("sample JSON needs a 'counts' field")
        return cls(data["counts"])

    @classmethod
    def from_labels(cls, labels: Sequence[int], n: int) -> "SampleSet":
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= n):
            raise InputError(f"labels must lie in [0, {n})")
        return cls(np.bincount(labels, minlength=n))


@dataclass(frozen=True)
class UncertaintySet:
    """The l1 ball of radius ``radius_beta`` around ``center``."""

    center: Distribution
    radius_beta: float

    def __post_init__(self):
        beta = float(self.radius_beta)
        if not 0.0 <= beta <= 2.0:
            raise InputError(f"l1 radius must lie in [0, 2], got {beta}")
        object.__setattr__(self, "radius_beta", beta)

    @property
    def bounds_feasible(self) -> bool:
        """Whether the radius satisfies ``beta < 2 * min center``.

        The sensitivity bounds and the worst-case constructions need this.
        """
        return self.radius_beta < 2.0 * self.center.p_min

    def contains(self, q: Distribution, tol: float = PROB_TOL) -> bool:
        return l1_distance(self.center, q) <= self.radius_beta + tol


def estimate_distribution(samples: SampleSet) -> Distribution:
    """Empirical pmf ``count(x) / m``."""
    if samples.m < 1:
        raise InputError("cannot estimate a distribution from zero samples")
    return Distribution(samples.counts / samples.m)


def l1_distance(p: Distribution, q: Distribution) -> float:
    if p.alphabet_size != q.alphabet_size:
        raise InputError(f"alphabet sizes differ: {p.alphabet_size} vs {q.alphabet_size}")
    return float(np.abs(p.probs - q.probs).sum())


def phi(p: float) -> float:
    """Weissman's ``phi(p) = log((1-p)/p) / (1-2p)``, extended by ``phi(0.5) = 2``."""
    if not 0.0 < p <= 0.5:
        raise InputError(f"phi is defined on (0, 0.5], got {p}")
    if p == 0.5:
        return 2.0
    t = 1.0 - 2.0 * p
    return math.log1p(t / p) / t


class KappaValue(NamedTuple):
    value: float
    exact: bool


def kappa(p: Distribution, mode: str = "auto") -> KappaValue:
    """Most balanced split ``max_A min{P(A), 1 - P(A)}``.

    Exact enumeration covers ``N <= 20``. Above that (or with
    ``mode="greedy"``) a largest-first balancing heuristic is used and the
    result is flagged as not exact; it is then a lower bound on the true value.
    """
    if mode not in ("auto", "exact", "greedy"):
        raise InputError(f"unknown kappa mode {mode!r}")
    n = p.alphabet_size
    if mode == "exact" and n > KAPPA_EXACT_MAX_N:
        raise InputError(f"exact kappa is limited to N <= {KAPPA_EXACT_MAX_N}, got N = {n}")
    if mode == "greedy" or n > KAPPA_EXACT_MAX_N:
        bins = [0.0, 0.0]
        for mass in sorted(p.probs.tolist(), reverse=True):
            bins[int(bins[1] < bins[0])] += mass
        return KappaValue(min(bins[0], 1.0 - bins[0]), False)
    # complements give the same value, so the last symbol can stay outside A
    masses = np.zeros(1)
    for mass in p.probs[:-1]:
        masses = np.concatenate([masses, masses + mass])
    best = np.minimum(masses, 1.0 - masses).max()
    return KappaValue(float(best), True)


def log_two_pow_minus_two(n: int) -> float:
    """``log(2**n - 2)`` without overflow."""
    if n < 2:
        raise InputError(f"alphabet size must be at least 2, got {n}")
    return n * math.log(2.0) + math.log1p(-(2.0 ** (1 - n)))


def weissman_bound(m: int, n: int, beta: float, kappa_opt: float | None = None) -> float:
    """Upper bound on ``P(||P - P_hat||_1 >= beta)`` after ``m`` samples.

    Without ``kappa_opt`` the distribution-free relaxation ``phi(kappa) >= 2``
    is used. The result is clamped to 1.
    """
    if m < 1:
        raise InputError(f"need at least one sample, got m = {m}")
    if beta <= 0:
        raise InputError(f"beta must be positive, got {beta}")
    rate = 2.0 if kappa_opt is None else phi(kappa_opt)
    log_bound = log_two_pow_minus_two(n) - m * rate * beta**2 / 4.0
    return min(1.0, math.exp(log_bound))


def beta_star(delta: float, m: int, n: int) -> float:
    """Radius of the l1 ball that holds the true pmf with probability ``1 - delta``.

    Uses the distribution-free form ``sqrt(2/m * (log(2^N - 2) - log delta))``.
    ``delta`` above 1 is clamped to 1.
    """
    if not delta > 0:
        raise InputError(f"delta must be positive, got {delta}")
    if m < 1:
        raise InputError(f"need at least one sample, got m = {m}")
    delta = min(float(delta), 1.0)
    radicand = 2.0 / m * (log_two_pow_minus_two(n) - math.log(delta))
    return math.sqrt(max(radicand, 0.0))


def sample_priors_in_ball(
    uset: UncertaintySet,
    n_samples: int,
    seed: int,
    *,
    allow_boundary: bool = False,
    concentration: float = 0.5,
) -> np.ndarray:
    """Draw ``n_samples`` full-support priors from the ball, one per row.

    Each draw moves ``r/2`` mass (``r`` uniform on ``[0, beta]``) from a random
    subset of symbols to the complementary subset, with Dirichlet weights on
    each side. When the radius exceeds ``2 * p_min`` (only allowed with
    ``allow_boundary``) the removal is capped per symbol so every prior keeps
    full support, and the added mass is shrunk to match.
    """
    if not uset.bounds_feasible and not allow_boundary:
        raise InfeasibleError(
            f"beta = {uset.radius_beta} is not below 2 * p_min = {2 * uset.center.p_min}"
        )
    rng = np.random.default_rng(seed)
    center = uset.center.probs
    n = center.size
    ranks = np.argsort(rng.random((n_samples, n)), axis=1).argsort(axis=1)
    split = rng.integers(1, n, size=n_samples)
    neg = ranks < split[:, None]
    gamma = rng.gamma(concentration, size=(n_samples, n)) + 1e-300
    w_neg = np.where(neg, gamma, 0.0)
    w_pos = np.where(neg, 0.0, gamma)
    w_neg /= w_neg.sum(axis=1, keepdims=True)
    w_pos /= w_pos.sum(axis=1, keepdims=True)
    half = rng.uniform(0.0, uset.radius_beta, size=n_samples) / 2.0

    removed = np.minimum(half[:, None] * w_neg, center * (1.0 - 1e-9))
    total = removed.sum(axis=1)
    priors = center - removed + total[:, None] * w_pos
    return priors


def sample_prior_in_ball(
    uset: UncertaintySet, rng_seed: int, *, allow_boundary: bool = False
) -> Distribution:
    """Single deterministic draw from :func:`sample_priors_in_ball`."""
    row = sample_priors_in_ball(uset, 1, rng_seed, allow_boundary=allow_boundary)[0]
    return Distribution(row)
