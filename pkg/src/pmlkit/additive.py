"""Binary-input additive noise: Laplace calibration and Gaussian (eps, delta) curves.

Inputs live on ``{-1, +1}`` and the output is ``Y = X + noise``. Priors are
given by ``p = P(X = -1)``; the minimum mass of a binary prior is
``min(p, 1 - p)``.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import erfc, log_ndtr, ndtr

from pmlkit.errors import InfeasibleError, InputError, InsufficientSamplesError, NumericalError
from pmlkit.leakage import PrivacyGuarantee, Provenance
from pmlkit.prob import Distribution, UncertaintySet, beta_star

TRUNCATION_SIGMAS = 20.0
SCAN_POINTS = 2001
ROOT_TOL = 1e-12
P_CLIP = 1e-9
P_GRID_STEP = 1e-3
CURVE_FIELDS = ("eps_star", "delta_star", "eps_design", "delta1", "delta2")


@dataclass(frozen=True)
class LaplaceSpec:
    scale_b: float

    def __post_init__(self):
        if not self.scale_b > 0:
            raise InputError(f"Laplace scale must be positive, got {self.scale_b}")


@dataclass(frozen=True)
class GaussianSpec:
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise InputError(f"Gaussian sigma must be positive, got {self.sigma}")


# --------------------------------------------------------------------------- Laplace


def _check_scale(b: float) -> None:
    if not b > 0:
        raise InputError(f"Laplace scale must be positive, got {b}")


def _laplace_eps_at(b: float, p_min: float) -> float:
    # 2/b - log(e^{2/b} p + 1 - p) rewritten to avoid overflow for small b
    if p_min == 0:
        return 2.0 / b
    return -math.log(p_min + (1.0 - p_min) * math.exp(-2.0 / b))


def laplace_eps(b: float, p_min: float) -> float:
    """PML of the binary Laplace mechanism with scale ``b`` under a prior with smallest mass ``p_min``."""
    _check_scale(b)
    if not 0.0 < p_min <= 0.5:
        raise InputError(f"p_min must lie in (0, 0.5], got {p_min}")
    return _laplace_eps_at(b, p_min)


def laplace_eps_for_beta(b: float, p_min_hat: float, beta: float) -> float:
    """Leakage bound over ``B_beta`` of a binary estimate with smallest mass ``p_min_hat``.

    The effective smallest mass is ``p_min_hat - beta/2``; at zero it gives the
    LDP level ``2/b``.
    """
    _check_scale(b)
    if not 0.0 < p_min_hat <= 0.5:
        raise InputError(f"p_min_hat must lie in (0, 0.5], got {p_min_hat}")
    if beta < 0:
        raise InputError(f"beta must be non-negative, got {beta}")
    p_eff = p_min_hat - beta / 2
    if p_eff < 0:
        raise InsufficientSamplesError(
            f"insufficient samples: effective p_min = {p_eff:.6g} is negative (beta = {beta:.6g})"
        )
    return _laplace_eps_at(b, p_eff)


def laplace_eps_with_uncertainty(b: float, p_min_hat: float, delta: float, m: int) -> float:
    """Leakage that holds with probability ``1 - delta`` when the prior is estimated from ``m`` samples.

    ``delta = 0`` means no failure is tolerated, so only the LDP level ``2/b``
    can be certified.
    """
    _check_scale(b)
    if delta == 0:
        return 2.0 / b
    return laplace_eps_for_beta(b, p_min_hat, beta_star(delta, m, 2))


def laplace_scale_for_target(eps_target: float, delta: float, m: int, p_min_hat: float) -> float:
    """Smallest Laplace scale whose certified leakage equals ``eps_target``.

    Solved by bisection on ``1/b``, where the leakage is increasing. Targets at
    or above ``-log(p_eff)`` need no noise and are rejected.
    """
    if not eps_target > 0:
        raise InputError(f"eps_target must be positive, got {eps_target}")
    if delta == 0:
        return 2.0 / eps_target
    p_eff = p_min_hat - beta_star(delta, m, 2) / 2
    if not 0.0 < p_min_hat <= 0.5:
        raise InputError(f"p_min_hat must lie in (0, 0.5], got {p_min_hat}")
    if p_eff < 0:
        raise InsufficientSamplesError(
            f"insufficient samples: m = {m}, delta = {delta} leave effective p_min = {p_eff:.6g} < 0"
        )
    if p_eff > 0 and eps_target >= -math.log(p_eff):
        raise InfeasibleError(
            f"eps_target = {eps_target} is not below the noiseless limit -log(p_eff) = {-math.log(p_eff):.6g}"
        )

    def level(inv_b):
        return -math.log(p_eff + (1.0 - p_eff) * math.exp(-2.0 * inv_b))

    lo, hi = 0.0, max(1.0, eps_target)
    while level(hi) < eps_target:
        hi *= 2.0
        if hi > 1e12:
            raise NumericalError(f"could not bracket a Laplace scale for eps_target = {eps_target}")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if level(mid) < eps_target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * hi:
            break
    return 1.0 / (0.5 * (lo + hi))


def laplace_pml_at_y(y, b: float, prior_p: float) -> np.ndarray:
    """Leakage of outcome ``y`` computed from the two Laplace densities."""
    y = np.asarray(y, dtype=float)
    log_minus = -np.abs(y + 1.0) / b
    log_plus = -np.abs(y - 1.0) / b
    mix = np.logaddexp(math.log(prior_p) + log_minus, math.log1p(-prior_p) + log_plus)
    return np.maximum(log_minus, log_plus) - mix


# --------------------------------------------------------------------------- Gaussian


def gaussian_pml_at_y(y, sigma: float, prior_p: float):
    """Leakage of outcome ``y`` for ``Y = X + N(0, sigma^2)`` with ``P(X = -1) = prior_p``."""
    if not sigma > 0:
        raise InputError(f"sigma must be positive, got {sigma}")
    if not 0.0 < prior_p < 1.0:
        raise InputError(f"prior_p must lie in (0, 1), got {prior_p}")
    y = np.asarray(y, dtype=float)
    two_var = 2.0 * sigma * sigma
    log_minus = -((y + 1.0) ** 2) / two_var
    log_plus = -((y - 1.0) ** 2) / two_var
    mix = np.logaddexp(math.log(prior_p) + log_minus, math.log1p(-prior_p) + log_plus)
    out = np.maximum(np.maximum(log_minus, log_plus) - mix, 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ViolationSet:
    """Outcomes with leakage above ``eps``, as sorted disjoint closed intervals.

    ``truncated`` is set when an interval was cut at the scan limit
    ``+-(1 + 20 sigma)``; the mass beyond it is below 1e-80.
    """

    intervals: tuple[tuple[float, float], ...]
    truncated: bool
    limit: float

    def contains(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape, dtype=bool)
        for a, b in self.intervals:
            out |= (y >= a) & (y <= b)
        return out


def _bisect_flags(flag_fn, lo: np.ndarray, hi: np.ndarray, lo_flag: np.ndarray) -> np.ndarray:
    """Vectorised bisection of boolean brackets down to ``ROOT_TOL``."""
    lo, hi = lo.copy(), hi.copy()
    for _ in range(200):
        if np.all(hi - lo <= ROOT_TOL):
            break
        mid = 0.5 * (lo + hi)
        same = flag_fn(mid) == lo_flag
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    return 0.5 * (lo + hi)


def eps_violation_set(eps: float, sigma: float, prior_p: float) -> ViolationSet:
    """``{y : l(X -> y) > eps}`` for the binary Gaussian mechanism.

    A grid scan on ``[-L, L]`` brackets every sign change of ``l - eps``; each
    bracket is refined by bisection to ``1e-12`` in ``y``.
    """
    if eps < 0:
        raise InputError(f"eps must be non-negative, got {eps}")
    limit = 1.0 + TRUNCATION_SIGMAS * sigma
    grid = np.linspace(-limit, limit, SCAN_POINTS)

    def flags(y):
        return gaussian_pml_at_y(y, sigma, prior_p) > eps

    if eps == 0:
        # leakage is zero only where the two kernels are equal, i.e. at y = 0
        return ViolationSet(((-limit, 0.0), (0.0, limit)), True, limit)
    above = flags(grid)
    if not above.any():
        return ViolationSet((), False, limit)
    change = np.flatnonzero(above[1:] != above[:-1])
    roots = _bisect_flags(flags, grid[change], grid[change + 1], above[change])
    edges = np.concatenate([[-limit] if above[0] else [], roots, [limit] if above[-1] else []])
    intervals = tuple((float(a), float(b)) for a, b in zip(edges[::2], edges[1::2]))
    return ViolationSet(intervals, bool(above[0] or above[-1]), limit)


def _interval_mass(a: float, b: float, mean: float, sigma: float) -> float:
    za, zb = (a - mean) / sigma, (b - mean) / sigma
    if za > 0:
        return float(ndtr(-za) - ndtr(-zb))
    return float(ndtr(zb) - ndtr(za))


def violation_mass(vset: ViolationSet, sigma: float, prior_p: float) -> float:
    """Probability of the violation set when ``P(X = -1) = prior_p``."""
    total = 0.0
    for a, b in vset.intervals:
        total += prior_p * _interval_mass(a, b, -1.0, sigma)
        total += (1.0 - prior_p) * _interval_mass(a, b, 1.0, sigma)
    return min(max(total, 0.0), 1.0)


@dataclass(frozen=True)
class Delta1Result:
    delta1: float
    p_worst: float
    clipped: bool
    truncated: bool


def gaussian_delta1_detail(eps: float, sigma: float, uset: UncertaintySet) -> Delta1Result:
    """Worst-case violation mass over the binary ball, with diagnostics.

    The ball is the interval ``p in [p_hat - beta/2, p_hat + beta/2]``, clipped
    to ``(1e-9, 1 - 1e-9)``; clipping is reported. The supremum is located on a
    grid of step 1e-3 and refined by golden-section search around the best cell.
    """
    if uset.center.alphabet_size != 2:
        raise InputError("the Gaussian mechanism takes a binary input")
    if not sigma > 0:
        raise InputError(f"sigma must be positive, got {sigma}")
    p_hat = float(uset.center.probs[0])
    half = uset.radius_beta / 2
    lo, hi = p_hat - half, p_hat + half
    clipped = lo < P_CLIP or hi > 1 - P_CLIP
    lo, hi = max(lo, P_CLIP), min(hi, 1 - P_CLIP)
    if lo > hi:
        raise InfeasibleError("the uncertainty interval does not meet (0, 1)")

    truncated = False

    def mass(p):
        nonlocal truncated
        vset = eps_violation_set(eps, sigma, p)
        truncated = truncated or vset.truncated
        return violation_mass(vset, sigma, p)

    if hi - lo <= 0:
        return Delta1Result(mass(lo), lo, clipped, truncated)
    steps = max(1, int(math.ceil((hi - lo) / P_GRID_STEP)))
    grid = np.linspace(lo, hi, steps + 1)
    values = np.array([mass(p) for p in grid])
    best = int(np.argmax(values))
    best_p, best_v = float(grid[best]), float(values[best])
    a, b = grid[max(best - 1, 0)], grid[min(best + 1, steps)]
    if b > a:
        res = minimize_scalar(lambda p: -mass(p), bounds=(a, b), method="bounded", options={"xatol": 1e-10})
        if -res.fun > best_v:
            best_p, best_v = float(res.x), float(-res.fun)
    return Delta1Result(best_v, best_p, clipped, truncated)


def gaussian_delta1(eps: float, sigma: float, uset: UncertaintySet) -> float:
    return gaussian_delta1_detail(eps, sigma, uset).delta1


def gaussian_guarantee(eps: float, sigma: float, m: int, delta2: float, p_hat: float) -> PrivacyGuarantee:
    """(eps*, delta*) for the Gaussian mechanism designed at ``eps`` with an estimated prior.

    ``eps* = eps - log(1 - beta* e^eps / 2)`` bounds the capacity over the ball
    of radius ``beta*(delta2)``; ``delta* = delta1 + delta2 - delta1 delta2``.
    """
    point = _guarantee_point(eps, sigma, m, delta2, p_hat)
    return PrivacyGuarantee(point["eps_star"], point["delta_star"], Provenance.COMPOSED)


def _guarantee_point(eps: float, sigma: float, m: int, delta2: float, p_hat: float) -> dict:
    if eps < 0:
        raise InputError(f"eps must be non-negative, got {eps}")
    if not 0.0 < p_hat < 1.0:
        raise InputError(f"p_hat must lie in (0, 1), got {p_hat}")
    beta = beta_star(delta2, m, 2)
    shrink = beta * math.exp(eps) / 2
    if shrink >= 1:
        raise InsufficientSamplesError(
            f"insufficient samples: beta*(delta2) e^eps / 2 = {shrink:.4g} >= 1 (eps = {eps}, m = {m})"
        )
    uset = UncertaintySet(Distribution([p_hat, 1.0 - p_hat]), min(beta, 2.0))
    detail = gaussian_delta1_detail(eps, sigma, uset)
    d1 = detail.delta1
    return {
        "eps_star": eps - math.log1p(-shrink),
        "delta_star": d1 + delta2 - d1 * delta2,
        "eps_design": eps,
        "delta1": d1,
        "delta2": delta2,
        "clipped": detail.clipped,
        "truncated": detail.truncated,
    }


# --------------------------------------------------------------------------- pLDP baseline


def _log_erfc(x: float) -> float:
    return math.log(2.0) + float(log_ndtr(-math.sqrt(2.0) * x))


def inverfc(delta: float) -> float:
    """Inverse complementary error function on ``(0, 2)`` by safeguarded Newton steps.

    The iteration runs on ``log erfc`` so that tiny ``delta`` stays well scaled.
    """
    if not 0.0 < delta < 2.0:
        raise InputError(f"inverfc needs delta in (0, 2), got {delta}")
    target = math.log(delta)
    lo, hi = -30.0, 30.0
    x = 0.0
    for _ in range(200):
        g = _log_erfc(x) - target
        if g > 0:
            lo = x
        else:
            hi = x
        slope = -2.0 / math.sqrt(math.pi) * math.exp(-x * x - _log_erfc(x))
        step = g / slope
        x_new = x - step
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 1e-15 * max(1.0, abs(x)):
            return x_new
        x = x_new
    raise NumericalError(f"inverfc did not converge for delta = {delta}")


def pldp_sigma(eps: float, delta: float) -> float:
    """Noise level of the binary Gaussian (eps, delta)-pLDP baseline."""
    if not eps > 0:
        raise InputError(f"eps must be positive, got {eps}")
    if not 0.0 < delta < 1.0:
        raise InputError(f"delta must lie in (0, 1), got {delta}")
    f = inverfc(delta)
    return math.sqrt(2.0) * (f + math.sqrt(f * f + eps)) / eps


def pldp_delta_for_sigma(eps: float, sigma: float) -> float:
    """Inverse of :func:`pldp_sigma` in ``delta`` at fixed ``sigma``; clamped to 1."""
    if not eps > 0 or not sigma > 0:
        raise InputError("eps and sigma must be positive")
    a = sigma * eps / math.sqrt(2.0)
    f = (a * a - eps) / (2.0 * a)
    return min(1.0, float(erfc(f)))


# --------------------------------------------------------------------------- curves


@dataclass(frozen=True)
class EpsDeltaCurve:
    """Ordered (eps*, delta*) points with the design quantities behind them."""

    eps_star: np.ndarray
    delta_star: np.ndarray
    eps_design: np.ndarray
    delta1: np.ndarray
    delta2: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        cols = [np.asarray(getattr(self, k), dtype=float) for k in CURVE_FIELDS]
        if len({c.shape for c in cols}) != 1 or cols[0].ndim != 1:
            raise InputError("curve columns must be vectors of equal length")
        for k, c in zip(CURVE_FIELDS, cols):
            object.__setattr__(self, k, c)

    def __len__(self):
        return self.eps_star.size

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.eps_star.tolist(), self.delta_star.tolist()))

    def is_monotone(self, tol: float = 1e-12) -> bool:
        order = np.argsort(self.eps_star, kind="stable")
        return bool(np.all(np.diff(self.delta_star[order]) <= tol))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CURVE_FIELDS)
        for row in zip(*(getattr(self, k) for k in CURVE_FIELDS)):
            writer.writerow([format(float(v), ".17g") for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, meta: dict | None = None) -> "EpsDeltaCurve":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != CURVE_FIELDS:
            raise InputError(f"curve CSV header must be {','.join(CURVE_FIELDS)}")
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(CURVE_FIELDS))
        return cls(*data.T, meta=dict(meta or {}))


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def gaussian_pml_curve(
    sigma: float, p_hat: float, m: int, delta2: float, eps_grid, threads: int = 1
) -> EpsDeltaCurve:
    """(eps*, delta*) curve over design levels ``eps_grid``; infeasible levels are skipped and counted."""

    def point(eps):
        try:
            return _guarantee_point(float(eps), sigma, m, delta2, p_hat)
        except InsufficientSamplesError:
            return None

    results = _map(point, list(eps_grid), threads)
    kept = [r for r in results if r is not None]
    cols = {k: np.array([r[k] for r in kept], dtype=float) for k in CURVE_FIELDS}
    meta = {
        "sigma": sigma,
        "p_hat": p_hat,
        "m": m,
        "delta2": delta2,
        "beta": beta_star(delta2, m, 2),
        "n_infeasible": len(results) - len(kept),
        "clipped": any(r["clipped"] for r in kept),
        "truncated": any(r["truncated"] for r in kept),
    }
    return EpsDeltaCurve(**cols, meta=meta)


def pldp_curve(sigma: float, eps_grid) -> EpsDeltaCurve:
    """pLDP baseline at fixed ``sigma``: ``delta(eps)`` from the inverse calibration."""
    eps = np.asarray([e for e in eps_grid if e > 0], dtype=float)
    delta = np.array([pldp_delta_for_sigma(e, sigma) for e in eps])
    zeros = np.zeros_like(eps)
    return EpsDeltaCurve(eps, delta, eps, delta, zeros, meta={"sigma": sigma, "baseline": "pldp"})


def sample_noise(spec: LaplaceSpec | GaussianSpec, seed: int, count: int) -> np.ndarray:
    if count < 0:
        raise InputError(f"count must be non-negative, got {count}")
    rng = np.random.default_rng(seed)
    if isinstance(spec, LaplaceSpec):
        return rng.laplace(0.0, spec.scale_b, size=count)
    if isinstance(spec, GaussianSpec):
        return rng.normal(0.0, spec.sigma, size=count)
    raise InputError(f"unknown noise spec {spec!r}")
