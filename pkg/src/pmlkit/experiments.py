"""Binary data ingestion and the Laplace/Gaussian utility experiments.

The Laplace experiment compares, for every sample size ``m`` and target
``eps``, noise calibrated to the estimated prior (arm ``pml``) with the
prior-free scale ``b = 2/eps`` (arm ``ldp``). Both arms see the same unit
Laplace draws, so any difference comes from the scale alone.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from pmlkit.additive import EpsDeltaCurve, gaussian_pml_curve, laplace_scale_for_target, pldp_curve
from pmlkit.errors import InfeasibleError, InputError, InsufficientSamplesError

ARMS = ("pml", "ldp")
RESULT_FIELDS = ("feature", "m", "eps", "arm", "mi_mean", "mi_std", "cells_failed")


@dataclass(frozen=True, eq=False)
class BinaryColumn:
    """A data column over ``{-1, +1}``."""

    values: np.ndarray
    name: str = "x"

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.ndim != 1:
            raise InputError("a binary column must be one-dimensional")
        if vals.size and not np.all((vals == -1) | (vals == 1)):
            bad = sorted(set(vals[(vals != -1) & (vals != 1)].tolist()))[:10]
            raise InputError(f"binary column entries must be -1 or +1, found {bad}")
        vals = vals.astype(np.int8)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return self.values.size

    @property
    def p_min_hat(self) -> float:
        if not len(self):
            raise InputError("empty column")
        frac = float(np.count_nonzero(self.values == 1)) / len(self)
        return min(frac, 1.0 - frac)


@dataclass(frozen=True)
class ExperimentConfig:
    """Grid and repetition settings for :func:`run_laplace_experiment`.

    ``arms`` selects which calibrations run; both by default.
    """

    m_grid: tuple[int, ...]
    eps_grid: tuple[float, ...]
    delta: float
    iterations: int
    seed: int
    arms: tuple[str, ...] = ARMS

    def __post_init__(self):
        object.__setattr__(self, "m_grid", tuple(int(m) for m in self.m_grid))
        object.__setattr__(self, "eps_grid", tuple(float(e) for e in self.eps_grid))
        object.__setattr__(self, "arms", tuple(self.arms))
        if not self.m_grid or not self.eps_grid:
            raise InputError("m_grid and eps_grid must be non-empty")
        if min(self.m_grid) < 1:
            raise InputError("sample sizes must be positive")
        if min(self.eps_grid) <= 0:
            raise InputError("design eps values must be positive")
        if self.iterations < 1:
            raise InputError(f"iterations must be at least 1, got {self.iterations}")
        if not 0.0 <= self.delta <= 1.0:
            raise InputError(f"delta must lie in [0, 1], got {self.delta}")
        if not self.arms or any(a not in ARMS for a in self.arms):
            raise InputError(f"arms must be drawn from {ARMS}, got {self.arms}")


def ingest_csv(path, column: str, positive_label: str) -> BinaryColumn:
    """Read ``column`` from a headed CSV; ``positive_label`` maps to +1, the other value to -1.

    The raw column must take at most two distinct values, so that the mapping
    does not silently merge categories.
    """
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise InputError(f"{path}: empty file")
            fields = [f.strip() for f in reader.fieldnames]
            if column not in fields:
                raise InputError(f"{path}: no column {column!r}; available: {', '.join(fields)}")
            key = reader.fieldnames[fields.index(column)]
            raw = [(row[key] or "").strip() for row in reader]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if not raw:
        raise InputError(f"{path}: no data rows")
    distinct = sorted(set(raw))
    if len(distinct) > 2:
        others = [v for v in distinct if v != positive_label]
        raise InputError(
            f"column {column!r} is not binary: values other than {positive_label!r} are {others}"
        )
    values = np.where(np.array(raw) == positive_label, 1, -1)
    return BinaryColumn(values, column)


def threshold_decode(perturbed) -> BinaryColumn:
    """Map real outputs back to ``{-1, +1}``: negative to -1, everything else to +1."""
    y = np.asarray(perturbed, dtype=float)
    return BinaryColumn(np.where(y < 0, -1, 1), "decoded")


def empirical_mutual_information(x: BinaryColumn, y: BinaryColumn) -> float:
    """Plug-in mutual information (nats) of the joint frequencies of ``x`` and ``y``."""
    if len(x) != len(y):
        raise InputError(f"length mismatch: {len(x)} vs {len(y)}")
    m = len(x)
    if m < 1:
        raise InputError("need at least one pair")
    joint = np.zeros((2, 2))
    np.add.at(joint, ((x.values + 1) // 2, (y.values + 1) // 2), 1.0)
    row, col = joint.sum(axis=1), joint.sum(axis=0)
    total = 0.0
    for i in range(2):
        for k in range(2):
            c = joint[i, k]
            if c > 0:
                total += c / m * math.log(m * c / (row[i] * col[k]))
    return max(total, 0.0)


def synth_binary_source(p: float, m: int, seed: int, name: str = "synthetic") -> BinaryColumn:
    """``m`` i.i.d. symbols with ``P(+1) = p``."""
    if not 0.0 < p < 1.0:
        raise InputError(f"p must lie in (0, 1), got {p}")
    if m < 0:
        raise InputError(f"m must be non-negative, got {m}")
    rng = np.random.default_rng(seed)
    return BinaryColumn(np.where(rng.random(m) < p, 1, -1), name)


def _scale(arm: str, eps: float, cfg: ExperimentConfig, m: int, p_min_hat: float) -> float:
    """Laplace scale for one cell; 0 means the target is met without noise."""
    if arm == "ldp":
        return 2.0 / eps
    if p_min_hat <= 0:
        raise InsufficientSamplesError("the estimate has a zero-mass symbol")
    try:
        return laplace_scale_for_target(eps, cfg.delta, m, p_min_hat)
    except InsufficientSamplesError:
        raise
    except InfeasibleError:
        return 0.0


def _one_iteration(data: BinaryColumn, cfg: ExperimentConfig, it: int) -> dict:
    rng = np.random.default_rng(cfg.seed + it)
    shuffled = data.values[rng.permutation(len(data))]
    unit_noise = rng.laplace(0.0, 1.0, size=max(cfg.m_grid))
    out = {}
    for m in cfg.m_grid:
        x = BinaryColumn(shuffled[:m])
        p_min_hat = x.p_min_hat
        for eps in cfg.eps_grid:
            for arm in cfg.arms:
                try:
                    b = _scale(arm, eps, cfg, m, p_min_hat)
                except InsufficientSamplesError:
                    out[(m, eps, arm)] = math.nan
                    continue
                decoded = threshold_decode(x.values + b * unit_noise[:m])
                out[(m, eps, arm)] = empirical_mutual_information(x, decoded)
    return out


@dataclass(frozen=True)
class ExperimentResult:
    feature: str
    rows: tuple[tuple, ...]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(RESULT_FIELDS)
        for feature, m, eps, arm, mean, std, failed in self.rows:
            writer.writerow([feature, m, format(eps, ".17g"), arm, format(mean, ".17g"), format(std, ".17g"), failed])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ExperimentResult":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != RESULT_FIELDS:
            raise InputError(f"result CSV header must be {','.join(RESULT_FIELDS)}")
        parsed = tuple(
            (r[0], int(r[1]), float(r[2]), r[3], float(r[4]), float(r[5]), int(r[6])) for r in rows[1:]
        )
        return cls(parsed[0][0] if parsed else "", parsed)

    def mean(self, m: int, eps: float, arm: str) -> float:
        for row in self.rows:
            if row[1] == m and row[2] == eps and row[3] == arm:
                return row[4]
        raise KeyError((m, eps, arm))


def run_laplace_experiment(data: BinaryColumn, cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Average empirical MI per ``(m, eps, arm)`` over ``cfg.iterations`` shuffles.

    Iteration ``t`` is seeded with ``cfg.seed + t``; cells whose calibration
    fails (too few samples for ``delta``) are left out of the average and
    counted in ``cells_failed``.
    """
    if max(cfg.m_grid) > len(data):
        raise InputError(f"largest m = {max(cfg.m_grid)} exceeds the {len(data)} available rows")
    iterations = range(cfg.iterations)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_iter = list(pool.map(lambda t: _one_iteration(data, cfg, t), iterations))
    else:
        per_iter = [_one_iteration(data, cfg, t) for t in iterations]
    rows = []
    for m in cfg.m_grid:
        for eps in cfg.eps_grid:
            for arm in cfg.arms:
                vals = np.array([res[(m, eps, arm)] for res in per_iter])
                ok = vals[~np.isnan(vals)]
                failed = int(vals.size - ok.size)
                mean = float(ok.mean()) if ok.size else math.nan
                std = float(ok.std()) if ok.size else math.nan
                rows.append((data.name, m, eps, arm, mean, std, failed))
    return ExperimentResult(data.name, tuple(rows))


def run_gaussian_curves(
    sigmas, m_grid, p_hat: float, delta2: float, eps_grid, threads: int = 1
) -> dict[str, EpsDeltaCurve]:
    """PML curves per ``(sigma, m)`` and the pLDP curve per ``sigma`` on a shared eps grid.

    Keys are file stems such as ``gauss_pml_sigma1.5_m1000`` and ``gauss_pldp_sigma1.5``.
    """
    eps_grid = [float(e) for e in eps_grid]
    curves = {}
    for sigma in sigmas:
        for m in m_grid:
            curves[f"gauss_pml_sigma{sigma:g}_m{int(m)}"] = gaussian_pml_curve(
                sigma, p_hat, int(m), delta2, eps_grid, threads
            )
        curves[f"gauss_pldp_sigma{sigma:g}"] = pldp_curve(sigma, eps_grid)
    return curves
