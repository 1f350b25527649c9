"""Command-line interface: ``pmlkit <command> [flags]``.

Leakage levels are in nats and accept ``logK`` literals. Exit codes: 0 ok,
2 bad input, 3 infeasible problem, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from pmlkit import additive, design, experiments, leakage
from pmlkit.errors import InputError, NumericalError, PMLError
from pmlkit.io import parse_count, parse_eps, parse_grid, read_json, write_json_atomic, write_text_atomic
from pmlkit.prob import Distribution, UncertaintySet, beta_star

DEFAULT_DELTA = 1e-6
DEFAULT_GAUSS_GRID = "0.02:3:60"


def _arg(parser_fn):
    """Adapt a parser that raises InputError into one argparse reports as a usage error."""

    def wrapped(text):
        try:
            return parser_fn(text)
        except InputError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc

    wrapped.__name__ = parser_fn.__name__
    return wrapped


EPS = _arg(parse_eps)
COUNT = _arg(parse_count)
GRID = _arg(parse_grid)


def _emit(data: dict) -> None:
    print(json.dumps(data, sort_keys=True))


def _out_path(args, name: str | None, default: str | None = None) -> Path | None:
    name = name or default
    if name is None:
        return None
    path = Path(name)
    return path if path.is_absolute() else Path(args.out_dir) / path


def _require_file(path: str) -> str:
    if not Path(path).is_file():
        raise InputError(f"no such file: {path}")
    return path


def _load_distribution(path: str) -> Distribution:
    data = read_json(_require_file(path))
    if "distribution" in data:
        data = data["distribution"]
    return Distribution.from_dict(data)


def _probability(text: str) -> float:
    try:
        value = float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"probability must lie in [0, 1], got {text}")
    return value


# --------------------------------------------------------------------------- commands


def cmd_estimate(args) -> None:
    if not 0.0 < args.delta <= 1.0:
        raise InputError(f"--delta must lie in (0, 1], got {args.delta}")
    col = experiments.ingest_csv(_require_file(args.input), args.column, args.positive_label)
    m = len(col)
    plus = int(np.count_nonzero(col.values == 1))
    dist = Distribution([(m - plus) / m, plus / m])
    out = {
        "distribution": dist.to_dict(),
        "symbols": [-1, 1],
        "m": m,
        "beta_star": beta_star(args.delta, m, 2),
        "delta": args.delta,
    }
    path = _out_path(args, args.out)
    if path is not None:
        write_json_atomic(path, out)
    _emit(out)


def cmd_assess(args) -> None:
    mech = leakage.Mechanism.from_dict(read_json(_require_file(args.mechanism)))
    dist = _load_distribution(args.dist)
    profile = leakage.pml_per_outcome(mech, dist)
    eps_c = profile.eps_min
    region = leakage.sensitivity_region(eps_c, dist)
    out = {
        "eps_min": eps_c,
        "per_outcome": [float(v) for v in profile.per_outcome],
        "region": region,
        "eps_max": leakage.eps_max(dist),
    }
    if args.beta is not None:
        uset = UncertaintySet(dist, args.beta)
        sens = leakage.l1_sensitivity_bound(eps_c, args.beta, region, dist.p_min)
        out.update(
            beta=args.beta,
            sensitivity_bound=sens,
            certified_upper_bound=eps_c + sens,
            sampled_lower_bound=leakage.leakage_capacity(mech, uset, args.samples, args.seed),
        )
        try:
            out["ball_bound"] = leakage.leakage_bound_in_ball(eps_c, args.beta)
        except PMLError:
            out["ball_bound"] = None
    _emit(out)


def cmd_design(args) -> None:
    dist = _load_distribution(args.dist)
    problem = design.DesignProblem(dist, args.beta, args.eps)
    mech = design.design(problem, args.mode)
    check = design.membership_check(mech, problem)
    if not check.ok:
        raise NumericalError(f"designed mechanism failed membership by {check.max_violation:.3g}")
    extra = {}
    if args.mode == "fixed_estimate" and problem.n <= design.EXHAUSTIVE_MAX_N:
        # the fixed-estimate set can be strictly smaller than the robust polytope
        full = design.design_vertex(problem)
        extra["utility_gap_to_vertex"] = design.mutual_information(full, dist) - design.mutual_information(mech, dist)
    path = _out_path(args, args.out)
    if path is not None:
        write_json_atomic(path, mech.to_dict())
    _emit(dict(mech.to_dict(), membership_violation=check.max_violation, **extra))


def cmd_noise_laplace(args) -> None:
    if args.delta > 0 and (args.m is None or args.p_min_hat is None):
        raise InputError("--m and --p-min-hat are required when --delta > 0")
    beta = beta_star(args.delta, args.m, 2) if args.delta > 0 else None
    if args.b is not None:
        if args.b <= 0:
            raise InputError("--b must be positive")
        eps = additive.laplace_eps_with_uncertainty(args.b, args.p_min_hat or 0.5, args.delta, args.m or 1)
        b = args.b
    elif args.eps is not None:
        eps = args.eps
        b = additive.laplace_scale_for_target(eps, args.delta, args.m or 1, args.p_min_hat or 0.5)
    else:
        raise InputError("give either --eps (calibrate b) or --b (assess eps)")
    _emit({"b": b, "eps": eps, "delta": args.delta, "m": args.m, "p_min_hat": args.p_min_hat, "beta_star": beta})


def cmd_noise_gauss(args) -> None:
    curve = additive.gaussian_pml_curve(args.sigma, args.p_hat, args.m, args.delta2, args.eps_grid, args.threads)
    path = _out_path(args, args.out, f"gauss_pml_sigma{args.sigma:g}_m{args.m}.csv")
    write_text_atomic(path, curve.to_csv())
    summary = {"curve": str(path), "points": len(curve), **curve.meta}
    if args.baseline_out:
        base_path = _out_path(args, args.baseline_out)
        write_text_atomic(base_path, additive.pldp_curve(args.sigma, args.eps_grid).to_csv())
        summary["baseline"] = str(base_path)
    _emit(summary)


def cmd_tradeoff(args) -> None:
    lines = []
    if args.delta is not None:
        if not 0.0 < args.delta <= 1.0:
            raise InputError(f"--delta must lie in (0, 1], got {args.delta}")
        lines.append("m,delta,beta_star,eps_prime")
        for m in args.m:
            try:
                ep = leakage.eps_prime_of_delta(args.eps, args.delta, m, args.n)
            except PMLError:
                ep = math.inf
            lines.append(f"{m},{args.delta:.17g},{beta_star(args.delta, m, args.n):.17g},{ep:.17g}")
    else:
        grid = args.eps_prime_grid or [args.eps + g for g in np.linspace(0.001, 0.5, 100)]
        lines.append("m,eps_prime,delta_min")
        for m in args.m:
            for ep in grid:
                if ep <= args.eps:
                    raise InputError(f"eps' grid values must exceed eps = {args.eps}")
                lines.append(f"{m},{ep:.17g},{leakage.delta_min_of_eps_prime(args.eps, ep, m, args.n):.17g}")
    text = "\n".join(lines) + "\n"
    path = _out_path(args, args.out)
    if path is not None:
        write_text_atomic(path, text)
        _emit({"curve": str(path), "rows": len(lines) - 1})
    else:
        sys.stdout.write(text)


def _config_grid(values) -> list[float]:
    if isinstance(values, str):
        return parse_grid(values)
    return [parse_eps(v) for v in values]


def cmd_simulate(args) -> None:
    cfg = read_json(_require_file(args.config))
    kind = cfg.get("kind", "laplace")
    if kind == "laplace":
        source = cfg.get("source")
        if not isinstance(source, dict):
            raise InputError("config needs a 'source' object with 'csv' or 'synthetic'")
        if "csv" in source:
            data = experiments.ingest_csv(_require_file(source["csv"]), source["column"], source["positive_label"])
        elif "synthetic" in source:
            syn = source["synthetic"]
            # offset keeps the data draw independent of the per-iteration shuffles
            data = experiments.synth_binary_source(float(syn["p"]), int(syn["rows"]), args.seed + 1_000_003)
        else:
            raise InputError("source must contain 'csv' or 'synthetic'")
        exp_cfg = experiments.ExperimentConfig(
            m_grid=tuple(parse_count(str(m)) for m in cfg["m_grid"]),
            eps_grid=tuple(_config_grid(cfg["eps_grid"])),
            delta=float(cfg.get("delta", DEFAULT_DELTA)),
            iterations=int(cfg.get("iterations", 100)),
            seed=args.seed,
            arms=tuple(cfg.get("arms", experiments.ARMS)),
        )
        result = experiments.run_laplace_experiment(data, exp_cfg, args.threads)
        path = _out_path(args, cfg.get("output"), "laplace_results.csv")
        write_text_atomic(path, result.to_csv())
        _emit({"results": str(path), "rows": len(result.rows)})
    elif kind == "gaussian":
        curves = experiments.run_gaussian_curves(
            [float(s) for s in cfg["sigmas"]],
            [parse_count(str(m)) for m in cfg["m_grid"]],
            float(cfg.get("p_hat", 0.5)),
            float(cfg.get("delta2", DEFAULT_DELTA)),
            _config_grid(cfg.get("eps_grid", DEFAULT_GAUSS_GRID)),
            args.threads,
        )
        written = [str(write_text_atomic(_out_path(args, f"{stem}.csv"), c.to_csv())) for stem, c in curves.items()]
        _emit({"curves": written})
    else:
        raise InputError(f"unknown simulation kind {kind!r}; use 'laplace' or 'gaussian'")


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="base random seed (integer)")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads for curve and experiment loops")
    common.add_argument("--out-dir", default=argparse.SUPPRESS, help="directory for relative output paths")

    parser = argparse.ArgumentParser(
        prog="pmlkit",
        description="Pointwise maximal leakage assessment and design with estimated priors. "
        "Leakage levels are in nats; 'logK' means log(K).",
    )
    parser.add_argument("--seed", type=int, default=0, help="base random seed (integer, default 0)")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for curve and experiment loops (default 1)")
    parser.add_argument("--out-dir", default=".", help="directory for relative output paths (default: current directory)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("estimate", parents=[common], help="estimate a binary prior and its l1 radius from a CSV column")
    p.add_argument("--input", required=True, help="CSV file with a header row")
    p.add_argument("--column", required=True, help="column to read")
    p.add_argument("--positive-label", required=True, help="raw value mapped to +1; the other value maps to -1")
    p.add_argument("--delta", type=float, default=DEFAULT_DELTA, help="failure probability of the radius, in (0, 1] (default 1e-6)")
    p.add_argument("--out", help="JSON output file (also printed to stdout)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("assess", parents=[common], help="leakage of a mechanism at a prior and over an l1 ball")
    p.add_argument("--mechanism", required=True, help="mechanism JSON {'matrix': [[...]]}")
    p.add_argument("--dist", required=True, help="distribution JSON {'probs': [...]} or an estimate output")
    p.add_argument("--beta", type=_probability, help="l1 radius of the uncertainty ball (probability units, in [0, 2))")
    p.add_argument("--samples", type=int, default=1000, help="random priors for the sampled capacity lower bound (default 1000)")
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("design", parents=[common], help="design an optimal mechanism robust to prior uncertainty")
    p.add_argument("--dist", required=True, help="estimate JSON {'probs': [...]}")
    p.add_argument("--beta", type=float, required=True, help="l1 radius of the uncertainty ball (probability units)")
    p.add_argument("--eps", type=EPS, required=True, help="target leakage in nats (or logK)")
    p.add_argument("--mode", choices=design.PATHS, default="vertex", help="closed_form (N=2), vertex (N<=6) or fixed_estimate")
    p.add_argument("--out", help="mechanism JSON output file (also printed to stdout)")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("noise", help="calibrate binary additive noise")
    noise = p.add_subparsers(dest="family", required=True, metavar="family")
    q = noise.add_parser("laplace", parents=[common], help="Laplace scale for a target leakage, or leakage for a scale")
    q.add_argument("--eps", type=EPS, help="target leakage in nats (or logK)")
    q.add_argument("--b", type=float, help="Laplace scale (data units); reports the certified leakage instead")
    q.add_argument("--delta", type=_probability, default=DEFAULT_DELTA, help="failure probability in [0, 1]; 0 gives the LDP scale 2/eps")
    q.add_argument("--m", type=COUNT, help="number of samples behind the estimate")
    q.add_argument("--p-min-hat", type=_probability, help="smallest estimated symbol probability, in (0, 0.5]")
    q.set_defaults(func=cmd_noise_laplace)
    q = noise.add_parser("gauss", parents=[common], help="(eps*, delta*) curve of the binary Gaussian mechanism")
    q.add_argument("--sigma", type=float, required=True, help="noise standard deviation (data units)")
    q.add_argument("--m", type=COUNT, required=True, help="number of samples behind the estimate")
    q.add_argument("--delta2", type=_probability, default=DEFAULT_DELTA, help="failure probability of the estimate (default 1e-6)")
    q.add_argument("--p-hat", type=_probability, default=0.5, help="estimated P(X = -1) (default 0.5)")
    q.add_argument("--eps-grid", type=GRID, default=parse_grid(DEFAULT_GAUSS_GRID), help="design levels in nats: start:stop:num or a comma list")
    q.add_argument("--out", help="curve CSV (default gauss_pml_sigma<sigma>_m<m>.csv)")
    q.add_argument("--baseline-out", help="also write the pLDP curve at the same sigma to this CSV")
    q.set_defaults(func=cmd_noise_gauss)

    p = sub.add_parser("tradeoff", parents=[common], help="leakage increase versus failure probability of an estimate")
    p.add_argument("--eps", type=EPS, required=True, help="design leakage in nats (or logK)")
    p.add_argument("--n", type=COUNT, required=True, help="alphabet size")
    p.add_argument("--m", type=COUNT, nargs="+", required=True, help="sample sizes (scientific notation allowed)")
    p.add_argument("--delta", type=float, help="report eps'(delta) per m instead of a delta_min curve")
    p.add_argument("--eps-prime-grid", type=GRID, help="eps' values in nats (default eps + 0.001 ... eps + 0.5)")
    p.add_argument("--out", help="CSV output file (default: stdout)")
    p.set_defaults(func=cmd_tradeoff)

    p = sub.add_parser("simulate", parents=[common], help="run a utility experiment described by a JSON config")
    p.add_argument("--config", required=True, help="experiment JSON (kind 'laplace' or 'gaussian')")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except PMLError as exc:
        print(f"pmlkit: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (KeyError, TypeError, ValueError) as exc:
        print(f"pmlkit: error: malformed input: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"pmlkit: error: numerical failure: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
