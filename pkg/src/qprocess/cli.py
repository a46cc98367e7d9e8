"""Command-line interface: ``qproc {analyze,exact,simulate,clt,rate,lln,variance,lemmas}``.

Output is deterministic for a fixed seed and independent of QPROC_WORKERS.
Exit codes: 0 success, 2 invalid law/assumptions, 3 truncation or cap
failure, 4 convergence failure, 5 degenerate sample.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import core, limits, moments, series
from .errors import (
    AssumptionViolated,
    CapTooSmall,
    ConvergenceFailure,
    CriticalLawUnsupported,
    DegenerateSample,
    NonpositiveCRho,
    NotAProbabilityVector,
    TruncationOverflow,
)
from .offspring import OffspringLaw, derive_params, format_law, parse_law

EXIT_CODES = (
    ((NotAProbabilityVector, AssumptionViolated, CriticalLawUnsupported, NonpositiveCRho), 2),
    ((TruncationOverflow, CapTooSmall), 3),
    ((ConvergenceFailure,), 4),
    ((DegenerateSample,), 5),
)

DEFAULTS = {
    "law": "0.25,0,0.75",
    "n": 10,
    "paths": 100_000,
    "seed": 1,
    "trunc_n": 512,
    "trunc_m": 512,
    "jcap": 512,
    "lcap": 4096,
    "eps": None,
    "grid": None,
    "format": None,
    "out": None,
}

# exact tables are CSV unless asked otherwise; reports are JSON.
DEFAULT_FORMAT = {"exact": "csv"}


def _grid(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def read_config(path: str) -> dict:
    """key=value lines; '#' starts a comment.  Keys use flag names (dashes or underscores)."""
    cfg = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        cfg[key.strip().replace("-", "_")] = value.strip()
    return cfg


def _typed(key: str, value: str):
    if key in ("n", "paths", "seed", "trunc_n", "trunc_m", "jcap", "lcap"):
        return int(value)
    if key == "eps":
        return float(value)
    if key == "grid":
        return _grid(value)
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file; explicit flags win")
    common.add_argument("--law", help='offspring probabilities "p0,p1,...,pK"')
    common.add_argument("--n", type=int)
    common.add_argument("--paths", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--trunc-n", type=int)
    common.add_argument("--trunc-m", type=int)
    common.add_argument("--jcap", type=int)
    common.add_argument("--lcap", type=int)
    common.add_argument("--eps", type=float)
    common.add_argument("--grid", type=_grid, help="comma list of n values")
    common.add_argument("--format", choices=("json", "csv"))
    common.add_argument("--out", help="output file (default stdout)")

    parser = argparse.ArgumentParser(prog="qproc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("analyze", parents=[common], help="derived parameters of a law")
    p = sub.add_parser("exact", parents=[common], help="exact joint law of (W(n), S_n)")
    p.add_argument("--method", choices=("dp", "gf"), default="dp")
    p.add_argument("--marginal", action="store_true", help="only the S_n marginal")
    p = sub.add_parser("simulate", parents=[common], help="Monte-Carlo draws of (W(n), S_n)")
    p.add_argument("--trajectory", action="store_true", help="dump one path as step,W")
    sub.add_parser("clt", parents=[common], help="KS distance of standardized S_n to N(0,1)")
    sub.add_parser("rate", parents=[common], help="log-log slope of KS vs n")
    sub.add_parser("lln", parents=[common], help="S_n/n concentration around 1 + gamma_q")
    sub.add_parser("variance", parents=[common], help="Var S_n / (2 C_rho n) diagnostic")
    sub.add_parser("lemmas", parents=[common], help="expansion checks and the reciprocal representation")
    return parser


def resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Merge defaults < config file < explicit flags."""
    merged = dict(DEFAULTS)
    if args.config:
        for key, value in read_config(args.config).items():
            if key in merged:
                merged[key] = _typed(key, value)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    for key, value in merged.items():
        setattr(args, key, value)
    return args


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


def cmd_analyze(args, law: OffspringLaw) -> str:
    p = derive_params(law)
    d = {
        "law": format_law(law),
        "m": law.mean_m,
        "q": p.q,
        "beta": p.beta,
        "gamma_q": p.gamma_q,
        "b_q": p.b_q,
        "alpha": p.alpha,
        "c_rho": p.c_rho,
        "classification": p.classification,
    }
    if args.format == "csv":
        return "key,value\n" + "".join(f"{k},{v!r}\n" if isinstance(v, float) else f"{k},{v}\n"
                                       for k, v in d.items() if k != "law")
    return _dump_json(d)


def _table_text(table: core.JointTable, marginal: bool, fmt: str) -> str:
    if fmt == "json":
        if marginal:
            m = table.marginal_S()
            return _dump_json({"n": table.n, "leakage": table.leakage,
                               "S": {str(l): float(m[l]) for l in np.nonzero(m)[0]}})
        return _dump_json({"n": table.n, "leakage": table.leakage,
                           "cells": [[j, l, p] for j, l, p in table.items()]})
    rows = []
    if marginal:
        m = table.marginal_S()
        rows.append("l,prob")
        rows += [f"{l},{float(m[l])!r}" for l in np.nonzero(m)[0]]
    else:
        rows.append("j,l,prob")
        rows += [f"{j},{l},{p!r}" for j, l, p in table.items()]
    rows.append(f"#leakage={float(table.leakage)!r}")
    return "\n".join(rows) + "\n"


def cmd_exact(args, law: OffspringLaw) -> str:
    params = derive_params(law)
    if args.method == "dp":
        table = core.dp_joint_distribution(params, law, args.n, args.jcap, args.lcap)
    else:
        J = series.joint_gf(law, args.n, args.trunc_n, args.trunc_m)
        probs = np.where(J.coeffs > 1e-15, J.coeffs, 0.0)
        leak = J.leakage
        if leak > core.DP_MAX_LEAKAGE:
            raise CapTooSmall(f"leakage {leak:.3g} at truncation ({args.trunc_n}, {args.trunc_m})")
        table = core.JointTable(args.n, probs, leak)
    return _table_text(table, args.marginal, args.format)


def cmd_simulate(args, law: OffspringLaw) -> str:
    params = derive_params(law)
    if args.trajectory:
        traj = core.simulate_trajectory(core.stream(args.seed, 0), params, law, 1, args.n,
                                        seed_info=f"seed={args.seed},stream=0")
        lines = ["step,W"] + [f"{k},{int(w)}" for k, w in enumerate(traj.states)]
        return "\n".join(lines) + f"\n#S_n={traj.total_progeny}\n"
    sample = core.simulate_batch(args.seed, params, law, 1, args.n, args.paths)
    if args.format == "csv":
        lines = ["path,W,S"] + [f"{i},{int(w)},{int(s)}"
                                for i, (w, s) in enumerate(zip(sample.states, sample.values))]
        return "\n".join(lines) + "\n"
    vals, counts = np.unique(sample.values, return_counts=True)
    return _dump_json({
        "n": args.n,
        "paths": args.paths,
        "seed": args.seed,
        "mean_S": float(sample.values.mean()),
        "var_S": float(sample.values.var(ddof=1)) if args.paths > 1 else 0.0,
        "exact_mean_S": moments.expected_Sn(params, args.n),
        "histogram_S": {str(int(v)): int(c) for v, c in zip(vals, counts)},
    })


def cmd_clt(args, law: OffspringLaw) -> str:
    grid = args.grid or [args.n]
    reports = limits.clt_grid(law, grid, args.paths, args.seed)
    if args.format == "csv":
        return limits.report_to_csv([r.to_dict() for r in reports])
    if len(reports) == 1:
        return _dump_json(reports[0].to_dict())
    return _dump_json([r.to_dict() for r in reports])


def cmd_rate(args, law: OffspringLaw) -> str:
    probe = limits.rate_probe_clt(law, args.grid or limits.DEFAULT_RATE_GRID, args.paths, args.seed)
    if args.format == "csv":
        return limits.report_to_csv([{"n": n, "ks": k} for n, k in zip(probe.n_grid, probe.ks)])
    return _dump_json(probe.to_dict())


def cmd_lln(args, law: OffspringLaw) -> str:
    r = limits.lln_check(law, args.grid or limits.DEFAULT_LLN_GRID, args.paths, args.eps, args.seed)
    if args.format == "csv":
        return limits.report_to_csv([
            {"n": n, "mean": m, "std_error": se, "exact_mean": e, "deviation_prob": d, "ks_degenerate": k}
            for n, m, se, e, d, k in zip(r.n_grid, r.means, r.std_errors, r.exact_means,
                                         r.deviation_probs, r.ks_degenerate)
        ])
    return _dump_json(r.to_dict())


def cmd_variance(args, law: OffspringLaw) -> str:
    d = limits.variance_diagnostic(law, args.grid or (500, 1000, 2000))
    if args.format == "csv":
        return limits.report_to_csv([{"n": n, "ratio": r} for n, r in zip(d["n_grid"], d["ratios"])])
    return _dump_json(d)


def cmd_lemmas(args, law: OffspringLaw) -> str:
    reports = [moments.verify_lemma(law, lid) for lid in moments.LEMMAS]
    rep = moments.check_representation(law)
    if args.format == "csv":
        rows = []
        for r in reports:
            for k, (f, t, res, ok) in enumerate(zip(r.fitted_coeffs, r.target_coeffs, r.residuals, r.passed)):
                rows.append({"lemma": r.lemma_id, "coeff": k + 1, "fitted": f, "target": t,
                             "residual": res, "passed": ok})
        return limits.report_to_csv(rows)
    return _dump_json({
        "lemmas": [r.to_dict() for r in reports],
        "representation": {
            "n": rep.n,
            "points": rep.points,
            "bound_holds": rep.bound_holds,
            "min_abs_R": rep.min_abs_R,
            "resolved": rep.resolved,
            "cauchy": rep.cauchy,
        },
    })


COMMANDS = {
    "analyze": cmd_analyze,
    "exact": cmd_exact,
    "simulate": cmd_simulate,
    "clt": cmd_clt,
    "rate": cmd_rate,
    "lln": cmd_lln,
    "variance": cmd_variance,
    "lemmas": cmd_lemmas,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = resolve(args)
        if args.format is None:
            args.format = DEFAULT_FORMAT.get(args.command, "json")
        law = parse_law(args.law)
        text = COMMANDS[args.command](args, law)
    except Exception as exc:
        for kinds, code in EXIT_CODES:
            if isinstance(exc, kinds):
                print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
                return code
        raise
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
