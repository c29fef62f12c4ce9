"""Command-line interface: ``delqg validate|synth|verify|sweep``.

Exit status is 0 when everything passes, 1 on validation or check
failures (and synthesis errors), and 2 on usage, parse or I/O errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
import time

from . import __version__
from .documents import RunRecord, dumps, gain_bundle, scenario_hash
from .estimation import EstimationError
from .model import Mode, Pattern, Scenario, ScenarioError, load_scenario, validate
from .oracle import oracle_optimize, params_from_policy
from .policy import assemble_policy, pattern_costs, synthesize
from .riccati import NumericalError
from .sim import exact_closed_loop_cost, monte_carlo

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

#: Relative slack of the cost comparisons made by ``verify`` and ``sweep``.
COST_RTOL = 1e-9
ORACLE_UPPER = 1e-7
ORACLE_LOWER = 1e-5


class _UsageError(Exception):
    pass


def _read(path: str) -> Scenario:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise _UsageError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return load_scenario(text)
    except ScenarioError as exc:
        raise _UsageError(f"{path}: {exc}") from None


def _write(path: str, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise _UsageError(f"cannot write {path}: {exc.strerror}") from None


def _require_valid(sc: Scenario) -> bool:
    report = validate(sc.model, sc.pattern, sc.mode)
    if not report.ok:
        print(report, file=sys.stderr)
    return report.ok


def cmd_validate(args) -> int:
    sc = _read(args.scenario)
    report = validate(sc.model, sc.pattern, sc.mode)
    print(report)
    return EXIT_OK if report.ok else EXIT_FAIL


def cmd_synth(args) -> int:
    sc = _read(args.scenario)
    if not _require_valid(sc):
        return EXIT_FAIL
    syn = synthesize(sc.model, sc.pattern, sc.mode, grad_tol=sc.options.grad_tol)
    if args.out:
        _write(args.out, dumps(gain_bundle(syn, sc.document)))
    print(f"J* = {syn.cost!r}")
    if not syn.certified:
        print("note: constrained output law; cost is exact but optimality is not certified")
    return EXIT_OK


def _ordering_checks(costs: dict[Pattern, float]) -> dict[str, bool]:
    def le(a, b):
        return costs[a] <= costs[b] + COST_RTOL * max(1.0, abs(costs[b]))

    return {
        "ordering centralized <= no-delay": le(Pattern.CENTRALIZED, Pattern.NO_DELAY),
        "ordering no-delay <= (1,inf)": le(Pattern.NO_DELAY, Pattern.ONE_INF),
        "ordering (1,0) <= (1,inf)": le(Pattern.ONE_ZERO, Pattern.ONE_INF),
    }


def cmd_verify(args) -> int:
    sc = _read(args.scenario)
    if not _require_valid(sc):
        return EXIT_FAIL
    rollouts = sc.options.mc_rollouts if args.rollouts is None else args.rollouts
    seed = sc.options.seed if args.seed is None else args.seed
    timing = {}
    checks: dict[str, bool] = {}

    t0 = time.perf_counter()
    syn = synthesize(sc.model, sc.pattern, sc.mode, grad_tol=sc.options.grad_tol)
    policy = syn.policy
    if args.corrupt_gain:
        F = syn.F + args.corrupt_gain * (syn.F != 0)
        policy = assemble_policy(sc.model, sc.pattern, sc.mode, syn.gains, F, syn.est)
    timing["synth"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    exact = exact_closed_loop_cost(sc.model, policy)
    checks["exact cost matches J*"] = abs(exact - syn.cost) <= COST_RTOL * max(1.0, abs(syn.cost))
    checks.update(_ordering_checks(pattern_costs(sc.model)))
    timing["exact"] = time.perf_counter() - t0

    mc = None
    if rollouts > 0:
        t0 = time.perf_counter()
        mc = monte_carlo(sc.model, policy, rollouts, seed)
        checks["monte carlo within 3 SE"] = mc.within(exact)
        checks.update({f"estimator {k}": v for k, v in mc.estimator_checks().items()})
        timing["monte_carlo"] = time.perf_counter() - t0

    oracle_cost = None
    if args.oracle:
        t0 = time.perf_counter()
        res = oracle_optimize(sc.model, sc.pattern, sc.mode, restarts=args.restarts,
                              max_iters=sc.options.max_iters, seed=seed,
                              init=[params_from_policy(policy)])
        oracle_cost = res.best_cost
        checks["oracle two-sided bound"] = (
            syn.cost * (1 - ORACLE_LOWER) <= oracle_cost <= syn.cost * (1 + ORACLE_UPPER))
        checks["policy attains oracle optimum"] = exact <= oracle_cost * (1 + ORACLE_LOWER)
        timing["oracle"] = time.perf_counter() - t0

    record = RunRecord(
        scenario_hash=scenario_hash(sc.document), command="verify", pattern=sc.pattern.value,
        mode=sc.mode.value, cost=syn.cost, exact_cost=exact,
        mc_mean=None if mc is None else mc.mean_cost, mc_se=None if mc is None else mc.std_err,
        rollouts=rollouts, seed=seed, oracle_cost=oracle_cost, checks=checks, timing=timing,
        version=__version__)
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    print(f"J* = {syn.cost!r}  exact = {exact!r}" + (
        "" if mc is None else f"  MC = {mc.mean_cost:.6g} +/- {mc.std_err:.2g}"))
    if args.out:
        _write(args.out, dumps(record.to_document()))
    return EXIT_OK if record.passed else EXIT_FAIL


def _sweep_values(param: str, raw: str) -> list:
    items = [s.strip() for s in raw.split(",") if s.strip()]
    try:
        if param == "noise":
            return [float(s) for s in items]
        if param == "horizon":
            vals = [int(s) for s in items]
            if min(vals) < 1:
                raise ValueError("horizon must be positive")
            return vals
        return [Pattern(s) for s in items]
    except ValueError as exc:
        raise _UsageError(f"bad --values for {param}: {exc}") from None


def cmd_sweep(args) -> int:
    sc = _read(args.scenario)
    if not _require_valid(sc):
        return EXIT_FAIL
    values = _sweep_values(args.param, args.values)
    cols = [Pattern.ONE_ZERO, Pattern.ONE_INF, Pattern.CENTRALIZED, Pattern.NO_DELAY]
    header = ["value"] + [f"J_{p.value}" for p in cols]
    if args.oracle:
        header += ["oracle_one_zero", "oracle_one_inf"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    ok = True
    for val in values:
        model = sc.model
        if args.param == "noise":
            model = model.scaled_noise(val)
        elif args.param == "horizon":
            model = model.replace(N=val)
        costs = pattern_costs(model)
        ok &= all(_ordering_checks(costs).values())
        if args.param == "pattern":
            row = [val.value] + [repr(costs[p]) if p is val else "" for p in cols]
        else:
            row = [repr(val)] + [repr(costs[p]) for p in cols]
        if args.oracle:
            for p in (Pattern.ONE_ZERO, Pattern.ONE_INF):
                res = oracle_optimize(model.replace(C=None, W=None), p, Mode.STATE,
                                      restarts=args.restarts, seed=sc.options.seed)
                row.append(repr(res.best_cost))
                ok &= abs(res.best_cost - costs[p]) <= ORACLE_LOWER * max(abs(costs[p]), 1e-12)
        writer.writerow(row)
    if args.out:
        _write(args.out, buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="delqg", description="Optimal two-player LQG control under delayed sharing.")
    parser.add_argument("--version", action="version", version=f"delqg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a scenario's structure")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("synth", help="synthesize the optimal law and print J*")
    p.add_argument("scenario")
    p.add_argument("--out", help="write the gain bundle here")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("verify", help="certify the synthesized law")
    p.add_argument("scenario")
    p.add_argument("--rollouts", type=int, help="Monte Carlo rollouts (0 to skip)")
    p.add_argument("--seed", type=int)
    p.add_argument("--oracle", action="store_true", help="also run the brute-force oracle")
    p.add_argument("--restarts", type=int, default=8)
    p.add_argument("--out", help="write the run record here")
    p.add_argument("--corrupt-gain", type=float, default=0.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="optimal costs of all patterns (state feedback) vs a "
                                     "parameter, as CSV")
    p.add_argument("scenario")
    p.add_argument("--param", required=True, choices=["noise", "horizon", "pattern"])
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--oracle", action="store_true")
    p.add_argument("--restarts", type=int, default=8)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"delqg: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, EstimationError, ValueError) as exc:
        print(f"delqg: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
