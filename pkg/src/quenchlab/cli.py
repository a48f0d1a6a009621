"""Command-line front end.

Exit status: 0 when every bound report is satisfied, 1 on any violation,
2 on a configuration error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import checks, disorder
from .config import load_plan
from .errors import ConfigError, QuenchlabError
from .experiment import (ExperimentPlan, ExperimentResult, SamplerParams, format_csv, format_json, run,
                         write_outputs)

EXPERIMENT_COMMANDS = {"selfavg": "selfavg", "chaos": "chaos", "universality": "universality",
                       "ultrametric": "ultrametric"}
CHECK_COMMANDS = ("aibp", "derivbound")
COMMANDS = tuple(EXPERIMENT_COMMANDS) + CHECK_COMMANDS + ("verify-all",)

PSPIN2 = {"model": "mixed_pspin", "beta": {"2": 1.0}, "h": 0.0}


def default_plans(seed: int, quick: bool) -> dict[str, ExperimentPlan]:
    """Built-in plans: the acceptance-scale runs, and trend-only runs."""
    rad, three = disorder.rademacher(), disorder.threepoint()
    plans = {
        "selfavg": ExperimentPlan("selfavg", PSPIN2, {"y": rad}, n_values=(6, 8, 10, 12), realizations=200,
                                  seed=seed),
        "chaos": ExperimentPlan("chaos", PSPIN2, {"y": rad}, n_values=(10,), t_values=(0.0, 0.5, 0.9),
                                realizations=100, seed=seed),
        "universality": ExperimentPlan("universality", PSPIN2, {"y": three}, n_values=(8, 12), realizations=400,
                                       control=True, seed=seed),
        "ultrametric": ExperimentPlan("ultrametric", {"model": "mixed_pspin", "beta": {"2": 0.5, "3": 0.5, "4": 0.5},
                                                      "h": 0.0},
                                      {"y": three}, n_values=(10,), eps_values=(0.05, 0.1, 0.2, 2.5),
                                      realizations=20 if quick else 100, seed=seed,
                                      sampler=SamplerParams(inner_samples=2000 if quick else 8000)),
        "interpolation": ExperimentPlan("interpolation", PSPIN2, {"y": three}, n_values=(10,),
                                        s_values=tuple(j / 10 for j in range(11)),
                                        realizations=50 if quick else 200, seed=seed),
        "temperature_chaos": ExperimentPlan("temperature_chaos", PSPIN2, {"y": rad},
                                            model2={"model": "mixed_pspin", "beta": {"2": 1.5}, "h": 0.0},
                                            n_values=(10,), eps_values=(0.1, 0.2, 0.5, 2.5),
                                            realizations=50 if quick else 200, seed=seed),
    }
    if not quick:
        plans["selfavg"] = plans["selfavg"].with_overrides(n_values=(6, 8, 10, 12, 16))
        plans["universality"] = plans["universality"].with_overrides(n_values=(8, 12, 16))
    return plans


TREND_ONLY = ("interpolation", "temperature_chaos")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="quenchlab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name in EXPERIMENT_COMMANDS:
            p.add_argument("plan", nargs="?", help="JSON plan file (default: built-in plan)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--realizations", type=int, default=None)
        p.add_argument("--engine", choices=("exact", "mcmc"), default=None)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out", default="reports", help="output directory")
        p.add_argument("--quick", action="store_true", help="reduced profile (exact engines, N <= 12)")
    return ap


def _check_result_files(out: Path, name: str, reports, params: dict):
    from .experiment import CSV_COLUMNS

    rows = []
    for b in reports:
        row = b.to_row()
        rows.append({"experiment": name, "kind": "bound", "name": row["name"], "params": row["params"],
                     "seed": params.get("seed", ""), "realizations": "", "value": row["lhs"],
                     "stderr": row["stderr"], "rhs": row["rhs"], "satisfied": row["satisfied"]})
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.csv").write_text(format_csv(rows, CSV_COLUMNS))
    payload = {"check": name, "params": params, "reports": [b.to_dict() for b in reports],
               "satisfied": all(b.satisfied for b in reports)}
    (out / f"{name}.json").write_text(format_json(payload))


def _run_check(name: str, seed: int, quick: bool):
    if name == "aibp":
        return checks.aibp_check(), {}
    if name == "derivbound":
        return checks.derivative_check(seed), {"seed": seed}
    if name == "oracle":
        return checks.oracle_check(seed), {"seed": seed}
    if name == "fkg":
        return checks.fkg_check(seed), {"seed": seed}
    if name == "identities":
        return checks.identity_check(seed), {"seed": seed}
    raise KeyError(name)


def _summary_entry(kind, reports, extra=None):
    bad = [b for b in reports if not b.satisfied]
    entry = {"kind": kind, "reports": len(reports), "violations": len(bad), "satisfied": not bad}
    if reports:
        entry["min_margin"] = min(b.rhs - b.lhs for b in reports)
    if extra:
        entry.update(extra)
    return entry


def _apply_overrides(plan: ExperimentPlan, args) -> ExperimentPlan:
    return plan.with_overrides(seed=args.seed, realizations=args.realizations, engine=args.engine,
                               threads=args.threads)


def _report_line(name: str, ok: bool, detail: str = ""):
    print(f"{'PASS' if ok else 'FAIL'} {name}{(' ' + detail) if detail else ''}")


def verify_all(args) -> int:
    seed = 0 if args.seed is None else args.seed
    out = Path(args.out)
    plans = default_plans(seed, args.quick)
    summary = {"seed": seed, "profile": "quick" if args.quick else "full", "checks": {}, "experiments": {}}
    ok = True
    names = ["aibp", "derivbound", "fkg", "identities"] + ([] if args.quick else ["oracle"])
    for name in names:
        reports, params = _run_check(name, seed, args.quick)
        _check_result_files(out, name, reports, params)
        entry = _summary_entry("check", reports)
        summary["checks"][name] = entry
        ok &= entry["satisfied"]
        _report_line(name, entry["satisfied"], f"({entry['reports']} reports)")
    if args.quick:
        summary["checks"]["oracle"] = {"kind": "check", "skipped": "quick profile runs exact engines only"}
    for name, plan in plans.items():
        plan = plan.with_overrides(realizations=args.realizations, threads=args.threads)
        result = run(plan)
        write_outputs(result, out, name)
        gated = name not in TREND_ONLY
        entry = _summary_entry("experiment" if gated else "trend", result.reports,
                               {"trends": result.trends} if result.trends else None)
        if not gated:
            entry["satisfied"] = None
        summary["experiments"][name] = entry
        if gated:
            ok &= entry["satisfied"]
            _report_line(name, entry["satisfied"], f"({entry['reports']} reports)")
        else:
            print(f"TREND {name}")
    summary["satisfied"] = bool(ok)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(format_json(summary))
    return 0 if ok else 1


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "verify-all":
            return verify_all(args)
        out = Path(args.out)
        seed = 0 if args.seed is None else args.seed
        if args.command in CHECK_COMMANDS:
            reports, params = _run_check(args.command, seed, args.quick)
            _check_result_files(out, args.command, reports, params)
            ok = all(b.satisfied for b in reports)
            _report_line(args.command, ok, f"({len(reports)} reports)")
            return 0 if ok else 1
        if args.plan:
            plan = load_plan(args.plan)
        else:
            plan = default_plans(seed, args.quick)[EXPERIMENT_COMMANDS[args.command]]
        if plan.experiment != EXPERIMENT_COMMANDS[args.command] and not (
                args.command == "universality" and plan.experiment == "interpolation"):
            raise ConfigError(f"plan describes a {plan.experiment!r} experiment, not {args.command!r}")
        plan = _apply_overrides(plan, args)
        result: ExperimentResult = run(plan)
        write_outputs(result, out, args.command)
        for b in result.reports:
            _report_line(b.name, b.satisfied, f"lhs={b.lhs:.6g} stderr={b.stderr:.3g} rhs={b.rhs:.6g}")
        return 0 if result.satisfied else 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except QuenchlabError as exc:
        print(f"invalid plan: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
