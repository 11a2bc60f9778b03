"""Command-line interface: generate instances, match, audit, simulate.

Exit codes: 0 success, 2 usage or configuration problems, 3 solver or
enumeration budget exhausted. Every output file embeds the config hash of
its inputs, and reruns with identical inputs write byte-identical files.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import audit as audit_mod
from . import serialize as ser
from .errors import (
    AuditConfigError,
    BundleBudgetError,
    InfeasibleProgramError,
    MaasMatchError,
    ModelValidationError,
    SolverBudgetError,
)
from .deferred import match_as
from .gen import generate_instance
from .maxweight import match_mw
from .mwas import expand_and_prune, run_mwas
from .sim import AnarchyConfig, SimConfig, run, run_anarchy, sweep

USAGE_ERROR = 2
RESOURCE_ERROR = 3


def _fail(message: str, code: int = USAGE_ERROR) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _load_config(path: str):
    try:
        data = ser.read_json(Path(path))
    except FileNotFoundError:
        raise ModelValidationError(f"config file not found: {path}")
    except ValueError as exc:
        raise ModelValidationError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise ModelValidationError(f"config file {path} must hold a JSON object")
    return data


def _check_out(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise ModelValidationError(f"refusing to overwrite {path} without --force")


def _apply_overrides(config: SimConfig, args) -> SimConfig:
    gen = config.gen
    if getattr(args, "seed", None) is not None:
        gen = replace(gen, seed=args.seed)
    if getattr(args, "lambda_", None) is not None:
        gen = replace(gen, lambda_orders=args.lambda_)
    config = replace(config, gen=gen)
    if getattr(args, "periods", None) is not None:
        config = replace(config, n_periods=args.periods)
    if getattr(args, "mechanism", None) is not None:
        config = replace(config, mechanism=args.mechanism)
    return config


def cmd_gen(args) -> int:
    data = _load_config(args.config)
    config = ser.sim_config_from_dict(data)
    if args.seed is not None:
        config = replace(config, gen=replace(config.gen, seed=args.seed))
    digest = ser.config_hash(ser.sim_config_to_dict(config))
    out = Path(args.out)
    _check_out(out, args.force)
    instance = generate_instance(config.gen)
    ser.write_json(out, ser.instance_to_dict(instance, digest, config.gen.seed))
    print(
        f"instance period={instance.period} suppliers={len(instance.suppliers)} "
        f"orders={len(instance.pool)} contracts={len(instance.contracts)} -> {out}"
    )
    return 0


def cmd_match(args) -> int:
    data = ser.read_json(Path(args.instance))
    instance = ser.instance_from_dict(data)
    out = Path(args.out)
    _check_out(out, args.force)
    current = instance.period
    if args.mechanism == "mw":
        matching = match_mw(instance, current)
        lb = None
    elif args.mechanism == "as":
        matching = match_as(instance, current)
        lb = None
    elif args.mechanism in ("mwas-max", "mwas-min", "mwas-card"):
        objective = {
            "mwas-max": "max-utility",
            "mwas-min": "min-utility",
            "mwas-card": "max-cardinality",
        }[args.mechanism]
        warm = match_as(instance, current)
        matching, lb, _ = run_mwas(instance, current, objective=objective, warm_matchings=(warm,))
    else:
        raise ModelValidationError(f"unknown mechanism {args.mechanism!r}")
    doc = ser.matching_to_dict(matching, data.get("config_hash", ""), current, args.mechanism)
    if lb is not None:
        doc["lb_blocking_groups"] = lb
    ser.write_json(out, doc)
    summary = doc["summary"]
    print(
        f"mechanism={args.mechanism} utility={summary['total_utility']:.6f} "
        f"matched_orders={summary['matched_orders']} matched_suppliers={summary['matched_suppliers']}"
    )
    return 0


def cmd_audit(args) -> int:
    instance_doc = ser.read_json(Path(args.instance))
    matching_doc = ser.read_json(Path(args.matching))
    if instance_doc.get("config_hash") != matching_doc.get("config_hash"):
        raise ModelValidationError("instance and matching config hashes do not match")
    instance = ser.instance_from_dict(instance_doc)
    matching = ser.matching_from_dict(matching_doc)
    out_dir = Path(args.out_dir)
    _check_out(out_dir / "records.json", args.force)
    current = instance.period

    if args.posterior:
        if not args.instance_next or not args.matching_next:
            raise ModelValidationError("--posterior requires --instance-next and --matching-next")
        next_instance_doc = ser.read_json(Path(args.instance_next))
        next_matching_doc = ser.read_json(Path(args.matching_next))
        if next_instance_doc.get("config_hash") != next_matching_doc.get("config_hash"):
            raise ModelValidationError("next-period instance and matching hashes do not match")
        records = audit_mod.posterior_audit(
            matching,
            ser.matching_from_dict(next_matching_doc),
            instance,
            ser.instance_from_dict(next_instance_doc),
        )
        n_orders = len({c.order_id for c in instance.contracts})
    else:
        graph = expand_and_prune(instance, current)
        records = audit_mod.find_blocking_pairs(matching, instance, current)
        records = records + audit_mod.find_blocking_groups(matching, instance, current, graph)
        n_orders = len(instance.pool)

    metrics = audit_mod.stability_metrics(
        records, matching, instance, n_orders=n_orders, n_suppliers=len(instance.suppliers)
    )
    rows = [ser.blocking_record_to_row(r) for r in records]
    ser.write_json(out_dir / "records.json", rows)
    ser.write_csv(out_dir / "records.csv", rows, ser.BLOCKING_RECORD_FIELDS)
    ser.write_json(out_dir / "metrics.json", metrics)

    theta_rows = []
    for theta in args.switching_cost or []:
        kept = audit_mod.apply_switching_cost(records, theta)
        theta_rows.append(
            {
                "theta": theta,
                "pairs": sum(1 for r in kept if r.kind == "pair"),
                "groups": sum(1 for r in kept if r.kind == "group"),
            }
        )
    if theta_rows:
        ser.write_csv(out_dir / "switching_costs.csv", theta_rows, ["theta", "pairs", "groups"])
    print(
        f"records={len(records)} pairs={sum(1 for r in records if r.kind == 'pair')} "
        f"groups={sum(1 for r in records if r.kind == 'group')} -> {out_dir}"
    )
    return 0


def _periods_csv_rows(result: dict) -> list[dict]:
    rows = []
    for rep in result["replications"]:
        for row in rep["periods"]:
            rows.append({"replication": rep["replication"], **row})
    return rows


def _aggregate_csv_rows(aggregate: dict) -> list[dict]:
    return [
        {"metric": name, "mean": cell["mean"], "ci95": cell["ci95"], "degenerate": cell["degenerate"]}
        for name, cell in sorted(aggregate.items())
    ]


def cmd_simulate(args) -> int:
    config = _apply_overrides(ser.sim_config_from_dict(_load_config(args.config)), args)
    out_dir = Path(args.out_dir)
    tag = f"{config.mechanism}_lam{config.gen.lambda_orders:g}_seed{config.gen.seed}"
    _check_out(out_dir / f"aggregate_{tag}.json", args.force)
    result = run(config)
    digest = ser.config_hash(ser.sim_config_to_dict(config))
    result["config_hash"] = digest
    ser.write_json(out_dir / f"run_{tag}.json", result)
    ser.write_json(out_dir / f"aggregate_{tag}.json", {"config_hash": digest, "aggregate": result["aggregate"]})
    ser.write_csv(
        out_dir / f"aggregate_{tag}.csv",
        _aggregate_csv_rows(result["aggregate"]),
        ["metric", "mean", "ci95", "degenerate"],
    )
    period_rows = _periods_csv_rows(result)
    if period_rows:
        ser.write_csv(out_dir / f"periods_{tag}.csv", period_rows, list(period_rows[0].keys()))
    impact = result["aggregate"]["impact_of_stability"]
    print(f"mechanism={config.mechanism} impact_of_stability={impact['mean']:.4f} (ci95 {impact['ci95']:.4f}) -> {out_dir}")
    return 0


def cmd_sweep(args) -> int:
    config = _apply_overrides(ser.sim_config_from_dict(_load_config(args.config)), args)
    out_dir = Path(args.out_dir)
    _check_out(out_dir / "sweep.json", args.force)
    result = sweep(config, args.lambdas)
    result["config_hash"] = ser.config_hash(ser.sim_config_to_dict(config))
    ser.write_json(out_dir / "sweep.json", result)
    rows = []
    for entry in result["runs"]:
        aggregate = entry["result"]["aggregate"]
        rows.append(
            {
                "lambda": entry["lambda"],
                **{name: cell["mean"] for name, cell in sorted(aggregate.items())},
            }
        )
    ser.write_csv(out_dir / "sweep.csv", rows, list(rows[0].keys()))
    print(f"trends={result['trends']} -> {out_dir}")
    return 0


def cmd_anarchy(args) -> int:
    config = _apply_overrides(ser.sim_config_from_dict(_load_config(args.config)), args)
    if config.anarchy is None:
        config = replace(config, anarchy=AnarchyConfig())
    if args.access is not None:
        config = replace(config, anarchy=replace(config.anarchy, access=args.access))
    out_dir = Path(args.out_dir)
    tag = f"{config.anarchy.access}_lam{config.gen.lambda_orders:g}_seed{config.gen.seed}"
    _check_out(out_dir / f"anarchy_{tag}.json", args.force)
    result = run_anarchy(config)
    result["config_hash"] = ser.config_hash(ser.sim_config_to_dict(config))
    ser.write_json(out_dir / f"anarchy_{tag}.json", result)
    rows = _periods_csv_rows(result)
    if rows:
        ser.write_csv(out_dir / f"anarchy_{tag}.csv", rows, list(rows[0].keys()))
    fraction = result["aggregate"]["anarchy_utility_fraction"]
    print(f"access={config.anarchy.access} anarchy_fraction={fraction['mean']:.4f} -> {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maasmatch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a market instance file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("match", help="run one mechanism on an instance file")
    p.add_argument("--instance", required=True)
    p.add_argument("--mechanism", required=True, choices=["mw", "mwas-max", "mwas-min", "mwas-card", "as"])
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("audit", help="audit a matching for blocking pairs and groups")
    p.add_argument("--instance", required=True)
    p.add_argument("--matching", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--posterior", action="store_true")
    p.add_argument("--instance-next")
    p.add_argument("--matching-next")
    p.add_argument("--switching-cost", type=float, nargs="*")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("simulate", help="run the multi-period experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--periods", type=int)
    p.add_argument("--lambda", dest="lambda_", type=float)
    p.add_argument("--mechanism", choices=["mw", "mwas-max", "mwas-min", "mwas-card", "as"])
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run the experiment across arrival rates")
    p.add_argument("--config", required=True)
    p.add_argument("--lambdas", type=float, nargs="+", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--periods", type=int)
    p.add_argument("--mechanism", choices=["mw", "mwas-max", "mwas-min", "mwas-card", "as"])
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("anarchy", help="run the defection experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--access", choices=["complete", "restricted"])
    p.add_argument("--seed", type=int)
    p.add_argument("--lambda", dest="lambda_", type=float)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_anarchy)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SolverBudgetError, BundleBudgetError) as exc:
        return _fail(str(exc), RESOURCE_ERROR)
    except FileNotFoundError as exc:
        return _fail(str(exc))
    except (ModelValidationError, AuditConfigError, InfeasibleProgramError, MaasMatchError) as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
