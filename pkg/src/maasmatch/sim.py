"""Multi-period marketplace simulation.

Each period: arrivals join the carryover pool, contracts are quoted against
current capacities, the configured mechanism matches, matched orders leave
(deducting production hours from supplier schedules earliest-first), and
suppliers list capacity for the next horizon period. A maximum-weight
matching is always computed side by side on a frozen copy of the period's
pool so stability ratios compare identical inputs. The anarchy experiment
instead lets participants defect from the maximum-weight allocation via one
final proposal round per period.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

from scipy import stats as scipy_stats

from .audit import (
    apply_switching_cost,
    find_blocking_pairs,
    find_blocking_groups,
    posterior_audit,
    stability_metrics,
)
from .deferred import first_round_offers, match_as
from .errors import MaasMatchError, ModelValidationError
from .gen import GenConfig, MarketInstance, enumerate_contracts, generate_orders, generate_suppliers, rng_for
from .maxweight import match_mw
from .model import Matching, Order, Period, Supplier
from .mwas import DEFAULT_BUNDLE_CAP, expand_and_prune, min_blocking_groups, run_mwas

TOL = 1e-9

MECHANISMS = ("mw", "mwas-max", "mwas-min", "mwas-card", "as")

# Stream tags for the replication-level random keys.
_STREAM_SUPPLIERS = 10
_STREAM_ORDERS = 11
_STREAM_CAPACITY = 12


@dataclass
class AnarchyConfig:
    access: str = "complete"  # "complete" | "restricted"
    n_periods: int = 100


@dataclass
class SimConfig:
    gen: GenConfig = field(default_factory=GenConfig)
    mechanism: str = "as"
    n_periods: int = 15
    replications: int = 5
    audits: bool = True
    posterior: bool = False
    switching_cost_sweep: tuple[float, ...] = ()
    anarchy: AnarchyConfig | None = None
    bundle_cap: int = DEFAULT_BUNDLE_CAP
    node_limit: int | None = None
    as_mode: str = "literal"

    def validate(self) -> None:
        self.gen.validate()
        if self.mechanism not in MECHANISMS:
            raise ModelValidationError(f"unknown mechanism {self.mechanism!r}")
        if self.n_periods < 1 or self.replications < 1:
            raise ModelValidationError("n_periods and replications must be at least 1")
        if self.anarchy is not None and self.anarchy.access not in ("complete", "restricted"):
            raise ModelValidationError(f"unknown access mode {self.anarchy.access!r}")


def worker_count() -> int:
    raw = os.environ.get("MAAS_MATCH_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _group_by_arrival(orders: list[Order]) -> dict[Period, list[Order]]:
    grouped: dict[Period, list[Order]] = {}
    for o in orders:
        grouped.setdefault(o.arrival, []).append(o)
    return grouped


def _snapshot_instance(instance: MarketInstance) -> MarketInstance:
    suppliers = [
        replace(s, capacity_by_period=dict(s.capacity_by_period), known_clients=set(s.known_clients))
        for s in instance.suppliers
    ]
    return MarketInstance(
        suppliers=suppliers,
        orders_by_period=dict(instance.orders_by_period),
        contracts=list(instance.contracts),
        period=instance.period,
    )


def deduct_capacity(supplier: Supplier, contracts, current: Period) -> float:
    """Remove matched production hours from the schedule, earliest periods first.

    Contracts are processed in due order, consuming listed capacity from the
    current period up to each due date. Returns the total hours deducted.
    """
    total = 0.0
    for c in sorted(contracts, key=lambda c: (c.terms.due, c.id)):
        remaining = c.production_hours
        for period in sorted(supplier.capacity_by_period):
            if period < current or period > c.terms.due:
                continue
            take = min(remaining, supplier.capacity_by_period[period])
            supplier.capacity_by_period[period] -= take
            remaining -= take
            if remaining <= TOL:
                break
        if remaining > 1e-6:
            raise ModelValidationError(
                f"supplier {supplier.id}: {remaining:.6f}h of contract {c.id} found no capacity"
            )
        total += c.production_hours
    for period, hours in supplier.capacity_by_period.items():
        if hours < -1e-6:
            raise ModelValidationError(f"supplier {supplier.id}: negative capacity in period {period}")
        if hours < 0.0:
            supplier.capacity_by_period[period] = 0.0
    return total


def _advance_schedules(suppliers, new_period_start, horizon, listing_range, rng) -> None:
    """Drop past periods and list fresh capacity for the new horizon edge."""
    new_edge = new_period_start + horizon - 1
    for s in sorted(suppliers, key=lambda s: s.id):
        for period in [p for p in s.capacity_by_period if p < new_period_start]:
            del s.capacity_by_period[period]
        s.capacity_by_period[new_edge] = float(rng.uniform(*listing_range))


def _percentile_ranks(matching: Matching, instance: MarketInstance):
    """Per matched order and per accepted contract: list position over list length."""
    by_order: dict[str, list] = {}
    by_supplier: dict[str, list] = {}
    for c in instance.contracts:
        by_order.setdefault(c.order_id, []).append(c)
        by_supplier.setdefault(c.supplier_id, []).append(c)
    order_ranks = []
    for order_id, assigned in sorted(matching.assigned.items()):
        offers = sorted(by_order[order_id], key=lambda c: (-c.u_order, c.id))
        pos = next(i for i, c in enumerate(offers) if c.id == assigned.id) + 1
        order_ranks.append(pos / len(offers))
    supplier_ranks = []
    for supplier_id, contracts in sorted(matching.by_supplier().items()):
        offers = sorted(by_supplier[supplier_id], key=lambda c: (-c.u_supplier, c.id))
        positions = {c.id: i + 1 for i, c in enumerate(offers)}
        for c in contracts:
            supplier_ranks.append(positions[c.id] / len(offers))
    return order_ranks, supplier_ranks


def _dispatch_mechanism(config: SimConfig, instance: MarketInstance, current: Period, graph, warm_as):
    mech = config.mechanism
    if mech == "mw":
        return match_mw(instance, current, node_limit=config.node_limit), None
    if mech == "as":
        return warm_as, None
    objective = {"mwas-max": "max-utility", "mwas-min": "min-utility", "mwas-card": "max-cardinality"}[mech]
    matching, lb, _ = run_mwas(
        instance,
        current,
        objective=objective,
        warm_matchings=(warm_as,),
        node_limit=config.node_limit,
        graph=graph,
    )
    return matching, lb


def _simulate_replication(config: SimConfig, rep: int) -> dict:
    gen = config.gen
    suppliers = generate_suppliers(gen, rng_for(gen.seed, _STREAM_SUPPLIERS, rep))
    capacity_rng = rng_for(gen.seed, _STREAM_CAPACITY, rep)
    supplier_map = {s.id: s for s in suppliers}

    carryover: list[Order] = []
    arrived_total = 0
    expired_total = 0
    matched_order_ids: set[str] = set()
    matched_supplier_ids: set[str] = set()
    mech_total = 0.0
    mw_total = 0.0
    order_u_samples: list[float] = []
    supplier_u_samples: list[float] = []
    order_rank_samples: list[float] = []
    supplier_rank_samples: list[float] = []
    pair_records = []
    group_records = []
    posterior_records = []
    period_rows = []
    snapshots: dict[Period, MarketInstance] = {}
    matchings: dict[Period, Matching] = {}
    needs_graph = config.mechanism.startswith("mwas") or config.audits

    for t in range(1, config.n_periods + 1):
        arrivals = generate_orders(gen, t, rng_for(gen.seed, _STREAM_ORDERS, rep, t))
        arrived_total += len(arrivals)
        live = [o for o in carryover if o.due - t >= 1]
        expired_total += len(carryover) - len(live)
        pool = sorted(live + arrivals, key=lambda o: o.id)
        contracts = enumerate_contracts(
            pool,
            suppliers,
            t,
            contracts_per_pair_max=gen.contracts_per_pair_max,
            price_spread_fraction=gen.price_spread_fraction,
        )
        instance = MarketInstance(
            suppliers=suppliers,
            orders_by_period=_group_by_arrival(pool),
            contracts=contracts,
            period=t,
        )
        if config.posterior:
            snapshots[t] = _snapshot_instance(instance)

        mw_matching = match_mw(instance, t, node_limit=config.node_limit)
        graph = expand_and_prune(instance, t, bundle_cap=config.bundle_cap) if needs_graph else None
        warm_as = match_as(instance, t, mode=config.as_mode)
        mech_matching, lb = _dispatch_mechanism(config, instance, t, graph, warm_as)
        matchings[t] = mech_matching

        mech_util = mech_matching.total_utility()
        mw_util = mw_matching.total_utility()
        mech_total += mech_util
        mw_total += mw_util

        for order_id, c in mech_matching.assigned.items():
            matched_order_ids.add(order_id)
            matched_supplier_ids.add(c.supplier_id)
            order_u_samples.append(c.u_order)
            supplier_u_samples.append(c.u_supplier)
        o_ranks, s_ranks = _percentile_ranks(mech_matching, instance)
        order_rank_samples.extend(o_ranks)
        supplier_rank_samples.extend(s_ranks)

        pairs = groups = None
        if config.audits:
            pairs = find_blocking_pairs(mech_matching, instance, t)
            groups = find_blocking_groups(mech_matching, instance, t, graph)
            pair_records.extend(pairs)
            group_records.extend(groups)

        matched_orders = set(mech_matching.assigned)
        for supplier_id, assigned in mech_matching.by_supplier().items():
            deduct_capacity(supplier_map[supplier_id], assigned, t)
        carryover = [o for o in pool if o.id not in matched_orders]
        _advance_schedules(suppliers, t + 1, gen.listing_horizon, gen.capacity_listing_range, capacity_rng)

        period_rows.append(
            {
                "period": t,
                "arrivals": len(arrivals),
                "pool": len(pool),
                "matched": len(matched_orders),
                "carryover_out": len(carryover),
                "mech_utility": mech_util,
                "mw_utility": mw_util,
                "lb": lb,
                "bundles": len(graph.bundles) if graph is not None else None,
                "blocking_pairs": len(pairs) if pairs is not None else None,
                "blocking_groups": len(groups) if groups is not None else None,
            }
        )

    if config.posterior:
        for t in range(1, config.n_periods):
            posterior_records.extend(
                posterior_audit(
                    matchings[t],
                    matchings[t + 1],
                    snapshots[t],
                    snapshots[t + 1],
                    bundle_cap=config.bundle_cap,
                    contracts_per_pair_max=gen.contracts_per_pair_max,
                    price_spread_fraction=gen.price_spread_fraction,
                )
            )

    pending = len(carryover)
    if arrived_total != len(matched_order_ids) + expired_total + pending:
        # Orders expire only from the carryover scan above, so this reconciles
        # unless the period loop mismanaged the pool.
        raise ModelValidationError("order conservation check failed")

    report = {
        "replication": rep,
        "periods": period_rows,
        "raw": {
            "arrived_total": arrived_total,
            "expired_total": expired_total,
            "pending_end": pending,
            "matched_orders": len(matched_order_ids),
            "matched_suppliers": len(matched_supplier_ids),
            "n_suppliers": len(suppliers),
            "mech_total": mech_total,
            "mw_total": mw_total,
            "order_u_samples": order_u_samples,
            "supplier_u_samples": supplier_u_samples,
            "order_rank_samples": order_rank_samples,
            "supplier_rank_samples": supplier_rank_samples,
        },
    }
    report["summary"] = system_metrics(report)
    if config.audits:
        denominators = {"n_orders": arrived_total, "n_suppliers": len(suppliers)}
        report["stability"] = stability_metrics(
            pair_records + group_records,
            None,
            None,
            n_periods=config.n_periods,
            **denominators,
        )
        if config.switching_cost_sweep:
            sweep_rows = []
            for theta in config.switching_cost_sweep:
                kept_pairs = apply_switching_cost(pair_records, theta)
                kept_groups = apply_switching_cost(group_records, theta)
                sweep_rows.append(
                    {"theta": theta, "pairs": len(kept_pairs), "groups": len(kept_groups)}
                )
            report["switching_costs"] = sweep_rows
    if config.posterior:
        report["posterior"] = stability_metrics(
            posterior_records,
            None,
            None,
            n_periods=max(1, config.n_periods - 1),
            n_orders=arrived_total,
            n_suppliers=len(suppliers),
        )
    return report


def system_metrics(replication_report: dict) -> dict:
    """Run-level performance metrics from a replication's raw samples."""
    raw = replication_report["raw"]
    def mean(xs):
        return sum(xs) / len(xs) if xs else 0.0

    mw_total = raw["mw_total"]
    return {
        "impact_of_stability": raw["mech_total"] / mw_total if mw_total > 0 else 0.0,
        "avg_order_utility": mean(raw["order_u_samples"]),
        "avg_supplier_utility": mean(raw["supplier_u_samples"]),
        "matched_orders_share": raw["matched_orders"] / raw["arrived_total"] if raw["arrived_total"] else 0.0,
        "matched_suppliers_share": raw["matched_suppliers"] / raw["n_suppliers"] if raw["n_suppliers"] else 0.0,
        "avg_order_rank": mean(raw["order_rank_samples"]),
        "avg_supplier_rank": mean(raw["supplier_rank_samples"]),
        "total_mech_utility": raw["mech_total"],
        "total_mw_utility": raw["mw_total"],
    }


def _confidence_interval(values: list[float]) -> dict:
    n = len(values)
    mean = sum(values) / n
    if n < 2:
        return {"mean": mean, "ci95": 0.0, "degenerate": True}
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    half = float(scipy_stats.t.ppf(0.975, n - 1)) * (var ** 0.5) / (n ** 0.5)
    return {"mean": mean, "ci95": half, "degenerate": False}


def aggregate_replications(reports: list[dict]) -> dict:
    """Mean and 95% confidence interval of every summary metric across replications."""
    keys = sorted(reports[0]["summary"])
    return {key: _confidence_interval([r["summary"][key] for r in reports]) for key in keys}


def run(config: SimConfig) -> dict:
    """Run all replications of the configured experiment."""
    config.validate()
    reps = list(range(config.replications))
    workers = worker_count()
    if workers > 1 and len(reps) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(lambda r: _simulate_replication(config, r), reps))
    else:
        reports = [_simulate_replication(config, rep) for rep in reps]
    return {
        "mechanism": config.mechanism,
        "lambda": config.gen.lambda_orders,
        "seed": config.gen.seed,
        "replications": reports,
        "aggregate": aggregate_replications(reports),
    }


# -- anarchy experiment --------------------------------------------------------


def _anarchy_lane_setup(gen: GenConfig, rep: int, stream: int):
    suppliers = generate_suppliers(gen, rng_for(gen.seed, _STREAM_SUPPLIERS, rep))
    capacity_rng = rng_for(gen.seed, stream, rep)
    return suppliers, {s.id: s for s in suppliers}, capacity_rng


def _anarchy_replication(config: SimConfig, rep: int) -> dict:
    gen = config.gen
    anarchy = config.anarchy
    suppliers_a, map_a, cap_rng_a = _anarchy_lane_setup(gen, rep, 13)
    suppliers_b, map_b, cap_rng_b = _anarchy_lane_setup(gen, rep, 14)
    ledgers: dict[int, set[str]] = {}
    all_supplier_ids = {s.id for s in suppliers_a}

    carry_a: list[Order] = []
    carry_b: list[Order] = []
    rows = []
    for t in range(1, anarchy.n_periods + 1):
        arrivals = generate_orders(gen, t, rng_for(gen.seed, _STREAM_ORDERS, rep, t))

        pool_a = sorted([o for o in carry_a if o.due - t >= 1] + arrivals, key=lambda o: o.id)
        contracts_a = enumerate_contracts(
            pool_a, suppliers_a, t,
            contracts_per_pair_max=gen.contracts_per_pair_max,
            price_spread_fraction=gen.price_spread_fraction,
        )
        inst_a = MarketInstance(suppliers_a, _group_by_arrival(pool_a), contracts_a, t)
        mw_a = match_mw(inst_a, t, node_limit=config.node_limit)
        if anarchy.access == "complete":
            accessible = {o.id: all_supplier_ids for o in pool_a}
        else:
            accessible = {o.id: set(ledgers.get(o.client_id, set())) for o in pool_a}
        final_a, stats = first_round_offers(mw_a, accessible, inst_a, t)
        order_map_a = inst_a.order_map
        for order_id, c in final_a.assigned.items():
            ledgers.setdefault(order_map_a[order_id].client_id, set()).add(c.supplier_id)
        for supplier_id, assigned in final_a.by_supplier().items():
            deduct_capacity(map_a[supplier_id], assigned, t)
        carry_a = [o for o in pool_a if o.id not in final_a.assigned]
        _advance_schedules(suppliers_a, t + 1, gen.listing_horizon, gen.capacity_listing_range, cap_rng_a)

        pool_b = sorted([o for o in carry_b if o.due - t >= 1] + arrivals, key=lambda o: o.id)
        contracts_b = enumerate_contracts(
            pool_b, suppliers_b, t,
            contracts_per_pair_max=gen.contracts_per_pair_max,
            price_spread_fraction=gen.price_spread_fraction,
        )
        inst_b = MarketInstance(suppliers_b, _group_by_arrival(pool_b), contracts_b, t)
        as_b = match_as(inst_b, t, mode=config.as_mode)
        mw_b = match_mw(inst_b, t, node_limit=config.node_limit)
        for supplier_id, assigned in as_b.by_supplier().items():
            deduct_capacity(map_b[supplier_id], assigned, t)
        carry_b = [o for o in pool_b if o.id not in as_b.assigned]
        _advance_schedules(suppliers_b, t + 1, gen.listing_horizon, gen.capacity_listing_range, cap_rng_b)

        mw_a_util = mw_a.total_utility()
        mw_b_util = mw_b.total_utility()
        rows.append(
            {
                "period": t,
                "mw_utility": mw_a_util,
                "post_defection_utility": final_a.total_utility(),
                "defection_share": stats.defectors / len(pool_a) if pool_a else 0.0,
                "defectors": stats.defectors,
                "displaced": stats.displaced,
                "as_utility": as_b.total_utility(),
                "as_mw_utility": mw_b_util,
            }
        )

    def _ratio(num, den):
        return num / den if den > 0 else 0.0

    total_mw = sum(r["mw_utility"] for r in rows)
    total_post = sum(r["post_defection_utility"] for r in rows)
    total_as_mw = sum(r["as_mw_utility"] for r in rows)
    total_as = sum(r["as_utility"] for r in rows)
    tail = rows[-10:] if len(rows) >= 10 else rows
    head = rows[:10] if len(rows) >= 10 else rows
    summary = {
        "anarchy_utility_fraction": _ratio(total_post, total_mw),
        "as_utility_fraction": _ratio(total_as, total_as_mw),
        "tail_anarchy_fraction": _ratio(
            sum(r["post_defection_utility"] for r in tail), sum(r["mw_utility"] for r in tail)
        ),
        "head_defection_share": sum(r["defection_share"] for r in head) / len(head),
        "tail_defection_share": sum(r["defection_share"] for r in tail) / len(tail),
    }
    return {"replication": rep, "access": anarchy.access, "periods": rows, "summary": summary}


def run_anarchy(config: SimConfig) -> dict:
    """Maximum-weight allocation with post-allocation defections, plus the
    deferred-acceptance comparator on the same arrival stream."""
    config.validate()
    if config.anarchy is None:
        raise ModelValidationError("anarchy experiment requires the anarchy section")
    reports = [_anarchy_replication(config, rep) for rep in range(config.replications)]
    keys = sorted(reports[0]["summary"])
    aggregate = {key: _confidence_interval([r["summary"][key] for r in reports]) for key in keys}
    return {
        "access": config.anarchy.access,
        "lambda": config.gen.lambda_orders,
        "seed": config.gen.seed,
        "replications": reports,
        "aggregate": aggregate,
    }


def sweep(config: SimConfig, lambdas) -> dict:
    """Run the full experiment once per arrival rate and report trend directions."""
    runs = []
    for lam in lambdas:
        sub = replace(config, gen=replace(config.gen, lambda_orders=float(lam)))
        runs.append({"lambda": float(lam), "result": run(sub)})
    supplier_ranks = [r["result"]["aggregate"]["avg_supplier_rank"]["mean"] for r in runs]
    order_ranks = [r["result"]["aggregate"]["avg_order_rank"]["mean"] for r in runs]
    impacts = [r["result"]["aggregate"]["impact_of_stability"]["mean"] for r in runs]
    trends = {
        "supplier_rank_decreasing": all(b <= a + TOL for a, b in zip(supplier_ranks, supplier_ranks[1:])),
        "order_rank_increasing": all(b >= a - TOL for a, b in zip(order_ranks, order_ranks[1:])),
        "impact_weakly_decreasing": all(b <= a + TOL for a, b in zip(impacts, impacts[1:])),
    }
    return {"lambdas": [float(l) for l in lambdas], "runs": runs, "trends": trends}
