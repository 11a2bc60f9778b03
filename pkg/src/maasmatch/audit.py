"""Blocking-pair and blocking-group auditing of matchings.

A pair (order, supplier, contract) blocks when the order side strictly
gains (or is unmatched) and the supplier's exact re-choice over its
assignment plus the candidate keeps the candidate and strictly raises its
total. A group is a feasible bundle whose members all weakly gain (members
keeping their current contract may be indifferent, new members must
strictly gain or be unmatched) while the supplier's bundle total strictly
beats its assigned total. The posterior variant pools two consecutive
periods' participants and capacity under the two-period choice rules.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .choice import choose, choose_posterior
from .errors import AuditConfigError
from .gen import MarketInstance, enumerate_contracts
from .model import (
    Contract,
    Matching,
    Period,
    Supplier,
    bundle_feasible,
    cumulative_capacity,
)
from .mwas import ExpandedGraph, _expand
from .solver import BinaryProgram, solve

TOL = 1e-9


@dataclass(frozen=True)
class BlockingRecord:
    """One blocking pair or group, with participant flags and relative gains.

    Gains are (u_block - u_assigned) / u_assigned for matched participants;
    None marks participants with no assigned utility to compare against
    (unmatched orders, idle suppliers, or vanishing assigned utility).
    """

    kind: str  # "pair" | "group"
    supplier_id: str
    contract_ids: tuple[str, ...]
    order_flags: tuple[tuple[str, str], ...]  # (order_id, flag) sorted by order id
    supplier_flag: str  # "strictly-prefers" | "underutilized"
    available: bool
    order_gains: tuple[tuple[str, float | None], ...]
    supplier_gain: float | None

    @property
    def size(self) -> int:
        return len(self.contract_ids) + 1

    @property
    def order_ids(self) -> tuple[str, ...]:
        return tuple(oid for oid, _ in self.order_flags)

    def sort_key(self):
        return (self.supplier_id, self.contract_ids)


def _relative_gain(block_value: float, assigned_value: float) -> float | None:
    if assigned_value <= TOL:
        return None
    return (block_value - assigned_value) / assigned_value


def _supplier_requires_full_add(held: list[Contract], candidate: Contract) -> bool:
    """True when the candidate's order is not already among the held contracts."""
    return all(c.order_id != candidate.order_id for c in held)


def find_blocking_pairs(
    matching: Matching,
    instance: MarketInstance,
    current: Period,
) -> list[BlockingRecord]:
    """All blocking pairs of the matching over the instance's contract pool."""
    suppliers = instance.supplier_map
    matched_ids = matching.contract_ids()
    held_by_supplier = matching.by_supplier()
    records = []
    for c in sorted(instance.contracts, key=lambda c: c.id):
        if c.id in matched_ids:
            continue
        assigned = matching.assigned.get(c.order_id)
        if assigned is not None and c.u_order <= assigned.u_order + TOL:
            continue
        supplier = suppliers[c.supplier_id]
        held = held_by_supplier.get(c.supplier_id, [])
        record = _pair_supplier_test(
            supplier,
            held,
            c,
            assigned,
            lambda sup, offers: choose(sup, offers, current),
            lambda sup, contracts: bundle_feasible(sup, contracts, current),
        )
        if record is not None:
            records.append(record)
    records.sort(key=BlockingRecord.sort_key)
    return records


def _pair_supplier_test(supplier, held, candidate, assigned, chooser, feasible):
    """Supplier-side blocking test; returns the record or None."""
    held_sum = sum(c.u_supplier for c in held)
    if (
        _supplier_requires_full_add(held, candidate)
        and all(c.u_supplier > TOL for c in held + [candidate])
        and feasible(supplier, held + [candidate])
    ):
        # Adding the candidate outright is feasible, so the exact re-choice
        # keeps everything: the supplier is underutilized.
        new_set = held + [candidate]
    else:
        new_set = sorted(chooser(supplier, held + [candidate]), key=lambda c: c.id)
        if all(c.id != candidate.id for c in new_set):
            return None
    new_sum = sum(c.u_supplier for c in new_set)
    if new_sum <= held_sum + TOL:
        return None
    held_ids = {c.id for c in held}
    underutilized = held_ids <= {c.id for c in new_set}
    unmatched = assigned is None
    order_flag = "unmatched" if unmatched else "strictly-prefers"
    order_gain = None if unmatched else _relative_gain(candidate.u_order, assigned.u_order)
    return BlockingRecord(
        kind="pair",
        supplier_id=supplier.id,
        contract_ids=(candidate.id,),
        order_flags=((candidate.order_id, order_flag),),
        supplier_flag="underutilized" if underutilized else "strictly-prefers",
        available=unmatched and underutilized,
        order_gains=((candidate.order_id, order_gain),),
        supplier_gain=_relative_gain(new_sum, held_sum),
    )


def find_blocking_groups(
    matching: Matching,
    instance: MarketInstance,
    current: Period,
    bundles: ExpandedGraph,
) -> list[BlockingRecord]:
    """All blocking groups of the matching among the pruned feasible bundles."""
    if bundles is None:
        raise AuditConfigError("blocking-group audit requires the expanded bundle graph")
    held_by_supplier = matching.by_supplier()
    held_ids = {sid: {c.id for c in contracts} for sid, contracts in held_by_supplier.items()}
    held_sums = {
        sid: sum(c.u_supplier for c in contracts) for sid, contracts in held_by_supplier.items()
    }
    records = []
    for bundle in bundles.bundles:
        sid = bundle.supplier_id
        j_ids = held_ids.get(sid, set())
        c_ids = set(bundle.contract_ids)
        if c_ids == j_ids:
            continue
        if bundle.u_supplier_total <= held_sums.get(sid, 0.0) + TOL:
            continue
        flags = []
        gains = []
        blocked = True
        for contract in bundle.contracts:
            assigned = matching.assigned.get(contract.order_id)
            if assigned is None:
                flags.append((contract.order_id, "unmatched"))
                gains.append((contract.order_id, None))
            elif contract.id in j_ids:
                flags.append((contract.order_id, "indifferent"))
                gains.append((contract.order_id, 0.0))
            elif contract.u_order > assigned.u_order + TOL:
                flags.append((contract.order_id, "strictly-prefers"))
                gains.append((contract.order_id, _relative_gain(contract.u_order, assigned.u_order)))
            else:
                blocked = False
                break
        if not blocked:
            continue
        underutilized = j_ids <= c_ids
        all_unmatched = all(flag == "unmatched" for _, flag in flags)
        records.append(
            BlockingRecord(
                kind="group",
                supplier_id=sid,
                contract_ids=bundle.contract_ids,
                order_flags=tuple(sorted(flags)),
                supplier_flag="underutilized" if underutilized else "strictly-prefers",
                available=all_unmatched and underutilized,
                order_gains=tuple(sorted(gains)),
                supplier_gain=_relative_gain(bundle.u_supplier_total, held_sums.get(sid, 0.0)),
            )
        )
    records.sort(key=BlockingRecord.sort_key)
    return records


# -- posterior (two consecutive periods) --------------------------------------


@dataclass
class PooledPeriods:
    """Participants, contracts and merged capacity of two consecutive periods."""

    t: Period
    suppliers: list[Supplier]
    contracts: list[Contract]
    contract_period: dict[str, Period]
    matching: Matching

    @property
    def supplier_map(self) -> dict[str, Supplier]:
        return {s.id: s for s in self.suppliers}


def pool_periods(
    matching_t: Matching,
    matching_t1: Matching,
    instance_t: MarketInstance,
    instance_t1: MarketInstance,
    contracts_per_pair_max: int = 2,
    price_spread_fraction: float = 0.1,
) -> PooledPeriods:
    """Merge two consecutive periods into one audit context.

    Capacity is the period-t schedule extended by the extra horizon period
    listed at t+1 (announced supply, before any matching consumed it).
    Orders keep the period they participated in first; carried-over orders
    count as period-t participants and their period-t contract quotes win
    over the re-quotes from t+1. Pairs that only come into horizon with the
    extended schedule are quoted fresh at period t.
    """
    if instance_t1.period != instance_t.period + 1:
        raise AuditConfigError(
            f"posterior audit needs consecutive periods, got {instance_t.period} and {instance_t1.period}"
        )
    t = instance_t.period
    sup_t1 = instance_t1.supplier_map
    merged_suppliers = []
    for s in sorted(instance_t.suppliers, key=lambda s: s.id):
        schedule = dict(s.capacity_by_period)
        later = sup_t1.get(s.id)
        if later is not None:
            for period, hours in later.capacity_by_period.items():
                schedule.setdefault(period, hours)
        merged_suppliers.append(replace(s, capacity_by_period=schedule))

    period_of_order: dict[str, Period] = {o.id: t for o in instance_t.pool}
    orders_t = list(instance_t.pool)
    orders_t1_only = [o for o in instance_t1.pool if o.id not in period_of_order]
    for o in orders_t1_only:
        period_of_order[o.id] = t + 1

    contracts: dict[str, tuple[Contract, Period]] = {}
    for c in instance_t.contracts:
        contracts[c.id] = (c, t)
    for c in instance_t1.contracts:
        contracts.setdefault(c.id, (c, period_of_order.get(c.order_id, t + 1)))
    extended = enumerate_contracts(
        orders_t,
        merged_suppliers,
        t,
        contracts_per_pair_max=contracts_per_pair_max,
        price_spread_fraction=price_spread_fraction,
    )
    for c in extended:
        contracts.setdefault(c.id, (c, t))

    assigned = dict(matching_t.assigned)
    for order_id, contract in matching_t1.assigned.items():
        if order_id in assigned:
            raise AuditConfigError(f"order {order_id} is matched in both periods")
        assigned[order_id] = contract
    for contract in assigned.values():
        contracts.setdefault(contract.id, (contract, period_of_order.get(contract.order_id, t)))

    ordered = sorted(contracts.values(), key=lambda item: item[0].id)
    return PooledPeriods(
        t=t,
        suppliers=merged_suppliers,
        contracts=[c for c, _ in ordered],
        contract_period={c.id: p for c, p in ordered},
        matching=Matching(assigned=assigned),
    )


def _posterior_feasible(supplier: Supplier, contracts, contract_period, t: Period) -> bool:
    """Three-family capacity check for a pooled contract set."""
    members = list(contracts)
    groups = (
        ([c for c in members if contract_period[c.id] == t], t),
        ([c for c in members if contract_period[c.id] == t + 1], t + 1),
        (members, t),
    )
    for subset, start in groups:
        dues = sorted({c.terms.due for c in subset})
        for q in dues:
            load = sum(c.production_hours for c in subset if c.terms.due <= q)
            if load > cumulative_capacity(supplier, start, q) + TOL:
                return False
    return True


def _posterior_sizer(supplier: Supplier, candidates, contract_period_of_order, t: Period) -> int:
    candidates = sorted(candidates, key=lambda item: item[0])
    if not candidates:
        return 0
    program = BinaryProgram(n_vars=len(candidates), objective=[1.0] * len(candidates), sense="maximize")
    groups = (
        ([i for i, (oid, _, _) in enumerate(candidates) if contract_period_of_order[oid] == t], t),
        ([i for i, (oid, _, _) in enumerate(candidates) if contract_period_of_order[oid] == t + 1], t + 1),
        (list(range(len(candidates))), t),
    )
    for positions, start in groups:
        dues = sorted({candidates[i][2] for i in positions})
        for q in dues:
            members = [i for i in positions if candidates[i][2] <= q]
            hours = [candidates[i][1] for i in members]
            program.add_constraint(members, hours, cumulative_capacity(supplier, start, q))
    return len(solve(program, explore_ties=False).chosen)


def posterior_audit(
    matching_t: Matching,
    matching_t1: Matching,
    instance_t: MarketInstance,
    instance_t1: MarketInstance,
    bundle_cap: int = 200_000,
    contracts_per_pair_max: int = 2,
    price_spread_fraction: float = 0.1,
) -> list[BlockingRecord]:
    """Blocking pairs and groups against the pooled participants of t and t+1."""
    pooled = pool_periods(
        matching_t,
        matching_t1,
        instance_t,
        instance_t1,
        contracts_per_pair_max=contracts_per_pair_max,
        price_spread_fraction=price_spread_fraction,
    )
    t = pooled.t
    suppliers = pooled.supplier_map
    matching = pooled.matching
    matched_ids = matching.contract_ids()
    held_by_supplier = matching.by_supplier()
    tag = pooled.contract_period

    def posterior_chooser(supplier, offers):
        offers_t = [c for c in offers if tag.get(c.id, t) == t]
        offers_t1 = [c for c in offers if tag.get(c.id, t) == t + 1]
        return choose_posterior(supplier, offers_t, offers_t1, t)

    def posterior_bundle_feasible(supplier, contracts):
        return _posterior_feasible(supplier, contracts, tag, t)

    records = []
    for c in pooled.contracts:
        if c.id in matched_ids:
            continue
        assigned = matching.assigned.get(c.order_id)
        if assigned is not None and c.u_order <= assigned.u_order + TOL:
            continue
        supplier = suppliers[c.supplier_id]
        held = held_by_supplier.get(c.supplier_id, [])
        record = _pair_supplier_test(
            supplier, held, c, assigned, posterior_chooser, posterior_bundle_feasible
        )
        if record is not None:
            records.append(record)

    period_of_order = {c.order_id: tag[c.id] for c in pooled.contracts}
    pooled_instance = MarketInstance(
        suppliers=pooled.suppliers,
        orders_by_period={},
        contracts=pooled.contracts,
        period=t,
    )
    graph = _expand(
        pooled_instance,
        posterior_bundle_feasible,
        lambda sup, cand: _posterior_sizer(sup, cand, period_of_order, t),
        bundle_cap,
    )
    records.extend(find_blocking_groups(matching, pooled_instance, t, graph))
    records.sort(key=lambda r: (r.kind, r.sort_key()))
    return records


# -- switching costs and metrics ----------------------------------------------


def apply_switching_cost(records, theta: float) -> list[BlockingRecord]:
    """Keep records whose strictly-preferring matched participants all gain more
    than theta relative to their assignment; participants with no assigned
    utility (unmatched orders, underutilized or idle suppliers) pay no cost."""
    if not 0.0 <= theta <= 1.0:
        raise AuditConfigError(f"switching cost {theta} outside [0, 1]")
    kept = []
    for record in records:
        gains = dict(record.order_gains)
        ok = True
        for order_id, flag in record.order_flags:
            if flag != "strictly-prefers":
                continue
            gain = gains.get(order_id)
            if gain is not None and gain <= theta:
                ok = False
                break
        if ok and record.supplier_flag == "strictly-prefers":
            if record.supplier_gain is not None and record.supplier_gain <= theta:
                ok = False
        if ok:
            kept.append(record)
    return kept


def stability_metrics(
    records,
    matching: Matching | None,
    instance: MarketInstance | None,
    n_periods: int = 1,
    n_orders: int | None = None,
    n_suppliers: int | None = None,
) -> dict:
    """Per-kind participation, gain and size metrics for a set of records.

    Ratios with empty denominators report 0 and are named in the kind's
    "degenerate" list. Per-supplier record averages are additionally divided
    by n_periods when aggregating a multi-period run.
    """
    if n_orders is None:
        n_orders = len(instance.pool) if instance is not None else 0
    if n_suppliers is None:
        n_suppliers = len(instance.suppliers) if instance is not None else 0
    table: dict[str, dict] = {}
    for kind in ("pair", "group"):
        rows = [r for r in records if r.kind == kind]
        orders_in = sorted({oid for r in rows for oid in r.order_ids})
        suppliers_in = sorted({r.supplier_id for r in rows})
        unmatched = {oid for r in rows for oid, flag in r.order_flags if flag == "unmatched"}
        underutilized = {r.supplier_id for r in rows if r.supplier_flag == "underutilized"}
        order_gains = [g for r in rows for _, g in r.order_gains if g is not None]
        supplier_gains = [r.supplier_gain for r in rows if r.supplier_gain is not None]
        degenerate = []

        def ratio(num, den, name):
            if den == 0:
                degenerate.append(name)
                return 0.0
            return num / den

        table[kind] = {
            "records": len(rows),
            "orders_in_share": ratio(len(orders_in), n_orders, "orders_in_share"),
            "suppliers_in_share": ratio(len(suppliers_in), n_suppliers, "suppliers_in_share"),
            "avg_per_order": ratio(len(rows), len(orders_in), "avg_per_order"),
            "avg_per_supplier": ratio(len(rows), len(suppliers_in) * n_periods, "avg_per_supplier"),
            "unmatched_share": ratio(len(unmatched), len(orders_in), "unmatched_share"),
            "underutilized_share": ratio(len(underutilized), len(suppliers_in), "underutilized_share"),
            "available_share": ratio(sum(1 for r in rows if r.available), len(rows), "available_share"),
            "avg_order_gain": ratio(sum(order_gains), len(order_gains), "avg_order_gain"),
            "avg_supplier_gain": ratio(sum(supplier_gains), len(supplier_gains), "avg_supplier_gain"),
            "avg_size": ratio(sum(r.size for r in rows), len(rows), "avg_size"),
            "degenerate": degenerate,
        }
    return table
