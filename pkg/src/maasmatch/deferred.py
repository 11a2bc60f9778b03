"""Order-proposing deferred acceptance over contracts.

Every rejected order proposes its best remaining contract each round and
suppliers re-select with the exact choice function. In the default
"literal" mode a supplier's rejected offers are discarded from its pool;
"cumulative" mode keeps every offer ever received available for
re-selection, with cross-supplier double-holds resolved when the rounds
stop. The same proposal step, run once on top of an existing matching,
models participants defecting from an allocation they dislike.
"""

from __future__ import annotations

from dataclasses import dataclass

from .choice import choose
from .errors import ModelValidationError
from .gen import MarketInstance
from .model import Contract, Matching, Period

TOL = 1e-9


def ranked_contract_lists(instance: MarketInstance) -> dict[str, list[Contract]]:
    """Each order's contracts sorted by descending own utility, ties by ids."""
    lists: dict[str, list[Contract]] = {}
    for c in instance.contracts:
        lists.setdefault(c.order_id, []).append(c)
    for order_id, contracts in lists.items():
        contracts.sort(key=lambda c: (-c.u_order, c.supplier_id, c.id))
    return lists


def match_as(
    instance: MarketInstance,
    current: Period,
    mode: str = "literal",
    trace: list | None = None,
) -> Matching:
    """Run deferred acceptance until no rejected order has contracts left."""
    if mode not in ("literal", "cumulative"):
        raise ModelValidationError(f"unknown proposal mode {mode!r}")
    suppliers = instance.supplier_map
    remaining = ranked_contract_lists(instance)
    rejected = sorted(remaining)
    tentative: dict[str, list[Contract]] = {sid: [] for sid in suppliers}
    pools: dict[str, dict[str, Contract]] = {sid: {} for sid in suppliers}

    max_rounds = sum(len(v) for v in remaining.values()) + 1
    rounds = 0
    while rejected:
        proposers = [oid for oid in rejected if remaining[oid]]
        if not proposers:
            break
        rounds += 1
        if rounds > max_rounds:
            raise ModelValidationError("proposal rounds exceeded the total contract count")
        touched = set()
        for oid in proposers:
            offer = remaining[oid].pop(0)
            tentative[offer.supplier_id].append(offer)
            pools[offer.supplier_id][offer.id] = offer
            touched.add(offer.supplier_id)
        rejected = [oid for oid in rejected if oid not in set(proposers)]

        newly_rejected: set[str] = set()
        for sid in sorted(touched):
            supplier = suppliers[sid]
            offer_set = list(pools[sid].values()) if mode == "cumulative" else tentative[sid]
            chosen = choose(supplier, offer_set, current)
            dropped = [c for c in tentative[sid] if c not in chosen]
            tentative[sid] = sorted(chosen, key=lambda c: c.id)
            for c in dropped:
                newly_rejected.add(c.order_id)
            if trace is not None:
                trace.append(
                    {
                        "round": rounds,
                        "supplier": sid,
                        "pool": sorted(c.id for c in offer_set),
                        "chosen": sorted(c.id for c in chosen),
                        "utility": sum(c.u_supplier for c in chosen),
                    }
                )
        held = {c.order_id for contracts in tentative.values() for c in contracts}
        rejected = sorted(set(rejected) | (newly_rejected - held))

    if mode == "cumulative":
        return _finalize_cumulative(instance, pools, current)
    matching = Matching()
    for contracts in tentative.values():
        for c in contracts:
            matching.assigned[c.order_id] = c
    return matching


def _finalize_cumulative(instance, pools, current) -> Matching:
    """Resolve cumulative-mode double-holds supplier by supplier.

    Suppliers finalize in id order, each choosing from its accumulated pool
    minus orders already finalized elsewhere.
    """
    suppliers = instance.supplier_map
    matching = Matching()
    for sid in sorted(pools):
        available = [c for c in pools[sid].values() if c.order_id not in matching.assigned]
        for c in choose(suppliers[sid], available, current):
            matching.assigned[c.order_id] = c
    return matching


@dataclass
class DefectionStats:
    proposals: int
    defectors: int
    displaced: int
    defector_order_ids: tuple[str, ...] = ()


def first_round_offers(
    matching: Matching,
    accessible: dict[str, set[str]],
    instance: MarketInstance,
    current: Period,
) -> tuple[Matching, DefectionStats]:
    """One final (non-tentative) proposal round on top of an existing matching.

    Each order proposes its best accessible contract when that strictly beats
    its assigned utility (or it is unmatched); every supplier then re-chooses
    over its current assignments plus the proposals it received, all against
    the original matching. Accepted proposals are final: the proposer leaves
    its old match, and previously assigned orders squeezed out of a
    supplier's new choice become unmatched.
    """
    by_order: dict[str, list[Contract]] = {}
    for c in instance.contracts:
        by_order.setdefault(c.order_id, []).append(c)
    proposals: dict[str, list[Contract]] = {}
    n_proposals = 0
    for order_id in sorted(by_order):
        allowed = accessible.get(order_id, set())
        candidates = [c for c in by_order[order_id] if c.supplier_id in allowed]
        if not candidates:
            continue
        candidates.sort(key=lambda c: (-c.u_order, c.supplier_id, c.id))
        best = candidates[0]
        assigned = matching.assigned.get(order_id)
        if assigned is not None and best.u_order <= assigned.u_order + TOL:
            continue
        proposals.setdefault(best.supplier_id, []).append(best)
        n_proposals += 1

    suppliers = instance.supplier_map
    accepted: dict[str, Contract] = {}
    displaced: set[str] = set()
    for sid in sorted(proposals):
        held = matching.supplier_contracts(sid)
        held_ids = {c.id for c in held}
        pool = held + [c for c in proposals[sid] if c.id not in held_ids]
        chosen = choose(suppliers[sid], pool, current)
        chosen_ids = {c.id for c in chosen}
        for c in held:
            if c.id not in chosen_ids:
                displaced.add(c.order_id)
        for c in chosen:
            if c.id not in held_ids:
                accepted[c.order_id] = c

    final = dict(matching.assigned)
    for order_id in displaced:
        final.pop(order_id, None)
    for order_id, contract in accepted.items():
        final[order_id] = contract
    stats = DefectionStats(
        proposals=n_proposals,
        defectors=len(accepted),
        displaced=len(displaced - set(accepted)),
        defector_order_ids=tuple(sorted(accepted)),
    )
    return Matching(assigned=final), stats
