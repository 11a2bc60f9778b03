"""Socially optimal (maximum-weight) matching over the contract pool."""

from __future__ import annotations

from .gen import MarketInstance
from .model import Contract, Matching, Period, bundle_feasible, cumulative_capacity
from .solver import BinaryProgram, solve


def build_matching(contracts) -> Matching:
    matching = Matching()
    for c in sorted(contracts, key=lambda c: c.id):
        matching.assigned[c.order_id] = c
    return matching


def _greedy_positions(contracts, suppliers, current: Period, key) -> list[int]:
    """Feasible warm start: admit contracts greedily in the given key order."""
    taken_orders: set[str] = set()
    taken: dict[str, list[Contract]] = {}
    positions = []
    for pos in sorted(range(len(contracts)), key=lambda p: key(contracts[p])):
        c = contracts[pos]
        if c.order_id in taken_orders:
            continue
        held = taken.get(c.supplier_id, [])
        if not bundle_feasible(suppliers[c.supplier_id], held + [c], current):
            continue
        taken_orders.add(c.order_id)
        taken.setdefault(c.supplier_id, []).append(c)
        positions.append(pos)
    return sorted(positions)


def match_mw(instance: MarketInstance, current: Period, node_limit: int | None = None) -> Matching:
    """Maximize total utility over all contracts, subject to one contract per
    order and per-supplier cumulative capacity at every due period."""
    contracts = sorted(instance.contracts, key=lambda c: c.id)
    if not contracts:
        return Matching()
    program = BinaryProgram(
        n_vars=len(contracts),
        objective=[c.u_total for c in contracts],
        sense="maximize",
    )
    by_order: dict[str, list[int]] = {}
    by_supplier: dict[str, list[int]] = {}
    for pos, c in enumerate(contracts):
        by_order.setdefault(c.order_id, []).append(pos)
        by_supplier.setdefault(c.supplier_id, []).append(pos)
    for order_id in sorted(by_order):
        members = by_order[order_id]
        program.add_constraint(members, [1.0] * len(members), 1.0)
    suppliers = instance.supplier_map
    for supplier_id in sorted(by_supplier):
        supplier = suppliers[supplier_id]
        positions = by_supplier[supplier_id]
        dues = sorted({contracts[pos].terms.due for pos in positions})
        for q in dues:
            members = [pos for pos in positions if contracts[pos].terms.due <= q]
            hours = [contracts[pos].production_hours for pos in members]
            program.add_constraint(members, hours, cumulative_capacity(supplier, current, q))
    greedy_value = _greedy_positions(contracts, suppliers, current, lambda c: (-c.u_total, c.id))
    greedy_ratio = _greedy_positions(
        contracts, suppliers, current, lambda c: (-c.u_total / c.production_hours, c.id)
    )
    incumbent = max(
        (greedy_value, greedy_ratio), key=lambda ps: sum(contracts[p].u_total for p in ps)
    )
    kwargs = {} if node_limit is None else {"node_limit": node_limit}
    # Utilities are continuous, so exact objective ties are degenerate; fast
    # mode keeps per-component determinism without tie enumeration.
    selection = solve(program, incumbent=incumbent, explore_ties=False, **kwargs)
    return build_matching(contracts[i] for i in selection.chosen)
