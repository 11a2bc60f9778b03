"""Supplier choice functions.

A supplier confronted with a set of offered contracts picks the subset that
maximizes its own total utility subject to one contract per order and the
cumulative capacity budget at every due period. The selection is solved
exactly, so interdependent preferences over contract combinations are
honored rather than approximated. A two-period variant pools offers from
consecutive periods under three capacity constraint families.
"""

from __future__ import annotations

from .errors import ContractRoutingError
from .model import Contract, Period, Supplier, cumulative_capacity
from .solver import BinaryProgram, solve

TOL = 1e-9


def _check_routing(supplier: Supplier, offers) -> list[Contract]:
    ordered = sorted(offers, key=lambda c: c.id)
    for c in ordered:
        if c.supplier_id != supplier.id:
            raise ContractRoutingError(
                f"contract {c.id} targets supplier {c.supplier_id}, not {supplier.id}"
            )
    return ordered


def _per_order_rows(program: BinaryProgram, offers: list[Contract]) -> None:
    by_order: dict[str, list[int]] = {}
    for pos, c in enumerate(offers):
        by_order.setdefault(c.order_id, []).append(pos)
    for order_id in sorted(by_order):
        members = by_order[order_id]
        if len(members) > 1:
            program.add_constraint(members, [1.0] * len(members), 1.0)


def _capacity_rows(
    program: BinaryProgram,
    offers: list[Contract],
    positions: list[int],
    supplier: Supplier,
    from_period: Period,
) -> None:
    """One cumulative row per due period present among the given offers."""
    dues = sorted({offers[pos].terms.due for pos in positions})
    for q in dues:
        members = [pos for pos in positions if offers[pos].terms.due <= q]
        hours = [offers[pos].production_hours for pos in members]
        program.add_constraint(members, hours, cumulative_capacity(supplier, from_period, q))


def choose(supplier: Supplier, offers, from_period: Period) -> set[Contract]:
    """Exact choice: the feasible subset of offers maximizing supplier utility.

    Ties between equally good subsets resolve to the lexicographically
    smallest contract-id set.
    """
    ordered = _check_routing(supplier, offers)
    if not ordered:
        return set()
    program = BinaryProgram(
        n_vars=len(ordered),
        objective=[c.u_supplier for c in ordered],
        sense="maximize",
    )
    _per_order_rows(program, ordered)
    _capacity_rows(program, ordered, list(range(len(ordered))), supplier, from_period)
    selection = solve(program)
    return {ordered[i] for i in selection.chosen}


def choose_posterior(
    supplier: Supplier,
    offers_t,
    offers_t1,
    from_t: Period,
) -> set[Contract]:
    """Two-period choice over offers arriving in periods t and t+1.

    Three capacity families apply: period-t offers against the cumulative
    budget from t, period-(t+1) offers against the cumulative budget from
    t+1, and the pooled offers against the cumulative budget from t over
    the union of due periods.
    """
    tagged = [(c, 0) for c in offers_t] + [(c, 1) for c in offers_t1]
    tagged.sort(key=lambda item: (item[0].id, item[1]))
    ordered = [c for c, _ in tagged]
    tags = [tag for _, tag in tagged]
    _check_routing(supplier, ordered)
    if not ordered:
        return set()

    program = BinaryProgram(
        n_vars=len(ordered),
        objective=[c.u_supplier for c in ordered],
        sense="maximize",
    )
    _per_order_rows(program, ordered)
    pos_t = [i for i, tag in enumerate(tags) if tag == 0]
    pos_t1 = [i for i, tag in enumerate(tags) if tag == 1]
    _capacity_rows(program, ordered, pos_t, supplier, from_t)
    _capacity_rows(program, ordered, pos_t1, supplier, from_t + 1)
    _capacity_rows(program, ordered, list(range(len(ordered))), supplier, from_t)
    selection = solve(program)
    return {ordered[i] for i in selection.chosen}


def is_substitutable_violation(supplier: Supplier, smaller, larger, from_period: Period) -> bool:
    """True iff some contract rejected from the smaller set is chosen from the larger."""
    smaller = list(smaller)
    larger = list(larger)
    smaller_ids = {c.id for c in smaller}
    if not smaller_ids <= {c.id for c in larger}:
        raise ContractRoutingError("smaller offer set must be a subset of the larger")
    chosen_small = {c.id for c in choose(supplier, smaller, from_period)}
    chosen_large = {c.id for c in choose(supplier, larger, from_period)}
    rejected_small = smaller_ids - chosen_small
    return bool(rejected_small & chosen_large)
