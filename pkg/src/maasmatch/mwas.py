"""Maximum-weight approximately stable matching over the expanded bundle graph.

Each supplier's feasible order subsets are expanded into contract bundles
(one contract per member order). A first pass finds the minimum achievable
number of blocking groups (the lower bound LB), where a bundle blocks unless
it is accepted, some member order holds a weakly better contract, or the
supplier holds a weakly better bundle. A second pass reoptimizes utility
(max, min) or cardinality subject to staying at LB blocking groups.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import BundleBudgetError, InfeasibleProgramError, ModelValidationError
from .gen import MarketInstance
from .maxweight import build_matching
from .model import Contract, ContractBundle, Matching, Period, Supplier, bundle_feasible, cumulative_capacity
from .solver import BinaryProgram, solve

TOL = 1e-9

DEFAULT_BUNDLE_CAP = 200_000


@dataclass
class ExpandedGraph:
    """All feasible contract bundles plus order and supplier indexes into them."""

    bundles: list[ContractBundle]
    by_order: dict[str, list[int]] = field(default_factory=dict)
    by_supplier: dict[str, list[int]] = field(default_factory=dict)

    @staticmethod
    def from_bundles(bundles: list[ContractBundle]) -> "ExpandedGraph":
        graph = ExpandedGraph(bundles=bundles)
        for pos, bundle in enumerate(bundles):
            graph.by_supplier.setdefault(bundle.supplier_id, []).append(pos)
            for order_id in bundle.order_ids:
                graph.by_order.setdefault(order_id, []).append(pos)
        return graph

    def index_of(self, supplier_id: str, contract_ids) -> int | None:
        wanted = tuple(sorted(contract_ids))
        for pos in self.by_supplier.get(supplier_id, []):
            if self.bundles[pos].contract_ids == wanted:
                return pos
        return None

    def stats(self) -> dict[str, int]:
        """Bundle counts per supplier, for experiment capacity planning."""
        return {sid: len(positions) for sid, positions in sorted(self.by_supplier.items())}


def max_bundle_size(supplier: Supplier, candidate_orders, from_period: Period) -> int:
    """Largest number of the candidate orders this supplier could serve at once.

    Candidates are (order_id, production_hours, due) triples; the bound comes
    from maximizing the accepted count under cumulative capacity rows.
    """
    candidates = sorted(candidate_orders, key=lambda t: t[0])
    if not candidates:
        return 0
    program = BinaryProgram(n_vars=len(candidates), objective=[1.0] * len(candidates), sense="maximize")
    dues = sorted({due for _, _, due in candidates})
    for q in dues:
        members = [i for i, (_, _, due) in enumerate(candidates) if due <= q]
        hours = [candidates[i][1] for i in members]
        program.add_constraint(members, hours, cumulative_capacity(supplier, from_period, q))
    selection = solve(program, explore_ties=False)
    return len(selection.chosen)


def expand_and_prune(
    instance: MarketInstance,
    current: Period,
    bundle_cap: int = DEFAULT_BUNDLE_CAP,
) -> ExpandedGraph:
    """Enumerate feasible contract bundles for every supplier.

    Production hours and due dates are shared by all contracts of an
    (order, supplier) pair, so capacity feasibility is decided once per order
    subset and infeasible subsets prune all of their supersets. A supplier
    whose bundle count would exceed ``bundle_cap`` raises BundleBudgetError.
    """
    feasible = lambda sup, contracts: bundle_feasible(sup, contracts, current)
    sizer = lambda sup, cand: max_bundle_size(sup, cand, current)
    return _expand(instance, feasible, sizer, bundle_cap)


def _expand(instance: MarketInstance, feasible, sizer, bundle_cap: int) -> ExpandedGraph:
    by_supplier: dict[str, dict[str, list[Contract]]] = {}
    for c in sorted(instance.contracts, key=lambda c: c.id):
        by_supplier.setdefault(c.supplier_id, {}).setdefault(c.order_id, []).append(c)

    bundles: list[ContractBundle] = []
    for supplier in sorted(instance.suppliers, key=lambda s: s.id):
        pairs = by_supplier.get(supplier.id)
        if not pairs:
            continue
        order_ids = sorted(pairs)
        candidates = [
            (oid, pairs[oid][0].production_hours, pairs[oid][0].terms.due) for oid in order_ids
        ]
        cap = sizer(supplier, candidates)
        if cap == 0:
            continue
        count_before = len(bundles)

        def grow(start: int, combo: list[str]) -> None:
            for idx in range(start, len(order_ids)):
                oid = order_ids[idx]
                combo.append(oid)
                probe = [pairs[o][0] for o in combo]
                if feasible(supplier, probe):
                    for pick in itertools.product(*(pairs[o] for o in combo)):
                        bundles.append(ContractBundle.build(supplier.id, pick))
                        if len(bundles) - count_before > bundle_cap:
                            raise BundleBudgetError(
                                f"supplier {supplier.id} exceeds bundle cap {bundle_cap}"
                            )
                    if len(combo) < cap:
                        grow(idx + 1, combo)
                combo.pop()

        grow(0, [])
    return ExpandedGraph.from_bundles(bundles)


# -- the two-step program ----------------------------------------------------


class _BundleProgramData:
    """Shared cover structure for the blocking-group constraints."""

    def __init__(self, graph: ExpandedGraph):
        self.graph = graph
        self.n = len(graph.bundles)
        self.covers: list[np.ndarray] = []
        supplier_sorted: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        for sid, positions in graph.by_supplier.items():
            pos = np.asarray(positions, dtype=np.int64)
            totals = np.asarray([graph.bundles[p].u_supplier_total for p in positions])
            order = np.argsort(totals, kind="stable")
            supplier_sorted[sid] = (pos[order], totals[order])
        order_sorted: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        for oid, positions in graph.by_order.items():
            pos = np.asarray(positions, dtype=np.int64)
            utils = np.asarray(
                [self._member_utility(graph.bundles[p], oid) for p in positions]
            )
            order = np.argsort(utils, kind="stable")
            order_sorted[oid] = (pos[order], utils[order])

        for b, bundle in enumerate(graph.bundles):
            parts = [np.asarray([b], dtype=np.int64)]
            pos, totals = supplier_sorted[bundle.supplier_id]
            cut = int(np.searchsorted(totals, bundle.u_supplier_total - TOL, side="left"))
            parts.append(pos[cut:])
            for contract in bundle.contracts:
                pos_o, utils_o = order_sorted[contract.order_id]
                cut = int(np.searchsorted(utils_o, contract.u_order - TOL, side="left"))
                parts.append(pos_o[cut:])
            self.covers.append(np.unique(np.concatenate(parts)))

    @staticmethod
    def _member_utility(bundle: ContractBundle, order_id: str) -> float:
        for c in bundle.contracts:
            if c.order_id == order_id:
                return c.u_order
        raise ModelValidationError(f"bundle does not contain order {order_id}")

    def count_uncovered(self, accepted: set[int]) -> int:
        """Blocking groups implied by a set of accepted bundle positions."""
        return sum(1 for b in range(self.n) if not accepted.intersection(self.covers[b].tolist()))

    def build_program(self, objective: str, y_budget: float | None) -> BinaryProgram:
        """Variables: X_b at positions 0..n-1, then Y_b when the budget allows any.

        A zero blocking-group budget turns every bundle row into a pure
        covering constraint, so the Y variables are dropped outright.
        The disjoint per-supplier rows go in first to drive the solver's
        partition bound.
        """
        n = self.n
        with_y = y_budget is None or y_budget > 0
        if objective == "min-groups":
            obj_x = [0.0] * n
            sense = "minimize"
        elif objective == "feasibility":
            obj_x = [0.0] * n
            sense = "maximize"
        elif objective in ("max-utility", "min-utility"):
            obj_x = [bundle.u_grand_total for bundle in self.graph.bundles]
            sense = "maximize" if objective == "max-utility" else "minimize"
        elif objective == "max-cardinality":
            obj_x = [float(len(bundle.contracts)) for bundle in self.graph.bundles]
            sense = "maximize"
        else:
            raise ModelValidationError(f"unknown bundle objective {objective!r}")
        if with_y:
            y_sign = 1.0 if objective == "min-groups" else 0.0
            obj = obj_x + [y_sign] * n
        else:
            if objective == "min-groups":
                raise ModelValidationError("minimizing groups needs the Y variables")
            obj = obj_x
        program = BinaryProgram(n_vars=len(obj), objective=obj, sense=sense)
        for sid in sorted(self.graph.by_supplier):
            members = self.graph.by_supplier[sid]
            program.add_constraint(members, [1.0] * len(members), 1.0)
        order_row: dict[str, int] = {}
        for oid in sorted(self.graph.by_order):
            members = self.graph.by_order[oid]
            order_row[oid] = len(program.constraints)
            program.add_constraint(members, [1.0] * len(members), 1.0)
        for b in range(n):
            idx = np.concatenate((self.covers[b], [n + b])) if with_y else self.covers[b]
            program.add_constraint(idx, -np.ones(idx.size), -1.0)
        if with_y and y_budget is not None:
            program.add_constraint(np.arange(n, 2 * n), np.ones(n), float(y_budget))
        if sense == "maximize" and objective in ("max-utility", "max-cardinality"):
            # The bundle objective separates across member orders, which lets
            # the solver bound each order's contribution by its best bundle.
            per_contract = (lambda c: c.u_total) if objective == "max-utility" else (lambda c: 1.0)
            program.objective_split = {
                b: [(order_row[c.order_id], per_contract(c)) for c in bundle.contracts]
                for b, bundle in enumerate(self.graph.bundles)
            }
        return program

    def assignment_for(self, matching: Matching) -> tuple[set[int], int] | None:
        """Map a matching onto accepted bundle positions; None if not expressible."""
        accepted: set[int] = set()
        for supplier_id, contracts in matching.by_supplier().items():
            pos = self.graph.index_of(supplier_id, [c.id for c in contracts])
            if pos is None:
                return None
            accepted.add(pos)
        return accepted, self.count_uncovered(accepted)

    def unpack(self, chosen: frozenset[int]) -> tuple[Matching, int]:
        accepted = {b for b in chosen if b < self.n}
        contracts = [c for b in sorted(accepted) for c in self.graph.bundles[b].contracts]
        y_count = sum(1 for b in chosen if b >= self.n)
        return build_matching(contracts), y_count

    def solution_vars(self, accepted: set[int]) -> list[int]:
        ys = [self.n + b for b in range(self.n) if not accepted.intersection(self.covers[b].tolist())]
        return sorted(accepted) + ys


def min_blocking_groups(
    graph: ExpandedGraph,
    warm_matchings=(),
    node_limit: int | None = None,
    data: _BundleProgramData | None = None,
) -> tuple[int, Matching]:
    """Minimum number of blocking groups over all matchings, with one witness.

    Warm matchings (typically the deferred-acceptance outcome) supply an
    initial upper bound K; feasibility probes at budgets 0..K-1 then either
    find a strictly better matching or prove K is the minimum.
    """
    if data is None:
        data = _BundleProgramData(graph)
    if data.n == 0:
        return 0, Matching()
    best_accepted: set[int] = set()
    best_count = data.count_uncovered(best_accepted)
    for matching in warm_matchings:
        mapped = data.assignment_for(matching)
        if mapped is None:
            continue
        accepted, count = mapped
        if count < best_count:
            best_accepted, best_count = accepted, count
    kwargs = {} if node_limit is None else {"node_limit": node_limit}
    for budget in range(best_count):
        program = data.build_program("feasibility", y_budget=budget)
        try:
            selection = solve(program, explore_ties=False, **kwargs)
        except InfeasibleProgramError:
            continue
        matching, _ = data.unpack(selection.chosen)
        return budget, matching
    witness, _ = data.unpack(frozenset(data.solution_vars(best_accepted)))
    return best_count, witness


def match_mwas(
    graph: ExpandedGraph,
    objective: str = "max-utility",
    lb: int | None = None,
    warm_matchings=(),
    node_limit: int | None = None,
    data: _BundleProgramData | None = None,
) -> Matching:
    """Best matching under the chosen objective among those at LB blocking groups."""
    if data is None:
        data = _BundleProgramData(graph)
    if data.n == 0:
        return Matching()
    if lb is None:
        lb, witness = min_blocking_groups(
            graph, warm_matchings=warm_matchings, node_limit=node_limit, data=data
        )
        warm_matchings = tuple(warm_matchings) + (witness,)
    program = data.build_program(objective, y_budget=lb)
    incumbent = None
    if objective == "max-utility":
        for matching in warm_matchings:
            mapped = data.assignment_for(matching)
            if mapped is not None and mapped[1] <= lb:
                accepted = mapped[0]
                incumbent = sorted(accepted) if lb == 0 else data.solution_vars(accepted)
                break
    kwargs = {} if node_limit is None else {"node_limit": node_limit}
    selection = solve(program, explore_ties=False, incumbent=incumbent, **kwargs)
    matching, _ = data.unpack(selection.chosen)
    return matching


def run_mwas(
    instance: MarketInstance,
    current: Period,
    objective: str = "max-utility",
    warm_matchings=(),
    bundle_cap: int = DEFAULT_BUNDLE_CAP,
    node_limit: int | None = None,
    graph: ExpandedGraph | None = None,
) -> tuple[Matching, int, ExpandedGraph]:
    """Expand, find LB, and reoptimize; returns (matching, LB, graph)."""
    if graph is None:
        graph = expand_and_prune(instance, current, bundle_cap=bundle_cap)
    data = _BundleProgramData(graph)
    lb, witness = min_blocking_groups(
        graph, warm_matchings=warm_matchings, node_limit=node_limit, data=data
    )
    matching = match_mwas(
        graph,
        objective=objective,
        lb=lb,
        warm_matchings=tuple(warm_matchings) + (witness,),
        node_limit=node_limit,
        data=data,
    )
    return matching, lb, graph
