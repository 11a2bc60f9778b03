"""Exact solver for small 0/1 linear programs.

Depth-first branch and bound with unit-style bound propagation on the
``coeffs . x <= bound`` rows and an LP-free upper bound: the sum, over a
greedily chosen disjoint family of packing rows (all-ones rows with bound 1),
of each row's best free objective coefficient, plus the positive objective
mass of variables outside those rows. Designed for desk-scale programs
(up to a few thousand variables), with a hard node budget instead of any
silent fallback.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleProgramError, ModelValidationError, SolverBudgetError

TOL = 1e-9

DEFAULT_NODE_LIMIT = 2_000_000


@dataclass
class BinaryProgram:
    """maximize/minimize objective . x subject to rows of coeffs . x <= bound, x binary.

    ``objective_split`` is an optional bounding hint for maximize programs
    whose objective is separable across packing rows: it maps a variable to
    (constraint index, amount) pairs with non-negative amounts summing to at
    least the variable's objective, each referenced constraint being an
    all-ones row with bound 1 containing the variable. The solver then also
    bounds the objective by one best amount per packing row.
    """

    n_vars: int
    objective: list[float] = field(default_factory=list)
    sense: str = "maximize"
    constraints: list[tuple[np.ndarray, np.ndarray, float]] = field(default_factory=list)
    objective_split: dict[int, list[tuple[int, float]]] | None = None

    def add_constraint(self, indices, coeffs, bound: float) -> None:
        idx = np.asarray(indices, dtype=np.int64)
        coef = np.asarray(coeffs, dtype=np.float64)
        if idx.shape != coef.shape:
            raise ModelValidationError("constraint indices and coefficients differ in length")
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_vars):
            raise ModelValidationError("constraint references a variable outside the program")
        if not np.isfinite(bound):
            raise ModelValidationError("constraint bound must be finite")
        self.constraints.append((idx, coef, float(bound)))

    def validate(self) -> None:
        if len(self.objective) != self.n_vars:
            raise ModelValidationError(
                f"objective has {len(self.objective)} entries for {self.n_vars} variables"
            )
        if self.sense not in ("maximize", "minimize"):
            raise ModelValidationError(f"unknown sense {self.sense!r}")


@dataclass(frozen=True)
class Selection:
    """A provably optimal set of chosen variable indices."""

    chosen: frozenset[int]
    objective_value: float
    optimality: str = "proven"


def solve(
    program: BinaryProgram,
    node_limit: int = DEFAULT_NODE_LIMIT,
    explore_ties: bool = True,
    incumbent=None,
) -> Selection:
    """Solve a BinaryProgram to proven optimality.

    With ``explore_ties`` (the default) equal-objective optima are enumerated
    and the lexicographically smallest chosen index set wins; tie exploration
    can be disabled for large programs with massively degenerate objectives,
    in which case the first optimum found under the deterministic search
    order is returned. ``incumbent`` seeds the search with a known feasible
    set of chosen indices. Raises InfeasibleProgramError when no binary point
    satisfies the constraints and SolverBudgetError when the node budget runs
    out before optimality is proven.
    """
    program.validate()
    for idx, _, bound in program.constraints:
        if not idx.size and bound < -TOL:
            raise InfeasibleProgramError("a constraint without variables has a negative bound")
    # Splitting into components composes tie-breaks per component, which can
    # miss the globally lex-smallest optimum; only fast mode decomposes.
    components = _connected_components(program) if not explore_ties else []
    chosen: set[int] = set()
    if len(components) <= 1:
        search = _Search(program, node_limit=node_limit, explore_ties=explore_ties)
        if incumbent is not None:
            search.seed_incumbent(incumbent)
        chosen.update(search.run())
    else:
        incumbent_set = set(int(i) for i in incumbent) if incumbent is not None else None
        for component in components:
            sub, back = _subprogram(program, component)
            search = _Search(sub, node_limit=node_limit, explore_ties=explore_ties)
            if incumbent_set is not None:
                local = [pos for pos, v in enumerate(component) if v in incumbent_set]
                search.seed_incumbent(local)
            chosen.update(back[i] for i in search.run())
    objective = np.asarray(program.objective, dtype=np.float64)
    value = float(objective[sorted(chosen)].sum()) if chosen else 0.0
    return Selection(chosen=frozenset(chosen), objective_value=value)


def _connected_components(program: BinaryProgram) -> list[list[int]]:
    """Variable groups linked by shared constraints, each solvable on its own."""
    parent = list(range(program.n_vars))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for idx, _, _ in program.constraints:
        if idx.size < 2:
            continue
        root = find(int(idx[0]))
        for v in idx[1:]:
            parent[find(int(v))] = root
    groups: dict[int, list[int]] = {}
    for v in range(program.n_vars):
        groups.setdefault(find(v), []).append(v)
    return [sorted(groups[root]) for root in sorted(groups, key=lambda r: min(groups[r]))]


def _subprogram(program: BinaryProgram, component: list[int]) -> tuple[BinaryProgram, list[int]]:
    position = {v: pos for pos, v in enumerate(component)}
    sub = BinaryProgram(
        n_vars=len(component),
        objective=[program.objective[v] for v in component],
        sense=program.sense,
    )
    for idx, coef, bound in program.constraints:
        if idx.size and int(idx[0]) in position:
            sub.add_constraint([position[int(v)] for v in idx], coef, bound)
    return sub, component


class _Search:
    def __init__(self, program: BinaryProgram, node_limit: int, explore_ties: bool):
        self.n = program.n_vars
        sign = 1.0 if program.sense == "maximize" else -1.0
        self.obj = sign * np.asarray(program.objective, dtype=np.float64)
        self.node_limit = node_limit
        self.explore_ties = explore_ties

        self.con_idx = [c[0] for c in program.constraints]
        self.con_coef = [c[1] for c in program.constraints]
        self.m = len(program.constraints)
        self.rem = np.array([c[2] for c in program.constraints], dtype=np.float64)
        self.negfree = np.array(
            [c[1].clip(max=0.0).sum() if c[1].size else 0.0 for c in program.constraints]
        )
        self.con_maxabs = np.array(
            [np.abs(c[1]).max() if c[1].size else 0.0 for c in program.constraints]
        )

        # Column view: for each variable, the rows it appears in, held as
        # slices of one flat array to keep memory linear in the nonzeros.
        if self.m:
            flat_var = np.concatenate(self.con_idx)
            flat_row = np.repeat(
                np.arange(self.m, dtype=np.int64),
                [idx.size for idx in self.con_idx],
            )
            flat_coef = np.concatenate(self.con_coef)
            order = np.argsort(flat_var, kind="stable")
            flat_var = flat_var[order]
            flat_row = flat_row[order]
            flat_coef = flat_coef[order]
            counts = np.bincount(flat_var, minlength=self.n)
            offsets = np.concatenate(([0], np.cumsum(counts)))
            flat_neg = flat_coef.clip(max=0.0)
            self.col_cons = [flat_row[offsets[i]: offsets[i + 1]] for i in range(self.n)]
            self.col_coef = [flat_coef[offsets[i]: offsets[i + 1]] for i in range(self.n)]
            self.col_neg = [flat_neg[offsets[i]: offsets[i + 1]] for i in range(self.n)]
        else:
            self.col_cons = [np.zeros(0, dtype=np.int64)] * self.n
            self.col_coef = [np.zeros(0, dtype=np.float64)] * self.n
            self.col_neg = [np.zeros(0, dtype=np.float64)] * self.n

        self.state = np.full(self.n, -1, dtype=np.int8)
        self.fixed_obj = 0.0
        self.trail: list[tuple[int, float]] = []
        self.dirty = np.zeros(self.m, dtype=bool)

        self._build_bound_groups()
        self._build_knapsack_rows()
        self._build_split_bound(program)
        degree = np.array([c.size for c in self.col_cons], dtype=np.int64)
        priority = np.lexsort((np.arange(self.n), -np.abs(self.obj), -degree))
        self.branch_order = priority

        self.best_val = -np.inf
        self.best_set: tuple[int, ...] | None = None
        self.nodes = 0

    def _build_bound_groups(self) -> None:
        group = np.full(self.n, -1, dtype=np.int64)
        next_group = 0
        for k in range(self.m):
            coef = self.con_coef[k]
            idx = self.con_idx[k]
            if idx.size < 2 or self.rem[k] != 1.0 or not np.all(coef == 1.0):
                continue
            if np.any(group[idx] >= 0):
                continue
            group[idx] = next_group
            next_group += 1
        for i in range(self.n):
            if group[i] < 0:
                group[i] = next_group
                next_group += 1
        order = np.argsort(group, kind="stable")
        self.var_group = group
        self.bound_order = order
        boundaries = np.flatnonzero(np.diff(group[order])) + 1
        self.bound_starts = np.concatenate(([0], boundaries)) if self.n else np.zeros(0, dtype=np.int64)
        self.group_members: dict[int, np.ndarray] = {}
        for g in range(next_group):
            members = np.flatnonzero(group == g)
            if members.size >= 2:
                self.group_members[g] = members

    def _build_knapsack_rows(self) -> None:
        """Group all-positive rows into disjoint nested families for the ratio bound.

        Capacity rows for one supplier are nested by due period. Each family
        keeps the largest such row's items (deduplicated: items sharing a
        packing group and a weight exclude each other, so only the best gain
        survives) together with every row living inside it; the family's
        contribution is the minimum over member rows of a fractional knapsack
        on the row plus the loose positive mass of family items outside it.
        """
        candidates = []
        knap_like = []
        for k in range(self.m):
            coef = self.con_coef[k]
            idx = self.con_idx[k]
            if not idx.size or np.any(coef <= 0.0):
                continue
            if self.rem[k] == 1.0 and np.all(coef == 1.0):
                continue  # packing row, already covered by the group bound
            knap_like.append(k)
            if idx.size >= 2:
                candidates.append((-idx.size, k))
        self.knap_families: list[tuple[np.ndarray, np.ndarray, np.ndarray, list[tuple[int, np.ndarray]]]] = []
        self.in_knap = np.zeros(self.n, dtype=bool)
        row_sets = {k: set(self.con_idx[k].tolist()) for k in knap_like}
        for _, k in sorted(candidates):
            idx = self.con_idx[k]
            if np.any(self.in_knap[idx]):
                continue
            self.in_knap[idx] = True
            gain = self.obj[idx]
            keep = gain > 0.0
            idx, gain = idx[keep], gain[keep]
            if not idx.size:
                continue
            outer_set = row_sets[k]
            member_ids = [k2 for k2 in knap_like if row_sets[k2] <= outer_set]
            row_coef = {
                k2: dict(zip(self.con_idx[k2].tolist(), self.con_coef[k2].tolist()))
                for k2 in member_ids
            }
            # Deduplication is sound only between items that are mutually
            # exclusive (same packing group) and interchangeable in every
            # member row (same membership at the same weight).
            best_of: dict[tuple, int] = {}
            for j in range(idx.size):
                v = int(idx[j])
                membership = tuple(
                    (k2, row_coef[k2][v]) for k2 in member_ids if v in row_sets[k2]
                )
                key = (int(self.var_group[v]), membership)
                held = best_of.get(key)
                if held is None or gain[j] > gain[held] + TOL:
                    best_of[key] = j
            keep_pos = np.array(sorted(best_of.values()), dtype=np.int64)
            idx, gain = idx[keep_pos], gain[keep_pos]
            members = []
            for k2 in member_ids:
                coefs = row_coef[k2]
                pos = np.array([j for j in range(idx.size) if int(idx[j]) in coefs], dtype=np.int64)
                if not pos.size:
                    continue
                w = np.array([coefs[int(idx[j])] for j in pos])
                ratio_order = np.lexsort((pos, -gain[pos] / w))
                members.append((k2, pos[ratio_order], w[ratio_order]))
            self.knap_families.append((idx, gain, members))

    def _build_split_bound(self, program: BinaryProgram) -> None:
        """Flatten the objective-split hint into reduceat-ready arrays."""
        self.split_vars = None
        split = program.objective_split
        if not split or program.sense != "maximize":
            return
        entries: list[tuple[int, int, float]] = []
        # Positive objective mass not covered by any split entry stays loose.
        resid = np.clip(self.obj, 0.0, None)
        for v, parts in split.items():
            v = int(v)
            if self.obj[v] <= 0.0:
                continue
            total = 0.0
            for k, amount in parts:
                if amount < -TOL:
                    raise ModelValidationError("objective_split amounts must be non-negative")
                coef = self.con_coef[k]
                if self.rem[k] != 1.0 or not np.all(coef == 1.0) or v not in self.con_idx[k]:
                    raise ModelValidationError("objective_split must reference packing rows holding the variable")
                entries.append((int(k), v, float(amount)))
                total += amount
            resid[v] = max(0.0, float(self.obj[v]) - total)
        if not entries:
            return
        entries.sort()
        self.split_rows = np.array([e[0] for e in entries], dtype=np.int64)
        self.split_vars = np.array([e[1] for e in entries], dtype=np.int64)
        self.split_amounts = np.array([e[2] for e in entries])
        starts = np.flatnonzero(np.diff(self.split_rows)) + 1
        self.split_starts = np.concatenate(([0], starts))
        self.split_resid = resid

    # -- state updates ------------------------------------------------------

    def _fix(self, i: int, v: int) -> bool:
        s = self.state[i]
        if s != -1:
            return s == v
        self.state[i] = v
        self.trail.append((i, v))
        self.fixed_obj += self.obj[i] * v
        kk = self.col_cons[i]
        if kk.size:
            if v:
                self.rem[kk] -= self.col_coef[i]
            self.negfree[kk] -= self.col_neg[i]
            self.dirty[kk] = True
        return True

    def _undo_to(self, mark: int) -> None:
        while len(self.trail) > mark:
            i, v = self.trail.pop()
            self.state[i] = -1
            self.fixed_obj -= self.obj[i] * v
            kk = self.col_cons[i]
            if kk.size:
                if v:
                    self.rem[kk] += self.col_coef[i]
                self.negfree[kk] += self.col_neg[i]
        self.dirty[:] = False

    def _propagate(self) -> bool:
        """Fix forced variables until fixpoint; False on constraint conflict."""
        while True:
            ks = np.flatnonzero(self.dirty)
            if not ks.size:
                return True
            self.dirty[ks] = False
            for k in ks:
                slack = self.rem[k] - self.negfree[k]
                if slack < -TOL:
                    return False
                if slack >= self.con_maxabs[k] - TOL:
                    continue  # no coefficient is large enough to force anything
                idx = self.con_idx[k]
                free = self.state[idx] == -1
                if not free.any():
                    continue
                a = self.con_coef[k][free]
                vars_free = idx[free]
                for i in vars_free[a > slack + TOL]:
                    if not self._fix(int(i), 0):
                        return False
                for i in vars_free[-a > slack + TOL]:
                    if not self._fix(int(i), 1):
                        return False

    # -- search -------------------------------------------------------------

    def _bound(self) -> float:
        if not self.n:
            return self.fixed_obj
        free = self.state == -1
        vals = np.where(free[self.bound_order], self.obj[self.bound_order], -np.inf)
        groupmax = np.maximum.reduceat(vals, self.bound_starts)
        best = self.fixed_obj + np.clip(groupmax, 0.0, None).sum()
        if self.split_vars is not None:
            amounts = np.where(free[self.split_vars], self.split_amounts, -np.inf)
            rowmax = np.maximum.reduceat(amounts, self.split_starts)
            split_bound = (
                self.fixed_obj
                + np.clip(rowmax, 0.0, None).sum()
                + float(self.split_resid[free].sum())
            )
            best = min(best, split_bound)
        if not self.knap_families:
            return best
        outside = float(np.where(free & ~self.in_knap, self.obj, 0.0).clip(min=0.0).sum())
        packed_total = 0.0
        for idx, gain, members in self.knap_families:
            fam_free = free[idx]
            fam_total = float(gain[fam_free].sum())
            fam_bound = fam_total
            for k, pos, weights in members:
                budget = max(0.0, self.rem[k])
                packed = 0.0
                in_row = 0.0
                for j in range(pos.size):
                    p = pos[j]
                    if not fam_free[p]:
                        continue
                    g = gain[p]
                    in_row += g
                    if budget <= 0.0:
                        continue
                    w = weights[j]
                    if w <= budget:
                        packed += g
                        budget -= w
                    else:
                        packed += g * (budget / w)
                        budget = 0.0
                fam_bound = min(fam_bound, packed + (fam_total - in_row))
            packed_total += fam_bound
        return min(best, self.fixed_obj + outside + packed_total)

    def _prune(self, ub: float) -> bool:
        if self.best_set is None:
            return False
        if self.explore_ties:
            return ub < self.best_val - TOL
        return ub <= self.best_val + TOL

    def _select_var(self) -> int | None:
        if not self.n:
            return None
        free = self.state[self.branch_order] == -1
        pos = int(np.argmax(free))
        if not free[pos]:
            return None
        return int(self.branch_order[pos])

    def _branch_decisions(self, var: int) -> list[tuple[tuple[int, int], ...]]:
        """Binary branch on var, or whole-group enumeration for wide packing rows.

        A wide group (one bundle row per supplier, say) is decided in one
        node: one child per member taking the slot, plus an all-out child.
        Mutual exclusion makes the children disjoint and exhaustive.
        """
        group = int(self.var_group[var])
        members = [int(i) for i in self.group_members.get(group, ()) if self.state[i] == -1]
        if len(members) >= 16:
            members.sort(key=lambda i: (-self.obj[i], i))
            decisions: list[tuple[tuple[int, int], ...]] = [
                ((i, 1),) for i in members if self.obj[i] > 0.0
            ]
            decisions.append(tuple((i, 0) for i in members))
            decisions.extend(((i, 1),) for i in members if self.obj[i] <= 0.0)
            return decisions
        first = 1 if self.obj[var] >= 0.0 else 0
        return [((var, first),), ((var, 1 - first),)]

    def _dominance_presolve(self) -> None:
        """Zero out strictly dominated members of each packing group.

        Within a group, variable j is dominated by i when i appears in no row
        j misses, is nowhere heavier, and earns strictly more; any solution
        choosing j improves by switching to i, so j never enters an optimum.
        """
        rows_of: dict[int, dict[int, float]] = {}
        for i in range(self.n):
            rows_of[i] = {int(k): float(a) for k, a in zip(self.col_cons[i], self.col_coef[i])}
        for members in self.group_members.values():
            live = [int(i) for i in members if self.state[i] == -1]
            for j in live:
                rj = rows_of[j]
                for i in live:
                    if i == j or self.obj[i] <= self.obj[j] + TOL or self.state[i] != -1:
                        continue
                    ri = rows_of[i]
                    # Swapping j for i must not raise any row's load: shared
                    # rows need i no heavier, i-only rows need a helpful sign,
                    # j-only rows must not rely on j's negative contribution.
                    if all(a <= rj.get(k, 0.0) + TOL for k, a in ri.items()) and all(
                        a >= -TOL for k, a in rj.items() if k not in ri
                    ):
                        self._fix(j, 0)
                        break

    def _record(self) -> None:
        value = self.fixed_obj
        chosen = tuple(int(i) for i in np.flatnonzero(self.state == 1))
        if value > self.best_val + TOL:
            self.best_val = value
            self.best_set = chosen
        elif value >= self.best_val - TOL:
            if self.best_set is None or chosen < self.best_set:
                self.best_set = chosen
                self.best_val = max(self.best_val, value)

    def seed_incumbent(self, chosen) -> None:
        chosen = sorted(int(i) for i in chosen)
        x = np.zeros(self.n, dtype=np.float64)
        x[chosen] = 1.0
        for k in range(self.m):
            idx, coef = self.con_idx[k], self.con_coef[k]
            lhs = float((coef * x[idx]).sum()) if idx.size else 0.0
            if lhs > self.rem[k] + TOL:
                raise ModelValidationError("incumbent violates a constraint")
        self.best_val = float(self.obj[chosen].sum()) if chosen else 0.0
        self.best_set = tuple(chosen)

    def _root_probe(self) -> bool:
        """Permanently fix variables whose opposite value cannot beat the incumbent.

        Each free variable is tentatively fixed both ways; a value whose
        subtree is infeasible or bound-dominated forces the other value at
        the root. Repeats until a full pass fixes nothing.
        """
        changed = True
        while changed:
            changed = False
            for i in range(self.n):
                if self.state[i] != -1:
                    continue
                for v in (0, 1):
                    mark = len(self.trail)
                    ok = self._fix(i, v) and self._propagate()
                    bad = not ok or self._prune(self._bound())
                    self._undo_to(mark)
                    if bad:
                        if not (self._fix(i, 1 - v) and self._propagate()):
                            return False
                        changed = True
                        break
        return True

    def run(self) -> tuple[int, ...]:
        self.dirty[:] = True
        root_feasible = self._propagate()
        if root_feasible and 0 < self.n <= 1500:
            self._dominance_presolve()
            root_feasible = self._propagate()
            if root_feasible:
                root_feasible = self._root_probe()
        if root_feasible and not self._prune(self._bound()):
            var = self._select_var()
            if var is None:
                self._record()
            else:
                stack = [[self._branch_decisions(var), 0, len(self.trail)]]
                while stack:
                    frame = stack[-1]
                    decisions, didx, mark = frame
                    self._undo_to(mark)
                    if didx == len(decisions):
                        stack.pop()
                        continue
                    frame[1] += 1
                    self.nodes += 1
                    if self.nodes > self.node_limit:
                        raise SolverBudgetError(
                            f"node budget {self.node_limit} exhausted after {self.nodes} nodes"
                        )
                    if not all(self._fix(i, v) for i, v in decisions[didx]) or not self._propagate():
                        continue
                    if self._prune(self._bound()):
                        continue
                    nxt = self._select_var()
                    if nxt is None:
                        self._record()
                        continue
                    stack.append([self._branch_decisions(nxt), 0, len(self.trail)])
        if self.best_set is None:
            raise InfeasibleProgramError("no binary point satisfies the constraints")
        return self.best_set
