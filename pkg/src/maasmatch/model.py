"""Domain model for a two-sided manufacturing services marketplace.

Orders and suppliers score contract terms with additive multi-attribute
utilities: each attribute has its own utility curve (a quadratic over a
normalized domain, or a categorical map) and a non-negative weight, with
weights summing to one. Capacity feasibility is expressed through
cumulative per-period hour budgets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ContractRoutingError, EvaluationError, ModelValidationError

# One period corresponds to 12 wall-clock hours.
Period = int

PROCESSES = ("FDM", "SLA", "MaterialJetting", "SLS-polymer", "SLS-metal")

SCALES = ("small", "medium", "large")

EARTH_RADIUS_MILES = 3958.8

TOL = 1e-9


def clamp(value: float, lo: float, hi: float) -> float:
    return lo if value < lo else hi if value > hi else value


def haversine_miles(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance in miles between two (lat, lon) points in degrees."""
    lat1, lon1 = math.radians(a[0]), math.radians(a[1])
    lat2, lon2 = math.radians(b[0]), math.radians(b[1])
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_MILES * math.asin(min(1.0, math.sqrt(h)))


@dataclass(frozen=True)
class AttributeUtility:
    """Single-attribute utility: quadratic over a normalized raw range, or a label map.

    Quadratic form: the raw value is clamped to [lo, hi], mapped affinely onto
    x in [0, 1], and the output clamp(a*x^2 + b*x + c, 0, 1) is returned.
    Categorical form: a finite label -> value map with values in [0, 1].
    """

    kind: str  # "quadratic" | "categorical"
    coeffs: tuple[float, float, float] | None = None
    lo: float = 0.0
    hi: float = 1.0
    mapping: dict[str, float] | None = None

    @staticmethod
    def quadratic(a: float, b: float, c: float, lo: float, hi: float) -> "AttributeUtility":
        if not hi > lo:
            raise ModelValidationError(f"empty raw range [{lo}, {hi}]")
        return AttributeUtility(kind="quadratic", coeffs=(a, b, c), lo=lo, hi=hi)

    @staticmethod
    def categorical(mapping: dict[str, float]) -> "AttributeUtility":
        for label, value in mapping.items():
            if not 0.0 <= value <= 1.0:
                raise ModelValidationError(f"categorical value for {label!r} outside [0, 1]")
        return AttributeUtility(kind="categorical", mapping=dict(mapping))


def eval_attribute(u: AttributeUtility, raw) -> float:
    """Evaluate one attribute utility at a raw value or label; output is in [0, 1]."""
    if u.kind == "quadratic":
        x = clamp((float(raw) - u.lo) / (u.hi - u.lo), 0.0, 1.0)
        a, b, c = u.coeffs
        return clamp(a * x * x + b * x + c, 0.0, 1.0)
    if u.kind == "categorical":
        try:
            return u.mapping[raw]
        except KeyError:
            raise EvaluationError(f"unknown categorical label {raw!r}") from None
    raise ModelValidationError(f"unknown attribute utility kind {u.kind!r}")


@dataclass(frozen=True)
class PreferenceModel:
    """Ordered attribute utilities with weights that must sum to one."""

    attributes: tuple[tuple[str, AttributeUtility, float], ...]

    def validate(self) -> None:
        total = 0.0
        for name, _, weight in self.attributes:
            if weight < 0.0:
                raise ModelValidationError(f"negative weight for attribute {name!r}")
            total += weight
        if abs(total - 1.0) > TOL:
            raise ModelValidationError(f"attribute weights sum to {total!r}, expected 1")

    def evaluate(self, raws: dict) -> float:
        """Weighted sum of attribute utilities over the supplied raw values."""
        self.validate()
        total = 0.0
        for name, util, weight in self.attributes:
            if name not in raws:
                raise EvaluationError(f"no raw value supplied for attribute {name!r}")
            total += weight * eval_attribute(util, raws[name])
        return total


@dataclass
class Order:
    """A client's job: what to make, when it is due, and how contracts are scored."""

    id: str
    client_id: int
    arrival: Period
    due: Period
    process: str
    material: str
    resolution_microns: float
    base_production_hours: float
    location: tuple[float, float]
    size_preference: str  # which supplier scale this order favors
    prefs: PreferenceModel

    def validate(self) -> None:
        if not 2 <= self.due - self.arrival <= 7:
            raise ModelValidationError(f"order {self.id}: due offset {self.due - self.arrival} outside [2, 7]")
        if self.base_production_hours <= 0:
            raise ModelValidationError(f"order {self.id}: non-positive production hours")


@dataclass
class Supplier:
    """A machine listing: capability envelope, capacity schedule and preferences."""

    id: str
    process: str
    materials: tuple[str, ...]
    resolution_range: tuple[float, float]
    scale: str
    rating: float
    location: tuple[float, float]
    hourly_rate: float
    speed_factor: float
    capacity_by_period: dict[Period, float]
    prefs: PreferenceModel
    known_clients: set[int] = field(default_factory=set)

    def validate(self) -> None:
        for period, hours in self.capacity_by_period.items():
            if not 0.0 <= hours <= 6.0 + TOL:
                raise ModelValidationError(f"supplier {self.id}: listed capacity {hours} for period {period} outside [0, 6]")
        if not 1.0 <= self.rating <= 5.0:
            raise ModelValidationError(f"supplier {self.id}: rating {self.rating} outside [1, 5]")

    def capacity_horizon(self) -> Period | None:
        """Latest period with listed capacity, or None if nothing is listed."""
        return max(self.capacity_by_period) if self.capacity_by_period else None


@dataclass(frozen=True)
class ContractTerms:
    material: str
    process: str
    resolution_microns: float
    due: Period
    price: float

    def validate(self) -> None:
        if self.price <= 0:
            raise ModelValidationError("contract price must be positive")


@dataclass(frozen=True)
class Contract:
    """An (order, supplier, terms) triple with both sides' utilities attached."""

    id: str
    order_id: str
    supplier_id: str
    terms: ContractTerms
    production_hours: float
    u_order: float
    u_supplier: float
    u_total: float

    def validate(self) -> None:
        self.terms.validate()
        if self.production_hours <= 0:
            raise ModelValidationError(f"contract {self.id}: non-positive production hours")
        if abs(self.u_total - (self.u_order + self.u_supplier)) > TOL:
            raise ModelValidationError(f"contract {self.id}: u_total does not equal u_order + u_supplier")


@dataclass(frozen=True)
class ContractBundle:
    """One supplier plus a set of contracts with pairwise-distinct orders."""

    supplier_id: str
    contracts: tuple[Contract, ...]  # sorted by contract id
    u_supplier_total: float
    u_grand_total: float

    @staticmethod
    def build(supplier_id: str, contracts) -> "ContractBundle":
        members = tuple(sorted(contracts, key=lambda c: c.id))
        orders = [c.order_id for c in members]
        if len(set(orders)) != len(orders):
            raise ModelValidationError("bundle contracts must have pairwise-distinct orders")
        for c in members:
            if c.supplier_id != supplier_id:
                raise ContractRoutingError(f"contract {c.id} targets {c.supplier_id}, not {supplier_id}")
        return ContractBundle(
            supplier_id=supplier_id,
            contracts=members,
            u_supplier_total=sum(c.u_supplier for c in members),
            u_grand_total=sum(c.u_total for c in members),
        )

    @property
    def order_ids(self) -> tuple[str, ...]:
        return tuple(c.order_id for c in self.contracts)

    @property
    def contract_ids(self) -> tuple[str, ...]:
        return tuple(c.id for c in self.contracts)


@dataclass
class Matching:
    """Many-to-one assignment: each order to at most one contract."""

    assigned: dict[str, Contract] = field(default_factory=dict)

    def by_supplier(self) -> dict[str, list[Contract]]:
        view: dict[str, list[Contract]] = {}
        for contract in self.assigned.values():
            view.setdefault(contract.supplier_id, []).append(contract)
        for contracts in view.values():
            contracts.sort(key=lambda c: c.id)
        return view

    def supplier_contracts(self, supplier_id: str) -> list[Contract]:
        return sorted(
            (c for c in self.assigned.values() if c.supplier_id == supplier_id),
            key=lambda c: c.id,
        )

    def total_utility(self) -> float:
        return sum(c.u_total for c in sorted(self.assigned.values(), key=lambda c: c.id))

    def contract_ids(self) -> set[str]:
        return {c.id for c in self.assigned.values()}

    def is_matched(self, order_id: str) -> bool:
        return order_id in self.assigned


def order_utility(order: Order, supplier: Supplier, terms: ContractTerms) -> float:
    """Order-side utility of a contract: weighted location, size, rating and price terms."""
    raws = {
        "location": haversine_miles(order.location, supplier.location),
        "size": supplier.scale,
        "rating": supplier.rating,
        "price": terms.price,
    }
    return order.prefs.evaluate(raws)


def supplier_utility(supplier: Supplier, order: Order, terms: ContractTerms, current: Period) -> float:
    """Supplier-side utility of a contract: weighted material, urgency and revenue terms.

    Urgency is the number of periods between the current period and the due date.
    """
    raws = {
        "material": terms.material,
        "urgency": terms.due - current,
        "revenue": terms.price,
    }
    return supplier.prefs.evaluate(raws)


def is_capability_feasible(order: Order, supplier: Supplier) -> bool:
    """Process, material and resolution compatibility; capacity is checked per bundle."""
    lo, hi = supplier.resolution_range
    return (
        order.process == supplier.process
        and order.material in supplier.materials
        and lo <= order.resolution_microns <= hi
    )


def cumulative_capacity(supplier: Supplier, from_period: Period, upto: Period) -> float:
    """Sum of listed capacity hours over [from_period, upto]; unlisted periods count 0."""
    if from_period > upto:
        raise ModelValidationError(f"cumulative_capacity: from {from_period} > upto {upto}")
    return sum(
        hours for period, hours in supplier.capacity_by_period.items() if from_period <= period <= upto
    )


def bundle_feasible(supplier: Supplier, contracts, from_period: Period) -> bool:
    """True iff hours of contracts due up to each period fit the cumulative capacity."""
    members = list(contracts)
    orders = [c.order_id for c in members]
    if len(set(orders)) != len(orders):
        raise ModelValidationError("bundle contracts must have pairwise-distinct orders")
    for c in members:
        if c.supplier_id != supplier.id:
            raise ContractRoutingError(f"contract {c.id} targets {c.supplier_id}, not {supplier.id}")
    dues = sorted({c.terms.due for c in members})
    for q in dues:
        load = sum(c.production_hours for c in members if c.terms.due <= q)
        if load > cumulative_capacity(supplier, from_period, q) + TOL:
            return False
    return True


def validate_matching(matching: Matching, suppliers: dict[str, Supplier], current: Period) -> None:
    """Raise unless the matching satisfies per-order uniqueness and supplier capacity."""
    for order_id, contract in matching.assigned.items():
        if contract.order_id != order_id:
            raise ModelValidationError(f"matching maps order {order_id} to contract of {contract.order_id}")
    for supplier_id, contracts in matching.by_supplier().items():
        supplier = suppliers[supplier_id]
        if not bundle_feasible(supplier, contracts, current):
            raise ModelValidationError(f"supplier {supplier_id}: assigned contracts exceed capacity")
