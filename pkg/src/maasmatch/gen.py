"""Synthetic marketplace instance generation.

Suppliers and per-period order arrivals are drawn from seeded generators,
with utility curves instantiated from per-attribute anchor templates whose
coefficients are jittered within a sign-preserving band. All randomness
flows through numpy Generators derived from (seed, stream, period) keys so
that any slice of an instance can be regenerated independently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ModelValidationError
from .model import (
    AttributeUtility,
    Contract,
    ContractTerms,
    Order,
    Period,
    PreferenceModel,
    Supplier,
    is_capability_feasible,
    order_utility,
    supplier_utility,
)

TOL = 1e-9

# Machine capability templates per process: offered materials and the
# printable resolution window in microns.
PROCESS_TEMPLATES: dict[str, tuple[tuple[str, ...], tuple[float, float]]] = {
    "FDM": (("PLA", "Nylon", "PC", "ASA", "TPU"), (100.0, 300.0)),
    "SLA": (("Resin-standard", "Resin-tough", "Resin-castable"), (25.0, 100.0)),
    "MaterialJetting": (("Resin-rigid", "Resin-flexible", "Resin-clear"), (16.0, 62.0)),
    "SLS-polymer": (("Nylon", "Nylon-glassfilled", "TPU"), (60.0, 120.0)),
    "SLS-metal": (("Aluminum", "Steel", "Titanium"), (20.0, 80.0)),
}

# Anarchy-free anchor coefficients for the quadratic attribute curves,
# evaluated over the normalized [0, 1] domain of each raw range.
LOCATION_CURVE = (0.595, -1.516, 0.925, 50.0, 500.0)
RATING_CURVE = (-0.219, 1.225, -0.005, 1.0, 5.0)
PRICE_CURVE = (0.922, -1.962, 1.033)
URGENCY_CURVE = (-0.240, 1.329, -0.048, 1.0, 8.0)
REVENUE_CURVE = (-0.444, 1.401, 0.032, 150.0, 1600.0)

SIZE_PREF_TEMPLATES = {
    "large": {"large": 1.0, "medium": 0.6, "small": 0.3},
    "small": {"small": 1.0, "medium": 0.6, "large": 0.3},
}

# Share of SLS order arrivals that require the metal process, matching the
# 15:5 polymer-to-metal split on the supplier side.
SLS_METAL_SHARE = 0.25

DEFAULT_SUPPLIER_MIX = {
    "FDM": 0.50,
    "SLA": 0.15,
    "MaterialJetting": 0.15,
    "SLS-polymer": 0.15,
    "SLS-metal": 0.05,
}

DEFAULT_ORDER_MIX = {"FDM": 0.5, "SLA": 0.15, "MaterialJetting": 0.15, "SLS": 0.2}

NOMINAL_HOURLY_RATE = 80.0

US_LAT_RANGE = (25.0, 49.0)
US_LON_RANGE = (-124.0, -67.0)


@dataclass
class GenConfig:
    """Knobs for synthetic market generation; defaults follow the simulated platform."""

    n_suppliers: int = 100
    lambda_orders: float = 100.0
    process_mix_suppliers: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_SUPPLIER_MIX))
    process_mix_orders: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_ORDER_MIX))
    mean_production_hours: float = 5.35
    production_shape: float = 4.0
    due_offset_range: tuple[int, int] = (2, 7)
    capacity_listing_range: tuple[float, float] = (3.0, 6.0)
    listing_horizon: int = 4
    contracts_per_pair_max: int = 2
    price_spread_fraction: float = 0.1
    n_clients: int = 200
    hourly_rate_range: tuple[float, float] = (40.0, 120.0)
    speed_factor_range: tuple[float, float] = (0.8, 1.25)
    utility_jitter: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        for name, mix in (("process_mix_suppliers", self.process_mix_suppliers),
                          ("process_mix_orders", self.process_mix_orders)):
            if abs(sum(mix.values()) - 1.0) > TOL:
                raise ModelValidationError(f"{name} probabilities do not sum to 1")
            if any(p < 0 for p in mix.values()):
                raise ModelValidationError(f"{name} has a negative probability")
        if self.n_suppliers < 0 or self.lambda_orders < 0:
            raise ModelValidationError("n_suppliers and lambda_orders must be non-negative")
        if self.due_offset_range[0] > self.due_offset_range[1]:
            raise ModelValidationError("empty due_offset_range")
        if self.capacity_listing_range[0] > self.capacity_listing_range[1]:
            raise ModelValidationError("empty capacity_listing_range")
        if self.listing_horizon < 1:
            raise ModelValidationError("listing_horizon must be at least 1")
        if self.contracts_per_pair_max < 1:
            raise ModelValidationError("contracts_per_pair_max must be at least 1")
        if not 0.0 <= self.price_spread_fraction < 1.0:
            raise ModelValidationError("price_spread_fraction must lie in [0, 1)")
        if self.price_spread_fraction * (self.contracts_per_pair_max - 1) >= 1.0:
            raise ModelValidationError("price spread across contracts would drive prices to zero")
        if self.n_clients < 1:
            raise ModelValidationError("n_clients must be positive")


@dataclass
class MarketInstance:
    """Suppliers, per-period arrivals and the contract pool E for one matching period."""

    suppliers: list[Supplier]
    orders_by_period: dict[Period, list[Order]]
    contracts: list[Contract]
    period: Period

    @property
    def pool(self) -> list[Order]:
        """Orders present in the matching pool at this instance's period."""
        live = [
            o
            for orders in self.orders_by_period.values()
            for o in orders
            if o.arrival <= self.period and o.due - self.period >= 1
        ]
        live.sort(key=lambda o: o.id)
        return live

    @property
    def order_map(self) -> dict[str, Order]:
        return {o.id: o for orders in self.orders_by_period.values() for o in orders}

    @property
    def supplier_map(self) -> dict[str, Supplier]:
        return {s.id: s for s in self.suppliers}


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for a (seed, stream...) key; splittable by construction."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)))


def poisson_inversion(rng: np.random.Generator, lam: float) -> int:
    """Sample a Poisson count by CDF inversion from a single uniform draw."""
    if lam <= 0.0:
        return 0
    u = rng.random()
    k = 0
    p = np.exp(-lam)
    cdf = p
    while u > cdf and k < 10_000:
        k += 1
        p *= lam / k
        cdf += p
    return k


def _jitter(rng: np.random.Generator, value: float, band: float) -> float:
    if band <= 0.0:
        return value
    return value * rng.uniform(1.0 - band, 1.0 + band)


def _quadratic(rng, curve, lo, hi, band) -> AttributeUtility:
    a, b, c = (_jitter(rng, coeff, band) for coeff in curve)
    return AttributeUtility.quadratic(a, b, c, lo, hi)


def _categorical(rng, mapping: dict[str, float], band: float) -> AttributeUtility:
    jittered = {label: min(1.0, max(0.0, _jitter(rng, v, band))) for label, v in mapping.items()}
    return AttributeUtility.categorical(jittered)


def _simplex_weights(rng: np.random.Generator, k: int) -> np.ndarray:
    return rng.dirichlet(np.ones(k))


def _draw_process(rng: np.random.Generator, mix: dict[str, float]) -> str:
    names = sorted(mix)
    probs = np.array([mix[n] for n in names])
    return names[int(rng.choice(len(names), p=probs / probs.sum()))]


def _order_process(rng: np.random.Generator, mix: dict[str, float]) -> str:
    process = _draw_process(rng, mix)
    if process == "SLS":
        return "SLS-metal" if rng.random() < SLS_METAL_SHARE else "SLS-polymer"
    return process


def _location(rng: np.random.Generator) -> tuple[float, float]:
    lat = rng.uniform(*US_LAT_RANGE)
    lon = rng.uniform(*US_LON_RANGE)
    return (float(lat), float(lon))


def generate_suppliers(
    config: GenConfig,
    rng: np.random.Generator | None = None,
    start_period: Period = 1,
) -> list[Supplier]:
    """Draw the supplier network with capacity listed for the opening horizon."""
    config.validate()
    if rng is None:
        rng = rng_for(config.seed, 0)
    band = config.utility_jitter
    suppliers = []
    for i in range(config.n_suppliers):
        process = _draw_process(rng, config.process_mix_suppliers)
        all_materials, (res_lo, res_hi) = PROCESS_TEMPLATES[process]
        n_all = len(all_materials)
        n_mat = int(rng.integers(max(2, n_all - 2), n_all + 1))
        materials = tuple(sorted(rng.choice(all_materials, size=n_mat, replace=False).tolist()))
        span = res_hi - res_lo
        resolution_range = (
            float(rng.uniform(res_lo, res_lo + 0.4 * span)),
            float(rng.uniform(res_hi - 0.4 * span, res_hi)),
        )
        capacity = {
            start_period + t: float(rng.uniform(*config.capacity_listing_range))
            for t in range(config.listing_horizon)
        }

        ranked = rng.permutation(list(materials)).tolist()
        affinities = np.linspace(1.0, 0.3, num=len(ranked))
        material_map = {m: float(v) for m, v in zip(ranked, affinities)}
        w = _simplex_weights(rng, 3)
        prefs = PreferenceModel(
            attributes=(
                ("material", _categorical(rng, material_map, band), float(w[0])),
                ("urgency", _quadratic(rng, URGENCY_CURVE[:3], URGENCY_CURVE[3], URGENCY_CURVE[4], band), float(w[1])),
                ("revenue", _quadratic(rng, REVENUE_CURVE[:3], REVENUE_CURVE[3], REVENUE_CURVE[4], band), float(w[2])),
            )
        )
        supplier = Supplier(
            id=f"s{i:04d}",
            process=process,
            materials=materials,
            resolution_range=resolution_range,
            scale=("small", "medium", "large")[int(rng.integers(0, 3))],
            rating=float(rng.integers(1, 6)),
            location=_location(rng),
            hourly_rate=float(rng.uniform(*config.hourly_rate_range)),
            speed_factor=float(rng.uniform(*config.speed_factor_range)),
            capacity_by_period=capacity,
            prefs=prefs,
        )
        supplier.validate()
        suppliers.append(supplier)
    return suppliers


def generate_orders(
    config: GenConfig,
    period: Period,
    rng: np.random.Generator | None = None,
) -> list[Order]:
    """Draw one period's Poisson batch of order arrivals."""
    config.validate()
    if rng is None:
        rng = rng_for(config.seed, 1, period)
    band = config.utility_jitter
    count = poisson_inversion(rng, config.lambda_orders)
    lo_off, hi_off = config.due_offset_range
    orders = []
    for i in range(count):
        process = _order_process(rng, config.process_mix_orders)
        materials, (res_lo, res_hi) = PROCESS_TEMPLATES[process]
        material = str(rng.choice(materials))
        resolution = float(rng.uniform(res_lo, res_hi))
        hours = float(rng.gamma(config.production_shape, config.mean_production_hours / config.production_shape))
        hours = max(hours, 0.25)
        due = period + int(rng.integers(lo_off, hi_off + 1))
        size_pref = "large" if rng.random() < 0.5 else "small"

        price_ref = hours * NOMINAL_HOURLY_RATE
        w = _simplex_weights(rng, 4)
        prefs = PreferenceModel(
            attributes=(
                ("location", _quadratic(rng, LOCATION_CURVE[:3], LOCATION_CURVE[3], LOCATION_CURVE[4], band), float(w[0])),
                ("size", _categorical(rng, SIZE_PREF_TEMPLATES[size_pref], band), float(w[1])),
                ("rating", _quadratic(rng, RATING_CURVE[:3], RATING_CURVE[3], RATING_CURVE[4], band), float(w[2])),
                ("price", _quadratic(rng, PRICE_CURVE, 0.3 * price_ref, 2.0 * price_ref, band), float(w[3])),
            )
        )
        order = Order(
            id=f"o{period:04d}-{i:04d}",
            client_id=int(rng.integers(0, config.n_clients)),
            arrival=period,
            due=due,
            process=process,
            material=material,
            resolution_microns=resolution,
            base_production_hours=hours,
            location=_location(rng),
            size_preference=size_pref,
            prefs=prefs,
        )
        order.validate()
        orders.append(order)
    return orders


def enumerate_contracts(
    orders: list[Order],
    suppliers: list[Supplier],
    current_period: Period,
    contracts_per_pair_max: int = 2,
    price_spread_fraction: float = 0.1,
) -> list[Contract]:
    """Build the contract pool E for the given orders against current capacities.

    Each capability-feasible pair whose due date falls inside the supplier's
    listed capacity horizon yields contracts that differ only in price: the
    list price (production hours times the supplier's rate) and successively
    discounted variants.
    """
    contracts = []
    for order in sorted(orders, key=lambda o: o.id):
        for supplier in sorted(suppliers, key=lambda s: s.id):
            horizon = supplier.capacity_horizon()
            if horizon is None or order.due > horizon or order.due <= current_period:
                continue
            if not is_capability_feasible(order, supplier):
                continue
            hours = order.base_production_hours * supplier.speed_factor
            list_price = hours * supplier.hourly_rate
            for k in range(contracts_per_pair_max):
                price = list_price * (1.0 - price_spread_fraction * k)
                terms = ContractTerms(
                    material=order.material,
                    process=order.process,
                    resolution_microns=order.resolution_microns,
                    due=order.due,
                    price=price,
                )
                u_o = order_utility(order, supplier, terms)
                u_s = supplier_utility(supplier, order, terms, current_period)
                contracts.append(
                    Contract(
                        id=f"{order.id}~{supplier.id}~{k}",
                        order_id=order.id,
                        supplier_id=supplier.id,
                        terms=terms,
                        production_hours=hours,
                        u_order=u_o,
                        u_supplier=u_s,
                        u_total=u_o + u_s,
                    )
                )
    return contracts


def generate_instance(config: GenConfig, period: Period = 1) -> MarketInstance:
    """Generate suppliers plus one period of arrivals and their contract pool."""
    suppliers = generate_suppliers(config, start_period=period)
    orders = generate_orders(config, period)
    contracts = enumerate_contracts(
        orders,
        suppliers,
        period,
        contracts_per_pair_max=config.contracts_per_pair_max,
        price_spread_fraction=config.price_spread_fraction,
    )
    return MarketInstance(
        suppliers=suppliers,
        orders_by_period={period: orders},
        contracts=contracts,
        period=period,
    )
