"""Versioned JSON (and CSV) serialization for instances, matchings and reports.

All documents are written with sorted keys and no timestamps so that a rerun
with identical inputs produces byte-identical files; every output embeds the
hash of the configuration that produced it for provenance checks.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict
from pathlib import Path

from .errors import ModelValidationError
from .gen import GenConfig, MarketInstance
from .model import (
    AttributeUtility,
    Contract,
    ContractTerms,
    Matching,
    Order,
    PreferenceModel,
    Supplier,
)
from .sim import AnarchyConfig, SimConfig

INSTANCE_FORMAT = "maasmatch-instance/1"
MATCHING_FORMAT = "maasmatch-matching/1"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config_obj) -> str:
    return hashlib.sha256(canonical_json(config_obj).encode()).hexdigest()[:16]


def write_json(path: Path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def read_json(path: Path):
    return json.loads(Path(path).read_text())


def write_csv(path: Path, rows: list[dict], fieldnames: list[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in fieldnames})


# -- config ---------------------------------------------------------------------


def gen_config_from_dict(data: dict) -> GenConfig:
    config = GenConfig()
    for key, value in data.items():
        if not hasattr(config, key):
            raise ModelValidationError(f"unknown gen config field {key!r}")
        current = getattr(config, key)
        if isinstance(current, tuple) and isinstance(value, list):
            value = tuple(value)
        setattr(config, key, value)
    config.validate()
    return config


def sim_config_from_dict(data: dict) -> SimConfig:
    config = SimConfig(gen=gen_config_from_dict(data.get("gen", {})))
    sim_section = data.get("sim", {})
    for key, value in sim_section.items():
        if not hasattr(config, key) or key in ("gen", "anarchy"):
            raise ModelValidationError(f"unknown sim config field {key!r}")
        if key == "switching_cost_sweep":
            value = tuple(value)
        setattr(config, key, value)
    if "anarchy" in data and data["anarchy"] is not None:
        section = data["anarchy"]
        config.anarchy = AnarchyConfig(
            access=section.get("access", "complete"),
            n_periods=int(section.get("n_periods", 100)),
        )
    config.validate()
    return config


def sim_config_to_dict(config: SimConfig) -> dict:
    data = {
        "gen": asdict(config.gen),
        "sim": {
            "mechanism": config.mechanism,
            "n_periods": config.n_periods,
            "replications": config.replications,
            "audits": config.audits,
            "posterior": config.posterior,
            "switching_cost_sweep": list(config.switching_cost_sweep),
            "bundle_cap": config.bundle_cap,
            "node_limit": config.node_limit,
            "as_mode": config.as_mode,
        },
    }
    if config.anarchy is not None:
        data["anarchy"] = {"access": config.anarchy.access, "n_periods": config.anarchy.n_periods}
    for section in ("gen",):
        for key, value in list(data[section].items()):
            if isinstance(value, tuple):
                data[section][key] = list(value)
    return data


# -- domain objects --------------------------------------------------------------


def _utility_to_dict(u: AttributeUtility) -> dict:
    return {
        "kind": u.kind,
        "coeffs": list(u.coeffs) if u.coeffs else None,
        "lo": u.lo,
        "hi": u.hi,
        "mapping": u.mapping,
    }


def _utility_from_dict(data: dict) -> AttributeUtility:
    return AttributeUtility(
        kind=data["kind"],
        coeffs=tuple(data["coeffs"]) if data["coeffs"] else None,
        lo=data["lo"],
        hi=data["hi"],
        mapping=data["mapping"],
    )


def _prefs_to_dict(prefs: PreferenceModel) -> list:
    return [[name, _utility_to_dict(util), weight] for name, util, weight in prefs.attributes]


def _prefs_from_dict(data: list) -> PreferenceModel:
    return PreferenceModel(
        attributes=tuple((name, _utility_from_dict(util), weight) for name, util, weight in data)
    )


def order_to_dict(order: Order) -> dict:
    data = asdict(order)
    data["location"] = list(order.location)
    data["prefs"] = _prefs_to_dict(order.prefs)
    return data


def order_from_dict(data: dict) -> Order:
    return Order(
        id=data["id"],
        client_id=data["client_id"],
        arrival=data["arrival"],
        due=data["due"],
        process=data["process"],
        material=data["material"],
        resolution_microns=data["resolution_microns"],
        base_production_hours=data["base_production_hours"],
        location=tuple(data["location"]),
        size_preference=data["size_preference"],
        prefs=_prefs_from_dict(data["prefs"]),
    )


def supplier_to_dict(supplier: Supplier) -> dict:
    return {
        "id": supplier.id,
        "process": supplier.process,
        "materials": list(supplier.materials),
        "resolution_range": list(supplier.resolution_range),
        "scale": supplier.scale,
        "rating": supplier.rating,
        "location": list(supplier.location),
        "hourly_rate": supplier.hourly_rate,
        "speed_factor": supplier.speed_factor,
        "capacity_by_period": {str(p): h for p, h in sorted(supplier.capacity_by_period.items())},
        "prefs": _prefs_to_dict(supplier.prefs),
        "known_clients": sorted(supplier.known_clients),
    }


def supplier_from_dict(data: dict) -> Supplier:
    return Supplier(
        id=data["id"],
        process=data["process"],
        materials=tuple(data["materials"]),
        resolution_range=tuple(data["resolution_range"]),
        scale=data["scale"],
        rating=data["rating"],
        location=tuple(data["location"]),
        hourly_rate=data["hourly_rate"],
        speed_factor=data["speed_factor"],
        capacity_by_period={int(p): h for p, h in data["capacity_by_period"].items()},
        prefs=_prefs_from_dict(data["prefs"]),
        known_clients=set(data["known_clients"]),
    )


def contract_to_dict(contract: Contract) -> dict:
    return {
        "id": contract.id,
        "order_id": contract.order_id,
        "supplier_id": contract.supplier_id,
        "terms": asdict(contract.terms),
        "production_hours": contract.production_hours,
        "u_order": contract.u_order,
        "u_supplier": contract.u_supplier,
        "u_total": contract.u_total,
    }


def contract_from_dict(data: dict) -> Contract:
    return Contract(
        id=data["id"],
        order_id=data["order_id"],
        supplier_id=data["supplier_id"],
        terms=ContractTerms(**data["terms"]),
        production_hours=data["production_hours"],
        u_order=data["u_order"],
        u_supplier=data["u_supplier"],
        u_total=data["u_total"],
    )


def instance_to_dict(instance: MarketInstance, config_digest: str, seed: int) -> dict:
    return {
        "format": INSTANCE_FORMAT,
        "config_hash": config_digest,
        "seed": seed,
        "period": instance.period,
        "suppliers": [supplier_to_dict(s) for s in instance.suppliers],
        "orders_by_period": {
            str(p): [order_to_dict(o) for o in orders]
            for p, orders in sorted(instance.orders_by_period.items())
        },
        "contracts": [contract_to_dict(c) for c in instance.contracts],
    }


def instance_from_dict(data: dict) -> MarketInstance:
    if data.get("format") != INSTANCE_FORMAT:
        raise ModelValidationError(f"unsupported instance format {data.get('format')!r}")
    return MarketInstance(
        suppliers=[supplier_from_dict(s) for s in data["suppliers"]],
        orders_by_period={
            int(p): [order_from_dict(o) for o in orders]
            for p, orders in data["orders_by_period"].items()
        },
        contracts=[contract_from_dict(c) for c in data["contracts"]],
        period=data["period"],
    )


def matching_to_dict(matching: Matching, config_digest: str, period: int, mechanism: str) -> dict:
    contracts = sorted(matching.assigned.values(), key=lambda c: c.id)
    return {
        "format": MATCHING_FORMAT,
        "config_hash": config_digest,
        "period": period,
        "mechanism": mechanism,
        "assigned": [contract_to_dict(c) for c in contracts],
        "summary": {
            "total_utility": matching.total_utility(),
            "matched_orders": len(matching.assigned),
            "matched_suppliers": len(matching.by_supplier()),
        },
    }


def matching_from_dict(data: dict) -> Matching:
    if data.get("format") != MATCHING_FORMAT:
        raise ModelValidationError(f"unsupported matching format {data.get('format')!r}")
    matching = Matching()
    for item in data["assigned"]:
        contract = contract_from_dict(item)
        matching.assigned[contract.order_id] = contract
    return matching


def blocking_record_to_row(record) -> dict:
    return {
        "kind": record.kind,
        "supplier_id": record.supplier_id,
        "contract_ids": " ".join(record.contract_ids),
        "order_ids": " ".join(record.order_ids),
        "order_flags": " ".join(f"{oid}:{flag}" for oid, flag in record.order_flags),
        "supplier_flag": record.supplier_flag,
        "available": record.available,
        "order_gains": " ".join(
            f"{oid}:{'' if gain is None else format(gain, '.9f')}" for oid, gain in record.order_gains
        ),
        "supplier_gain": "" if record.supplier_gain is None else format(record.supplier_gain, ".9f"),
        "size": record.size,
    }


BLOCKING_RECORD_FIELDS = [
    "kind",
    "supplier_id",
    "contract_ids",
    "order_ids",
    "order_flags",
    "supplier_flag",
    "available",
    "order_gains",
    "supplier_gain",
    "size",
]
