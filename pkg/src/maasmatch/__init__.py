"""Matching with contracts for manufacturing-as-a-service marketplaces."""

__version__ = "0.1.0"

from .model import (
    AttributeUtility,
    Contract,
    ContractBundle,
    ContractTerms,
    Matching,
    Order,
    PreferenceModel,
    Supplier,
    bundle_feasible,
    cumulative_capacity,
    eval_attribute,
    is_capability_feasible,
    order_utility,
    supplier_utility,
)
from .solver import BinaryProgram, Selection, solve
from .gen import GenConfig, MarketInstance, enumerate_contracts, generate_instance, generate_orders, generate_suppliers
from .choice import choose, choose_posterior, is_substitutable_violation
from .maxweight import match_mw
from .mwas import ExpandedGraph, expand_and_prune, match_mwas, max_bundle_size, min_blocking_groups, run_mwas
from .deferred import first_round_offers, match_as
from .audit import (
    BlockingRecord,
    apply_switching_cost,
    find_blocking_groups,
    find_blocking_pairs,
    posterior_audit,
    stability_metrics,
)
from .sim import AnarchyConfig, SimConfig, run, run_anarchy, sweep, system_metrics
