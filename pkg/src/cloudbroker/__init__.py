"""Cross-cloud deployment governance broker."""
from .catalog import (
    Catalog,
    CatalogSnapshot,
    CloudProduct,
    NormalizedOffer,
    PricingPlan,
    QosReport,
    SlaTerms,
    Workload,
    WorkloadProfile,
    estimate_monthly_cost,
    normalize_offer,
)
from .decision import (
    DeploymentPlan,
    GovernancePolicy,
    PlanDiff,
    decide,
    diff,
    feasible,
    rank_best_effort,
    rank_economy,
    should_redeploy,
)
from .manifest import (
    ApplicationModel,
    BestEffort,
    Component,
    DeploymentManifest,
    Economy,
    PrivateCloud,
    parse_manifest,
    resolve_bindings,
    serialize_manifest,
)
from .runtime import Broker, EventLog, Monitor, enforce, governance_step
from .simcloud import Scenario, SimClock, SimProvider, load_bundle, run_scenario

__all__ = [
    "Catalog",
    "CatalogSnapshot",
    "CloudProduct",
    "NormalizedOffer",
    "PricingPlan",
    "QosReport",
    "SlaTerms",
    "Workload",
    "WorkloadProfile",
    "estimate_monthly_cost",
    "normalize_offer",
    "DeploymentPlan",
    "GovernancePolicy",
    "PlanDiff",
    "decide",
    "diff",
    "feasible",
    "rank_best_effort",
    "rank_economy",
    "should_redeploy",
    "ApplicationModel",
    "BestEffort",
    "Component",
    "DeploymentManifest",
    "Economy",
    "PrivateCloud",
    "parse_manifest",
    "resolve_bindings",
    "serialize_manifest",
    "Broker",
    "EventLog",
    "Monitor",
    "enforce",
    "governance_step",
    "Scenario",
    "SimClock",
    "SimProvider",
    "load_bundle",
    "run_scenario",
]

__version__ = "0.1.0"
