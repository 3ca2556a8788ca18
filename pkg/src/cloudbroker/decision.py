"""Decision point: feasibility, per-option ranking, plan construction and diffing."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from types import MappingProxyType
from typing import Any, Mapping, Optional

from .catalog import CatalogSnapshot, CloudProduct, NormalizedOffer, Workload, estimate_monthly_cost, to_decimal
from .errors import AppMismatch, NoCandidates, NoFeasibleProduct, UnknownProduct, ValidationError
from .events import GovernanceEvent, QosViolation
from .manifest import (
    ApplicationModel,
    Component,
    DeploymentManifest,
    DeploymentOption,
    Economy,
    PrivateCloud,
    resolve_bindings,
)

RANKED_CATEGORIES = ("economy", "bestEffort")


# ---------------------------------------------------------------------------
# Policy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QosThresholds:
    min_reliability: float = 0.0
    min_security: float = 0.0
    min_perf: float = 0.0

    def __post_init__(self):
        for name in ("min_reliability", "min_security", "min_perf"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValidationError(f"minQos.{name}", "must lie in [0, 1]")

    def admits(self, offer: NormalizedOffer) -> bool:
        return (offer.reliability_score >= self.min_reliability
                and offer.security_score >= self.min_security
                and offer.perf_score >= self.min_perf)

    @classmethod
    def from_dict(cls, d: Mapping) -> "QosThresholds":
        return cls(float(d.get("minReliability", 0.0)), float(d.get("minSecurity", 0.0)),
                   float(d.get("minPerf", 0.0)))

    def to_dict(self) -> dict:
        return {"minReliability": self.min_reliability, "minSecurity": self.min_security,
                "minPerf": self.min_perf}


@dataclass(frozen=True)
class GovernancePolicy:
    w_cost: Decimal = Decimal("0.5")
    w_perf: Decimal = Decimal("0.5")
    min_qos: Mapping[str, QosThresholds] = field(default_factory=dict)
    redeploy_cost_delta_pct: Decimal = Decimal("5.0")
    hysteresis_window: int = 3600
    exclude_unmeasured_from_best_effort: bool = True

    def __post_init__(self):
        w_cost = to_decimal(self.w_cost, "wCost")
        w_perf = to_decimal(self.w_perf, "wPerf")
        if not (0 <= w_cost <= 1 and 0 <= w_perf <= 1) or w_cost + w_perf != 1:
            raise ValidationError("wCost", "wCost and wPerf must lie in [0, 1] and sum to exactly 1")
        delta = to_decimal(self.redeploy_cost_delta_pct, "redeployCostDeltaPct")
        if delta <= 0:
            raise ValidationError("redeployCostDeltaPct", "must be > 0")
        if self.hysteresis_window < 0:
            raise ValidationError("hysteresisWindow", "must be >= 0")
        unknown = set(self.min_qos) - set(RANKED_CATEGORIES)
        if unknown:
            raise ValidationError("minQos", f"unknown option categories {sorted(unknown)}")
        object.__setattr__(self, "w_cost", w_cost)
        object.__setattr__(self, "w_perf", w_perf)
        object.__setattr__(self, "redeploy_cost_delta_pct", delta)
        object.__setattr__(self, "min_qos", MappingProxyType(dict(self.min_qos)))

    def thresholds(self, category: str) -> QosThresholds:
        return self.min_qos.get(category, QosThresholds())

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "GovernancePolicy":
        return cls(
            w_cost=d.get("wCost", "0.5"),
            w_perf=d.get("wPerf", "0.5"),
            min_qos={k: QosThresholds.from_dict(v) for k, v in d.get("minQos", {}).items()},
            redeploy_cost_delta_pct=d.get("redeployCostDeltaPct", "5.0"),
            hysteresis_window=int(d.get("hysteresisWindow", 3600)),
            exclude_unmeasured_from_best_effort=bool(d.get("excludeUnmeasuredFromBestEffort", True)),
        )

    def to_dict(self) -> dict:
        return {
            "wCost": str(self.w_cost),
            "wPerf": str(self.w_perf),
            "minQos": {k: v.to_dict() for k, v in sorted(self.min_qos.items())},
            "redeployCostDeltaPct": str(self.redeploy_cost_delta_pct),
            "hysteresisWindow": self.hysteresis_window,
            "excludeUnmeasuredFromBestEffort": self.exclude_unmeasured_from_best_effort,
        }

    @classmethod
    def load(cls, path) -> "GovernancePolicy":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Plans
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Assignment:
    component_name: str
    product_id: str
    config_params: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "config_params", MappingProxyType(dict(sorted(self.config_params.items()))))

    def __eq__(self, other):
        return (isinstance(other, Assignment) and self.component_name == other.component_name
                and self.product_id == other.product_id
                and dict(self.config_params) == dict(other.config_params))

    def __hash__(self):
        return hash((self.component_name, self.product_id, tuple(self.config_params.items())))

    def to_dict(self) -> dict:
        return {"componentName": self.component_name, "productId": self.product_id,
                "configParams": dict(self.config_params)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Assignment":
        return cls(d["componentName"], d["productId"], dict(d.get("configParams", {})))


@dataclass(frozen=True)
class DeploymentPlan:
    plan_id: str
    app_id: str
    revision: int
    assignments: tuple[Assignment, ...]
    created_at: int = 0

    def __post_init__(self):
        object.__setattr__(self, "assignments", tuple(self.assignments))
        names = [a.component_name for a in self.assignments]
        if len(set(names)) != len(names):
            raise ValidationError("assignments", "one assignment per component")

    def product_of(self, component_name: str) -> Optional[str]:
        for a in self.assignments:
            if a.component_name == component_name:
                return a.product_id
        return None

    def assignment_map(self) -> dict[str, str]:
        return {a.component_name: a.product_id for a in self.assignments}

    def same_assignments(self, other: "DeploymentPlan") -> bool:
        return other is not None and set(self.assignments) == set(other.assignments)

    def to_dict(self) -> dict:
        return {
            "planId": self.plan_id,
            "appId": self.app_id,
            "revision": self.revision,
            "assignments": [a.to_dict() for a in self.assignments],
            "createdAt": self.created_at,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "DeploymentPlan":
        return cls(d["planId"], d["appId"], int(d["revision"]),
                   tuple(Assignment.from_dict(a) for a in d["assignments"]), int(d.get("createdAt", 0)))


@dataclass(frozen=True)
class Move:
    component_name: str
    from_product_id: Optional[str]
    to_product_id: Optional[str]

    def to_dict(self) -> dict:
        return {"componentName": self.component_name, "fromProductId": self.from_product_id,
                "toProductId": self.to_product_id}


@dataclass(frozen=True)
class PlanDiff:
    moves: tuple[Move, ...] = ()
    unchanged: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"moves": [m.to_dict() for m in self.moves], "unchanged": list(self.unchanged)}


def diff(old: Optional[DeploymentPlan], new: DeploymentPlan) -> PlanDiff:
    """Per-component placement changes from ``old`` to ``new``.

    ``old=None`` stands for "nothing deployed yet" and turns every assignment
    into a move from ``None``.
    """
    if old is not None and old.app_id != new.app_id:
        raise AppMismatch(f"cannot diff plans of {old.app_id!r} and {new.app_id!r}")
    before = old.assignment_map() if old is not None else {}
    after = new.assignment_map()
    moves, unchanged = [], []
    order = [a.component_name for a in new.assignments]
    order += [n for n in before if n not in after]
    for name in order:
        src, dst = before.get(name), after.get(name)
        if src == dst:
            unchanged.append(name)
        else:
            moves.append(Move(name, src, dst))
    return PlanDiff(tuple(moves), tuple(unchanged))


def apply_diff(placement: Mapping[str, str], d: PlanDiff) -> dict[str, str]:
    out = dict(placement)
    for m in d.moves:
        if m.to_product_id is None:
            out.pop(m.component_name, None)
        else:
            out[m.component_name] = m.to_product_id
    return out


# ---------------------------------------------------------------------------
# Feasibility and ranking
# ---------------------------------------------------------------------------

def feasible(c: Component, opt: DeploymentOption, p: Optional[CloudProduct]) -> bool:
    if p is None or not p.active:
        return False
    if not c.required_tech <= p.tech_tags:
        return False
    if isinstance(opt, PrivateCloud):
        return (p.endpoint == opt.endpoint and p.cloud_type == opt.cloud_type
                and p.provider_id == opt.provider_id)
    return True


def rank_economy(candidates: list[NormalizedOffer], policy: GovernancePolicy) -> list[NormalizedOffer]:
    """Cheapest first among offers that meet the economy QoS floor."""
    th = policy.thresholds("economy")
    kept = [o for o in candidates if th.admits(o)]
    if not kept:
        raise NoCandidates("no economy candidate meets the QoS thresholds")
    return sorted(kept, key=lambda o: (o.monthly_cost, -o.perf_score, o.product_id))


def best_effort_scores(candidates: list[NormalizedOffer],
                       policy: GovernancePolicy) -> list[tuple[NormalizedOffer, Fraction]]:
    """Surviving offers with their composite score, best first.

    Scores are exact rationals so ties and cost-scaling invariance hold exactly.
    """
    th = policy.thresholds("bestEffort")
    kept = [o for o in candidates if th.admits(o)]
    if policy.exclude_unmeasured_from_best_effort:
        kept = [o for o in kept if not o.unmeasured]
    if not kept:
        raise NoCandidates("no bestEffort candidate survives filtering")
    lo = min(o.monthly_cost for o in kept)
    hi = max(o.monthly_cost for o in kept)
    span = Fraction(hi - lo)
    w_cost, w_perf = Fraction(policy.w_cost), Fraction(policy.w_perf)
    scored = []
    for o in kept:
        cost_norm = Fraction(o.monthly_cost - lo) / span if span else Fraction(0)
        # str() gives the shortest decimal form, so 0.2 scores as 1/5 rather than its binary expansion
        scored.append((o, w_cost * (1 - cost_norm) + w_perf * Fraction(str(o.perf_score))))
    scored.sort(key=lambda t: (-t[1], t[0].monthly_cost, t[0].product_id))
    return scored


def rank_best_effort(candidates: list[NormalizedOffer], policy: GovernancePolicy) -> list[NormalizedOffer]:
    return [o for o, _ in best_effort_scores(candidates, policy)]


def config_params(p: CloudProduct, opt: DeploymentOption) -> dict[str, str]:
    return {
        "endpoint": p.endpoint or "",
        "cloudType": p.cloud_type,
        "providerId": p.provider_id,
        "option": opt.category,
    }


def feasible_products(c: Component, opt: DeploymentOption, snapshot: CatalogSnapshot) -> list[CloudProduct]:
    return [p for p in snapshot.candidates() if feasible(c, opt, p)]


def choose_product(c: Component, opt: DeploymentOption, snapshot: CatalogSnapshot,
                   policy: GovernancePolicy, workload: Workload) -> CloudProduct:
    products = feasible_products(c, opt, snapshot)
    if not products:
        raise NoFeasibleProduct(c.name, opt.category)
    if isinstance(opt, PrivateCloud):
        # several identical endpoint/type/provider triples: lowest id wins
        return min(products, key=lambda p: p.product_id)
    w = workload.for_component(c.name)
    offers = [snapshot.offer(p.product_id, w) for p in products]
    try:
        ranked = rank_economy(offers, policy) if isinstance(opt, Economy) else rank_best_effort(offers, policy)
    except NoCandidates:
        raise NoFeasibleProduct(c.name, opt.category) from None
    return snapshot.product(ranked[0].product_id)


def decide(manifest: DeploymentManifest, app: ApplicationModel, snapshot: CatalogSnapshot,
           policy: GovernancePolicy, workload: Workload, previous_revision: int = 0,
           now: int = 0) -> DeploymentPlan:
    """Build the next plan revision. All-or-nothing: one infeasible component fails the call."""
    options = resolve_bindings(manifest, app)
    assignments = []
    for c in app.components:
        opt = options[c.name]
        p = choose_product(c, opt, snapshot, policy, workload)
        assignments.append(Assignment(c.name, p.product_id, config_params(p, opt)))
    revision = previous_revision + 1
    return DeploymentPlan(f"{app.app_id}-r{revision}", app.app_id, revision, tuple(assignments), now)


def plan_cost(plan: DeploymentPlan, snapshot: CatalogSnapshot, workload: Workload) -> Decimal:
    total = Decimal(0)
    for a in plan.assignments:
        p = snapshot.product(a.product_id)
        total += estimate_monthly_cost(p.pricing, workload.for_component(a.component_name), snapshot.fx)
    return total


# ---------------------------------------------------------------------------
# Redeploy trigger
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RedeployDecision:
    redeploy: bool
    justification: str
    forced: bool = False
    deferred: bool = False
    savings_pct: Optional[Decimal] = None
    candidate: Optional[DeploymentPlan] = None

    def __bool__(self):
        return self.redeploy

    def to_dict(self) -> dict:
        return {
            "redeploy": self.redeploy,
            "justification": self.justification,
            "forced": self.forced,
            "deferred": self.deferred,
            "savingsPct": None if self.savings_pct is None else str(self.savings_pct.quantize(Decimal("0.0001"))),
        }


def infeasible_assignments(plan: DeploymentPlan, manifest: DeploymentManifest, app: ApplicationModel,
                           snapshot: CatalogSnapshot) -> list[str]:
    options = resolve_bindings(manifest, app)
    broken = []
    for a in plan.assignments:
        p = snapshot.products.get(a.product_id)
        if not feasible(app.component(a.component_name), options[a.component_name], p):
            broken.append(a.component_name)
    return broken


def should_redeploy(event: Optional[GovernanceEvent], current_plan: DeploymentPlan, snapshot: CatalogSnapshot,
                    policy: GovernancePolicy, workload: Workload, last_redeploy_at: Optional[int], *,
                    manifest: DeploymentManifest, app: ApplicationModel,
                    now: Optional[int] = None) -> RedeployDecision:
    """Decide whether the governance loop should replace ``current_plan``.

    A move is forced when an assignment became infeasible (withdrawal or a
    technology change); forced moves ignore the hysteresis window. Otherwise a
    redeploy needs total monthly savings above ``redeployCostDeltaPct`` (or a
    QoS violation whose re-decision moves something) and an elapsed window.
    """
    if not manifest.active:
        return RedeployDecision(False, "passive lifecycle: event recorded only")
    if now is None:
        now = event.ts if event is not None else 0

    broken = infeasible_assignments(current_plan, manifest, app, snapshot)
    try:
        candidate = decide(manifest, app, snapshot, policy, workload, current_plan.revision, now)
    except NoFeasibleProduct as exc:
        if broken:
            return RedeployDecision(True, f"forced move for {', '.join(broken)} but re-decision failed: {exc}",
                                    forced=True)
        return RedeployDecision(False, f"re-decision infeasible, keeping current plan: {exc}")

    if broken:
        return RedeployDecision(True, f"forced move: assignment no longer feasible for {', '.join(broken)}",
                                forced=True, candidate=candidate)

    moves = diff(current_plan, candidate).moves
    if not moves:
        return RedeployDecision(False, "current placement is still the best under the policy")

    try:
        old_cost = plan_cost(current_plan, snapshot, workload)
    except UnknownProduct:
        old_cost = Decimal(0)
    new_cost = plan_cost(candidate, snapshot, workload)
    savings = (old_cost - new_cost) / old_cost * 100 if old_cost > 0 else Decimal(0)
    moved = ", ".join(f"{m.component_name}:{m.from_product_id}->{m.to_product_id}" for m in moves)

    if isinstance(event, QosViolation):
        reason = (f"QoS violation on {event.componentName}@{event.productId} "
                  f"({event.metric} {event.observed:g} > {event.bound:g}); re-decision moves {moved}")
    elif savings > policy.redeploy_cost_delta_pct:
        reason = (f"monthly cost {old_cost:.4f} -> {new_cost:.4f} saves {savings:.2f}% "
                  f"> {policy.redeploy_cost_delta_pct}%; moves {moved}")
    else:
        return RedeployDecision(False, f"savings {savings:.2f}% do not exceed {policy.redeploy_cost_delta_pct}%",
                                savings_pct=savings)

    if last_redeploy_at is not None and now - last_redeploy_at < policy.hysteresis_window:
        wait = policy.hysteresis_window - (now - last_redeploy_at)
        return RedeployDecision(False, f"deferred by hysteresis ({wait}s remaining): {reason}",
                                deferred=True, savings_pct=savings)
    return RedeployDecision(True, reason, savings_pct=savings, candidate=candidate)


# ---------------------------------------------------------------------------
# Explanation
# ---------------------------------------------------------------------------

def _tie_path(winner: NormalizedOffer, runner_up: Optional[NormalizedOffer], primary: str) -> str:
    if runner_up is None:
        return "only admissible candidate"
    if primary == "cost" and winner.monthly_cost != runner_up.monthly_cost:
        return f"lowest monthly cost ({winner.monthly_cost} < {runner_up.monthly_cost})"
    if primary == "score":
        return "highest composite score"
    if winner.perf_score != runner_up.perf_score:
        return f"tied on cost with {runner_up.product_id}; higher perfScore ({winner.perf_score:g})"
    return f"tied on cost and perfScore with {runner_up.product_id}; lowest productId"


def explain(component_name: str, plan: DeploymentPlan, manifest: DeploymentManifest, app: ApplicationModel,
            snapshot: CatalogSnapshot, policy: GovernancePolicy, workload: Workload) -> dict:
    """Every feasible candidate for one component, in ranking order, and why the head won."""
    c = app.component(component_name)
    opt = resolve_bindings(manifest, app)[component_name]
    assigned = plan.product_of(component_name)
    out = {"componentName": component_name, "option": opt.category, "assignedProductId": assigned}
    products = feasible_products(c, opt, snapshot)

    if isinstance(opt, PrivateCloud):
        winner = min(products, key=lambda p: p.product_id).product_id if products else None
        out.update(winner=winner, reason="privateCloud pin",
                   candidates=[{"productId": winner, "rank": 1, "admitted": True}] if winner else [])
        return out

    w = workload.for_component(c.name)
    offers = [snapshot.offer(p.product_id, w) for p in products]
    rows = []
    try:
        if isinstance(opt, Economy):
            ranked = [(o, None) for o in rank_economy(offers, policy)]
        else:
            ranked = best_effort_scores(offers, policy)
    except NoCandidates:
        ranked = []
    admitted = {o.product_id for o, _ in ranked}
    for i, (o, score) in enumerate(ranked, 1):
        rows.append({**o.to_dict(), "rank": i, "admitted": True,
                     "score": None if score is None else float(score)})
    for o in sorted((o for o in offers if o.product_id not in admitted), key=lambda o: o.product_id):
        rows.append({**o.to_dict(), "rank": None, "admitted": False, "score": None})

    if ranked:
        head = ranked[0][0]
        second = ranked[1] if len(ranked) > 1 else None
        if isinstance(opt, Economy):
            reason = _tie_path(head, second[0] if second else None, "cost")
        elif second is None:
            reason = _tie_path(head, None, "score")
        elif ranked[0][1] != second[1]:
            reason = f"highest composite score ({float(ranked[0][1]):.6f} > {float(second[1]):.6f})"
        elif head.monthly_cost != second[0].monthly_cost:
            reason = f"tied on score with {second[0].product_id}; cheaper"
        else:
            reason = f"tied on score and cost with {second[0].product_id}; lowest productId"
        out.update(winner=head.product_id, reason=reason)
    else:
        out.update(winner=None, reason="no admissible candidate")
    out["candidates"] = rows
    return out
