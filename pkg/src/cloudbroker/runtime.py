"""Monitor point, enforcement point and the governance loop that connects them."""
from __future__ import annotations

import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional, Protocol

from .catalog import CANONICAL_UNITS, LATENCY_METRIC, Catalog, QosReport, Workload
from .decision import (
    DeploymentPlan,
    GovernancePolicy,
    PlanDiff,
    RedeployDecision,
    decide,
    diff,
    plan_cost,
    should_redeploy,
)
from .errors import AdapterError, MissingAdapter, NoFeasibleProduct, UnknownComponent
from .events import (
    CATALOG_EVENTS,
    CatalogChanged,
    GovernanceEvent,
    MetricSamples,
    MonitorSample,
    PriceChanged,
    ProductWithdrawn,
    QosViolation,
    ReplanRequested,
    SlaChanged,
    TechnologyChanged,
)
from .manifest import ApplicationModel, DeploymentManifest

logger = logging.getLogger(__name__)

CORRELATION_WINDOW = 100
LOG_KINDS = ("event", "decision", "plan", "enforce", "alert")


# ---------------------------------------------------------------------------
# Monitor point
# ---------------------------------------------------------------------------

def p95_nearest_rank(values: Iterable[float]) -> float:
    ordered = sorted(values)
    if not ordered:
        raise ValueError("p95 of an empty window")
    return ordered[math.ceil(0.95 * len(ordered)) - 1]


@dataclass(frozen=True)
class CorrelationRecord:
    component_name: str
    product_id: str
    metric: str
    slo_bound: Optional[float]
    observed_aggregate: float
    violated: bool
    window: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "componentName": self.component_name,
            "productId": self.product_id,
            "metric": self.metric,
            "sloBound": self.slo_bound,
            "observedAggregate": self.observed_aggregate,
            "violated": self.violated,
            "windowSize": len(self.window),
        }


class Monitor:
    """Per (component, metric) sliding windows of observed samples.

    A window is cleared when its component shows up on a different product.
    """

    def __init__(self, window: int = CORRELATION_WINDOW, slo_metric: str = LATENCY_METRIC):
        self.window = window
        self.slo_metric = slo_metric
        self._windows: dict[tuple[str, str], deque[float]] = {}
        self._products: dict[tuple[str, str], str] = {}
        self._bounds: dict[tuple[str, str], float] = {}

    def ingest(self, batch: Iterable[MonitorSample], slos: Mapping[str, float]) -> list[QosViolation]:
        """Update windows; return one violation per (component, metric) whose p95 breaks its bound."""
        samples = list(batch.batch if isinstance(batch, MetricSamples) else batch)
        for s in samples:
            if s.componentName not in slos:
                raise UnknownComponent(s.componentName)
        touched: list[tuple[str, str]] = []
        for s in samples:
            key = (s.componentName, s.metric)
            if self._products.get(key) != s.productId:
                self._windows[key] = deque(maxlen=self.window)
                self._products[key] = s.productId
            self._windows[key].append(float(s.value))
            if key not in touched:
                touched.append(key)
        violations = []
        for key in touched:
            component, metric = key
            if metric != self.slo_metric:
                continue
            bound = float(slos[component])
            self._bounds[key] = bound
            observed = p95_nearest_rank(self._windows[key])
            if observed > bound:
                violations.append(QosViolation(self._products[key], component, metric, observed, bound))
        return violations

    def correlation(self, component_name: str, metric: str = LATENCY_METRIC) -> Optional[CorrelationRecord]:
        key = (component_name, metric)
        window = self._windows.get(key)
        if not window:
            return None
        bound = self._bounds.get(key)
        observed = p95_nearest_rank(window)
        return CorrelationRecord(component_name, self._products[key], metric, bound, observed,
                                 bound is not None and observed > bound, tuple(window))


def monitor_ingest(monitor: Monitor, batch, slos: Mapping[str, float]) -> list[QosViolation]:
    return monitor.ingest(batch, slos)


# ---------------------------------------------------------------------------
# Enforcement point
# ---------------------------------------------------------------------------

class ProviderAdapter(Protocol):
    def deploy(self, component_name: str, config_params: Mapping[str, str]) -> Any: ...

    def undeploy(self, component_name: str, handover: Any = None) -> None: ...


@dataclass(frozen=True)
class Action:
    component_name: str
    action: str  # deploy | undeploy | noop
    product_id: Optional[str]
    outcome: str  # ok | failed
    detail: str = ""

    def to_dict(self) -> dict:
        out = {"componentName": self.component_name, "action": self.action,
               "productId": self.product_id, "outcome": self.outcome}
        if self.detail:
            out["detail"] = self.detail
        return out


@dataclass(frozen=True)
class ExecutionReport:
    plan_revision: int
    actions: tuple[Action, ...] = ()
    rolled_back: bool = False

    @property
    def ok(self) -> bool:
        return not self.rolled_back

    def to_dict(self) -> dict:
        return {"planRevision": self.plan_revision, "actions": [a.to_dict() for a in self.actions],
                "rolledBack": self.rolled_back}


def enforce(d: PlanDiff, new_plan: DeploymentPlan, adapters: Mapping[str, ProviderAdapter]) -> ExecutionReport:
    """Execute a plan diff make-before-break.

    Every target is deployed before any source is undeployed. If a deploy
    fails, the targets already deployed are undeployed in reverse order and
    no source is touched, so the previous placement stays intact.
    """
    for m in d.moves:
        for pid in (m.to_product_id, m.from_product_id):
            if pid is not None and pid not in adapters:
                raise MissingAdapter(pid)

    params = {a.component_name: a.config_params for a in new_plan.assignments}
    actions: list[Action] = []
    deployed = []
    for m in d.moves:
        if m.to_product_id is None:
            continue
        try:
            ref = adapters[m.to_product_id].deploy(m.component_name, params.get(m.component_name, {}))
        except AdapterError as exc:
            actions.append(Action(m.component_name, "deploy", m.to_product_id, "failed", str(exc)))
            for done, _ in reversed(deployed):
                adapters[done.to_product_id].undeploy(done.component_name)
                actions.append(Action(done.component_name, "undeploy", done.to_product_id, "ok", "rollback"))
            return ExecutionReport(new_plan.revision, tuple(actions), rolled_back=True)
        actions.append(Action(m.component_name, "deploy", m.to_product_id, "ok"))
        deployed.append((m, ref))

    handovers = {m.component_name: ref for m, ref in deployed}
    for m in d.moves:
        if m.from_product_id is None:
            continue
        try:
            adapters[m.from_product_id].undeploy(m.component_name, handovers.get(m.component_name))
        except AdapterError as exc:
            # the target is live; a stale source is logged, not rolled back
            actions.append(Action(m.component_name, "undeploy", m.from_product_id, "failed", str(exc)))
        else:
            actions.append(Action(m.component_name, "undeploy", m.from_product_id, "ok"))

    for name in d.unchanged:
        actions.append(Action(name, "noop", new_plan.product_of(name), "ok"))
    return ExecutionReport(new_plan.revision, tuple(actions), rolled_back=False)


# ---------------------------------------------------------------------------
# Event log
# ---------------------------------------------------------------------------

def _canonical(record: Mapping) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


class EventLog:
    """Append-only list of ``{seq, ts, kind, payload}`` records with strictly increasing seq."""

    def __init__(self):
        self.records: list[dict] = []
        self._seq = 0

    def append(self, ts: int, kind: str, payload: Mapping[str, Any]) -> dict:
        if kind not in LOG_KINDS:
            raise ValueError(f"unknown log record kind {kind!r}")
        self._seq += 1
        record = {"seq": self._seq, "ts": ts, "kind": kind, "payload": json.loads(_canonical(payload))}
        self.records.append(record)
        return record

    @property
    def next_seq(self) -> int:
        return self._seq + 1

    def lines(self) -> list[str]:
        return [_canonical(r) for r in self.records]

    def dumps(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    def of_kind(self, kind: str) -> list[dict]:
        return [r for r in self.records if r["kind"] == kind]

    def __len__(self) -> int:
        return len(self.records)


def read_log(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# Governance loop
# ---------------------------------------------------------------------------

def event_to_patch(event: GovernanceEvent, catalog: Catalog) -> Optional[dict]:
    """Catalog patch that makes the catalog reflect ``event`` (idempotent)."""
    if isinstance(event, PriceChanged):
        if event.metric == "fixedFeePerMonth":
            return {"pricing": {"fixedFeePerMonth": str(event.new)}}
        if event.metric == "currency":
            return {"pricing": {"currency": event.new}}
        if event.new is None:
            return None
        return {"pricing": {"rates": [{"metric": event.metric, "unit": CANONICAL_UNITS[event.metric],
                                       "pricePerUnit": str(event.new)}]}}
    if isinstance(event, SlaChanged):
        new = list(event.new) if isinstance(event.new, (tuple, list, frozenset)) else str(event.new)
        return {"sla": {event.field: new}}
    if isinstance(event, TechnologyChanged):
        tags = (catalog.get(event.productId).tech_tags | set(event.addedTags)) - set(event.removedTags)
        return {"techTags": sorted(tags)}
    if isinstance(event, ProductWithdrawn):
        return {"status": "withdrawn"}
    return None


@dataclass
class Broker:
    """Governance state for one application and the loop that advances it.

    Every state change goes through :meth:`step` (one event at a time), which
    appends the resulting records to :attr:`log`.
    """

    manifest: DeploymentManifest
    app: ApplicationModel
    catalog: Catalog
    policy: GovernancePolicy
    workload: Workload
    adapters: Optional[Mapping[str, ProviderAdapter]] = None
    log: EventLog = field(default_factory=EventLog)
    monitor: Monitor = field(default_factory=Monitor)
    plan: Optional[DeploymentPlan] = None
    last_redeploy_at: Optional[int] = None
    deferred: Optional[GovernanceEvent] = None
    retry_pending: bool = False
    now: int = 0
    redeploy_count: int = 0

    # -- entry points -------------------------------------------------------

    def start(self, now: int = 0) -> DeploymentPlan:
        """Initial decision and deployment (revision 1)."""
        self.now = now
        plan = decide(self.manifest, self.app, self.catalog.snapshot(), self.policy, self.workload, 0, now)
        self.log.append(now, "decision", {"trigger": "initial", "redeploy": True,
                                          "justification": "initial deployment"})
        self._install(plan, "initial deployment")
        return plan

    def step(self, event: GovernanceEvent, now: Optional[int] = None) -> list[dict]:
        """Process one event; returns the log records it produced."""
        if now is not None:
            self.now = now
        start = len(self.log.records)
        self._handle(event)
        return self.log.records[start:]

    def apply_catalog_update(self, product_id: str, patch: Mapping, now: Optional[int] = None) -> list[dict]:
        if now is not None:
            self.now = now
        start = len(self.log.records)
        for event in self.catalog.update_product(product_id, patch):
            self._handle(event)
        return self.log.records[start:]

    def record(self, event: GovernanceEvent, now: Optional[int] = None) -> dict:
        """Log an event without acting on it."""
        if now is not None:
            self.now = now
        stamped = event.stamped(self.now, self.log.next_seq)
        return self.log.append(self.now, "event", stamped.payload())

    def recheck(self, now: Optional[int] = None) -> list[dict]:
        """Re-evaluate deferred or failed redeploys once time has moved on."""
        if now is not None:
            self.now = now
        start = len(self.log.records)
        if self.plan is None or not self.manifest.active:
            return []
        if not (self.retry_pending or self.deferred is not None):
            return []
        if not self.retry_pending and self.last_redeploy_at is not None \
                and self.now - self.last_redeploy_at < self.policy.hysteresis_window:
            return []
        trigger = self.deferred
        self.retry_pending = False
        decision = self._should_redeploy(trigger)
        self.log.append(self.now, "decision", {"trigger": "recheck", **decision.to_dict()})
        if decision.redeploy:
            self._redeploy(decision)
        elif not decision.deferred:
            self.deferred = None
        return self.log.records[start:]

    def settle(self) -> list[dict]:
        """Let the hysteresis window expire and run any pending re-evaluation."""
        if self.last_redeploy_at is not None:
            self.now = max(self.now, self.last_redeploy_at + self.policy.hysteresis_window)
        return self.recheck()

    def slos(self) -> dict[str, float]:
        out = {}
        for a in self.plan.assignments:
            out[a.component_name] = float(self.catalog.get(a.product_id).sla.response_time_ms_p95)
        return out

    def monthly_cost(self):
        return plan_cost(self.plan, self.catalog.snapshot(), self.workload)

    # -- internals ------------------------------------------------------------

    def _handle(self, event: GovernanceEvent) -> None:
        event = event.stamped(self.now, self.log.next_seq)
        self.log.append(self.now, "event", event.payload())

        if isinstance(event, CATALOG_EVENTS):
            patch = event_to_patch(event, self.catalog)
            if patch is not None:
                self.catalog.update_product(event.productId, patch)
        elif isinstance(event, MetricSamples):
            for violation in self.monitor.ingest(event.batch, self.slos()):
                self._handle(violation)
            return
        elif isinstance(event, QosViolation):
            if event.metric == LATENCY_METRIC and event.productId in self.catalog:
                self.catalog.ingest_qos_report(QosReport(event.productId, "", event.metric, event.observed,
                                                         "monitor", 1.0, event.ts))
        elif isinstance(event, ReplanRequested):
            self._replan()
            return

        if isinstance(event, CatalogChanged) and event.change == "registered":
            return
        if not self.manifest.active or self.plan is None:
            return
        decision = self._should_redeploy(event)
        self.log.append(self.now, "decision", {"trigger": event.seq, **decision.to_dict()})
        if decision.redeploy:
            self._redeploy(decision)
        elif decision.deferred:
            self.deferred = event

    def _should_redeploy(self, event: Optional[GovernanceEvent]) -> RedeployDecision:
        return should_redeploy(event, self.plan, self.catalog.snapshot(), self.policy, self.workload,
                               self.last_redeploy_at, manifest=self.manifest, app=self.app, now=self.now)

    def _replan(self) -> None:
        justification = "operator re-plan command"
        self.log.append(self.now, "decision", {"trigger": "replan", "redeploy": True,
                                               "justification": justification})
        self._redeploy(RedeployDecision(True, justification, forced=True))

    def _redeploy(self, decision: RedeployDecision) -> None:
        new = decision.candidate
        if new is None:
            try:
                new = decide(self.manifest, self.app, self.catalog.snapshot(), self.policy, self.workload,
                             self.plan.revision, self.now)
            except NoFeasibleProduct as exc:
                self.log.append(self.now, "alert", {
                    "reason": "re-decision infeasible; keeping current plan",
                    "componentName": exc.component_name,
                    "option": exc.option,
                    "activeRevision": self.plan.revision,
                })
                return
        if new.same_assignments(self.plan):
            self.deferred = None
            return
        if self._install(new, decision.justification):
            self.last_redeploy_at = self.now
            self.redeploy_count += 1
            self.deferred = None

    def _install(self, new: DeploymentPlan, justification: str) -> bool:
        d = diff(self.plan, new)
        if self.adapters is not None:
            report = enforce(d, new, self.adapters)
        else:
            report = ExecutionReport(new.revision, tuple(
                Action(m.component_name, "deploy", m.to_product_id, "ok") for m in d.moves))
        self.log.append(self.now, "enforce", report.to_dict())
        if report.rolled_back:
            self.retry_pending = True
            self.log.append(self.now, "alert", {
                "reason": "enforcement failed and was rolled back; previous plan stays active",
                "failedRevision": new.revision,
                "activeRevision": self.plan.revision if self.plan else None,
            })
            return False
        self.plan = new
        cost = plan_cost(new, self.catalog.snapshot(), self.workload)
        self.log.append(self.now, "plan", {"plan": new.to_dict(), "diff": d.to_dict(),
                                           "monthlyCost": str(cost), "justification": justification})
        return True


def governance_step(event: GovernanceEvent, state: Broker) -> tuple[Broker, list[dict]]:
    records = state.step(event)
    return state, records


# ---------------------------------------------------------------------------
# Log consumers
# ---------------------------------------------------------------------------

def replay_plan(records: Iterable[Mapping]) -> Optional[dict]:
    """Rebuild the final plan from a log, cross-checking it against enforcement actions.

    Raises ``ValueError`` when the log is inconsistent (seq not increasing,
    revisions skipping, or placements disagreeing with the plan records).
    """
    last_seq = 0
    plan = None
    placement: dict[str, str] = {}
    pending: Optional[dict[str, str]] = None
    for r in records:
        if r["seq"] <= last_seq:
            raise ValueError(f"seq {r['seq']} does not increase")
        last_seq = r["seq"]
        if r["kind"] == "enforce":
            pending = None
            if not r["payload"]["rolledBack"]:
                pending = dict(placement)
                for a in r["payload"]["actions"]:
                    if a["outcome"] != "ok":
                        continue
                    if a["action"] == "deploy":
                        pending[a["componentName"]] = a["productId"]
                    elif a["action"] == "undeploy" and pending.get(a["componentName"]) == a["productId"]:
                        del pending[a["componentName"]]
        elif r["kind"] == "plan":
            new = r["payload"]["plan"]
            expected = 1 if plan is None else plan["revision"] + 1
            if new["revision"] != expected:
                raise ValueError(f"plan revision {new['revision']} follows {expected - 1}")
            if pending is None:
                raise ValueError(f"plan revision {new['revision']} has no successful enforcement")
            placement = pending
            wanted = {a["componentName"]: a["productId"] for a in new["assignments"]}
            if placement != wanted:
                raise ValueError(f"enforced placement disagrees with plan revision {new['revision']}")
            plan, pending = new, None
    return plan


def audit_log(records: Iterable[Mapping], initial_products: Iterable[Mapping], app: ApplicationModel) -> list[str]:
    """Check every logged plan against product tech tags and status at that point in the log.

    Works only from the log and the initial catalog records; returns a list of
    violation messages (empty when the log is clean).
    """
    products = {p["productId"]: {"tags": set(p.get("techTags", ())), "status": p.get("status", "active")}
                for p in initial_products}
    required = {c.name: set(c.required_tech) for c in app.components}
    problems = []
    for r in records:
        payload = r["payload"]
        if r["kind"] == "event":
            pid = payload.get("productId")
            if pid not in products:
                continue
            if payload["type"] == "TechnologyChanged":
                products[pid]["tags"] |= set(payload["addedTags"])
                products[pid]["tags"] -= set(payload["removedTags"])
            elif payload["type"] == "ProductWithdrawn":
                products[pid]["status"] = "withdrawn"
            elif payload["type"] == "CatalogChanged" and payload.get("change") == "reactivated":
                products[pid]["status"] = "active"
        elif r["kind"] == "plan":
            for a in payload["plan"]["assignments"]:
                p = products.get(a["productId"])
                where = f"seq {r['seq']} revision {payload['plan']['revision']}: {a['componentName']}"
                if p is None:
                    problems.append(f"{where} assigned to unknown product {a['productId']}")
                    continue
                missing = required.get(a["componentName"], set()) - p["tags"]
                if missing:
                    problems.append(f"{where} on {a['productId']} lacks tech {sorted(missing)}")
                if p["status"] != "active":
                    problems.append(f"{where} on {a['productId']} which is {p['status']}")
    return problems
