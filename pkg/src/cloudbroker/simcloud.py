"""Deterministic simulated providers, clock, PRNG and scenario runner.

Randomness comes only from :class:`XorShift64Star`: the seed is expanded with
one SplitMix64 step, then each draw is one xorshift64* step
(shifts 12/25/27, multiplier 0x2545F4914F6CDD1D). Uniform floats use the top
53 bits. Any implementation following those steps reproduces our logs.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

from .catalog import LATENCY_METRIC, Catalog, Workload
from .decision import GovernancePolicy
from .errors import (
    AlreadyDeployed,
    BrokerError,
    InitialPlanInfeasible,
    InjectedFailure,
    NoFeasibleProduct,
    NotDeployed,
    ScenarioParseError,
)
from .events import DeployFaultInjected, MetricSamples, MonitorSample, ReplanRequested
from .manifest import ApplicationModel, DeploymentManifest, load_manifest
from .runtime import Broker, EventLog

_MASK64 = (1 << 64) - 1


class XorShift64Star:
    def __init__(self, seed: int):
        z = (seed + 0x9E3779B97F4A7C15) & _MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        z ^= z >> 31
        self.state = z or 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & _MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & _MASK64

    def random(self) -> float:
        """Uniform float in [0, 1)."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, a: float, b: float) -> float:
        return a + (b - a) * self.random()


@dataclass
class SimClock:
    tick_seconds: int = 60
    current_tick: int = 0

    def advance_to(self, tick: int) -> None:
        if tick < self.current_tick:
            raise ValueError("simulated clock cannot go backwards")
        self.current_tick = tick

    def advance(self, ticks: int = 1) -> None:
        self.advance_to(self.current_tick + ticks)

    @property
    def now(self) -> int:
        return self.current_tick * self.tick_seconds


@dataclass(frozen=True)
class MetricSpec:
    metric: str = LATENCY_METRIC
    base: float = 100.0
    jitter_pct: float = 0.0

    def sample(self, rng: XorShift64Star) -> float:
        return round(self.base * (1 + self.jitter_pct / 100 * rng.uniform(-1.0, 1.0)), 6)

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricSpec":
        return cls(d.get("metric", LATENCY_METRIC), float(d.get("base", 100.0)), float(d.get("jitterPct", 0.0)))


@dataclass(frozen=True)
class DeploymentRef:
    product_id: str
    component_name: str
    ready_tick: int


@dataclass
class _Placement:
    start: int
    end: Optional[int] = None
    config: Mapping[str, str] = field(default_factory=dict)


class SimProvider:
    """In-memory provider adapter for one product.

    A deploy becomes visible ``deploy_latency_ticks`` after the call. An
    undeploy that hands over to a still-starting deployment elsewhere keeps
    the component here until that deployment is ready.
    """

    def __init__(self, product_id: str, clock: Optional[SimClock] = None, deploy_latency_ticks: int = 0,
                 fail_next_deploys: int = 0, metric_generator: Optional[MetricSpec] = None):
        if deploy_latency_ticks < 0 or fail_next_deploys < 0:
            raise ValueError("latency and fault counter must be >= 0")
        self.product_id = product_id
        self.clock = clock or SimClock()
        self.deploy_latency_ticks = deploy_latency_ticks
        self.fail_next_deploys = fail_next_deploys
        self.metric_generator = metric_generator
        self.injected_failures = 0
        self._placements: dict[str, _Placement] = {}

    def _live(self) -> dict[str, _Placement]:
        tick = self.clock.current_tick
        for name in [n for n, p in self._placements.items() if p.end is not None and p.end <= tick]:
            del self._placements[name]
        return self._placements

    @property
    def deployed(self) -> frozenset[str]:
        tick = self.clock.current_tick
        return frozenset(n for n, p in self._live().items() if p.start <= tick)

    @property
    def pending(self) -> frozenset[str]:
        tick = self.clock.current_tick
        return frozenset(n for n, p in self._live().items() if p.start > tick)

    def state(self) -> tuple:
        """Comparable snapshot of everything deploy/undeploy can change."""
        return tuple(sorted((n, p.start, p.end) for n, p in self._live().items()))

    def deploy(self, component_name: str, config_params: Mapping[str, str] = None) -> DeploymentRef:
        if component_name in self._live():
            raise AlreadyDeployed(f"{component_name} already deployed on {self.product_id}")
        if self.fail_next_deploys > 0:
            self.fail_next_deploys -= 1
            self.injected_failures += 1
            raise InjectedFailure(f"injected deploy failure on {self.product_id}")
        ready = self.clock.current_tick + self.deploy_latency_ticks
        self._placements[component_name] = _Placement(ready, None, dict(config_params or {}))
        return DeploymentRef(self.product_id, component_name, ready)

    def undeploy(self, component_name: str, handover: Optional[DeploymentRef] = None) -> None:
        live = self._live()
        if component_name not in live or live[component_name].end is not None:
            raise NotDeployed(f"{component_name} is not deployed on {self.product_id}")
        tick = self.clock.current_tick
        end = max(tick, handover.ready_tick) if handover is not None else tick
        if end <= tick:
            del live[component_name]
        else:
            live[component_name].end = end


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------

ACTION_TYPES = ("catalogUpdate", "injectSamples", "failDeploy", "replanCommand")


@dataclass(frozen=True)
class TimelineEntry:
    tick: int
    action: Mapping[str, Any]


@dataclass(frozen=True)
class Scenario:
    seed: int
    ticks: int
    tick_seconds: int = 60
    timeline: tuple[TimelineEntry, ...] = ()
    providers: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)
    inputs: Mapping[str, str] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scenario":
        try:
            seed = int(d["seed"])
            ticks = int(d["ticks"])
            tick_seconds = int(d.get("tickSeconds", 60))
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioParseError(f"seed, ticks and tickSeconds must be integers: {exc}") from None
        if ticks < 0 or tick_seconds <= 0:
            raise ScenarioParseError("ticks must be >= 0 and tickSeconds > 0")
        if not 0 <= seed <= _MASK64:
            raise ScenarioParseError("seed must be an unsigned 64-bit integer")
        entries = []
        last = 0
        for i, raw in enumerate(d.get("timeline", ())):
            try:
                tick = int(raw["tick"])
                action = dict(raw["action"])
            except (KeyError, TypeError, ValueError):
                raise ScenarioParseError(f"timeline[{i}] needs an integer tick and an action object") from None
            if tick < 1:
                raise ScenarioParseError(f"timeline[{i}]: ticks start at 1")
            if tick < last:
                raise ScenarioParseError(f"timeline[{i}]: timeline must be sorted by tick")
            kind = action.get("type")
            if kind not in ACTION_TYPES:
                raise ScenarioParseError(f"timeline[{i}]: unknown action type {kind!r}")
            if kind in ("catalogUpdate", "failDeploy") and "productId" not in action:
                raise ScenarioParseError(f"timeline[{i}]: {kind} needs a productId")
            if kind == "catalogUpdate" and not isinstance(action.get("patch"), dict):
                raise ScenarioParseError(f"timeline[{i}]: catalogUpdate needs a patch object")
            last = tick
            entries.append(TimelineEntry(tick, action))
        return cls(seed, ticks, tick_seconds, tuple(entries), dict(d.get("providers", {})),
                   dict(d.get("inputs", {})))

    def with_overrides(self, seed: Optional[int] = None, ticks: Optional[int] = None) -> "Scenario":
        return Scenario(self.seed if seed is None else seed, self.ticks if ticks is None else ticks,
                        self.tick_seconds, self.timeline, self.providers, self.inputs)

    @classmethod
    def load(cls, path) -> "Scenario":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise ScenarioParseError(f"{path}: {exc}") from None


@dataclass
class ScenarioResult:
    log: EventLog
    broker: Broker
    providers: dict[str, SimProvider]
    clock: SimClock
    scenario: Scenario

    @property
    def plan(self):
        return self.broker.plan


def _build_providers(catalog: Catalog, clock: SimClock, settings: Mapping[str, Mapping]) -> dict[str, SimProvider]:
    providers = {}
    for p in catalog.list_products():
        cfg = settings.get(p.product_id, {})
        gen = cfg.get("metricGenerator")
        providers[p.product_id] = SimProvider(
            p.product_id, clock,
            deploy_latency_ticks=int(cfg.get("deployLatencyTicks", 0)),
            fail_next_deploys=int(cfg.get("failNextDeploys", 0)),
            metric_generator=MetricSpec.from_dict(gen) if gen else None,
        )
    return providers


def _samples(action: Mapping, broker: Broker, providers: Mapping[str, SimProvider], rng: XorShift64Star,
             now: int) -> tuple[MonitorSample, ...]:
    names = [action["componentName"]] if "componentName" in action else \
        [a.component_name for a in broker.plan.assignments]
    count = int(action.get("count", 1))
    out = []
    for name in names:
        pid = broker.plan.product_of(name)
        if pid is None:
            raise ScenarioParseError(f"injectSamples: component {name!r} is not in the active plan")
        spec = providers[pid].metric_generator if pid in providers else None
        if spec is None:
            bound = float(broker.catalog.get(pid).sla.response_time_ms_p95)
            spec = MetricSpec(LATENCY_METRIC, bound / 2, 10.0)
        spec = MetricSpec(action.get("metric", spec.metric), float(action.get("base", spec.base)),
                          float(action.get("jitterPct", spec.jitter_pct)))
        for _ in range(count):
            out.append(MonitorSample(pid, name, spec.metric, spec.sample(rng), now))
    return tuple(out)


def run_scenario(s: Scenario, manifest: DeploymentManifest, app: ApplicationModel, policy: GovernancePolicy,
                 workload: Workload, initial_catalog: Catalog) -> ScenarioResult:
    """Drive the governance loop through ``s`` tick by tick.

    The initial catalog is copied, never mutated. Identical arguments give
    byte-identical logs.
    """
    catalog = Catalog.from_dict(initial_catalog.to_dict())
    clock = SimClock(s.tick_seconds)
    rng = XorShift64Star(s.seed)
    providers = _build_providers(catalog, clock, s.providers)
    log = EventLog()
    broker = Broker(manifest, app, catalog, policy, workload, adapters=providers, log=log)
    try:
        broker.start(clock.now)
    except NoFeasibleProduct as exc:
        raise InitialPlanInfeasible(str(exc)) from exc

    by_tick: dict[int, list[TimelineEntry]] = {}
    for entry in s.timeline:
        by_tick.setdefault(entry.tick, []).append(entry)

    for tick in range(1, s.ticks + 1):
        clock.advance_to(tick)
        now = clock.now
        for entry in by_tick.get(tick, ()):
            a = entry.action
            kind = a["type"]
            try:
                if kind == "catalogUpdate":
                    broker.apply_catalog_update(a["productId"], a["patch"], now)
                elif kind == "injectSamples":
                    broker.step(MetricSamples(_samples(a, broker, providers, rng, now)), now)
                elif kind == "failDeploy":
                    pid, count = a["productId"], int(a.get("count", 1))
                    if pid not in providers:
                        raise ScenarioParseError(f"failDeploy: unknown product {pid!r}")
                    providers[pid].fail_next_deploys += count
                    broker.record(DeployFaultInjected(pid, count), now)
                elif kind == "replanCommand":
                    broker.step(ReplanRequested(), now)
            except ScenarioParseError:
                raise
            except BrokerError as exc:
                raise ScenarioParseError(f"tick {tick}: {kind} failed: {exc}") from exc
        broker.recheck(now)
    return ScenarioResult(log, broker, providers, clock, s)


# ---------------------------------------------------------------------------
# Bundles: a scenario file plus the inputs it names
# ---------------------------------------------------------------------------

@dataclass
class ScenarioBundle:
    scenario: Scenario
    manifest: DeploymentManifest
    app: ApplicationModel
    policy: GovernancePolicy
    workload: Workload
    catalog: Catalog

    def run(self, seed: Optional[int] = None, ticks: Optional[int] = None) -> ScenarioResult:
        return run_scenario(self.scenario.with_overrides(seed, ticks), self.manifest, self.app, self.policy,
                            self.workload, self.catalog)


def _load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_bundle(path, overrides: Optional[Mapping[str, Any]] = None) -> ScenarioBundle:
    """Load a scenario and the inputs listed under its ``inputs`` key.

    Input paths are relative to the scenario file. ``overrides`` maps the same
    keys (manifest, app, workload, catalog, policy) to explicit paths.
    """
    scenario = Scenario.load(path)
    base = os.path.dirname(os.path.abspath(path))
    inputs = {k: os.path.join(base, v) for k, v in scenario.inputs.items()}
    inputs.update({k: v for k, v in (overrides or {}).items() if v is not None})
    missing = [k for k in ("manifest", "app", "catalog") if k not in inputs]
    if missing:
        raise ScenarioParseError(f"scenario inputs missing: {', '.join(missing)}")
    policy = GovernancePolicy.from_dict(_load_json(inputs["policy"])) if "policy" in inputs else GovernancePolicy()
    workload = Workload.from_dict(_load_json(inputs["workload"])) if "workload" in inputs else Workload()
    return ScenarioBundle(
        scenario,
        load_manifest(inputs["manifest"]),
        ApplicationModel.from_dict(_load_json(inputs["app"])),
        policy,
        workload,
        Catalog.load(inputs["catalog"]),
    )
