"""Cloud product registry, pricing normalization and third-party QoS aggregation."""
from __future__ import annotations

import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from decimal import Decimal, InvalidOperation
from types import MappingProxyType
from typing import Any, Callable, Iterable, Mapping, Optional

from .errors import DuplicateProduct, MissingFxRate, UnknownProduct, ValidationError
from .events import (
    CatalogChanged,
    GovernanceEvent,
    PriceChanged,
    ProductWithdrawn,
    SlaChanged,
    TechnologyChanged,
)
from .manifest import CLOUD_TYPES, is_absolute_url

logger = logging.getLogger(__name__)

SERVICE_TYPES = ("storage", "compute", "database", "messaging")
STATUSES = ("active", "withdrawn")

# Canonical unit per metric; prices are stored per canonical unit.
CANONICAL_UNITS = {
    "cpu": "cpu-hour",
    "memory": "gb-month",
    "storage": "gb-month",
    "network": "gb-transfer",
    "database": "k-requests",
}

GIB_IN_GB = Decimal("1.073741824")
HOURS_PER_MONTH = Decimal(730)

# price-per-unit multiplier that converts a quoted unit into the canonical one
_PRICE_FACTORS = {
    "cpu": {"cpu-hour": Decimal(1), "cpu-month": 1 / HOURS_PER_MONTH},
    "memory": {
        "gb-month": Decimal(1),
        "gib-month": 1 / GIB_IN_GB,
        "gb-hour": HOURS_PER_MONTH,
        "gib-hour": HOURS_PER_MONTH / GIB_IN_GB,
    },
    "network": {"gb-transfer": Decimal(1), "gib-transfer": 1 / GIB_IN_GB, "tb-transfer": Decimal("0.001")},
    "database": {"k-requests": Decimal(1), "requests": Decimal(1000), "m-requests": Decimal("0.001")},
}
_PRICE_FACTORS["storage"] = _PRICE_FACTORS["memory"]

LATENCY_METRIC = "latency-ms"
RECOGNIZED_SECURITY_ATTRS = frozenset(
    {"encrypted-at-rest", "encrypted-in-transit", "daily-backup", "geo-redundant"}
)
QOS_RETENTION = 100
DEFAULT_REF_LATENCY_MS = 100.0


def to_decimal(value: Any, field_name: str) -> Decimal:
    if isinstance(value, float):
        value = repr(value)
    try:
        d = Decimal(value)
    except (InvalidOperation, TypeError, ValueError):
        raise ValidationError(field_name, f"not a decimal: {value!r}") from None
    if not d.is_finite():
        raise ValidationError(field_name, "must be finite")
    return d


def _nonneg(value: Any, field_name: str) -> Decimal:
    d = to_decimal(value, field_name)
    if d < 0:
        raise ValidationError(field_name, "must be >= 0")
    return d


def convert_price(metric: str, unit: str, price: Decimal) -> Decimal:
    """Convert a price quoted per ``unit`` into the metric's canonical unit."""
    try:
        factor = _PRICE_FACTORS[metric][unit]
    except KeyError:
        if metric not in _PRICE_FACTORS:
            raise ValidationError("rates.metric", f"unknown metric {metric!r}") from None
        raise ValidationError("rates.unit", f"unit {unit!r} not convertible for {metric}") from None
    return price * factor


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Rate:
    metric: str
    unit: str
    price_per_unit: Decimal

    def to_dict(self) -> dict:
        return {"metric": self.metric, "unit": self.unit, "pricePerUnit": str(self.price_per_unit)}


@dataclass(frozen=True)
class PricingPlan:
    currency: str
    fixed_fee_per_month: Decimal = Decimal(0)
    rates: tuple[Rate, ...] = ()

    def __post_init__(self):
        if not (isinstance(self.currency, str) and len(self.currency) == 3 and self.currency.isalpha()):
            raise ValidationError("pricing.currency", f"not an ISO-4217 code: {self.currency!r}")
        object.__setattr__(self, "fixed_fee_per_month", _nonneg(self.fixed_fee_per_month, "pricing.fixedFeePerMonth"))
        object.__setattr__(self, "rates", tuple(
            Rate(r.metric, r.unit, _nonneg(r.price_per_unit, "pricing.rates.pricePerUnit")) for r in self.rates
        ))
        metrics = [r.metric for r in self.rates]
        if len(set(metrics)) != len(metrics):
            raise ValidationError("pricing.rates", "duplicate metric")
        for r in self.rates:
            if CANONICAL_UNITS.get(r.metric) != r.unit:
                raise ValidationError("pricing.rates", f"{r.metric} must be priced per {CANONICAL_UNITS.get(r.metric)}")

    def rate(self, metric: str) -> Optional[Decimal]:
        for r in self.rates:
            if r.metric == metric:
                return r.price_per_unit
        return None

    @classmethod
    def from_dict(cls, d: dict) -> "PricingPlan":
        rates = []
        for raw in d.get("rates", ()):
            metric = raw.get("metric")
            if metric not in CANONICAL_UNITS:
                raise ValidationError("pricing.rates.metric", f"unknown metric {metric!r}")
            unit = raw.get("unit", CANONICAL_UNITS[metric])
            price = _nonneg(raw.get("pricePerUnit"), "pricing.rates.pricePerUnit")
            rates.append(Rate(metric, CANONICAL_UNITS[metric], convert_price(metric, unit, price)))
        rates.sort(key=lambda r: r.metric)
        return cls(
            currency=d.get("currency", ""),
            fixed_fee_per_month=d.get("fixedFeePerMonth", "0"),
            rates=tuple(rates),
        )

    def to_dict(self) -> dict:
        return {
            "currency": self.currency,
            "fixedFeePerMonth": str(self.fixed_fee_per_month),
            "rates": [r.to_dict() for r in self.rates],
        }


@dataclass(frozen=True)
class SlaTerms:
    availability_pct: Decimal
    response_time_ms_p95: Decimal
    security_attrs: frozenset[str] = frozenset()

    def __post_init__(self):
        avail = to_decimal(self.availability_pct, "sla.availabilityPct")
        if not 0 <= avail <= 100:
            raise ValidationError("sla.availabilityPct", "must lie in [0, 100]")
        rt = to_decimal(self.response_time_ms_p95, "sla.responseTimeMsP95")
        if rt <= 0:
            raise ValidationError("sla.responseTimeMsP95", "must be > 0")
        object.__setattr__(self, "availability_pct", avail)
        object.__setattr__(self, "response_time_ms_p95", rt)
        object.__setattr__(self, "security_attrs", frozenset(self.security_attrs))

    @classmethod
    def from_dict(cls, d: dict) -> "SlaTerms":
        if "availabilityPct" not in d or "responseTimeMsP95" not in d:
            raise ValidationError("sla", "availabilityPct and responseTimeMsP95 are required")
        return cls(d["availabilityPct"], d["responseTimeMsP95"], frozenset(d.get("securityAttrs", ())))

    def to_dict(self) -> dict:
        return {
            "availabilityPct": str(self.availability_pct),
            "responseTimeMsP95": str(self.response_time_ms_p95),
            "securityAttrs": sorted(self.security_attrs),
        }


@dataclass(frozen=True)
class CloudProduct:
    product_id: str
    provider_id: str
    cloud_type: str
    pricing: PricingPlan
    sla: SlaTerms
    tech_tags: frozenset[str] = frozenset()
    service_types: frozenset[str] = frozenset()
    regions: frozenset[str] = frozenset()
    endpoint: Optional[str] = None
    status: str = "active"
    market_volume_rank: int = 1
    standards: frozenset[str] = frozenset()

    def __post_init__(self):
        if not self.product_id:
            raise ValidationError("productId", "must be non-empty")
        if not self.provider_id:
            raise ValidationError("providerId", "must be non-empty")
        if self.cloud_type not in CLOUD_TYPES:
            raise ValidationError("cloudType", f"must be one of {CLOUD_TYPES}")
        if self.status not in STATUSES:
            raise ValidationError("status", f"must be one of {STATUSES}")
        if self.endpoint is not None and not is_absolute_url(self.endpoint):
            raise ValidationError("endpoint", f"not an absolute URL: {self.endpoint!r}")
        if isinstance(self.market_volume_rank, bool) or not isinstance(self.market_volume_rank, int) \
                or self.market_volume_rank < 1:
            raise ValidationError("marketVolumeRank", "must be a positive integer")
        for name in ("tech_tags", "service_types", "regions", "standards"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))
        unknown = self.service_types - set(SERVICE_TYPES)
        if unknown:
            raise ValidationError("serviceTypes", f"unknown service types {sorted(unknown)}")

    @property
    def active(self) -> bool:
        return self.status == "active"

    @classmethod
    def from_dict(cls, d: dict) -> "CloudProduct":
        if not isinstance(d, dict):
            raise ValidationError("product", "must be a JSON object")
        for required in ("productId", "providerId", "cloudType", "pricing", "sla"):
            if required not in d:
                raise ValidationError(required, "missing field")
        return cls(
            product_id=d["productId"],
            provider_id=d["providerId"],
            cloud_type=d["cloudType"],
            pricing=PricingPlan.from_dict(d["pricing"]),
            sla=SlaTerms.from_dict(d["sla"]),
            tech_tags=frozenset(d.get("techTags", ())),
            service_types=frozenset(d.get("serviceTypes", ())),
            regions=frozenset(d.get("regions", ())),
            endpoint=d.get("endpoint"),
            status=d.get("status", "active"),
            market_volume_rank=d.get("marketVolumeRank", 1),
            standards=frozenset(d.get("standards", ())),
        )

    def to_dict(self) -> dict:
        return {
            "productId": self.product_id,
            "providerId": self.provider_id,
            "cloudType": self.cloud_type,
            "serviceTypes": sorted(self.service_types),
            "regions": sorted(self.regions),
            "techTags": sorted(self.tech_tags),
            "pricing": self.pricing.to_dict(),
            "sla": self.sla.to_dict(),
            "endpoint": self.endpoint,
            "status": self.status,
            "marketVolumeRank": self.market_volume_rank,
            "standards": sorted(self.standards),
        }


def listing_key(p: CloudProduct) -> tuple:
    return (p.market_volume_rank, -len(p.standards), p.product_id)


@dataclass(frozen=True)
class QosReport:
    product_id: str
    region: str
    metric: str
    value: float
    source_id: str
    trust_weight: float
    timestamp: int = 0

    def __post_init__(self):
        if not (self.trust_weight > 0 and self.trust_weight <= 1):
            raise ValidationError("trustWeight", "must lie in (0, 1]")
        if not math.isfinite(self.value):
            raise ValidationError("value", "must be finite")

    @classmethod
    def from_dict(cls, d: dict) -> "QosReport":
        try:
            return cls(
                product_id=d["productId"],
                region=d.get("region", ""),
                metric=d["metric"],
                value=float(d["value"]),
                source_id=d.get("sourceId", ""),
                trust_weight=float(d.get("trustWeight", 1.0)),
                timestamp=int(d.get("timestamp", 0)),
            )
        except KeyError as exc:
            raise ValidationError(str(exc.args[0]), "missing field") from None

    def to_dict(self) -> dict:
        return {
            "productId": self.product_id,
            "region": self.region,
            "metric": self.metric,
            "value": self.value,
            "sourceId": self.source_id,
            "trustWeight": self.trust_weight,
            "timestamp": self.timestamp,
        }


@dataclass(frozen=True)
class WorkloadProfile:
    """Expected monthly usage per metric, in canonical units."""

    usage: Mapping[str, Decimal] = field(default_factory=dict)

    def __post_init__(self):
        usage = {m: _nonneg(q, f"usage.{m}") for m, q in dict(self.usage).items()}
        object.__setattr__(self, "usage", MappingProxyType(dict(sorted(usage.items()))))

    def scaled(self, factor) -> "WorkloadProfile":
        factor = to_decimal(factor, "factor")
        return WorkloadProfile({m: q * factor for m, q in self.usage.items()})

    def __hash__(self):
        return hash(tuple(self.usage.items()))

    def __eq__(self, other):
        return isinstance(other, WorkloadProfile) and dict(self.usage) == dict(other.usage)

    @classmethod
    def from_dict(cls, d: dict) -> "WorkloadProfile":
        return cls(dict(d.get("usage", {})))

    def to_dict(self) -> dict:
        return {"usage": {m: str(q) for m, q in self.usage.items()}}


@dataclass(frozen=True)
class Workload:
    """Default usage profile plus optional per-component overrides."""

    default: WorkloadProfile = field(default_factory=WorkloadProfile)
    components: Mapping[str, WorkloadProfile] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "components", MappingProxyType(dict(self.components)))

    def for_component(self, name: str) -> WorkloadProfile:
        return self.components.get(name, self.default)

    def __hash__(self):
        return hash((self.default, tuple(sorted(self.components.items()))))

    def __eq__(self, other):
        return (isinstance(other, Workload) and self.default == other.default
                and dict(self.components) == dict(other.components))

    @classmethod
    def from_dict(cls, d: dict) -> "Workload":
        comps = {name: WorkloadProfile.from_dict(v) for name, v in d.get("components", {}).items()}
        return cls(WorkloadProfile.from_dict(d), comps)

    def to_dict(self) -> dict:
        out = self.default.to_dict()
        if self.components:
            out["components"] = {k: v.to_dict() for k, v in sorted(self.components.items())}
        return out


@dataclass(frozen=True)
class NormalizedOffer:
    product_id: str
    monthly_cost: Decimal
    perf_score: float
    reliability_score: float
    security_score: float
    unmeasured: bool = False

    def __post_init__(self):
        if self.monthly_cost < 0:
            raise ValidationError("monthlyCost", "must be >= 0")
        for name in ("perf_score", "reliability_score", "security_score"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValidationError(name, "score outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "productId": self.product_id,
            "monthlyCost": str(self.monthly_cost),
            "perfScore": self.perf_score,
            "reliabilityScore": self.reliability_score,
            "securityScore": self.security_score,
            "unmeasured": self.unmeasured,
        }


# ---------------------------------------------------------------------------
# Cost and offer normalization
# ---------------------------------------------------------------------------

_warned_unpriced: set[str] = set()


def estimate_monthly_cost(plan: PricingPlan, w: WorkloadProfile, fx: Mapping[str, Decimal]) -> Decimal:
    """Monthly cost of ``w`` under ``plan``, converted to the reference currency.

    Workload metrics the plan does not price contribute nothing.
    """
    if plan.currency not in fx:
        raise MissingFxRate(plan.currency)
    total = plan.fixed_fee_per_month
    priced = set()
    for r in plan.rates:
        priced.add(r.metric)
        total += r.price_per_unit * w.usage.get(r.metric, Decimal(0))
    for metric in w.usage:
        if metric not in priced and w.usage[metric] and metric not in _warned_unpriced:
            _warned_unpriced.add(metric)
            logger.warning("metric %r has no rate in some pricing plans; treated as free", metric)
    return to_decimal(fx[plan.currency], f"fx.{plan.currency}") * total


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


def reliability_score(availability_pct: Decimal) -> float:
    # 99% -> 0, 100% -> 1, linear between
    return _clamp01(float(availability_pct - Decimal(99)))


def security_score(attrs: Iterable[str]) -> float:
    return len(RECOGNIZED_SECURITY_ATTRS & set(attrs)) / len(RECOGNIZED_SECURITY_ATTRS)


def normalize_offer(
    p: CloudProduct,
    w: WorkloadProfile,
    fx: Mapping[str, Decimal],
    latency_ms: Optional[float] = None,
    ref_latency_ms: float = DEFAULT_REF_LATENCY_MS,
) -> NormalizedOffer:
    """Translate a product into comparable numbers for one workload.

    ``latency_ms`` is the aggregated third-party latency; ``None`` marks the
    product unmeasured and scores its performance optimistically at 1.0.
    """
    if latency_ms is None or latency_ms <= 0:
        perf = 1.0
    else:
        perf = _clamp01(ref_latency_ms / latency_ms)
    return NormalizedOffer(
        product_id=p.product_id,
        monthly_cost=estimate_monthly_cost(p.pricing, w, fx),
        perf_score=perf,
        reliability_score=reliability_score(p.sla.availability_pct),
        security_score=security_score(p.sla.security_attrs),
        unmeasured=latency_ms is None,
    )


# ---------------------------------------------------------------------------
# Snapshot and registry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CatalogSnapshot:
    """Immutable view of the catalog handed to the decision point."""

    products: Mapping[str, CloudProduct]
    latency: Mapping[str, float]
    fx: Mapping[str, Decimal]
    reference_currency: str = "EUR"
    ref_latency_ms: float = DEFAULT_REF_LATENCY_MS
    revision: int = 0

    def __post_init__(self):
        for name in ("products", "latency", "fx"):
            object.__setattr__(self, name, MappingProxyType(dict(getattr(self, name))))

    @classmethod
    def of(cls, products: Iterable[CloudProduct], latency=None, fx=None, **kw) -> "CatalogSnapshot":
        return cls(
            {p.product_id: p for p in products},
            latency or {},
            fx if fx is not None else {"EUR": Decimal(1)},
            **kw,
        )

    def product(self, product_id: str) -> CloudProduct:
        try:
            return self.products[product_id]
        except KeyError:
            raise UnknownProduct(product_id) from None

    def candidates(self) -> list[CloudProduct]:
        return sorted((p for p in self.products.values() if p.active), key=listing_key)

    def offer(self, product_id: str, w: WorkloadProfile) -> NormalizedOffer:
        return normalize_offer(
            self.product(product_id), w, self.fx, self.latency.get(product_id), self.ref_latency_ms
        )

    def with_product(self, p: CloudProduct) -> "CatalogSnapshot":
        products = dict(self.products)
        products[p.product_id] = p
        return replace(self, products=products)


Subscriber = Callable[[GovernanceEvent], None]

_PRICING_KEYS = ("currency", "fixedFeePerMonth", "rates")
_SLA_KEYS = ("availabilityPct", "responseTimeMsP95", "securityAttrs")


class Catalog:
    """Mutable registry. Mutations are expected from a single writer."""

    def __init__(self, fx: Optional[Mapping[str, Any]] = None, reference_currency: str = "EUR",
                 ref_latency_ms: float = DEFAULT_REF_LATENCY_MS):
        self.reference_currency = reference_currency
        fx = {reference_currency: Decimal(1)} if fx is None else fx
        self.fx = {cur: _nonneg(rate, f"fx.{cur}") for cur, rate in fx.items()}
        self.ref_latency_ms = ref_latency_ms
        self.revision = 0
        self._products: dict[str, CloudProduct] = {}
        self._qos: dict[tuple[str, str], deque[QosReport]] = {}
        self._subscribers: list[Subscriber] = []

    # -- subscription -----------------------------------------------------

    def subscribe(self, callback: Subscriber) -> None:
        self._subscribers.append(callback)

    def _emit(self, event: GovernanceEvent) -> None:
        for cb in self._subscribers:
            cb(event)

    # -- products -----------------------------------------------------------

    def register_product(self, p: CloudProduct) -> int:
        if not isinstance(p, CloudProduct):
            p = CloudProduct.from_dict(p)
        if p.product_id in self._products:
            raise DuplicateProduct(p.product_id)
        self._products[p.product_id] = p
        self.revision += 1
        self._emit(CatalogChanged(p.product_id, "registered"))
        return self.revision

    def get(self, product_id: str) -> CloudProduct:
        try:
            return self._products[product_id]
        except KeyError:
            raise UnknownProduct(product_id) from None

    def __contains__(self, product_id: str) -> bool:
        return product_id in self._products

    def __len__(self) -> int:
        return len(self._products)

    def list_products(self) -> list[CloudProduct]:
        return sorted(self._products.values(), key=listing_key)

    def candidates(self) -> list[CloudProduct]:
        return [p for p in self.list_products() if p.active]

    def update_product(self, product_id: str, patch: Mapping[str, Any]) -> list[GovernanceEvent]:
        """Apply a partial update and return the events it implies.

        Pricing rates in the patch are merged by metric; ``sla`` keys are merged
        individually; every other field is replaced wholesale.
        """
        old = self.get(product_id)
        if patch.get("productId", product_id) != product_id:
            raise ValidationError("productId", "cannot be changed by an update")
        d = old.to_dict()
        for key, value in patch.items():
            if key == "pricing":
                pricing = d["pricing"]
                for pk, pv in value.items():
                    if pk not in _PRICING_KEYS:
                        raise ValidationError(f"pricing.{pk}", "unknown field")
                    if pk == "rates":
                        merged = {r["metric"]: r for r in pricing["rates"]}
                        for r in pv:
                            merged[r.get("metric")] = r
                        pricing["rates"] = list(merged.values())
                    else:
                        pricing[pk] = value[pk]
            elif key == "sla":
                for sk, sv in value.items():
                    if sk not in _SLA_KEYS:
                        raise ValidationError(f"sla.{sk}", "unknown field")
                    d["sla"][sk] = sv
            elif key in d:
                d[key] = value
            else:
                raise ValidationError(key, "unknown field")
        new = CloudProduct.from_dict(d)
        events = product_change_events(old, new)
        if events:
            self._products[product_id] = new
            self.revision += 1
            for e in events:
                self._emit(e)
        return events

    # -- QoS --------------------------------------------------------------

    def ingest_qos_report(self, r: QosReport) -> float:
        """Record a third-party report; returns the new trust-weighted aggregate."""
        if r.product_id not in self._products:
            raise UnknownProduct(r.product_id)
        window = self._qos.setdefault((r.product_id, r.metric), deque(maxlen=QOS_RETENTION))
        window.append(r)
        return self.qos_aggregate(r.product_id, r.metric)

    def qos_aggregate(self, product_id: str, metric: str) -> Optional[float]:
        window = self._qos.get((product_id, metric))
        if not window:
            return None
        num = math.fsum(r.trust_weight * r.value for r in window)
        den = math.fsum(r.trust_weight for r in window)
        mean = num / den
        # keep rounding noise inside the observed range
        return min(max(mean, min(r.value for r in window)), max(r.value for r in window))

    def qos_reports(self) -> list[QosReport]:
        return [r for key in sorted(self._qos) for r in self._qos[key]]

    # -- snapshots and persistence -------------------------------------------

    def offer(self, product_id: str, w: WorkloadProfile) -> NormalizedOffer:
        return self.snapshot().offer(product_id, w)

    def snapshot(self) -> CatalogSnapshot:
        latency = {}
        for (pid, metric) in self._qos:
            if metric == LATENCY_METRIC:
                latency[pid] = self.qos_aggregate(pid, metric)
        return CatalogSnapshot(
            products=self._products,
            latency=latency,
            fx=self.fx,
            reference_currency=self.reference_currency,
            ref_latency_ms=self.ref_latency_ms,
            revision=self.revision,
        )

    def to_dict(self) -> dict:
        out = {
            "products": [p.to_dict() for p in self.list_products()],
            "qosReports": [r.to_dict() for r in self.qos_reports()],
            "fx": {cur: str(rate) for cur, rate in sorted(self.fx.items())},
            "referenceCurrency": self.reference_currency,
        }
        if self.ref_latency_ms != DEFAULT_REF_LATENCY_MS:
            out["refLatencyMs"] = self.ref_latency_ms
        return out

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Catalog":
        if not isinstance(d, Mapping):
            raise ValidationError("catalog", "must be a JSON object")
        ref = d.get("referenceCurrency", "EUR")
        cat = cls(d.get("fx"), ref, float(d.get("refLatencyMs", DEFAULT_REF_LATENCY_MS)))
        for raw in d.get("products", ()):
            cat.register_product(CloudProduct.from_dict(raw))
        for raw in d.get("qosReports", ()):
            cat.ingest_qos_report(QosReport.from_dict(raw))
        return cat

    @classmethod
    def load(cls, path) -> "Catalog":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def product_change_events(old: CloudProduct, new: CloudProduct) -> list[GovernanceEvent]:
    """Events implied by replacing ``old`` with ``new``, ordered price, sla, tech, status, other."""
    pid = old.product_id
    events: list[GovernanceEvent] = []

    if old.pricing.fixed_fee_per_month != new.pricing.fixed_fee_per_month:
        events.append(PriceChanged(pid, "fixedFeePerMonth",
                                   old.pricing.fixed_fee_per_month, new.pricing.fixed_fee_per_month))
    metrics = sorted({r.metric for r in old.pricing.rates} | {r.metric for r in new.pricing.rates})
    for m in metrics:
        before, after = old.pricing.rate(m), new.pricing.rate(m)
        if before != after:
            events.append(PriceChanged(pid, m, before, after))
    if old.pricing.currency != new.pricing.currency:
        events.append(PriceChanged(pid, "currency", old.pricing.currency, new.pricing.currency))

    for key, attr in (("availabilityPct", "availability_pct"),
                      ("responseTimeMsP95", "response_time_ms_p95"),
                      ("securityAttrs", "security_attrs")):
        before, after = getattr(old.sla, attr), getattr(new.sla, attr)
        if before != after:
            if isinstance(before, frozenset):
                before, after = tuple(sorted(before)), tuple(sorted(after))
            events.append(SlaChanged(pid, key, before, after))

    if old.tech_tags != new.tech_tags:
        events.append(TechnologyChanged(pid, tuple(sorted(new.tech_tags - old.tech_tags)),
                                        tuple(sorted(old.tech_tags - new.tech_tags))))

    if old.status != new.status:
        if new.status == "withdrawn":
            events.append(ProductWithdrawn(pid))
        else:
            events.append(CatalogChanged(pid, "reactivated", ("status",)))

    other = []
    for key, attr in (("cloudType", "cloud_type"), ("endpoint", "endpoint"),
                      ("marketVolumeRank", "market_volume_rank"), ("providerId", "provider_id"),
                      ("regions", "regions"), ("serviceTypes", "service_types"),
                      ("standards", "standards")):
        if getattr(old, attr) != getattr(new, attr):
            other.append(key)
    if other:
        events.append(CatalogChanged(pid, "updated", tuple(other)))
    return events

