"""Typed governance events.

Events are immutable. ``ts`` (simulated epoch seconds) and ``seq`` are zero
until the broker stamps them on ingestion.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Any, ClassVar, Optional


def _jsonable(value: Any) -> Any:
    if isinstance(value, (list, tuple, frozenset, set)):
        items = [_jsonable(v) for v in value]
        return sorted(items) if isinstance(value, (set, frozenset)) else items
    if hasattr(value, "to_dict"):
        return value.to_dict()
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)  # Decimal and friends


@dataclass(frozen=True)
class GovernanceEvent:
    type: ClassVar[str] = "GovernanceEvent"
    ts: int = field(default=0, kw_only=True)
    seq: int = field(default=0, kw_only=True)

    def stamped(self, ts: int, seq: int) -> "GovernanceEvent":
        return replace(self, ts=ts, seq=seq)

    def payload(self) -> dict:
        out = {"type": self.type}
        for f in fields(self):
            if f.name not in ("ts", "seq"):
                out[_camel(f.name)] = _jsonable(getattr(self, f.name))
        return out

    @property
    def product_id(self) -> Optional[str]:
        return getattr(self, "productId", None)


def _camel(name: str) -> str:
    head, *rest = name.split("_")
    return head + "".join(p.title() for p in rest)


@dataclass(frozen=True)
class PriceChanged(GovernanceEvent):
    type: ClassVar[str] = "PriceChanged"
    productId: str
    metric: str
    old: Any
    new: Any


@dataclass(frozen=True)
class SlaChanged(GovernanceEvent):
    type: ClassVar[str] = "SlaChanged"
    productId: str
    field: str
    old: Any
    new: Any


@dataclass(frozen=True)
class TechnologyChanged(GovernanceEvent):
    type: ClassVar[str] = "TechnologyChanged"
    productId: str
    addedTags: tuple[str, ...]
    removedTags: tuple[str, ...]


@dataclass(frozen=True)
class ProductWithdrawn(GovernanceEvent):
    type: ClassVar[str] = "ProductWithdrawn"
    productId: str


@dataclass(frozen=True)
class CatalogChanged(GovernanceEvent):
    """Registration, or a change to a facet with no dedicated event type."""

    type: ClassVar[str] = "CatalogChanged"
    productId: str
    change: str
    fields: tuple[str, ...] = ()


@dataclass(frozen=True)
class MonitorSample:
    productId: str
    componentName: str
    metric: str
    value: float
    timestamp: int = 0

    def to_dict(self) -> dict:
        return {
            "productId": self.productId,
            "componentName": self.componentName,
            "metric": self.metric,
            "value": self.value,
            "timestamp": self.timestamp,
        }


@dataclass(frozen=True)
class MetricSamples(GovernanceEvent):
    type: ClassVar[str] = "MetricSamples"
    batch: tuple[MonitorSample, ...]


@dataclass(frozen=True)
class QosViolation(GovernanceEvent):
    type: ClassVar[str] = "QosViolation"
    productId: str
    componentName: str
    metric: str
    observed: float
    bound: float


@dataclass(frozen=True)
class ReplanRequested(GovernanceEvent):
    """Explicit operator re-plan; the only way a passive broker changes plan."""

    type: ClassVar[str] = "ReplanRequested"


@dataclass(frozen=True)
class DeployFaultInjected(GovernanceEvent):
    type: ClassVar[str] = "DeployFaultInjected"
    productId: str
    count: int


CATALOG_EVENTS = (PriceChanged, SlaChanged, TechnologyChanged, ProductWithdrawn, CatalogChanged)
