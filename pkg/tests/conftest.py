import json
import random
import re
from decimal import Decimal
from importlib.resources import files

import pytest

from cloudbroker.catalog import Catalog, CloudProduct, PricingPlan, Rate, SlaTerms, Workload, WorkloadProfile
from cloudbroker.manifest import ApplicationModel, parse_manifest

FIXTURES = files("cloudbroker") / "fixtures"
SCENARIOS = ["price-rise", "withdrawal", "fault", "passive", "qos", "oscillation"]

TAGS = ("jvm", "dotnet", "mysql", "grails", "python")
METRICS = ("cpu", "memory", "storage", "network", "database")
UNITS = {"cpu": "cpu-hour", "memory": "gb-month", "storage": "gb-month", "network": "gb-transfer",
         "database": "k-requests"}
SECURITY = ("encrypted-at-rest", "encrypted-in-transit", "daily-backup", "geo-redundant", "waf")


def fixture_path(name: str) -> str:
    return str(FIXTURES / name)


def load_fixture_json(name: str):
    return json.loads((FIXTURES / name).read_text(encoding="utf-8"))


@pytest.fixture
def figure3_text():
    return (FIXTURES / "petclinic.broker").read_text(encoding="utf-8")


@pytest.fixture
def figure3(figure3_text):
    return parse_manifest(figure3_text)


@pytest.fixture
def petclinic_app():
    return ApplicationModel.from_dict(load_fixture_json("petclinic-app.json"))


@pytest.fixture
def petclinic_catalog():
    return Catalog.load(fixture_path("petclinic-catalog.json"))


@pytest.fixture
def petclinic_workload():
    return Workload.from_dict(load_fixture_json("workload.json"))


def make_product(pid, *, fixed="0", rates=None, tags=("jvm",), avail="99.9", rt="200", security=(),
                 status="active", endpoint=None, provider=None, cloud_type="paas", rank=1, standards=(),
                 currency="EUR"):
    rates = rates or {}
    return CloudProduct(
        product_id=pid,
        provider_id=provider or f"prov-{pid}",
        cloud_type=cloud_type,
        pricing=PricingPlan(currency, Decimal(fixed),
                            tuple(Rate(m, UNITS[m], Decimal(str(p))) for m, p in sorted(rates.items()))),
        sla=SlaTerms(Decimal(avail), Decimal(rt), frozenset(security)),
        tech_tags=frozenset(tags),
        endpoint=endpoint,
        status=status,
        market_volume_rank=rank,
        standards=frozenset(standards),
    )


def _money(rng, hi=100, places=2):
    return Decimal(rng.randint(0, hi * 10 ** places)) / 10 ** places


def random_product(rng: random.Random, pid: str) -> CloudProduct:
    rates = {m: _money(rng, 2, 4) for m in METRICS if rng.random() < 0.6}
    return CloudProduct(
        product_id=pid,
        provider_id=rng.choice(["Acme", "Nimbus", "Stratus", "Cirrus"]),
        cloud_type=rng.choice(["iaas", "paas", "saas"]),
        pricing=PricingPlan(rng.choice(["EUR", "USD"]), _money(rng, 50),
                            tuple(Rate(m, UNITS[m], p) for m, p in sorted(rates.items()))),
        sla=SlaTerms(Decimal(rng.randint(9800, 10000)) / 100, Decimal(rng.randint(20, 800)),
                     frozenset(s for s in SECURITY if rng.random() < 0.5)),
        tech_tags=frozenset(t for t in TAGS if rng.random() < 0.7),
        status="withdrawn" if rng.random() < 0.1 else "active",
        market_volume_rank=rng.randint(1, 10),
        standards=frozenset(s for s in ("OVF", "OCCI", "CDMI") if rng.random() < 0.4),
    )


def random_catalog(rng: random.Random, n: int, latency_prob: float = 0.7) -> Catalog:
    cat = Catalog(fx={"EUR": Decimal(1), "USD": Decimal("0.9")})
    from cloudbroker.catalog import QosReport
    for i in range(n):
        p = random_product(rng, f"p{i:02d}")
        cat.register_product(p)
        if rng.random() < latency_prob:
            for _ in range(rng.randint(1, 3)):
                cat.ingest_qos_report(QosReport(p.product_id, "eu", "latency-ms", rng.uniform(10, 600),
                                                "lab", rng.uniform(0.1, 1.0)))
    return cat


def random_workload_profile(rng: random.Random) -> WorkloadProfile:
    return WorkloadProfile({m: _money(rng, 500, 1) for m in METRICS if rng.random() < 0.7})


def random_app(rng: random.Random, n_components: int = None):
    """Components with globally unique names and random tech needs."""
    from cloudbroker.manifest import COMPONENT_KINDS, Component
    n = n_components or rng.randint(1, 6)
    comps = []
    for i in range(n):
        kind = rng.choice(COMPONENT_KINDS)
        tech = frozenset(t for t in TAGS if rng.random() < 0.25) or frozenset({rng.choice(TAGS)})
        comps.append(Component(f"c{i}", kind, tech, "production" if kind == "dataSource" and rng.random() < 0.5
                               else None))
    return ApplicationModel("rand", tuple(comps))


def strip_ws(text: str) -> str:
    return re.sub(r"\s+", "", text)


# -- acceptance summary ---------------------------------------------------------------

_CRITERION_RE = re.compile(r"test_criterion_(\d+)_(\w+)")
_ACCEPTANCE: dict[int, tuple[str, bool]] = {}


def pytest_runtest_logreport(report):
    m = _CRITERION_RE.search(report.nodeid)
    if not m:
        return
    key = int(m.group(1))
    failed = report.failed or (report.when == "call" and report.skipped)
    name, ok = _ACCEPTANCE.get(key, (m.group(2), True))
    _ACCEPTANCE[key] = (name, ok and not failed)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        name, ok = _ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key} ({name.replace('_', ' ')}): {'PASS' if ok else 'FAIL'}")
