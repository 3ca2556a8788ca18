import random
from decimal import Decimal
from fractions import Fraction
from types import SimpleNamespace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cloudbroker.catalog import Catalog, CatalogSnapshot, NormalizedOffer, Workload, WorkloadProfile
from cloudbroker.decision import (
    Assignment,
    DeploymentPlan,
    GovernancePolicy,
    QosThresholds,
    apply_diff,
    best_effort_scores,
    decide,
    diff,
    explain,
    feasible,
    rank_best_effort,
    rank_economy,
    should_redeploy,
)
from cloudbroker.errors import AppMismatch, NoCandidates, NoFeasibleProduct, ValidationError
from cloudbroker.events import PriceChanged, ProductWithdrawn
from cloudbroker.manifest import (
    ApplicationModel,
    BestEffort,
    Component,
    Economy,
    PrivateCloud,
    parse_manifest,
    resolve_bindings,
)

from conftest import make_product, random_app, random_catalog, random_workload_profile
from oracles import admissible, best_effort_oracle, cost_oracle, scores_oracle

POLICY = GovernancePolicy()


def offer(pid, cost, perf=1.0, rel=1.0, sec=1.0, unmeasured=False):
    return NormalizedOffer(pid, Decimal(str(cost)), perf, rel, sec, unmeasured)


# -- policy -------------------------------------------------------------------------

def test_policy_weights_must_sum_to_one():
    with pytest.raises(ValidationError):
        GovernancePolicy(w_cost="0.6", w_perf="0.5")
    with pytest.raises(ValidationError):
        GovernancePolicy(redeploy_cost_delta_pct=0)
    assert GovernancePolicy.from_dict(POLICY.to_dict()) == POLICY


# -- feasibility ----------------------------------------------------------------------

def test_feasible_dotnet_on_jvm_product():
    c = Component("billing", "services", frozenset({"dotnet"}))
    assert not feasible(c, Economy(), make_product("gae", tags=("jvm", "mysql")))


def test_feasible_subset_identity():
    c = Component("x", "services", frozenset({"jvm"}))
    assert feasible(c, Economy(), make_product("p", tags=("jvm",)))


def test_feasible_withdrawn():
    c = Component("x", "services", frozenset({"jvm"}))
    assert not feasible(c, Economy(), make_product("p", status="withdrawn"))


def test_feasible_random_pairs():
    rng = random.Random(1)
    pins = [PrivateCloud("http://h:1", "paas", "Acme"), PrivateCloud("http://h:2", "iaas", "Nimbus")]
    for _ in range(500):
        app = random_app(rng, 1)
        c = app.components[0]
        p = make_product("p", tags=rng.sample(["jvm", "dotnet", "mysql", "grails", "python"], rng.randint(0, 5)),
                         status=rng.choice(["active", "withdrawn"]),
                         endpoint=rng.choice([None, "http://h:1", "http://h:2"]),
                         provider=rng.choice(["Acme", "Nimbus"]), cloud_type=rng.choice(["paas", "iaas"]))
        opt = rng.choice([Economy(), BestEffort()] + pins)
        expected = p.status == "active" and set(c.required_tech) <= set(p.tech_tags)
        if isinstance(opt, PrivateCloud):
            expected = expected and (p.endpoint, p.cloud_type, p.provider_id) == \
                (opt.endpoint, opt.cloud_type, opt.provider_id)
        assert feasible(c, opt, p) == expected


# -- ranking --------------------------------------------------------------------------

def test_rank_economy_single():
    o = offer("A", 10)
    assert rank_economy([o], POLICY) == [o]


def test_rank_economy_tiebreak():
    a, b, c = offer("A", 10), offer("B", 8, perf=0.6), offer("C", 8, perf=0.9)
    assert [o.product_id for o in rank_economy([a, b, c], POLICY)] == ["C", "B", "A"]


def test_rank_economy_thresholds():
    policy = GovernancePolicy(min_qos={"economy": QosThresholds(min_reliability=0.5)})
    cheap, ok = offer("cheap", 1, rel=0.2), offer("ok", 5, rel=0.9)
    assert rank_economy([cheap, ok], policy) == [ok]
    with pytest.raises(NoCandidates):
        rank_economy([cheap], policy)


def test_rank_economy_fifty_random():
    rng = random.Random(2)
    policy = GovernancePolicy(min_qos={"economy": QosThresholds(0.3, 0.25, 0.1)})
    for _ in range(200):
        offers = [offer(f"p{i}", Decimal(rng.randint(0, 2000)) / 100, rng.random(), rng.random(),
                        rng.choice([0, 0.25, 0.5, 1.0])) for i in range(50)]
        kept = [o for o in offers if o.reliability_score >= 0.3 and o.security_score >= 0.25
                and o.perf_score >= 0.1]
        if not kept:
            continue
        best = kept[0]
        for o in kept[1:]:
            if (o.monthly_cost, -o.perf_score, o.product_id) < (best.monthly_cost, -best.perf_score,
                                                                  best.product_id):
                best = o
        assert rank_economy(offers, policy)[0] == best


def test_best_effort_example():
    offers = [offer("low", 10, perf=0.2), offer("mid", 20, perf=0.9), offer("high", 30, perf=0.95)]
    scored = dict((o.product_id, s) for o, s in best_effort_scores(offers, POLICY))
    assert scored == {"low": Fraction(6, 10), "mid": Fraction(7, 10), "high": Fraction(475, 1000)}
    assert rank_best_effort(offers, POLICY)[0].product_id == "mid"


def test_best_effort_equal_score_cheaper_first():
    # a: 0.5*1 + 0.5*0.2 = 0.6; b: 0.5*0.5 + 0.5*0.7 = 0.6; c: 0.5*0 + 0.5*0.9 = 0.45
    offers = [offer("b", 20, perf=0.7), offer("a", 10, perf=0.2), offer("c", 30, perf=0.9)]
    ranked = best_effort_scores(offers, POLICY)
    assert ranked[0][1] == ranked[1][1] == Fraction(6, 10)
    assert [o.product_id for o, _ in ranked] == ["a", "b", "c"]


def test_best_effort_cost_weight_one_matches_economy():
    policy = GovernancePolicy(w_cost=1, w_perf=0)
    offers = [offer("a", 12, 0.1), offer("b", 7, 0.9), offer("c", 30, 1.0)]
    assert [o.product_id for o in rank_best_effort(offers, policy)] == \
        [o.product_id for o in rank_economy(offers, policy)]


def test_best_effort_excludes_unmeasured():
    offers = [offer("m", 10, 0.5), offer("u", 1, 1.0, unmeasured=True)]
    assert [o.product_id for o in rank_best_effort(offers, POLICY)] == ["m"]
    relaxed = GovernancePolicy(exclude_unmeasured_from_best_effort=False)
    assert rank_best_effort(offers, relaxed)[0].product_id == "u"


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10**6), st.integers(0, 100)), min_size=1, max_size=20),
       st.integers(1, 10**6), st.sampled_from(["0", "0.25", "0.5", "0.9", "1"]))
def test_argmax_invariance(rows, k, w_cost):
    policy = GovernancePolicy(w_cost=w_cost, w_perf=1 - Decimal(w_cost))
    offers = [offer(f"p{i}", Decimal(c) / 100, p / 100) for i, (c, p) in enumerate(rows)]
    scale = Decimal(k) / 1000
    scaled = [NormalizedOffer(o.product_id, o.monthly_cost * scale, o.perf_score, 1.0, 1.0) for o in offers]
    assert rank_best_effort(offers, policy)[0].product_id == rank_best_effort(scaled, policy)[0].product_id


# -- decide ---------------------------------------------------------------------------

def test_decide_figure3(figure3, petclinic_app, petclinic_catalog, petclinic_workload):
    policy = GovernancePolicy.load(_fixture("policy.json"))
    plan = decide(figure3, petclinic_app, petclinic_catalog.snapshot(), policy, petclinic_workload)
    assert plan.revision == 1 and plan.plan_id == "petclinic-r1"
    m = plan.assignment_map()
    assert m["prodDb"] == "openstack-9090"
    assert m["springSecurityService"] == "openstack-8080"
    for name in ("Vet", "Visit", "Specialty", "Owner", "OwnerView", "PetView"):
        assert m[name] == "cheapcloud-paas"
    for name in ("Login", "Logout", "Pet"):
        assert m[name] == "fastcloud-paas"
    assert dict(plan.assignments[0].config_params)["endpoint"] == "http://149.156.97.139:9090"


def _fixture(name):
    from conftest import fixture_path
    return fixture_path(name)


def test_decide_single_product():
    cat = Catalog()
    cat.register_product(make_product("only", tags=("jvm", "mysql", "grails", "spring-security")))
    m = parse_manifest("broker { governance.lifecycle = active domainClasses { all economy } "
                       "controllers { all bestEffort } }")
    app = ApplicationModel("a", (Component("D", "domainClasses", frozenset({"jvm"})),
                                 Component("C", "controllers", frozenset({"grails"}))))
    relaxed = GovernancePolicy(exclude_unmeasured_from_best_effort=False)
    plan = decide(m, app, cat.snapshot(), relaxed, Workload())
    assert {a.product_id for a in plan.assignments} == {"only"}


def test_decide_all_or_nothing():
    cat = Catalog()
    cat.register_product(make_product("jvm-only", tags=("jvm",)))
    m = parse_manifest("broker { governance.lifecycle = active services { all economy } }")
    app = ApplicationModel("a", (Component("ok", "services", frozenset({"jvm"})),
                                 Component("net", "services", frozenset({"dotnet"}))))
    with pytest.raises(NoFeasibleProduct) as info:
        decide(m, app, cat.snapshot(), POLICY, Workload())
    assert info.value.component_name == "net"


def test_decide_private_cloud_lowest_id():
    cat = Catalog()
    for pid in ("pin-b", "pin-a"):
        cat.register_product(make_product(pid, endpoint="http://h:1", provider="Acme", cloud_type="paas"))
    m = parse_manifest('broker { governance.lifecycle = active services { all privateCloud("http://h:1", paas, '
                       '"Acme") } }')
    app = ApplicationModel("a", (Component("s", "services", frozenset({"jvm"})),))
    assert decide(m, app, cat.snapshot(), POLICY, Workload()).product_of("s") == "pin-a"


def _expected_choice(c, opt, snap, policy, profile):
    """Independent per-component selection from the stated ranking definitions."""
    fx = snap.fx
    products = [p for p in snap.products.values() if p.status == "active"
                and set(c.required_tech) <= set(p.tech_tags)]
    if isinstance(opt, PrivateCloud):
        pins = [p for p in products if (p.endpoint, p.cloud_type, p.provider_id) ==
                (opt.endpoint, opt.cloud_type, opt.provider_id)]
        return min(p.product_id for p in pins) if pins else None
    category = "economy" if isinstance(opt, Economy) else "bestEffort"
    th = policy.thresholds(category)
    rows = []
    for p in products:
        latency = snap.latency.get(p.product_id)
        if not admissible(p, c, th, latency):
            continue
        if category == "bestEffort" and latency is None and policy.exclude_unmeasured_from_best_effort:
            continue
        perf, _, _ = scores_oracle(p, latency)
        rows.append(SimpleNamespace(product_id=p.product_id, monthly_cost=cost_oracle(p.pricing, profile.usage, fx),
                                    perf_score=perf))
    if not rows:
        return None
    if category == "economy":
        return min(rows, key=lambda r: (r.monthly_cost, -r.perf_score, r.product_id)).product_id
    return best_effort_oracle(rows, policy.w_cost, policy.w_perf)[0]


def test_decide_random_catalogs_bruteforce():
    rng = random.Random(4)
    planned = 0
    for trial in range(300):
        cat = random_catalog(rng, rng.randint(1, 50))
        app = random_app(rng)
        m = parse_manifest(
            "broker { governance.lifecycle = active "
            + " ".join(f"{k} {{ all {rng.choice(['economy', 'bestEffort'])} }}"
                       for k in ("dataSource", "domainClasses", "controllers", "views", "services"))
            + " }")
        w_cost = rng.choice(["0.2", "0.5", "0.8", "1"])
        policy = GovernancePolicy(
            w_cost=w_cost, w_perf=1 - Decimal(w_cost),
            min_qos={"economy": QosThresholds(rng.choice([0, 0.3]), 0, 0),
                     "bestEffort": QosThresholds(0, rng.choice([0, 0.25]), 0)})
        workload = Workload(random_workload_profile(rng),
                            {c.name: random_workload_profile(rng) for c in app.components if rng.random() < 0.5})
        snap = cat.snapshot()
        options = resolve_bindings(m, app)
        expected = {c.name: _expected_choice(c, options[c.name], snap, policy, workload.for_component(c.name))
                    for c in app.components}
        if any(v is None for v in expected.values()):
            with pytest.raises(NoFeasibleProduct):
                decide(m, app, snap, policy, workload)
            continue
        plan = decide(m, app, snap, policy, workload)
        planned += 1
        assert plan.assignment_map() == expected
        assert decide(m, app, snap, policy, workload) == plan  # determinism
    assert planned >= 50


# -- diff -----------------------------------------------------------------------------

def _plan(rev, mapping, app_id="a"):
    return DeploymentPlan(f"{app_id}-r{rev}", app_id, rev,
                          tuple(Assignment(n, p) for n, p in sorted(mapping.items())))


def test_diff_identical():
    p = _plan(1, {"x": "A", "y": "B"})
    d = diff(p, _plan(2, {"x": "A", "y": "B"}))
    assert d.moves == () and set(d.unchanged) == {"x", "y"}


def test_diff_one_move():
    d = diff(_plan(1, {"x": "A", "y": "B"}), _plan(2, {"x": "A", "y": "C"}))
    assert len(d.moves) == 1
    mv = d.moves[0]
    assert (mv.component_name, mv.from_product_id, mv.to_product_id) == ("y", "B", "C")


def test_diff_app_mismatch():
    with pytest.raises(AppMismatch):
        diff(_plan(1, {"x": "A"}), _plan(2, {"x": "A"}, app_id="b"))


@settings(max_examples=300, deadline=None)
@given(st.dictionaries(st.sampled_from("abcdefg"), st.sampled_from("PQRS"), min_size=1),
       st.dictionaries(st.sampled_from("abcdefg"), st.sampled_from("PQRS"), min_size=1))
def test_diff_property(old, new):
    d = diff(_plan(1, old), _plan(2, new))
    assert apply_diff(old, d) == new
    # per-component oracle
    for name in set(old) | set(new):
        moved = [m for m in d.moves if m.component_name == name]
        if old.get(name) == new.get(name):
            assert not moved and name in d.unchanged
        else:
            assert len(moved) == 1
            assert (moved[0].from_product_id, moved[0].to_product_id) == (old.get(name), new.get(name))


# -- should_redeploy --------------------------------------------------------------------

ECON = parse_manifest("broker { governance.lifecycle = active services { all economy } }")
ECON_PASSIVE = parse_manifest("broker { governance.lifecycle = passive services { all economy } }")
API_APP = ApplicationModel("shop", (Component("api", "services", frozenset({"jvm"})),))


def _three_products():
    cat = Catalog()
    cat.register_product(make_product("A", fixed="90"))
    cat.register_product(make_product("B", fixed="94"))
    cat.register_product(make_product("C", fixed="200"))
    return cat


def _initial(cat):
    plan = decide(ECON, API_APP, cat.snapshot(), POLICY, Workload())
    assert plan.product_of("api") == "A"
    return plan


def _price(cat, pid, fee):
    return cat.update_product(pid, {"pricing": {"fixedFeePerMonth": fee}})[0]


def test_redeploy_six_percent_savings():
    cat = _three_products()
    plan = _initial(cat)
    ev = _price(cat, "A", "100")  # B now saves (100-94)/100 = 6%
    d = should_redeploy(ev, plan, cat.snapshot(), POLICY, Workload(), None, manifest=ECON, app=API_APP, now=0)
    assert d.redeploy and d.savings_pct == Decimal(6)
    assert d.candidate.product_of("api") == "B"


def test_no_redeploy_four_percent_savings():
    cat = _three_products()
    plan = _initial(cat)
    _price(cat, "B", "96")
    ev = _price(cat, "A", "100")  # (100-96)/100 = 4%
    d = should_redeploy(ev, plan, cat.snapshot(), POLICY, Workload(), None, manifest=ECON, app=API_APP, now=0)
    assert not d.redeploy and d.savings_pct == Decimal(4)


def test_redeploy_deferred_inside_hysteresis():
    cat = _three_products()
    plan = _initial(cat)
    ev = _price(cat, "A", "100")
    d = should_redeploy(ev, plan, cat.snapshot(), POLICY, Workload(), 1000, manifest=ECON, app=API_APP, now=2000)
    assert not d.redeploy and d.deferred
    d = should_redeploy(ev, plan, cat.snapshot(), POLICY, Workload(), 1000, manifest=ECON, app=API_APP, now=4600)
    assert d.redeploy


def test_unassigned_price_change_no_consequence():
    cat = _three_products()
    plan = _initial(cat)
    ev = _price(cat, "C", "300")
    d = should_redeploy(ev, plan, cat.snapshot(), POLICY, Workload(), None, manifest=ECON, app=API_APP, now=0)
    assert not d.redeploy


def test_withdrawal_forced_despite_hysteresis():
    cat = _three_products()
    plan = _initial(cat)
    ev = cat.update_product("A", {"status": "withdrawn"})[0]
    assert isinstance(ev, ProductWithdrawn)
    d = should_redeploy(ev, plan, cat.snapshot(), POLICY, Workload(), 0, manifest=ECON, app=API_APP, now=1)
    assert d.redeploy and d.forced and d.candidate.product_of("api") == "B"


def test_passive_never_redeploys():
    cat = _three_products()
    plan = _initial(cat)
    ev = cat.update_product("A", {"status": "withdrawn"})[0]
    d = should_redeploy(ev, plan, cat.snapshot(), POLICY, Workload(), None, manifest=ECON_PASSIVE, app=API_APP,
                        now=0)
    assert not d.redeploy


def test_price_event_type():
    cat = _three_products()
    assert isinstance(_price(cat, "A", "91"), PriceChanged)


# -- explain --------------------------------------------------------------------------

def test_explain_economy_and_pin(figure3, petclinic_app, petclinic_catalog, petclinic_workload):
    snap = petclinic_catalog.snapshot()
    policy = GovernancePolicy.load(_fixture("policy.json"))
    plan = decide(figure3, petclinic_app, snap, policy, petclinic_workload)
    table = explain("Owner", plan, figure3, petclinic_app, snap, policy, petclinic_workload)
    ranked = [r for r in table["candidates"] if r["admitted"]]
    costs = [Decimal(r["monthlyCost"]) for r in ranked]
    assert costs == sorted(costs)
    assert table["winner"] == plan.product_of("Owner") == ranked[0]["productId"]
    pinned = explain("prodDb", plan, figure3, petclinic_app, snap, policy, petclinic_workload)
    assert pinned["reason"] == "privateCloud pin" and pinned["winner"] == "openstack-9090"
    be = explain("Login", plan, figure3, petclinic_app, snap, policy, petclinic_workload)
    scores = [r["score"] for r in be["candidates"] if r["admitted"]]
    assert scores == sorted(scores, reverse=True)


def test_snapshot_of_helper():
    snap = CatalogSnapshot.of([make_product("a", fixed="3")])
    assert snap.offer("a", WorkloadProfile({})).monthly_cost == Decimal(3)
