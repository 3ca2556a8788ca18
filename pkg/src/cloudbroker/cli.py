"""``broker`` command line.

Exit codes: 0 success, 2 usage/IO, 3 validation, 4 infeasible, 5 scenario.
"""
from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass
from decimal import Decimal
from typing import Optional

import click
from filelock import FileLock

from .catalog import Catalog, CloudProduct, Workload
from .decision import DeploymentPlan, GovernancePolicy, decide, explain
from .errors import (
    BrokerError,
    DuplicateProduct,
    ManifestError,
    NoFeasibleProduct,
    ScenarioParseError,
    InitialPlanInfeasible,
    UnboundComponent,
    UnknownComponent,
    UnknownProduct,
    ValidationError,
)
from .manifest import ApplicationModel, load_manifest
from .simcloud import load_bundle

EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_INFEASIBLE = 4
EXIT_SCENARIO = 5

_VALIDATION_ERRORS = (ValidationError, DuplicateProduct, UnknownProduct, ManifestError, UnknownComponent,
                      UnboundComponent, json.JSONDecodeError, KeyError, TypeError)


@dataclass
class CliConfig:
    catalog_path: str
    policy_path: Optional[str]
    reference_currency: str
    log_path: Optional[str]

    def policy(self) -> GovernancePolicy:
        if self.policy_path is None:
            return GovernancePolicy()
        return GovernancePolicy.load(self.policy_path)

    def load_catalog(self, allow_missing: bool = False) -> Catalog:
        if allow_missing and not os.path.exists(self.catalog_path):
            return Catalog(reference_currency=self.reference_currency)
        return Catalog.load(self.catalog_path)

    def lock(self) -> FileLock:
        return FileLock(self.catalog_path + ".lock")


def _fail(code: int, message: str):
    click.echo(message, err=True)
    sys.exit(code)


def _load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _emit(obj) -> None:
    click.echo(json.dumps(obj, indent=2, sort_keys=True))


class _Guard:
    """Map broker exceptions to the stable exit codes."""

    def __init__(self, scenario: bool = False):
        self.scenario = scenario

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None or isinstance(exc, (SystemExit, click.exceptions.Exit, click.ClickException)):
            return False
        if isinstance(exc, NoFeasibleProduct):
            _fail(EXIT_INFEASIBLE, f"error: {exc} (component={exc.component_name}, option={exc.option})")
        if self.scenario and isinstance(exc, (ScenarioParseError, InitialPlanInfeasible, BrokerError,
                                              json.JSONDecodeError)):
            _fail(EXIT_SCENARIO, f"scenario error: {exc}")
        if isinstance(exc, OSError):
            _fail(EXIT_USAGE, f"error: {exc}")
        if isinstance(exc, _VALIDATION_ERRORS):
            _fail(EXIT_VALIDATION, f"validation error: {exc}")
        return False


@click.group()
@click.option("--catalog", "catalog_path", envvar="BROKER_CATALOG", default="catalog.json", show_default=True,
              help="Catalog JSON document.")
@click.option("--policy", "policy_path", envvar="BROKER_POLICY", default=None, help="Governance policy JSON.")
@click.option("--currency", "reference_currency", envvar="BROKER_CURRENCY", default="EUR", show_default=True,
              help="Reference currency for new catalogs.")
@click.option("--log", "log_path", envvar="BROKER_LOG", default=None, help="Default event log path.")
@click.pass_context
def main(ctx, catalog_path, policy_path, reference_currency, log_path):
    """Cross-cloud deployment governance broker."""
    if policy_path is not None and not os.path.isfile(policy_path):
        _fail(EXIT_USAGE, f"error: policy file not found: {policy_path}")
    catalog_dir = os.path.dirname(os.path.abspath(catalog_path))
    if not os.path.isdir(catalog_dir):
        _fail(EXIT_USAGE, f"error: catalog directory does not exist: {catalog_dir}")
    ctx.obj = CliConfig(catalog_path, policy_path, reference_currency, log_path)


# -- catalog ----------------------------------------------------------------------

@main.group()
def catalog():
    """Manage registered cloud products."""


def _product_records(doc) -> list[dict]:
    if isinstance(doc, dict) and "products" in doc:
        return list(doc["products"])
    if isinstance(doc, list):
        return doc
    return [doc]


@catalog.command("add")
@click.argument("record_file", type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
def catalog_add(cfg: CliConfig, record_file):
    """Register the product(s) in RECORD_FILE."""
    with _Guard(), cfg.lock():
        cat = cfg.load_catalog(allow_missing=True)
        added = []
        for raw in _product_records(_load_json(record_file)):
            product = CloudProduct.from_dict(raw)
            revision = cat.register_product(product)
            added.append({"productId": product.product_id, "revision": revision})
        cat.save(cfg.catalog_path)
    _emit({"added": added})


@catalog.command("list")
@click.pass_obj
def catalog_list(cfg: CliConfig):
    """One JSON line per product, in registry order."""
    with _Guard():
        cat = cfg.load_catalog(allow_missing=True)
    for p in cat.list_products():
        click.echo(json.dumps(p.to_dict(), sort_keys=True))


@catalog.command("update")
@click.argument("record_file", type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
def catalog_update(cfg: CliConfig, record_file):
    """Apply {"productId": ..., "patch": {...}} and print the implied events."""
    with _Guard(), cfg.lock():
        doc = _load_json(record_file)
        if not isinstance(doc, dict) or "productId" not in doc or not isinstance(doc.get("patch"), dict):
            raise ValidationError("update", 'expected {"productId": ..., "patch": {...}}')
        cat = cfg.load_catalog()
        events = cat.update_product(doc["productId"], doc["patch"])
        cat.save(cfg.catalog_path)
    _emit({"events": [e.payload() for e in events]})


# -- plan / explain ---------------------------------------------------------------

def _inputs(cfg: CliConfig, manifest, app, workload):
    m = load_manifest(manifest)
    a = ApplicationModel.from_dict(_load_json(app))
    w = Workload.from_dict(_load_json(workload)) if workload else Workload()
    return m, a, w


@main.command("plan")
@click.option("-m", "--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("-a", "--app", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("-w", "--workload", type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
def plan_cmd(cfg: CliConfig, manifest, app, workload):
    """Print the deployment plan without enforcing it."""
    with _Guard():
        m, a, w = _inputs(cfg, manifest, app, workload)
        cat = cfg.load_catalog(allow_missing=True)
        plan = decide(m, a, cat.snapshot(), cfg.policy(), w)
    click.echo(plan.to_json())


@main.command("explain")
@click.option("-p", "--plan", "plan_file", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("-c", "--component", required=True)
@click.option("-m", "--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("-a", "--app", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("-w", "--workload", type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
def explain_cmd(cfg: CliConfig, plan_file, component, manifest, app, workload):
    """Ranked candidate table for one component of a plan."""
    with _Guard():
        m, a, w = _inputs(cfg, manifest, app, workload)
        plan = DeploymentPlan.from_dict(_load_json(plan_file))
        if component not in {c.name for c in a.components}:
            _fail(EXIT_USAGE, f"error: unknown component {component!r}")
        table = explain(component, plan, m, a, cfg.load_catalog().snapshot(), cfg.policy(), w)
    _emit(table)


# -- simulate -----------------------------------------------------------------------

@main.command("simulate")
@click.option("-s", "--scenario", "scenario_file", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--ticks", type=click.IntRange(min=0), default=None, help="Override the number of ticks.")
@click.option("-o", "--out", "out_path", default=None, help="Event log output (JSON lines).")
@click.option("-m", "--manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("-a", "--app", type=click.Path(exists=True, dir_okay=False))
@click.option("-w", "--workload", type=click.Path(exists=True, dir_okay=False))
@click.option("--scenario-catalog", "catalog_file", type=click.Path(exists=True, dir_okay=False),
              help="Initial catalog (defaults to the scenario's own, then --catalog).")
@click.pass_obj
def simulate_cmd(cfg: CliConfig, scenario_file, seed, ticks, out_path, manifest, app, workload, catalog_file):
    """Run a scenario against simulated providers and write the event log."""
    out_path = out_path or cfg.log_path
    if out_path is None:
        _fail(EXIT_USAGE, "error: no log path (use -o or --log)")
    overrides = {"manifest": manifest, "app": app, "workload": workload, "catalog": catalog_file,
                 "policy": cfg.policy_path}
    with _Guard(scenario=True):
        probe = _load_json(scenario_file)
        if "catalog" not in probe.get("inputs", {}) and catalog_file is None:
            overrides["catalog"] = cfg.catalog_path
        bundle = load_bundle(scenario_file, overrides)
        result = bundle.run(seed=seed, ticks=ticks)
        result.log.dump(out_path)
        cost = result.broker.monthly_cost()
    _emit({
        "finalRevision": result.plan.revision,
        "monthlyCost": str(cost.quantize(Decimal("0.01"))),
        "referenceCurrency": bundle.catalog.reference_currency,
        "logRecords": len(result.log),
        "log": out_path,
    })


if __name__ == "__main__":
    main()
