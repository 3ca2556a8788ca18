"""Deployment manifest DSL: application model, parser, serializer, binding resolution.

A manifest looks like::

    broker {
      governance.lifecycle = active
      dataSource {
        environments["production"].prodDb privateCloud("http://10.0.0.1:9090", paas, "OpenStack")
      }
      controllers {
        ["Login", "Logout"] bestEffort
        all economy
      }
    }

``#`` starts a comment that runs to the end of the line.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import ClassVar, Optional, Union
from urllib.parse import urlparse

from .errors import (
    DuplicateSelector,
    InvalidOptionArgs,
    ManifestSyntaxError,
    MissingLifecycle,
    UnboundComponent,
    UnknownComponent,
    ValidationError,
)

COMPONENT_KINDS = ("dataSource", "domainClasses", "controllers", "views", "services")
CLOUD_TYPES = ("iaas", "paas", "saas")
LIFECYCLES = ("active", "passive")
OPTION_NAMES = ("economy", "bestEffort", "privateCloud")


# ---------------------------------------------------------------------------
# Application model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Component:
    name: str
    kind: str
    required_tech: frozenset[str]
    environment: Optional[str] = None

    def __post_init__(self):
        if not self.name:
            raise ValidationError("name", "component name must be non-empty")
        if self.kind not in COMPONENT_KINDS:
            raise ValidationError("kind", f"unknown component kind {self.kind!r}")
        object.__setattr__(self, "required_tech", frozenset(self.required_tech))
        if not self.required_tech:
            raise ValidationError("requiredTech", f"component {self.name!r} needs at least one tech tag")

    @classmethod
    def from_dict(cls, d: dict) -> "Component":
        try:
            return cls(
                name=d["name"],
                kind=d["kind"],
                required_tech=frozenset(d.get("requiredTech", ())),
                environment=d.get("environment"),
            )
        except KeyError as exc:
            raise ValidationError(str(exc.args[0]), "missing field") from None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "requiredTech": sorted(self.required_tech),
            "environment": self.environment,
        }


@dataclass(frozen=True)
class ApplicationModel:
    """An application split into deployable components.

    Component names are unique across the whole application (not only within a
    kind) because deployment plans are keyed by component name.
    """

    app_id: str
    components: tuple[Component, ...]

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        seen = set()
        for c in self.components:
            if c.name in seen:
                raise ValidationError("components", f"duplicate component name {c.name!r}")
            seen.add(c.name)

    def component(self, name: str) -> Component:
        for c in self.components:
            if c.name == name:
                return c
        raise UnknownComponent(name)

    def of_kind(self, kind: str) -> list[Component]:
        return [c for c in self.components if c.kind == kind]

    @classmethod
    def from_dict(cls, d: dict) -> "ApplicationModel":
        if "appId" not in d:
            raise ValidationError("appId", "missing field")
        return cls(d["appId"], tuple(Component.from_dict(c) for c in d.get("components", ())))

    def to_dict(self) -> dict:
        return {"appId": self.app_id, "components": [c.to_dict() for c in self.components]}


# ---------------------------------------------------------------------------
# Options, selectors, bindings
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Economy:
    category: ClassVar[str] = "economy"


@dataclass(frozen=True)
class BestEffort:
    category: ClassVar[str] = "bestEffort"


@dataclass(frozen=True)
class PrivateCloud:
    endpoint: str
    cloud_type: str
    provider_id: str
    category: ClassVar[str] = "privateCloud"

    def __post_init__(self):
        if not is_absolute_url(self.endpoint):
            raise ValidationError("endpoint", f"not an absolute URL: {self.endpoint!r}")
        if self.cloud_type not in CLOUD_TYPES:
            raise ValidationError("cloudType", f"unknown cloud type {self.cloud_type!r}")
        if not self.provider_id:
            raise ValidationError("providerId", "must be non-empty")


DeploymentOption = Union[Economy, BestEffort, PrivateCloud]


def is_absolute_url(text: str) -> bool:
    try:
        parsed = urlparse(text)
    except ValueError:
        return False
    return bool(re.fullmatch(r"[A-Za-z][A-Za-z0-9+.-]*", parsed.scheme or "")) and bool(parsed.netloc)


def option_to_dict(opt: DeploymentOption) -> dict:
    if isinstance(opt, PrivateCloud):
        return {
            "option": opt.category,
            "endpoint": opt.endpoint,
            "cloudType": opt.cloud_type,
            "providerId": opt.provider_id,
        }
    return {"option": opt.category}


@dataclass(frozen=True)
class ComponentSelector:
    kind: str
    names: tuple[str, ...] = ()
    environment: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if self.kind not in COMPONENT_KINDS:
            raise ValidationError("kind", f"unknown component kind {self.kind!r}")
        if len(set(self.names)) != len(self.names):
            raise ValidationError("names", "duplicate names in selector")
        if self.environment is not None:
            if self.kind != "dataSource":
                raise ValidationError("environment", "environment qualifiers apply to dataSource only")
            if len(self.names) > 1:
                raise ValidationError("names", "an environment selector names at most one component")

    @property
    def specificity(self) -> int:
        # named > kind-wide with environment > kind-wide
        if self.names:
            return 2
        if self.environment is not None:
            return 1
        return 0

    @property
    def key(self) -> tuple:
        return (self.kind, frozenset(self.names), self.environment)

    def matches(self, c: Component) -> bool:
        if c.kind != self.kind:
            return False
        if self.environment is not None and c.environment != self.environment:
            return False
        return not self.names or c.name in self.names


@dataclass(frozen=True)
class ComponentBinding:
    selector: ComponentSelector
    option: DeploymentOption
    source_line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class DeploymentManifest:
    lifecycle: str
    bindings: tuple[ComponentBinding, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "bindings", tuple(self.bindings))
        if self.lifecycle not in LIFECYCLES:
            raise ValidationError("lifecycle", f"unknown lifecycle {self.lifecycle!r}")
        seen = set()
        for b in self.bindings:
            if b.selector.key in seen:
                raise DuplicateSelector(b.source_line, _selector_text(b.selector))
            seen.add(b.selector.key)

    @property
    def active(self) -> bool:
        return self.lifecycle == "active"


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Token:
    kind: str  # "ident", "string", "punct", "eof"
    text: str
    line: int
    column: int
    value: str = ""


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>\#[^\n]*)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[{}\[\](),.=])
    """,
    re.VERBOSE,
)

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        column = pos - line_start + 1
        if m is None:
            raise ManifestSyntaxError(line, column, "a token", text[pos])
        kind = m.lastgroup
        chunk = m.group()
        if kind == "string":
            try:
                value = json.loads(chunk)
            except json.JSONDecodeError:
                raise ManifestSyntaxError(line, column, "a valid string literal", chunk) from None
            tokens.append(_Token("string", chunk, line, column, value))
        elif kind in ("ident", "punct"):
            tokens.append(_Token(kind, chunk, line, column, chunk))
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            line_start = pos + chunk.rindex("\n") + 1
        pos = m.end()
    tokens.append(_Token("eof", "", line, pos - line_start + 1))
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        t = self.tokens[self.i]
        if t.kind != "eof":
            self.i += 1
        return t

    def fail(self, expected: str, tok: Optional[_Token] = None):
        t = tok or self.tok
        raise ManifestSyntaxError(t.line, t.column, expected, t.text or "end of input")

    def is_punct(self, ch: str) -> bool:
        return self.tok.kind == "punct" and self.tok.text == ch

    def is_ident(self, word: Optional[str] = None) -> bool:
        return self.tok.kind == "ident" and (word is None or self.tok.text == word)

    def punct(self, ch: str) -> _Token:
        if not self.is_punct(ch):
            self.fail(repr(ch))
        return self.advance()

    def keyword(self, word: str) -> _Token:
        if not self.is_ident(word):
            self.fail(repr(word))
        return self.advance()

    def parse(self) -> DeploymentManifest:
        self.keyword("broker")
        self.punct("{")
        if not self.is_ident("governance"):
            raise MissingLifecycle()
        lifecycle = self.lifecycle()
        bindings: list[ComponentBinding] = []
        seen: dict[tuple, int] = {}
        while not self.is_punct("}"):
            for b in self.kind_block():
                if b.selector.key in seen:
                    raise DuplicateSelector(b.source_line, _selector_text(b.selector))
                seen[b.selector.key] = b.source_line
                bindings.append(b)
        self.punct("}")
        if self.tok.kind != "eof":
            self.fail("end of input")
        return DeploymentManifest(lifecycle, tuple(bindings))

    def lifecycle(self) -> str:
        self.keyword("governance")
        self.punct(".")
        self.keyword("lifecycle")
        self.punct("=")
        t = self.tok
        if t.kind != "ident" or t.text not in LIFECYCLES:
            self.fail("'active' or 'passive'")
        self.advance()
        return t.text

    def kind_block(self) -> list[ComponentBinding]:
        t = self.tok
        if t.kind != "ident" or t.text not in COMPONENT_KINDS:
            self.fail("component kind (" + " | ".join(COMPONENT_KINDS) + ")")
        kind = self.advance().text
        self.punct("{")
        bindings = [self.binding(kind)]
        while not self.is_punct("}"):
            bindings.append(self.binding(kind))
        self.punct("}")
        return bindings

    def binding(self, kind: str) -> ComponentBinding:
        line = self.tok.line
        selector = self.selector(kind)
        option = self.option()
        return ComponentBinding(selector, option, line)

    def selector(self, kind: str) -> ComponentSelector:
        if self.is_ident("all"):
            self.advance()
            return ComponentSelector(kind)
        if self.is_punct("["):
            return ComponentSelector(kind, self.name_list())
        if self.is_ident("environments"):
            if kind != "dataSource":
                self.fail("'all' or a name list (environment selectors are dataSource-only)")
            self.advance()
            self.punct("[")
            env = self.tok
            if env.kind != "string":
                self.fail("environment name string")
            self.advance()
            self.punct("]")
            self.punct(".")
            target = self.tok
            if target.kind == "ident" and target.text == "all":
                self.advance()
                return ComponentSelector(kind, (), env.value)
            if target.kind not in ("ident", "string"):
                self.fail("component name")
            self.advance()
            return ComponentSelector(kind, (target.value,), env.value)
        self.fail("selector ('all', a name list" + (", or environments[...]" if kind == "dataSource" else "") + ")")

    def name_list(self) -> tuple[str, ...]:
        self.punct("[")
        names: list[str] = []
        while True:
            t = self.tok
            if t.kind not in ("string", "ident"):
                self.fail("component name")
            if t.value in names:
                self.fail("distinct component name", t)
            names.append(self.advance().value)
            if self.is_punct(","):
                self.advance()
                continue
            self.punct("]")
            return tuple(names)

    def option(self) -> DeploymentOption:
        t = self.tok
        if t.kind != "ident" or t.text not in OPTION_NAMES:
            self.fail("deployment option (economy | bestEffort | privateCloud)")
        self.advance()
        if t.text == "economy":
            return Economy()
        if t.text == "bestEffort":
            return BestEffort()
        return self.private_cloud_args(t.line)

    def private_cloud_args(self, line: int) -> PrivateCloud:
        if not self.is_punct("("):
            raise InvalidOptionArgs(line, "expected '(' endpoint, cloudType, providerId ')'")
        self.advance()
        args: list[_Token] = []
        while not self.is_punct(")"):
            t = self.tok
            if t.kind not in ("string", "ident"):
                raise InvalidOptionArgs(line, f"unexpected {t.text or 'end of input'!r} in argument list")
            args.append(self.advance())
            if self.is_punct(","):
                self.advance()
            elif not self.is_punct(")"):
                raise InvalidOptionArgs(line, "arguments must be separated by ','")
        self.advance()
        if len(args) != 3:
            raise InvalidOptionArgs(line, f"expected 3 arguments, got {len(args)}")
        endpoint, cloud_type, provider = args
        if endpoint.kind != "string" or not is_absolute_url(endpoint.value):
            raise InvalidOptionArgs(line, f"endpoint must be an absolute URL string, got {endpoint.text}")
        if cloud_type.kind != "ident" or cloud_type.text not in CLOUD_TYPES:
            raise InvalidOptionArgs(line, f"cloudType must be one of {', '.join(CLOUD_TYPES)}, got {cloud_type.text}")
        if provider.kind != "string" or not provider.value:
            raise InvalidOptionArgs(line, "providerId must be a non-empty string")
        return PrivateCloud(endpoint.value, cloud_type.text, provider.value)


def parse_manifest(text: str) -> DeploymentManifest:
    """Parse manifest source into a validated :class:`DeploymentManifest`."""
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# Serializer
# ---------------------------------------------------------------------------

def _quote(s: str) -> str:
    return json.dumps(s, ensure_ascii=False)


def _selector_text(sel: ComponentSelector) -> str:
    if sel.environment is not None:
        if not sel.names:
            target = "all"
        else:
            name = sel.names[0]
            target = name if _IDENT_RE.fullmatch(name) and name != "all" else _quote(name)
        return f"environments[{_quote(sel.environment)}].{target}"
    if sel.names:
        return "[" + ", ".join(_quote(n) for n in sel.names) + "]"
    return "all"


def _option_text(opt: DeploymentOption) -> str:
    if isinstance(opt, PrivateCloud):
        return f"privateCloud({_quote(opt.endpoint)}, {opt.cloud_type}, {_quote(opt.provider_id)})"
    return opt.category


def serialize_manifest(m: DeploymentManifest) -> str:
    """Render a manifest back to DSL text.

    Consecutive bindings of the same kind share a block, so source order is
    preserved and ``parse_manifest(serialize_manifest(m)) == m``.
    """
    lines = ["broker {", f"  governance.lifecycle = {m.lifecycle}"]
    current = None
    for b in m.bindings:
        if b.selector.kind != current:
            if current is not None:
                lines.append("  }")
            current = b.selector.kind
            lines.append(f"  {current} {{")
        lines.append(f"    {_selector_text(b.selector)} {_option_text(b.option)}")
    if current is not None:
        lines.append("  }")
    lines.append("}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Resolution
# ---------------------------------------------------------------------------

def match_binding(m: DeploymentManifest, c: Component) -> Optional[ComponentBinding]:
    """Most specific binding matching ``c``; earliest in source order on ties."""
    best = None
    best_spec = -1
    for b in m.bindings:
        if b.selector.matches(c) and b.selector.specificity > best_spec:
            best, best_spec = b, b.selector.specificity
    return best


def check_selector_names(m: DeploymentManifest, app: ApplicationModel) -> None:
    for b in m.bindings:
        known = {c.name for c in app.of_kind(b.selector.kind)}
        for name in b.selector.names:
            if name not in known:
                raise UnknownComponent(name)


def resolve_bindings(m: DeploymentManifest, app: ApplicationModel) -> dict[str, DeploymentOption]:
    """Map every application component to the option of its winning binding."""
    check_selector_names(m, app)
    resolved = {}
    for c in app.components:
        b = match_binding(m, c)
        if b is None:
            raise UnboundComponent(c.name)
        resolved[c.name] = b.option
    return resolved


def load_manifest(path) -> DeploymentManifest:
    with open(path, encoding="utf-8") as fh:
        return parse_manifest(fh.read())

