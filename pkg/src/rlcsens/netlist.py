"""
Line-oriented netlist front end for lumped RLC networks.

Grammar (``#`` starts a comment, blank lines ignored)::

    .title  free text
    .nodes  n1 n2 ...                 optional explicit node order
    .port   NAME INDEX NODE Z0=VALUE
    Cxxx    NODE_A NODE_B VALUE
    Lxxx    NODE_A NODE_B VALUE [rs=VALUE]
    Rxxx    NODE_A NODE_B VALUE

Values are decimal numbers with an optional SI suffix (f p n u m k M G)
followed by an optional, ignored unit (F, H, Ohm, Hz).  Node ``0`` is
ground.
"""
from __future__ import annotations

import re
from collections import defaultdict, deque
from dataclasses import dataclass, field, replace
from typing import Iterable

GROUND = "0"

KINDS = {"R": "resistor", "L": "inductor", "C": "capacitor"}
UNITS = {"resistor": "Ohm", "inductor": "H", "capacitor": "F"}

_SUFFIX = {
    "f": 1e-15,
    "p": 1e-12,
    "n": 1e-9,
    "u": 1e-6,
    "m": 1e-3,
    "k": 1e3,
    "M": 1e6,
    "G": 1e9,
}

_VALUE_RE = re.compile(
    r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)([fpnumkMG]?)(F|H|Ohm|ohm|Hz|s)?$"
)
_ID_RE = re.compile(r"^[RLC][A-Za-z0-9_]*$")


class NetlistError(ValueError):
    """Raised for malformed netlist text; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


def parse_value(token: str) -> float:
    """Parse ``3.47pF``, ``150nH``, ``0.47``, ``1e-3`` ... into a float (SI)."""
    m = _VALUE_RE.match(token.strip())
    if not m:
        raise ValueError(f"cannot parse value {token!r}")
    number, suffix, _unit = m.groups()
    return float(number) * _SUFFIX.get(suffix, 1.0)


def format_value(value: float) -> str:
    # repr keeps round-trips exact
    return repr(float(value))


@dataclass(frozen=True)
class Component:
    id: str
    kind: str
    node_a: str
    node_b: str
    value: float
    series_resistance: float | None = None

    @property
    def nodes(self) -> tuple[str, str]:
        return (self.node_a, self.node_b)


@dataclass(frozen=True)
class PortDecl:
    name: str
    index: int
    port_node: str
    z0: float


@dataclass(frozen=True)
class Parameter:
    """One circuit parameter h_k: a component value or an inductor's series resistance."""

    id: str
    value: float
    unit: str
    component: str
    attribute: str  # "value" or "series_resistance"


@dataclass(frozen=True)
class Circuit:
    title: str
    components: tuple[Component, ...]
    ports: tuple[PortDecl, ...] = ()
    node_order: tuple[str, ...] = ()

    @property
    def parameters(self) -> list[Parameter]:
        params = []
        for comp in self.components:
            params.append(Parameter(comp.id, comp.value, UNITS[comp.kind], comp.id, "value"))
            if comp.series_resistance is not None:
                params.append(
                    Parameter(
                        series_resistance_id(comp.id),
                        comp.series_resistance,
                        "Ohm",
                        comp.id,
                        "series_resistance",
                    )
                )
        return params

    @property
    def parameter_ids(self) -> list[str]:
        return [p.id for p in self.parameters]

    @property
    def port_nodes(self) -> list[str]:
        return [p.port_node for p in self.ports]

    @property
    def nodes(self) -> list[str]:
        """Internal (state) nodes: not ground, not a port node.

        Ordered by the ``.nodes`` declaration when given, then by first
        appearance in the component list.
        """
        excluded = {GROUND, *self.port_nodes}
        seen: list[str] = [n for n in self.node_order if n not in excluded]
        for comp in self.components:
            for node in comp.nodes:
                if node not in excluded and node not in seen:
                    seen.append(node)
        return seen

    def component(self, cid: str) -> Component:
        for comp in self.components:
            if comp.id == cid:
                return comp
        raise KeyError(cid)

    def with_parameter(self, pid: str, value: float) -> "Circuit":
        """Return a copy with parameter ``pid`` set to ``value``."""
        return self.with_parameters({pid: value})

    def with_parameters(self, values: dict[str, float]) -> "Circuit":
        lookup = {p.id: p for p in self.parameters}
        unknown = set(values) - set(lookup)
        if unknown:
            raise KeyError(f"unknown parameter(s): {sorted(unknown)}")
        by_comp: dict[str, dict[str, float]] = defaultdict(dict)
        for pid, val in values.items():
            p = lookup[pid]
            by_comp[p.component][p.attribute] = float(val)
        comps = tuple(
            replace(
                c,
                value=by_comp[c.id].get("value", c.value),
                series_resistance=by_comp[c.id].get("series_resistance", c.series_resistance),
            )
            if c.id in by_comp
            else c
            for c in self.components
        )
        return replace(self, components=comps)

    def with_parameter_vector(self, h: Iterable[float]) -> "Circuit":
        return self.with_parameters(dict(zip(self.parameter_ids, h)))


def series_resistance_id(component_id: str) -> str:
    """``Lcoil`` -> ``Rcoil``."""
    return "R" + component_id[1:]


def parse_netlist(text: str) -> Circuit:
    """Parse netlist text into a :class:`Circuit`.

    Raises
    ------
    NetlistError
        On syntax errors, duplicate ids, non-positive values, unknown port
        nodes, or when no component is declared.
    """
    title = ""
    components: list[Component] = []
    ports: list[tuple[PortDecl, int]] = []
    node_order: list[str] = []
    ids: set[str] = set()

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        head = tokens[0]
        if head.startswith("."):
            directive = head.lower()
            if directive == ".title":
                title = line[len(head):].strip()
            elif directive == ".nodes":
                for node in tokens[1:]:
                    if node == GROUND:
                        raise NetlistError("ground cannot appear in .nodes", lineno)
                    if node in node_order:
                        raise NetlistError(f"node {node!r} repeated in .nodes", lineno)
                    node_order.append(node)
            elif directive == ".port":
                ports.append((_parse_port(tokens, lineno), lineno))
            else:
                raise NetlistError(f"unknown directive {head!r}", lineno)
            continue
        comp = _parse_component(tokens, lineno)
        for cid in (comp.id, *( [series_resistance_id(comp.id)] if comp.series_resistance is not None else [])):
            if cid in ids:
                raise NetlistError(f"duplicate id {cid!r}", lineno)
            ids.add(cid)
        components.append(comp)

    if not components:
        raise NetlistError("no components")

    known = {n for c in components for n in c.nodes}
    seen_names: set[str] = set()
    for port, lineno in ports:
        if port.port_node not in known:
            raise NetlistError(f"unknown node {port.port_node!r} in .port", lineno)
        if port.port_node == GROUND:
            raise NetlistError("port node cannot be ground", lineno)
        if port.name in seen_names:
            raise NetlistError(f"duplicate port name {port.name!r}", lineno)
        seen_names.add(port.name)
    indices = sorted(p.index for p, _ in ports)
    if indices != list(range(1, len(ports) + 1)):
        raise NetlistError(f"port indices must be 1..P without gaps, got {indices}")
    for node in node_order:
        if node not in known:
            raise NetlistError(f"unknown node {node!r} in .nodes")

    port_tuple = tuple(sorted((p for p, _ in ports), key=lambda p: p.index))
    return Circuit(title, tuple(components), port_tuple, tuple(node_order))


def _parse_component(tokens: list[str], lineno: int) -> Component:
    cid = tokens[0]
    if not _ID_RE.match(cid):
        raise NetlistError(f"component id {cid!r} must start with R, L or C", lineno)
    kind = KINDS[cid[0]]
    if len(tokens) not in (4, 5):
        raise NetlistError(f"expected '{cid} nodeA nodeB VALUE [rs=VALUE]'", lineno)
    _, node_a, node_b, value_tok, *rest = tokens
    if node_a == node_b:
        raise NetlistError(f"{cid}: both terminals on node {node_a!r}", lineno)
    value = _positive(value_tok, cid, lineno)
    rs = None
    if rest:
        key, _, val = rest[0].partition("=")
        if key.lower() != "rs" or not val:
            raise NetlistError(f"unexpected token {rest[0]!r}", lineno)
        if kind != "inductor":
            raise NetlistError(f"{cid}: rs= is only allowed on inductors", lineno)
        try:
            rs = parse_value(val)
        except ValueError as exc:
            raise NetlistError(str(exc), lineno) from None
        if rs < 0:
            raise NetlistError(f"{cid}: series resistance must be >= 0", lineno)
    return Component(cid, kind, node_a, node_b, value, rs)


def _parse_port(tokens: list[str], lineno: int) -> PortDecl:
    if len(tokens) != 5 or not tokens[4].upper().startswith("Z0="):
        raise NetlistError("expected '.port NAME INDEX NODE Z0=VALUE'", lineno)
    _, name, index_tok, node, z0_tok = tokens
    try:
        index = int(index_tok)
    except ValueError:
        raise NetlistError(f"port index {index_tok!r} is not an integer", lineno) from None
    z0 = _positive(z0_tok[3:], f"port {name}", lineno)
    return PortDecl(name, index, node, z0)


def _positive(token: str, what: str, lineno: int) -> float:
    try:
        value = parse_value(token)
    except ValueError as exc:
        raise NetlistError(str(exc), lineno) from None
    if not value > 0:
        raise NetlistError(f"{what}: value must be positive, got {token!r}", lineno)
    return value


def to_netlist(circuit: Circuit) -> str:
    """Serialize back to netlist text; ``parse_netlist(to_netlist(c)) == c``."""
    lines = []
    if circuit.title:
        lines.append(f".title {circuit.title}")
    if circuit.node_order:
        lines.append(".nodes " + " ".join(circuit.node_order))
    for comp in circuit.components:
        line = f"{comp.id} {comp.node_a} {comp.node_b} {format_value(comp.value)}"
        if comp.series_resistance is not None:
            line += f" rs={format_value(comp.series_resistance)}"
        lines.append(line)
    for port in circuit.ports:
        lines.append(f".port {port.name} {port.index} {port.port_node} Z0={format_value(port.z0)}")
    return "\n".join(lines) + "\n"


# -- validation ---------------------------------------------------------------

PORT_COUPLING = "port_coupling"            # (a)
NO_CAPACITIVE_PATH = "no_capacitive_path"  # (b)
DISCONNECTED = "disconnected"              # (c)


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    nodes: tuple[str, ...] = ()


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}


def validate_circuit(c: Circuit) -> ValidationReport:
    """Check the structural preconditions of the state-space form.

    Findings: (a) a port node attached through anything but capacitors,
    (b) an internal node without a capacitive path to ground or a port
    (singular capacitance block), (c) a node graph split into several
    pieces once ground is removed.
    """
    report = ValidationReport()
    port_nodes = set(c.port_nodes)

    for port in c.ports:
        bad = [
            comp.id
            for comp in c.components
            if port.port_node in comp.nodes and comp.kind != "capacitor"
        ]
        if bad:
            report.violations.append(
                Violation(
                    PORT_COUPLING,
                    f"port {port.name} node {port.port_node!r} attached through non-capacitors {bad}",
                    (port.port_node,),
                )
            )

    cap_adj: dict[str, set[str]] = defaultdict(set)
    for comp in c.components:
        if comp.kind == "capacitor":
            cap_adj[comp.node_a].add(comp.node_b)
            cap_adj[comp.node_b].add(comp.node_a)
    anchors = {GROUND} | port_nodes
    reachable = _reach(anchors, cap_adj)
    stranded = tuple(n for n in c.nodes if n not in reachable)
    if stranded:
        report.violations.append(
            Violation(
                NO_CAPACITIVE_PATH,
                f"nodes {list(stranded)} have no capacitive path to ground or a port",
                stranded,
            )
        )

    adj: dict[str, set[str]] = defaultdict(set)
    everything = set()
    for comp in c.components:
        everything.update(comp.nodes)
        if GROUND not in comp.nodes:
            adj[comp.node_a].add(comp.node_b)
            adj[comp.node_b].add(comp.node_a)
    everything.discard(GROUND)
    if everything:
        pieces = []
        left = set(everything)
        while left:
            start = min(left)
            piece = _reach({start}, adj)
            pieces.append(tuple(sorted(piece)))
            left -= piece
        if len(pieces) > 1:
            report.violations.append(
                Violation(
                    DISCONNECTED,
                    f"node graph has {len(pieces)} disconnected parts: {pieces}",
                    tuple(n for p in pieces[1:] for n in p),
                )
            )
    return report


def _reach(start: set[str], adj: dict[str, set[str]]) -> set[str]:
    seen = set(start)
    queue = deque(start)
    while queue:
        node = queue.popleft()
        for nxt in adj.get(node, ()):
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return seen
