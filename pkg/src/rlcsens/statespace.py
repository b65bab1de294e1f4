"""
State-space assembly from a parsed circuit.

The model is the pencil form

    M x' = -N x + B u'          v = D x' + E u'

with x = [internal node voltages, inductor currents].  Ports are nodes
coupled into the network only through capacitors; eliminating them
leaves the port voltages u as (differentiated) inputs and the port
currents v as outputs, so the port admittance is

    Y(s) = s * (s * D (N + sM)^-1 B + E).

B carries -C_p at the coupled node row and D = -B^T, which flips the
sign of the driven state relative to the physical node voltage but
leaves Y(s) unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .netlist import GROUND, Circuit, ValidationReport, validate_circuit

DERIVATIVE = "derivative"
STANDARD = "standard"


class CircuitValidationError(ValueError):
    def __init__(self, report: ValidationReport):
        self.report = report
        lines = "; ".join(v.message for v in report.violations)
        super().__init__(f"invalid circuit: {lines}")


class SingularPencilError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class StateSpaceModel:
    m: np.ndarray
    n: np.ndarray
    b: np.ndarray
    d: np.ndarray
    e: np.ndarray
    state_labels: tuple[str, ...] = ()
    port_labels: tuple[str, ...] = ()
    input_coupling: str = DERIVATIVE

    @property
    def n_states(self) -> int:
        return self.m.shape[0]

    @property
    def n_ports(self) -> int:
        return self.b.shape[1]

    @classmethod
    def from_arrays(cls, m, n, b=None, d=None, e=None, input_coupling=STANDARD):
        """Build a model straight from matrices (scalars are promoted to 1x1)."""
        m = np.atleast_2d(np.asarray(m, dtype=float))
        n = np.atleast_2d(np.asarray(n, dtype=float))
        ns = m.shape[0]
        b = np.zeros((ns, 0)) if b is None else np.asarray(b, dtype=float).reshape(ns, -1)
        p = b.shape[1]
        d = np.zeros((p, ns)) if d is None else np.asarray(d, dtype=float).reshape(p, ns)
        e = np.zeros((p, p)) if e is None else np.asarray(e, dtype=float).reshape(p, p)
        labels = tuple(f"x{i}" for i in range(ns))
        ports = tuple(f"port{i + 1}" for i in range(p))
        return cls(m, n, b, d, e, labels, ports, input_coupling)

    def perturbed(self, stamp: "ParameterStamp", delta: float) -> "StateSpaceModel":
        """``model + delta * stamp`` (exact for affine parameters)."""
        return StateSpaceModel(
            self.m + delta * stamp.dm.toarray(),
            self.n + delta * stamp.dn.toarray(),
            self.b + delta * stamp.db.toarray(),
            self.d + delta * stamp.dd.toarray(),
            self.e + delta * stamp.de.toarray(),
            self.state_labels,
            self.port_labels,
            self.input_coupling,
        )


@dataclass(frozen=True)
class ParameterStamp:
    """Partial derivatives of (M, N, B, D, E) with respect to one parameter."""

    parameter: str
    dm: sp.csr_array
    dn: sp.csr_array
    db: sp.csr_array
    dd: sp.csr_array
    de: sp.csr_array
    affine: bool = True

    @classmethod
    def zeros(cls, parameter: str, n_states: int, n_ports: int) -> "ParameterStamp":
        z = lambda r, c: sp.csr_array((r, c))  # noqa: E731
        return cls(
            parameter,
            z(n_states, n_states),
            z(n_states, n_states),
            z(n_states, n_ports),
            z(n_ports, n_states),
            z(n_ports, n_ports),
        )

    @classmethod
    def from_dense(cls, parameter, n_states, n_ports, **blocks) -> "ParameterStamp":
        base = cls.zeros(parameter, n_states, n_ports)
        kw = {k: sp.csr_array(np.asarray(v, dtype=float)) for k, v in blocks.items()}
        return ParameterStamp(
            parameter,
            kw.get("dm", base.dm),
            kw.get("dn", base.dn),
            kw.get("db", base.db),
            kw.get("dd", base.dd),
            kw.get("de", base.de),
        )

    def is_zero(self) -> bool:
        return all(blk.count_nonzero() == 0 for blk in (self.dm, self.dn, self.db, self.dd, self.de))


@dataclass
class _Layout:
    nodes: list[str]
    node_index: dict[str, int]
    branch_index: dict[str, int]
    port_index: dict[str, int]
    n_states: int = field(init=False)

    def __post_init__(self):
        self.n_states = len(self.nodes) + len(self.branch_index)


def _layout(c: Circuit) -> _Layout:
    nodes = c.nodes
    node_index = {name: i for i, name in enumerate(nodes)}
    inductors = [comp.id for comp in c.components if comp.kind == "inductor"]
    branch_index = {cid: len(nodes) + k for k, cid in enumerate(inductors)}
    port_index = {p.port_node: p.index - 1 for p in c.ports}
    return _Layout(nodes, node_index, branch_index, port_index)


def _entries(comp, lay: _Layout, attribute: str, value: float):
    """Sparse (block, row, col, coeff) contributions of one parameter,
    scaled by ``value`` (the element value, or 1 for a derivative stamp)."""
    out = []
    if attribute == "series_resistance":
        k = lay.branch_index[comp.id]
        return [("n", k, k, value)]
    if comp.kind == "inductor":
        k = lay.branch_index[comp.id]
        out.append(("m", k, k, value))
        return out
    ends = []
    for node in comp.nodes:
        if node == GROUND:
            ends.append(("g", None))
        elif node in lay.port_index:
            ends.append(("p", lay.port_index[node]))
        else:
            ends.append(("x", lay.node_index[node]))
    if comp.kind == "capacitor":
        # Laplacian stamp; port ends fold into B / E, ground ends vanish
        for i, (ki, ii) in enumerate(ends):
            for j, (kj, jj) in enumerate(ends):
                sign = 1.0 if i == j else -1.0
                coeff = sign * value
                if ki == "x" and kj == "x":
                    out.append(("m", ii, jj, coeff))
                elif ki == "x" and kj == "p":
                    out.append(("b", ii, jj, coeff))
                    out.append(("d", jj, ii, -coeff))
                elif ki == "p" and kj == "p":
                    out.append(("e", ii, jj, coeff))
        return out
    # resistor: conductance 1/R, so entries are -1/R^2 as derivatives
    for i, (ki, ii) in enumerate(ends):
        for j, (kj, jj) in enumerate(ends):
            if ki == "x" and kj == "x":
                out.append(("n", ii, jj, (1.0 if i == j else -1.0) * value))
    return out


def build_state_space(c: Circuit) -> StateSpaceModel:
    """Assemble M, N, B, D, E from a validated circuit.

    Raises
    ------
    CircuitValidationError
        If :func:`validate_circuit` reports any finding.
    SingularPencilError
        If M is numerically rank deficient.
    """
    report = validate_circuit(c)
    if not report.ok:
        raise CircuitValidationError(report)
    return assemble(c)


def assemble(c: Circuit) -> StateSpaceModel:
    """Matrix assembly without the topology checks (for re-solve loops on a
    circuit already validated with identical topology)."""
    lay = _layout(c)
    ns, npt = lay.n_states, len(c.ports)
    mats = {
        "m": np.zeros((ns, ns)),
        "n": np.zeros((ns, ns)),
        "b": np.zeros((ns, npt)),
        "d": np.zeros((npt, ns)),
        "e": np.zeros((npt, npt)),
    }
    for comp in c.components:
        if comp.kind == "inductor":
            k = lay.branch_index[comp.id]
            for node, sign in ((comp.node_a, 1.0), (comp.node_b, -1.0)):
                if node in lay.node_index:
                    i = lay.node_index[node]
                    mats["n"][i, k] += sign
                    mats["n"][k, i] -= sign
        val = comp.value if comp.kind != "resistor" else 1.0 / comp.value
        for blk, i, j, coeff in _entries(comp, lay, "value", val):
            mats[blk][i, j] += coeff
        if comp.series_resistance is not None:
            for blk, i, j, coeff in _entries(comp, lay, "series_resistance", comp.series_resistance):
                mats[blk][i, j] += coeff

    rank = np.linalg.matrix_rank(mats["m"])
    if rank < ns:
        raise SingularPencilError(f"M is rank deficient ({rank} < {ns})")

    labels = tuple([f"v({n})" for n in lay.nodes] + [f"i({cid})" for cid in lay.branch_index])
    ports = tuple(p.name for p in c.ports)
    return StateSpaceModel(
        mats["m"], mats["n"], mats["b"], mats["d"], mats["e"], labels, ports, DERIVATIVE
    )


def build_stamps(c: Circuit, ss: StateSpaceModel | None = None) -> list[ParameterStamp]:
    """One derivative stamp per circuit parameter, in parameter order."""
    lay = _layout(c)
    ns, npt = lay.n_states, len(c.ports)
    if ss is not None and ss.n_states != ns:
        raise ValueError("state-space model does not belong to this circuit")
    shapes = {"m": (ns, ns), "n": (ns, ns), "b": (ns, npt), "d": (npt, ns), "e": (npt, npt)}
    empty = {k: sp.csr_array(shape) for k, shape in shapes.items()}  # shared, never mutated
    stamps = []
    for param in c.parameters:
        comp = c.component(param.component)
        if param.attribute == "value" and comp.kind == "resistor":
            scale, affine = -1.0 / comp.value**2, False
        else:
            scale, affine = 1.0, True
        blocks: dict[str, tuple[list, list, list]] = {}
        for blk, i, j, coeff in _entries(comp, lay, param.attribute, scale):
            rows, cols, vals = blocks.setdefault(blk, ([], [], []))
            rows.append(i)
            cols.append(j)
            vals.append(coeff)
        mk = dict(empty)
        for k, (rows, cols, vals) in blocks.items():
            mk[k] = sp.csr_array((vals, (rows, cols)), shape=shapes[k])
        stamps.append(ParameterStamp(param.id, mk["m"], mk["n"], mk["b"], mk["d"], mk["e"], affine))
    return stamps


def direct_transfer(ss: StateSpaceModel, s: complex) -> np.ndarray:
    """Transfer matrix by a direct solve of (N + sM).

    Standard coupling: ``D (N+sM)^-1 B + E``.  Derivative coupling
    (capacitive ports): the port admittance ``s (s D (N+sM)^-1 B + E)``.
    """
    a = ss.n + s * ss.m
    try:
        zb = np.linalg.solve(a, ss.b.astype(complex))
    except np.linalg.LinAlgError:
        raise SingularPencilError(f"N + sM is singular at s = {s}") from None
    if not np.all(np.isfinite(zb)):
        raise SingularPencilError(f"N + sM is singular at s = {s}")
    if ss.input_coupling == STANDARD:
        return ss.d @ zb + ss.e
    return s * (s * (ss.d @ zb) + ss.e)


def mna_ac_oracle(c: Circuit, f: float) -> np.ndarray:
    """Port admittance matrix from the full frequency-domain MNA system.

    Port nodes are kept as unknowns and driven by ideal voltage sources,
    one port at a time with the others shorted; no state-space reduction
    is involved.
    """
    if f < 0:
        raise ValueError("frequency must be >= 0")
    npt = len(c.ports)
    if f == 0:
        # capacitors are open at DC and every port is capacitively coupled
        return np.zeros((npt, npt), dtype=complex)
    w = 2 * np.pi * f
    nodes = sorted({n for comp in c.components for n in comp.nodes} - {GROUND})
    ni = {n: i for i, n in enumerate(nodes)}
    inductors = [comp for comp in c.components if comp.kind == "inductor"]
    nn, nl = len(nodes), len(inductors)
    size = nn + nl + npt
    a = np.zeros((size, size), dtype=complex)

    def admit(n1, n2, y):
        for p, q, sgn in ((n1, n1, 1), (n2, n2, 1), (n1, n2, -1), (n2, n1, -1)):
            if p != GROUND and q != GROUND:
                a[ni[p], ni[q]] += sgn * y

    for comp in c.components:
        if comp.kind == "capacitor":
            admit(comp.node_a, comp.node_b, 1j * w * comp.value)
        elif comp.kind == "resistor":
            admit(comp.node_a, comp.node_b, 1.0 / comp.value)
    for k, comp in enumerate(inductors):
        row = nn + k
        for node, sgn in ((comp.node_a, 1.0), (comp.node_b, -1.0)):
            if node != GROUND:
                a[ni[node], row] += sgn
                a[row, ni[node]] += sgn
        a[row, row] = -((comp.series_resistance or 0.0) + 1j * w * comp.value)
    rhs = np.zeros((size, npt), dtype=complex)
    for port in c.ports:
        row = nn + nl + port.index - 1
        a[ni[port.port_node], row] = 1.0
        a[row, ni[port.port_node]] = 1.0
        rhs[row, port.index - 1] = 1.0
    try:
        sol = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError:
        raise SingularPencilError(f"MNA matrix singular at f = {f} Hz") from None
    # source branch current flows out of the node into the source
    return -sol[nn + nl:, :]
