import pytest
from hypothesis import given, settings, strategies as st

from rlcsens.netlist import (
    DISCONNECTED,
    NO_CAPACITIVE_PATH,
    PORT_COUPLING,
    Circuit,
    Component,
    NetlistError,
    PortDecl,
    parse_netlist,
    parse_value,
    to_netlist,
    validate_circuit,
)


@pytest.mark.parametrize(
    "token, value",
    [("3.47pF", 3.47e-12), ("150nH", 150e-9), ("0.47", 0.47), ("1k", 1e3), ("2.5e-3", 2.5e-3), (".5u", 0.5e-6), ("200MHz", 200e6)],
)
def test_parse_value(token, value):
    assert parse_value(token) == pytest.approx(value, rel=1e-15)


def test_capacitor_line():
    c = parse_netlist("C0 n1 n3 3.47pF\n")
    comp = c.components[0]
    assert (comp.id, comp.kind, set(comp.nodes)) == ("C0", "capacitor", {"n1", "n3"})
    assert comp.value == pytest.approx(3.47e-12)


def test_inductor_with_series_resistance():
    c = parse_netlist("Lcoil n1 n3 150nH rs=0.47\n")
    comp = c.components[0]
    assert comp.kind == "inductor"
    assert comp.value == pytest.approx(1.5e-7)
    assert comp.series_resistance == pytest.approx(0.47)
    assert c.parameter_ids == ["Lcoil", "Rcoil"]


def test_empty_input():
    with pytest.raises(NetlistError, match="no components"):
        parse_netlist("# only a comment\n\n")


@pytest.mark.parametrize(
    "text, line",
    [
        ("C1 n1 0 1p\nX1 n1 0 1\n", 2),
        ("C1 n1 0 1p\nC1 n2 0 1p\n", 2),
        ("C1 n1 0 -1p\n", 1),
        ("C1 n1 0 1p rs=1\n", 1),
        ("C1 n1 0 1p\n.port p 1 nowhere Z0=50\n", 2),
        ("C1 n1 0 1qF\n", 1),
        ("C1 n1 n1 1p\n", 1),
    ],
)
def test_errors_carry_line_numbers(text, line):
    with pytest.raises(NetlistError) as info:
        parse_netlist(text)
    assert info.value.line == line
    assert str(info.value).startswith(f"line {line}:")


def test_port_indices_must_be_contiguous():
    with pytest.raises(NetlistError, match="1..P"):
        parse_netlist("C1 p n 1p\nC2 n 0 1p\n.port a 2 p Z0=50\n")


def test_fig1_is_valid(mnet):
    assert validate_circuit(mnet).ok
    assert mnet.nodes == ["n1", "n2", "n3", "n4"]
    assert len(mnet.parameters) == 12


def test_node_touching_only_inductors():
    c = parse_netlist("C1 n1 0 1p\nL1 n1 n2 1n\nL2 n2 0 1n\n")
    assert NO_CAPACITIVE_PATH in validate_circuit(c).kinds()


def test_resistor_on_port_node():
    c = parse_netlist("C1 p n1 1p\nC2 n1 0 1p\nR1 p 0 50\n.port p 1 p Z0=50\n")
    assert PORT_COUPLING in validate_circuit(c).kinds()


def test_disconnected_islands():
    c = parse_netlist("C1 n1 0 1p\nC2 n2 0 1p\nC3 n2 n3 1p\n")
    rep = validate_circuit(c)
    assert DISCONNECTED in rep.kinds()
    assert not rep


def test_with_parameter_updates_series_resistance(mnet):
    c2 = mnet.with_parameter("Rcoil", 1.0)
    assert c2.component("Lcoil").series_resistance == 1.0
    assert mnet.component("Lcoil").series_resistance == pytest.approx(0.47)


def test_fig1_round_trip(mnet):
    assert parse_netlist(to_netlist(mnet)) == mnet


_values = st.floats(min_value=1e-15, max_value=1e6, allow_nan=False, allow_infinity=False)


@st.composite
def circuits(draw):
    n = draw(st.integers(1, 4))
    nodes = [f"n{i}" for i in range(n)]
    comps = []
    for i, node in enumerate(nodes):
        other = "0" if i == 0 else draw(st.sampled_from(["0", *nodes[:i]]))
        comps.append(Component(f"C{i}", "capacitor", node, other, draw(_values)))
        if draw(st.booleans()):
            rs = draw(st.one_of(st.none(), _values))
            comps.append(Component(f"L{i}", "inductor", node, other, draw(_values), rs))
    ports = ()
    if draw(st.booleans()):
        comps.append(Component("Cp", "capacitor", "pa", nodes[0], draw(_values)))
        ports = (PortDecl("pa", 1, "pa", draw(_values)),)
    return Circuit(draw(st.sampled_from(["", "t"])), tuple(comps), ports, tuple(nodes))


@settings(max_examples=60, deadline=None)
@given(circuits())
def test_round_trip_property(c):
    assert parse_netlist(to_netlist(c)) == c
