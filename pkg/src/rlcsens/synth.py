"""
Random valid circuits for property tests and scaling benchmarks.
"""
from __future__ import annotations

import numpy as np

from .eigen import solve_pencil
from .netlist import GROUND, Circuit, Component, PortDecl, validate_circuit
from .statespace import assemble


def _value(rng: np.random.Generator, lo: float, hi: float) -> float:
    # log-uniform, rounded to 4 significant digits so netlists stay readable
    v = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
    return float(f"{v:.4g}")


def random_circuit(
    rng: np.random.Generator,
    min_states: int = 3,
    max_states: int = 8,
    max_ports: int = 2,
    min_separation: float = 1e-3,
    max_q: float = 1e3,
) -> Circuit:
    """A random capacitively-ported RLC network with well-separated poles.

    Every internal node gets a capacitive path to ground (so ``M`` is
    nonsingular) and a DC path to ground through an inductor or a
    resistor (so there is no floating DC mode).  Ports couple through
    single capacitors.  Draws are rejected until the state count is in
    range, the circuit validates and all eigenvalues are separated by at
    least ``min_separation`` relative to the largest, with no mode of
    quality factor above ``max_q``.
    """
    while True:
        n_nodes = int(rng.integers(2, 5))
        comps: list[Component] = []
        nodes = [f"n{i + 1}" for i in range(n_nodes)]
        n_l = 0
        for i, node in enumerate(nodes):
            other = GROUND if i == 0 or rng.random() < 0.5 else nodes[int(rng.integers(0, i))]
            comps.append(Component(f"C{len(comps)}", "capacitor", node, other, _value(rng, 1e-12, 20e-12)))
            dc_to = GROUND if i == 0 or rng.random() < 0.6 else nodes[int(rng.integers(0, i))]
            if rng.random() < 0.75:
                rs = _value(rng, 0.05, 2.0) if rng.random() < 0.7 else None
                comps.append(Component(f"L{n_l}", "inductor", node, dc_to, _value(rng, 5e-9, 300e-9), rs))
                n_l += 1
            else:
                comps.append(Component(f"Rd{len(comps)}", "resistor", node, dc_to, _value(rng, 50.0, 5e3)))
        if n_nodes > 1 and rng.random() < 0.5:
            a, b = rng.choice(n_nodes, 2, replace=False)
            comps.append(Component(f"C{len(comps)}", "capacitor", nodes[a], nodes[b], _value(rng, 0.5e-12, 5e-12)))
        n_ports = int(rng.integers(1, max_ports + 1))
        ports = []
        for p in range(n_ports):
            target = nodes[int(rng.integers(0, n_nodes))]
            comps.append(Component(f"Cp{p + 1}", "capacitor", f"p{p + 1}", target, _value(rng, 0.2e-12, 3e-12)))
            ports.append(PortDecl(f"p{p + 1}", p + 1, f"p{p + 1}", 50.0))
        c = Circuit("random", tuple(comps), tuple(ports), tuple(nodes))
        states = n_nodes + n_l
        if not (min_states <= states <= max_states) or not validate_circuit(c).ok:
            continue
        try:
            ss = assemble(c)
            es = solve_pencil(ss.m, ss.n)
        except np.linalg.LinAlgError:
            continue
        lam = es.lambdas
        gaps = np.abs(lam[:, None] - lam[None, :])
        np.fill_diagonal(gaps, np.inf)
        # quality factor |s| / (2 |Re s|) below max_q, written without division
        damped = np.all(np.abs(lam) <= max_q * 2 * np.abs(lam.real))
        if gaps.min() > min_separation * es.scale and damped:
            return c


def ladder_circuit(n_states: int, seed: int = 0) -> Circuit:
    """Chain of LC sections with ``n_states`` states, for timing scans."""
    rng = np.random.default_rng(seed)
    comps: list[Component] = []
    n_nodes = (n_states + 1) // 2
    n_l = n_states - n_nodes
    nodes = [f"n{i + 1}" for i in range(n_nodes)]
    for i, node in enumerate(nodes):
        comps.append(Component(f"C{i + 1}", "capacitor", node, GROUND, _value(rng, 1e-12, 10e-12)))
    for k in range(n_l):
        a = nodes[k]
        b = nodes[k + 1] if k + 1 < n_nodes else GROUND
        comps.append(Component(f"L{k + 1}", "inductor", a, b, _value(rng, 10e-9, 100e-9), _value(rng, 0.1, 1.0)))
    comps.append(Component("Cp1", "capacitor", "p1", nodes[0], 1e-12))
    return Circuit(f"ladder{n_states}", tuple(comps), (PortDecl("p1", 1, "p1", 50.0),), tuple(nodes))
