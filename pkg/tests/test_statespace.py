import numpy as np
import pytest

from conftest import rel_err
from rlcsens.netlist import parse_netlist
from rlcsens.statespace import (
    DERIVATIVE,
    CircuitValidationError,
    StateSpaceModel,
    assemble,
    build_stamps,
    build_state_space,
    direct_transfer,
    mna_ac_oracle,
)
from rlcsens.sensitivity import to_scattering

pF, nH = 1e-12, 1e-9
C0, C1, C2, C3, C4, C5, C6, C7 = np.array([3.47, 0.68, 2.28, 1.84, 42.08, 4.825, 12.7, 25.33]) * pF


def test_fig1_blocks(mnet_ss):
    ss = mnet_ss
    assert ss.n_states == 7 and ss.n_ports == 2
    assert ss.input_coupling == DERIVATIVE
    cap = np.array(
        [
            [C0 + C1 + C2, 0, -C0, 0],
            [0, C4 + C5 + C6, -C6, 0],
            [-C0, -C6, C0 + C3 + C6, 0],
            [0, 0, 0, C7],
        ]
    )
    np.testing.assert_allclose(ss.m[:4, :4], cap, rtol=1e-14)
    np.testing.assert_allclose(ss.m[4:, 4:], np.diag([50, 400, 150]) * nH, rtol=1e-14)
    assert not ss.m[:4, 4:].any() and not ss.m[4:, :4].any()
    a = np.array([[0, 1, 1], [-1, 0, 0], [1, 0, -1], [0, -1, 0]], dtype=float)
    np.testing.assert_array_equal(ss.n[:4, 4:], a)
    np.testing.assert_array_equal(ss.n[4:, :4], -a.T)
    np.testing.assert_allclose(ss.n[4:, 4:], np.diag([0, 0, 0.47]))
    assert not ss.n[:4, :4].any()
    b = -np.array([[C1, 0], [0, C5], [0, 0], [0, 0]])
    np.testing.assert_allclose(ss.b[:4], b)
    assert not ss.b[4:].any()
    np.testing.assert_array_equal(ss.d, -ss.b.T)
    np.testing.assert_allclose(ss.e, np.diag([C1, C5]))
    assert ss.state_labels == ("v(n1)", "v(n2)", "v(n3)", "v(n4)", "i(L6)", "i(L7)", "i(Lcoil)")


def test_fix_rc_matrices(fix_rc):
    ss = build_state_space(fix_rc)
    np.testing.assert_array_equal(ss.m, [[1.0]])
    np.testing.assert_array_equal(ss.n, [[1.0]])
    assert ss.b.shape == (1, 0)


def test_fix_rlc_matrices(fix_rlc):
    ss = build_state_space(fix_rlc)
    np.testing.assert_array_equal(ss.m, np.eye(2))
    np.testing.assert_allclose(ss.n, [[0, 1], [-1, 0.2]])


def test_structure_of_n(mnet_ss):
    ns = 4
    g = mnet_ss.n[:ns, :ns]
    assert np.allclose(g, g.T) and np.linalg.eigvalsh(g).min() >= 0
    r = mnet_ss.n[ns:, ns:]
    assert np.allclose(r, np.diag(np.diag(r))) and np.diag(r).min() >= 0


def test_invalid_circuit_raises():
    c = parse_netlist("C1 n1 0 1p\nL1 n1 n2 1n\nL2 n2 0 1n\n")
    with pytest.raises(CircuitValidationError):
        build_state_space(c)


def test_stamp_patterns(mnet, mnet_ss):
    stamps = {s.parameter: s for s in build_stamps(mnet, mnet_ss)}
    c0 = stamps["C0"]
    dm = c0.dm.toarray()
    expect = np.zeros((7, 7))
    expect[0, 0] = expect[2, 2] = 1
    expect[0, 2] = expect[2, 0] = -1
    np.testing.assert_array_equal(dm, expect)
    assert all(blk.count_nonzero() == 0 for blk in (c0.dn, c0.db, c0.dd, c0.de))

    c1 = stamps["C1"]
    assert c1.dm.toarray()[0, 0] == 1 and c1.dm.count_nonzero() == 1
    assert c1.db.toarray()[0, 0] == -1 and c1.db.count_nonzero() == 1
    assert c1.de.toarray()[0, 0] == 1
    np.testing.assert_array_equal(c1.dd.toarray(), -c1.db.toarray().T)

    rc = stamps["Rcoil"]
    dn = rc.dn.toarray()
    assert dn[6, 6] == 1 and np.count_nonzero(dn) == 1
    assert rc.dm.count_nonzero() == 0


def test_affine_rebuild(mnet, mnet_ss):
    """Perturbing an affine parameter moves the matrices exactly along its stamp."""
    for stamp, p in zip(build_stamps(mnet, mnet_ss), mnet.parameters):
        delta = 0.03 * p.value
        moved = assemble(mnet.with_parameter(p.id, p.value + delta))
        pred = mnet_ss.perturbed(stamp, delta)
        for blk in "mnbde":
            np.testing.assert_allclose(getattr(moved, blk), getattr(pred, blk), rtol=1e-12, atol=1e-25)


def test_resistor_stamp_is_a_derivative():
    c = parse_netlist("C1 n1 0 1\nR1 n1 0 2\n")
    stamp = build_stamps(c)[1]
    assert not stamp.affine
    h = 1e-6
    fd = (assemble(c.with_parameter("R1", 2 + h)).n - assemble(c.with_parameter("R1", 2 - h)).n) / (2 * h)
    np.testing.assert_allclose(stamp.dn.toarray(), fd, rtol=1e-8)


def test_fix_rc_standard_transfer():
    ss = StateSpaceModel.from_arrays(1, 1, 1, 1, 0)
    assert direct_transfer(ss, 0) == pytest.approx(1.0)
    assert direct_transfer(ss, 1.0)[0, 0] == pytest.approx(0.5)


def test_fig1_against_mna_at_300mhz(mnet, mnet_ss):
    f = 300e6
    assert rel_err(direct_transfer(mnet_ss, 2j * np.pi * f), mna_ac_oracle(mnet, f)) < 1e-9


def test_fig1_sweep_against_mna(mnet, mnet_ss):
    for f in np.geomspace(1e6, 1e9, 50):
        assert rel_err(direct_transfer(mnet_ss, 2j * np.pi * f), mna_ac_oracle(mnet, f)) < 1e-9


def test_reciprocity(mnet_ss):
    for f in (10e6, 120e6, 450e6):
        h = direct_transfer(mnet_ss, 2j * np.pi * f)
        assert abs(h[0, 1] - h[1, 0]) <= 1e-12 * np.abs(h).max()


def test_fix_rc_one_port_admittance():
    c = parse_netlist("Cp p n1 1\nC1 n1 0 1\nR1 n1 0 1\n.port p 1 p Z0=50\n")
    ss = build_state_space(c)
    for w in (0.1, 1.0, 7.0):
        z = 1 / (1j * w) + 1 / (1 + 1j * w)
        assert direct_transfer(ss, 1j * w)[0, 0] == pytest.approx(1 / z, rel=1e-12)
        assert mna_ac_oracle(c, w / (2 * np.pi))[0, 0] == pytest.approx(1 / z, rel=1e-12)


def test_dc_admittance_is_zero(mnet):
    assert not mna_ac_oracle(mnet, 0.0).any()


def test_nominal_match_at_channel1(mnet_ss):
    s = to_scattering(direct_transfer(mnet_ss, 2j * np.pi * 199.914877e6), 50.0)
    assert abs(s[0, 0]) < 0.3162
    assert abs(s[0, 0]) == pytest.approx(0.02124, abs=1e-4)
