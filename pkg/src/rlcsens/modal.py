"""
Modal tools built on a solved pencil: natural response, residue
expansion, eigenvector and residue derivatives, transmission zeros.

All formulas use the normalization of :mod:`rlcsens.eigen`,
``-Y^T M X = I`` and ``Y^T N X = Lambda``, under which

    (N + sM)^-1 = X (Lambda - sI)^-1 Y^T.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .eigen import EigenSolution, solve_pencil
from .statespace import STANDARD, ParameterStamp, StateSpaceModel

DEGENERATE_RTOL = 1e-6
ZERO_RTOL = 1e-8


class RepeatedEigenvalueError(ValueError):
    pass


class IllConditionedWarning(RuntimeWarning):
    pass


class MultipleZeroError(ValueError):
    pass


# -- time domain --------------------------------------------------------------


def natural_response(es: EigenSolution, m: np.ndarray, x0, t) -> np.ndarray:
    """Unforced response of ``M x' = -N x`` from ``x(0) = x0``.

    ``x(t) = -X exp(Lambda t) Y^T M x0``; the leading minus compensates the
    ``-Y^T M X = I`` normalization so that ``x(0) = x0``.

    Parameters
    ----------
    t : float or array_like
        Non-negative time(s).  For an array the result has one row per
        time sample.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("natural_response needs t >= 0")
    q = -(es.y.T @ (np.asarray(m) @ np.asarray(x0, dtype=float)))
    grow = np.exp(np.multiply.outer(np.atleast_1d(t_arr), es.lambdas))
    out = (grow * q) @ es.x.T
    out = out.real
    return out[0] if t_arr.ndim == 0 else out


# -- residues -----------------------------------------------------------------


@dataclass(frozen=True)
class ResidueExpansion:
    """``H_std(s) = sum_n K_n / (s - s_n) + E`` for the standard transfer.

    For derivative-coupled ports the admittance ``s (s H_core(s) + E)``
    (``H_core`` the sum without ``E``) expands as

        s (E + sum K_n) + sum s_n K_n + sum s_n^2 K_n / (s - s_n),

    exposed through :attr:`port_residues`, :attr:`constant_term` and
    :attr:`linear_term`.
    """

    poles: np.ndarray
    residues: np.ndarray  # (n_modes, P, P)
    direct: np.ndarray
    input_coupling: str = STANDARD

    def evaluate(self, s: complex) -> np.ndarray:
        core = np.tensordot(1.0 / (s - self.poles), self.residues, axes=1)
        if self.input_coupling == STANDARD:
            return core + self.direct
        return s * (s * core + self.direct)

    @property
    def port_residues(self) -> np.ndarray:
        if self.input_coupling == STANDARD:
            return self.residues
        return self.poles[:, None, None] ** 2 * self.residues

    @property
    def constant_term(self) -> np.ndarray:
        if self.input_coupling == STANDARD:
            return self.direct
        return np.tensordot(self.poles, self.residues, axes=1)

    @property
    def linear_term(self) -> np.ndarray:
        if self.input_coupling == STANDARD:
            return np.zeros_like(self.direct)
        return self.direct + self.residues.sum(axis=0)


def _require_simple(es: EigenSolution):
    if not es.simple:
        raise RepeatedEigenvalueError("repeated eigenvalues are not supported here")


def residues(es: EigenSolution, d, b, e=None, input_coupling: str = STANDARD) -> ResidueExpansion:
    """Residue matrices ``K_n = -(D x_n)(y_n^T B)``.

    The minus sign comes from writing the resolvent in ``1/(s - s_n)``
    form under the ``-Y^T M X = I`` normalization.
    """
    _require_simple(es)
    d = np.atleast_2d(np.asarray(d, dtype=float))
    b = np.asarray(b, dtype=float).reshape(es.n, -1)
    p = b.shape[1]
    e = np.zeros((p, p)) if e is None else np.asarray(e, dtype=float).reshape(p, p)
    dx = d @ es.x
    yb = es.y.T @ b
    k = -np.einsum("in,nj->nij", dx, yb)
    return ResidueExpansion(es.lambdas.copy(), k, e, input_coupling)


def model_residues(ss: StateSpaceModel, es: EigenSolution | None = None) -> ResidueExpansion:
    es = solve_pencil(ss.m, ss.n) if es is None else es
    return residues(es, ss.d, ss.b, ss.e, ss.input_coupling)


# -- eigenvector and residue derivatives ---------------------------------------


def _coupling(es: EigenSolution, stamp: ParameterStamp, mode: int) -> np.ndarray:
    """Vector ``Y^T (dN + s_n dM) x_n`` over all modes."""
    xn = es.x[:, mode]
    return es.y.T @ (stamp.dn @ xn + es.lambdas[mode] * (stamp.dm @ xn))


def _gaps(es: EigenSolution, mode: int) -> np.ndarray:
    gap = es.lambdas[mode] - es.lambdas
    others = np.arange(es.n) != mode
    tight = np.abs(gap[others]) < DEGENERATE_RTOL * max(es.scale, np.finfo(float).tiny)
    if np.any(tight):
        warnings.warn(
            f"mode {mode} is nearly degenerate; eigenvector derivative is ill-conditioned",
            IllConditionedWarning,
            stacklevel=3,
        )
    gap[mode] = 1.0
    return gap


def eigvec_derivs(es: EigenSolution, stamp: ParameterStamp, mode: int) -> np.ndarray:
    """Derivative of the right eigenvector ``x_n``.

    ``dx_n = 1/2 (y_n^T dM x_n) x_n + sum_{m != n} c_m x_m`` with
    ``c_m = y_m^T (dN + s_n dM) x_n / (s_n - s_m)``.  The normalization
    constraint is shared equally between ``x_n`` and ``y_n``.
    """
    _require_simple(es)
    c = _coupling(es, stamp, mode) / _gaps(es, mode)
    c[mode] = 0.5 * (es.y[:, mode] @ (stamp.dm @ es.x[:, mode]))
    return es.x @ c


def left_eigvec_derivs(es: EigenSolution, stamp: ParameterStamp, mode: int) -> np.ndarray:
    """Derivative of the left eigenvector ``y_n`` (same allocation as above)."""
    _require_simple(es)
    yn = es.y[:, mode]
    row = (stamp.dn.T @ yn + es.lambdas[mode] * (stamp.dm.T @ yn)) @ es.x
    c = row / _gaps(es, mode)
    c[mode] = 0.5 * (yn @ (stamp.dm @ es.x[:, mode]))
    return es.y @ c


def residue_derivs(es: EigenSolution, d, b, stamp: ParameterStamp, mode: int) -> np.ndarray:
    """``dK_n/dh`` for ``K_n = -(D x_n)(y_n^T B)``, including stamp terms on D and B.

    Invariant under rescaling of the eigenvector pair, so it can be checked
    against finite differences of :func:`residues` directly.
    """
    d = np.atleast_2d(np.asarray(d, dtype=float))
    b = np.asarray(b, dtype=float).reshape(es.n, -1)
    xn, yn = es.x[:, mode], es.y[:, mode]
    dx = eigvec_derivs(es, stamp, mode)
    dy = left_eigvec_derivs(es, stamp, mode)
    dd, db = stamp.dd.toarray(), stamp.db.toarray()
    left = d @ xn
    right = yn @ b
    d_left = dd @ xn + d @ dx
    d_right = dy @ b + yn @ db
    return -(np.outer(d_left, right) + np.outer(left, d_right))


def port_residue_derivs(es: EigenSolution, ss: StateSpaceModel, stamp: ParameterStamp, mode: int):
    """Derivative of the port-level residue (``s_n^2 K_n`` under derivative coupling)."""
    dk = residue_derivs(es, ss.d, ss.b, stamp, mode)
    if ss.input_coupling == STANDARD:
        return dk
    lam = es.lambdas[mode]
    k = residues(es, ss.d, ss.b, ss.e, ss.input_coupling).residues[mode]
    xn, yn = es.x[:, mode], es.y[:, mode]
    dlam = yn @ (stamp.dn @ xn) + lam * (yn @ (stamp.dm @ xn))
    return 2 * lam * dlam * k + lam * lam * dk


# -- zeros ----------------------------------------------------------------------


@dataclass(frozen=True)
class ZeroSet:
    """Finite zeros of one transfer entry ``H_ij`` (1-based ports)."""

    zeros: np.ndarray
    ports: tuple[int, int]
    residuals: np.ndarray
    scale: float
    discarded: np.ndarray

    def __len__(self) -> int:
        return len(self.zeros)


def _siso(ss: StateSpaceModel, ports):
    i, j = ports
    if not (1 <= i <= ss.n_ports and 1 <= j <= ss.n_ports):
        raise ValueError(f"port pair {ports} out of range for {ss.n_ports} ports")
    return ss.b[:, j - 1], ss.d[i - 1, :], float(ss.e[i - 1, j - 1])


def siso_transfer(ss: StateSpaceModel, ports, s: complex) -> complex:
    """``H_ij(s)`` by a direct solve, for either input coupling."""
    b, d, e = _siso(ss, ports)
    if ss.input_coupling != STANDARD and s == 0:
        return 0j  # the s factor wins even when N is singular (DC mode)
    core = d @ np.linalg.solve(ss.n + s * ss.m, b.astype(complex))
    if ss.input_coupling == STANDARD:
        return core + e
    return s * (s * core + e)


def _siso_parts(ss, ports, s):
    b, d, e = _siso(ss, ports)
    a = ss.n + s * ss.m
    zb = np.linalg.solve(a, b.astype(complex))
    dz = np.linalg.solve(a.T, d.astype(complex))
    return zb, dz, d, e


def siso_ds(ss: StateSpaceModel, ports, s: complex) -> complex:
    zb, dz, d, e = _siso_parts(ss, ports, s)
    dmb = -(dz @ (ss.m @ zb))
    if ss.input_coupling == STANDARD:
        return dmb
    return e + 2 * s * (d @ zb) + s * s * dmb


def siso_dh(ss: StateSpaceModel, ports, stamp: ParameterStamp, s: complex) -> complex:
    """Partial derivative of ``H_ij`` at fixed ``s`` (direct and adjoint solves)."""
    i, j = ports
    zb, dz, _, _ = _siso_parts(ss, ports, s)
    dd = stamp.dd.toarray()[i - 1]
    db = stamp.db.toarray()[:, j - 1]
    de = stamp.de.toarray()[i - 1, j - 1]
    core = dd @ zb + dz @ db - dz @ (stamp.dn @ zb + s * (stamp.dm @ zb))
    if ss.input_coupling == STANDARD:
        return core + de
    return s * de + s * s * core


def _reference_scale(ss: StateSpaceModel, ports, es: EigenSolution) -> float:
    mags = np.abs(es.lambdas)
    mags = mags[mags > 1e-9 * max(es.scale, np.finfo(float).tiny)]
    lo, hi = (mags.min() / 10, mags.max() * 10) if mags.size else (0.1, 10.0)
    vals = []
    for w in np.geomspace(lo, hi, 50):
        try:
            vals.append(abs(siso_transfer(ss, ports, 1j * w)))
        except np.linalg.LinAlgError:
            continue
    return max(vals) if vals else 1.0


def find_zeros(ss: StateSpaceModel, ports=(1, 1), polish: int = 3) -> ZeroSet:
    """Finite zeros of ``H_ij`` from a Rosenbrock pencil, Newton-polished.

    The pencil ``[[N, -b], [d, e]] v = s [[-M, 0], [0, 0]] v`` has the
    zeros of ``d (N+sM)^-1 b + e`` as finite eigenvalues.  Under
    derivative coupling ``s d (N+sM)^-1 b = d M^-1 b - d M^-1 N (N+sM)^-1 b``
    turns ``s (s H_core + e)`` into ``s`` times a standard transfer, so the
    same pencil is used with modified ``d``, ``e`` and a zero at the origin
    is added.

    Candidates that fail ``|H(z)| < 1e-8 * max|H(j w)|`` on a reference
    grid after polishing (typically decoupling zeros that cancel a pole)
    are returned in ``discarded``.
    """
    b, d, e = _siso(ss, ports)
    n = ss.n_states
    if ss.input_coupling == STANDARD:
        d_eff, e_eff, extra = d, e, []
    else:
        minv = np.linalg.inv(ss.m)
        d_eff = -(d @ minv @ ss.n)
        e_eff = e + d @ minv @ b
        extra = [0.0 + 0.0j]
    a = np.zeros((n + 1, n + 1))
    a[:n, :n] = ss.n
    a[:n, n] = -b
    a[n, :n] = d_eff
    a[n, n] = e_eff
    bm = np.zeros_like(a)
    bm[:n, :n] = -ss.m
    try:
        ab = sla.eigvals(a, bm, homogeneous_eigvals=True)
    except (sla.LinAlgError, ValueError) as exc:
        raise np.linalg.LinAlgError(f"defective zero pencil: {exc}") from exc
    alpha, beta = ab
    es = solve_pencil(ss.m, ss.n)
    big = 1e12 * max(es.scale, 1.0)
    finite = np.abs(beta) * big > np.abs(alpha)
    cands = list(alpha[finite] / beta[finite]) + extra

    scale = _reference_scale(ss, ports, es)
    kept, res, dropped = [], [], []
    origin = 1e-9 * max(es.scale, 1.0)
    for z in cands:
        z = complex(z)
        if extra and abs(z) <= origin:
            # s (s H_core + e) vanishes at the origin; keep it once
            if 0j not in kept:
                kept.append(0j)
                res.append(0.0)
            elif z != 0:
                dropped.append(z)
            continue
        for _ in range(polish):
            try:
                hz = siso_transfer(ss, ports, z)
                dz = siso_ds(ss, ports, z)
            except np.linalg.LinAlgError:
                break
            if dz == 0 or not np.isfinite(hz):
                break
            step = hz / dz
            if abs(step) > 1e-3 * max(abs(z), 1.0):
                break
            z -= step
        try:
            r = abs(siso_transfer(ss, ports, z))
        except np.linalg.LinAlgError:
            r = np.inf
        if r < ZERO_RTOL * scale:
            kept.append(z)
            res.append(r)
        else:
            dropped.append(z)
    pairs = sorted(zip(kept, res), key=lambda zr: (-abs(zr[0].imag), -zr[0].imag, zr[0].real))
    zeros = np.array([z for z, _ in pairs], dtype=complex)
    resid = np.array([r for _, r in pairs], dtype=float)
    return ZeroSet(zeros, tuple(ports), resid, scale, np.array(dropped, dtype=complex))


def zero_derivs(ss: StateSpaceModel, stamp: ParameterStamp, z: complex, ports=(1, 1)) -> complex:
    """``dz/dh = -[dH/dh] / [dH/ds]`` at a simple zero ``z`` of ``H_ij``."""
    slope = siso_ds(ss, ports, z)
    scale = max(np.max(np.abs(ss.d)), 1.0) * max(np.max(np.abs(ss.b)), 1.0)
    if abs(slope) < 1e-12 * scale:
        raise MultipleZeroError(f"zero at {z} is not simple (dH/ds ~ 0)")
    return -siso_dh(ss, ports, stamp, z) / slope
