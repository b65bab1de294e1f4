"""
First-order sensitivities of poles and on-resonance scattering parameters.

The response vector is

    Omega = [f_1 .. f_R, Re S_p1p1(j w_1), Im S_p1p1(j w_1), ...]

with f_r = Im(s_r) / 2 pi for the pole matched to resonance r and S
evaluated on the imaginary axis at that pole's natural frequency.  The
Jacobian follows the orientation ``dOmega = J dh`` everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .eigen import EigenSolution, resolvent_at, solve_pencil
from .netlist import Circuit
from .statespace import (
    STANDARD,
    ParameterStamp,
    StateSpaceModel,
    assemble,
    build_stamps,
    build_state_space,
    direct_transfer,
)

TWO_PI = 2 * np.pi
MATCH_WINDOW = 0.25

EXACT = "exact"
COUPLING_REF = "coupling_ref"
DS_MODES = (EXACT, COUPLING_REF)


class RepeatedEigenvalueError(ValueError):
    pass


class ResonanceMatchError(ValueError):
    pass


class TrackingError(ResonanceMatchError):
    """A tracked pole could not be followed unambiguously after a perturbation."""


# -- eigenvalue derivatives ---------------------------------------------------


def eig_derivs(es: EigenSolution, stamp: ParameterStamp, modes=None) -> np.ndarray:
    """ds_i/dh = y_i^T dN x_i + s_i y_i^T dM x_i for simple eigenvalues."""
    if not es.simple:
        raise RepeatedEigenvalueError(
            "repeated eigenvalues present; use repeated_eig_derivs per cluster"
        )
    idx = np.arange(es.n) if modes is None else np.asarray(modes)
    x = es.x[:, idx]
    y = es.y[:, idx]
    lam = es.lambdas[idx]
    dn_x = stamp.dn @ x
    dm_x = stamp.dm @ x
    return np.einsum("ij,ij->j", y, dn_x) + lam * np.einsum("ij,ij->j", y, dm_x)


def repeated_eig_derivs(es: EigenSolution, cluster, stamp: ParameterStamp) -> np.ndarray:
    """Derivatives of a P-fold eigenvalue: eigenvalues of Y_p^T (dN + s_p dM) X_p."""
    cluster = list(cluster)
    xp = es.x[:, cluster]
    yp = es.y[:, cluster]
    sp_ = es.lambdas[cluster].mean()
    small = yp.T @ (stamp.dn @ xp + sp_ * (stamp.dm @ xp))
    vals = np.linalg.eigvals(small) if len(cluster) > 1 else np.diag(small)
    return np.sort_complex(vals)


# -- transfer-function derivatives --------------------------------------------


def dH_ds_at(es: EigenSolution, ss: StateSpaceModel, s: complex) -> np.ndarray:
    _, bn, dn = resolvent_at(es, ss, s)
    dmb = -dn @ ss.m @ bn
    if ss.input_coupling == STANDARD:
        return dmb
    # H = s^2 D Z B + s E
    return ss.e + 2 * s * (ss.d @ bn) + s * s * dmb


def dH_ds(es: EigenSolution, ss: StateSpaceModel, omega_n: float) -> np.ndarray:
    """dH/ds on the imaginary axis at ``s = j omega_n``."""
    return dH_ds_at(es, ss, 1j * omega_n)


def dH_dh_at(es: EigenSolution, ss: StateSpaceModel, stamp: ParameterStamp, s: complex, sigma=None):
    """Partial dH/dh at fixed ``s``; ``sigma`` weights dM (default ``s``)."""
    sigma = s if sigma is None else sigma
    _, bn, dn = resolvent_at(es, ss, s)
    core = (
        stamp.dd @ bn
        + dn @ stamp.db
        - dn @ (stamp.dn @ bn + sigma * (stamp.dm @ bn))
    )
    de = stamp.de.toarray()
    if ss.input_coupling == STANDARD:
        return core + de
    return s * de + s * s * core


def dH_dh(es, ss, stamp, s_n: complex, omega_n: float, sigma: str = "axis") -> np.ndarray:
    """Partial derivative of H at ``s = j omega_n`` w.r.t. one parameter.

    ``sigma="axis"`` weights the dM term by ``j omega_n``, the consistent
    choice for a derivative taken at fixed ``s = j omega_n``.
    ``sigma="pole"`` uses the complex pole ``s_n`` instead; it is kept to
    demonstrate that it disagrees with finite differences.
    """
    if sigma == "axis":
        weight = 1j * omega_n
    elif sigma == "pole":
        weight = s_n
    else:
        raise ValueError(f"sigma must be 'axis' or 'pole', got {sigma!r}")
    return dH_dh_at(es, ss, stamp, 1j * omega_n, weight)


def on_res_deriv(dh: np.ndarray, ds: np.ndarray, dwn_dh: float) -> np.ndarray:
    """Total derivative of H(j w_n) following the moving resonance."""
    return dh + 1j * dwn_dh * ds


# -- scattering ---------------------------------------------------------------


def _root_z0(z0, p: int) -> np.ndarray:
    z0 = np.broadcast_to(np.asarray(z0, dtype=float), (p,))
    return np.sqrt(z0)


def to_scattering(h: np.ndarray, z0) -> np.ndarray:
    """S = (I - Z0 H)(I + Z0 H)^-1 (symmetric sqrt(Z0) scaling for unequal Z0)."""
    h = np.atleast_2d(h)
    r = _root_z0(z0, h.shape[0])
    zh = r[:, None] * h * r[None, :]
    eye = np.eye(h.shape[0])
    try:
        return (eye - zh) @ np.linalg.inv(eye + zh)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("I + Z0 H is singular") from None


def scattering_differential(s_mat: np.ndarray, dh: np.ndarray, z0) -> np.ndarray:
    """dS = -1/2 (I + S) Z0 dH (I + S)."""
    r = _root_z0(z0, s_mat.shape[0])
    eye = np.eye(s_mat.shape[0])
    return -0.5 * (eye + s_mat) @ (r[:, None] * dh * r[None, :]) @ (eye + s_mat)


def coupling_ref_differential(s_ref: np.ndarray, dh: np.ndarray, z0) -> np.ndarray:
    """+1/2 (I + S_ref) Z0 dH (I + S_ref) with S_ref the scattering matrix of
    ``s (D (N+sM)^-1 B + E)``, i.e. of the bare coupling capacitors.

    Not the derivative of S: it overstates |dS| by roughly 4/|1+S|^2 near
    a match.  Provided for comparison with tabulated reference values
    that were produced this way.
    """
    r = _root_z0(z0, s_ref.shape[0])
    eye = np.eye(s_ref.shape[0])
    return 0.5 * (eye + s_ref) @ (r[:, None] * dh * r[None, :]) @ (eye + s_ref)


def coupling_reference_transfer(es: EigenSolution, ss: StateSpaceModel, s: complex) -> np.ndarray:
    _, bn, _ = resolvent_at(es, ss, s)
    return s * (ss.d @ bn + ss.e)


# -- response specification ---------------------------------------------------


@dataclass(frozen=True)
class Resonance:
    name: str
    guess_hz: float
    port: int  # 1-based


@dataclass(frozen=True)
class ResponseSpec:
    resonances: tuple[Resonance, ...]
    z0: float | tuple[float, ...] = 50.0
    with_scattering: bool = True

    @classmethod
    def for_circuit(cls, c: Circuit, resonances, with_scattering: bool = True) -> "ResponseSpec":
        z0 = tuple(p.z0 for p in c.ports) or 50.0
        return cls(tuple(Resonance(*r) if not isinstance(r, Resonance) else r for r in resonances), z0, with_scattering)

    @property
    def names(self) -> list[str]:
        return [r.name for r in self.resonances]

    @property
    def observables(self) -> list[str]:
        labels = [f"f({r.name})" for r in self.resonances]
        if self.with_scattering:
            for r in self.resonances:
                labels += [f"Re S{r.port}{r.port}({r.name})", f"Im S{r.port}{r.port}({r.name})"]
        return labels

    @property
    def observable_units(self) -> list[str]:
        n = len(self.resonances)
        return ["Hz"] * n + (["1"] * (2 * n) if self.with_scattering else [])

    def index_of(self, kind: str, name: str) -> int | tuple[int, int]:
        """Row index of ``f`` (int) or of the (Re, Im) pair of ``s`` for a resonance."""
        r = self.names.index(name)
        n = len(self.resonances)
        if kind == "f":
            return r
        if kind == "s" and self.with_scattering:
            return (n + 2 * r, n + 2 * r + 1)
        raise KeyError(f"no {kind!r} observable for {name!r}")


def match_resonances(es: EigenSolution, rs: ResponseSpec) -> list[int]:
    """Mode index of the pole nearest each resonance guess.

    The nearest pole must lie within 25% of the guess and be strictly
    nearer than any other pole; two resonances may not share a pole.
    """
    upper = es.upper_modes()
    freqs = es.frequencies_hz()
    chosen = []
    for res in rs.resonances:
        if not upper:
            raise ResonanceMatchError(f"{res.name}: circuit has no oscillatory modes")
        dist = sorted((abs(freqs[i] - res.guess_hz), i) for i in upper)
        best, idx = dist[0]
        if best > MATCH_WINDOW * res.guess_hz:
            raise ResonanceMatchError(
                f"{res.name}: no pole within 25% of {res.guess_hz:g} Hz "
                f"(nearest {freqs[idx]:g} Hz)"
            )
        if len(dist) > 1 and dist[1][0] - best <= 1e-9 * res.guess_hz:
            raise ResonanceMatchError(f"{res.name}: ambiguous match near {res.guess_hz:g} Hz")
        if idx in chosen:
            raise ResonanceMatchError(f"{res.name}: pole already matched to another resonance")
        chosen.append(idx)
    return chosen


def track_resonances(es: EigenSolution, reference_hz) -> list[int]:
    """Follow poles by continuity: nearest upper pole to each reference frequency."""
    upper = es.upper_modes()
    freqs = es.frequencies_hz()
    chosen = []
    for ref in reference_hz:
        if not upper:
            raise TrackingError("no oscillatory modes left")
        idx = min(upper, key=lambda i: abs(freqs[i] - ref))
        if idx in chosen or abs(freqs[idx] - ref) > MATCH_WINDOW * abs(ref):
            raise TrackingError(f"lost track of the pole near {ref:g} Hz")
        chosen.append(idx)
    return chosen


# -- Jacobian -----------------------------------------------------------------


@dataclass
class SensitivityMatrix:
    rows: list[str]
    row_units: list[str]
    cols: list[str]
    col_units: list[str]
    values: np.ndarray
    nominal_omega: np.ndarray
    nominal_values: np.ndarray
    pole_derivatives: np.ndarray  # complex, resonances x parameters (rad/s per unit)
    poles: np.ndarray
    ds_mode: str = EXACT
    scattering_derivatives: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.values.shape

    def column(self, pid: str) -> np.ndarray:
        return self.values[:, self.cols.index(pid)]

    def row(self, label: str) -> np.ndarray:
        return self.values[self.rows.index(label)]

    def percent_frame(self, values: np.ndarray | None = None) -> np.ndarray:
        """Change of each observable per 1% change of each parameter.

        Frequencies are expressed in MHz, scattering entries are unitless.
        ``values`` defaults to this Jacobian; pass another array of the same
        shape (e.g. a finite-difference Jacobian) to map it the same way.
        """
        v = self.values if values is None else np.asarray(values)
        row_scale = np.array([1e-6 if u == "Hz" else 1.0 for u in self.row_units])
        return v * (0.01 * self.nominal_values)[None, :] * row_scale[:, None]

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "row_units": self.row_units,
            "cols": self.cols,
            "col_units": self.col_units,
            "values": self.values.tolist(),
            "nominal_omega": self.nominal_omega.tolist(),
            "nominal_parameters": self.nominal_values.tolist(),
            "ds_mode": self.ds_mode,
            "poles": {
                "re": self.poles.real.tolist(),
                "im": self.poles.imag.tolist(),
            },
            "pole_derivatives": {
                "re": self.pole_derivatives.real.tolist(),
                "im": self.pole_derivatives.imag.tolist(),
            },
        }


@dataclass
class _Nominal:
    ss: StateSpaceModel
    es: EigenSolution
    modes: list[int]
    omega: np.ndarray
    s_mats: list[np.ndarray]


def _evaluate(ss: StateSpaceModel, es: EigenSolution, modes, rs: ResponseSpec, direct: bool):
    """Response vector for already-matched modes."""
    lam = es.lambdas[modes]
    freqs = lam.imag / TWO_PI
    out = list(freqs)
    s_mats = []
    if rs.with_scattering:
        for res, lam_r in zip(rs.resonances, lam):
            s = 1j * lam_r.imag
            if direct:
                h = direct_transfer(ss, s)
            else:
                _, bn, _ = resolvent_at(es, ss, s)
                h = s * (s * (ss.d @ bn) + ss.e) if ss.input_coupling != STANDARD else ss.d @ bn + ss.e
            smat = to_scattering(h, rs.z0)
            s_mats.append(smat)
            p = res.port - 1
            out += [smat[p, p].real, smat[p, p].imag]
    return np.array(out), s_mats


def nominal_response(c: Circuit, rs: ResponseSpec):
    ss = build_state_space(c)
    es = solve_pencil(ss.m, ss.n)
    modes = match_resonances(es, rs)
    omega, s_mats = _evaluate(ss, es, modes, rs, direct=False)
    return _Nominal(ss, es, modes, omega, s_mats)


def evaluate_omega(c: Circuit, rs: ResponseSpec, reference_hz=None, validate: bool = True) -> np.ndarray:
    """Exact response vector of ``c`` by direct re-solve.

    With ``reference_hz`` the poles are tracked by continuity from those
    frequencies; otherwise they are matched to the resonance guesses.
    """
    ss = build_state_space(c) if validate else assemble(c)
    es = solve_pencil(ss.m, ss.n)
    modes = match_resonances(es, rs) if reference_hz is None else track_resonances(es, reference_hz)
    omega, _ = _evaluate(ss, es, modes, rs, direct=True)
    return omega


def assemble_sensitivity(c: Circuit, rs: ResponseSpec, ds_mode: str = EXACT) -> SensitivityMatrix:
    """Sensitivity Jacobian of the response vector w.r.t. all circuit parameters.

    Parameters
    ----------
    c : Circuit
    rs : ResponseSpec
        Resonances to follow and whether scattering rows are included.
    ds_mode : {"exact", "coupling_ref"}
        How the reflection rows are linearized.  ``"exact"`` is the true
        derivative of S; ``"coupling_ref"`` reproduces the tabulated
        reference convention (see :func:`coupling_ref_differential`).

    Returns
    -------
    SensitivityMatrix
        Rows ``[f_1..f_R, Re S, Im S, ...]`` in SI units per SI unit.
    """
    if ds_mode not in DS_MODES:
        raise ValueError(f"ds_mode must be one of {DS_MODES}")
    nom = nominal_response(c, rs)
    ss, es, modes = nom.ss, nom.es, nom.modes
    if not all(len(cl) == 1 for cl in es.clusters if set(cl) & set(modes)):
        raise RepeatedEigenvalueError("a matched resonance is a repeated eigenvalue")
    stamps = build_stamps(c, ss)
    params = c.parameters
    n_res = len(rs.resonances)
    lam = es.lambdas[modes]
    omegas = lam.imag

    pole_d = np.zeros((n_res, len(stamps)), dtype=complex)
    rows = np.zeros((len(nom.omega), len(stamps)))
    dS_all = np.zeros((n_res, len(stamps)), dtype=complex)

    s_sens = []
    if rs.with_scattering:
        for r, res in enumerate(rs.resonances):
            s_ax = 1j * omegas[r]
            ds = dH_ds_at(es, ss, s_ax)
            ref = None
            if ds_mode == COUPLING_REF:
                ref = to_scattering(coupling_reference_transfer(es, ss, s_ax), rs.z0)
            s_sens.append((ds, ref))

    for k, stamp in enumerate(stamps):
        dlam = _simple_derivs(es, stamp, modes)
        pole_d[:, k] = dlam
        rows[:n_res, k] = dlam.imag / TWO_PI
        if not rs.with_scattering:
            continue
        for r, res in enumerate(rs.resonances):
            ds, ref = s_sens[r]
            dh = dH_dh(es, ss, stamp, lam[r], omegas[r])
            dtot = on_res_deriv(dh, ds, dlam[r].imag)
            if ds_mode == EXACT:
                dS = scattering_differential(nom.s_mats[r], dtot, rs.z0)
            else:
                dS = coupling_ref_differential(ref, dtot, rs.z0)
            p = res.port - 1
            dS_all[r, k] = dS[p, p]
            rows[n_res + 2 * r, k] = dS[p, p].real
            rows[n_res + 2 * r + 1, k] = dS[p, p].imag

    return SensitivityMatrix(
        rows=rs.observables,
        row_units=rs.observable_units,
        cols=[p.id for p in params],
        col_units=[p.unit for p in params],
        values=rows,
        nominal_omega=nom.omega,
        nominal_values=np.array([p.value for p in params]),
        pole_derivatives=pole_d,
        poles=lam,
        ds_mode=ds_mode,
        scattering_derivatives={res.name: dS_all[r] for r, res in enumerate(rs.resonances)},
    )


def _simple_derivs(es: EigenSolution, stamp: ParameterStamp, modes) -> np.ndarray:
    idx = np.asarray(modes, dtype=int)
    x, y, lam = es.x[:, idx], es.y[:, idx], es.lambdas[idx]
    return np.einsum("ij,ij->j", y, stamp.dn @ x) + lam * np.einsum("ij,ij->j", y, stamp.dm @ x)


def fd_oracle(
    c: Circuit, rs: ResponseSpec, param_id: str, rel_step: float = 1e-3, extrapolate: bool = True
) -> np.ndarray:
    """Central-difference column of the Jacobian by full re-solve.

    Each side rebuilds the circuit with ``h_k (1 +/- rel_step)``, re-solves
    the eigenproblem, follows the poles by continuity from their nominal
    frequencies and recomputes the exact response vector.  With
    ``extrapolate`` the differences at ``rel_step`` and ``rel_step / 2``
    are combined by Richardson extrapolation, cancelling the O(step^2)
    truncation term.

    Small steps are limited by rounding rather than truncation: pole
    frequencies carry ~1e-16 relative noise, and near a high-Q resonance
    S(omega) is steep enough to turn that into ~1e-13 jitter in S.  The
    extrapolated 1e-3 default keeps both error sources far below the
    comparison tolerance.
    """
    if not 1e-8 <= rel_step <= 1e-3:
        raise ValueError("rel_step must lie in [1e-8, 1e-3]")
    base = evaluate_omega(c, rs)
    ref = base[: len(rs.resonances)]
    h0 = {p.id: p.value for p in c.parameters}[param_id]

    def central(step):
        delta = step * h0
        plus = evaluate_omega(c.with_parameter(param_id, h0 + delta), rs, ref, validate=False)
        minus = evaluate_omega(c.with_parameter(param_id, h0 - delta), rs, ref, validate=False)
        return (plus - minus) / (2 * delta)

    coarse = central(rel_step)
    if not extrapolate:
        return coarse
    fine = central(rel_step / 2)
    return (4 * fine - coarse) / 3


def fd_jacobian(c: Circuit, rs: ResponseSpec, rel_step: float = 1e-3, extrapolate: bool = True) -> np.ndarray:
    return np.column_stack([fd_oracle(c, rs, pid, rel_step, extrapolate) for pid in c.parameter_ids])


def compare_to_fd(sm: SensitivityMatrix, fd: np.ndarray, rtol: float = 1e-4, atol: float = 1e-9):
    """Per-entry deviation of an analytic Jacobian from its finite-difference twin.

    Both are mapped to :meth:`SensitivityMatrix.percent_frame` (MHz or unitless
    per 1% parameter change) and compared with tolerance
    ``max(rtol |fd|, atol)``.  Returns (ok, max_ratio, ratios).
    """
    a = sm.percent_frame()
    f = sm.percent_frame(fd)
    tol = np.maximum(rtol * np.abs(f), atol)
    ratios = np.abs(a - f) / tol
    return bool(np.all(ratios <= 1.0)), float(np.max(ratios)), ratios
