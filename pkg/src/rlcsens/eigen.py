"""
Generalized eigenproblem of the (M, N) pencil and modal evaluation.

Right eigenvectors X solve ``-N X = M X diag(lambdas)``.  Left
eigenvectors are obtained by inversion, ``Y = -(M X)^-T``, which gives
``-Y^T M X = I`` and ``Y^T N X = diag(lambdas)`` by construction and
avoids pairing eigenvalues across two separate decompositions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .statespace import STANDARD, SingularPencilError, StateSpaceModel

CLUSTER_RTOL = 1e-8
DEFECTIVE_COND = 1e12


class DefectiveSystemError(np.linalg.LinAlgError):
    pass


class EigenvalueProximityError(ValueError):
    """Requested evaluation point sits on (or too close to) an eigenvalue."""


@dataclass(frozen=True)
class EigenSolution:
    lambdas: np.ndarray
    x: np.ndarray
    y: np.ndarray
    pairing: tuple[tuple[int, ...], ...]
    clusters: tuple[tuple[int, ...], ...]

    @property
    def n(self) -> int:
        return len(self.lambdas)

    @property
    def scale(self) -> float:
        return float(np.max(np.abs(self.lambdas))) if self.n else 0.0

    @property
    def simple(self) -> bool:
        return all(len(c) == 1 for c in self.clusters)

    def frequencies_hz(self) -> np.ndarray:
        return self.lambdas.imag / (2 * np.pi)

    def upper_modes(self) -> list[int]:
        """Indices of eigenvalues with positive imaginary part."""
        return [i for i, lam in enumerate(self.lambdas) if lam.imag > 0]


def _sort_key(lam: complex, scale: float):
    tol = 1e-12 * scale
    im = lam.imag if abs(lam.imag) > tol else 0.0
    return (-abs(im), -np.sign(im), lam.real)


def _phase_fix(v: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(v)))
    return v * (abs(v[k]) / v[k])


def solve_pencil(m: np.ndarray, n: np.ndarray) -> EigenSolution:
    """Eigen-decompose the pencil ``-N x = s M x``.

    Eigenvalues are ordered by decreasing |Im|, the positive member of a
    conjugate pair first, real eigenvalues last by real part.  Conjugate
    partners get exactly conjugated eigenvectors.

    Raises
    ------
    DefectiveSystemError
        If the eigenvector matrix is (numerically) singular.
    """
    m = np.asarray(m, dtype=float)
    n = np.asarray(n, dtype=float)
    # symmetric diagonal scaling evens out pF / nH / Ohm magnitudes
    diag = np.abs(np.diag(m))
    t = np.where(diag > 0, 1.0 / np.sqrt(np.where(diag > 0, diag, 1.0)), 1.0)
    try:
        lam, vec = sla.eig(-(t[:, None] * n * t[None, :]), t[:, None] * m * t[None, :])
        vec = t[:, None] * vec
    except (sla.LinAlgError, ValueError) as exc:
        raise np.linalg.LinAlgError(f"eigen-decomposition failed: {exc}") from exc
    if not np.all(np.isfinite(lam)):
        raise SingularPencilError("pencil has infinite eigenvalues (M singular)")
    scale = float(np.max(np.abs(lam))) if lam.size else 0.0
    tol = 1e-12 * max(scale, np.finfo(float).tiny)

    # keep the upper member of each complex pair and build its partner
    cols, lams = [], []
    for i in sorted(range(len(lam)), key=lambda i: _sort_key(lam[i], scale)):
        li = lam[i]
        if li.imag > tol:
            v = _phase_fix(vec[:, i])
            cols += [v, v.conj()]
            lams += [li, li.conjugate()]
        elif abs(li.imag) <= tol:
            v = _phase_fix(vec[:, i])
            cols.append(v.real.astype(complex))
            lams.append(complex(li.real, 0.0))
    if len(lams) != len(lam):
        raise np.linalg.LinAlgError("eigenvalues are not closed under conjugation")
    lambdas = np.array(lams, dtype=complex)
    x = np.column_stack(cols) if cols else np.zeros((0, 0), complex)
    x = x / np.linalg.norm(x, axis=0)

    if np.linalg.cond(x) > DEFECTIVE_COND:
        raise DefectiveSystemError("defective system: eigenvectors are not independent")
    y = -np.linalg.inv(m @ x).T

    pairing = []
    i = 0
    while i < len(lambdas):
        if lambdas[i].imag > tol:
            pairing.append((i, i + 1))
            i += 2
        else:
            pairing.append((i,))
            i += 1
    return EigenSolution(lambdas, x, y, tuple(pairing), tuple(_clusters(lambdas)))


def _clusters(lambdas: np.ndarray) -> list[tuple[int, ...]]:
    scale = float(np.max(np.abs(lambdas))) if lambdas.size else 0.0
    tol = CLUSTER_RTOL * scale
    groups: list[list[int]] = []
    for i, lam in enumerate(lambdas):
        for g in groups:
            if abs(lambdas[g[0]] - lam) <= tol:
                g.append(i)
                break
        else:
            groups.append([i])
    return [tuple(g) for g in groups]


def display_vectors(es: EigenSolution, n_voltages: int) -> np.ndarray:
    """Right eigenvectors rescaled so the largest voltage entry is exactly 1.

    Only for presentation; the internal normalization is untouched.
    """
    out = es.x.copy()
    for j in range(es.n):
        v = out[:n_voltages, j]
        if n_voltages and np.any(v):
            k = int(np.argmax(np.abs(v)))
            out[:, j] = out[:, j] / v[k]
    return out


def modal_transfer(es: EigenSolution, d, b, e, s: complex, input_coupling: str = STANDARD):
    """Transfer matrix from the modal expansion ``D X (Lambda - sI)^-1 Y^T B + E``.

    Under derivative coupling the same resolvent gives the port admittance
    ``s (s D X (Lambda - sI)^-1 Y^T B + E)``.
    """
    gap = es.lambdas - s
    if np.any(np.abs(gap) <= 1e-14 * max(es.scale, abs(s), 1.0)):
        raise EigenvalueProximityError(f"s = {s} coincides with an eigenvalue")
    core = (d @ es.x) @ ((es.y.T @ b) / gap[:, None])
    if input_coupling == STANDARD:
        return core + e
    return s * (s * core + e)


def resolvent(es: EigenSolution, ss: StateSpaceModel, omega: float):
    """``Z = (N + j omega M)^-1`` from eigenvectors, with ``Z B`` and ``D Z``.

    Raises
    ------
    EigenvalueProximityError
        If ``j omega`` is within ``1e-8 * max|lambda|`` of an eigenvalue
        (an undamped resonance, or the DC mode at ``omega = 0``).
    """
    return resolvent_at(es, ss, 1j * omega)


def resolvent_at(es: EigenSolution, ss: StateSpaceModel, s: complex):
    gap = es.lambdas - s
    if np.any(np.abs(gap) <= 1e-8 * es.scale):
        raise EigenvalueProximityError(f"s = {s} is within tolerance of an eigenvalue")
    z = (es.x / gap) @ es.y.T
    return z, z @ ss.b, ss.d @ z
