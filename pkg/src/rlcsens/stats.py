"""
Yield estimation from a first-order sensitivity model.

Parameter scatter ``h ~ N(h0, Sigma_h)`` is pushed through the Jacobian to
``Sigma_Omega = J Sigma_h J^T``; the response vector is then sampled
directly in Omega-space and every sample is checked against the
specifications.  Per-sample pass/fail patterns are accumulated as a
bitmask histogram (bit ``i`` set when spec ``i`` in declaration order
passes), from which partial, combined and total yields follow exactly.

Random numbers come from counter-based Philox streams keyed by
``(seed, chunk index)`` with a fixed chunk size, so results do not depend
on how many worker threads produce the chunks.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .netlist import Circuit
from .sensitivity import (
    ResonanceMatchError,
    ResponseSpec,
    SensitivityMatrix,
    evaluate_omega,
)
from .eigen import DefectiveSystemError, EigenvalueProximityError

CHUNK = 1 << 18
PSD_RTOL = 1e-12


# -- distributions ------------------------------------------------------------


@dataclass(frozen=True)
class ParameterDistribution:
    """Multivariate normal parameter scatter."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        mean = np.asarray(self.mean, dtype=float).ravel()
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean length {mean.size}")
        _check_psd(cov, "parameter covariance")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @classmethod
    def relative(cls, nominal, rel_sigma: float) -> "ParameterDistribution":
        """Uncorrelated scatter with ``sigma_k = rel_sigma * h_k``."""
        h = np.asarray(nominal, dtype=float)
        return cls(h, np.diag((rel_sigma * h) ** 2))

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))


def _check_psd(cov: np.ndarray, what: str) -> None:
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(np.abs(cov).max(), 1e-300)):
        raise ValueError(f"{what} is not symmetric")
    if cov.size:
        w = np.linalg.eigvalsh(cov)
        if w.min() < -PSD_RTOL * max(np.trace(cov), np.finfo(float).tiny):
            raise np.linalg.LinAlgError(f"{what} is not positive semidefinite (min eig {w.min():.3g})")


def propagate_covariance(s: SensitivityMatrix | np.ndarray, dist: ParameterDistribution) -> np.ndarray:
    """``Sigma_Omega = J Sigma_h J^T``, symmetrized exactly."""
    jac = s.values if isinstance(s, SensitivityMatrix) else np.atleast_2d(np.asarray(s, dtype=float))
    if jac.shape[1] != dist.mean.size:
        raise ValueError(f"Jacobian has {jac.shape[1]} columns, distribution has {dist.mean.size} parameters")
    out = jac @ dist.covariance @ jac.T
    return 0.5 * (out + out.T)


def local_density(jac, f_at_h: float) -> float:
    """Density of Omega at the image of h for a bijective linear map: ``f / |det J|``."""
    jac = np.atleast_2d(np.asarray(jac, dtype=float))
    if jac.shape[0] != jac.shape[1]:
        raise ValueError("local density needs a square Jacobian (the map must be bijective)")
    det = np.linalg.det(jac)
    if det == 0 or not np.isfinite(det) or np.linalg.cond(jac) > 1 / np.finfo(float).eps:
        raise np.linalg.LinAlgError("Jacobian is singular")
    return float(f_at_h / abs(det))


# -- sampling -----------------------------------------------------------------


def normal_factor(sigma) -> np.ndarray:
    """Factor ``L`` with ``L L^T = sigma``; tolerates rank deficiency."""
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    _check_psd(sigma, "response covariance")
    w, v = np.linalg.eigh(sigma)
    return v * np.sqrt(np.clip(w, 0.0, None))


def _chunk_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def _chunk_sizes(n: int, chunk: int) -> list[int]:
    full, rest = divmod(n, chunk)
    return [chunk] * full + ([rest] if rest else [])


def _draw(mean, factor, seed, index, size):
    z = _chunk_rng(seed, index).standard_normal((size, factor.shape[1]))
    return mean + z @ factor.T


def sample_omega(omega0, sigma, n: int, seed: int, workers: int = 1, chunk: int = CHUNK) -> Iterator[np.ndarray]:
    """Stream of multivariate normal samples in fixed-size chunks.

    Chunk ``i`` always comes from the Philox stream keyed by ``(seed, i)``,
    so the sequence is the same for any ``workers``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    mean = np.asarray(omega0, dtype=float).ravel()
    factor = normal_factor(sigma)
    sizes = _chunk_sizes(n, chunk)
    if workers <= 1:
        for i, size in enumerate(sizes):
            yield _draw(mean, factor, seed, i, size)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(lambda a: _draw(mean, factor, seed, *a), enumerate(sizes))


# -- specifications -----------------------------------------------------------


@dataclass(frozen=True)
class Spec:
    """One pass/fail criterion on the response vector.

    ``kind`` is ``"freq"`` (natural frequency of a resonance, Hz) or
    ``"smag"`` (magnitude of the reflection at a resonance).  Comparators:
    ``within`` (|x - center| < tol), ``below`` and ``above``.  Magnitude
    thresholds are given in dB and compared as ``10**(dB/20)``.
    """

    name: str
    kind: str
    resonance: str
    comparator: str
    value: float
    tol: float = 0.0

    def __post_init__(self):
        if self.kind not in ("freq", "smag"):
            raise ValueError(f"spec {self.name}: unknown observable kind {self.kind!r}")
        if self.comparator not in ("within", "below", "above"):
            raise ValueError(f"spec {self.name}: unknown comparator {self.comparator!r}")

    @property
    def threshold(self) -> float:
        return 10.0 ** (self.value / 20.0) if self.kind == "smag" else self.value

    def describe(self) -> str:
        what = f"f({self.resonance})" if self.kind == "freq" else f"|S({self.resonance})|"
        if self.comparator == "within":
            return f"|{what} - {self.value / 1e6:g} MHz| < {self.tol / 1e6:g} MHz"
        op = "<" if self.comparator == "below" else ">"
        unit = f"{self.value:g} dB" if self.kind == "smag" else f"{self.value / 1e6:g} MHz"
        return f"{what} {op} {unit}"

    def passes(self, x: np.ndarray) -> np.ndarray:
        if self.comparator == "within":
            return np.abs(x - self.value) < self.tol
        if self.comparator == "below":
            return x < self.threshold
        return x > self.threshold


@dataclass(frozen=True)
class SpecSet:
    specs: tuple[Spec, ...]
    groups: dict = field(default_factory=dict)

    def __post_init__(self):
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            raise ValueError("spec names must be unique")
        for g, members in self.groups.items():
            missing = set(members) - set(names)
            if missing:
                raise ValueError(f"group {g} refers to unknown specs {sorted(missing)}")

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.specs]

    def resolve(self, rs: ResponseSpec) -> list[tuple[int, ...]]:
        """Column indices of the response vector each spec reads."""
        out = []
        for s in self.specs:
            try:
                idx = rs.index_of("f" if s.kind == "freq" else "s", s.resonance)
            except (KeyError, ValueError):
                raise ValueError(f"spec {s.name}: no observable for resonance {s.resonance!r}") from None
            out.append((idx,) if isinstance(idx, int) else tuple(idx))
        return out

    def group_mask(self, group: str) -> int:
        return sum(1 << self.names.index(n) for n in self.groups[group])

    def bitmasks(self, samples: np.ndarray, columns) -> np.ndarray:
        samples = np.atleast_2d(samples)
        bits = np.zeros(samples.shape[0], dtype=np.int64)
        for i, (spec, cols) in enumerate(zip(self.specs, columns)):
            x = samples[:, cols[0]] if len(cols) == 1 else np.hypot(samples[:, cols[0]], samples[:, cols[1]])
            bits |= spec.passes(x).astype(np.int64) << i
        return bits


# -- reports ------------------------------------------------------------------


@dataclass
class YieldReport:
    trials: int
    seed: int | None
    spec_names: list[str]
    region_counts: np.ndarray
    groups: dict
    failures: int = 0
    label: str = "linearized"

    @property
    def n_specs(self) -> int:
        return len(self.spec_names)

    @property
    def evaluated(self) -> int:
        return int(self.region_counts.sum())

    def _rate(self, mask: int) -> float:
        if self.trials == 0:
            return 0.0
        hit = [b for b in range(len(self.region_counts)) if b & mask == mask]
        return float(self.region_counts[hit].sum()) / self.trials

    @property
    def partial(self) -> np.ndarray:
        return np.array([self._rate(1 << i) for i in range(self.n_specs)])

    @property
    def combined(self) -> dict:
        return {
            g: self._rate(sum(1 << self.spec_names.index(n) for n in members))
            for g, members in self.groups.items()
        }

    @property
    def total(self) -> float:
        return self._rate((1 << self.n_specs) - 1)

    def stderr(self, p: float) -> float:
        return math.sqrt(max(p * (1 - p), 0.0) / self.trials) if self.trials else 0.0

    @property
    def stderrs(self) -> dict:
        out = {n: self.stderr(p) for n, p in zip(self.spec_names, self.partial)}
        out.update({g: self.stderr(p) for g, p in self.combined.items()})
        out["total"] = self.stderr(self.total)
        return out

    def to_dict(self) -> dict:
        width = max(self.n_specs, 1)
        return {
            "kind": self.label,
            "trials": self.trials,
            "seed": self.seed,
            "specs": self.spec_names,
            "yields": {
                "partial": dict(zip(self.spec_names, self.partial.tolist())),
                "combined": self.combined,
                "total": self.total,
            },
            "stderr": self.stderrs,
            "regions": {format(b, f"0{width}b"): int(c) for b, c in enumerate(self.region_counts)},
            "bit_order": "bit i (from the right) is spec i in declaration order",
            "tracking_failures": self.failures,
        }

    def csv_rows(self) -> list[tuple[str, str, float, float]]:
        rows = [("partial", n, p, self.stderr(p)) for n, p in zip(self.spec_names, self.partial)]
        rows += [("combined", g, p, self.stderr(p)) for g, p in self.combined.items()]
        rows.append(("total", "all", self.total, self.stderr(self.total)))
        return rows


def evaluate_specs(samples, specs: SpecSet, rs: ResponseSpec, seed: int | None = None) -> YieldReport:
    """Bitmask histogram of spec outcomes over ``samples``.

    ``samples`` is an array (rows are response vectors) or an iterable of
    such arrays, e.g. the stream from :func:`sample_omega`.
    """
    columns = specs.resolve(rs)
    counts = np.zeros(1 << len(specs.specs), dtype=np.int64)
    trials = 0
    chunks = [samples] if isinstance(samples, np.ndarray) else samples
    for block in chunks:
        bits = specs.bitmasks(block, columns)
        counts += np.bincount(bits, minlength=counts.size)
        trials += bits.size
    return YieldReport(trials, seed, specs.names, counts, dict(specs.groups))


def linearized_yield(
    omega0, sigma, specs: SpecSet, rs: ResponseSpec, n: int, seed: int, workers: int = 1
) -> YieldReport:
    return evaluate_specs(sample_omega(omega0, sigma, n, seed, workers), specs, rs, seed)


def full_resolve_mc_oracle(
    c: Circuit,
    rs: ResponseSpec,
    dist: ParameterDistribution,
    specs: SpecSet,
    n: int,
    seed: int,
    workers: int = 1,
) -> YieldReport:
    """Brute-force yield: draw h, rebuild, re-solve and re-match every trial.

    Poles are followed from their nominal frequencies.  Trials whose
    resonances cannot be tracked (or whose model breaks down, e.g. a
    parameter drawn non-positive) are counted in ``failures`` and treated
    as failing every spec.
    """
    if n > 100_000:
        raise ValueError("the full-resolve oracle is limited to 1e5 trials")
    columns = specs.resolve(rs)
    nominal = evaluate_omega(c, rs)
    ref = nominal[: len(rs.resonances)]
    factor = normal_factor(dist.covariance)

    def run(args):
        index, size = args
        hs = _draw(dist.mean, factor, seed, index, size)
        bits = np.zeros(size, dtype=np.int64)
        bad = 0
        for t, h in enumerate(hs):
            try:
                if np.any(h <= 0):
                    raise ValueError("non-positive parameter")
                omega = evaluate_omega(c.with_parameter_vector(h), rs, ref, validate=False)
            except (ResonanceMatchError, EigenvalueProximityError, DefectiveSystemError,
                    np.linalg.LinAlgError, ValueError):
                bad += 1
                continue
            bits[t] = specs.bitmasks(omega[None, :], columns)[0]
        return np.bincount(bits, minlength=1 << len(specs.specs)), bad

    sizes = list(enumerate(_chunk_sizes(n, 4096)))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, sizes))
    else:
        parts = [run(a) for a in sizes]
    counts = np.sum([p[0] for p in parts], axis=0)
    failures = sum(p[1] for p in parts)
    # failed trials were filed under region 0 above; move them out of it
    counts[0] -= failures
    rep = YieldReport(n, seed, specs.names, counts, dict(specs.groups), failures, "full-resolve")
    return rep


# -- Venn regions ---------------------------------------------------------------


def _lens_area(r1: float, r2: float, d: float) -> float:
    if d >= r1 + r2:
        return 0.0
    if d <= abs(r1 - r2):
        return math.pi * min(r1, r2) ** 2
    a1 = r1 * r1 * math.acos((d * d + r1 * r1 - r2 * r2) / (2 * d * r1))
    a2 = r2 * r2 * math.acos((d * d + r2 * r2 - r1 * r1) / (2 * d * r2))
    tri = 0.5 * math.sqrt((-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2))
    return a1 + a2 - tri


def _distance_for_overlap(r1: float, r2: float, area: float) -> float:
    lo, hi = abs(r1 - r2), r1 + r2
    if area <= 0:
        return hi
    if area >= math.pi * min(r1, r2) ** 2:
        return lo
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if _lens_area(r1, r2, mid) > area:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def venn_layout(report: YieldReport) -> tuple[np.ndarray, np.ndarray]:
    """Circle centres and radii with areas proportional to spec pass counts.

    Pairwise distances are chosen so each lens matches the pairwise joint
    count; the centres are then placed by classical multidimensional
    scaling.  Higher-order overlaps are not fitted.
    """
    k = report.n_specs
    counts = report.partial * report.trials
    radii = np.sqrt(counts / math.pi)
    dist = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            joint = report._rate((1 << i) | (1 << j)) * report.trials
            dist[i, j] = dist[j, i] = _distance_for_overlap(radii[i], radii[j], joint)
    if k == 1:
        return np.zeros((1, 2)), radii
    cen = np.eye(k) - 1.0 / k
    gram = -0.5 * cen @ (dist**2) @ cen
    w, v = np.linalg.eigh(gram)
    top = np.argsort(w)[::-1][:2]
    pos = v[:, top] * np.sqrt(np.clip(w[top], 0, None))
    return pos, radii


def venn_regions(report: YieldReport) -> tuple[list[tuple[str, int]], str]:
    """All ``2**k`` region populations and an SVG sketch of the overlaps."""
    if report.n_specs > 6:
        raise ValueError("Venn output supports at most 6 specs")
    width = max(report.n_specs, 1)
    table = [(format(b, f"0{width}b"), int(c)) for b, c in enumerate(report.region_counts)]
    return table, _venn_svg(report)


_COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def _venn_svg(report: YieldReport, size: int = 480) -> str:
    pos, radii = venn_layout(report)
    pad = 40
    if radii.size and radii.max() > 0:
        lo = (pos - radii[:, None]).min(axis=0)
        hi = (pos + radii[:, None]).max(axis=0)
        scale = (size - 2 * pad) / max((hi - lo).max(), 1e-300)
    else:
        lo, scale = np.zeros(2), 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 40}" '
        f'viewBox="0 0 {size} {size + 40}">',
        f'<rect width="{size}" height="{size + 40}" fill="white"/>',
    ]
    for i, name in enumerate(report.spec_names):
        if radii[i] <= 0:
            continue
        cx, cy = (pos[i] - lo) * scale + pad
        r = radii[i] * scale
        col = _COLOURS[i % len(_COLOURS)]
        parts.append(
            f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{r:.2f}" fill="{col}" '
            f'fill-opacity="0.25" stroke="{col}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{cx:.2f}" y="{cy:.2f}" font-family="sans-serif" font-size="14" '
            f'text-anchor="middle">{name} {100 * report.partial[i]:.1f}%</text>'
        )
    parts.append(
        f'<text x="{size / 2:.0f}" y="{size + 25}" font-family="sans-serif" font-size="14" '
        f'text-anchor="middle">{report.trials} trials, total yield {100 * report.total:.1f}%</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
