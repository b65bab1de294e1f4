"""
Text, JSON and CSV renderings of the analysis results.
"""
from __future__ import annotations

import csv
import io
import json

import numpy as np

from .eigen import EigenSolution, display_vectors
from .netlist import Circuit
from .sensitivity import ResponseSpec, SensitivityMatrix
from .statespace import StateSpaceModel
from .stats import YieldReport

# engineering display units per SI parameter unit
DISPLAY_UNITS = {"F": ("pF", 1e-12), "H": ("nH", 1e-9), "Ohm": ("Ohm", 1.0)}


def _cx(z: complex, digits: int = 1) -> str:
    re, im = round(z.real, digits), round(z.imag, digits)
    re = 0.0 if re == 0 else re
    im = 0.0 if im == 0 else im
    if im == 0:
        return f"{re:.{digits}f}"
    sign = "-" if im < 0 else "+"
    mag = f"j{abs(im):.{digits}f}"
    if re == 0:
        return f"-{mag}" if im < 0 else mag
    return f"{re:.{digits}f}{sign}{mag}"


def _table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    fmt = lambda r: "  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths)))
    line = "-" * (sum(widths) + 2 * (len(widths) - 1))
    return "\n".join([fmt(header), line, *map(fmt, rows)]) + "\n"


# -- modes ----------------------------------------------------------------------


def mode_columns(es: EigenSolution) -> list[int]:
    """One column per conjugate pair (upper member) or real eigenvalue."""
    return [group[0] for group in es.pairing]


def describe_eigenvalue(lam: complex, scale: float) -> str:
    if abs(lam) <= 1e-9 * max(scale, np.finfo(float).tiny):
        return "0 Hz (DC)"
    if lam.imag == 0:
        return f"{lam.real:.4g} rad/s (0 Hz, overdamped)"
    return f"{lam.imag / (2 * np.pi) / 1e6:.1f} MHz"


def modes_dict(es: EigenSolution, ss: StateSpaceModel, n_voltages: int) -> dict:
    vec = display_vectors(es, n_voltages)
    cols = mode_columns(es)
    modes = []
    for j in cols:
        lam = es.lambdas[j]
        modes.append(
            {
                "eigenvalue_rad_s": {"re": lam.real, "im": lam.imag},
                "frequency_hz": lam.imag / (2 * np.pi),
                "description": describe_eigenvalue(lam, es.scale),
                "vector": {
                    lab: {"re": v.real, "im": v.imag, "unit": "V" if i < n_voltages else "A"}
                    for i, (lab, v) in enumerate(zip(ss.state_labels, vec[:, j]))
                },
            }
        )
    return {"modes": modes}


def mode_table(es: EigenSolution, ss: StateSpaceModel, n_voltages: int) -> str:
    """Eigenvalue/eigenvector table: frequencies and rescaled right eigenvectors.

    Vectors are scaled so the largest node voltage is 1 V; inductor currents
    are then shown in mA.
    """
    vec = display_vectors(es, n_voltages)
    cols = mode_columns(es)
    header = ["", *[f"mode {k + 1}" for k in range(len(cols))]]
    rows = [["frequency", *[describe_eigenvalue(es.lambdas[j], es.scale) for j in cols]]]
    for i, lab in enumerate(ss.state_labels):
        unit, scale = ("V", 1.0) if i < n_voltages else ("mA", 1e3)
        rows.append([f"{lab} [{unit}]", *[_cx(vec[i, j] * scale) for j in cols]])
    return _table(header, rows)


# -- sensitivities ----------------------------------------------------------------


def display_sensitivity(sm: SensitivityMatrix, rs: ResponseSpec) -> tuple[list[str], list[str], np.ndarray]:
    """Columns ``df_r/dh`` in MHz per display unit and ``|dS_pp/dh|`` per display unit.

    Returns (column labels, parameter labels with units, values) with one
    row per parameter.
    """
    n = len(rs.resonances)
    scale = np.array([DISPLAY_UNITS.get(u, (u, 1.0))[1] for u in sm.col_units])
    labels, cols = [], []
    for r, res in enumerate(rs.resonances):
        labels.append(f"df({res.name})/dh [MHz/unit]")
        cols.append(sm.values[r] * scale / 1e6)
        if rs.with_scattering:
            re, im = sm.values[n + 2 * r], sm.values[n + 2 * r + 1]
            labels.append(f"|dS{res.port}{res.port}({res.name})/dh| [1/unit]")
            cols.append(np.hypot(re, im) * scale)
    params = [f"{pid} [{DISPLAY_UNITS.get(u, (u, 1.0))[0]}]" for pid, u in zip(sm.cols, sm.col_units)]
    return labels, params, np.column_stack(cols)


def sensitivity_table(sm: SensitivityMatrix, rs: ResponseSpec, fd_dev: np.ndarray | None = None) -> str:
    labels, params, vals = display_sensitivity(sm, rs)
    header = ["parameter", *labels]
    if fd_dev is not None:
        header.append("max FD deviation [rel]")
    rows = []
    for k, p in enumerate(params):
        row = [p, *[f"{v:.2f}" if abs(v) >= 0.005 or v == 0 else f"{v:.2e}" for v in vals[k]]]
        if fd_dev is not None:
            row.append(f"{fd_dev[k]:.2e}")
        rows.append(row)
    note = f"scattering rows linearized in '{sm.ds_mode}' mode\n"
    return _table(header, rows) + note


def sensitivity_csv(sm: SensitivityMatrix, rs: ResponseSpec) -> str:
    labels, params, vals = display_sensitivity(sm, rs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["parameter", *labels])
    for p, row in zip(params, vals):
        w.writerow([p, *[repr(float(v)) for v in row]])
    return buf.getvalue()


# -- yield ------------------------------------------------------------------------


def response_sigmas(sigma: np.ndarray, rs: ResponseSpec) -> dict:
    """RMS spread per resonance: frequency in Hz and |S| from Re/Im variances."""
    out = {}
    n = len(rs.resonances)
    for r, res in enumerate(rs.resonances):
        entry = {"f_hz": float(np.sqrt(sigma[r, r]))}
        if rs.with_scattering:
            i = n + 2 * r
            entry["s_mag"] = float(np.sqrt(sigma[i, i] + sigma[i + 1, i + 1]))
        out[res.name] = entry
    return out


def yield_table(report: YieldReport, sigmas: dict | None = None) -> str:
    lines = []
    if sigmas:
        rows = []
        for name, e in sigmas.items():
            rows.append([name, f"{e['f_hz'] / 1e6:.2f} MHz", f"{e.get('s_mag', float('nan')):.3f}"])
        lines.append(_table(["resonance", "sigma f", "rms |S|"], rows))
    rows = [[n, f"{100 * p:.1f} %", f"{100 * report.stderr(p):.2f} %"] for n, p in zip(report.spec_names, report.partial)]
    rows += [[f"group {g}", f"{100 * p:.1f} %", f"{100 * report.stderr(p):.2f} %"] for g, p in report.combined.items()]
    rows.append(["total", f"{100 * report.total:.1f} %", f"{100 * report.stderr(report.total):.2f} %"])
    lines.append(_table([f"yield ({report.label}, {report.trials} trials)", "value", "std err"], rows))
    if report.failures:
        lines.append(f"tracking failures: {report.failures} trials\n")
    return "\n".join(lines)


def yield_csv(report: YieldReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "name", "yield", "stderr"])
    for kind, name, p, se in report.csv_rows():
        w.writerow([kind, name, repr(p), repr(se)])
    w.writerow([])
    w.writerow(["region", "count"])
    for bits, count in report.to_dict()["regions"].items():
        w.writerow([bits, count])
    return buf.getvalue()


# -- matrices -----------------------------------------------------------------------


def matrices_dict(ss: StateSpaceModel) -> dict:
    return {
        "state_labels": list(ss.state_labels),
        "port_labels": list(ss.port_labels),
        "input_coupling": ss.input_coupling,
        **{k: getattr(ss, k).tolist() for k in ("m", "n", "b", "d", "e")},
    }


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, complex):
        return {"re": o.real, "im": o.imag}
    raise TypeError(f"cannot serialize {type(o).__name__}")


def n_voltage_states(c: Circuit) -> int:
    return len(c.nodes)
