"""
Command-line front end.

Exit codes: 0 success, 1 a ``verify`` check failed, 2 netlist/config
parse error (or missing file), 3 circuit validation error, 4 numerical
failure, 5 resonance-match failure.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import report
from .config import AnalysisConfig, ConfigError, data_path, load_config
from .eigen import solve_pencil
from .modal import find_zeros, model_residues, natural_response
from .netlist import NetlistError, parse_netlist
from .sensitivity import (
    EXACT,
    ResonanceMatchError,
    assemble_sensitivity,
    compare_to_fd,
    fd_jacobian,
)
from .statespace import CircuitValidationError, build_state_space, direct_transfer, mna_ac_oracle
from .stats import full_resolve_mc_oracle, linearized_yield, propagate_covariance, venn_regions
from .synth import ladder_circuit

EXIT_OK, EXIT_CHECK, EXIT_PARSE, EXIT_INVALID, EXIT_NUMERIC, EXIT_MATCH = range(6)


class _Ctx:
    """Resolved inputs shared by the subcommands."""

    def __init__(self, args):
        self.args = args
        if args.config:
            self.cfg = load_config(args.config)
        else:
            self.cfg = AnalysisConfig()
        if args.netlist:
            self.cfg.netlist = Path(args.netlist)
        if self.cfg.netlist is None:
            raise ConfigError("give --netlist or a --config with a .netlist line")
        self.cfg = self.cfg.with_overrides(
            trials=getattr(args, "trials", None),
            seed=getattr(args, "seed", None),
            ds_mode=getattr(args, "ds_mode", None),
        )
        self.cfg.validate()
        self.circuit = self.cfg.circuit()
        self.out = Path(args.out) if args.out else None
        if self.out:
            self.out.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str) -> None:
        if self.out:
            (self.out / name).write_text(text, encoding="utf-8")

    def emit(self, text: str, json_obj=None, csv_text: str | None = None) -> None:
        fmt = self.args.format
        if fmt == "json" and json_obj is not None:
            sys.stdout.write(report.dumps(json_obj))
        elif fmt == "csv" and csv_text is not None:
            sys.stdout.write(csv_text)
        else:
            sys.stdout.write(text)


# -- subcommands ----------------------------------------------------------------


def cmd_analyze(ctx: _Ctx) -> int:
    ss = build_state_space(ctx.circuit)
    es = solve_pencil(ss.m, ss.n)
    nv = report.n_voltage_states(ctx.circuit)
    obj = report.modes_dict(es, ss, nv)
    text = report.mode_table(es, ss, nv)
    if ctx.args.dump_matrices:
        obj["matrices"] = report.matrices_dict(ss)
        ctx.write("matrices.json", report.dumps(report.matrices_dict(ss)))
        text += "\n" + report.dumps(report.matrices_dict(ss))
    ctx.write("analyze.json", report.dumps(obj))
    ctx.emit(text, obj)
    return EXIT_OK


def _need_resonances(ctx: _Ctx):
    if not ctx.cfg.resonances:
        raise ConfigError("this command needs .resonance declarations in a --config")


def cmd_sens(ctx: _Ctx) -> int:
    _need_resonances(ctx)
    c = ctx.circuit
    rs = ctx.cfg.response_spec(c)
    sm = assemble_sensitivity(c, rs, ctx.cfg.ds_mode)
    obj = sm.to_dict()
    fd_dev = None
    note = ""
    if ctx.args.fd_check:
        exact = sm if sm.ds_mode == EXACT else assemble_sensitivity(c, rs, EXACT)
        fd = fd_jacobian(c, rs)
        ok, worst, ratios = compare_to_fd(exact, fd)
        dev = ratios * 1e-4  # relative deviation with the 1e-9 absolute floor folded in
        fd_dev = dev.max(axis=0)
        obj["fd_check"] = {"ok": ok, "max_deviation": float(dev.max()), "per_parameter": fd_dev.tolist()}
        note = f"finite-difference check ({EXACT} derivative): max deviation {dev.max():.2e} relative, {'PASS' if ok else 'FAIL'}\n"
        if sm.ds_mode != EXACT:
            note += f"note: '{sm.ds_mode}' scattering rows are a reporting convention and are not FD-checkable\n"
    text = report.sensitivity_table(sm, rs, fd_dev) + note
    csv_text = report.sensitivity_csv(sm, rs)
    ctx.write("sens.json", report.dumps(obj))
    ctx.write("sens.csv", csv_text)
    ctx.emit(text, obj, csv_text)
    return EXIT_OK


def cmd_yield(ctx: _Ctx) -> int:
    _need_resonances(ctx)
    c = ctx.circuit
    cfg = ctx.cfg
    rs = cfg.response_spec(c)
    specs = cfg.spec_set()
    if not specs.specs:
        raise ConfigError("yield needs at least one .spec")
    sm = assemble_sensitivity(c, rs, cfg.ds_mode)
    dist = cfg.distribution(c)
    sigma = propagate_covariance(sm, dist)
    rep = linearized_yield(sm.nominal_omega, sigma, specs, rs, cfg.trials, cfg.seed, ctx.args.workers)
    sig = report.response_sigmas(sigma, rs)
    obj = {"linearized": rep.to_dict(), "sigma": sig, "ds_mode": cfg.ds_mode}
    text = report.yield_table(rep, sig)
    if ctx.args.oracle:
        n = min(cfg.trials, 100_000)
        orc = full_resolve_mc_oracle(c, rs, dist, specs, n, cfg.seed, ctx.args.workers)
        obj["full_resolve"] = orc.to_dict()
        obj["difference_total_pp"] = 100 * (rep.total - orc.total)
        text += "\n" + report.yield_table(orc)
        text += f"linearized minus full-resolve total yield: {100 * (rep.total - orc.total):+.2f} pp\n"
    table, svg = venn_regions(rep)
    ctx.write("yield.json", report.dumps(obj))
    ctx.write("yield.csv", report.yield_csv(rep))
    ctx.write("venn.svg", svg)
    ctx.emit(text, obj, report.yield_csv(rep))
    return EXIT_OK


def _parse_grid(spec: str) -> np.ndarray:
    try:
        t0, t1, n = spec.split(":")
        return np.linspace(float(t0), float(t1), int(n))
    except ValueError:
        raise ConfigError(f"--t-grid expects START:STOP:COUNT, got {spec!r}") from None


def cmd_modal(ctx: _Ctx) -> int:
    ss = build_state_space(ctx.circuit)
    es = solve_pencil(ss.m, ss.n)
    what = ctx.args.what
    if what == "response":
        if ctx.args.x0:
            x0 = np.loadtxt(ctx.args.x0, ndmin=1, delimiter="," if ctx.args.x0.endswith(".csv") else None)
        else:
            x0 = np.zeros(ss.n_states)
            x0[0] = 1.0
        if x0.size != ss.n_states:
            raise ConfigError(f"x0 has {x0.size} entries, model has {ss.n_states} states")
        t = _parse_grid(ctx.args.t_grid)
        x = natural_response(es, ss.m, x0, t)
        obj = {"t": t, "states": list(ss.state_labels), "x": x}
        rows = [",".join(["t", *ss.state_labels])] + [",".join(repr(float(v)) for v in (ti, *xi)) for ti, xi in zip(t, x)]
        csv_text = "\n".join(rows) + "\n"
        text = csv_text
    elif what == "residues":
        rex = model_residues(ss, es)
        obj = {
            "input_coupling": ss.input_coupling,
            "poles": rex.poles,
            "state_residues": {"re": rex.residues.real, "im": rex.residues.imag},
            "port_residues": {"re": rex.port_residues.real, "im": rex.port_residues.imag},
            "constant_term": {"re": rex.constant_term.real, "im": rex.constant_term.imag},
            "linear_term": {"re": rex.linear_term.real, "im": rex.linear_term.imag},
        }
        lines = [
            f"pole {report._cx(p, 4)} rad/s: |port residue| max {np.abs(k).max() if k.size else 0.0:.4g}"
            for p, k in zip(rex.poles, rex.port_residues)
        ]
        text = "\n".join(lines) + "\n"
        csv_text = None
    else:
        try:
            i, j = (int(v) for v in ctx.args.ports.split(","))
        except ValueError:
            raise ConfigError("--ports expects I,J") from None
        zs = find_zeros(ss, (i, j))
        obj = {"ports": [i, j], "zeros": zs.zeros, "residuals": zs.residuals, "scale": zs.scale}
        text = "".join(f"zero {report._cx(z, 4)} rad/s ({z.imag / 2 / np.pi / 1e6:.3f} MHz)\n" for z in zs.zeros) or "no finite zeros\n"
        csv_text = None
    ctx.write(f"modal_{what}.json", report.dumps(obj))
    ctx.emit(text, obj, csv_text)
    return EXIT_OK


def cmd_verify(ctx: _Ctx) -> int:
    from scipy.integrate import solve_ivp

    c = ctx.circuit
    ss = build_state_space(c)
    es = solve_pencil(ss.m, ss.n)
    checks = []
    freqs = np.geomspace(1e6, 1e9, 50)
    err_mna = err_modal = err_res = 0.0
    rex = model_residues(ss, es)
    from .eigen import modal_transfer

    for f in freqs:
        s = 2j * np.pi * f
        h = direct_transfer(ss, s)
        ref = mna_ac_oracle(c, f)
        den = np.abs(ref).max()
        err_mna = max(err_mna, np.abs(h - ref).max() / den)
        err_modal = max(err_modal, np.abs(modal_transfer(es, ss.d, ss.b, ss.e, s, ss.input_coupling) - h).max() / den)
        err_res = max(err_res, np.abs(rex.evaluate(s) - h).max() / den)
    checks += [
        ("direct transfer vs MNA sweep", err_mna, 1e-9),
        ("modal transfer vs direct sweep", err_modal, 1e-9),
        ("residue reconstruction sweep", err_res, 1e-9),
    ]
    x0 = np.linspace(1.0, -1.0, ss.n_states)
    checks.append(("natural response at t=0", float(np.abs(natural_response(es, ss.m, x0, 0.0) - x0).max()), 1e-12))
    decay = np.abs(es.lambdas.real)
    decay = decay[decay > 1e-9 * es.scale]
    if decay.size:
        t_end = 1.0 / decay.max() * 3
        sol = solve_ivp(lambda t, x: -np.linalg.solve(ss.m, ss.n @ x), (0, t_end), x0, method="DOP853", rtol=1e-12, atol=1e-14)
        nat = natural_response(es, ss.m, x0, t_end)
        checks.append(("natural response vs ODE", float(np.abs(nat - sol.y[:, -1]).max() / np.abs(sol.y).max()), 1e-7))
    if ctx.cfg.resonances:
        rs = ctx.cfg.response_spec(c)
        sm = assemble_sensitivity(c, rs, EXACT)
        ok, worst, _ = compare_to_fd(sm, fd_jacobian(c, rs))
        checks.append(("Jacobian vs re-solve finite differences (tolerance ratio)", worst, 1.0))
    failed = 0
    for name, value, tol in checks:
        status = "PASS" if value <= tol else "FAIL"
        failed += status == "FAIL"
        print(f"{status}  {name}: {value:.3e} (limit {tol:.0e})")
    return EXIT_CHECK if failed else EXIT_OK


def _timeit(fn, repeat: int = 3) -> float:
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_setup(c, rs) -> float:
    return _timeit(lambda: assemble_sensitivity(c, rs))


def cmd_bench(ctx: _Ctx) -> int:
    from .sensitivity import ResponseSpec
    from .stats import ParameterDistribution, SpecSet

    c = ctx.circuit
    cfg = ctx.cfg
    if cfg.resonances:
        rs = cfg.response_spec(c)
    else:
        es = solve_pencil(*(lambda s: (s.m, s.n))(build_state_space(c)))
        up = es.upper_modes()
        rs = ResponseSpec.for_circuit(c, [("r1", es.frequencies_hz()[up[0]], 1)] if up and c.ports else [], bool(c.ports))
    specs = cfg.spec_set() if cfg.specs else SpecSet(())
    lines = []
    obj = {}
    setup = bench_setup(c, rs)
    obj["setup_s"] = setup
    lines.append(f"sensitivity setup:          {setup * 1e3:10.3f} ms")
    if rs.resonances:
        sm = assemble_sensitivity(c, rs)
        dist = ParameterDistribution.relative(sm.nominal_values, cfg.rel_sigma)
        sigma = propagate_covariance(sm, dist)
        n_lin = 200_000
        t_lin = _timeit(lambda: linearized_yield(sm.nominal_omega, sigma, specs, rs, n_lin, 1), 2) / n_lin
        n_full = 200
        t_full = _timeit(lambda: full_resolve_mc_oracle(c, rs, dist, specs, n_full, 1), 1) / n_full
        ratio = t_full / max(t_lin, 1e-15)
        obj.update(per_trial_linearized_s=t_lin, per_trial_full_resolve_s=t_full, ratio=ratio)
        lines.append(f"per-trial linearized MC:    {t_lin * 1e6:10.3f} us")
        lines.append(f"per-trial full re-solve:    {t_full * 1e6:10.3f} us")
        lines.append(f"ratio full / linearized:    {ratio:10.1f}")
    else:
        lines.append("no oscillatory mode at a port; Monte Carlo timings skipped")
    sizes, times = scaling_scan(ctx.args.sizes)
    slope = float(np.polyfit(np.log(sizes), np.log(times), 1)[0])
    obj["scaling"] = {"states": sizes, "setup_s": times, "loglog_slope": slope}
    for n, t in zip(sizes, times):
        lines.append(f"ladder N={n:4d} setup:        {t * 1e3:10.3f} ms")
    lines.append(f"setup time log-log slope:   {slope:10.2f}")
    text = "\n".join(lines) + "\n"
    ctx.write("bench.json", report.dumps(obj))
    ctx.emit(text, obj)
    return EXIT_OK


def modal_setup(c) -> None:
    """Model build, eigen-solve and every eigenvalue derivative."""
    from .sensitivity import eig_derivs
    from .statespace import build_stamps

    ss = build_state_space(c)
    es = solve_pencil(ss.m, ss.n)
    for stamp in build_stamps(c, ss):
        eig_derivs(es, stamp)


def scaling_scan(sizes) -> tuple[list[int], list[float]]:
    """Setup time (see :func:`modal_setup`) on ladder circuits of the given sizes."""
    times = []
    for n in sizes:
        c = ladder_circuit(n)
        times.append(_timeit(lambda: modal_setup(c)))
    return list(sizes), times


# -- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rlcsens", description="Eigen-sensitivity and yield analysis of RLC networks")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--netlist", help="netlist file (overrides the config's .netlist)")
    common.add_argument("--config", help="analysis directive file")
    common.add_argument("--out", help="directory for JSON/CSV/SVG outputs")
    common.add_argument("--format", choices=("text", "json", "csv"), default="text", help="stdout format")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", parents=[common], help="eigenvalue/eigenvector table")
    a.add_argument("--dump-matrices", action="store_true")

    s = sub.add_parser("sens", parents=[common], help="sensitivity matrix")
    s.add_argument("--fd-check", action="store_true", help="compare with finite differences")
    s.add_argument("--ds-mode", choices=("exact", "coupling_ref"))

    y = sub.add_parser("yield", parents=[common], help="Monte Carlo yield")
    y.add_argument("--trials", type=lambda v: int(float(v)))
    y.add_argument("--seed", type=int)
    y.add_argument("--workers", type=int, default=1)
    y.add_argument("--oracle", action="store_true", help="also run the full re-solve Monte Carlo")
    y.add_argument("--ds-mode", choices=("exact", "coupling_ref"))

    m = sub.add_parser("modal", parents=[common], help="natural response, residues, zeros")
    m.add_argument("what", choices=("response", "residues", "zeros"))
    m.add_argument("--x0", help="initial state file (one value per state)")
    m.add_argument("--t-grid", default="0:1e-7:101", help="START:STOP:COUNT in seconds")
    m.add_argument("--ports", default="1,1", help="port pair I,J for zeros")

    sub.add_parser("verify", parents=[common], help="run the oracle cross-checks")

    b = sub.add_parser("bench", parents=[common], help="timing report")
    b.add_argument("--sizes", type=lambda v: [int(x) for x in v.split(",")], default=[10, 20, 40])
    return p


COMMANDS = {
    "analyze": cmd_analyze,
    "sens": cmd_sens,
    "yield": cmd_yield,
    "modal": cmd_modal,
    "verify": cmd_verify,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        ctx = _Ctx(args)
        return COMMANDS[args.command](ctx)
    except (NetlistError, ConfigError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except CircuitValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ResonanceMatchError as exc:
        print(f"error: resonance match failed: {exc}", file=sys.stderr)
        return EXIT_MATCH
    except (np.linalg.LinAlgError, ValueError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
