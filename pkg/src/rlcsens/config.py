"""
Analysis configuration: a small directive file next to the netlist.

::

    .netlist    matching_network.cir
    .resonance  ch1 200MHz 1              NAME GUESS PORT
    .spec       f1  freq ch1 within 200MHz 5MHz
    .spec       S11 smag ch1 below -10    (dB)
    .group      ch1 f1 S11
    .dist       rel 0.05                  or: .dist cov FILE
    .trials     10000000
    .seed       1
    .dsmode     exact                     or: coupling_ref
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .netlist import Circuit, parse_netlist, parse_value
from .sensitivity import DS_MODES, EXACT, Resonance, ResponseSpec
from .stats import ParameterDistribution, Spec, SpecSet


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def data_path(name: str) -> Path:
    """Path of a bundled example file (netlist or config)."""
    return Path(str(resources.files("rlcsens") / "data" / name))


@dataclass
class AnalysisConfig:
    netlist: Path | None = None
    resonances: list[Resonance] = field(default_factory=list)
    specs: list[Spec] = field(default_factory=list)
    groups: dict = field(default_factory=dict)
    dist_kind: str = "rel"
    rel_sigma: float = 0.05
    cov_file: Path | None = None
    trials: int = 100_000
    seed: int = 0
    ds_mode: str = EXACT

    def validate(self) -> None:
        names = [r.name for r in self.resonances]
        if len(set(names)) != len(names):
            raise ConfigError("resonance names must be unique")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        for s in self.specs:
            if s.resonance not in names:
                raise ConfigError(f"spec {s.name} refers to unknown resonance {s.resonance!r}")
        SpecSet(tuple(self.specs), dict(self.groups))  # checks names and groups

    def circuit(self) -> Circuit:
        if self.netlist is None:
            raise ConfigError("no netlist given")
        return parse_netlist(Path(self.netlist).read_text(encoding="utf-8"))

    def response_spec(self, c: Circuit, with_scattering: bool = True) -> ResponseSpec:
        return ResponseSpec.for_circuit(c, self.resonances, with_scattering)

    def spec_set(self) -> SpecSet:
        return SpecSet(tuple(self.specs), dict(self.groups))

    def distribution(self, c: Circuit) -> ParameterDistribution:
        h = np.array([p.value for p in c.parameters])
        if self.dist_kind == "rel":
            return ParameterDistribution.relative(h, self.rel_sigma)
        cov = np.loadtxt(self.cov_file, delimiter="," if str(self.cov_file).endswith(".csv") else None, ndmin=2)
        return ParameterDistribution(h, cov)

    def with_overrides(self, **kw) -> "AnalysisConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def _int(token: str, lineno: int) -> int:
    try:
        value = float(token)
    except ValueError:
        raise ConfigError(f"expected an integer, got {token!r}", lineno) from None
    if value != int(value):
        raise ConfigError(f"expected an integer, got {token!r}", lineno)
    return int(value)


def _val(token: str, lineno: int) -> float:
    try:
        return parse_value(token)
    except ValueError as exc:
        raise ConfigError(str(exc), lineno) from None


def parse_config(text: str, base_dir: Path | str = ".") -> AnalysisConfig:
    """Parse directive text; relative file names resolve against ``base_dir``."""
    base = Path(base_dir)
    cfg = AnalysisConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *args = line.split()
        key = head.lower()
        if key == ".netlist" and len(args) == 1:
            cfg.netlist = base / args[0]
        elif key == ".resonance" and len(args) == 3:
            cfg.resonances.append(Resonance(args[0], _val(args[1], lineno), _int(args[2], lineno)))
        elif key == ".spec":
            cfg.specs.append(_parse_spec(args, lineno))
        elif key == ".group" and len(args) >= 2:
            cfg.groups[args[0]] = tuple(args[1:])
        elif key == ".dist" and len(args) == 2 and args[0] == "rel":
            cfg.dist_kind, cfg.rel_sigma = "rel", float(_val(args[1], lineno))
        elif key == ".dist" and len(args) == 2 and args[0] == "cov":
            cfg.dist_kind, cfg.cov_file = "cov", base / args[1]
        elif key == ".trials" and len(args) == 1:
            cfg.trials = _int(args[0], lineno)
        elif key == ".seed" and len(args) == 1:
            cfg.seed = _int(args[0], lineno)
        elif key == ".dsmode" and len(args) == 1:
            if args[0] not in DS_MODES:
                raise ConfigError(f".dsmode must be one of {DS_MODES}", lineno)
            cfg.ds_mode = args[0]
        else:
            raise ConfigError(f"cannot parse directive {line!r}", lineno)
    try:
        cfg.validate()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _parse_spec(args: list[str], lineno: int) -> Spec:
    if len(args) < 5:
        raise ConfigError("expected '.spec NAME freq|smag RESONANCE within|below|above VALUE [TOL]'", lineno)
    name, kind, res, comp, *vals = args
    try:
        if comp == "within":
            if len(vals) != 2:
                raise ConfigError("'within' needs CENTER and TOL", lineno)
            return Spec(name, kind, res, comp, _val(vals[0], lineno), _val(vals[1], lineno))
        if len(vals) != 1:
            raise ConfigError(f"'{comp}' needs one threshold", lineno)
        value = float(vals[0]) if kind == "smag" else _val(vals[0], lineno)
        return Spec(name, kind, res, comp, value)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), lineno) from None


def load_config(path: Path | str) -> AnalysisConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), path.parent)
