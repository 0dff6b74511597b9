"""Config-driven experiment runner.

Config files are flat ``key = value`` documents with ``#`` comments::

    experiment = convergence
    case = 1
    phi = linear:-0.2
    output = results/case1.csv

Exit codes: 0 success, 2 config error, 3 simulation abort, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, replace

import numpy as np

from . import experiment as exp
from .model import CASE_1, CASE_2, JumpSpec, ModelParams, RegimeCase, classify_regime
from .noise import GridConfig
from .rootfind import SolverError
from .scheme import SchemeKind

__all__ = ["ConfigError", "RunConfig", "format_config", "main", "parse_config", "run"]

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_IO = 0, 2, 3, 4

EXPERIMENTS = ("convergence", "positivity", "moments")
PRESETS = {"1": CASE_1, "2": CASE_2}
# config key -> ModelParams field
MODEL_KEYS = {
    "a_neg1": "a_neg1",
    "a0": "a0",
    "a1": "a1",
    "a2": "a2",
    "b": "b",
    "gamma": "gamma",
    "theta": "theta",
    "lambda": "lam",
    "x0": "x0",
}
OTHER_KEYS = (
    "experiment",
    "case",
    "phi",
    "scheme",
    "T",
    "levels",
    "reference_level",
    "paths",
    "seed",
    "batch_size",
    "q",
    "error_mode",
    "moment_exponent",
    "inverse",
    "output",
    "format",
)
DEFAULTS = {
    "convergence": dict(scheme="bem", levels=(4, 5, 6, 7, 8), reference_level=11, paths=2000),
    "positivity": dict(scheme="em", levels=(2, 3, 4), reference_level=None, paths=10000),
    "moments": dict(scheme="bem", levels=(7,), reference_level=None, paths=1000),
}
FULL_PROTOCOL = dict(levels=(7, 8, 9, 10, 11), reference_level=13, num_paths=10000)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    case: str
    params: ModelParams
    jump: JumpSpec
    scheme: SchemeKind
    T: float
    levels: tuple[int, ...]
    reference_level: int
    num_paths: int
    seed: int
    output_path: str
    fmt: str = "csv"
    batch_size: int = 500
    q: float = 3.0
    error_mode: str = "terminal"
    moment_exponent: float = 2.0
    inverse: bool = False

    def experiment_spec(self) -> exp.ExperimentSpec:
        return exp.ExperimentSpec(
            params=self.params,
            jump=self.jump,
            grid=GridConfig(self.T, self.reference_level, self.levels),
            num_paths=self.num_paths,
            base_seed=self.seed,
            scheme=self.scheme,
            levels_under_test=self.levels,
            reference_level=self.reference_level,
            batch_size=self.batch_size,
            q=self.q,
        )


def _tokenize(text: str) -> dict[str, tuple[str, int]]:
    entries: dict[str, tuple[str, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        if key not in MODEL_KEYS and key not in OTHER_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in entries:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} (first on line {entries[key][1]})")
        entries[key] = (value, lineno)
    return entries


def _convert(entries, key, conv, default=None, required=False):
    if key not in entries:
        if required:
            raise ConfigError(f"missing required key {key!r}")
        return default
    value, lineno = entries[key]
    try:
        return conv(value)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"line {lineno}: bad value for {key!r}: {err}") from None


def _float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError(f"{s!r} is not finite")
    return v


def _int(s: str) -> int:
    return int(s, 0)


def _levels(s: str) -> tuple[int, ...]:
    if ".." in s:
        lo, hi = s.split("..")
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(t) for t in s.split(",") if t.strip())


def _bool(s: str) -> bool:
    if s.lower() in ("true", "yes", "1"):
        return True
    if s.lower() in ("false", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _choice(options):
    def conv(s: str) -> str:
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return s

    return conv


def parse_config(text: str) -> RunConfig:
    """Parse and validate a config document; raises :class:`ConfigError`."""
    entries = _tokenize(text)
    experiment = _convert(entries, "experiment", _choice(EXPERIMENTS), required=True)
    defaults = DEFAULTS[experiment]

    case = _convert(entries, "case", _choice(tuple(PRESETS)), default="custom")
    base = PRESETS.get(case)
    values = {}
    for key, attr in MODEL_KEYS.items():
        fallback = getattr(base, attr) if base is not None else None
        values[attr] = _convert(entries, key, _float, default=fallback, required=base is None)
    try:
        params = ModelParams(**values)
    except ValueError as err:
        raise ConfigError(f"invalid model parameters: {err}") from None
    if base is not None and params != base:
        case = "custom"

    regime = classify_regime(params)
    if regime.case is RegimeCase.UNSUPPORTED:
        raise ConfigError("regime unsupported: gamma+1 < 2*theta")
    if experiment == "convergence" and regime.case is RegimeCase.CRITICAL and not regime.critical_ok:
        raise ConfigError("critical regime requires a2/b^2 > 2*gamma - 3/2")

    jump = _convert(entries, "phi", JumpSpec.from_descriptor, required=True)
    scheme = SchemeKind(_convert(entries, "scheme", _choice(("bem", "em")), default=defaults["scheme"]))
    levels = _convert(entries, "levels", _levels, default=defaults["levels"])
    if not levels:
        raise ConfigError("levels must not be empty")
    reference_level = _convert(entries, "reference_level", _int, default=defaults["reference_level"])
    if reference_level is None:
        reference_level = max(levels)

    cfg = RunConfig(
        experiment=experiment,
        case=case,
        params=params,
        jump=jump,
        scheme=scheme,
        T=_convert(entries, "T", _float, default=1.0),
        levels=levels,
        reference_level=reference_level,
        num_paths=_convert(entries, "paths", _int, default=defaults["paths"]),
        seed=_convert(entries, "seed", _int, default=0),
        output_path=_convert(entries, "output", str, required=True),
        fmt=_convert(entries, "format", _choice(("csv", "json")), default="csv"),
        batch_size=_convert(entries, "batch_size", _int, default=500),
        q=_convert(entries, "q", _float, default=3.0),
        error_mode=_convert(entries, "error_mode", _choice(("terminal", "sup")), default="terminal"),
        moment_exponent=_convert(entries, "moment_exponent", _float, default=2.0),
        inverse=_convert(entries, "inverse", _bool, default=False),
    )
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    """Check every cross-field invariant before any simulation starts."""
    try:
        spec = cfg.experiment_spec()
        if cfg.experiment == "convergence":
            if cfg.scheme is not SchemeKind.BEM:
                raise ValueError("convergence experiments use scheme = bem")
            exp._check_bem_steps(spec, spec.levels_under_test + (spec.reference_level,))
        elif cfg.experiment == "moments":
            if cfg.scheme is not SchemeKind.BEM:
                raise ValueError("moment probes use scheme = bem")
            lo, hi = exp.moment_range(cfg.params, cfg.inverse)
            if not lo <= cfg.moment_exponent < hi:
                raise ValueError(f"moment_exponent must lie in [{lo!r}, {hi!r})")
        if cfg.scheme is SchemeKind.BEM:
            for level in cfg.levels:
                if not spec.stepsize(level) * cfg.params.a1 < 1:
                    raise ValueError(f"level {level}: h * a1 must be < 1")
        if cfg.q <= 2:
            raise ValueError("q must exceed 2")
    except ValueError as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(str(err)) from None


def format_config(cfg: RunConfig) -> str:
    """Canonical config text; ``parse_config(format_config(c)) == c``."""
    lines = [f"experiment = {cfg.experiment}"]
    if cfg.case in PRESETS:
        lines.append(f"case = {cfg.case}")
    for key, attr in MODEL_KEYS.items():
        lines.append(f"{key} = {getattr(cfg.params, attr)!r}")
    lines += [
        f"phi = {cfg.jump.descriptor}",
        f"scheme = {cfg.scheme.value}",
        f"T = {cfg.T!r}",
        f"levels = {','.join(str(k) for k in cfg.levels)}",
        f"reference_level = {cfg.reference_level}",
        f"paths = {cfg.num_paths}",
        f"seed = {cfg.seed}",
        f"batch_size = {cfg.batch_size}",
        f"q = {cfg.q!r}",
        f"error_mode = {cfg.error_mode}",
        f"moment_exponent = {cfg.moment_exponent!r}",
        f"inverse = {str(cfg.inverse).lower()}",
        f"output = {cfg.output_path}",
        f"format = {cfg.fmt}",
    ]
    return "\n".join(lines) + "\n"


def num(v: float | int) -> str:
    """17 significant digits, so reruns compare byte-for-byte."""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


@dataclass
class Table:
    columns: list[str]
    rows: list[list]
    trailer: dict[str, float]
    summary: str


def _convergence(cfg: RunConfig) -> Table:
    report = exp.strong_error(cfg.experiment_spec(), mode=cfg.error_mode)
    rows = [list(r) for r in zip(report.stepsizes, report.rms_errors, report.batch_stderr)]
    return Table(
        ["h", "rms_error", "batch_stderr"],
        rows,
        {"slope": report.slope, "r2": report.r_squared},
        f"slope={num(report.slope)} r2={num(report.r_squared)}",
    )


def _positivity(cfg: RunConfig) -> Table:
    spec = cfg.experiment_spec()
    rows = []
    for level, census in exp.census_table(spec):
        rows.append(
            [
                cfg.scheme.value,
                cfg.case,
                cfg.jump.label,
                spec.stepsize(level),
                census.total,
                census.negative,
                census.diverged,
                census.fraction_negative,
            ]
        )
    fractions = ",".join(num(r[-1]) for r in rows)
    return Table(
        ["scheme", "case", "phi", "h", "total", "negative", "diverged", "fraction"],
        rows,
        {},
        f"negative_fraction={fractions}",
    )


def _moments(cfg: RunConfig) -> Table:
    spec = cfg.experiment_spec()
    level = cfg.levels[0]
    est = exp.moment_probe(spec, cfg.moment_exponent, inverse=cfg.inverse, level=level)
    t = np.arange(est.size) * spec.stepsize(level)
    return Table(["t", "estimate"], [[a, b] for a, b in zip(t, est)], {}, f"max_estimate={num(est.max())}")


RUNNERS = {"convergence": _convergence, "positivity": _positivity, "moments": _moments}


def _json_value(v):
    if isinstance(v, str):
        return v
    return int(v) if isinstance(v, (int, np.integer)) else float(v)


def _render(table: Table, fmt: str, cfg: RunConfig) -> str:
    if fmt == "json":
        doc = {
            "experiment": cfg.experiment,
            "columns": table.columns,
            "rows": [[_json_value(v) for v in r] for r in table.rows],
        }
        doc.update({k: float(v) for k, v in table.trailer.items()})
        return json.dumps(doc, indent=2) + "\n"
    out = [",".join(table.columns)]
    out += [",".join(v if isinstance(v, str) else num(v) for v in r) for r in table.rows]
    if table.trailer:
        out.append("#" + ",".join(f"{k}={num(v)}" for k, v in table.trailer.items()))
    return "\n".join(out) + "\n"


def _render_error(kind: str, message: str, fmt: str) -> str:
    if fmt == "json":
        return json.dumps({"error": {"kind": kind, "message": message}}, indent=2) + "\n"
    return f"#error={kind},message={message.replace(chr(10), ' ')}\n"


def write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run(cfg: RunConfig, quiet: bool = False) -> int:
    """Execute ``cfg`` and write its results; returns the process exit status."""
    try:
        table = RUNNERS[cfg.experiment](cfg)
    except (SolverError, ArithmeticError, FloatingPointError) as err:
        try:
            write_atomic(cfg.output_path, _render_error(type(err).__name__, str(err), cfg.fmt))
        except OSError:
            pass
        print(f"simulation aborted: {err}", file=sys.stderr)
        return EXIT_ABORT
    try:
        write_atomic(cfg.output_path, _render(table, cfg.fmt, cfg))
    except OSError as err:
        print(f"cannot write {cfg.output_path}: {err}", file=sys.stderr)
        return EXIT_IO
    if not quiet:
        print(table.summary)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aitjump", description="Backward Euler / Euler-Maruyama experiments for the Ait-Sahalia model with jumps."
    )
    parser.add_argument("--config", required=True, help="path to a key = value config file")
    parser.add_argument("--seed", type=lambda s: int(s, 0), help="override the config seed (unsigned 64-bit)")
    parser.add_argument("--paths", type=int, help="override the number of Monte Carlo paths")
    parser.add_argument(
        "--full-protocol",
        action="store_true",
        help="convergence only: levels 7..11 against reference level 13 with 10000 paths",
    )
    parser.add_argument("--quiet", action="store_true", help="suppress the one-line summary")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        print(f"cannot read config: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(text)
        overrides = {}
        if args.full_protocol:
            if cfg.experiment != "convergence":
                raise ConfigError("--full-protocol applies to convergence experiments only")
            overrides.update(FULL_PROTOCOL)
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.paths is not None:
            overrides["num_paths"] = args.paths
        if overrides:
            cfg = replace(cfg, **overrides)
            validate(cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg, quiet=args.quiet)


if __name__ == "__main__":
    sys.exit(main())
