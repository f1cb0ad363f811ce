"""Command-line entry point: ``rggclt <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .constants import BETA1_TABLE, beta1, beta2, c_constant
from .errors import ArgumentError, CapacityError, DegenerateInputError, NumericError
from .estimators import (
    MECKE_CATALOGUE,
    STREAM_TAGS,
    ExperimentSpec,
    compound_poisson_experiment,
    fit_variance_scaling,
    kolmogorov_to_normal,
    mecke_check,
    poincare_check,
    report_from_samples,
    run_experiment,
    wasserstein1_to_normal,
)
from .functionals import FunctionalSpec
from .geometry import ConvexBody
from .verify import FAULTS, SUITES, run_suites

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CAPACITY = 3
EXIT_NUMERIC = 4
EXIT_VERIFY = 5
OUT_ENV = "RGGCLT_OUT"
SUBCOMMANDS = ("simulate", "variance-scan", "clt-distance", "verify", "constants", "mecke", "poincare")


class ConfigError(ArgumentError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def parse_config_text(text: str) -> Dict[str, str]:
    """Flat ``key = value`` lines; ``[section]`` headers prefix later keys with ``section.``."""
    out: Dict[str, str] = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[f"{section}.{key}" if section else key] = value
    return out


class Settings:
    """Merged view of config-file values (scoped by subcommand) and flags."""

    def __init__(self, subcommand: str, file_values: Dict[str, str], flag_values: Dict[str, str]):
        self.subcommand = subcommand
        merged = {}
        for key, value in file_values.items():
            if "." in key:
                scope, bare = key.split(".", 1)
                if scope == subcommand:
                    merged[bare] = value
            else:
                merged.setdefault(key, value)
        # scoped keys win over unscoped ones; flags win over both
        for key, value in file_values.items():
            if key.startswith(subcommand + "."):
                merged[key.split(".", 1)[1]] = value
        merged.update({k: v for k, v in flag_values.items() if v is not None})
        self.values = merged
        self.used = set()

    def get(self, key: str, default=None, cast=str, required: bool = False):
        if key not in self.values:
            if required:
                raise ConfigError(f"missing required setting {key!r}")
            return default
        self.used.add(key)
        raw = self.values[key]
        try:
            return cast(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"setting {key!r}: cannot parse {raw!r}") from exc

    def floats(self, key: str, required: bool = False) -> Optional[List[float]]:
        return self.get(key, None, lambda s: [float(v) for v in str(s).replace(";", ",").split(",") if v.strip()],
                        required)

    def echo(self) -> dict:
        return dict(sorted(self.values.items()))


def _body_from(settings: Settings, default_kind: str = "cube") -> ConvexBody:
    d = settings.get("dimension", 2, int)
    if d < 1:
        raise ConfigError("dimension must be positive")
    kind = settings.get("body", default_kind)
    size = settings.get("body_size", 1.0, float)
    if kind == "cube":
        return ConvexBody.box([0.0] * d, [size] * d)
    if kind == "centred_cube":
        return ConvexBody.box([-size / 2] * d, [size / 2] * d)
    if kind == "ball":
        return ConvexBody.ball([0.0] * d, size)
    raise ConfigError(f"unknown body {kind!r}; use cube, centred_cube or ball")


def _functional_from(settings: Settings) -> FunctionalSpec:
    family = settings.get("family", required=True)
    params = {}
    if family == "gilbert":
        params["epsilon"] = settings.get("epsilon", 0.2, float)
    if family == "knn":
        params["k"] = settings.get("k", 6, int)
    phi = settings.get("phi")
    if phi:
        return FunctionalSpec.phi_weight(family, phi, settings.get("phi_a", 1.0, float), **params)
    return FunctionalSpec.power(family, settings.get("alpha", 1.0, float), **params)


def _experiment_from(settings: Settings, seed: int, tag: str) -> ExperimentSpec:
    functional = _functional_from(settings)
    default_body = "centred_cube" if functional.family == "rst" else "cube"
    body = _body_from(settings, default_body)
    grid = settings.floats("t_grid", required=True)
    rule = None
    if functional.family == "gilbert":
        kind = settings.get("epsilon_rule", "constant")
        if kind == "constant":
            rule = ("constant", functional.graph_params["epsilon"])
        elif kind == "power":
            rule = ("power", settings.get("theta", 1.0, float))
        else:
            raise ConfigError("epsilon_rule must be constant or power")
    return ExperimentSpec(
        functional,
        body,
        tuple(grid),
        settings.get("replicates", 100, int),
        base_seed=seed,
        intensity=settings.get("intensity", 1.0, float),
        epsilon_rule=rule,
        stream_tag=STREAM_TAGS[tag],
    )


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

class Outputs:
    def __init__(self, directory: Path):
        self.directory = directory
        self.files: Dict[str, str] = {}

    def write(self, name: str, text: str) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self.directory / name
        data = text.encode("utf-8")
        path.write_bytes(data)
        self.files[name] = hashlib.sha256(data).hexdigest()
        return path

    def manifest(self, subcommand: str, settings: Settings, seed: int, wall: float, status: int) -> None:
        payload = {
            "subcommand": subcommand,
            "version": __version__,
            "seed": seed,
            "config": settings.echo(),
            "exit_code": status,
            "outputs": dict(sorted(self.files.items())),
            "content_hash": hashlib.sha256("".join(v for _, v in sorted(self.files.items())).encode()).hexdigest(),
            # wall time lives only here so that data files stay byte-reproducible
            "wall_time_seconds": round(wall, 3),
        }
        self.directory.mkdir(parents=True, exist_ok=True)
        (self.directory / "manifest.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    return format(v, ".17g") if math.isfinite(v) else ""


def _csv(header: List[str], rows: List[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) if not isinstance(v, str) else v for v in r])
    return buf.getvalue()


def _dump(obj) -> str:
    def clean(o):
        if isinstance(o, dict):
            return {k: clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        if isinstance(o, (float, np.floating)):
            return float(o) if math.isfinite(o) else None
        if isinstance(o, (np.integer,)):
            return int(o)
        if isinstance(o, np.bool_):
            return bool(o)
        return o

    return json.dumps(clean(obj), indent=2, sort_keys=True) + "\n"


def _load_samples(path: str):
    """Read ``t,value`` rows (header required) into a sorted t-grid and sample lists."""
    groups: Dict[float, List[float]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or "t" not in reader.fieldnames or "value" not in reader.fieldnames:
            raise ConfigError("samples file needs columns t and value")
        for row in reader:
            groups.setdefault(float(row["t"]), []).append(float(row["value"]))
    grid = sorted(groups)
    return grid, [np.array(groups[t]) for t in grid]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(settings: Settings, out: Outputs, seed: int, workers: int, max_points) -> int:
    spec = _experiment_from(settings, seed, "simulate")
    report = run_experiment(spec, workers=workers, max_points=max_points)
    out.write("samples.csv", report.samples_csv())
    out.write("report.csv", report.to_csv())
    out.write("report.json", report.to_json() + "\n")
    return EXIT_OK


def cmd_variance_scan(settings: Settings, out: Outputs, seed: int, workers: int, max_points) -> int:
    samples_file = settings.get("samples_file")
    if samples_file:
        grid, samples = _load_samples(samples_file)
        report = report_from_samples(grid, samples, spec={"samples_file": os.path.basename(samples_file)}, seed=seed)
        d = settings.get("dimension", 1, int)
    else:
        spec = _experiment_from(settings, seed, "variance-scan")
        report = run_experiment(spec, workers=workers, max_points=max_points)
        d = spec.dimension
        out.write("samples.csv", report.samples_csv())
    fit = fit_variance_scaling(report.t_grid, report.variances, d)
    report.fits["variance"] = fit
    out.write("report.csv", report.to_csv())
    out.write("fit.json", _dump(fit))
    print(f"slope {fit['slope']:.4f} +- {fit['slope_stderr']:.4f}")
    return EXIT_OK


def cmd_clt_distance(settings: Settings, out: Outputs, seed: int, workers: int, max_points) -> int:
    samples_file = settings.get("samples_file")
    family = settings.get("family", "gilbert")
    if samples_file:
        grid, samples = _load_samples(samples_file)
        for s in samples:
            kolmogorov_to_normal(s)  # raises on degenerate input
        report = report_from_samples(grid, samples, seed=seed)
    elif family == "compound":
        grid = settings.floats("t_grid") or [10.0, 100.0, 1000.0]
        report = compound_poisson_experiment(grid, settings.get("replicates", 1000, int), seed, workers)
    else:
        spec = _experiment_from(settings, seed, "clt-distance")
        report = run_experiment(spec, workers=workers, max_points=max_points)
        out.write("samples.csv", report.samples_csv())
    rows = [[r.t, r.dK, r.dK_se, r.dW] for r in report.rows]
    for r in report.rows:
        if not math.isfinite(r.dK):
            raise NumericError(f"distance to normal undefined at t={r.t} (zero variance)")
    mono = all(b.dK <= a.dK + 2.0 * math.hypot(a.dK_se, b.dK_se) for a, b in zip(report.rows, report.rows[1:]))
    out.write("distances.csv", _csv(["t", "dK", "dK_se", "dW"], rows))
    out.write("summary.json", _dump({"nonincreasing_within_2se": mono, "rows": rows}))
    for r in report.rows:
        print(f"t={r.t:g} dK={r.dK:.4f} (se {r.dK_se:.4f}) dW={r.dW:.4f}")
    return EXIT_OK


def cmd_verify(settings: Settings, out: Outputs, seed: int, workers: int, max_points) -> int:
    names = settings.get("suites")
    names = [n.strip() for n in names.split(",") if n.strip()] if names else list(SUITES)
    fault = settings.get("fault")
    sizes = {n: settings.get(f"size_{n}", None, int) for n in SUITES}
    sizes = {k: v for k, v in sizes.items() if v is not None}
    results = run_suites(names, seed=seed, fault=fault, sizes=sizes)
    for res in results:
        print(f"[{'PASS' if res.passed else 'FAIL'}] {res.name}")
        for c in res.checks:
            print(f"    {'ok ' if c.passed else 'BAD'} {c.label}")
    out.write("verify.json", _dump({"passed": all(r.passed for r in results), "suites": [r.to_dict() for r in results]}))
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def cmd_constants(settings: Settings, out: Outputs, seed: int, workers: int, max_points) -> int:
    d_min = settings.get("d_min", 1, int)
    d_max = settings.get("d_max", 3, int)
    tol = settings.get("tol", 1e-8, float)
    if not 1 <= d_min <= d_max <= 6:
        raise ConfigError("need 1 <= d_min <= d_max <= 6")
    rows = []
    for d in range(d_min, d_max + 1):
        res = c_constant(d, tol)
        b1 = beta1(d) if d in BETA1_TABLE else None
        b2 = beta2(d) if d >= 3 else None
        rows.append([d, res.value, res.abs_error_estimate, b1, b2])
        print(f"d={d} c={res.value:.10f} err={res.abs_error_estimate:.2e}")
    out.write("constants.csv", _csv(["d", "c", "error", "beta1", "beta2"], rows))
    return EXIT_OK


def cmd_mecke(settings: Settings, out: Outputs, seed: int, workers: int, max_points) -> int:
    h = settings.get("h", "nn_distance_capped")
    if h not in MECKE_CATALOGUE:
        raise ConfigError(f"h must be one of {MECKE_CATALOGUE}")
    body = _body_from(settings)
    res = mecke_check(h, body, settings.get("intensity", 5.0, float), settings.get("replicates", 1000, int), seed)
    ok = res.equal_within(3.0)
    out.write("mecke.json", _dump({"h": h, "passed": ok, **res.to_dict()}))
    print(f"lhs={res.lhs:.6g} rhs={res.rhs:.6g} pooled_se={res.pooled_se:.3g} {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_poincare(settings: Settings, out: Outputs, seed: int, workers: int, max_points) -> int:
    p = settings.get("p", 2.0, float)
    if settings.get("family", "count") == "count":
        functional = "count"
        body = _body_from(settings)
    else:
        functional = _functional_from(settings)
        body = _body_from(settings, "centred_cube" if functional.family == "rst" else "cube")
    res = poincare_check(functional, p, body, settings.get("intensity", 1.0, float),
                         settings.get("replicates", 1000, int), seed)
    ok = res.inequality_holds(3.0)
    out.write("poincare.json", _dump({"p": p, "passed": ok, **res.to_dict()}))
    print(f"lhs={res.lhs:.6g} rhs={res.rhs:.6g} margin={res.margin:.6g} {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_VERIFY


COMMANDS = {
    "simulate": cmd_simulate,
    "variance-scan": cmd_variance_scan,
    "clt-distance": cmd_clt_distance,
    "verify": cmd_verify,
    "constants": cmd_constants,
    "mecke": cmd_mecke,
    "poincare": cmd_poincare,
}

# flag name -> help; every flag maps onto the config key of the same name
FLAGS = {
    "family": "graph family (onng, gilbert, knn, rst; clt-distance also accepts compound)",
    "alpha": "power weight exponent",
    "phi": "decreasing weight from the catalogue (inv_power, exp)",
    "phi_a": "exponent of inv_power",
    "epsilon": "Gilbert connection radius",
    "epsilon_rule": "constant or power",
    "theta": "exponent for eps_t^d = t^-theta",
    "k": "number of neighbours for knn",
    "dimension": "space dimension",
    "body": "cube, centred_cube or ball",
    "body_size": "cube side or ball radius",
    "t_grid": "comma-separated increasing t values",
    "replicates": "Monte Carlo replicates per t",
    "intensity": "Poisson intensity",
    "samples_file": "CSV with columns t,value to analyse instead of simulating",
    "suites": "comma-separated verification suites",
    "fault": "inject a fault into verification (edge_weight)",
    "d_min": "smallest dimension for constants",
    "d_max": "largest dimension for constants",
    "tol": "absolute tolerance for c(d)",
    "h": "Mecke test function",
    "p": "exponent of the p-Poincare check",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rggclt", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--workers", type=int, default=None)
        sp.add_argument("--max-points", type=int, default=None, dest="max_points")
        sp.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./rggclt-out)")
        for flag, help_text in FLAGS.items():
            sp.add_argument("--" + flag.replace("_", "-"), dest=flag, default=None, help=help_text)
        for suite in SUITES:
            sp.add_argument(f"--size-{suite}", dest=f"size_{suite}", default=None, help=argparse.SUPPRESS)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    start = time.perf_counter()
    flag_values = {k: getattr(args, k) for k in list(FLAGS) + [f"size_{s}" for s in SUITES]}
    try:
        file_values = parse_config_text(Path(args.config).read_text()) if args.config else {}
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    settings = Settings(args.subcommand, file_values, flag_values)
    out_dir = Path(args.out or file_values.get("out") or os.environ.get(OUT_ENV) or "rggclt-out")
    out = Outputs(out_dir)
    status = EXIT_OK
    seed = 0
    try:
        seed = args.seed if args.seed is not None else settings.get("seed", 0, int)
        workers = args.workers if args.workers is not None else settings.get("workers", 1, int)
        max_points = args.max_points if args.max_points is not None else settings.get("max_points", None, int)
        status = COMMANDS[args.subcommand](settings, out, seed, max(1, workers), max_points)
    except CapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_CAPACITY
    except (NumericError, DegenerateInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_NUMERIC
    except (ArgumentError, KeyError, ValueError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        status = EXIT_CONFIG
    out.manifest(args.subcommand, settings, seed, time.perf_counter() - start, status)
    return status


if __name__ == "__main__":
    sys.exit(main())
