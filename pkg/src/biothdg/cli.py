"""Command-line entry point: ``solve``, ``convergence`` and ``verify``.

Settings come from an optional JSON config file (``--config``) overlaid by
command-line flags.  Exit codes: 0 success, 1 usage/config error,
2 numerical failure, 3 gate failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import ErrorEvaluator, FIELDS, convergence_study
from .export import sample_lines, write_line_samples, write_vtk
from .forms import ModelParams, ParameterError
from .mesh import MeshError, read_mesh
from .mms import BenchmarkCase, ManufacturedSolutionError, get_case
from .spaces import build_layout
from .system import BiotSystem, SolverError, divergence_conformity_report, static_scheme
from .timeloop import Stepper, TimeGrid, initialize, load_checkpoint, run
from . import verify as checks

logger = logging.getLogger("biothdg")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_GATE = 0, 1, 2, 3
CONFIG_VERSION = 1
PHYSICAL_KEYS = ("E", "nu", "alpha", "kappa", "c0")


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class RunConfig:
    """All run settings; ``None`` means "use the case default"."""

    version: int = CONFIG_VERSION
    case: str = "quasistatic"
    variant: str | None = None
    k: int | None = None
    n: int | None = None
    nx: int | None = None
    ny: int | None = None
    diagonal: str = "right"
    mesh_file: str | None = None
    scheme: str | None = None
    dt: float | None = None
    T: float | None = None
    E: float | None = None
    nu: float | None = None
    alpha: float | None = None
    kappa: float | None = None
    c0: float | None = None
    beta: float | None = None
    out: str = "out"
    vtk: bool = True
    vtk_every: int = 1
    checkpoint_every: int = 0
    restart: str | None = None
    levels: list | int = 4
    start: int = 2
    gate_rates: list | None = None
    variants: list | None = None
    degrees: list | None = None
    seed: int = 0

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version}")
        ints = ("k", "n", "nx", "ny", "vtk_every", "checkpoint_every", "start", "seed")
        for key in ints:
            v = getattr(self, key)
            if v is not None and (not isinstance(v, int) or isinstance(v, bool)):
                raise ConfigError(f"{key} must be an integer")
        for key in ("k", "n", "nx", "ny", "vtk_every", "start"):
            v = getattr(self, key)
            if v is not None and v < 1:
                raise ConfigError(f"{key} must be >= 1")
        for key in ("dt", "T", "beta") + PHYSICAL_KEYS:
            v = getattr(self, key)
            if v is not None and not isinstance(v, (int, float)):
                raise ConfigError(f"{key} must be a number")
        if self.diagonal not in ("right", "crisscross"):
            raise ConfigError("diagonal must be 'right' or 'crisscross'")
        if self.gate_rates is not None and len(self.gate_rates) != len(FIELDS):
            raise ConfigError(f"gate_rates needs {len(FIELDS)} values ({', '.join(FIELDS)})")
        levels = self.levels
        if isinstance(levels, int) and not isinstance(levels, bool):
            if levels < 2:
                raise ConfigError("a convergence study needs at least 2 levels")
        elif isinstance(levels, list):
            if len(levels) < 2 or not all(isinstance(v, int) and v >= 1 for v in levels):
                raise ConfigError("levels must list at least 2 positive mesh sizes")
        else:
            raise ConfigError("levels must be an integer or a list of integers")

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


# case construction ------------------------------------------------------------------

def build_case(cfg: RunConfig) -> BenchmarkCase:
    """Benchmark case with config overrides applied (parameters validated)."""
    name = cfg.case.lower()
    phys = {key: getattr(cfg, key) for key in PHYSICAL_KEYS if getattr(cfg, key) is not None}
    kwargs = {} if cfg.k is None else {"k": cfg.k}
    if name in ("static", "static_mms"):
        kwargs.update(E=phys.pop("E", 1e4), nu=phys.pop("nu", 0.4), diagonal=cfg.diagonal)
        # validate before the symbolic work
        ModelParams(E=kwargs["E"], nu=kwargs["nu"], alpha=0.1, kappa=1e-7, c0=1e-5)
    elif name in ("quasistatic", "quasistatic_mms"):
        kwargs["diagonal"] = cfg.diagonal
    case = get_case(name, **kwargs)
    if phys:
        if case.exact is not None:
            raise ConfigError(f"coefficients of the manufactured case {case.name!r} are fixed "
                              f"(only E, nu of the static case may be set)")
        case = dataclasses.replace(case, params=dataclasses.replace(case.params, **phys))
    if cfg.beta is not None:
        case = dataclasses.replace(case, params=dataclasses.replace(case.params, beta=cfg.beta))
    overrides = {}
    if cfg.variant is not None:
        overrides["variant"] = cfg.variant
    if cfg.scheme is not None:
        overrides["scheme"] = cfg.scheme.lower()
    if cfg.dt is not None:
        overrides["dt"] = cfg.dt
    if cfg.T is not None:
        overrides["T_final"] = cfg.T
    return dataclasses.replace(case, **overrides)


def build_mesh(cfg: RunConfig, case: BenchmarkCase):
    if cfg.mesh_file:
        mesh = read_mesh(cfg.mesh_file)
        if not mesh.is_tagged:
            raise ConfigError(f"mesh file {cfg.mesh_file} has untagged boundary facets")
        return mesh
    if cfg.nx is not None or cfg.ny is not None:
        return case.mesh(nx=cfg.nx or cfg.ny, ny=cfg.ny or cfg.nx)
    return case.mesh(cfg.n)


def versions() -> dict:
    import scipy
    import sympy
    return {"biothdg": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "sympy": sympy.__version__}


def write_manifest(out: Path, cfg: RunConfig, extra: dict) -> Path:
    path = out / "manifest.json"
    data = {"config": cfg.as_dict(), "versions": versions(), **extra}
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=str) + "\n")
    return path


# commands ---------------------------------------------------------------------------

OBSERVER_COLUMNS = ["step", "time", "X", "Y", "max_abs_p", "u_jump_rel", "z_jump_rel"]


def _observer_row(step, state, system, layout):
    X, Y = system.energy(state)
    rep = divergence_conformity_report(layout, state)
    rel = lambda j, s: j / s if s > 0 else j  # noqa: E731
    return [step, f"{state.time:.12g}", f"{X:.12e}", f"{Y:.12e}",
            f"{float(np.abs(state.p).max()):.12e}",
            f"{rel(rep['u_jump'], rep['u_scale']):.3e}", f"{rel(rep['z_jump'], rep['z_scale']):.3e}"]


def cmd_solve(cfg: RunConfig) -> int:
    t_start = time.perf_counter()
    case = build_case(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    mesh = build_mesh(cfg, case)
    mesh.validate()
    params = case.params
    layout = build_layout(mesh, params.k, case.variant)
    if case.exact is not None:
        case.exact.self_check(t_max=case.T_final or 1.0)
    logger.info("%s: %d cells, k=%d, %s, %d facet unknowns", case.name, mesh.num_cells,
                params.k, case.variant, layout.n_global)
    files, rows = [], []
    timings = {}

    if case.scheme == "static":
        t0 = time.perf_counter()
        system = BiotSystem(layout, params, static_scheme())
        final = system.solve_step([], case.data, 0.0)
        timings["solve"] = time.perf_counter() - t0
        rows.append(_observer_row(0, final, system, layout))
        if cfg.vtk:
            files.append(write_vtk(out / "fields_000000.vtk", layout, final, case.name))
        steps = 0
    else:
        if case.dt is None or case.T_final is None:
            raise ConfigError("time-dependent runs need dt and T")
        grid = TimeGrid.from_dt(case.T_final, case.dt)
        start_step = 0
        if cfg.restart:
            initial, start_step = load_checkpoint(cfg.restart, layout)
        else:
            initial = initialize(layout, params, case.exact, 0.0)
        stepper = Stepper(layout, params, case.scheme, grid.dt)

        def observe(step, state, system):
            rows.append(_observer_row(step, state, system, layout))
            if cfg.vtk and (step % cfg.vtk_every == 0 or step == grid.n_steps):
                files.append(write_vtk(out / f"fields_{step:06d}.vtk", layout, state, case.name))
            logger.info("step %d/%d t=%g", step, grid.n_steps, state.time)

        t0 = time.perf_counter()
        result = run(layout, params, grid, case.scheme, case.data, initial, observers=[observe],
                     start_step=start_step, checkpoint_dir=out if cfg.checkpoint_every else None,
                     checkpoint_every=cfg.checkpoint_every, stepper=stepper)
        timings["time_loop"] = time.perf_counter() - t0
        final, steps = result.final, result.steps

    obs_path = out / "observers.csv"
    with open(obs_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OBSERVER_COLUMNS)
        w.writerows(rows)
    files.append(obs_path)
    for x in case.line_samples:
        files.append(write_line_samples(out / f"line_x{x:.2f}.csv", sample_lines(layout, final, [x])))
    summary = {"case": case.name, "cells": mesh.num_cells, "k": params.k,
               "variant": str(case.variant), "facet_unknowns": layout.n_global,
               "total_dofs": layout.total_dofs, "steps": steps, "final_time": final.time,
               "max_abs_p": float(np.abs(final.p).max()), "mesh_hash": mesh.digest(),
               "layout_hash": layout.digest(), "params": dataclasses.asdict(params),
               "penalty": params.penalty}
    if case.exact is not None:
        rec = ErrorEvaluator(layout).record(final, case.exact, params, final.time)
        summary["errors"] = {f"e_{n}": rec.error(n) for n in FIELDS}
        (out / "errors.json").write_text(json.dumps(summary["errors"], indent=2, sort_keys=True)
                                         + "\n")
    timings["total"] = time.perf_counter() - t_start
    if not final.is_finite():
        raise SolverError("final state is not finite")
    write_manifest(out, cfg, {"command": "solve", "summary": summary, "timings": timings,
                              "outputs": [str(p) for p in files]})
    print(json.dumps(summary.get("errors", {"max_abs_p": summary["max_abs_p"]}), sort_keys=True))
    return EXIT_OK


def cmd_convergence(cfg: RunConfig) -> int:
    case = build_case(cfg)
    if case.exact is None:
        raise ConfigError(f"case {case.name!r} has no exact solution")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    k = case.params.k
    t0 = time.perf_counter()
    table = convergence_study(case, case.variant, k, cfg.levels, start=cfg.start)
    table.write_csv(out / "rates.csv")
    text = table.to_text()
    (out / "rates.txt").write_text(text + "\n")
    print(text)
    status, gates = EXIT_OK, {}
    if cfg.gate_rates is not None:
        final = table.final_rates()
        for name, need in zip(FIELDS, cfg.gate_rates):
            got = final[name]
            ok = got is None or got >= need          # None: errors at rounding level
            gates[name] = {"rate": got, "required": need, "passed": ok}
            print(f"gate r_{name}: {'exact' if got is None else f'{got:.2f}'} >= {need}: "
                  f"{'PASS' if ok else 'FAIL'}")
            if not ok:
                status = EXIT_GATE
    write_manifest(out, cfg, {"command": "convergence", "gates": gates,
                              "timings": {"total": time.perf_counter() - t0},
                              "levels": [r.cells for r in table.records]})
    return status


def cmd_verify(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    variants = cfg.variants or ["hdg", "edg-hdg"]
    degrees = cfg.degrees or [1, 2]
    results = checks.run_suite(variants, degrees)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.value:.3e} (threshold {r.threshold:.1e})")
    report = [r.as_dict() for r in results]
    (out / "verify.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    write_manifest(out, cfg, {"command": "verify",
                              "passed": sum(r.passed for r in results), "total": len(results)})
    return EXIT_OK if all(r.passed for r in results) else EXIT_GATE


COMMANDS = {"solve": cmd_solve, "convergence": cmd_convergence, "verify": cmd_verify}


# argument parsing ---------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _floats(text):
    return [float(v) for v in text.split(",")]


def _levels(text):
    vals = [int(v) for v in text.split(",")]
    return vals[0] if len(vals) == 1 else vals


def _strings(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="biothdg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file (keys as in RunConfig)")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="count", default=0)
    case = _Parser(add_help=False)
    case.add_argument("--case", help="static | quasistatic | footing | cantilever")
    case.add_argument("--variant", help="hdg | edg-hdg")
    case.add_argument("--k", type=int, help="polynomial degree")
    case.add_argument("--n", type=int, help="structured subdivisions per side")
    case.add_argument("--nx", type=int)
    case.add_argument("--ny", type=int)
    case.add_argument("--diagonal", help="right | crisscross (unit-square cases)")
    case.add_argument("--mesh-file", dest="mesh_file", help="tagged mesh file")
    case.add_argument("--scheme", help="be | bdf2 | static")
    case.add_argument("--dt", type=float)
    case.add_argument("--T", type=float, help="final time")
    for key in PHYSICAL_KEYS + ("beta",):
        case.add_argument(f"--{key}", type=float)

    p = sub.add_parser("solve", parents=[common, case], help="run one case")
    p.add_argument("--no-vtk", dest="vtk", action="store_false", default=None)
    p.add_argument("--vtk-every", dest="vtk_every", type=int)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--restart", help="checkpoint file to resume from")

    p = sub.add_parser("convergence", parents=[common, case], help="refinement study")
    p.add_argument("--levels", type=_levels, help="number of levels or comma list of n")
    p.add_argument("--start", type=int, help="coarsest n when --levels is a count")
    p.add_argument("--gate-rates", dest="gate_rates", type=_floats,
                   help="minimum final rates for u,pT,z,p")

    p = sub.add_parser("verify", parents=[common], help="property suite on small meshes")
    p.add_argument("--variants", type=_strings)
    p.add_argument("--degrees", type=_ints)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    names = {f.name for f in dataclasses.fields(RunConfig)}
    for key, value in vars(args).items():
        if key in names and value is not None:
            data[key] = value
    return RunConfig.from_dict(data)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, ParameterError, MeshError, ManufacturedSolutionError, OSError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
