"""Command-line driver: ``run``, ``adapt``, ``check-convexity``, ``solve`` and ``export-sdp``.

Run settings come from a ``key = value`` config file (``#`` starts a comment)
and are overridden by flags of the same name (``disk_level`` <-> ``--disk-level``).
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import io
from .adaptivity import AdaptConfig, AdaptiveFailure, adapt
from .femspace import FESpace, TestBasis
from .hessian import assemble, check_fe_convexity
from .mesh import PATTERNS, uniform_refine
from .problems import FUNCTIONS, PROBLEMS, get_problem
from .sdpa import read_sdpa, write_sdpa
from .sdpmodel import PROBLEM_CONSTRAINTS
from .solver import SolverConfig, SolverError, solve, validate_kkt

log = logging.getLogger("feconvex")

CSV_HEADER = "iteration,elements,dofs,wall_seconds,l2_error,linf_error"
LOCK_NAME = ".lock"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    problem: str = "monopolist"
    c: float = 0.0
    collocation: str = "vertices"
    target: str = "nonconvergence_target"
    domain: str = "unit_square"
    alpha: str = ""
    beta: str = ""
    gamma: str = ""
    f: str = ""
    v1: str = ""
    v2: str = ""
    constraints: str = ""
    pattern: str = "crisscross"
    n: int = 2
    disk_level: int = 2
    degree: int = 2
    include_boundary: bool = True
    mode: str = "adaptive"
    iterations: int = 7
    theta: float = 0.7
    bisections: int = 2
    tol: float = 1e-7
    max_iterations: int = 200
    output: str = "feconvex-out"
    vtk: bool = True

    # ---------------------------------------------------------- sources
    @classmethod
    def from_sources(cls, text: str | None = None, overrides: dict | None = None) -> "RunConfig":
        values = {}
        if text is not None:
            values.update(parse_config_text(text))
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, raw, types[key])
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {sorted(PROBLEMS)}")
        if self.degree not in (1, 2):
            raise ConfigError("degree must be 1 or 2")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.mode not in ("adaptive", "uniform"):
            raise ConfigError("mode must be 'adaptive' or 'uniform'")
        if self.pattern not in PATTERNS:
            raise ConfigError(f"unknown pattern {self.pattern!r}; choose from {sorted(PATTERNS)}")
        if self.n < 1 or self.disk_level < 0:
            raise ConfigError("n must be >= 1 and disk_level >= 0")
        if not 0 < self.theta <= 1:
            raise ConfigError("theta must lie in (0, 1]")
        if self.bisections < 1:
            raise ConfigError("bisections must be >= 1")
        if self.collocation not in ("vertices", "quadrature"):
            raise ConfigError("collocation must be 'vertices' or 'quadrature'")
        if self.tol <= 0 or self.max_iterations < 1:
            raise ConfigError("tol must be positive and max_iterations >= 1")
        out = Path(self.output)
        if out.exists() and not out.is_dir():
            raise ConfigError(f"output {out} exists and is not a directory")
        parent = out
        while not parent.exists():
            parent = parent.parent
        if not os.access(parent, os.W_OK):
            raise ConfigError(f"output directory {out} is not writable")
        self.build_problem()

    # ---------------------------------------------------------- derived
    def build_problem(self):
        try:
            if self.problem == "monopolist":
                return get_problem("monopolist", c=self.c, gradient_collocation=self.collocation)
            if self.problem.startswith("projection"):
                return get_problem(self.problem, target=_named(self.target, "target"))
            if self.problem == "custom":
                coeffs = {k: _coefficient(k, getattr(self, k))
                          for k in ("alpha", "beta", "gamma", "f", "v1", "v2") if getattr(self, k)}
                return get_problem("custom", domain=self.domain,
                                   constraints=parse_constraints(self.constraints), **coeffs)
            return get_problem(self.problem)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def adapt_config(self) -> AdaptConfig:
        return AdaptConfig(degree=self.degree, pattern=self.pattern, n=self.n,
                           disk_level=self.disk_level, include_boundary=self.include_boundary,
                           theta=self.theta, bisections=self.bisections, mode=self.mode,
                           solver=self.solver_config())

    def solver_config(self) -> SolverConfig:
        return SolverConfig(self.tol, self.tol, self.tol, self.max_iterations)


def parse_config_text(text: str) -> dict:
    if not text.strip():
        raise ConfigError("config file is empty")
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",),
                                       inline_comment_prefixes=("#",))
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    return {k.replace("-", "_"): v for k, v in parser["run"].items()}


def _coerce(key, raw, typ):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if typ in (bool, "bool"):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None
    return raw


def _named(name: str, what: str):
    try:
        return FUNCTIONS[name]
    except KeyError:
        raise ConfigError(f"unknown {what} function {name!r}; choose from {sorted(FUNCTIONS)}") from None


def _coefficient(key: str, raw: str):
    """A constant, a comma-separated pair (for ``gamma``) or a named function."""
    parts = [p for p in raw.replace(",", " ").split()]
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        return _named(raw.strip(), key)
    if len(vals) == 1:
        return vals[0]
    if len(vals) == 2 and key == "gamma":
        return np.array(vals)
    raise ConfigError(f"bad value {raw!r} for {key}")


def parse_constraints(text: str) -> tuple:
    """``"mean_zero; gradient_box lo=0 hi=1 at=vertices; point_value point=0,0 value=0"``."""
    out = []
    for item in filter(None, (s.strip() for s in text.split(";"))):
        kind, *args = item.split()
        if kind not in PROBLEM_CONSTRAINTS:
            raise ConfigError(f"unknown constraint {kind!r}; expected one of {PROBLEM_CONSTRAINTS}")
        params = {}
        for arg in args:
            if "=" not in arg:
                raise ConfigError(f"constraint argument {arg!r} is not key=value")
            k, v = arg.split("=", 1)
            try:
                nums = [float(t) for t in v.split(",")]
                params[k] = tuple(nums) if "," in v else nums[0]
            except ValueError:
                params[k] = FUNCTIONS.get(v, v)
        out.append((kind, params))
    return tuple(out)


# ------------------------------------------------------------ output
def _fmt6(v) -> str:
    return "" if v is None else f"{v:.6g}"


def csv_row(rec) -> str:
    return ",".join([str(rec.iteration), str(rec.elements), str(rec.dofs),
                     _fmt6(rec.wall_seconds), _fmt6(rec.l2_error), _fmt6(rec.linf_error)])


class OutputLock:
    """Exclusive lock file inside the output directory."""

    def __init__(self, directory: Path):
        self.path = Path(directory) / LOCK_NAME

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(f"{self.path.parent} is in use by another run ({self.path} exists)") from None
        with os.fdopen(fd, "w") as fh:
            fh.write(f"{os.getpid()}\n")
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


def run(cfg: RunConfig) -> int:
    """Execute a validated configuration; returns the process exit code."""
    problem = cfg.build_problem()
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    with OutputLock(out):
        table = out / "table.csv"
        with table.open("w") as fh:
            fh.write(CSV_HEADER + "\n")

            def snapshot(state):
                rec = state.record
                fh.write(csv_row(rec) + "\n")
                fh.flush()
                tag = f"{rec.iteration:03d}"
                report = state.result.to_record()
                report.update(iteration=rec.iteration, elements=rec.elements, dofs=rec.dofs,
                              eta_max=rec.eta_max, l2_error=rec.l2_error, linf_error=rec.linf_error)
                io.write_json(report, out / f"solver_{tag}.json")
                if cfg.vtk:
                    io.write_vtk(state.space, out / f"solution_{tag}.vtk", state.coeffs,
                                 {"eta": state.indicators.eta}, title=f"{problem.name} iteration {tag}")
                print(f"iteration {rec.iteration}: {rec.elements} elements, {rec.dofs} dofs, "
                      f"{rec.status}, objective {_fmt6(rec.objective)}"
                      + (f", L2 error {_fmt6(rec.l2_error)}" if rec.l2_error is not None else ""))

            failure = None
            try:
                result = adapt(problem, cfg.iterations, cfg.adapt_config(), callback=snapshot)
            except (AdaptiveFailure, SolverError) as exc:
                failure = exc
                result = getattr(exc, "run", None)
        summary = {"config": asdict(cfg), "converged": bool(result and result.converged),
                   "records": [asdict(r) for r in (result.records if result else [])],
                   "failure": None if failure is None else str(failure)}
        io.write_json(summary, out / "run.json")
    if failure is not None:
        print(f"error: {failure}", file=sys.stderr)
        return 2
    return 0


# ------------------------------------------------------------ subcommands
def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value config file")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type in (bool, "bool"):
            p.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        else:
            p.add_argument(flag, dest=f.name, default=None,
                           help=f"(default {f.default!r})" if f.default != "" else None)
    p.add_argument("--iters", dest="iterations", default=None, help="alias of --iterations")
    p.add_argument("-o", dest="output", default=None, help="alias of --output")


def _load_run_config(args, **forced) -> RunConfig:
    text = None
    if args.config is not None:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig)}
    overrides.update(forced)
    return RunConfig.from_sources(text, overrides)


def cmd_run(args, **forced) -> int:
    return run(_load_run_config(args, **forced))


def cmd_check_convexity(args) -> int:
    mesh = io.read_mesh(args.mesh)
    coeffs = io.read_dofs(args.dofs)
    if len(coeffs) == mesh.n_vertices:
        degree = 1
    elif len(coeffs) == mesh.n_vertices + mesh.n_edges:
        degree = 2
    else:
        raise ConfigError(f"{len(coeffs)} values fit neither P1 ({mesh.n_vertices}) "
                          f"nor P2 ({mesh.n_vertices + mesh.n_edges}) on this mesh")
    space = FESpace(mesh, degree)
    test = TestBasis(mesh, args.include_boundary, degree=args.test_degree or degree)
    forms = assemble(space, test, with_boundary=args.include_boundary)
    report = check_fe_convexity(forms, coeffs, args.tol)
    print(f"{'test':>6} {'kind':>6} {'x':>12} {'y':>12} {'min_eigenvalue':>16}")
    # location of each test function: its vertex or the midpoint of its edge
    where = np.where(test.kind[:, None] == 0, mesh.points[np.minimum(test.node, mesh.n_vertices - 1)],
                     mesh.points[mesh.edges[np.minimum(test.node, mesh.n_edges - 1)]].mean(axis=1))
    order = np.argsort(report.min_eigenvalues, kind="stable")
    if args.limit:
        order = order[: args.limit]
    for s in order:
        kind = "vertex" if test.kind[s] == 0 else "edge"
        print(f"{s:>6} {kind:>6} {where[s, 0]:>12.6g} {where[s, 1]:>12.6g} "
              f"{report.min_eigenvalues[s]:>16.6g}")
    verdict = "FE-convex" if report.is_fe_convex else "NOT FE-convex"
    print(f"verdict: {verdict} (worst test {report.worst_index}, "
          f"min eigenvalue {report.worst_eigenvalue:.6g}, tol {args.tol:g})")
    return 0 if report.is_fe_convex else 1


def cmd_solve(args) -> int:
    prog = read_sdpa(args.file)
    cfg = SolverConfig(args.tol, args.tol, args.tol, args.max_iterations)
    result = solve(prog, cfg)
    record = result.to_record()
    record["kkt"] = validate_kkt(prog, result)
    print(f"status {result.status}, objective {result.primal_objective:.6g}, "
          f"{result.iterations} iterations")
    if args.output:
        io.write_json(record, args.output)
    return 0 if result.status == "optimal" else 2


def cmd_export_sdp(args) -> int:
    cfg = _load_run_config(args)
    if args.refine < 0:
        raise ConfigError("--refine must be >= 0")
    problem = cfg.build_problem()
    mesh = problem.initial_mesh(cfg.pattern, cfg.n, cfg.disk_level)
    if args.refine:
        mesh = uniform_refine(mesh, 2 * args.refine)
    space = FESpace(mesh, cfg.degree)
    sdp = problem.build(space, TestBasis(mesh, cfg.include_boundary, degree=cfg.degree))
    prog = sdp.to_cone_program()
    write_sdpa(prog, args.file)
    print(f"wrote {args.file}: {prog.n} variables, {prog.l + 2 * prog.A.shape[0]} diagonal rows, "
          f"{sum(c for _, c in prog.psd)} PSD blocks")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="feconvex", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="solve on a sequence of meshes, writing CSV/VTK/JSON")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("adapt", help="alias for run --mode adaptive")
    _add_run_flags(p)
    p.set_defaults(func=lambda a: cmd_run(a, mode="adaptive"))

    p = sub.add_parser("check-convexity", help="FE-convexity of a DOF vector on a dumped mesh")
    p.add_argument("mesh", help="mesh dump file")
    p.add_argument("dofs", help="one coefficient per line")
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--test-degree", type=int, choices=(1, 2), default=None)
    p.add_argument("--include-boundary", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--limit", type=int, default=0, help="print only the N worst tests")
    p.set_defaults(func=cmd_check_convexity)

    p = sub.add_parser("solve", help="solve an SDPA sparse (.dat-s) file")
    p.add_argument("file")
    p.add_argument("--output", help="JSON result record")
    p.add_argument("--tol", type=float, default=1e-7)
    p.add_argument("--max-iterations", type=int, default=200)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("export-sdp", help="write the SDP of a configured problem as .dat-s")
    p.add_argument("file", help="destination .dat-s")
    _add_run_flags(p)
    p.add_argument("--refine", type=int, default=0, help="uniform refinement steps (x4 elements each)")
    p.set_defaults(func=cmd_export_sdp)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
