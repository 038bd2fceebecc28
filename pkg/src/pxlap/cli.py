"""Command-line front end.

Configuration is read from ``key = value`` text (``#`` starts a comment);
command-line flags override file values. Every command writes its data files
plus ``manifest.json`` into ``out_dir``. Exit codes: 0 success, 2 config
error, 3 solver failure, 4 contract or verification failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import energy as en
from .blowup import blowup_box_grid, parabolic_blowup, principal_eigenvalue
from .branches import (BracketError, bifurcation_scan, broken_jacobian, estimate_lambda_star,
                       verify_suite)
from .mesh import DomainSpec, GridError, build_grid
from .mountain_pass import COLLAPSED, FOUND, MPParams, default_peak, mountain_pass
from .solvers import SolverError, SolverParams, minimize_truncated, monotone_iteration

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CONTRACT = 0, 2, 3, 4
COMMANDS = ("solve-minimal", "lambda-star", "bifurcation", "mountain-pass", "blowup-demo",
            "verify")


class ConfigError(ValueError):
    def __init__(self, msg, key=None, line=None):
        where = f" (key {key!r}, {line})" if key else ""
        super().__init__(msg + where)
        self.key, self.line = key, line


class ContractError(RuntimeError):
    """A command ran but its result does not meet the command's contract."""


@dataclass
class RunConfig:
    dimension: int = 1
    x_lo: float = 0.0
    x_hi: float = 1.0
    a: float = 0.4
    b: float = 0.6
    p: float = 3.0
    q: float = 1.5
    n: int = 201
    lam: float | None = None
    lambda_list: list = field(default_factory=list)
    newton_tol: float = 1e-10
    monotone_tol: float = 1e-9
    m_cap: float = 1e6
    mp_path_nodes: int = 41
    mp_tol: float = 1e-6
    seed: int = 42
    out_dir: str = "out"

    def domain(self) -> DomainSpec:
        return DomainSpec(self.dimension, self.x_lo, self.x_hi, self.a, self.b, self.p, self.q)

    def solver_params(self) -> SolverParams:
        return SolverParams(newton_tol=self.newton_tol, monotone_tol=self.monotone_tol,
                            m_cap=self.m_cap)

    def mp_params(self) -> MPParams:
        return MPParams(path_nodes=self.mp_path_nodes, tol=self.mp_tol)

    def echo(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


# config key -> (RunConfig attribute, parser, help text)
KEYS = {
    "dimension": ("dimension", int, "spatial dimension, 1 or 2"),
    "x_lo": ("x_lo", float, "lower end of the outer interval (each axis in 2D)"),
    "x_hi": ("x_hi", float, "upper end of the outer interval"),
    "a": ("a", float, "lower end of the p-region"),
    "b": ("b", float, "upper end of the p-region"),
    "p": ("p", float, "exponent in the p-region, > 2"),
    "q": ("q", float, "source power, 2 < q+1 < p"),
    "n": ("n", int, "nodes per axis (snapped up to align the p-region)"),
    "lambda": ("lam", float, "source strength"),
    "lambda_list": ("lambda_list", lambda s: [float(t) for t in s.split(",") if t.strip()],
                    "comma-separated lambda values for bifurcation"),
    "newton_tol": ("newton_tol", float, "Newton residual tolerance"),
    "monotone_tol": ("monotone_tol", float, "monotone-iteration increment tolerance"),
    "m_cap": ("m_cap", float, "divergence cap on the sup-norm"),
    "mp_path_nodes": ("mp_path_nodes", int, "mountain-pass path nodes"),
    "mp_tol": ("mp_tol", float, "mountain-pass residual tolerance"),
    "seed": ("seed", int, "seed for randomized checks"),
    "out_dir": ("out_dir", str, "output directory"),
}


def _read_pairs(path):
    """``[(key, raw value, location)]`` from a config file."""
    pairs = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read config file: {err}") from err
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"malformed line {raw.strip()!r}, expected key = value",
                              line.split()[0], f"{path}:{no}")
        key, value = (t.strip() for t in line.split("=", 1))
        pairs.append((key, value, f"{path}:{no}"))
    return pairs


def parse_config(path=None, overrides=None) -> tuple[RunConfig, dict]:
    """Build a validated :class:`RunConfig`.

    ``overrides`` maps keys to raw string values and wins over the file.
    Returns the config and a map from key to where its value came from.
    """
    pairs = _read_pairs(path) if path else []
    pairs += [(k, v, f"--{k.replace('_', '-')}") for k, v in (overrides or {}).items()
              if v is not None]
    cfg = RunConfig()
    where = {}
    for key, raw, loc in pairs:
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", key, loc)
        attr, conv, _ = KEYS[key]
        try:
            value = conv(raw)
        except ValueError as err:
            raise ConfigError(f"cannot parse {raw!r} as {getattr(conv, '__name__', 'list')}",
                              key, loc) from err
        if isinstance(value, float) and not math.isfinite(value):
            raise ConfigError(f"value {raw!r} is not finite", key, loc)
        setattr(cfg, attr, value)
        where[key] = loc
    try:
        cfg.domain()
        cfg.solver_params()
        if cfg.mp_path_nodes < 3 or cfg.mp_tol <= 0:
            raise ConfigError("need mp_path_nodes >= 3 and mp_tol > 0", "mp_path_nodes",
                              where.get("mp_path_nodes", "default"))
        if cfg.n < 5:
            raise GridError(f"need at least 5 nodes per axis, got {cfg.n}", "n")
    except GridError as err:
        key = err.key or "n"
        raise ConfigError(str(err), key, where.get(key, "default")) from err
    except ConfigError:
        raise
    except ValueError as err:
        key = next((k for k in ("newton_tol", "monotone_tol", "m_cap") if k in str(err)), None)
        raise ConfigError(str(err), key, where.get(key, "default")) from err
    return cfg, where


# -- output helpers -----------------------------------------------------------

def _num(x) -> str:
    return "%.17g" % x


def write_field_csv(path, grid, u):
    pts = grid.points
    header = ["x", "y"][: grid.dim] + ["u"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for xy, val in zip(pts, u):
            w.writerow([_num(c) for c in xy] + [_num(val)])


def _config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.echo(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _versions() -> dict:
    return {"pxlap": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, default=_json_default) + "\n",
                          encoding="utf-8")


# -- commands -------------------------------------------------------------------

def _minimal(lam, grid, params):
    out = monotone_iteration(lam, grid, params)
    if not out.converged:
        raise SolverError(f"monotone iteration {out.status} at lambda={lam:.6g}")
    return out.solution


def _lambda_lo(cfg, grid, params, args):
    if getattr(args, "lambda_star_lo", None) is not None:
        return args.lambda_star_lo, None
    est = estimate_lambda_star(grid, params=params)
    return est.lo, est


def cmd_solve_minimal(cfg, args, grid, out):
    if cfg.lam is None:
        raise ConfigError("solve-minimal needs a lambda", "lambda", "missing")
    res = monotone_iteration(cfg.lam, grid, cfg.solver_params())
    info = {"lambda": cfg.lam, "status": res.status, "iterations": res.iterations,
            "residual_norm": res.residual_norm, "monotone_violation": res.monotone_violation,
            "sup_norms": res.iterates_sup_norms}
    if res.converged:
        write_field_csv(out / "solution.csv", grid, res.solution)
        info["files"] = ["solution.csv"]
        nr = en.norms(res.solution, grid)
        info["norms"] = asdict(nr)
        return EXIT_OK, res.status, info
    return EXIT_SOLVER, res.status, info


def cmd_lambda_star(cfg, args, grid, out):
    est = estimate_lambda_star(grid, tol=args.tol, params=cfg.solver_params())
    (out / "lambda_star.json").write_text(est.to_json() + "\n", encoding="utf-8")
    (out / "lambda_star.csv").write_text(est.to_csv(), encoding="utf-8")
    info = {"lo": est.lo, "hi": est.hi, "rel_width": est.rel_width, "stalled": est.stalled,
            "message": est.message, "files": ["lambda_star.json", "lambda_star.csv"]}
    ok = est.converged and est.rel_width <= args.tol
    return (EXIT_OK if ok else EXIT_CONTRACT), ("Bracketed" if ok else "Unrefined"), info


def cmd_bifurcation(cfg, args, grid, out):
    if not cfg.lambda_list:
        raise ConfigError("bifurcation needs lambda_list", "lambda_list", "missing")
    params = cfg.solver_params()
    lo = None
    if args.with_second:
        lo, _ = _lambda_lo(cfg, grid, params, args)
    table = bifurcation_scan(grid, cfg.lambda_list, args.with_second, params, lo,
                             cfg.mp_params())
    (out / "branches.csv").write_text(table.to_csv(), encoding="utf-8")
    (out / "branches.json").write_text(table.to_json() + "\n", encoding="utf-8")
    info = {"lambda_star_lo": lo, "rows": len(table.rows),
            "files": ["branches.csv", "branches.json"]}
    ok = all(r.min_status == "Converged" for r in table.rows) and table.minimal_monotone()
    return (EXIT_OK if ok else EXIT_CONTRACT), ("Complete" if ok else "RowFailures"), info


def cmd_mountain_pass(cfg, args, grid, out):
    params, mp = cfg.solver_params(), cfg.mp_params()
    lo, _ = _lambda_lo(cfg, grid, params, args)
    lam = 0.5 * lo if cfg.lam is None else cfg.lam
    if not 0 < lam < lo:
        raise ContractError(f"lambda={lam:.6g} must lie in (0, {lo:.6g})")
    u1 = _minimal(0.9 * lam, grid, params)
    u2 = _minimal(min(1.1 * lam, lo), grid, params)
    ut = minimize_truncated(lam, u1, u2, grid, params)
    peak = default_peak(lam, ut, u1, grid, drop=mp.peak_drop)
    res = mountain_pass(lam, ut, peak, u1, grid, mp, params)
    write_field_csv(out / "utilde.csv", grid, ut)
    files = ["utilde.csv"]
    if res.critical_point is not None:
        write_field_csv(out / "critical_point.csv", grid, res.critical_point)
        files.append("critical_point.csv")
    info = {"lambda": lam, "lambda_star_lo": lo, "status": res.status, "level": res.level,
            "base_level": res.base_level, "residual_norm": res.residual_norm,
            "iterations": res.iterations, "files": files}
    if res.status == FOUND:
        return EXIT_OK, res.status, info
    if res.status == COLLAPSED and abs(res.path_max_level - res.base_level) <= mp.collapse_tol:
        return EXIT_OK, res.status, info
    return EXIT_SOLVER, res.status, info


def ode_blowup_bound(lam, q, y0, eig):
    """Blow-up time of ``y' = lam y^q - eig y`` from ``y0`` (inf if it does not blow up)."""
    from scipy.integrate import quad

    if lam <= 0 or y0 <= (eig / lam) ** (1.0 / (q - 1.0)):
        return math.inf
    val, _ = quad(lambda y: 1.0 / (lam * y ** q - eig * y), y0, math.inf, limit=200)
    return val


def cmd_blowup(cfg, args, grid, out):
    lam = 50.0 if cfg.lam is None else cfg.lam
    box, _ = blowup_box_grid(grid)
    z0 = np.where(box.boundary, 0.0, args.z0)
    rep = parabolic_blowup(lam, z0, box, dt0=args.dt0, t_max=args.t_max,
                           threshold=args.threshold)
    with open(out / "supnorm_trace.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "sup"])
        w.writerows([_num(t), _num(s)] for t, s in zip(rep.times, rep.supnorm_trace))
    bound = ode_blowup_bound(lam, box.q, args.z0, principal_eigenvalue(box))
    info = {"lambda": lam, "z0": args.z0, "blew_up": rep.blew_up, "t_event": rep.t_event,
            "final_time": rep.final_time, "ode_bound": None if math.isinf(bound) else bound,
            "steps": len(rep.times) - 1, "files": ["supnorm_trace.csv"]}
    code = EXIT_SOLVER if rep.status == "Inconclusive" else EXIT_OK
    return code, rep.status, info


def cmd_verify(cfg, args, grid, out):
    jac = broken_jacobian if args.fault == "jacobian" else None
    rep = verify_suite(grid, cfg.solver_params(), seed=cfg.seed, jacobian=jac)
    (out / "verify.json").write_text(rep.to_json() + "\n", encoding="utf-8")
    for c in rep.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.measured:.3e} "
              f"(threshold {c.threshold:.1e})")
    info = {"passed": rep.passed, "fault": args.fault, "files": ["verify.json"],
            "failed": [c.name for c in rep.checks if not c.passed]}
    return (EXIT_OK if rep.passed else EXIT_CONTRACT), ("Pass" if rep.passed else "Fail"), info


HANDLERS = {"solve-minimal": cmd_solve_minimal, "lambda-star": cmd_lambda_star,
            "bifurcation": cmd_bifurcation, "mountain-pass": cmd_mountain_pass,
            "blowup-demo": cmd_blowup, "verify": cmd_verify}


# -- argument parsing -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    defaults = RunConfig().echo()
    for key, (_, _, text) in KEYS.items():
        flags = [f"--{key.replace('_', '-')}"]
        if "_" in key:
            flags.append(f"--{key}")
        common.add_argument(*flags, dest=f"cfg_{key}", metavar="V",
                            help=f"{text} (default: {defaults[key]})")
    parser = argparse.ArgumentParser(prog="pxlap", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve-minimal", parents=[common], help="minimal solution at lambda")
    p = sub.add_parser("lambda-star", parents=[common], help="bracket the existence threshold")
    p.add_argument("--tol", type=float, default=1e-2, help="relative bracket width")
    p = sub.add_parser("bifurcation", parents=[common], help="branch table over lambda_list")
    p.add_argument("--with-second", action="store_true", help="also run the mountain pass")
    p.add_argument("--lambda-star-lo", type=float, help="skip the threshold estimate")
    p = sub.add_parser("mountain-pass", parents=[common],
                       help="second solution (default lambda: half the threshold)")
    p.add_argument("--lambda-star-lo", type=float, help="skip the threshold estimate")
    p = sub.add_parser("blowup-demo", parents=[common],
                       help="parabolic blow-up on an interior box (default lambda 50)")
    p.add_argument("--z0", type=float, default=10.0, help="constant initial value")
    p.add_argument("--dt0", type=float, default=1e-4)
    p.add_argument("--t-max", type=float, default=10.0)
    p.add_argument("--threshold", type=float, default=1e6)
    p = sub.add_parser("verify", parents=[common], help="run the invariant battery")
    p.add_argument("--fault", choices=["jacobian"], help="inject a broken Jacobian")
    return parser


def _fail(out_dir, command, kind, code, err, extra=None):
    payload = {"status": "error", "command": command, "kind": kind, "exit_code": code,
               "message": str(err), **(extra or {})}
    print(json.dumps(payload), file=sys.stderr)
    try:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        _dump(Path(out_dir) / "error.json", payload)
    except OSError:
        pass
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_")}
    out_dir = overrides.get("out_dir") or RunConfig.out_dir
    try:
        cfg, _ = parse_config(args.config, overrides)
        grid = build_grid(cfg.domain(), cfg.n)
    except ConfigError as err:
        return _fail(out_dir, args.command, "config", EXIT_CONFIG, err,
                     {"key": err.key, "line": err.line})
    except GridError as err:
        return _fail(out_dir, args.command, "config", EXIT_CONFIG, err, {"key": "n"})
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        code, status, info = HANDLERS[args.command](cfg, args, grid, out)
    except ConfigError as err:
        return _fail(out, args.command, "config", EXIT_CONFIG, err,
                     {"key": err.key, "line": err.line})
    except (SolverError, BracketError) as err:
        return _fail(out, args.command, "solver", EXIT_SOLVER, err)
    except ContractError as err:
        return _fail(out, args.command, "contract", EXIT_CONTRACT, err)
    manifest = {
        "command": args.command,
        "status": status,
        "exit_code": code,
        "config": cfg.echo(),
        "config_hash": _config_hash(cfg),
        "seed": cfg.seed,
        "grid": {"shape": list(grid.shape), "h": list(grid.h)},
        "versions": _versions(),
        "timings": {"total_seconds": time.perf_counter() - t0},
        "result": info,
    }
    _dump(out / "manifest.json", manifest)
    if code != EXIT_OK:
        _fail(out, args.command, "solver" if code == EXIT_SOLVER else "contract", code,
              f"{args.command} finished with status {status}")
    print(f"{args.command}: {status} -> {out}")
    return code


if __name__ == "__main__":
    sys.exit(main())
