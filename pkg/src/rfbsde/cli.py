"""Config-driven experiment runner.

Config grammar (TOML; a ``.json`` file with the same structure is accepted)::

    seed = 7                      # required; no entropy default
    output = "runs/heat"          # optional, overridden by --out

    [problem]
    name = "heat-neumann"         # built-in name, or "inline"
    # built-in extras: lam (manufactured-neumann), a (linear-delay)
    # inline: drift = [..], sigma = 1.0, terminal = "cos-pi" | "exp" | "identity" | "constant",
    #         terminal_value = 1.0, L = 1.0

    [domain]
    id = "interval"               # or "ball"
    dimension = 1

    [grid]
    horizon = 0.5
    steps = 500
    delay = 0.1

    [initial]
    kind = "constant"             # constant | ramp | csv
    x = [0.25]                    # constant
    t = 0.0                       # start time (constant, ramp)
    # ramp: x_start, x_end; csv: path (columns time, x0..), optional k_path

    [[operations]]
    op = "evaluate_u"             # see OPERATIONS
    samples = 10000
    points = [[0.0, 0.25]]        # optional (t, x) pairs with constant history

Every operation accepts ``seed`` (defaults to the top-level seed),
``samples``, ``basis`` and ``picard = {max_iter, tol, damping}`` where
relevant.  Result files are a pure function of the config bytes; wall-clock
timings and the thread count go to ``timings.json`` only.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import analysis, benchmarks
from .backward import PicardConfig, basis as make_basis, write_backward_csv, write_picard_log
from .errors import ConfigError, InvalidArgumentError, NumericalError
from .forward import exp_moment, local_time_identity, simulate_forward
from .geometry import PenaltyField, from_id
from .paths import InitialCondition, TimeGrid, read_path_csv
from .problem import AssumptionParams, check_h1_h2, validate_lipschitz

EXIT_OK, EXIT_ASSUMPTIONS, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3

TOP_KEYS = {"seed", "output", "problem", "domain", "grid", "initial", "operations"}
SECTION_KEYS = {
    "problem": {"name", "lam", "a", "drift", "sigma", "terminal", "terminal_value", "L"},
    "domain": {"id", "dimension"},
    "grid": {"horizon", "steps", "delay"},
    "initial": {"kind", "x", "t", "x_start", "x_end", "path", "k_path"},
}
COMMON_OP_KEYS = {"op", "seed", "samples"}
OPERATIONS = {
    "evaluate_u": {"points", "basis", "picard", "past"},
    "simulate": set(),
    "solve": {"basis", "picard"},
    "exp_moment": {"q_list"},
    "local_time": set(),
    "penalization_sweep": {"n_list", "basis", "picard"},
    "gradient": {"epsilon", "n_trunc", "basis", "picard"},
}
TERMINALS = {
    "cos-pi": lambda x, c: np.cos(np.pi * x[:, 0]),
    "exp": lambda x, c: np.exp(x[:, 0]),
    "identity": lambda x, c: x[:, 0].copy(),
    "constant": lambda x, c: np.full(x.shape[0], c),
}

log = logging.getLogger(__name__)


# ------------------------------------------------------------------ config

@dataclass
class ExperimentConfig:
    raw: dict
    seed: int
    problem: object
    domain: object
    grid: TimeGrid
    initial: InitialCondition
    operations: list
    output: str | None = None


def _check_keys(where: str, got: dict, allowed: set) -> None:
    unknown = sorted(set(got) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"missing key {where}.{key}")
    return section[key]


def load_raw(path: Path) -> dict:
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix == ".json":
            return json.loads(data)
        return tomllib.loads(data.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc


def _build_problem(sec: dict, grid: TimeGrid, dimension: int):
    name = _require(sec, "name", "problem")
    if name == "inline":
        terminal = sec.get("terminal", "constant")
        if terminal not in TERMINALS:
            raise ConfigError(f"problem.terminal must be one of {sorted(TERMINALS)}")
        c = float(sec.get("terminal_value", 0.0))
        fn = TERMINALS[terminal]
        drift = sec.get("drift", 0.0)
        return benchmarks.simple_problem(
            "inline", drift, float(sec.get("sigma", 1.0)), dimension,
            benchmarks.state_terminal(lambda x: fn(x, c)),
            params=AssumptionParams(L=float(sec.get("L", 1.0))))
    if name not in benchmarks.BUILTIN:
        raise ConfigError(f"unknown problem {name!r}; built-ins: {sorted(benchmarks.BUILTIN)}")
    cfg = {k: v for k, v in sec.items() if k != "name"}
    cfg["horizon"] = grid.horizon
    return benchmarks.BUILTIN[name](cfg)


def _build_initial(sec: dict, grid: TimeGrid, base: Path) -> InitialCondition:
    kind = sec.get("kind", "constant")
    t = float(sec.get("t", 0.0))
    if kind == "constant":
        return InitialCondition.constant(grid, _require(sec, "x", "initial"), t)
    if kind == "ramp":
        return InitialCondition.ramp(grid, _require(sec, "x_start", "initial"),
                                     _require(sec, "x_end", "initial"), t)
    if kind == "csv":
        path = base / _require(sec, "path", "initial")
        if not path.exists():
            raise ConfigError(f"initial path file {path} does not exist")
        phi = read_path_csv(path, grid)
        varphi = None
        if "k_path" in sec:
            kpath = base / sec["k_path"]
            if not kpath.exists():
                raise ConfigError(f"reflection path file {kpath} does not exist")
            varphi = read_path_csv(kpath, grid).values
        return InitialCondition.from_arrays(grid, phi.values, varphi)
    raise ConfigError(f"initial.kind must be constant, ramp or csv, not {kind!r}")


def parse_config(raw: dict, base: Path = Path(".")) -> ExperimentConfig:
    """Validate and resolve a raw config mapping; raises ``ConfigError``."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a table")
    _check_keys("top level", raw, TOP_KEYS)
    for sec, allowed in SECTION_KEYS.items():
        _check_keys(sec, raw.get(sec, {}), allowed)
    seed = _require(raw, "seed", "config")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    ops = raw.get("operations", [])
    for i, op in enumerate(ops):
        name = _require(op, "op", f"operations[{i}]")
        if name not in OPERATIONS:
            raise ConfigError(f"unknown operation {name!r}; known: {sorted(OPERATIONS)}")
        _check_keys(f"operations[{i}] ({name})", op, COMMON_OP_KEYS | OPERATIONS[name])
        if "picard" in op:
            _check_keys(f"operations[{i}].picard", op["picard"], {"max_iter", "tol", "damping"})
    g = raw.get("grid", {})
    try:
        grid = TimeGrid(float(_require(g, "horizon", "grid")), int(_require(g, "steps", "grid")),
                        float(_require(g, "delay", "grid")))
        dsec = raw.get("domain", {})
        domain = from_id(dsec.get("id", "interval"), int(dsec.get("dimension", 1)))
        problem = _build_problem(raw.get("problem", {}), grid, domain.dimension)
        initial = _build_initial(raw.get("initial", {}), grid, base)
        initial.validate(domain)
    except InvalidArgumentError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(raw, seed, problem, domain, grid, initial, ops, raw.get("output"))


# ------------------------------------------------------------- reporting

class _WarningCollector(logging.Handler):
    def __init__(self):
        super().__init__(logging.WARNING)
        self.messages: list[str] = []

    def emit(self, record):
        self.messages.append(record.getMessage())


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path: Path, header: list, rows: list, cfg: ExperimentConfig, seed: int) -> None:
    """CSV with the resolved config and seed as leading comment lines."""
    buf = io.StringIO()
    buf.write(f"# seed: {seed}\n")
    buf.write(f"# config: {json.dumps(cfg.raw, sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path.write_text(buf.getvalue())


def _with_comment(path: Path, cfg: ExperimentConfig, seed: int) -> None:
    body = path.read_text()
    path.write_text(f"# seed: {seed}\n# config: {json.dumps(cfg.raw, sort_keys=True)}\n" + body)


def _picard(op) -> PicardConfig:
    p = op.get("picard", {})
    return PicardConfig(int(p.get("max_iter", 20)), float(p.get("tol", 1e-6)),
                        float(p.get("damping", 1.0)))


# ------------------------------------------------------------ operations

def _op_evaluate_u(cfg, op, seed, samples, out, threads):
    rbasis = make_basis(op.get("basis", "poly2-state"))
    picard = _picard(op)
    rows = []
    if "points" in op:
        inits = [(float(t), InitialCondition.constant(cfg.grid, x if isinstance(x, list) else [x], float(t)))
                 for t, x in op["points"]]
    else:
        inits = [(cfg.initial.start_time, cfg.initial)]
    for t, init in inits:
        init.validate(cfg.domain)
        est = analysis.evaluate_u(cfg.problem, cfg.domain, t, init, cfg.grid, samples, seed,
                                  rbasis, picard, op.get("past", "recursive"), threads)
        x = init.phi.values[-1]
        rows.append([t] + list(x) + [est.value, est.stderr, samples])
    d = cfg.domain.dimension
    header = ["t"] + [f"x{i}" for i in range(d)] + ["u", "stderr", "samples"]
    return {"u.csv": (header, rows)}


def _op_simulate(cfg, op, seed, samples, out, threads):
    ens = simulate_forward(cfg.problem, cfg.domain, cfg.initial, cfg.grid, samples, seed, threads)
    d = cfg.domain.dimension
    mean = ens.X.mean(axis=0)
    rows = [[t] + list(mean[k]) + [ens.A[:, k].mean(), ens.A[:, k].std(ddof=1) if samples > 1 else 0.0]
            for k, t in enumerate(cfg.grid.times)]
    header = ["time"] + [f"mean_x{i}" for i in range(d)] + ["mean_A", "sd_A"]
    return {"forward_summary.csv": (header, rows)}


def _op_solve(cfg, op, seed, samples, out, threads, name):
    sol = analysis.solve(cfg.problem, cfg.domain, cfg.initial, cfg.grid, samples, seed,
                         make_basis(op.get("basis", "poly2-state")), _picard(op), None, threads)
    back = sol.backward
    files = {}
    bpath = out / f"{name}_backward.csv"
    write_backward_csv(back, bpath)
    _with_comment(bpath, cfg, seed)
    ppath = out / f"{name}_picard.jsonl"
    write_picard_log(back, ppath)
    k0 = back.start_index
    rows = [[t, back.Y[:, k].mean(), back.regression_noise[k]]
            for k, t in enumerate(cfg.grid.times) if k >= k0]
    files["summary.csv"] = (["time", "mean_Y", "regression_noise"], rows)
    files["_extra"] = [bpath.name, ppath.name]
    files["_warnings"] = list(back.warnings)
    return files


def _op_exp_moment(cfg, op, seed, samples, out, threads):
    ens = simulate_forward(cfg.problem, cfg.domain, cfg.initial, cfg.grid, samples, seed, threads)
    rows = []
    for q in op.get("q_list", [0.5, 1.0]):
        est = exp_moment(ens, float(q))
        rows.append([float(q), est.value, est.stderr, samples])
    return {"exp_moment.csv": (["q", "value", "stderr", "samples"], rows)}


def _op_local_time(cfg, op, seed, samples, out, threads):
    ens = simulate_forward(cfg.problem, cfg.domain, cfg.initial, cfg.grid, samples, seed, threads)
    res = local_time_identity(ens, cfg.problem, cfg.domain)
    return {"local_time.csv": (["dt", "mean_abs_residual", "samples"], [[cfg.grid.dt, res, samples]])}


def _op_penalization_sweep(cfg, op, seed, samples, out, threads):
    n_list = [float(n) for n in _require(op, "n_list", "penalization_sweep")]
    rows = analysis.penalization_sweep(cfg.problem, PenaltyField(cfg.domain), cfg.initial,
                                       cfg.grid, n_list, samples, seed,
                                       make_basis(op.get("basis", "poly2-state")), _picard(op))
    header = ["n", "status", "x_sup_error", "x_sup_se", "a_error", "a_se", "y_error", "y_se",
              "z_error", "z_se"]
    table = [[r.n, r.status, r.x_sup_error, r.x_sup_se, r.a_error, r.a_se, r.y_error, r.y_se,
              r.z_error, r.z_se] for r in rows]
    warnings = [f"penalization n={r.n:g} skipped: {r.message}" for r in rows if r.status != "ok"]
    return {"penalization.csv": (header, table), "_warnings": warnings}


def _op_gradient(cfg, op, seed, samples, out, threads):
    sol = analysis.solve(cfg.problem, cfg.domain, cfg.initial, cfg.grid, samples, seed,
                         make_basis(op.get("basis", "poly2-state")), _picard(op), None, threads)
    eps = float(op.get("epsilon", 5 * cfg.grid.dt))
    if eps < cfg.grid.dt * (1 - 1e-9):
        raise InvalidArgumentError("epsilon is smaller than the time step")
    steps = int(round(eps / cfg.grid.dt))
    if abs(steps * cfg.grid.dt - eps) > 1e-9 * eps:
        raise InvalidArgumentError("epsilon must be a multiple of the time step")
    k0, D = sol.forward.start_index, cfg.grid.delay_steps
    last = min(cfg.grid.steps - D, cfg.grid.steps - steps)
    ge = analysis.gradient_from_values(sol.forward, sol.backward.Y, steps,
                                       float(op.get("n_trunc", 1e3)), np.arange(k0, last + 1))
    zbar = sol.backward.Z[:, ge.nodes].mean(axis=0)
    dp = zbar.shape[-1]
    rows = [[cfg.grid.times[k]] + list(ge.values[i]) + list(ge.stderr[i]) + list(zbar[i])
            for i, k in enumerate(ge.nodes)]
    header = (["time"] + [f"zeta{j}" for j in range(dp)] + [f"zeta{j}_se" for j in range(dp)]
              + [f"z{j}" for j in range(dp)])
    return {"gradient.csv": (header, rows)}


DISPATCH = {
    "evaluate_u": _op_evaluate_u,
    "simulate": _op_simulate,
    "exp_moment": _op_exp_moment,
    "local_time": _op_local_time,
    "penalization_sweep": _op_penalization_sweep,
    "gradient": _op_gradient,
}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(cfg: ExperimentConfig, out: Path, threads: int = 1) -> dict:
    """Execute all operations in order and write ``report.json``; returns the report."""
    out.mkdir(parents=True, exist_ok=True)
    collector = _WarningCollector()
    root = logging.getLogger("rfbsde")
    root.addHandler(collector)
    timings, results, warnings = [], [], []
    try:
        for i, op in enumerate(cfg.operations):
            name = f"{i:02d}_{op['op']}"
            seed = int(op.get("seed", cfg.seed))
            samples = int(op.get("samples", 10000))
            if samples < 1:
                raise ConfigError(f"operations[{i}].samples must be positive")
            start = len(collector.messages)
            t0 = time.perf_counter()
            try:
                if op["op"] == "solve":
                    files = _op_solve(cfg, op, seed, samples, out, threads, name)
                else:
                    files = DISPATCH[op["op"]](cfg, op, seed, samples, out, threads)
            except NumericalError as exc:
                raise NumericalError(f"operation {name} failed: {exc}") from exc
            except InvalidArgumentError as exc:
                raise ConfigError(f"operation {name}: {exc}") from exc
            timings.append({"operation": name, "seconds": time.perf_counter() - t0})
            extra = files.pop("_extra", [])
            op_warnings = files.pop("_warnings", [])
            listed = []
            for fname, (header, rows) in files.items():
                path = out / f"{name}_{fname}"
                write_table(path, header, rows, cfg, seed)
                listed.append(path.name)
            listed += extra
            new = collector.messages[start:]
            op_warnings = new + [w for w in op_warnings if w not in new]
            warnings += [f"{name}: {w}" for w in op_warnings]
            results.append({"operation": name, "seed": seed, "samples": samples,
                            "files": listed, "warnings": op_warnings})
    finally:
        root.removeHandler(collector)
    manifest = {}
    for r in results:
        for f in r["files"]:
            p = out / f
            if not p.exists() or p.stat().st_size == 0:
                raise NumericalError(f"output {f} is missing or empty")
            manifest[f] = _sha256(p)
    report = {"config": cfg.raw, "seed": cfg.seed, "operations": results,
              "warnings": warnings, "manifest": manifest, "timings_file": "timings.json"}
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out / "timings.json").write_text(json.dumps({"threads": threads, "operations": timings},
                                                 indent=2) + "\n")
    return report


def validate(cfg: ExperimentConfig, probes: int = 200) -> dict:
    """Assumption checks without simulating the FBSDE."""
    lip = validate_lipschitz(cfg.problem, cfg.domain, cfg.grid, probes, cfg.seed)
    h = check_h1_h2(cfg.problem.params, cfg.initial.varphi, cfg.grid.horizon)
    return {
        "lipschitz": {"ratios": lip.ratios, "declared": lip.declared, "failures": lip.failures,
                      "passed": lip.passed},
        "h1_h2": {"c_bound": h.c_bound, "h1_lhs": h.h1_lhs, "h2_lhs": h.h2_lhs,
                  "pass_h1": h.pass_h1, "pass_h2": h.pass_h2, "passed": h.passed,
                  "required": cfg.problem.delay_dependent},
        "passed": lip.passed and (h.passed or not cfg.problem.delay_dependent),
    }


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rfbsde", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "execute the operations of a config"),
                        ("validate", "check the coefficient assumptions without simulating")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("config", type=Path)
        s.add_argument("--out", type=Path, default=None, help="report directory")
        s.add_argument("--threads", type=int, default=1, help="worker threads (speed only)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg = parse_config(load_raw(args.config), args.config.parent)
        out = args.out or Path(cfg.output or "rfbsde-out")
        if args.command == "validate":
            report = validate(cfg)
            out.mkdir(parents=True, exist_ok=True)
            (out / "validate.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
            print(json.dumps(report, indent=2, sort_keys=True))
            return EXIT_OK if report["passed"] else EXIT_ASSUMPTIONS
        report = run(cfg, out, args.threads)
        print(f"wrote {len(report['manifest'])} file(s) to {out}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
