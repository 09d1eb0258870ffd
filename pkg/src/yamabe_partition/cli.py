"""Command-line driver: scalar solves, continuation, partitions and checks.

Every run writes ``report.json``, ``plotdata.csv`` and one ``t,w`` CSV per
computed profile into the output directory.  The exit status is 0 exactly
when every verification recorded in the report passed.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .discretization import build_grid, default_grading, write_profile_csv
from .errors import ConfigError, PartitionError
from .geometry import SymmetryConfig
from .partition import (
    IntervalCache,
    PartitionOptions,
    assemble_nodal,
    min_gap,
    optimize_partition,
    stationarity,
    verify_comparison,
    verify_monotone_in_M,
    verify_subadditivity,
)
from .scalar import SolverOptions, least_energy_on_interval, shoot_to_zero
from .system import (
    SystemOptions,
    component_order,
    extract_supports,
    lambda_continuation,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MODES = ("scalar", "system", "partition", "verify-all")
DEFAULT_SCHEDULE = (-1.0, -10.0, -100.0, -1000.0)
OVERLAP_TOL = 1e-9
STATIONARITY_STEP = 1e-3
STATIONARITY_TOL = 1e-3
AGREEMENT_TOL = 0.01
DEFAULT_TOLERANCES = {"max_iters": 20000, "tol_energy": 1e-9, "tol_res": 1e-4}


@dataclass(frozen=True)
class RunConfig:
    m: int = 2
    n: int = 2
    M: int = 2
    mode: str = "partition"
    K: int = 512
    grading: float | None = None
    lambda_schedule: tuple[float, ...] = DEFAULT_SCHEDULE
    alpha: float | None = None
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    output_dir: str = "partition_out"
    seed: int = 0
    interval: tuple[float, float] = (0.0, math.pi)
    subadditivity_samples: int = 20
    monotone_max: int = 4
    support_threshold: float = 0.05

    @property
    def cfg(self) -> SymmetryConfig:
        return SymmetryConfig(self.m, self.n)

    def resolved_grading(self) -> float:
        return default_grading(self.cfg) if self.grading is None else float(self.grading)

    def solver_options(self) -> SolverOptions:
        tol = self.tolerances
        return SolverOptions(max_iters=int(tol["max_iters"]), tol_energy=float(tol["tol_energy"]),
                             tol_res=float(tol["tol_res"]), seed=self.seed)

    def system_options(self) -> SystemOptions:
        tol = self.tolerances
        return SystemOptions(max_iters=int(tol["max_iters"]), tol_energy=float(tol["tol_energy"]),
                             seed=self.seed)

    def echo(self) -> dict:
        d = asdict(self)
        d["lambda_schedule"] = list(self.lambda_schedule)
        d["interval"] = list(self.interval)
        d["grading"] = self.resolved_grading()
        d["N"] = self.m + self.n - 1
        return d


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _float_list(text) -> tuple[float, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(float(x) for x in text)
    parts = [p.strip() for p in str(text).split(",") if p.strip()]
    return tuple(float(p) for p in parts)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="yamabe-partition",
        description="Nodal Yamabe solutions on spheres from optimal orbit partitions.")
    ap.add_argument("--config", type=Path, default=None, help="JSON file with run settings")
    ap.add_argument("--m", type=int, default=None)
    ap.add_argument("--n", type=int, default=None)
    ap.add_argument("--M", type=int, default=None, help="number of nodal domains / components")
    ap.add_argument("--mode", choices=MODES, default=None)
    ap.add_argument("--K", type=int, default=None, help="grid cells on [0, pi]")
    ap.add_argument("--grading", type=float, default=None)
    ap.add_argument("--lambda", dest="lambda_schedule", type=str, default=None,
                    help='coupling schedule, e.g. "-1,-10,-100"')
    ap.add_argument("--alpha", type=float, default=None, help="coupling exponent alpha_ij (i < j)")
    ap.add_argument("--interval", type=str, default=None, help='scalar mode interval "a,b"')
    ap.add_argument("--out", type=str, default=None, help="output directory")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--tol-res", type=float, default=None)
    ap.add_argument("--tol-energy", type=float, default=None)
    ap.add_argument("--max-iters", type=int, default=None)
    ap.add_argument("--samples", type=int, default=None, help="random subadditivity triples")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _join_negative_values(argv) -> list[str]:
    # argparse reads "-1,-10" as an option; glue it to its flag
    out, it = [], iter(list(argv))
    for tok in it:
        if tok in ("--lambda", "--interval"):
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


_FILE_KEYS = {
    "m", "n", "M", "mode", "K", "grading", "lambda", "lambda_schedule", "alpha", "tolerances",
    "out", "output_dir", "seed", "interval", "subadditivity_samples", "monotone_max",
    "support_threshold",
}


def parse_config(argv=None, environ=None) -> RunConfig:
    """Merge defaults, an optional JSON file and flags (flags win).

    The environment variable PARTITION_OUT overrides the output directory.
    Raises ConfigError listing every violated constraint.
    """
    environ = os.environ if environ is None else environ
    args = build_parser().parse_args(_join_negative_values(sys.argv[1:] if argv is None else argv))
    values: dict = {}
    if args.config is not None:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
        unknown = set(data) - _FILE_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(data)
        if "lambda" in values:
            values["lambda_schedule"] = values.pop("lambda")
        if "out" in values:
            values["output_dir"] = values.pop("out")

    for key in ("m", "n", "M", "mode", "K", "grading", "alpha", "seed", "lambda_schedule", "interval"):
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    if args.out is not None:
        values["output_dir"] = args.out
    if args.samples is not None:
        values["subadditivity_samples"] = args.samples
    tolerances = dict(DEFAULT_TOLERANCES)
    tolerances.update(values.pop("tolerances", {}) or {})
    for flag, key in (("tol_res", "tol_res"), ("tol_energy", "tol_energy"), ("max_iters", "max_iters")):
        v = getattr(args, flag)
        if v is not None:
            tolerances[key] = v
    values["tolerances"] = tolerances
    if environ.get("PARTITION_OUT"):
        values["output_dir"] = environ["PARTITION_OUT"]

    errors = []
    try:
        if "lambda_schedule" in values:
            values["lambda_schedule"] = _float_list(values["lambda_schedule"])
        if "interval" in values:
            values["interval"] = _float_list(values["interval"])
    except ValueError as exc:
        errors.append(f"unparsable number list: {exc}")
    if errors:
        raise ConfigError("; ".join(errors))
    unknown_tol = set(tolerances) - set(DEFAULT_TOLERANCES)
    if unknown_tol:
        errors.append(f"tolerances: unknown keys {sorted(unknown_tol)}")
    cfg = RunConfig(**values)
    errors += validate(cfg)
    if errors:
        raise ConfigError("; ".join(errors))
    return cfg


def validate(cfg: RunConfig) -> list[str]:
    errors = []
    if cfg.m < 2:
        errors.append(f"m: m ≥ 2 required (got {cfg.m})")
    if cfg.n < 2:
        errors.append(f"n: n ≥ 2 required (got {cfg.n})")
    if cfg.mode not in MODES:
        errors.append(f"mode: must be one of {MODES}")
    if cfg.mode != "scalar" and cfg.M < 2:
        errors.append(f"M: M ≥ 2 required (got {cfg.M})")
    if cfg.K < 32:
        errors.append(f"K: K ≥ 32 required (got {cfg.K})")
    if cfg.grading is not None and cfg.grading < 1.0:
        errors.append(f"grading: must be ≥ 1 (got {cfg.grading})")
    sched = cfg.lambda_schedule
    if not sched:
        errors.append("lambda: schedule is empty")
    elif any(x >= 0.0 for x in sched):
        errors.append("lambda: entries must be negative")
    elif any(b >= a for a, b in zip(sched, sched[1:])):
        errors.append("lambda: schedule must be strictly decreasing")
    if len(cfg.interval) != 2 or not (0.0 <= cfg.interval[0] < cfg.interval[1] <= math.pi):
        errors.append("interval: need 0 ≤ a < b ≤ pi")
    p = 2.0 * (cfg.m + cfg.n - 1) / max(cfg.m + cfg.n - 3, 1)
    if cfg.alpha is not None and not (1.0 < cfg.alpha < p - 1.0):
        errors.append("alpha: need 1 < alpha < 2* - 1 so that beta = 2* - alpha > 1")
    if cfg.subadditivity_samples < 0:
        errors.append("samples: must be nonnegative")
    if cfg.monotone_max < 3:
        errors.append("monotone_max: must be ≥ 3")
    return errors


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------

class _Run:
    def __init__(self, config: RunConfig):
        self.config = config
        self.out = Path(config.output_dir)
        self.grid = build_grid(config.cfg, config.K, config.resolved_grading())
        self.cache = IntervalCache(self.grid, config.solver_options())
        self.results: dict = {}
        self.verifications: dict = {}
        self.timing: dict = {}
        self.files: list[str] = []
        self.plot_columns: dict[str, np.ndarray] = {}

    def timed(self, name, fn):
        t0 = time.perf_counter()
        try:
            return fn()
        finally:
            self.timing[name] = round(time.perf_counter() - t0, 6)

    def check(self, name, passed, **details):
        self.verifications[name] = {"passed": bool(passed), **details}

    def write_csv(self, name, t, w):
        write_profile_csv(self.out / name, t, w)
        self.files.append(name)

    # -- scalar ---------------------------------------------------------
    def scalar(self):
        a, b = self.config.interval
        sol = least_energy_on_interval(self.grid, a, b, self.config.solver_options())
        on_grid = sol.on_grid(self.grid)
        self.write_csv("scalar_w.csv", sol.profile.grid.nodes, sol.profile.values)
        if self.config.mode == "scalar":
            self.plot_columns.update(w1=on_grid.values, signed=on_grid.values)
        res = {
            "interval": [a, b],
            "energy": sol.energy,
            "normsq": sol.normsq,
            "crit": sol.crit,
            "residual_sup": sol.residual_sup,
            "iterations": sol.iterations,
        }
        self.check("scalar_nehari", abs(sol.normsq - sol.crit) <= 1e-8 * max(1.0, sol.normsq),
                   defect=sol.normsq - sol.crit)
        self.check("scalar_residual", sol.residual_sup <= self.config.tolerances["tol_res"],
                   residual_sup=sol.residual_sup)
        if (a, b) == (0.0, math.pi):
            cfg = self.config.cfg
            bound = cfg.constant_solution ** cfg.p_crit * self.grid.mass.sum() / 4.0 / cfg.N
            res["constant_solution_energy"] = bound
            self.check("whole_sphere_bound", sol.energy <= bound + 1e-3, energy=sol.energy, bound=bound)
        self.results["scalar"] = res

    # -- partition ------------------------------------------------------
    def partition(self):
        M = self.config.M
        result = optimize_partition(self.grid, M, PartitionOptions(), self.cache)
        nodal = assemble_nodal(result.partition, self.grid, self.cache)
        t = self.grid.nodes
        for i, (a, b) in enumerate(result.partition.intervals):
            piece = np.where((t >= a) & (t <= b), nodal.splines[i](t), 0.0)
            piece = np.maximum(piece, 0.0)
            self.write_csv(f"partition_w{i + 1}.csv", t, piece)
            self.plot_columns[f"w{i + 1}"] = piece
        self.write_csv("nodal_w.csv", t, nodal.signed_profile.values)
        self.plot_columns["signed"] = nodal.signed_profile.values
        summary = nodal.summary()
        self.results["partition"] = result.to_dict()
        self.results["nodal"] = summary
        self.check("nodal_sign_changes", summary["sign_changes"] == M - 1,
                   sign_changes=summary["sign_changes"], expected=M - 1)
        self.check("nodal_residual", summary["residual_sup"] <= self.config.tolerances["tol_res"],
                   residual_sup=summary["residual_sup"])
        slopes = stationarity(result, self.grid, STATIONARITY_STEP, self.cache)
        self.check("stationarity", max(abs(d) for d in slopes) <= STATIONARITY_TOL, slopes=slopes)
        return result

    # -- system ---------------------------------------------------------
    def system(self):
        cfgr = self.config
        res = lambda_continuation(self.grid, cfgr.lambda_schedule, cfgr.M, cfgr.alpha, cfgr.system_options())
        stages = [rep.to_json() for rep in res.reports]
        out = {"stages": stages, "failed_stage": res.failed_stage, "error": res.error,
               "d_floor": res.d_floor}
        self.check("continuation_completed", res.failed_stage is None, failed_stage=res.failed_stage)
        if res.stages:
            state, rep = res.final
            order = component_order(state, cfgr.support_threshold)
            t = self.grid.nodes
            signed = np.zeros_like(t)
            for rank, i in enumerate(order):
                w = state.values[i]
                # files and columns follow the left-to-right order of the supports
                self.write_csv(f"system_w{rank + 1}.csv", t, w)
                if cfgr.mode == "system":
                    self.plot_columns[f"w{rank + 1}"] = np.asarray(w)
                signed += (-1.0) ** rank * w
            if cfgr.mode == "system":
                self.plot_columns["signed"] = signed
            out["separated"] = rep.separated
            try:
                parts = extract_supports(state, cfgr.support_threshold)
                out["extracted_cuts"] = list(parts.cuts)
            except PartitionError as exc:
                out["extracted_cuts"] = None
                out["extraction_error"] = str(exc)
            bound_ok = []
            for st, r in res.stages:
                cp = st.coupling
                lam = -np.where(np.eye(cfgr.M, dtype=bool), -1.0, cp.lam)
                slack = OVERLAP_TOL * float(np.max(r.per_component_crit))
                ok = cp.beta * r.overlaps <= r.per_component_crit[:, None] / lam + slack
                bound_ok.append(bool(np.all(ok)))
            self.check("overlap_bound", all(bound_ok), stages=bound_ok)
            self.check("stages_converged", all(r.converged for r in res.reports),
                       converged=[r.converged for r in res.reports])
        self.results["system"] = out
        return res

    # -- inequality suites ---------------------------------------------
    def subadditivity(self):
        rng = np.random.default_rng(self.config.seed)
        gap = min_gap(self.grid)
        rows = []
        while len(rows) < self.config.subadditivity_samples:
            a, b, c = np.sort(rng.uniform(0.0, math.pi, size=3))
            if b - a < gap or c - b < gap:
                continue
            rows.append(verify_subadditivity(self.grid, float(a), float(b), float(c), self.cache).to_dict())
        self.results["subadditivity"] = rows
        self.check("subadditivity", all(r["passed"] for r in rows),
                   min_margin=min((r["margin"] for r in rows), default=None), samples=len(rows))

    def comparison(self, partition_value, continuation):
        rows = [verify_comparison(r.c_value, partition_value).to_dict() | {"lambda": r.lam}
                for r in continuation.reports]
        self.results["comparison"] = rows
        self.check("comparison", all(r["passed"] for r in rows) and bool(rows),
                   final_relative_gap=rows[-1]["relative_gap"] if rows else None)
        gaps = [(abs(r["lambda"]), r["gap"]) for r in rows if r["lambda"] and r["gap"] > 0.0]
        if len(gaps) >= 2:
            # empirical rate: gap ~ |lambda|^exponent over the last decade
            (l0, g0), (l1, g1) = gaps[-2], gaps[-1]
            self.results["gap_decay_exponent"] = math.log(g1 / g0) / math.log(l1 / l0)
        if rows:
            gap = abs(rows[-1]["relative_gap"])
            self.check("cross_method_agreement", gap <= AGREEMENT_TOL, relative_gap=gap,
                       tolerance=AGREEMENT_TOL)

    def monotone(self):
        rep = verify_monotone_in_M(self.grid, self.config.monotone_max, PartitionOptions(), self.cache)
        self.results["monotone_in_M"] = rep.to_dict()
        self.check("monotone_in_M", rep.passed, margins=list(rep.margins))

    def shooting(self):
        target = 0.5 * math.pi
        shot = shoot_to_zero(self.grid, target)
        direct = self.cache.energy(0.0, target)
        rel = abs(shot.energy - direct) / direct
        self.results["shooting"] = {"target": target, "w0": shot.w0, "shooting_energy": shot.energy,
                                    "interval_energy": direct, "relative_difference": rel}
        self.check("shooting_cross_check", rel <= 1e-3, relative_difference=rel)

    def write_plotdata(self):
        if not self.plot_columns:
            return
        names = sorted(k for k in self.plot_columns if k.startswith("w"))
        names = sorted(names, key=lambda s: int(s[1:]))
        cols = list(names)
        if "signed" in self.plot_columns:
            cols.append("signed")
        t = self.grid.nodes
        with open(self.out / "plotdata.csv", "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(["t", *cols]) + "\n")
            for j in range(t.size):
                row = [t[j]] + [self.plot_columns[c][j] for c in cols]
                fh.write(",".join(f"{x:.17g}" for x in row) + "\n")
        self.files.append("plotdata.csv")


def load_report_schema() -> dict:
    """The JSON Schema that every ``report.json`` validates against."""
    text = resources.files(__package__).joinpath("report_schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def run(config: RunConfig) -> tuple[dict, int]:
    """Execute the configured pipeline; returns the report and exit code."""
    t_start = time.perf_counter()
    r = _Run(config)
    r.out.mkdir(parents=True, exist_ok=True)
    error = None
    stage = None
    try:
        mode = config.mode
        if mode in ("scalar", "verify-all"):
            stage = "scalar"
            r.timed(stage, r.scalar)
        if mode in ("partition", "verify-all"):
            stage = "partition"
            part = r.timed(stage, r.partition)
        if mode in ("system", "verify-all"):
            stage = "system"
            cont = r.timed(stage, r.system)
        if mode == "verify-all":
            stage = "subadditivity"
            r.timed(stage, r.subadditivity)
            stage = "comparison"
            r.comparison(part.energy, cont)
            stage = "monotone_in_M"
            r.timed(stage, r.monotone)
            stage = "shooting"
            r.timed(stage, r.shooting)
        stage = None
    except (PartitionError, FloatingPointError, np.linalg.LinAlgError) as exc:
        error = {"stage": stage, "type": type(exc).__name__, "message": str(exc)}
        log.error("stage %s failed: %s", stage, exc)
    r.write_plotdata()
    passed = error is None and all(v["passed"] for v in r.verifications.values())
    report = {
        "schema_version": SCHEMA_VERSION,
        "mode": config.mode,
        "config": config.echo(),
        "results": r.results,
        "verifications": r.verifications,
        "passed": passed,
        "error": error,
        "files": sorted(set(r.files)) + ["report.json"],
        "timing": {"stages_seconds": r.timing, "total_seconds": round(time.perf_counter() - t_start, 6)},
    }
    report = _jsonable(report)
    with open(r.out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report, 0 if passed else 1


def main(argv=None) -> int:
    try:
        config = parse_config(argv)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    args = sys.argv[1:] if argv is None else argv
    verbose = "-v" in args or "--verbose" in args
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    report, code = run(config)
    status = "PASS" if code == 0 else "FAIL"
    failed = [k for k, v in report["verifications"].items() if not v["passed"]]
    print(f"{status} mode={config.mode} out={config.output_dir}" + (f" failed={failed}" if failed else "")
          + (f" error={report['error']['stage']}" if report["error"] else ""))
    return code


if __name__ == "__main__":
    sys.exit(main())
