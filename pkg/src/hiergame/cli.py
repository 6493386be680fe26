"""Experiment harness: YAML configs, seeded replicas, rate fits and reports.

Usage::

    hiergame --config exp.yaml [--seed 7] [--out DIR] [--replicas 20] [--sweep 20,50,100]

A minimal config::

    benchmark: quad-duopoly
    scheme: exact
    schedule: theorem_gap(T=20)
    replicas: 10
    master_seed: 42

Exit codes: 0 success, 2 configuration error, 3 every replica failed.
Set ``HIERGAME_LOG`` to ``error``, ``info`` or ``debug`` for logging.
"""

from __future__ import annotations

import argparse
import ast
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError, HierGameError
from .game import BENCHMARKS, make_benchmark
from .metrics import GapConfig
from .solver import (
    RunReport,
    Schedule,
    as_convergence_schedule,
    inexact_gap_schedule,
    theorem_gap_schedule,
    vrhgs,
)

__all__ = [
    "ExperimentConfig",
    "RateFit",
    "ExperimentResult",
    "parse_config",
    "load_config",
    "build_schedule",
    "run_experiment",
    "emit_report",
    "fit_rate",
    "main",
]

log = logging.getLogger("hiergame")

CSV_COLUMNS = ("t", "replica", "gap", "dist_least_norm", "xi_count", "w_count", "wall_ms")
EXIT_OK, EXIT_CONFIG, EXIT_ALL_FAILED = 0, 2, 3


# -- configuration -------------------------------------------------------------------

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True, frozen=True)


class BenchmarkConfig(_Strict):
    name: str
    noise_scale: float | None = Field(default=None, ge=0)
    oracle_mode: Literal["affine_gaussian", "finite_sum"] = "affine_gaussian"
    components: int = Field(default=8, ge=1)
    block_dim: int | None = Field(default=None, ge=1)
    x0: list[float] | None = None

    @model_validator(mode="before")
    @classmethod
    def _from_name(cls, v):
        return {"name": v} if isinstance(v, str) else v

    @field_validator("name")
    @classmethod
    def _known(cls, v):
        if v not in BENCHMARKS:
            raise ValueError(f"unknown benchmark {v!r}; choose from {', '.join(BENCHMARKS)}")
        return v


def _parse_call(text):
    """``"name(k=v, ...)"`` -> ``{"kind": name, k: v, ...}`` with literal values."""
    try:
        node = ast.parse(text.strip(), mode="eval").body
    except SyntaxError as exc:
        raise ValueError(f"cannot parse schedule {text!r}") from exc
    if isinstance(node, ast.Name):
        return {"kind": node.id}
    if not isinstance(node, ast.Call) or not isinstance(node.func, ast.Name) or node.args:
        raise ValueError(f"schedule must look like kind(key=value, ...), got {text!r}")
    out = {"kind": node.func.id}
    for kw in node.keywords:
        try:
            out[kw.arg] = ast.literal_eval(kw.value)
        except ValueError as exc:
            raise ValueError(f"schedule argument {kw.arg!r} must be a literal") from exc
    return out


class ScheduleConfig(_Strict):
    kind: Literal["theorem_gap", "as_convergence", "explicit"]
    T: int | None = Field(default=None, ge=1)
    K: int | None = Field(default=None, ge=1)
    gamma0: float | None = Field(default=None, gt=0)
    eta0: float | None = Field(default=None, gt=0)
    gamma: list[float] | None = None
    eta: list[float] | None = None
    delta: list[float] | None = None
    b: list[int] | None = None
    eps: list[float] | None = None

    @model_validator(mode="before")
    @classmethod
    def _from_string(cls, v):
        return _parse_call(v) if isinstance(v, str) else v

    @model_validator(mode="after")
    def _fields_for_kind(self):
        seqs = ("gamma", "eta", "delta", "b")
        if self.kind == "explicit":
            missing = [k for k in (*seqs, "K") if getattr(self, k) is None]
            if missing:
                raise ValueError(f"explicit schedule needs {', '.join(missing)}")
            return self
        if self.T is None:
            raise ValueError(f"{self.kind} schedule needs T")
        extra = [k for k in (*seqs, "eps") if getattr(self, k) is not None]
        if extra:
            raise ValueError(f"{self.kind} schedule does not accept {', '.join(extra)}")
        if self.kind == "as_convergence" and (self.gamma0 is None or self.eta0 is None):
            raise ValueError("as_convergence schedule needs gamma0 and eta0")
        if self.kind == "theorem_gap" and (self.gamma0 or self.eta0 or self.K):
            raise ValueError("theorem_gap schedule takes only T")
        return self


class OutputsConfig(_Strict):
    dir: str = "results"
    write_json: bool = True

    @model_validator(mode="before")
    @classmethod
    def _from_str(cls, v):
        return {"dir": v} if isinstance(v, str) else v


class ExperimentConfig(_Strict):
    benchmark: BenchmarkConfig
    scheme: Literal["exact", "inexact"] = "exact"
    schedule: ScheduleConfig
    replicas: int = Field(ge=1)
    master_seed: int = Field(ge=0, lt=2**64)
    outputs: OutputsConfig = OutputsConfig()
    gap_tol: float = Field(default=1e-12, gt=0)
    sweep: list[int] | None = None
    trace_every: int = Field(default=1, ge=1)
    backend: Literal["auto", "python", "compiled"] = "auto"
    workers: int = Field(default=1, ge=1)
    timing: bool = False

    @field_validator("sweep")
    @classmethod
    def _sweep(cls, v):
        if v is not None and (not v or len(set(v)) != len(v)):
            raise ValueError("sweep must be a non-empty list of distinct T values")
        return v

    @model_validator(mode="after")
    def _schedules_build(self):
        if self.sweep is not None and self.schedule.kind == "explicit":
            raise ValueError("schedule: explicit schedules cannot be swept over T")
        for T in self.T_values():
            try:
                build_schedule(self, T)
            except HierGameError as exc:
                raise ValueError(f"schedule: {exc}") from None
        return self

    def T_values(self):
        if self.sweep is not None:
            return list(self.sweep)
        return [self.schedule.T if self.schedule.T is not None else len(self.schedule.gamma)]

    def with_overrides(self, **kw):
        """Copy with top-level fields replaced (``None`` values ignored), re-validated."""
        data = self.model_dump()
        data.update({k: v for k, v in kw.items() if v is not None})
        return ExperimentConfig.model_validate(data)


def build_schedule(cfg: ExperimentConfig, T: int | None = None) -> Schedule:
    s = cfg.schedule
    T = s.T if T is None else T
    if s.kind == "theorem_gap":
        return inexact_gap_schedule(T) if cfg.scheme == "inexact" else theorem_gap_schedule(T)
    if s.kind == "as_convergence":
        if cfg.scheme == "inexact":
            raise ConfigError("as_convergence has no inexact variant; use an explicit schedule")
        return as_convergence_schedule(T, s.gamma0, s.eta0, K=s.K or 5)
    n = len(s.gamma)
    eps = s.eps if s.eps is not None else [0.0] * n
    if cfg.scheme == "exact" and any(e != 0 for e in eps):
        raise ConfigError("scheme 'exact' requires eps to be all zero")
    if cfg.scheme == "inexact" and not all(e > 0 for e in eps):
        raise ConfigError("scheme 'inexact' requires positive eps for every epoch")
    sched = Schedule(T=n, K=s.K, gamma=s.gamma, eta=s.eta, delta=s.delta, b=s.b, eps=eps)
    return sched.validate(0.25)


def _config_error(exc: ValidationError) -> ConfigError:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return ConfigError("invalid config: " + "; ".join(parts))


def load_config(data: dict) -> ExperimentConfig:
    """Validate an already-parsed mapping."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise _config_error(exc) from None


def parse_config(path) -> ExperimentConfig:
    """Read and validate a YAML experiment config."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark else str(path)
        raise ConfigError(f"{where}: YAML parse error: {getattr(exc, 'problem', exc)}") from None
    return load_config(data)


# -- running ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    """Least-squares fit of ``log mean_gap = log c - p log T``."""

    T_values: list
    mean_gap: list
    p: float
    c: float
    r2: float

    def to_dict(self):
        return {"T_values": list(self.T_values), "mean_gap": list(self.mean_gap), "p": self.p,
                "c": self.c, "r2": self.r2}


def fit_rate(T_values, mean_gap) -> RateFit:
    T = np.asarray(T_values, dtype=float)
    g = np.asarray(mean_gap, dtype=float)
    if T.shape != g.shape or T.size < 2:
        raise ValueError("need at least two matching (T, gap) pairs")
    if np.any(g <= 0) or np.any(T <= 0):
        raise ValueError("rate fit needs positive T and gap values")
    x, y = np.log(T), np.log(g)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit([int(t) for t in T_values], [float(v) for v in g], float(-slope),
                   float(math.exp(intercept)), r2)


@dataclass
class ExperimentResult:
    """Reports keyed by ``(T, replica)``; failures hold the error message."""

    config: ExperimentConfig
    reports: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    ratefit: RateFit | None = None

    def reports_for(self, T):
        return [self.reports[k] for k in sorted(self.reports) if k[0] == T]

    def mean_final_gap(self, T):
        return float(np.mean([r.final_gap for r in self.reports_for(T)]))

    @property
    def all_failed(self):
        return not self.reports and bool(self.failures)


def _run_one(cfg_dict, T, replica):
    cfg = ExperimentConfig.model_validate(cfg_dict)
    b = cfg.benchmark
    game = make_benchmark(b.name, noise_scale=b.noise_scale, oracle_mode=b.oracle_mode,
                          components=b.components, block_dim=b.block_dim, x0=b.x0)
    backend = None if cfg.backend == "auto" else cfg.backend
    try:
        rep = vrhgs(game, build_schedule(cfg, T), cfg.master_seed, replica=replica, backend=backend,
                    trace_every=cfg.trace_every, gap_cfg=GapConfig(tol=cfg.gap_tol),
                    timing=cfg.timing)
    except (HierGameError, ArithmeticError) as exc:
        return T, replica, None, f"{type(exc).__name__}: {exc}"
    return T, replica, rep, None


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run every ``(T, replica)`` pair; replica ``r`` draws from ``(master_seed, r)``.

    A failing replica is recorded and does not stop its siblings. With
    ``workers > 1`` the runs are spread over processes; results do not
    depend on the worker count.
    """
    jobs = [(T, r) for T in cfg.T_values() for r in range(cfg.replicas)]
    data = cfg.model_dump()
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            outs = list(pool.map(_run_one, [data] * len(jobs), *zip(*jobs)))
    else:
        outs = [_run_one(data, T, r) for T, r in jobs]
    res = ExperimentResult(cfg)
    for T, r, rep, err in outs:
        if rep is None:
            log.error("T=%d replica %d failed: %s", T, r, err)
            res.failures[(T, r)] = err
        else:
            log.info("T=%d replica %d: final gap %.6g", T, r, rep.final_gap)
            res.reports[(T, r)] = rep
    if cfg.sweep is not None:
        Ts = [T for T in cfg.T_values() if res.reports_for(T)]
        means = [res.mean_final_gap(T) for T in Ts]
        if len(Ts) >= 2 and all(np.isfinite(means)) and all(m > 0 for m in means):
            res.ratefit = fit_rate(Ts, means)
    return res


# -- reports -------------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if math.isnan(v) else format(v, ".17g")


def _traced_epochs(rep: RunReport):
    T = len(rep.gap_series)
    evaluated = [t for t in range(T) if not math.isnan(rep.gap_series[t])]
    return evaluated or list(range(T))


def report_rows(rep: RunReport, final_only=False, timing=False):
    """CSV rows for one report: traced epochs, or only the last one."""
    T = len(rep.gap_series)
    epochs = [T - 1] if final_only else _traced_epochs(rep)
    cum_ms = np.cumsum(rep.epoch_wall_ms) if timing and rep.epoch_wall_ms else None
    rows = []
    for t in epochs:
        rows.append([t + 1, rep.replica, rep.gap_series[t], rep.dist_series[t],
                     int(rep.xi_series[t]), int(rep.w_series[t]),
                     float(cum_ms[t]) if cum_ms is not None else 0])
    return rows


def _jsonable(obj):
    if isinstance(obj, float):
        return None if math.isnan(obj) else obj
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def emit_report(reports, format: str, path, final_only=False, timing=False):
    """Write reports as CSV (fixed columns) or JSON (full :class:`RunReport` dicts).

    CSV floats carry 17 significant digits and ``wall_ms`` is 0 unless
    ``timing`` is set, so equal seeds give byte-identical files. JSON uses
    Python's shortest round-trip float repr; ``nan`` becomes ``null``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if format == "csv":
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for rep in reports:
                for row in report_rows(rep, final_only=final_only, timing=timing):
                    w.writerow([_fmt(v) for v in row])
    elif format == "json":
        payload = [_jsonable(r.to_dict()) for r in reports]
        with path.open("w") as fh:
            json.dump(payload, fh, indent=1, allow_nan=False)
            fh.write("\n")
    else:
        raise ValueError(f"unknown report format {format!r}")
    return path


def load_reports(path):
    """Inverse of ``emit_report(..., 'json', path)``."""
    with Path(path).open() as fh:
        return [RunReport.from_dict(d) for d in json.load(fh)]


def write_outputs(res: ExperimentResult, out_dir=None):
    cfg = res.config
    out = Path(out_dir or cfg.outputs.dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = [res.reports[k] for k in sorted(res.reports)]
    written = [emit_report(reports, "csv", out / "runs.csv", timing=cfg.timing),
               emit_report(reports, "csv", out / "summary.csv", final_only=True, timing=cfg.timing)]
    if cfg.outputs.write_json:
        written.append(emit_report(reports, "json", out / "reports.json"))
    if res.failures:
        fail = [{"T": T, "replica": r, "error": e} for (T, r), e in sorted(res.failures.items())]
        p = out / "failures.json"
        p.write_text(json.dumps(fail, indent=1) + "\n")
        written.append(p)
    if res.ratefit is not None:
        p = out / "ratefit.json"
        p.write_text(json.dumps(res.ratefit.to_dict(), indent=1) + "\n")
        written.append(p)
    return written


# -- entry point -------------------------------------------------------------------------

def _setup_logging():
    level = os.environ.get("HIERGAME_LOG", "error").strip().lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _parse_sweep(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--sweep expects comma-separated integers, got {text!r}") from None


def build_parser():
    p = argparse.ArgumentParser(prog="hiergame", description="Run hierarchical game experiments.")
    p.add_argument("--config", required=True, help="YAML experiment config")
    p.add_argument("--seed", type=int, help="override master_seed")
    p.add_argument("--out", help="output directory (overrides outputs.dir)")
    p.add_argument("--replicas", type=int, help="override the replica count")
    p.add_argument("--sweep", help="comma-separated T values, e.g. 20,50,100")
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        sweep = _parse_sweep(args.sweep) if args.sweep else None
        try:
            cfg = cfg.with_overrides(master_seed=args.seed, replicas=args.replicas, sweep=sweep)
        except ValidationError as exc:
            raise _config_error(exc) from None
    except ConfigError as exc:
        print(f"hiergame: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    res = run_experiment(cfg)
    for path in write_outputs(res, args.out):
        print(path)
    if res.ratefit is not None:
        rf = res.ratefit
        print(f"rate fit: p={rf.p:.4f} c={rf.c:.4g} R^2={rf.r2:.4f}")
    if res.all_failed:
        print("hiergame: all replicas failed", file=sys.stderr)
        return EXIT_ALL_FAILED
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
