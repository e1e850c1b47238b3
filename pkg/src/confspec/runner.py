"""Configuration-driven experiments and report emission."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import __version__
from .analytic import CollarGeometry, collar_to_sphere, exact_spectrum
from .errors import ConfigError, ConfSpecError
from .fem import assemble, normalized_eigenvalues, solve_spectrum
from .mesh import MIN_RESOLUTION, generate_surface_mesh, validate_topology
from .moduli import (
    FAMILY_KINDS,
    LimitingSpaceSpec,
    degeneration_family,
    even_genus_analysis,
    genus_relation,
    limit_value,
    limiting_spec,
    make_class,
)
from .neumann import ball_removal_experiment, rho_delta_experiment
from .optimize import INITIAL_DENSITIES, OptimizerOptions, best_of_starts
from .tables import LambdaTable, PiMultiple, builtin_table, format_value, table_violations

__all__ = [
    "COMMANDS",
    "ExperimentConfig",
    "ExperimentReport",
    "resolve_config",
    "run_experiment",
    "emit_report",
    "NOT_ATTAINED",
    "sweep_table",
]

COMMANDS = ("gen-mesh", "oracle", "spectrum", "maximize", "sweep", "limit", "collar", "rho-delta", "ball-removal")
SURFACES = ("torus", "klein", "sphere", "rp2")
NOT_ATTAINED = "supremum not attained"
I_K_LABEL = "I_k estimate (upper bound)"

# relative shortfall against a known supremum that triggers the annotation
_STALL_FRACTION = 0.97


@dataclass
class ExperimentConfig:
    """Every knob of an experiment; ``None`` means "use the documented default"."""

    command: str = "spectrum"
    surface: str = "torus"
    a: float = 0.0
    b: float = 1.0
    res: Optional[int] = None
    k: int = 1
    tol: float = 1e-8
    iters: int = 60
    seed: int = 0
    out: str = "out"
    jobs: Optional[int] = None
    starts: Optional[list] = None
    cluster_tol: float = 1e-6
    family: Optional[str] = None
    schedule: Optional[list] = None
    scale_resolution: bool = True
    count: int = 10
    deltas: Optional[list] = None
    radii: Optional[list] = None
    centers: Optional[list] = None
    length: float = 1.0
    sidedness: int = 2
    offset: float = 0.0
    spec: Any = None
    table: Optional[str] = None
    figures: bool = True

    def to_json(self) -> dict:
        return asdict(self)


_DEFAULT_SCHEDULES = {
    "torus-pinch": [1.0, 2.0, 4.0, 8.0, 16.0],
    "klein-to-sphere": [1.0, 0.5, 0.25, 0.125, 0.0625],
    "klein-to-rp2": [1.0, 2.0, 4.0, 8.0, 16.0],
}


def _default_res(config: ExperimentConfig) -> int:
    if config.command == "sweep":
        return 24
    if config.surface in ("sphere", "rp2") or config.command in ("rho-delta", "ball-removal"):
        return 4
    return 32


_FIELD_TYPES = {
    "a": float, "b": float, "res": int, "k": int, "tol": float, "iters": int, "seed": int, "jobs": int,
    "cluster_tol": float, "count": int, "length": float, "sidedness": int, "offset": float,
}


def resolve_config(config: ExperimentConfig) -> ExperimentConfig:
    """Fill defaults and validate; raises :class:`ConfigError` naming the field."""
    c = ExperimentConfig(**asdict(config))
    for name, kind in _FIELD_TYPES.items():
        val = getattr(c, name)
        if val is None:
            continue
        try:
            if kind is int and float(val) != int(val):
                raise ValueError
            setattr(c, name, kind(val))
        except (TypeError, ValueError):
            raise ConfigError(f"{name} must be {kind.__name__}, got {val!r}", name) from None
    if c.command not in COMMANDS:
        raise ConfigError(f"unknown command {c.command!r}; expected one of {COMMANDS}", "command")
    if c.surface not in SURFACES:
        raise ConfigError(f"unknown surface {c.surface!r}; expected one of {SURFACES}", "surface")
    if c.command == "sweep":
        if c.family is None:
            c.family = {"torus": "torus-pinch", "klein": "klein-to-rp2"}.get(c.surface)
        if c.family not in FAMILY_KINDS:
            raise ConfigError(f"sweep needs family in {FAMILY_KINDS}", "family")
        c.surface = "torus" if c.family == "torus-pinch" else "klein"
        if c.schedule is None:
            c.schedule = list(_DEFAULT_SCHEDULES[c.family])
        c.schedule = [float(x) for x in c.schedule]
    if c.res is None:
        c.res = _default_res(c)
    round_mesh = c.command != "sweep" and (c.surface in ("sphere", "rp2") or c.command in ("rho-delta", "ball-removal"))
    if round_mesh and not 1 <= c.res <= 7:
        raise ConfigError(f"round meshes need a subdivision level in [1, 7], got {c.res}", "res")
    if not round_mesh and c.res < MIN_RESOLUTION:
        raise ConfigError(f"flat meshes need resolution >= {MIN_RESOLUTION}, got {c.res}", "res")
    if c.k < 0:
        raise ConfigError("k must be non-negative", "k")
    if c.command in ("maximize", "sweep") and c.k < 1:
        raise ConfigError("maximization needs k >= 1", "k")
    if not 1e-12 <= c.tol <= 1e-4:
        raise ConfigError("tol must lie in [1e-12, 1e-4]", "tol")
    if c.iters < 0:
        raise ConfigError("iters must be non-negative", "iters")
    if c.jobs is None:
        c.jobs = os.cpu_count() or 1
    if c.jobs < 1:
        raise ConfigError("jobs must be at least 1", "jobs")
    if c.starts is not None:
        bad = [s for s in c.starts if s not in INITIAL_DENSITIES]
        if bad:
            raise ConfigError(f"unknown starts {bad}; expected some of {INITIAL_DENSITIES}", "starts")
    if c.deltas is None:
        c.deltas = [1e-1, 1e-2, 1e-3, 1e-4]
    if c.radii is None:
        c.radii = [0.02 * math.pi]
    if c.centers is None:
        c.centers = [[0.0, 0.0, 1.0]]
    if c.sidedness not in (1, 2):
        raise ConfigError("sidedness must be 1 or 2", "sidedness")
    if c.command == "limit" and c.spec is None:
        c.spec = "klein-to-rp2"
    if c.command in ("gen-mesh", "oracle", "spectrum", "maximize"):
        try:
            make_class(c.surface, c.a, c.b)
        except ConfSpecError as exc:
            raise ConfigError(str(exc), "a/b") from exc
    return c


@dataclass
class ExperimentReport:
    """Resolved config, results, CSV rows and timings of one experiment."""

    config: dict
    command: str
    results: dict
    rows: list = field(default_factory=list)
    columns: list = field(default_factory=list)
    members: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)
    version: str = __version__
    # in-memory objects used only for figures; never serialized
    artifacts: dict = field(default_factory=dict, repr=False, compare=False)

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "command": self.command,
            "config": self.config,
            "results": self.results,
            "members": self.members,
            "summary": self.summary,
            "errors": self.errors,
            "timings": self.timings,
        }


def _class_of(c: ExperimentConfig):
    return make_class(c.surface, c.a, c.b)


def _tag(module: str, tol) -> dict:
    return {"module": module, "tol": tol}


def _run_gen_mesh(c: ExperimentConfig) -> ExperimentReport:
    surf = generate_surface_mesh(_class_of(c), c.res)
    topo = validate_topology(surf)
    results = {"topology": {**topo.to_json(), **_tag("mesh", None)}, "mesh": surf.to_json()}
    rows = [{"vertex": i, **{f"x{j}": float(v) for j, v in enumerate(p)}, "glued_to": int(g)} for i, (p, g) in enumerate(zip(surf.vertices, surf.identification))]
    cols = ["vertex"] + [f"x{j}" for j in range(surf.vertices.shape[1])] + ["glued_to"]
    return _with_artifacts(ExperimentReport(c.to_json(), c.command, results, rows, cols), surface=surf)


def _with_artifacts(report: ExperimentReport, **items) -> ExperimentReport:
    report.artifacts.update(items)
    return report


def _run_oracle(c: ExperimentConfig) -> ExperimentReport:
    spec = exact_spectrum(_class_of(c), c.count)
    rows = [{"index": i, "lambda_bar": v, "multiplicity": m} for i, (v, m) in enumerate(spec)]
    results = {"spectrum": [{"lambda_bar": v, "multiplicity": m} for v, m in spec], **_tag("analytic", 0.0)}
    return ExperimentReport(c.to_json(), c.command, results, rows, ["index", "lambda_bar", "multiplicity"])


def _oracle_list(cls, n: int) -> list[float]:
    """Oracle values repeated by multiplicity, at least ``n`` entries."""
    out: list[float] = []
    count = 2
    while len(out) < n:
        out = [v for v, m in exact_spectrum(cls, count) for _ in range(m)]
        count *= 2
    return out[:n]


def _run_spectrum(c: ExperimentConfig) -> ExperimentReport:
    cls = _class_of(c)
    surf = generate_surface_mesh(cls, c.res)
    res = solve_spectrum(assemble(surf), c.k, tol=c.tol, seed=c.seed)
    lam_bar = normalized_eigenvalues(res)
    oracle = _oracle_list(cls, c.k + 1)
    rows = []
    for i in range(c.k + 1):
        rel = abs(lam_bar[i] - oracle[i]) / oracle[i] if oracle[i] else abs(lam_bar[i])
        rows.append({"index": i, "lambda": float(res.eigenvalues[i]), "lambda_bar": float(lam_bar[i]), "oracle": oracle[i], "rel_error": float(rel), "residual": float(res.residuals[i])})
    results = {"spectrum": {**res.to_json(), **_tag("fem", c.tol)}, "oracle": {"values": oracle, **_tag("analytic", 0.0)}, "n_dofs": surf.n_dofs}
    report = ExperimentReport(c.to_json(), c.command, results, rows, ["index", "lambda", "lambda_bar", "oracle", "rel_error", "residual"])
    return _with_artifacts(report, spectrum=res, surface=surf)


def _known_supremum(surface: str, k: int) -> Optional[float]:
    table = builtin_table(max(k, 1))
    name = {"sphere": "S2", "rp2": "RP2"}.get(surface)
    return float(table.get(name, k)) if name else None


def _annotations(surface: str, k: int, estimate: float) -> list[str]:
    notes = []
    known = _known_supremum(surface, k)
    if surface == "sphere" and k >= 2:
        notes.append(NOT_ATTAINED)
    elif known is not None and estimate < _STALL_FRACTION * known:
        notes.append(NOT_ATTAINED)
    return notes


def _trace_rows(label: dict, traces) -> list[dict]:
    rows = []
    for tr in traces:
        for it, (obj, step, clus) in enumerate(tr.iterates):
            rows.append({**label, "start": tr.start, "iterate": it, "objective": obj, "step": step, "cluster": clus})
    return rows


def _options(c: ExperimentConfig) -> OptimizerOptions:
    return OptimizerOptions(iterations=c.iters, cluster_tol=c.cluster_tol, solver_tol=c.tol, seed=c.seed)


def _run_maximize(c: ExperimentConfig) -> ExperimentReport:
    surf = generate_surface_mesh(_class_of(c), c.res)
    best, traces = best_of_starts(surf, c.k, _options(c), c.starts)
    notes = _annotations(c.surface, c.k, best.final_estimate)
    known = _known_supremum(c.surface, c.k)
    results = {
        "estimate": best.final_estimate,
        "status": best.status,
        "iterations": len(best.iterates) - 1,
        "start": best.start,
        "annotations": notes,
        "known_supremum": known,
        "traces": [tr.to_json() for tr in traces],
        **_tag("conformal-opt", c.tol),
    }
    rows = _trace_rows({}, traces)
    return _with_artifacts(
        ExperimentReport(c.to_json(), c.command, results, rows, ["start", "iterate", "objective", "step", "cluster"]),
        traces=traces,
    )


def _member_resolution(c: ExperimentConfig, b: float) -> int:
    if not c.scale_resolution:
        return c.res
    # keep the number of cells across the short side fixed
    return int(round(c.res * math.sqrt(max(b, 1.0 / b))))


def _sweep_member(payload: tuple) -> dict:
    cfg_dict, b = payload
    c = ExperimentConfig(**cfg_dict)
    t0 = time.perf_counter()
    try:
        cls = make_class(c.surface, c.a, b)
        surf = generate_surface_mesh(cls, _member_resolution(c, b))
        best, traces = best_of_starts(surf, c.k, _options(c), c.starts)
        return {
            "b": b,
            "estimate": best.final_estimate,
            "status": best.status,
            "start": best.start,
            "n_dofs": surf.n_dofs,
            "traces": [tr.to_json() for tr in traces],
            "seconds": time.perf_counter() - t0,
            **_tag("conformal-opt", c.tol),
        }
    except Exception as exc:  # member-level failures are recorded, not raised
        return {"b": b, "error": f"{type(exc).__name__}: {exc}", "seconds": time.perf_counter() - t0}


def sweep_table(members: list, k: int, label: str) -> LambdaTable:
    """Sweep estimates as a table (one pseudo-surface per member)."""
    table = LambdaTable()
    for m in members:
        if "estimate" in m:
            name = f"{label}(b={m['b']:g})"
            table.set(name, 0, 0.0)
            table.set(name, k, float(m["estimate"]))
    return table


def _run_sweep(c: ExperimentConfig) -> ExperimentReport:
    family = degeneration_family(c.family, c.schedule, a=c.a)
    payloads = [(c.to_json(), b) for b in c.schedule]
    if c.jobs > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=min(c.jobs, len(payloads))) as pool:
            members = list(pool.map(_sweep_member, payloads))
    else:
        members = [_sweep_member(p) for p in payloads]
    for m, g in zip(members, family.geodesics):
        m["geodesic"] = {"length": g.length, "sidedness": g.sidedness, "collar_width": g.collar_width}
    ok = [m for m in members if "estimate" in m]
    limit = limit_value(family.limiting, c.k, builtin_table(c.k))
    summary = {
        "family": c.family,
        "k": c.k,
        I_K_LABEL: min((m["estimate"] for m in ok), default=None),
        "estimates": [[m["b"], m["estimate"]] for m in ok],
        "limit": {**limit.to_json(), **_tag("moduli", 0.0)},
        "limiting_space": family.limiting.to_json(),
        "table_violations": table_violations(sweep_table(members, c.k, c.family), rtol=c.tol),
    }
    rows = []
    for m in members:
        if "traces" in m:
            for tr in m["traces"]:
                for it, row in enumerate(tr["iterates"]):
                    rows.append({"b": m["b"], "start": tr["start"], "iterate": it, "objective": row[0], "step": row[1], "cluster": int(row[2])})
    errors = [{"b": m["b"], "error": m["error"]} for m in members if "error" in m]
    members_out = [{key: v for key, v in m.items() if key not in ("seconds",)} for m in members]
    report = ExperimentReport(c.to_json(), c.command, {"family": family.to_json()}, rows, ["b", "start", "iterate", "objective", "step", "cluster"], members_out, summary, errors=errors)
    report.timings["members"] = {str(m["b"]): m.get("seconds") for m in members}
    return report


def _load_spec(spec) -> LimitingSpaceSpec:
    if isinstance(spec, LimitingSpaceSpec):
        return spec
    if isinstance(spec, dict):
        return LimitingSpaceSpec.from_json(spec)
    if isinstance(spec, str):
        if spec in FAMILY_KINDS:
            return limiting_spec(spec)
        path = Path(spec)
        if path.exists():
            return LimitingSpaceSpec.from_json(json.loads(path.read_text(encoding="utf-8")))
    raise ConfigError(f"cannot read limiting space {spec!r}", "spec")


def _run_limit(c: ExperimentConfig) -> ExperimentReport:
    spec = _load_spec(c.spec)
    table = builtin_table(max(c.k, 1))
    if c.table:
        table = table.merged(LambdaTable.from_json(json.loads(Path(c.table).read_text(encoding="utf-8"))))
    rows, values = [], []
    for k in range(1, c.k + 1):
        lv = limit_value(spec, k, table)
        f = format_value(lv.value)
        rows.append({"k": k, "exact": f["exact"], "decimal": f["decimal"], "simplified_agrees": lv.agrees_with_simplified})
        values.append({"k": k, **lv.to_json()})
    results = {"spec": spec.to_json(), "values": values, **_tag("moduli", 0.0)}
    try:
        g = genus_relation(spec)
        results["genus"] = {"genus": g.genus, "formula": g.formula}
    except ConfSpecError as exc:
        results["genus"] = {"error": str(exc)}
    if not spec.source_orientable and spec.source_genus is not None and spec.source_genus % 2 == 0:
        ok, witness = even_genus_analysis(spec)
        results["even_genus"] = {"accepted": ok, "witness": witness}
    return ExperimentReport(c.to_json(), c.command, results, rows, ["k", "exact", "decimal", "simplified_agrees"])


def _run_collar(c: ExperimentConfig) -> ExperimentReport:
    geo = CollarGeometry(c.length, c.sidedness)
    w = geo.width
    ts = np.linspace(-w, w, 201)[1:-1]
    prof = geo.profile(ts)
    pts = collar_to_sphere(ts, 0.0, c.offset)
    rows = [{"t": float(t), "profile": float(p), "x": float(q[0]), "y": float(q[1]), "z": float(q[2])} for t, p, q in zip(ts, prof, pts)]
    results = {"collar": {**geo.to_json(), **_tag("analytic", 0.0)}}
    return ExperimentReport(c.to_json(), c.command, results, rows, ["t", "profile", "x", "y", "z"])


def _sphere_for(c: ExperimentConfig):
    surface = c.surface if c.surface in ("sphere", "rp2") else "sphere"
    return generate_surface_mesh(make_class(surface), c.res)


def _run_rho_delta(c: ExperimentConfig) -> ExperimentReport:
    surf = _sphere_for(c)
    hemi = np.flatnonzero(surf.barycenters[:, 2] > 0)
    out = rho_delta_experiment(surf, hemi, c.deltas, c.k, tol=c.tol)
    rows = [r.__dict__ for r in out.rows]
    results = {**out.to_json(), "domain": "upper hemisphere", **_tag("conformal-opt", c.tol)}
    return ExperimentReport(c.to_json(), c.command, results, rows, ["delta", "eigenvalue", "normalized", "gap"])


def _run_ball_removal(c: ExperimentConfig) -> ExperimentReport:
    surf = _sphere_for(c)
    out = ball_removal_experiment(surf, c.centers, c.radii, c.k, tol=c.tol)
    rows = [r.__dict__ for r in out.rows]
    results = {**out.to_json(), **_tag("conformal-opt", c.tol)}
    return ExperimentReport(c.to_json(), c.command, results, rows, ["radius", "removed_triangles", "eigenvalue", "gap", "boundary_loops"])


_DISPATCH = {
    "gen-mesh": _run_gen_mesh,
    "oracle": _run_oracle,
    "spectrum": _run_spectrum,
    "maximize": _run_maximize,
    "sweep": _run_sweep,
    "limit": _run_limit,
    "collar": _run_collar,
    "rho-delta": _run_rho_delta,
    "ball-removal": _run_ball_removal,
}


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Resolve ``config`` and run the matching pipeline."""
    c = resolve_config(config)
    t0 = time.perf_counter()
    report = _DISPATCH[c.command](c)
    report.config = c.to_json()
    report.timings["total_seconds"] = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------------------
# Output


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
    if isinstance(obj, PiMultiple):
        return str(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def report_json(report: ExperimentReport) -> str:
    return json.dumps(_jsonable(report.to_json()), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def report_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=report.columns, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in report.rows:
        writer.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in row.items()})
    return buf.getvalue()


def emit_report(report: ExperimentReport, out_dir, formats=("json", "csv"), figures: bool = True) -> list[Path]:
    """Write ``<command>.json``/``<command>.csv`` (and figures) into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = report.command.replace("-", "_")
    written = []
    if "json" in formats:
        p = out / f"{stem}.json"
        p.write_text(report_json(report), encoding="utf-8")
        written.append(p)
    if "csv" in formats:
        p = out / f"{stem}.csv"
        p.write_text(report_csv(report), encoding="utf-8")
        written.append(p)
        if "spectrum" in report.artifacts:
            p = out / f"{stem}_eigenvectors.csv"
            p.write_text(report.artifacts["spectrum"].eigenvectors_csv(), encoding="utf-8")
            written.append(p)
    if figures:
        from .plotting import render_figures

        written += render_figures(report, out)
    return written
