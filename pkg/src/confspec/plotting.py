"""Figures written next to the JSON/CSV output of an experiment."""
from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["render_figures"]


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    # fixed metadata keeps repeated emissions byte-identical
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    return path


def _mesh_figure(report, out: Path, stem: str):
    surf = report.artifacts.get("surface")
    if surf is None:
        return []
    fig = plt.figure(figsize=(5, 5))
    if surf.vertices.shape[1] == 2:
        ax = fig.add_subplot(111)
        ax.triplot(surf.vertices[:, 0], surf.vertices[:, 1], surf.triangles, lw=0.4, color="0.3")
        ax.set_aspect("equal")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
    else:
        ax = fig.add_subplot(111, projection="3d")
        v = surf.vertices
        ax.plot_trisurf(v[:, 0], v[:, 1], v[:, 2], triangles=surf.triangles, color="0.85", edgecolor="0.3", lw=0.2)
        ax.set_box_aspect((1, 1, 1))
    ax.set_title(surf.class_tag.descriptor if hasattr(surf.class_tag, "descriptor") else "mesh")
    return [_save(fig, out / f"{stem}_mesh.png")]


def _spectrum_figure(report, out: Path, stem: str):
    rows = report.rows
    if not rows:
        return []
    idx = [r["index"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(idx, [r["lambda_bar"] for r in rows], "o", label="FEM")
    ax.plot(idx, [r["oracle"] for r in rows], "x", label="exact")
    ax.set_xlabel("index k")
    ax.set_ylabel("normalized eigenvalue")
    ax.legend()
    return [_save(fig, out / f"{stem}_spectrum.png")]


def _oracle_figure(report, out: Path, stem: str):
    rows = report.rows
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.stem([r["lambda_bar"] for r in rows], [r["multiplicity"] for r in rows])
    ax.set_xlabel("normalized eigenvalue")
    ax.set_ylabel("multiplicity")
    return [_save(fig, out / f"{stem}_oracle.png")]


def _trace_figure(report, out: Path, stem: str):
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for tr in report.results.get("traces", []):
        ax.plot([row[0] for row in tr["iterates"]], label=tr["start"])
    known = report.results.get("known_supremum")
    if known:
        ax.axhline(known, color="k", ls="--", lw=0.8, label="known supremum")
    ax.set_xlabel("accepted step")
    ax.set_ylabel("normalized eigenvalue")
    ax.legend()
    return [_save(fig, out / f"{stem}_trace.png")]


def _sweep_figure(report, out: Path, stem: str):
    est = report.summary.get("estimates", [])
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    if est:
        b, v = zip(*est)
        ax.plot(b, v, "o-", label="estimate")
    ax.axhline(8 * math.pi * report.summary.get("k", 1), color="k", ls="--", lw=0.8, label="8πk")
    limit = report.summary.get("limit", {}).get("value", {}).get("decimal")
    if limit:
        ax.axhline(limit, color="r", ls=":", lw=0.8, label="limit value")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("b")
    ax.set_ylabel("Λ_k estimate")
    ax.legend()
    return [_save(fig, out / f"{stem}_estimates.png")]


def _limit_figure(report, out: Path, stem: str):
    rows = report.rows
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ks = [r["k"] for r in rows]
    ax.plot(ks, [r["decimal"] for r in rows], "o-", label="limit value")
    ax.plot(ks, [8 * math.pi * k for k in ks], "--", color="k", lw=0.8, label="8πk")
    ax.set_xlabel("k")
    ax.set_ylabel("value")
    ax.legend()
    return [_save(fig, out / f"{stem}_values.png")]


def _collar_figure(report, out: Path, stem: str):
    rows = report.rows
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([r["t"] for r in rows], [r["profile"] for r in rows])
    ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("conformal factor")
    return [_save(fig, out / f"{stem}_profile.png")]


def _gap_figure(report, out: Path, stem: str, key: str):
    rows = [r for r in report.rows if r[key] > 0]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if rows:
        ax.plot([r[key] for r in rows], [abs(r["gap"]) for r in rows], "o-")
        ax.set_xscale("log")
    ax.set_xlabel(key)
    ax.set_ylabel("|gap|")
    return [_save(fig, out / f"{stem}_gap.png")]


def render_figures(report, out_dir) -> list[Path]:
    """Render the figures that belong to ``report.command``."""
    out = Path(out_dir)
    stem = report.command.replace("-", "_")
    cmd = report.command
    if cmd == "gen-mesh":
        return _mesh_figure(report, out, stem)
    if cmd == "oracle":
        return _oracle_figure(report, out, stem)
    if cmd == "spectrum":
        return _spectrum_figure(report, out, stem)
    if cmd == "maximize":
        return _trace_figure(report, out, stem)
    if cmd == "sweep":
        return _sweep_figure(report, out, stem)
    if cmd == "limit":
        return _limit_figure(report, out, stem)
    if cmd == "collar":
        return _collar_figure(report, out, stem)
    if cmd == "rho-delta":
        return _gap_figure(report, out, stem, "delta")
    if cmd == "ball-removal":
        return _gap_figure(report, out, stem, "radius")
    return []
