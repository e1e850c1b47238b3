"""Neumann spectra of subdomains and the density experiments that relate
them to closed-surface spectra: densities equal to ``delta`` off a domain,
removal of small geodesic balls, and eigenvalue bracketing by cutting.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import BallsOverlap
from .fem import DensityField, SpectrumResult, assemble, normalized_eigenvalues, solve_spectrum
from .mesh import DiscreteSurface, extract_subdomain, validate_topology
from .moduli import KleinClass, RP2Class, SphereClass, Subdomain, TorusClass
from .optimize import OptimizerOptions, maximize_normalized_eigenvalue

__all__ = [
    "RhoDeltaRow",
    "RhoDeltaResult",
    "rho_delta_density",
    "rho_delta_experiment",
    "BallRemovalRow",
    "BallRemovalResult",
    "ball_removal_experiment",
    "balls_selection",
    "quotient_distance",
    "neumann_spectrum",
    "piecewise_spectrum",
    "bracketing_check",
    "MonotonicityResult",
    "subdomain_monotonicity",
]


def _tag_root(tag):
    while isinstance(tag, Subdomain):
        tag = tag.parent
    return tag


def neumann_spectrum(sub: DiscreteSurface, k: int, density: Optional[DensityField] = None, tol: float = 1e-8, seed: int = 0) -> SpectrumResult:
    """Spectrum of a mesh with boundary under natural (free) boundary conditions."""
    return solve_spectrum(assemble(sub, density), k, tol=tol, seed=seed)


def _components(surface: DiscreteSurface, triangles: np.ndarray) -> list[np.ndarray]:
    """Split a set of triangles into groups connected through shared dofs."""
    tri = surface.dof_triangles[triangles]
    parent = {}

    def find(x):
        parent.setdefault(x, x)
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b, c in tri.tolist():
        for u, v in ((a, b), (b, c)):
            ru, rv = find(u), find(v)
            if ru != rv:
                parent[ru] = rv
    roots = np.array([find(int(t[0])) for t in tri])
    return [triangles[roots == r] for r in np.unique(roots)]


def piecewise_spectrum(surface: DiscreteSurface, labels: np.ndarray, k: int, density: Optional[DensityField] = None, tol: float = 1e-8) -> np.ndarray:
    """First ``k + 1`` eigenvalues of the surface cut along the label
    interfaces (Neumann conditions on both sides of every cut).

    Each connected piece is solved separately and the spectra are merged.
    """
    labels = np.asarray(labels)
    values = []
    for lab in np.unique(labels):
        for comp in _components(surface, np.flatnonzero(labels == lab)):
            if len(comp) == len(surface.triangles):
                part, part_density = surface, density
            else:
                part = extract_subdomain(surface, comp)
                part_density = None
                if density is not None:
                    part_density = DensityField(
                        density.log_values[part.parent_dofs(surface)],
                        None if density.triangle_scale is None else density.triangle_scale[comp],
                    )
            kk = min(k, part.n_dofs - 2)
            values.append(solve_spectrum(assemble(part, part_density), kk, tol=tol).eigenvalues)
    return np.sort(np.concatenate(values))[: k + 1]


def bracketing_check(surface: DiscreteSurface, labels: np.ndarray, k: int, density: Optional[DensityField] = None, tol: float = 1e-8) -> tuple[bool, np.ndarray, np.ndarray]:
    """Check ``lambda_j(M) >= lambda_j(cut M)`` for ``j <= k``.

    The finite element space of the closed surface is a subspace of the
    space on the cut surface with the same mass form, so the inequality
    holds exactly for the discrete problems (up to solver tolerance).
    """
    closed = solve_spectrum(assemble(surface, density), k, tol=tol).eigenvalues
    cut = piecewise_spectrum(surface, labels, k, density, tol)
    ok = bool(np.all(closed + tol * np.maximum(1.0, np.abs(closed)) >= cut))
    return ok, closed, cut


# ---------------------------------------------------------------------------
# delta densities


def rho_delta_density(surface: DiscreteSurface, selection, delta: float) -> DensityField:
    """Density equal to 1 on the selected triangles and ``delta`` elsewhere."""
    labels = np.zeros(len(surface.triangles), dtype=np.int64)
    labels[np.asarray(list(selection), dtype=np.int64)] = 1
    return DensityField.piecewise(surface, labels, [delta, 1.0])


@dataclass
class RhoDeltaRow:
    delta: float
    eigenvalue: float
    normalized: float
    gap: float


@dataclass
class RhoDeltaResult:
    k: int
    rows: list
    neumann_eigenvalue: float
    neumann_normalized: float
    closed_eigenvalues: np.ndarray
    tol: float

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "rows": [r.__dict__ for r in self.rows],
            "neumann_eigenvalue": self.neumann_eigenvalue,
            "neumann_normalized": self.neumann_normalized,
            "closed_eigenvalues": list(map(float, self.closed_eigenvalues)),
            "tol": self.tol,
        }


def rho_delta_experiment(surface: DiscreteSurface, selection, deltas: Sequence[float], k: int, tol: float = 1e-8) -> RhoDeltaResult:
    """``lambda_k`` of the density equal to ``delta`` off the domain, for each
    ``delta``, against the Neumann eigenvalue of the domain itself."""
    deltas = [float(d) for d in deltas]
    if any(d <= 0 for d in deltas):
        raise ValueError("deltas must be positive")
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ValueError("deltas must be strictly descending")
    sel = np.asarray(sorted(set(int(t) for t in selection)), dtype=np.int64)
    sub = extract_subdomain(surface, sel)
    neu = neumann_spectrum(sub, k, tol=tol)
    lam_n = float(neu.eigenvalues[k])
    closed = solve_spectrum(assemble(surface), k, tol=tol)
    rows = []
    for d in deltas:
        res = solve_spectrum(assemble(surface, rho_delta_density(surface, sel, d)), k, tol=tol)
        lam = float(res.eigenvalues[k])
        rows.append(RhoDeltaRow(d, lam, lam * res.area, lam - lam_n))
    return RhoDeltaResult(k, rows, lam_n, lam_n * neu.area, closed.eigenvalues, tol)


# ---------------------------------------------------------------------------
# ball removal


def quotient_distance(surface: DiscreteSurface, points: np.ndarray, center) -> np.ndarray:
    """Distance from ``center`` to ``points`` in the background metric of the
    closed quotient surface (geodesic on round classes)."""
    tag = _tag_root(surface.class_tag)
    pts = np.atleast_2d(points)
    c = np.asarray(center, dtype=float)
    if isinstance(tag, (SphereClass, RP2Class)):
        c = c / np.linalg.norm(c)
        nrm = np.linalg.norm(pts, axis=1)
        dots = pts @ c / nrm
        if isinstance(tag, RP2Class):
            dots = np.abs(dots)
        return np.arccos(np.clip(dots, -1.0, 1.0))
    if isinstance(tag, TorusClass):
        lattice = np.array([[1.0, 0.0], [tag.a, tag.b]]) / math.sqrt(tag.b)
        images = [c + m * lattice[0] + n * lattice[1] for m in range(-2, 3) for n in range(-2, 3)]
    elif isinstance(tag, KleinClass):
        w, h = tag.b ** -0.5, tag.b ** 0.5
        images = [np.array([c[0] + m * w, (-1) ** m * c[1] + n * h]) for m in range(-2, 3) for n in range(-2, 3)]
    else:
        raise ValueError(f"no distance for {tag!r}")
    return np.min([np.linalg.norm(pts - im, axis=1) for im in images], axis=0)


def balls_selection(surface: DiscreteSurface, centers, radius: float) -> np.ndarray:
    """Boolean mask of triangles meeting one of the balls.

    A triangle is removed when its barycenter or one of its vertices lies
    within ``radius``; the triangle nearest to each center is always removed
    for positive ``radius``.
    """
    removed = np.zeros(len(surface.triangles), dtype=bool)
    if radius <= 0:
        return removed
    bary = surface.barycenters
    for c in centers:
        db = quotient_distance(surface, bary, c)
        dv = quotient_distance(surface, surface.vertices, c)[surface.triangles].min(axis=1)
        removed |= (db < radius) | (dv < radius)
        removed[int(np.argmin(db))] = True
    return removed


@dataclass
class BallRemovalRow:
    radius: float
    removed_triangles: int
    eigenvalue: float
    gap: float
    boundary_loops: int


@dataclass
class BallRemovalResult:
    k: int
    closed_eigenvalue: float
    rows: list
    tol: float

    def to_json(self) -> dict:
        return {"k": self.k, "closed_eigenvalue": self.closed_eigenvalue, "rows": [r.__dict__ for r in self.rows], "tol": self.tol}


def ball_removal_experiment(surface: DiscreteSurface, centers, radii: Sequence[float], k: int, tol: float = 1e-8) -> BallRemovalResult:
    """Neumann ``lambda_k`` of the surface with small balls removed.

    ``radii`` must be descending; the balls must be disjoint at the largest
    radius.  A radius of 0 reproduces the closed spectrum.
    """
    radii = [float(r) for r in radii]
    if any(r < 0 for r in radii):
        raise ValueError("radii must be non-negative")
    if any(b >= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be strictly descending")
    centers = [np.asarray(c, dtype=float) for c in centers]
    rmax = radii[0] if radii else 0.0
    for i in range(len(centers)):
        for j in range(i + 1, len(centers)):
            d = float(quotient_distance(surface, centers[j][None, :], centers[i])[0])
            if d <= 2 * rmax:
                raise BallsOverlap(f"balls {i} and {j} overlap: distance {d:.4g} <= 2 * {rmax:.4g}")
    closed = solve_spectrum(assemble(surface), k, tol=tol)
    lam0 = float(closed.eigenvalues[k])
    rows = []
    for r in radii:
        mask = balls_selection(surface, centers, r)
        if not mask.any():
            lam, loops = lam0, 0
        else:
            sub = extract_subdomain(surface, np.flatnonzero(~mask))
            lam = float(neumann_spectrum(sub, k, tol=tol).eigenvalues[k])
            loops = validate_topology(sub).boundary_loops
        rows.append(BallRemovalRow(r, int(mask.sum()), lam, lam - lam0, loops))
    return BallRemovalResult(k, lam0, rows, tol)


# ---------------------------------------------------------------------------
# subdomain monotonicity


@dataclass
class MonotonicityResult:
    subdomain_estimate: float
    extension_value: float
    closed_estimate: float
    delta: float
    holds: bool
    tolerance: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def subdomain_monotonicity(surface: DiscreteSurface, selection, k: int, options: Optional[OptimizerOptions] = None, delta: float = 1e-4, rtol: float = 1e-6) -> MonotonicityResult:
    """Compare the best Neumann ``lambda_bar_k`` found on a domain with the
    best closed ``lambda_bar_k`` found from its ``delta``-extension.

    The domain density is optimized first; it is extended by ``delta`` off
    the domain and the closed-surface ascent is started from the extension.
    """
    opts = options or OptimizerOptions()
    sel = np.asarray(sorted(set(int(t) for t in selection)), dtype=np.int64)
    sub = extract_subdomain(surface, sel)
    sub_trace = maximize_normalized_eigenvalue(sub, k, opts, start="uniform")
    log = np.zeros(surface.n_dofs)
    log[sub.parent_dofs(surface)] = sub_trace.final_density.log_values
    labels = np.zeros(len(surface.triangles), dtype=np.int64)
    labels[sel] = 1
    scale = np.where(labels == 1, 1.0, delta)
    ext = DensityField(log, triangle_scale=scale, partition_tag=labels)
    res = solve_spectrum(assemble(surface, ext), k, tol=opts.solver_tol)
    ext_value = float(normalized_eigenvalues(res)[k])
    closed_trace = maximize_normalized_eigenvalue(surface, k, opts, initial=ext, start="delta-extension")
    closed_best = max(closed_trace.final_estimate, ext_value)
    tolerance = rtol * abs(closed_best) + opts.solver_tol * abs(closed_best)
    holds = sub_trace.final_estimate <= closed_best + tolerance
    return MonotonicityResult(sub_trace.final_estimate, ext_value, closed_best, delta, bool(holds), tolerance)
