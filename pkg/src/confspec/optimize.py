"""Ascent on normalized eigenvalues over conformal densities.

The density is parametrized by its logarithm at the mesh dofs.  For a simple
eigenvalue with mass-normalized eigenvector ``u`` the first variation of
``lambda_bar = lambda * area`` along ``delta log rho`` is

    lambda * sum_v rho_v (a_v - area * u^T M_v u) delta_v,

with ``M_v = dM/drho_v`` and ``a_v = d area / d rho_v``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ClusterAmbiguity
from .fem import (
    DensityField,
    SpectrumResult,
    assemble,
    mass_derivative_quadratic,
    normalized_eigenvalues,
    solve_spectrum,
    vertex_weights,
)
from .mesh import DiscreteSurface
from .moduli import KleinClass, RP2Class, SphereClass, TorusClass

__all__ = [
    "OptimizerOptions",
    "OptimizationTrace",
    "GradientResult",
    "eigenvalue_gradient",
    "cluster_indices",
    "objective",
    "maximize_normalized_eigenvalue",
    "best_of_starts",
    "initial_density",
    "default_starts",
    "random_smooth_density",
    "INITIAL_DENSITIES",
]


def cluster_indices(eigenvalues: np.ndarray, k: int, rtol: float) -> tuple[int, int]:
    """Index range ``[lo, hi]`` of eigenvalues within ``rtol`` of ``lambda_k``."""
    lam = np.asarray(eigenvalues)
    ref = lam[k]
    close = np.abs(lam - ref) <= rtol * abs(ref)
    lo = k
    while lo > 1 and close[lo - 1]:
        lo -= 1
    hi = k
    while hi + 1 < len(lam) and close[hi + 1]:
        hi += 1
    return lo, hi


@dataclass
class GradientResult:
    """Gradient of ``lambda_bar_k`` with respect to the log density."""

    gradient: np.ndarray
    direction: np.ndarray
    cluster: tuple
    ambiguous: bool


def eigenvalue_gradient(surface: DiscreteSurface, density: DensityField, result: SpectrumResult, k: int, cluster_tol: float = 1e-6) -> GradientResult:
    """Per-dof derivative of ``lambda_bar_k`` with respect to ``log rho``.

    ``gradient`` is the exact derivative when ``lambda_k`` is simple.  Inside
    a cluster of (numerically) equal eigenvalues the squared eigenfunctions
    are averaged over the cluster, which gives the derivative of the cluster
    mean.  ``direction`` is the same quantity divided by the nodal masses
    ``rho_v a_v`` (an L2 gradient), used as ascent direction.
    """
    n = surface.n_dofs
    if k == 0:
        zero = np.zeros(n)
        return GradientResult(zero, zero.copy(), (0, 0), False)
    lam_all = result.all_eigenvalues()
    vecs = result.all_vectors()
    lo, hi = cluster_indices(lam_all, k, cluster_tol)
    lam = float(np.mean(lam_all[lo : hi + 1]))
    q = mass_derivative_quadratic(surface, density, vecs[:, lo : hi + 1]) / (hi - lo + 1)
    a = vertex_weights(surface, density)
    rho = density.rho
    area = result.area
    grad = lam * rho * (a - area * q)
    direction = grad / (rho * a)
    return GradientResult(grad, direction, (lo, hi), lo < k)


def objective(surface: DiscreteSurface, density: DensityField, k: int, tol: float = 1e-8, seed: int = 0, extra: int = 3):
    """``(lambda_bar_k, SpectrumResult)`` for a density."""
    res = solve_spectrum(assemble(surface, density), k, tol=tol, seed=seed, extra=extra)
    return float(normalized_eigenvalues(res)[k]), res


def _unit_area(surface: DiscreteSurface, density: DensityField) -> DensityField:
    area = float(vertex_weights(surface, density) @ density.rho)
    return density.with_log_values(density.log_values - math.log(area))


@dataclass(frozen=True)
class OptimizerOptions:
    iterations: int = 100
    initial_step: float = 0.5
    max_step: float = 4.0
    min_increase: float = 1e-12
    max_rejections: int = 30
    cluster_tol: float = 1e-6
    solver_tol: float = 1e-8
    seed: int = 0

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class OptimizationTrace:
    """Ascent history; ``iterates`` rows are (objective, step, cluster size)."""

    iterates: list
    final_density: DensityField
    final_estimate: float
    status: str
    start: str = "uniform"
    notes: list = field(default_factory=list)
    seconds: float = 0.0
    ambiguous_steps: int = 0

    @property
    def objectives(self) -> np.ndarray:
        return np.array([row[0] for row in self.iterates])

    def to_json(self, include_density: bool = False) -> dict:
        out = {
            "estimate": self.final_estimate,
            "status": self.status,
            "iterations": len(self.iterates) - 1,
            "start": self.start,
            "notes": list(self.notes),
            "seconds": self.seconds,
            "ambiguous_steps": self.ambiguous_steps,
            "iterates": [list(map(float, row)) for row in self.iterates],
        }
        if include_density:
            out["final_density"] = self.final_density.to_json()
        return out


def maximize_normalized_eigenvalue(surface: DiscreteSurface, k: int, options: Optional[OptimizerOptions] = None, initial: Optional[DensityField] = None, start: str = "custom") -> OptimizationTrace:
    """Backtracking ascent on ``lambda_bar_k`` over log densities.

    A trial step is accepted only if the objective increases by at least
    ``min_increase``; the step halves on rejection and doubles (up to
    ``max_step``) after acceptance.  The density is rescaled to unit area at
    every iterate.  Stops after ``max_rejections`` consecutive rejections
    (``converged``) or after ``iterations`` accepted steps
    (``iteration-capped``).
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    opts = options or OptimizerOptions()
    t0 = time.perf_counter()
    density = _unit_area(surface, initial if initial is not None else DensityField.uniform(surface))
    f, res = objective(surface, density, k, opts.solver_tol, opts.seed)
    g = eigenvalue_gradient(surface, density, res, k, opts.cluster_tol)
    iterates = [(f, 0.0, g.cluster[1] - g.cluster[0] + 1)]
    step = opts.initial_step
    rejections = 0
    ambiguous = int(g.ambiguous)
    status = "iteration-capped"
    while len(iterates) <= opts.iterations:
        d = g.direction
        scale = float(np.max(np.abs(d)))
        if scale == 0.0 or not np.isfinite(scale):
            status = "converged"
            break
        trial = _unit_area(surface, density.with_log_values(density.log_values + (step / scale) * d))
        try:
            f_new, res_new = objective(surface, trial, k, opts.solver_tol, opts.seed)
        except Exception:
            f_new, res_new = -math.inf, None
        if f_new >= f + opts.min_increase:
            density, f, res = trial, f_new, res_new
            g = eigenvalue_gradient(surface, density, res, k, opts.cluster_tol)
            ambiguous += int(g.ambiguous)
            iterates.append((f, step, g.cluster[1] - g.cluster[0] + 1))
            step = min(2 * step, opts.max_step)
            rejections = 0
        else:
            step *= 0.5
            rejections += 1
            if rejections >= opts.max_rejections:
                status = "converged"
                break
    trace = OptimizationTrace(
        iterates=iterates,
        final_density=density,
        final_estimate=f,
        status=status,
        start=start,
        seconds=time.perf_counter() - t0,
        ambiguous_steps=ambiguous,
    )
    if ambiguous:
        trace.notes.append(f"{ClusterAmbiguity.__name__}: cluster at k contained lower indices on {ambiguous} iterates")
    return trace


# ---------------------------------------------------------------------------
# Starting densities


def _sech2(t):
    return 1.0 / np.cosh(np.clip(t, -350, 350)) ** 2


def _wrap(y, period):
    return (y + 0.5 * period) % period - 0.5 * period


def _sphere_bubble(surface: DiscreteSurface) -> np.ndarray:
    """Round sphere placed on the collar of the shortest closed geodesic."""
    tag = surface.class_tag
    p = surface.dof_positions
    if isinstance(tag, TorusClass):
        # short loop along e1 (length b^-1/2), collar coordinate 2 pi y b^1/2
        # with y the height above the e1 axis
        h = tag.b ** 0.5
        y = _wrap(p[:, 1] - 0.5 * h, h)
        return _sech2(2 * math.pi * y * tag.b ** 0.5)
    if isinstance(tag, KleinClass):
        w, h = tag.b ** -0.5, tag.b ** 0.5
        if tag.b <= 1:
            # 2-sided loop along y (length b^1/2); collar along x
            x = p[:, 0] - 0.5 * w
            return _sech2(2 * math.pi * x / h)
        # 2-sided loops along x are the doubled 1-sided ones; centre between them
        y = _wrap(p[:, 1] - 0.25 * h, 0.5 * h)
        return _sech2(2 * math.pi * y / (2 * w))
    raise ValueError("sphere-bubble start needs a flat class")


def _rp2_bubble(surface: DiscreteSurface) -> np.ndarray:
    """Round projective plane placed on the Moebius collar around ``y = 0``."""
    tag = surface.class_tag
    if not isinstance(tag, KleinClass):
        raise ValueError("rp2-bubble start needs a Klein bottle")
    y = _wrap(surface.dof_positions[:, 1], tag.b ** 0.5)
    return _sech2(math.pi * tag.b ** 0.5 * y)


def _two_bubble(surface: DiscreteSurface, separation: float = 1.2) -> np.ndarray:
    """Two round spheres of equal area joined at the equator (sphere only)."""
    if not surface.is_round:
        raise ValueError("two-bubble start needs the sphere")
    z = np.clip(surface.dof_positions[:, 2], -1 + 1e-12, 1 - 1e-12)
    t = np.arctanh(z)
    return (_sech2(t - separation) + _sech2(t + separation)) / _sech2(t)


INITIAL_DENSITIES = ("uniform", "sphere-bubble", "rp2-bubble", "two-bubble")


def initial_density(surface: DiscreteSurface, kind: str, floor: float = 1e-6) -> DensityField:
    """Named starting density (positive, not yet normalized)."""
    if kind == "uniform":
        return DensityField.uniform(surface)
    if kind == "sphere-bubble":
        rho = _sphere_bubble(surface)
    elif kind == "rp2-bubble":
        rho = _rp2_bubble(surface)
    elif kind == "two-bubble":
        rho = _two_bubble(surface)
    else:
        raise ValueError(f"unknown initial density {kind!r}; expected one of {INITIAL_DENSITIES}")
    rho = rho / rho.max()
    return DensityField(np.log(np.maximum(rho, floor)))


def default_starts(surface: DiscreteSurface, k: int) -> list[str]:
    """Starting densities tried by default for a class and index."""
    tag = surface.class_tag
    if isinstance(tag, TorusClass):
        return ["uniform", "sphere-bubble"]
    if isinstance(tag, KleinClass):
        return ["uniform", "sphere-bubble", "rp2-bubble"]
    if isinstance(tag, SphereClass) and k >= 2:
        return ["uniform", "two-bubble"]
    return ["uniform"]


def best_of_starts(surface: DiscreteSurface, k: int, options: Optional[OptimizerOptions] = None, starts: Optional[Sequence[str]] = None) -> tuple[OptimizationTrace, list[OptimizationTrace]]:
    """Run the ascent from several starting densities and keep the best."""
    starts = list(starts) if starts else default_starts(surface, k)
    traces = [
        maximize_normalized_eigenvalue(surface, k, options, initial_density(surface, s), start=s)
        for s in starts
    ]
    best = max(traces, key=lambda tr: tr.final_estimate)
    return best, traces


def random_smooth_density(surface: DiscreteSurface, seed: int, amplitude: float = 0.3, modes: int = 3) -> DensityField:
    """Seeded smooth log density built from a few low Fourier modes of the
    dof coordinates (periodic on flat classes)."""
    rng = np.random.default_rng(seed)
    p = surface.dof_positions
    tag = surface.class_tag
    if isinstance(tag, TorusClass):
        lattice = np.array([[1.0, 0.0], [tag.a, tag.b]]) / math.sqrt(tag.b)
        coords = p @ np.linalg.inv(lattice)  # lattice coordinates in [0, 1)
        log = np.zeros(len(p))
        for _ in range(modes):
            m = rng.integers(-2, 3, size=2)
            if not m.any():
                m[0] = 1
            phase = rng.uniform(0, 2 * math.pi)
            log += rng.normal() * np.cos(2 * math.pi * coords @ m + phase)
    elif isinstance(tag, KleinClass):
        w, h = tag.b ** -0.5, tag.b ** 0.5
        x, y = p[:, 0] / w, p[:, 1] / h
        log = np.zeros(len(p))
        for _ in range(modes):
            m, q = int(rng.integers(0, 3)), int(rng.integers(1, 3))
            # invariant under (x, y) -> (x + w, -y): even m pairs with cos(y), odd m with sin(y)
            ymode = np.cos(2 * math.pi * q * y) if m % 2 == 0 else np.sin(2 * math.pi * q * y)
            log += rng.normal() * np.cos(math.pi * m * x) * ymode
            log += rng.normal() * np.cos(2 * math.pi * (m // 2 + 1) * x)
    else:
        # quadratic forms are even, so they also descend to RP^2
        log = np.zeros(len(p))
        for _ in range(modes):
            log += (p @ rng.normal(size=3)) ** 2
        if isinstance(tag, SphereClass):
            log += p @ rng.normal(size=3)
    log = log - log.mean()
    span = np.max(np.abs(log))
    return DensityField(amplitude * log / (span if span > 0 else 1.0))
