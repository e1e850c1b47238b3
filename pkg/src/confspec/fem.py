"""Piecewise-linear finite elements for ``-Delta_g u = lambda rho u`` on a
triangulated surface with a conformal density ``rho``.

In two dimensions the Dirichlet energy is conformally invariant, so the
stiffness matrix only depends on the background metric; the density enters
through the mass matrix alone.
"""
from __future__ import annotations

import csv
import io
import math
import weakref
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, LinearOperator, eigsh, splu

from .errors import ConvergenceFailure, DegenerateTriangle
from .mesh import DiscreteSurface

__all__ = [
    "DensityField",
    "SpectrumResult",
    "assemble",
    "stiffness_matrix",
    "mass_matrix",
    "solve_spectrum",
    "normalized_eigenvalues",
    "surface_spectrum",
    "MIN_TRIANGLE_AREA",
]

MIN_TRIANGLE_AREA = 1e-14
DENSE_LIMIT = 300


@dataclass(frozen=True, eq=False)
class DensityField:
    """Positive conformal density ``rho = exp(log_values)`` at the dofs.

    Attributes
    ----------
    log_values : ndarray, shape (n_dofs,)
    triangle_scale : ndarray, shape (F,), optional
        Positive per-triangle factors multiplying ``rho``; they express
        densities that jump across a union of edges (e.g. 1 on a subdomain
        and ``delta`` outside).
    partition_tag : ndarray of int, shape (F,), optional
        Label of the piece each triangle belongs to.
    """

    log_values: np.ndarray
    triangle_scale: Optional[np.ndarray] = None
    partition_tag: Optional[np.ndarray] = None

    def __post_init__(self):
        lv = np.array(self.log_values, dtype=float)
        if not np.all(np.isfinite(lv)):
            raise ValueError("log density must be finite")
        lv.setflags(write=False)
        object.__setattr__(self, "log_values", lv)
        if self.triangle_scale is not None:
            ts = np.array(self.triangle_scale, dtype=float)
            if not np.all(ts > 0) or not np.all(np.isfinite(ts)):
                raise ValueError("triangle scale factors must be positive and finite")
            ts.setflags(write=False)
            object.__setattr__(self, "triangle_scale", ts)
        if self.partition_tag is not None:
            object.__setattr__(self, "partition_tag", np.asarray(self.partition_tag, dtype=np.int64))

    @property
    def rho(self) -> np.ndarray:
        return np.exp(self.log_values)

    @classmethod
    def uniform(cls, surface: DiscreteSurface, value: float = 1.0) -> "DensityField":
        return cls(np.full(surface.n_dofs, math.log(value)))

    @classmethod
    def from_function(cls, surface: DiscreteSurface, fn: Callable[[np.ndarray], np.ndarray]) -> "DensityField":
        """Sample a positive function of the dof coordinates."""
        return cls(np.log(fn(surface.dof_positions)))

    @classmethod
    def piecewise(cls, surface: DiscreteSurface, labels, values) -> "DensityField":
        """Density equal to ``values[label]`` on every triangle of that label."""
        labels = np.asarray(labels, dtype=np.int64)
        scale = np.asarray(values, dtype=float)[labels]
        return cls(np.zeros(surface.n_dofs), triangle_scale=scale, partition_tag=labels)

    def scaled(self, t: float) -> "DensityField":
        return DensityField(self.log_values + math.log(t), self.triangle_scale, self.partition_tag)

    def with_log_values(self, log_values) -> "DensityField":
        return DensityField(log_values, self.triangle_scale, self.partition_tag)

    def to_json(self) -> dict:
        return {
            "log_values": self.log_values.tolist(),
            "triangle_scale": None if self.triangle_scale is None else self.triangle_scale.tolist(),
        }


# ---------------------------------------------------------------------------
# Assembly

_STIFFNESS_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _check_areas(surface: DiscreteSurface) -> np.ndarray:
    areas = surface.triangle_areas
    bad = np.flatnonzero(areas < MIN_TRIANGLE_AREA)
    if bad.size:
        raise DegenerateTriangle(f"triangle {int(bad[0])} has area {areas[bad[0]]:.3e}")
    return areas


def stiffness_matrix(surface: DiscreteSurface) -> sp.csr_matrix:
    """Cotangent stiffness matrix on the glued dofs (cached per surface)."""
    cached = _STIFFNESS_CACHE.get(surface)
    if cached is not None:
        return cached
    areas = _check_areas(surface)
    p = surface.vertices[surface.triangles]
    # edge opposite local vertex i, oriented cyclically
    e = [p[:, (i + 2) % 3] - p[:, (i + 1) % 3] for i in range(3)]
    tri = surface.dof_triangles
    n = surface.n_dofs
    rows, cols, vals = [], [], []
    for i in range(3):
        for j in range(3):
            rows.append(tri[:, i])
            cols.append(tri[:, j])
            vals.append(np.einsum("ij,ij->i", e[i], e[j]) / (4 * areas))
    K = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    K = ((K + K.T) * 0.5).tocsr()
    K.sort_indices()
    _STIFFNESS_CACHE[surface] = K
    return K


def _triangle_weights(surface: DiscreteSurface, density: Optional[DensityField]):
    """Per-triangle ``s_T |T|`` and the nodal density values ``rho``."""
    areas = _check_areas(surface)
    if density is None:
        return areas, np.ones(surface.n_dofs)
    if density.log_values.shape != (surface.n_dofs,):
        raise ValueError(f"density has {density.log_values.shape[0]} values, surface has {surface.n_dofs} dofs")
    w = areas if density.triangle_scale is None else areas * density.triangle_scale
    return w, density.rho


def mass_matrix(surface: DiscreteSurface, density: Optional[DensityField] = None, lumped: bool = False) -> sp.csr_matrix:
    """Mass matrix ``int rho phi_i phi_j`` with ``rho`` interpolated linearly.

    Integration of the cubic integrand is exact on each triangle.
    """
    w, rho = _triangle_weights(surface, density)
    tri = surface.dof_triangles
    r = rho[tri]
    rs = r.sum(axis=1)
    n = surface.n_dofs
    rows, cols, vals = [], [], []
    for i in range(3):
        for j in range(3):
            if i == j:
                v = w * (2 * r[:, i] + rs) / 30.0
            else:
                k = 3 - i - j
                v = w * (2 * r[:, i] + 2 * r[:, j] + r[:, k]) / 60.0
            rows.append(tri[:, i])
            cols.append(tri[:, j])
            vals.append(v)
    M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    M = ((M + M.T) * 0.5).tocsr()
    if lumped:
        M = sp.diags(np.asarray(M.sum(axis=1)).ravel()).tocsr()
    M.sort_indices()
    return M


def assemble(surface: DiscreteSurface, density: Optional[DensityField] = None, lumped: bool = False):
    """Stiffness and mass matrices ``(K, M)`` on the glued dofs."""
    return stiffness_matrix(surface), mass_matrix(surface, density, lumped)


def vertex_weights(surface: DiscreteSurface, density: Optional[DensityField] = None) -> np.ndarray:
    """``sum_T s_T |T| / 3`` over triangles at each dof (density-free area share)."""
    w, _ = _triangle_weights(surface, density)
    return np.bincount(surface.dof_triangles.ravel(), weights=np.repeat(w / 3, 3), minlength=surface.n_dofs)


def mass_derivative_quadratic(surface: DiscreteSurface, density: Optional[DensityField], u: np.ndarray) -> np.ndarray:
    """``u^T (dM/drho_v) u`` for every dof ``v``.

    Uses ``int phi_i phi_j phi_k = |T|/60 (1 + d_ij + d_ik + d_jk + 2 d_ijk)``.
    ``u`` may carry several columns; the result is summed over them.
    """
    w, _ = _triangle_weights(surface, density)
    tri = surface.dof_triangles
    U = np.asarray(u, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    out = np.zeros(surface.n_dofs)
    for c in range(U.shape[1]):
        ut = U[tri, c]
        s1 = ut.sum(axis=1, keepdims=True)
        s2 = (ut * ut).sum(axis=1, keepdims=True)
        local = (w[:, None] / 60.0) * (s1 * s1 + s2 + 2 * ut * s1 + 2 * ut * ut)
        out += np.bincount(tri.ravel(), weights=local.ravel(), minlength=surface.n_dofs)
    return out


# ---------------------------------------------------------------------------
# Eigenproblem


@dataclass
class SpectrumResult:
    """Low eigenpairs of ``K u = lambda M u``.

    ``eigenvalues``/``eigenvectors`` hold indices ``0..k``; the ``tail_*``
    fields hold the extra pairs computed to resolve clusters at ``k``.
    Eigenvectors are columns, mass-orthonormal.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    area: float
    tol: float
    tail_eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tail_vectors: Optional[np.ndarray] = None

    @property
    def k(self) -> int:
        return len(self.eigenvalues) - 1

    @property
    def normalized(self) -> np.ndarray:
        return normalized_eigenvalues(self)

    def all_eigenvalues(self) -> np.ndarray:
        return np.concatenate([self.eigenvalues, self.tail_eigenvalues])

    def all_vectors(self) -> np.ndarray:
        if self.tail_vectors is None:
            return self.eigenvectors
        return np.hstack([self.eigenvectors, self.tail_vectors])

    def to_json(self) -> dict:
        return {
            "eigenvalues": self.eigenvalues.tolist(),
            "normalized_eigenvalues": normalized_eigenvalues(self).tolist(),
            "residuals": self.residuals.tolist(),
            "area": self.area,
            "tol": self.tol,
        }

    def eigenvectors_csv(self) -> str:
        """Eigenvectors as CSV text: one row per dof, one column per index."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["dof"] + [f"u{i}" for i in range(self.eigenvectors.shape[1])])
        for i, row in enumerate(self.eigenvectors):
            writer.writerow([i] + [repr(float(v)) for v in row])
        return buf.getvalue()


def normalized_eigenvalues(result: SpectrumResult) -> np.ndarray:
    """``lambda_k * area`` (dimension two)."""
    return np.asarray(result.eigenvalues) * result.area


def _relative_residuals(K, M, lam, U) -> np.ndarray:
    R = K @ U - (M @ U) * lam
    MU = M @ U
    denom = np.abs(lam) * np.linalg.norm(MU, axis=0)
    return np.linalg.norm(R, axis=0) / np.where(denom > 0, denom, 1.0)


def _fix_signs(U: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(U), axis=0)
    s = np.sign(U[idx, np.arange(U.shape[1])])
    s[s == 0] = 1
    return U * s


def _dense_nonzero_pairs(K, M, nev, const):
    lam, U = scipy.linalg.eigh(K.toarray(), M.toarray())
    # drop the constant mode: the eigenvector with largest overlap with 1
    Mc = M @ const
    overlap = np.abs(U.T @ Mc)
    drop = int(np.argmax(overlap[:3]))
    keep = [i for i in range(len(lam)) if i != drop][:nev]
    return lam[keep], U[:, keep]


def _sparse_nonzero_pairs(K, M, nev, const, area, seed, maxiter):
    n = K.shape[0]
    sigma = -1.0 / area
    lu = splu((K - sigma * M).tocsc())
    Mc = M @ const

    def op(x):
        y = lu.solve(np.asarray(x, dtype=float).ravel())
        return y - const * (Mc @ y)

    opinv = LinearOperator((n, n), matvec=op, dtype=float)
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n)
    v0 -= const * (Mc @ v0)
    ncv = min(n - 1, max(2 * nev + 1, nev + 20))
    try:
        lam, U = eigsh(K, k=nev, M=M, sigma=sigma, which="LM", OPinv=opinv, v0=v0, ncv=ncv, tol=0, maxiter=maxiter)
    except ArpackNoConvergence as exc:
        raise ConvergenceFailure(f"eigensolver did not converge after {maxiter} iterations") from exc
    except ArpackError as exc:
        raise ConvergenceFailure(f"eigensolver failed: {exc}") from exc
    order = np.argsort(lam)
    return lam[order], U[:, order]


def solve_spectrum(operators, k: int, tol: float = 1e-8, seed: int = 0, extra: int = 2, maxiter: Optional[int] = None) -> SpectrumResult:
    """First ``k + 1`` eigenpairs of ``K u = lambda M u``.

    Parameters
    ----------
    operators : tuple (K, M)
        Output of :func:`assemble`; the surface must be connected.
    k : int
        Highest index requested.
    tol : float
        Bound on the relative residual ``|K u - lambda M u| / (lambda |M u|)``
        of every nonzero pair, in ``[1e-12, 1e-4]``.
    seed : int
        Seed of the Lanczos starting vector.
    extra : int
        Additional pairs above ``k`` (used to detect clusters at index ``k``).

    Returns
    -------
    SpectrumResult
        ``lambda_0 = 0`` with the constant eigenvector, the rest ascending.

    Raises
    ------
    ConvergenceFailure
        If the iteration cap is reached or a residual exceeds ``tol``.
    """
    K, M = operators
    n = K.shape[0]
    if not 1e-12 <= tol <= 1e-4:
        raise ValueError("tol must lie in [1e-12, 1e-4]")
    if k < 0 or k + 1 > n - 1:
        raise ValueError(f"cannot compute {k + 1} eigenpairs of a {n}-dimensional problem")
    area = float(M.sum())
    const = np.full(n, 1.0 / math.sqrt(area))
    nev = min(k + extra, n - 2)
    if k == 0:
        lam, U = np.zeros(0), np.zeros((n, 0))
    elif n <= DENSE_LIMIT:
        lam, U = _dense_nonzero_pairs(K, M, nev, const)
    else:
        lam, U = _sparse_nonzero_pairs(K, M, max(nev, 1), const, area, seed, maxiter)
    if len(lam):
        # Rayleigh-Ritz on the computed subspace restores exact M-orthonormality
        U = U - np.outer(const, (M @ const) @ U)
        A = U.T @ (K @ U)
        B = U.T @ (M @ U)
        lam, C = scipy.linalg.eigh((A + A.T) / 2, (B + B.T) / 2)
        U = _fix_signs(U @ C)
    res = _relative_residuals(K, M, lam, U) if len(lam) else np.zeros(0)
    bad = np.flatnonzero(res[:k] > tol)
    if bad.size:
        raise ConvergenceFailure(
            f"relative residual {res[bad[0]]:.3e} of pair {bad[0] + 1} exceeds tol={tol:.1e}",
            residuals=res.tolist(),
        )
    vals = np.concatenate([[0.0], lam[:k]])
    vecs = np.column_stack([const, U[:, :k]])
    return SpectrumResult(
        eigenvalues=vals,
        eigenvectors=vecs,
        residuals=np.concatenate([[0.0], res[:k]]),
        area=area,
        tol=tol,
        tail_eigenvalues=lam[k:],
        tail_vectors=U[:, k:],
    )


def surface_spectrum(surface: DiscreteSurface, k: int, density: Optional[DensityField] = None, tol: float = 1e-8, seed: int = 0, extra: int = 2) -> SpectrumResult:
    """Assemble and solve in one call."""
    return solve_spectrum(assemble(surface, density), k, tol=tol, seed=seed, extra=extra)
