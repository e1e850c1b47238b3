import math
from math import factorial

import numpy as np
import pytest
import scipy.linalg
from numpy.testing import assert_allclose, assert_array_equal

import confspec.fem as fem
from confspec.errors import ConvergenceFailure, DegenerateTriangle
from confspec.fem import DensityField, assemble, mass_matrix, normalized_eigenvalues, solve_spectrum, stiffness_matrix
from confspec.mesh import DiscreteSurface, extract_subdomain, generate_surface_mesh
from confspec.moduli import KleinClass, RP2Class, SphereClass, TorusClass
from confspec.optimize import random_smooth_density


def _monomial(a, b, c, area):
    """Exact integral of l1^a l2^b l3^c over a triangle (barycentric coordinates)."""
    return 2 * area * factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 2)


def _reference_mass(surface, density):
    """Dense mass matrix from the barycentric monomial formula."""
    n = surface.n_dofs
    M = np.zeros((n, n))
    rho = density.rho
    scale = np.ones(len(surface.triangles)) if density.triangle_scale is None else density.triangle_scale
    for t, tri in enumerate(surface.dof_triangles):
        area = surface.triangle_areas[t] * scale[t]
        for i in range(3):
            for j in range(3):
                val = 0.0
                for m in range(3):
                    e = [0, 0, 0]
                    e[i] += 1
                    e[j] += 1
                    e[m] += 1
                    val += rho[tri[m]] * _monomial(*e, area)
                M[tri[i], tri[j]] += val
    return M


@pytest.fixture(scope="module")
def torus16():
    return generate_surface_mesh(TorusClass(0, 1), 16)


class TestAssembly:
    def test_unit_torus_mass_sums_to_one(self, torus16):
        _, M = assemble(torus16)
        assert_allclose(M.sum(), 1.0, atol=1e-10)

    @pytest.mark.parametrize("cls, res", [(TorusClass(0.3, 1.4), 8), (KleinClass(2.0), 8), (SphereClass(), 2), (RP2Class(), 2)])
    def test_stiffness_properties(self, cls, res):
        K = stiffness_matrix(generate_surface_mesh(cls, res))
        assert_allclose(np.asarray(K.sum(axis=1)).ravel(), 0.0, atol=1e-12)
        assert abs(K - K.T).max() == 0
        assert np.linalg.eigvalsh(K.toarray()).min() > -1e-10

    def test_stiffness_independent_of_density(self, torus16):
        dens = random_smooth_density(torus16, 1)
        K1, M1 = assemble(torus16, dens)
        K2, M2 = assemble(torus16, dens.scaled(2.0))
        assert_array_equal(K1.toarray(), K2.toarray())
        assert_allclose(M2.toarray(), 2 * M1.toarray(), rtol=1e-14)

    @pytest.mark.parametrize("cls, res", [(TorusClass(0.2, 1.1), 5), (KleinClass(0.7), 5), (RP2Class(), 1)])
    def test_mass_matches_monomial_integration(self, cls, res):
        surf = generate_surface_mesh(cls, res)
        rng = np.random.default_rng(4)
        dens = DensityField(rng.normal(size=surf.n_dofs), triangle_scale=rng.uniform(0.5, 2.0, len(surf.triangles)))
        assert_allclose(mass_matrix(surf, dens).toarray(), _reference_mass(surf, dens), rtol=1e-12, atol=1e-15)
        assert np.linalg.eigvalsh(mass_matrix(surf, dens).toarray()).min() > 0

    def test_lumped_mass_preserves_total(self, torus16):
        dens = random_smooth_density(torus16, 2)
        assert_allclose(mass_matrix(torus16, dens, lumped=True).sum(), mass_matrix(torus16, dens).sum(), rtol=1e-13)

    def test_mass_derivative_matches_finite_difference(self, torus16):
        dens = random_smooth_density(torus16, 5)
        u = np.random.default_rng(0).normal(size=torus16.n_dofs)
        q = fem.mass_derivative_quadratic(torus16, dens, u)
        # M is linear in the nodal density, so a wide central difference is exact
        rho = dens.rho.copy()
        v, h = 17, 0.5 * rho[17]
        rho[v] += h
        up = u @ (mass_matrix(torus16, DensityField(np.log(rho))) @ u)
        rho[v] -= 2 * h
        dn = u @ (mass_matrix(torus16, DensityField(np.log(rho))) @ u)
        assert_allclose((up - dn) / (2 * h), q[v], rtol=1e-9)

    def test_degenerate_triangle(self):
        verts = np.array([[0, 0], [1, 0], [2, 0], [0, 1]], float)
        surf = DiscreteSurface(verts, [[0, 1, 2], [0, 1, 3]], np.arange(4), TorusClass(0, 1))
        with pytest.raises(DegenerateTriangle):
            stiffness_matrix(surf)

    def test_density_validation(self, torus16):
        with pytest.raises(ValueError):
            DensityField([0.0, np.inf])
        with pytest.raises(ValueError):
            mass_matrix(torus16, DensityField(np.zeros(3)))


class TestSpectrum:
    def test_square_torus(self):
        res = solve_spectrum(assemble(generate_surface_mesh(TorusClass(0, 1), 64)), 1)
        assert_allclose(normalized_eigenvalues(res)[1], 4 * math.pi**2, rtol=0.01)

    def test_sphere_triple(self):
        res = solve_spectrum(assemble(generate_surface_mesh(SphereClass(), 4)), 3)
        assert_allclose(res.eigenvalues[1:4], 2.0, rtol=0.01)
        assert_allclose(normalized_eigenvalues(res)[1], 8 * math.pi, rtol=0.01)

    def test_hemisphere_neumann(self):
        sphere = generate_surface_mesh(SphereClass(), 4)
        hemi = extract_subdomain(sphere, np.flatnonzero(sphere.barycenters[:, 2] > 0))
        res = solve_spectrum(assemble(hemi), 1)
        assert_allclose(res.eigenvalues[1], 2.0, rtol=0.02)

    def test_flat_torus_normalized_equals_raw(self, torus16):
        res = solve_spectrum(assemble(torus16), 4)
        assert_allclose(normalized_eigenvalues(res), res.eigenvalues, rtol=1e-10)

    @pytest.mark.parametrize("cls, res", [(TorusClass(0, 1), 24), (SphereClass(), 3), (KleinClass(1.5), 20)])
    def test_result_invariants(self, cls, res):
        surf = generate_surface_mesh(cls, res)
        dens = random_smooth_density(surf, 3)
        K, M = assemble(surf, dens)
        out = solve_spectrum((K, M), 5, tol=1e-10)
        lam, U = out.eigenvalues, out.eigenvectors
        assert 0 <= lam[0] <= 1e-8 * lam[1]
        assert np.ptp(U[:, 0]) <= 1e-6 * np.abs(U[:, 0]).max()
        assert_allclose(U.T @ (M @ U), np.eye(6), atol=1e-8)
        assert np.all(out.residuals <= 1e-10)
        assert np.all(np.diff(lam) >= 0)
        # sign convention: largest-magnitude entry positive
        cols = U[:, 1:]
        assert np.all(cols[np.argmax(np.abs(cols), axis=0), np.arange(cols.shape[1])] > 0)
        assert_allclose(out.area, M.sum(), rtol=1e-14)

    def test_matches_dense_generalized_solver(self):
        surf = generate_surface_mesh(SphereClass(), 2)
        dens = random_smooth_density(surf, 8)
        K, M = assemble(surf, dens)
        ref = scipy.linalg.eigh(K.toarray(), M.toarray(), eigvals_only=True)[:6]
        assert_allclose(solve_spectrum((K, M), 5, tol=1e-11).eigenvalues, ref, rtol=1e-9, atol=1e-9)

    def test_sparse_and_dense_paths_agree(self, torus16, monkeypatch):
        dens = random_smooth_density(torus16, 6)
        ops = assemble(torus16, dens)
        dense = solve_spectrum(ops, 4, tol=1e-11)
        monkeypatch.setattr(fem, "DENSE_LIMIT", 0)
        sparse = solve_spectrum(ops, 4, tol=1e-11)
        assert_allclose(sparse.eigenvalues, dense.eigenvalues, rtol=1e-10, atol=1e-12)

    def test_deterministic(self):
        surf = generate_surface_mesh(TorusClass(0.2, 1.3), 32)
        ops = assemble(surf, random_smooth_density(surf, 1))
        a = solve_spectrum(ops, 4, seed=3)
        b = solve_spectrum(ops, 4, seed=3)
        assert_array_equal(a.eigenvalues, b.eigenvalues)
        assert_array_equal(a.eigenvectors, b.eigenvectors)

    def test_quadratic_convergence(self):
        ref = 4 * math.pi**2
        errs = [abs(solve_spectrum(assemble(generate_surface_mesh(TorusClass(0, 1), r)), 1).eigenvalues[1] - ref) for r in (16, 32, 64)]
        for e0, e1 in zip(errs, errs[1:]):
            assert 3 <= e0 / e1 <= 5

    @pytest.mark.parametrize("cls, res", [(TorusClass(0.1, 2.0), 12), (KleinClass(0.5), 12), (SphereClass(), 2), (RP2Class(), 2)])
    @pytest.mark.parametrize("t", [0.1, 10.0])
    def test_scale_invariance(self, cls, res, t):
        surf = generate_surface_mesh(cls, res)
        dens = random_smooth_density(surf, 2)
        a = normalized_eigenvalues(solve_spectrum(assemble(surf, dens), 4, tol=1e-12))
        b = normalized_eigenvalues(solve_spectrum(assemble(surf, dens.scaled(t)), 4, tol=1e-12))
        assert_allclose(b[1:], a[1:], rtol=1e-10)

    def test_piecewise_density_keeps_stiffness(self):
        sphere = generate_surface_mesh(SphereClass(), 2)
        labels = (sphere.barycenters[:, 2] > 0).astype(int)
        dens = DensityField.piecewise(sphere, labels, [1e-3, 1.0])
        K, M = assemble(sphere, dens)
        assert_array_equal(K.toarray(), stiffness_matrix(sphere).toarray())
        assert_allclose(M.sum(), 2 * math.pi * (1 + 1e-3), rtol=0.02)

    def test_bad_arguments(self, torus16):
        ops = assemble(torus16)
        with pytest.raises(ValueError):
            solve_spectrum(ops, 1, tol=1e-3)
        with pytest.raises(ValueError):
            solve_spectrum(ops, torus16.n_dofs)

    def test_iteration_cap_raises(self):
        ops = assemble(generate_surface_mesh(TorusClass(0, 1), 40))
        with pytest.raises(ConvergenceFailure):
            solve_spectrum(ops, 12, maxiter=1)
