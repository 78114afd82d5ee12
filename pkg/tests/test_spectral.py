import math
import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from codim1lab.errors import NotHermitianError
from codim1lab.operators import (
    GradingMatrix,
    assemble_mode_dirac,
    assemble_normal_T,
    assemble_product,
    meridian_grid,
    normal_grading,
    normal_grid,
    product_parts,
)
from codim1lab.spectral import (
    SpectrumResult,
    anticommutator_probe,
    band_limited_vector,
    eig_symmetric,
    graded_index,
    match_spectra,
)


def odd_diag(values):
    """[[0, D], [D, 0]] with D = diag(values), graded by diag(1, ..., -1, ...)."""
    d = sp.diags(np.asarray(values, dtype=complex))
    m = sp.bmat([[None, d], [d, None]], format="csr")
    n = len(values)
    return m, GradingMatrix(np.r_[np.ones(n), -np.ones(n)], "test")


class TestEig:
    def test_sigma3(self):
        r = eig_symmetric(np.diag([1.0, -1.0]))
        assert list(r.eigenvalues) == [-1.0, 1.0]

    def test_sorted_and_residuals(self, spheroid):
        d = assemble_mode_dirac(spheroid, 1.5, 0.1, meridian_grid(spheroid, 128))
        r = eig_symmetric(d)
        assert np.all(np.diff(r.eigenvalues) >= 0)
        assert r.residual_ok
        assert r.residual_bound <= 1e-8 * r.norm

    def test_not_hermitian(self):
        with pytest.raises(NotHermitianError):
            eig_symmetric(np.array([[0.0, 1.0], [0.5, 0.0]]))

    def test_normal_operator_k6(self):
        eps = 0.5
        t = assemble_normal_T(eps, normal_grid(eps, 512))
        r = eig_symmetric(t, 6, method="sparse")
        a = np.sort(np.abs(r.eigenvalues))
        assert a[0] <= 1e-6 * math.pi / (2 * eps)
        gap = math.pi / (2 * eps) * math.sqrt(3)
        assert np.allclose(a[1:3], gap, rtol=1e-3)
        assert np.sum(r.eigenvalues > 0) >= 2 and np.sum(r.eigenvalues < 0) >= 2
        assert r.residual_ok

    def test_sphere_k10(self, sphere):
        d = assemble_mode_dirac(sphere, 0.5, 0.0, meridian_grid(sphere, 1024))
        r = eig_symmetric(d, 10)
        want = np.array([-5, -4, -3, -2, -1, 1, 2, 3, 4, 5], dtype=float)
        assert np.max(np.abs(r.eigenvalues - want)) < 1e-3

    @pytest.mark.parametrize("which", ["sphere", "torus"])
    def test_sparse_matches_dense(self, which, request):
        g = request.getfixturevalue(which)
        eps = 0.3 * g.epsilon0
        H, _ = assemble_product(g, 0.5, eps, meridian_grid(g, 24), normal_grid(eps, 12))
        a = eig_symmetric(H, 8, method="dense")
        b = eig_symmetric(H, 8, method="sparse")
        assert np.max(np.abs(a.eigenvalues - b.eigenvalues)) <= 1e-8
        assert b.residual_ok

    def test_sparse_deterministic(self, sphere):
        H, _ = assemble_product(sphere, 0.5, 0.2, meridian_grid(sphere, 24), normal_grid(0.2, 12))
        a = eig_symmetric(H, 6, method="sparse", seed=3)
        b = eig_symmetric(H, 6, method="sparse", seed=3)
        assert np.array_equal(a.eigenvalues, b.eigenvalues)

    def test_sparse_with_exact_kernel(self):
        t = assemble_normal_T(0.3, normal_grid(0.3, 200))
        r = eig_symmetric(t, 3, method="sparse")
        assert np.min(np.abs(r.eigenvalues)) < 1e-10


class TestGradedIndex:
    @pytest.mark.parametrize("eps", [0.1, 0.5, 2.0])
    def test_normal_operator(self, eps):
        t = assemble_normal_T(eps, normal_grid(eps, 256))
        r = graded_index(t, normal_grading(t), scale=math.pi / (2 * eps) * math.sqrt(3))
        assert (r.index, r.kernel_dim_plus, r.kernel_dim_minus) == (1, 1, 0)
        assert not r.indeterminate
        assert r.gap_ratio > 1e3

    @given(eps=st.floats(0.01, 5.0), n=st.sampled_from([128, 256]))
    @settings(max_examples=10, deadline=None)
    def test_normal_operator_property(self, eps, n):
        t = assemble_normal_T(eps, normal_grid(eps, n))
        r = graded_index(t, normal_grading(t))
        assert r.index == 1 and not r.indeterminate

    def test_empty_kernel(self):
        m, g = odd_diag([1.0, 2.0, 3.0])
        r = graded_index(m, g)
        assert (r.index, r.kernel_dim_plus, r.kernel_dim_minus) == (0, 0, 0)
        assert not r.indeterminate

    def test_balanced_kernel(self):
        m, g = odd_diag([0.0, 0.0, 2.0, 3.0])
        r = graded_index(m, g)
        assert (r.kernel_dim_plus, r.kernel_dim_minus) == (2, 2)
        assert r.index == 0

    def test_chiral_kernel(self):
        # one extra + vector with no partner: index +1
        d = sp.csr_matrix(np.array([[0, 0], [2.0, 0], [0, 3.0]], dtype=complex).T)   # 2 x 3
        m = sp.bmat([[None, d.conj().T], [d, None]], format="csr")
        g = GradingMatrix(np.r_[np.ones(3), -np.ones(2)], "test")
        r = graded_index(m, g)
        assert (r.kernel_dim_plus, r.kernel_dim_minus) == (1, 0)

    def test_ambiguous_gap(self):
        m, g = odd_diag(2.0 ** np.arange(40))
        r = graded_index(m, g)
        assert r.indeterminate
        assert r.gap_ratio < 10

    def test_requires_anticommuting(self):
        with pytest.raises(ValueError):
            graded_index(np.diag([1.0, 2.0]), GradingMatrix(np.array([1.0, -1.0]), "x"))

    def test_sphere_product_all_modes(self, sphere):
        eps = 0.1
        gu, gs = meridian_grid(sphere, 32), normal_grid(eps, 12)
        total = 0
        for m in np.arange(-4.5, 5.0, 1.0):
            H, G = assemble_product(sphere, float(m), eps, gu, gs)
            r = graded_index(H, G, eig_symmetric(H, 8, method="sparse"))
            assert not r.indeterminate
            total += r.index
        assert total == 0

    def test_grid_doubling(self, spheroid):
        eps = 0.3
        idx = []
        for n in (16, 32):
            H, G = assemble_product(spheroid, 0.5, eps, meridian_grid(spheroid, n), normal_grid(eps, n // 2))
            idx.append(graded_index(H, G).index)
        assert idx == [0, 0]


def spectrum(values, sectors):
    v = np.asarray(values, dtype=float)
    return SpectrumResult(v, np.zeros(len(v)), 1.0, sectors=list(sectors))


class TestMatch:
    def test_identical(self):
        a = spectrum([-2, -1, 1, 2, 5], [0.5] * 5)
        r = match_spectra(a, a, 4)
        assert not r.truncated
        assert len(r.pairs) == 4 and np.all(r.gaps == 0)

    def test_sectors(self):
        a = spectrum([1.0, 2.0, 10.0], [0.5, 0.5, 1.5])
        b = spectrum([1.1, 2.2, 3.0], [0.5, 0.5, 2.5])
        r = match_spectra(a, b, 2)
        assert {p[0] for p in r.pairs} == {0.5}
        assert np.allclose(sorted(r.gaps), [0.1, 0.2])

    def test_truncated(self):
        a = spectrum([1.0, 2.0], [0.5, 0.5])
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always")
            r = match_spectra(a, a, 5)
        assert r.truncated and len(r.pairs) == 2 and w

    def test_expansion_pairs(self, sphere):
        gu = meridian_grid(sphere, 32)
        ref = eig_symmetric(assemble_mode_dirac(sphere, 0.5, 0.0, gu), 4)
        gaps = []
        for eps in (0.2, 0.1, 0.05):
            H, _ = assemble_product(sphere, 0.5, eps, gu, normal_grid(eps, 16))
            gaps.append(match_spectra(eig_symmetric(H, 4, method="sparse"), ref, 4).max_gap)
        assert gaps[0] > gaps[1] > gaps[2]


class TestProbe:
    def test_band_limited_vector_resolution_independent(self, sphere):
        coeffs = np.random.default_rng(0).normal(size=(2, 2, 3, 3)) + 0j
        vals = []
        for n in (16, 32):
            p = product_parts(sphere, 0.5, 0.2, meridian_grid(sphere, n), normal_grid(0.2, n))
            psi = band_limited_vector(p.d1.basis, coeffs)
            h = (sphere.profile.length / n) * (0.4 / n)
            vals.append(np.vdot(psi, psi).real * h)
        assert vals[0] == pytest.approx(vals[1], rel=0.1)

    def test_exact_anticommutation(self, sphere):
        p = product_parts(sphere, 0.5, 0.2, meridian_grid(sphere, 32), normal_grid(0.2, 32), t=0.0)
        r = anticommutator_probe(p.d1, p.normal, 20, seed=5)
        assert r.max_anticommutator <= 1e-20
        assert np.allclose(r.domination_ratio, 1.0, atol=1e-12)

    def test_refinement_stable(self, sphere):
        vals = []
        for n in (32, 64):
            p = product_parts(sphere, 0.5, 0.2, meridian_grid(sphere, n), normal_grid(0.2, n))
            r = anticommutator_probe(p.d1, p.normal, 30, seed=11)
            assert r.finite
            assert np.all(r.domination_ratio > 0)
            vals.append((r.max_anticommutator, r.max_domination))
        assert vals[1][0] <= 2 * vals[0][0]
        assert vals[1][1] <= 2 * vals[0][1]

    def test_deterministic(self, torus):
        p = product_parts(torus, 0.5, 0.2, meridian_grid(torus, 16), normal_grid(0.2, 8))
        a = anticommutator_probe(p.d1, p.normal, 5, seed=2)
        b = anticommutator_probe(p.d1, p.normal, 5, seed=2)
        assert np.array_equal(a.anticommutator_ratio, b.anticommutator_ratio)
