import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaussrep.errors import DegenerateCovarianceError, InvalidInputError
from gaussrep.geometry import (
    Gaussian2,
    Obb,
    PointSetRep,
    Qbb,
    apply_offsets,
    canonicalize_obb,
    fit_gaussian_mle,
    gaussian_density,
    gaussian_to_obb,
    mc_iou,
    obb_to_gaussian,
    obb_to_pointset,
    obb_to_qbb,
    rotated_iou,
)

from conftest import random_box

SQ2 = math.sqrt(2.0) / 2.0


class TestObbToGaussian:
    def test_unit_square(self):
        g = obb_to_gaussian(Obb(0, 0, 2, 2, 0))
        np.testing.assert_array_equal(g.mu, [0, 0])
        np.testing.assert_allclose(g.sigma, np.eye(2), atol=1e-15)

    def test_axis_aligned(self):
        g = obb_to_gaussian(Obb(5, -3, 4, 2, 0))
        np.testing.assert_array_equal(g.mu, [5, -3])
        np.testing.assert_allclose(g.sigma, [[4, 0], [0, 1]], atol=1e-15)

    def test_quarter_turn(self):
        g = obb_to_gaussian(Obb(0, 0, 4, 2, math.pi / 4))
        np.testing.assert_allclose(g.sigma, [[2.5, 1.5], [1.5, 2.5]], atol=1e-14)

    @pytest.mark.parametrize("w,h", [(0, 1), (1, -2), (math.nan, 1), (1, math.inf)])
    def test_rejects_bad_sides(self, w, h):
        with pytest.raises(InvalidInputError):
            Obb(0, 0, w, h, 0)

    def test_swap_symmetry(self, rng):
        for _ in range(500):
            b = random_box(rng, canonical=False)
            swapped = Obb(b.cx, b.cy, b.h, b.w, b.theta + math.pi / 2)
            g1, g2 = obb_to_gaussian(b), obb_to_gaussian(swapped)
            scale = max(b.w, b.h) ** 2
            np.testing.assert_array_equal(g1.mu, g2.mu)
            np.testing.assert_allclose(g1.sigma, g2.sigma, rtol=0, atol=1e-14 * scale)


class TestGaussianToObb:
    def test_diagonal(self):
        box = gaussian_to_obb(Gaussian2([0, 0], [[1, 0], [0, 0.25]]))
        assert box.as_tuple() == (0.0, 0.0, 2.0, 1.0, 0.0)

    def test_inverse_of_axis_aligned(self):
        box = gaussian_to_obb(Gaussian2([5, -3], [[4, 0], [0, 1]]))
        assert box.as_tuple() == (5.0, -3.0, 4.0, 2.0, 0.0)

    def test_tall_diagonal_folds_to_minus_half_pi(self):
        box = gaussian_to_obb(Gaussian2([0, 0], [[0.25, 0], [0, 1]]))
        assert box.w == 2.0 and box.h == 1.0
        assert box.theta == pytest.approx(-math.pi / 2)

    def test_round_trip(self, rng):
        for _ in range(1000):
            b = random_box(rng, min_ratio=1.05)
            back = gaussian_to_obb(obb_to_gaussian(b))
            np.testing.assert_allclose(back.as_tuple(), b.as_tuple(), rtol=0, atol=1e-6)

    def test_square_decodes_with_zero_angle(self):
        back = gaussian_to_obb(obb_to_gaussian(Obb(1, 2, 3, 3, 0.7)))
        assert back.theta == 0.0
        assert back.w == pytest.approx(3.0) and back.h == pytest.approx(3.0)

    def test_reencode_reproduces_gaussian(self, rng):
        for _ in range(200):
            g = obb_to_gaussian(random_box(rng))
            again = obb_to_gaussian(gaussian_to_obb(g))
            np.testing.assert_allclose(again.sigma, g.sigma, rtol=0, atol=1e-9 * max(1, g.sigma.max()))

    def test_rejects_non_pd(self):
        with pytest.raises(InvalidInputError):
            Gaussian2([0, 0], [[1, 2], [2, 1]])


class TestFitGaussianMle:
    def test_square_points(self):
        pts = PointSetRep([(0.5, 0.5), (-0.5, 0.5), (-0.5, -0.5), (0.5, -0.5)])
        g = fit_gaussian_mle(pts)
        np.testing.assert_allclose(g.mu, [0, 0], atol=1e-15)
        np.testing.assert_allclose(g.sigma, [[0.25, 0], [0, 0.25]], atol=1e-15)

    def test_corners_match_matrix_transform(self, rng):
        for _ in range(1000):
            b = random_box(rng, canonical=False)
            fitted = fit_gaussian_mle(obb_to_qbb(b))
            direct = obb_to_gaussian(b)
            np.testing.assert_allclose(fitted.mu, direct.mu, rtol=0, atol=1e-12)
            np.testing.assert_allclose(fitted.sigma, direct.sigma, rtol=0, atol=1e-12)

    def test_nine_point_lattice_matches(self, rng):
        for _ in range(100):
            b = random_box(rng)
            assert fit_gaussian_mle(obb_to_pointset(b)).allclose(obb_to_gaussian(b), atol=1e-9)

    def test_collinear_points_are_regularized(self):
        g = fit_gaussian_mle(PointSetRep([(0, 0), (1, 0), (2, 0)]))
        eps = 1e-7  # trace 2/3 < 1, so eps = 1e-7 * 1
        np.testing.assert_allclose(g.sigma, [[2 / 3 + eps, 0], [0, eps]], rtol=1e-12, atol=1e-20)

    def test_coincident_points(self):
        with pytest.raises(DegenerateCovarianceError):
            fit_gaussian_mle(PointSetRep([(1, 1)] * 5))

    def test_too_few_points(self):
        with pytest.raises(InvalidInputError):
            PointSetRep([(0, 0), (1, 1)])

    def test_population_divisor(self, rng):
        pts = rng.normal(size=(7, 2))
        g = fit_gaussian_mle(PointSetRep(pts))
        np.testing.assert_allclose(g.sigma, np.cov(pts.T, bias=True), atol=1e-12)

    def test_permutation_is_bit_exact(self, rng):
        pts = rng.normal(size=(9, 2)) * 7.3 + 100.0
        g = fit_gaussian_mle(PointSetRep(pts))
        for _ in range(20):
            h = fit_gaussian_mle(PointSetRep(pts[rng.permutation(9)]))
            assert g == h

    def test_rigid_motion_equivariance(self, rng):
        for _ in range(200):
            pts = rng.normal(size=(9, 2)) * rng.uniform(0.5, 5)
            angle = rng.uniform(-math.pi, math.pi)
            shift = rng.uniform(-20, 20, size=2)
            c, s = math.cos(angle), math.sin(angle)
            rot = np.array([[c, -s], [s, c]])
            moved = fit_gaussian_mle(PointSetRep(pts @ rot.T + shift))
            expected = fit_gaussian_mle(PointSetRep(pts)).transformed(angle=angle, shift=shift)
            assert moved.allclose(expected, atol=1e-9)


class TestApplyOffsets:
    def test_zero_offsets(self, rng):
        pts = PointSetRep(rng.normal(size=(9, 2)))
        assert apply_offsets(pts, np.zeros((9, 2))) == pts

    def test_componentwise(self):
        out = apply_offsets(PointSetRep([(0, 0), (1, 1), (2, 0)]), [(1, 0)] * 3)
        np.testing.assert_array_equal(out.points, [(1, 0), (2, 1), (3, 0)])

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            apply_offsets(PointSetRep([(0, 0), (1, 1), (2, 0)]), [(1, 0)] * 2)

    def test_uniform_shift_translates_mean_only(self, rng):
        for _ in range(100):
            pts = PointSetRep(rng.normal(size=(9, 2)) * 3)
            d = rng.uniform(-10, 10, size=2)
            before = fit_gaussian_mle(pts)
            after = fit_gaussian_mle(apply_offsets(pts, np.tile(d, (9, 1))))
            np.testing.assert_allclose(after.mu, before.mu + d, atol=1e-12)
            np.testing.assert_allclose(after.sigma, before.sigma, atol=1e-12)


class TestObbToQbb:
    def test_unit_square(self):
        np.testing.assert_allclose(
            obb_to_qbb(Obb(0, 0, 2, 2, 0)).corners, [(1, 1), (-1, 1), (-1, -1), (1, -1)]
        )

    def test_quarter_turn_same_vertex_set(self):
        turned = obb_to_qbb(Obb(0, 0, 2, 2, math.pi / 2)).corners
        base = obb_to_qbb(Obb(0, 0, 2, 2, 0)).corners
        for p in turned:
            assert np.min(np.linalg.norm(base - p, axis=1)) < 1e-12

    def test_offset_box(self):
        np.testing.assert_allclose(
            obb_to_qbb(Obb(3, 4, 2, 1, 0)).corners, [(4, 4.5), (2, 4.5), (2, 3.5), (4, 3.5)]
        )

    def test_needs_four_corners(self):
        with pytest.raises(InvalidInputError):
            Qbb(np.zeros((5, 2)))


class TestCanonicalize:
    def test_swap(self):
        b = canonicalize_obb(Obb(0, 0, 1, 2, 0))
        assert (b.w, b.h) == (2, 1)
        assert b.theta == pytest.approx(-math.pi / 2)

    def test_fold(self):
        assert canonicalize_obb(Obb(0, 0, 2, 1, 3 * math.pi / 4)).theta == pytest.approx(-math.pi / 4)

    def test_already_canonical(self):
        b = Obb(0, 0, 2, 1, 0)
        assert canonicalize_obb(b) == b

    @settings(max_examples=300, deadline=None)
    @given(
        w=st.floats(0.1, 100),
        h=st.floats(0.1, 100),
        theta=st.floats(-20, 20),
    )
    def test_invariants_and_same_gaussian(self, w, h, theta):
        b = Obb(1.0, -2.0, w, h, theta)
        c = canonicalize_obb(b)
        assert c.w >= c.h
        assert -math.pi / 2 <= c.theta < math.pi / 2
        scale = max(w, h) ** 2
        np.testing.assert_allclose(
            obb_to_gaussian(c).sigma, obb_to_gaussian(b).sigma, rtol=0, atol=1e-12 * scale
        )


class TestDensity:
    def test_peak(self):
        g = Gaussian2([0, 0], np.eye(2))
        assert gaussian_density(g, [0, 0]) == pytest.approx(1 / (2 * math.pi), abs=1e-15)

    def test_unit_offset(self):
        g = Gaussian2([0, 0], np.eye(2))
        assert gaussian_density(g, [1, 0]) == pytest.approx(math.exp(-0.5) / (2 * math.pi), rel=1e-14)

    def test_integrates_to_one(self):
        g = Gaussian2([1.0, -2.0], [[2.0, 0.6], [0.6, 0.5]])
        half = 6.0 * math.sqrt(max(np.linalg.eigvalsh(g.sigma)))
        rng = np.random.default_rng(3)
        n = 200_000
        xy = g.mu + rng.uniform(-half, half, size=(n, 2))
        vals = np.array([gaussian_density(g, p) for p in xy[:20_000]])
        # Vectorized path for the bulk; the scalar calls above pin it to the API.
        d = xy - g.mu
        inv = np.linalg.inv(g.sigma)
        dens = np.exp(-0.5 * np.einsum("ni,ij,nj->n", d, inv, d)) / (2 * math.pi * math.sqrt(g.det))
        np.testing.assert_allclose(vals, dens[:20_000], rtol=1e-12)
        assert dens.mean() * (2 * half) ** 2 == pytest.approx(1.0, abs=0.02)


class TestRotatedIou:
    def test_identical(self):
        b = Obb(3, 4, 5, 2, 0.4)
        assert rotated_iou(b, b) == pytest.approx(1.0, abs=1e-12)

    def test_disjoint(self):
        assert rotated_iou(Obb(0, 0, 1, 1, 0), Obb(100, 0, 1, 1, 0)) == 0.0

    def test_half_overlap(self):
        assert rotated_iou(Obb(0, 0, 2, 2, 0), Obb(1, 0, 2, 2, 0)) == pytest.approx(1 / 3)

    def test_square_vs_rotated_square(self):
        a, b = Obb(0, 0, 1, 1, 0), Obb(0, 0, 1, 1, math.pi / 4)
        # Octagon intersection: square minus four corner triangles of leg 1 - 1/sqrt2.
        leg = 1 - SQ2
        inter = 1 - 4 * 0.5 * leg * leg
        exact = inter / (2 - inter)
        assert rotated_iou(a, b) == pytest.approx(exact, abs=1e-12)
        assert abs(mc_iou(a, b, 1_000_000, seed=1) - exact) < 0.01

    def test_symmetric_and_bounded(self, rng):
        for _ in range(200):
            a = random_box(rng)
            b = Obb(a.cx + rng.normal(0, 5), a.cy + rng.normal(0, 5), *rng.uniform(1, 20, 2), rng.uniform(-3, 3))
            v1, v2 = rotated_iou(a, b), rotated_iou(b, a)
            assert 0.0 <= v1 <= 1.0
            assert v1 == pytest.approx(v2, abs=1e-12)

    def test_contained_box(self):
        assert rotated_iou(Obb(0, 0, 10, 10, 0.3), Obb(0, 0, 2, 2, 1.0)) == pytest.approx(4 / 100)


class TestMcIou:
    def test_identical_is_exact(self):
        b = Obb(0, 0, 3, 1, 0.2)
        assert mc_iou(b, b, 10_000, seed=0) == 1.0

    def test_disjoint(self):
        assert mc_iou(Obb(0, 0, 1, 1, 0), Obb(100, 0, 1, 1, 0), 10_000, seed=0) == 0.0

    def test_deterministic(self):
        a, b = Obb(0, 0, 3, 1, 0.2), Obb(0.5, 0, 2, 2, 0)
        assert mc_iou(a, b, 20_000, seed=5) == mc_iou(a, b, 20_000, seed=5)

    def test_needs_samples(self):
        with pytest.raises(InvalidInputError):
            mc_iou(Obb(0, 0, 1, 1, 0), Obb(0, 0, 1, 1, 0), 100)

    def test_binomial_agreement(self, rng):
        n = 100_000
        for k in range(20):
            a = Obb(0, 0, *rng.uniform(1, 5, 2), rng.uniform(-3, 3))
            b = Obb(*rng.normal(0, 1, 2), *rng.uniform(1, 5, 2), rng.uniform(-3, 3))
            assert abs(mc_iou(a, b, n, seed=k) - rotated_iou(a, b)) <= 3 * math.sqrt(0.25 / n)
