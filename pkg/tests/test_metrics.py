import math

import numpy as np
import pytest

from gaussrep.errors import InvalidInputError
from gaussrep.geometry import Gaussian2, Obb, obb_to_gaussian
from gaussrep.metrics import MetricKind, bd, distance, kld, spd_sqrt, trace_sqrt_product, wd

from conftest import eig_sqrt, mc_kl, random_gaussian

METRICS = [kld, bd, wd]
I2 = np.eye(2)


def n(mu, sigma=I2):
    return Gaussian2(mu, sigma)


class TestExamples:
    @pytest.mark.parametrize("fn", METRICS)
    def test_identity_is_zero(self, fn, rng):
        g = random_gaussian(rng)
        assert fn(g, g) == pytest.approx(0.0, abs=1e-12)

    def test_kld_unit_shift(self):
        assert kld(n([0, 0]), n([1, 0])) == pytest.approx(0.5, abs=1e-15)

    def test_bd_shift(self):
        assert bd(n([0, 0]), n([2, 0])) == pytest.approx(0.5, abs=1e-15)

    def test_wd_shift(self):
        assert wd(n([0, 0]), n([3, 4])) == pytest.approx(25.0, abs=1e-12)

    def test_wd_commuting_diagonals(self):
        assert wd(n([0, 0], np.diag([4, 1])), n([0, 0], np.diag([1, 4]))) == pytest.approx(2.0, abs=1e-12)

    def test_distance_dispatch(self):
        g, p = n([0, 0]), n([3, 4])
        assert distance("wd", g, p) == wd(g, p)
        assert distance(MetricKind.KLD, g, p) == kld(g, p)

    def test_rejects_non_pd(self):
        with pytest.raises(InvalidInputError):
            spd_sqrt(np.array([[1.0, 2.0], [2.0, 1.0]]))
        with pytest.raises(InvalidInputError):
            trace_sqrt_product(I2, -I2)


class TestAxioms:
    @pytest.mark.parametrize("fn", METRICS)
    def test_non_negative(self, fn, rng):
        for _ in range(1000):
            assert fn(random_gaussian(rng), random_gaussian(rng)) >= 0.0

    @pytest.mark.parametrize("fn", METRICS)
    def test_indiscernibles(self, fn, rng):
        for _ in range(200):
            g = random_gaussian(rng)
            assert fn(g, Gaussian2(g.mu.copy(), g.sigma.copy())) < 1e-9
            moved = Gaussian2(g.mu + [1e-3, 0], g.sigma)
            assert fn(g, moved) > 1e-9

    @pytest.mark.parametrize("fn", [bd, wd])
    def test_symmetric(self, fn, rng):
        for _ in range(1000):
            a, b = random_gaussian(rng), random_gaussian(rng)
            assert fn(a, b) == pytest.approx(fn(b, a), rel=1e-12, abs=1e-12)

    def test_kld_asymmetric(self):
        a = n([0, 0], np.diag([4.0, 1.0]))
        b = n([1, 0], np.diag([1.0, 0.5]))
        assert abs(kld(a, b) - kld(b, a)) > 1e-3

    def test_wd_triangle(self, rng):
        for _ in range(1000):
            a, b, c = (random_gaussian(rng) for _ in range(3))
            lhs = math.sqrt(wd(a, c))
            assert lhs <= math.sqrt(wd(a, b)) + math.sqrt(wd(b, c)) + 1e-9


class TestInvariance:
    def test_scale(self, rng):
        for _ in range(200):
            g, p = random_gaussian(rng), random_gaussian(rng)
            s = rng.uniform(0.1, 10)
            gs, ps = g.transformed(scale=s), p.transformed(scale=s)
            assert kld(gs, ps) == pytest.approx(kld(g, p), rel=1e-9, abs=1e-9)
            assert bd(gs, ps) == pytest.approx(bd(g, p), rel=1e-9, abs=1e-9)
            assert wd(gs, ps) == pytest.approx(s * s * wd(g, p), rel=1e-9, abs=1e-12)

    @pytest.mark.parametrize("fn", METRICS)
    def test_rotation(self, fn, rng):
        for _ in range(200):
            g, p = random_gaussian(rng), random_gaussian(rng)
            a = rng.uniform(-math.pi, math.pi)
            assert fn(g.transformed(angle=a), p.transformed(angle=a)) == pytest.approx(
                fn(g, p), rel=1e-9, abs=1e-9
            )

    def test_chain_coupling(self):
        gt = obb_to_gaussian(Obb(0, 0, 6, 2, 0.3))
        for theta in (0.31, 0.5, -1.0):
            assert abs(kld(gt, obb_to_gaussian(Obb(0, 0, 6, 2, theta))) - 0.0) > 1e-6
        sq = obb_to_gaussian(Obb(0, 0, 3, 3, 0.3))
        for theta in (0.31, 0.5, -1.0):
            assert kld(sq, obb_to_gaussian(Obb(0, 0, 3, 3, theta))) < 1e-9


class TestKldSampling:
    def test_monte_carlo(self, rng):
        for k in range(3):
            g, p = random_gaussian(rng), random_gaussian(rng, spread=2.0)
            est, se = mc_kl(g, p, n=200_000, seed=k)
            assert abs(kld(g, p) - est) <= 3 * se


class TestKernels:
    def test_sqrt_examples(self):
        np.testing.assert_allclose(spd_sqrt(I2), I2, atol=1e-15)
        np.testing.assert_allclose(spd_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-15)

    def test_sqrt_reconstruction(self, rng):
        for _ in range(1000):
            m = random_gaussian(rng).sigma
            s = spd_sqrt(m)
            np.testing.assert_allclose(s @ s, m, rtol=0, atol=1e-10 * max(1, np.abs(m).max()))
            np.testing.assert_allclose(s, eig_sqrt(m), rtol=0, atol=1e-10 * max(1, np.abs(s).max()))

    def test_trace_sqrt_examples(self):
        assert trace_sqrt_product(I2, I2) == pytest.approx(2.0, abs=1e-15)
        assert trace_sqrt_product(np.diag([4.0, 1.0]), I2) == pytest.approx(3.0, abs=1e-15)

    def test_trace_sqrt_two_paths(self, rng):
        for _ in range(1000):
            a, b = random_gaussian(rng).sigma, random_gaussian(rng).sigma
            ra = eig_sqrt(a)
            direct = float(np.trace(eig_sqrt(ra @ b @ ra)))
            assert trace_sqrt_product(a, b) == pytest.approx(direct, rel=1e-9, abs=1e-9)
            composed = float(np.trace(spd_sqrt(0.5 * (ra @ b @ ra + (ra @ b @ ra).T))))
            assert composed == pytest.approx(direct, rel=1e-9, abs=1e-9)
