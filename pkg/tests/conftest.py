import math

import numpy as np
import pytest

from gaussrep.geometry import Gaussian2, Obb, canonicalize_obb, obb_to_gaussian


def random_box(rng, min_ratio=1.0, canonical=True):
    h = rng.uniform(0.5, 20.0)
    w = h * rng.uniform(min_ratio, 6.0)
    box = Obb(*rng.uniform(-50.0, 50.0, size=2), w, h, rng.uniform(-math.pi, math.pi))
    return canonicalize_obb(box) if canonical else box


def random_gaussian(rng, spread=10.0):
    a = rng.normal(size=(2, 2))
    sigma = a @ a.T + rng.uniform(0.1, 2.0) * np.eye(2)
    return Gaussian2(rng.uniform(-spread, spread, size=2), 0.5 * (sigma + sigma.T))


def random_box_gaussian(rng):
    return obb_to_gaussian(random_box(rng, canonical=False))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def mc_kl(g, p, n=1_000_000, seed=0):
    """Monte-Carlo estimate of KL(g || p) and its standard error.

    Log densities are computed with numpy's own inverse and slogdet, so this
    shares no code with the closed form under test.
    """
    rng = np.random.default_rng(seed)
    x = rng.multivariate_normal(g.mu, g.sigma, size=n)

    def logpdf(gauss):
        d = x - gauss.mu
        inv = np.linalg.inv(gauss.sigma)
        _, logdet = np.linalg.slogdet(gauss.sigma)
        return -0.5 * np.einsum("ni,ij,nj->n", d, inv, d) - 0.5 * logdet - math.log(2 * math.pi)

    ratio = logpdf(g) - logpdf(p)
    return float(ratio.mean()), float(ratio.std(ddof=1) / math.sqrt(n))


def eig_sqrt(m):
    vals, vecs = np.linalg.eigh(m)
    return vecs @ np.diag(np.sqrt(vals)) @ vecs.T
