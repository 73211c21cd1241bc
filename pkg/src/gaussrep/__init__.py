"""Unified Gaussian representation for oriented objects.

Boxes, quadrilaterals and point sets map to 2-D Gaussians; Gaussians are
compared with KLD, Bhattacharyya or Wasserstein distances, which drive both
the regression losses and the label assignment strategies.
"""

from .errors import DegenerateCovarianceError, DivergenceError, GaussRepError, InvalidInputError
from .geometry import (
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
    obb_to_qbb,
    rotated_iou,
)
from .losses import LossKind, candidate_normalizations, fd_gradient, loss, loss_grad_points
from .metrics import MetricKind, bd, kld, spd_sqrt, trace_sqrt_product, wd

__version__ = "0.1.0"
