"""Inference-time localisation on a score map.

Kernel soft-argmax: mask the map with a Gaussian centred on its argmax,
softmax at ``beta_eval``, and return the expected (row, col). Plain numpy;
nothing here is trained through.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .matcher import (
    extract_score_map,
    feature_to_image_coords,
    image_to_feature_coords,
    score_map_weights,
)


@dataclass(frozen=True)
class LocalizerConfig:
    sigma: float = 7.0
    beta_eval: float = 1.0

    def __post_init__(self):
        if self.sigma <= 0 or self.beta_eval <= 0:
            raise ConfigError("sigma and beta_eval must be positive")


def _as_grid(m):
    m = getattr(m, "data", m)
    m = getattr(m, "data", m)
    m = np.asarray(m, dtype=np.float64)
    if not np.isfinite(m).all():
        raise NumericalError("score map contains non-finite values")
    return m


def nearest_neighbor_argmax(m):
    """Integer (row, col) of the maximum; ties go to the smallest row-major index."""
    m = _as_grid(m)
    return tuple(int(i) for i in np.unravel_index(np.argmax(m), m.shape))


def gaussian_mask(shape, center, sigma):
    rows = np.arange(shape[0])[:, None] - center[0]
    cols = np.arange(shape[1])[None, :] - center[1]
    return np.exp(-(rows ** 2 + cols ** 2) / (2.0 * sigma ** 2))


def kernel_soft_argmax(m, cfg=LocalizerConfig()):
    m = _as_grid(m)
    peak = nearest_neighbor_argmax(m)
    masked = gaussian_mask(m.shape, peak, cfg.sigma) * m
    z = masked / cfg.beta_eval
    p = np.exp(z - z.max())
    p /= p.sum()
    rows, cols = np.indices(m.shape)
    return np.array([(p * rows).sum(), (p * cols).sum()])


def predict_correspondence(corr, query_img, ratio_a, ratio_b, cfg=LocalizerConfig()):
    """Map an image-A point to its predicted image-B point."""
    query_feat = image_to_feature_coords(query_img, ratio_a, corr.source_shape)
    smap = extract_score_map(corr, query_feat)
    return feature_to_image_coords(kernel_soft_argmax(smap, cfg), ratio_b)


def predict_many(corr, queries_img, ratio_a, ratio_b, cfg=LocalizerConfig()):
    """Vectorised :func:`predict_correspondence` over an (n, 2) array of queries."""
    queries_img = np.asarray(queries_img, dtype=np.float64).reshape(-1, 2)
    feats = image_to_feature_coords(queries_img, ratio_a, corr.source_shape)
    weights = score_map_weights(feats, corr.source_shape)
    maps = weights @ corr.data.data
    hb, wb = corr.target_shape
    out = np.array([kernel_soft_argmax(row.reshape(hb, wb), cfg) for row in maps])
    return feature_to_image_coords(out.reshape(-1, 2), ratio_b)
