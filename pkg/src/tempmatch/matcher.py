"""Correlation volumes and per-query score maps.

Coordinates are ``(row, col)`` pairs throughout. Feature cell ``(i, j)``
covers image pixels ``[i*r, (i+1)*r)``, so its centre sits at image
coordinate ``(i + 0.5) * r - 0.5``.
"""

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .errors import DimensionError, DomainError, OutOfRangeError

COORD_TOLERANCE = 1e-9


@dataclass
class CorrelationTensor:
    """Similarity of every source cell against every target cell.

    ``data`` has shape (hA*wA, hB*wB), or (N, hA*wA, hB*wB) for a batch;
    row ``i*wA + j`` belongs to source cell ``(i, j)``.
    """

    data: ag.Tensor
    source_shape: tuple
    target_shape: tuple
    normalization: str
    applied_scale: object = 1.0


@dataclass
class ScoreMap:
    data: ag.Tensor
    query: tuple


def _as_beta(beta):
    if isinstance(beta, ag.Tensor):
        if np.any(beta.data <= 0):
            raise DomainError("temperature must be positive")
        return beta
    beta = float(beta)
    if beta <= 0:
        raise DomainError("temperature must be positive")
    return beta


def _beta_for_cells(beta, lead):
    """Reshape a per-image temperature so it broadcasts over (..., cells, C)."""
    if isinstance(beta, float):
        return beta
    if beta.size == 1:
        return beta.reshape(())
    if beta.shape != lead:
        raise DimensionError(f"temperature shape {beta.shape} does not match batch {lead}")
    return beta.reshape(*lead, 1, 1)


def normalize_cells(cells, normalization, eps=1e-8):
    if normalization == "l2":
        return ag.l2_normalize(cells, axis=-1, eps=eps)
    if normalization == "none":
        return cells
    raise DomainError(f"unknown normalization {normalization!r}")


def build_correlation(fa, fb, normalization="l2", beta_a=1.0, beta_b=1.0):
    """Rescaled correlation (F_a / beta_a)^T (F_b / beta_b) of two feature maps.

    With ``normalization="l2"`` each descriptor is unit-normalised first, so
    at unit temperatures every entry is a cosine similarity.
    """
    if fa.channels != fb.channels:
        raise DimensionError(f"channel mismatch: {fa.channels} vs {fb.channels}")
    beta_a, beta_b = _as_beta(beta_a), _as_beta(beta_b)
    ca = normalize_cells(fa.cells(), normalization)
    cb = normalize_cells(fb.cells(), normalization)
    lead = ca.shape[:-2]
    ca = ca / _beta_for_cells(beta_a, lead) if _needs_scale(beta_a) else ca
    cb = cb / _beta_for_cells(beta_b, lead) if _needs_scale(beta_b) else cb
    corr = ag.matmul(ca, ag.swap_last(cb))
    scale = 1.0 / (_value(beta_a) * _value(beta_b))
    return CorrelationTensor(corr, tuple(fa.grid_shape), tuple(fb.grid_shape),
                             normalization, scale)


def _needs_scale(beta):
    return isinstance(beta, ag.Tensor) or beta != 1.0


def _value(beta):
    if isinstance(beta, ag.Tensor):
        v = beta.data
        return float(v) if v.size == 1 else v.reshape(-1)
    return beta


def extract_score_map(corr, query):
    """Bilinearly interpolate rows of ``corr`` at a source point in feature coords.

    Only unbatched correlation tensors are accepted here; see
    :func:`score_map_weights` for the batched equivalent.
    """
    if corr.data.ndim != 2:
        raise DimensionError("extract_score_map expects an unbatched correlation tensor")
    ha, wa = corr.source_shape
    hb, wb = corr.target_shape
    rows = corr.data.reshape(ha, wa, hb * wb)
    sampled = ag.bilinear_sample(rows, query)
    return ScoreMap(sampled.reshape(hb, wb), (float(query[0]), float(query[1])))


def score_map_weights(queries, grid_shape, offsets=None, total_rows=None):
    """Dense interpolation matrix W with ``W @ rows == bilinear score maps``.

    ``queries`` are source points in feature coordinates. ``offsets`` gives,
    per query, the index of its pair's first row in a stacked batch of
    correlation tensors of ``total_rows`` rows.
    """
    h, w = grid_shape
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 2)
    if offsets is None:
        offsets = np.zeros(len(queries), dtype=int)
    total_rows = h * w if total_rows is None else total_rows
    weights = np.zeros((len(queries), total_rows))
    for q, (point, base) in enumerate(zip(queries, offsets)):
        for r, c, wt in ag.bilinear_corners(h, w, point):
            weights[q, base + r * w + c] += wt
    return weights


def image_to_feature_coords(point, ratio, grid_shape=None):
    """Image (row, col) -> feature (row, col), cell-centre convention.

    When ``grid_shape`` is given the result must fall inside the feature
    grid (up to a 1e-9 clamp), otherwise :class:`OutOfRangeError` is raised.
    """
    p = np.asarray(point, dtype=np.float64)
    f = (p + 0.5) / ratio - 0.5
    if grid_shape is not None:
        f = _clamp_to_grid(f, grid_shape)
    return f


def feature_to_image_coords(point, ratio):
    return (np.asarray(point, dtype=np.float64) + 0.5) * ratio - 0.5


def _clamp_to_grid(f, grid_shape):
    upper = np.asarray(grid_shape, dtype=np.float64) - 1.0
    if np.any(f < -COORD_TOLERANCE) or np.any(f > upper + COORD_TOLERANCE):
        raise OutOfRangeError(f"feature point {f.tolist()} outside grid {tuple(grid_shape)}")
    return np.clip(f, 0.0, upper)
