"""PCK (percentage of correct keypoints) under three base-threshold conventions."""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, DomainError

CONVENTIONS = ("img", "kps", "bbox")


@dataclass
class CorrespondenceSet:
    """Ground-truth point pairs of one image pair, (row, col) image coordinates."""

    keypoints_a: np.ndarray
    keypoints_b: np.ndarray
    size_a: tuple
    size_b: tuple
    bbox_b: tuple = None

    def __post_init__(self):
        self.keypoints_a = np.asarray(self.keypoints_a, dtype=np.float64).reshape(-1, 2)
        self.keypoints_b = np.asarray(self.keypoints_b, dtype=np.float64).reshape(-1, 2)
        if len(self.keypoints_a) != len(self.keypoints_b):
            raise DimensionError("keypoint lists differ in length")
        if len(self.keypoints_a) == 0:
            raise DimensionError("a correspondence set needs at least one pair")

    def __len__(self):
        return len(self.keypoints_a)


@dataclass
class PckResult:
    convention: str
    alphas: list
    per_alpha: list
    per_pair: list = field(default_factory=list)

    def to_json(self):
        return {
            "convention": self.convention,
            "alphas": list(map(float, self.alphas)),
            "per_alpha": list(map(float, self.per_alpha)),
            "per_pair": [list(map(float, row)) for row in self.per_pair],
        }

    def dump(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, d):
        return cls(d["convention"], d["alphas"], d["per_alpha"], d.get("per_pair", []))


def base_threshold(cset, convention="img"):
    if convention == "img":
        return float(max(cset.size_b))
    if convention == "kps":
        extent = cset.keypoints_b.max(axis=0) - cset.keypoints_b.min(axis=0)
        return float(extent.max())
    if convention == "bbox":
        if cset.bbox_b is None:
            raise ConfigError("bbox convention requested but the pair has no bounding box")
        return float(max(cset.bbox_b))
    raise ConfigError(f"unknown threshold convention {convention!r}")


def pck(preds, cset, alpha, theta):
    """Fraction of predictions within ``alpha * theta`` (inclusive) of the truth."""
    preds = np.asarray(preds, dtype=np.float64).reshape(-1, 2)
    if len(preds) != len(cset):
        raise DimensionError(f"{len(preds)} predictions for {len(cset)} keypoints")
    if alpha <= 0 or theta <= 0:
        raise DomainError("alpha and theta must be positive")
    err = np.linalg.norm(preds - cset.keypoints_b, axis=1)
    return float(np.mean(err <= alpha * theta))


def aggregate(per_pair, mode="mean_over_pairs", counts=None):
    """Reduce an (n_pairs, n_alphas) table of per-pair PCK to one value per alpha.

    ``mode="mean_over_keypoints"`` weights each pair by its keypoint count
    (``counts``) instead of giving every pair equal weight.
    """
    table = np.asarray(per_pair, dtype=np.float64)
    if table.size == 0:
        raise DomainError("cannot aggregate an empty result set")
    table = table.reshape(len(table), -1)
    if mode == "mean_over_pairs":
        return table.mean(axis=0)
    if mode == "mean_over_keypoints":
        if counts is None:
            raise ConfigError("mean_over_keypoints needs keypoint counts")
        w = np.asarray(counts, dtype=np.float64)
        return (table * w[:, None]).sum(axis=0) / w.sum()
    raise ConfigError(f"unknown aggregation mode {mode!r}")


def evaluate_predictions(all_preds, sets, alphas=(0.05, 0.1, 0.15), convention="img",
                         mode="mean_over_pairs"):
    per_pair = []
    for preds, cset in zip(all_preds, sets, strict=True):
        theta = base_threshold(cset, convention)
        per_pair.append([pck(preds, cset, a, theta) for a in alphas])
    counts = [len(s) for s in sets]
    per_alpha = aggregate(per_pair, mode, counts)
    return PckResult(convention, list(alphas), per_alpha.tolist(), per_pair)
