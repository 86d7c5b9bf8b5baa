"""Procedural image pairs with exact ground-truth correspondences.

A continuous texture (a sum of Gaussian blobs at several scales) is sampled
once on the pixel grid for image A and once through the inverse of a known
warp for image B, so both images are exact renderings of the same scene and
keypoint targets come straight from the forward warp, never from search.
Each image then gets its own brightness/contrast jitter and pixel noise.
"""

import base64
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .serialization import from_bytes, load_tensor, save_tensor, to_bytes

DATASET_VERSION = 1
SPLITS = ("train", "val", "test")
MAX_ATTEMPTS = 100


class GenerationError(RuntimeError):
    """No valid keypoint layout was found for a pair."""


@dataclass(frozen=True)
class SynthConfig:
    size: int = 64
    ratio: int = 8
    warp_kind: str = "affine"
    max_rotation_deg: float = 15.0
    scale_range: tuple = (0.9, 1.1)
    max_shift: float = 6.0
    max_displacement_frac: float = 0.25
    thin_amplitude: float = 3.0
    thin_width: float = 16.0
    thin_points: int = 4
    n_keypoints: tuple = (4, 16)
    min_spacing_cells: float = 2.0
    blob_scales: tuple = (5.0, 10.0, 20.0)
    blob_density: float = 1.0
    brightness: float = 0.1
    contrast: tuple = (0.8, 1.2)
    noise: float = 0.02
    jitter: bool = True

    def __post_init__(self):
        if self.size % self.ratio:
            raise ConfigError(f"canvas size {self.size} not divisible by ratio {self.ratio}")
        if self.warp_kind not in ("affine", "thin", "mixed"):
            raise ConfigError(f"unknown warp kind {self.warp_kind!r}")
        lo, hi = self.n_keypoints
        if not 1 <= lo <= hi:
            raise ConfigError("invalid keypoint count range")

    def to_json(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_json(cls, d):
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class WarpSpec:
    """Invertible map from image-A coordinates to image-B coordinates.

    ``affine`` is a 2x3 matrix acting on (row, col, 1). ``thin`` warps add a
    smooth displacement made of Gaussian bumps at ``control_points`` scaled
    by ``offsets``; the bumps are small enough that the map stays a
    contraction away from the identity and can be inverted by fixed-point
    iteration.
    """

    kind: str
    affine: np.ndarray = field(default_factory=lambda: np.array([[1.0, 0, 0], [0, 1.0, 0]]))
    control_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    offsets: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    width: float = 16.0
    seed: int = 0

    def _bumps(self, pts):
        if len(self.control_points) == 0:
            return np.zeros_like(pts)
        d2 = ((pts[:, None, :] - self.control_points[None]) ** 2).sum(-1)
        return np.exp(-d2 / (2 * self.width ** 2)) @ self.offsets

    def forward(self, pts):
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        out = pts @ self.affine[:, :2].T + self.affine[:, 2]
        return out + self._bumps(pts)

    def inverse(self, pts, iters=60):
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        lin = np.linalg.inv(self.affine[:, :2])
        x = (pts - self.affine[:, 2]) @ lin.T
        if len(self.control_points) == 0:
            return x
        for _ in range(iters):
            x = (pts - self.affine[:, 2] - self._bumps(x)) @ lin.T
        return x

    def to_json(self):
        return {
            "kind": self.kind,
            "affine": self.affine.tolist(),
            "control_points": self.control_points.tolist(),
            "offsets": self.offsets.tolist(),
            "width": self.width,
            "seed": int(self.seed),
        }

    @classmethod
    def from_json(cls, d):
        return cls(d["kind"], np.array(d["affine"], dtype=float),
                   np.array(d["control_points"], dtype=float).reshape(-1, 2),
                   np.array(d["offsets"], dtype=float).reshape(-1, 2),
                   d["width"], d["seed"])


@dataclass
class SynthPair:
    image_a: np.ndarray
    image_b: np.ndarray
    keypoints_a: np.ndarray
    keypoints_b: np.ndarray
    bbox_b: tuple
    warp: WarpSpec = None
    id: str = ""

    @property
    def size_a(self):
        return self.image_a.shape[-2:]

    @property
    def size_b(self):
        return self.image_b.shape[-2:]


# -- texture ----------------------------------------------------------------------

def _random_blobs(rng, cfg, lo, hi):
    """Blob centres, widths and amplitudes covering the square [lo, hi]^2."""
    centers, sigmas, amps = [], [], []
    span = hi - lo
    for s in cfg.blob_scales:
        pad = 3 * s
        area = (span + 2 * pad) ** 2
        n = max(1, int(round(cfg.blob_density * area / (2 * s) ** 2)))
        centers.append(rng.uniform(lo - pad, hi + pad, size=(n, 2)))
        sigmas.append(np.full(n, s))
        amps.append(rng.normal(size=n))
    return np.concatenate(centers), np.concatenate(sigmas), np.concatenate(amps)


def _render(points, blobs):
    centers, sigmas, amps = blobs
    d2 = ((points ** 2).sum(1)[:, None] + (centers ** 2).sum(1)[None]
          - 2.0 * points @ centers.T)
    field = np.exp(-np.maximum(d2, 0.0) / (2 * sigmas ** 2)) @ amps
    return 1.0 / (1.0 + np.exp(-1.5 * field))


def _jitter(rng, img, cfg):
    if not cfg.jitter:
        return img
    gain = rng.uniform(*cfg.contrast)
    bias = rng.uniform(-cfg.brightness, cfg.brightness)
    img = (img - 0.5) * gain + 0.5 + bias + rng.normal(scale=cfg.noise, size=img.shape)
    return np.clip(img, 0.0, 1.0)


# -- warps ------------------------------------------------------------------------

def _sample_warp(rng, cfg, seed):
    kind = cfg.warp_kind
    if kind == "mixed":
        kind = "affine" if rng.random() < 0.5 else "thin"
    c = (cfg.size - 1) / 2.0
    affine = np.array([[1.0, 0, 0], [0, 1.0, 0]])
    if kind == "affine":
        theta = np.deg2rad(rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg))
        scale = rng.uniform(*cfg.scale_range)
        lin = scale * np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        shift = rng.uniform(-cfg.max_shift, cfg.max_shift, size=2)
        affine = np.hstack([lin, (np.array([c, c]) - lin @ np.array([c, c]) + shift)[:, None]])
        return WarpSpec("affine", affine, seed=seed)
    pts = rng.uniform(0, cfg.size - 1, size=(cfg.thin_points, 2))
    offs = rng.uniform(-cfg.thin_amplitude, cfg.thin_amplitude, size=(cfg.thin_points, 2))
    return WarpSpec("thin", affine, pts, offs, cfg.thin_width, seed)


def _max_displacement(warp, size):
    g = np.linspace(0, size - 1, 9)
    pts = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    return np.linalg.norm(warp.forward(pts) - pts, axis=1).max()


def _sample_keypoints(rng, warp, cfg):
    margin = cfg.ratio / 2.0
    lo, hi = margin, cfg.size - 1 - margin
    spacing = cfg.min_spacing_cells * cfg.ratio
    target = int(rng.integers(cfg.n_keypoints[0], cfg.n_keypoints[1] + 1))
    cand_a = rng.uniform(lo, hi, size=(400, 2))
    cand_b = warp.forward(cand_a)
    inside = np.all((cand_b >= lo) & (cand_b <= hi), axis=1)
    kept = []
    for i in np.flatnonzero(inside):
        if all(np.linalg.norm(cand_a[i] - cand_a[j]) >= spacing
               and np.linalg.norm(cand_b[i] - cand_b[j]) >= spacing for j in kept):
            kept.append(i)
            if len(kept) == target:
                break
    return cand_a[kept], cand_b[kept]


def generate_pair(seed, cfg=SynthConfig(), warp=None, pair_id=""):
    """One deterministic pair; ``warp`` overrides the randomly drawn warp."""
    rng = np.random.default_rng(seed)
    for _ in range(MAX_ATTEMPTS):
        w = warp if warp is not None else _sample_warp(rng, cfg, seed)
        if warp is None and _max_displacement(w, cfg.size) > cfg.max_displacement_frac * cfg.size:
            continue
        kps_a, kps_b = _sample_keypoints(rng, w, cfg)
        if len(kps_a) >= cfg.n_keypoints[0]:
            break
    else:
        raise GenerationError(f"no valid keypoint layout after {MAX_ATTEMPTS} attempts (seed {seed})")

    n = cfg.size
    grid = np.stack(np.meshgrid(np.arange(n), np.arange(n), indexing="ij"), -1)
    grid = grid.reshape(-1, 2).astype(np.float64)
    src_b = w.inverse(grid)
    lo = min(0.0, src_b.min())
    hi = max(n - 1.0, src_b.max())
    blobs = _random_blobs(rng, cfg, lo, hi)
    img_a = _render(grid, blobs).reshape(n, n)
    img_b = _render(src_b, blobs).reshape(n, n)
    img_a = _jitter(rng, img_a, cfg)[None]
    img_b = _jitter(rng, img_b, cfg)[None]

    corners = np.array([[0, 0], [0, n - 1], [n - 1, 0], [n - 1, n - 1]], dtype=float)
    warped = np.clip(w.forward(corners), 0, n - 1)
    extent = warped.max(axis=0) - warped.min(axis=0)
    bbox = (float(extent[0]), float(extent[1]))
    return SynthPair(img_a, img_b, kps_a, kps_b, bbox, w, pair_id)


def split_seeds(seed, split, count):
    """Pair seeds for one split; the three splits use disjoint ranges."""
    index = SPLITS.index(split)
    base = (int(seed) << 32) + (index << 28)
    return [base + i for i in range(count)]


# -- dataset files ----------------------------------------------------------------

def _encode_image(img, root, name, inline):
    if inline:
        return {"smt1_base64": base64.b64encode(to_bytes(img)).decode("ascii")}
    rel = os.path.join("images", f"{name}.smt")
    save_tensor(os.path.join(root, rel), img)
    return rel


def _decode_image(ref, root):
    if isinstance(ref, dict):
        return from_bytes(base64.b64decode(ref["smt1_base64"]))
    return load_tensor(os.path.join(root, ref))


def write_dataset(path, pairs, config=None, inline=False):
    """Write pairs (any objects with image/keypoint/bbox attributes) as dataset JSON."""
    root = os.path.dirname(os.path.abspath(path))
    if not inline:
        os.makedirs(os.path.join(root, "images"), exist_ok=True)
    stem = os.path.splitext(os.path.basename(path))[0]
    records = []
    for i, p in enumerate(pairs):
        pid = p.id or f"{stem}_{i:05d}"
        rec = {
            "id": pid,
            "image_a": _encode_image(p.image_a, root, f"{pid}_a", inline),
            "image_b": _encode_image(p.image_b, root, f"{pid}_b", inline),
            "keypoints_a": np.asarray(p.keypoints_a).tolist(),
            "keypoints_b": np.asarray(p.keypoints_b).tolist(),
            "bbox_b": None if p.bbox_b is None else list(p.bbox_b),
        }
        if getattr(p, "warp", None) is not None:
            rec["warp"] = p.warp.to_json()
        records.append(rec)
    doc = {"version": DATASET_VERSION, "config": config or {}, "pairs": records}
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def _as_chw(img):
    return img[None] if img.ndim == 2 else img


def load_dataset(path):
    """Read a dataset JSON (ours or any external set in the same schema)."""
    root = os.path.dirname(os.path.abspath(path))
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != DATASET_VERSION:
        raise ConfigError(f"unsupported dataset version {doc.get('version')!r}")
    pairs = []
    for rec in doc["pairs"]:
        img_a = _as_chw(_decode_image(rec["image_a"], root))
        img_b = _as_chw(_decode_image(rec["image_b"], root))
        warp = WarpSpec.from_json(rec["warp"]) if rec.get("warp") else None
        bbox = rec.get("bbox_b")
        pairs.append(SynthPair(
            img_a, img_b,
            np.asarray(rec["keypoints_a"], dtype=float).reshape(-1, 2),
            np.asarray(rec["keypoints_b"], dtype=float).reshape(-1, 2),
            None if bbox is None else tuple(bbox), warp, rec["id"]))
    return pairs, doc.get("config", {})


def generate_split(seed, n_train=512, n_val=64, n_test=64, cfg=SynthConfig(), out_dir=".",
                   inline=False):
    """Generate train/val/test pairs and write ``<split>.json`` files under ``out_dir``."""
    counts = {"train": n_train, "val": n_val, "test": n_test}
    if min(counts.values()) < 1:
        raise ConfigError("every split needs at least one pair")
    os.makedirs(out_dir, exist_ok=True)
    meta = {"seed": int(seed), "synth": cfg.to_json()}
    paths = {}
    for split in SPLITS:
        pairs = [generate_pair(s, cfg, pair_id=f"{split}_{i:05d}")
                 for i, s in enumerate(split_seeds(seed, split, counts[split]))]
        paths[split] = os.path.join(out_dir, f"{split}.json")
        write_dataset(paths[split], pairs, dict(meta, split=split), inline)
    return paths
