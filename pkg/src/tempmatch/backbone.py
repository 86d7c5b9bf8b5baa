"""Toy dense feature extractor.

Non-overlapping ``r x r`` patches are flattened, linearly embedded, and then
passed position-wise through ReLU -> linear layers (the output itself is
not rectified). The result is a ``C x (H/r) x (W/r)``
grid of descriptors, i.e. the same interface a truncated CNN would give.
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .errors import ConfigError, DimensionError
from .serialization import load_weights, save_weights


@dataclass(frozen=True)
class BackboneConfig:
    channels: int = 1
    ratio: int = 8
    embed_dim: int = 32
    widths: tuple = (64, 64, 64)
    seed: int = 0

    @property
    def out_channels(self):
        return self.widths[-1]

    @property
    def patch_dim(self):
        return self.channels * self.ratio * self.ratio


@dataclass
class FeatureMap:
    """Dense descriptors of shape (C, h, w), or (N, C, h, w) for a batch."""

    data: ag.Tensor
    ratio: int

    @property
    def channels(self):
        return self.data.shape[-3]

    @property
    def grid_shape(self):
        return self.data.shape[-2:]

    def cells(self):
        """Descriptors as (..., h*w, C), row-major over cells."""
        c, h, w = self.data.shape[-3:]
        lead = self.data.shape[:-3]
        flat = self.data.reshape(*lead, c, h * w)
        return ag.swap_last(flat)


def glorot_uniform(rng, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


class BackboneParams:
    """Ordered weights of the patch embedding and the MLP layers."""

    def __init__(self, config, tensors):
        self.config = config
        self.tensors = dict(tensors)

    @classmethod
    def initialize(cls, config=BackboneConfig()):
        if not config.widths:
            raise ConfigError("backbone needs at least one MLP layer")
        rng = np.random.default_rng(config.seed)
        tensors = {}
        dims = [config.patch_dim, config.embed_dim, *config.widths]
        names = ["embed"] + [f"layer{i}" for i in range(len(config.widths))]
        for name, fan_in, fan_out in zip(names, dims[:-1], dims[1:]):
            tensors[f"{name}.weight"] = ag.parameter(glorot_uniform(rng, fan_in, fan_out))
            tensors[f"{name}.bias"] = ag.parameter(np.zeros(fan_out))
        return cls(config, tensors)

    @property
    def names(self):
        return list(self.tensors)

    @property
    def last_block_boundary(self):
        """Index of the first parameter belonging to the last MLP layer."""
        return len(self.tensors) - 2

    def parameters(self):
        return list(self.tensors.values())

    def layer_names(self):
        return [n[: -len(".weight")] for n in self.tensors if n.endswith(".weight")]

    def snapshot(self):
        return {name: t.data.copy() for name, t in self.tensors.items()}

    def save(self, directory, extra=None):
        manifest = {"kind": "backbone", "config": _config_to_json(self.config)}
        manifest.update(extra or {})
        save_weights(directory, self.snapshot(), manifest)

    @classmethod
    def load(cls, directory):
        arrays, manifest = load_weights(directory)
        config = _config_from_json(manifest["config"])
        return cls(config, {k: ag.parameter(v) for k, v in arrays.items()})


def _config_to_json(config):
    d = asdict(config)
    d["widths"] = list(config.widths)
    return d


def _config_from_json(d):
    d = dict(d)
    d["widths"] = tuple(d["widths"])
    return BackboneConfig(**d)


def trainable_parameters(params, mode):
    """Parameters updated during fine-tuning.

    ``"full"`` returns everything; ``"last_block"`` only the final MLP layer.
    """
    ordered = params.parameters()
    if mode == "full":
        return ordered
    if mode == "last_block":
        return ordered[params.last_block_boundary:]
    raise ConfigError(f"unknown fine-tuning scope {mode!r}")


def patchify(images, ratio):
    """(..., ch, H, W) array -> (..., h*w, ch*r*r) patch vectors."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim < 3:
        raise DimensionError("images must be (..., channels, H, W)")
    *lead, ch, H, W = images.shape
    if H % ratio or W % ratio:
        raise DimensionError(f"image size {H}x{W} not divisible by ratio {ratio}")
    h, w = H // ratio, W // ratio
    x = images.reshape(*lead, ch, h, ratio, w, ratio)
    n = len(lead)
    x = x.transpose(*range(n), n + 1, n + 3, n, n + 2, n + 4)
    return np.ascontiguousarray(x.reshape(*lead, h * w, ch * ratio * ratio))


def embed_patches(patches, params):
    """Run the MLP on precomputed patch vectors; returns (..., h*w, C)."""
    t = params.tensors
    if np.shape(patches)[-1] != params.config.patch_dim:
        raise DimensionError("patch size does not match backbone configuration")
    x = ag.matmul(ag.as_tensor(patches), t["embed.weight"]) + t["embed.bias"]
    for i in range(len(params.config.widths)):
        x = ag.matmul(ag.relu(x), t[f"layer{i}.weight"]) + t[f"layer{i}.bias"]
    return x


def extract_features(image, params):
    """Feature map of one image (ch, H, W) or a batch (N, ch, H, W)."""
    image = image.data if isinstance(image, ag.Tensor) else np.asarray(image, dtype=np.float64)
    cfg = params.config
    if image.ndim < 3 or image.shape[-3] != cfg.channels:
        raise DimensionError(f"expected {cfg.channels}-channel image, got shape {image.shape}")
    H, W = image.shape[-2:]
    cells = embed_patches(patchify(image, cfg.ratio), params)
    lead = image.shape[:-3]
    h, w = H // cfg.ratio, W // cfg.ratio
    grid = ag.swap_last(cells).reshape(*lead, cfg.out_channels, h, w)
    return FeatureMap(grid, cfg.ratio)
