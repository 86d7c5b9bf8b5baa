"""Softmax temperature prediction.

The learned module pools a feature map, runs a two-layer MLP and squashes
the result with the (increasing) logistic function, giving a per-image
partial temperature in (0, 1). The product of the two partial temperatures
of a pair is the effective training temperature.
"""

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .backbone import glorot_uniform
from .errors import ConfigError, DimensionError, DomainError
from .serialization import load_weights, save_weights

MODES = ("learned_mlp", "single_param", "manual", "unit")

# Logistic inputs are clipped here so the output stays strictly inside (0, 1)
# in float64 (sigmoid(37) already rounds to 1.0).
LOGIT_RANGE = (-700.0, 36.0)


@dataclass(frozen=True)
class TemperatureMode:
    kind: str = "learned_mlp"
    value: float = None

    def __post_init__(self):
        if self.kind not in MODES:
            raise ConfigError(f"unknown temperature mode {self.kind!r}")
        if self.kind in ("manual", "single_param"):
            if self.value is None:
                raise ConfigError(f"{self.kind} mode needs a value")
            if not 0.0 < self.value <= 1.0:
                raise DomainError(f"{self.kind} temperature must lie in (0, 1], got {self.value}")

    @property
    def learnable(self):
        return self.kind in ("learned_mlp", "single_param")

    def to_json(self):
        return {"kind": self.kind, "value": self.value}

    @classmethod
    def from_json(cls, d):
        return cls(d["kind"], d.get("value"))


class TempModuleParams:
    """Two-layer MLP weights; hidden width equals the channel count."""

    def __init__(self, tensors):
        self.tensors = dict(tensors)

    @classmethod
    def initialize(cls, channels, seed=0):
        rng = np.random.default_rng(seed)
        return cls({
            "w1": ag.parameter(glorot_uniform(rng, channels, channels)),
            "b1": ag.parameter(np.zeros(channels)),
            "w2": ag.parameter(np.zeros((channels, 1))),
            "b2": ag.parameter(np.zeros(1)),
        })

    @classmethod
    def zeros(cls, channels):
        return cls({
            "w1": ag.parameter(np.zeros((channels, channels))),
            "b1": ag.parameter(np.zeros(channels)),
            "w2": ag.parameter(np.zeros((channels, 1))),
            "b2": ag.parameter(np.zeros(1)),
        })

    @property
    def channels(self):
        return self.tensors["w1"].shape[0]

    def parameters(self):
        return list(self.tensors.values())

    def save(self, directory):
        save_weights(directory, {k: t.data for k, t in self.tensors.items()},
                     {"kind": "temperature_mlp", "channels": self.channels})

    @classmethod
    def load(cls, directory):
        arrays, _ = load_weights(directory)
        return cls({k: ag.parameter(v) for k, v in arrays.items()})


def predict_partial_temperature(fmap, params):
    """Per-image temperature in (0, 1); shape () for one map, (N,) for a batch.

    Features pass through :func:`~tempmatch.autograd.detach`, so the
    temperature loss never reaches the backbone.
    """
    if fmap.channels != params.channels:
        raise DimensionError(f"feature channels {fmap.channels} != module width {params.channels}")
    t = params.tensors
    pooled = ag.global_average_pool(ag.detach(fmap.data))
    single = pooled.ndim == 1
    if single:
        pooled = pooled.reshape(1, -1)
    hidden = ag.relu(ag.matmul(pooled, t["w1"]) + t["b1"])
    logit = ag.clamp(ag.matmul(hidden, t["w2"]) + t["b2"], *LOGIT_RANGE)
    beta = ag.sigmoid(logit).reshape(-1)
    return beta.reshape(()) if single else beta


class SingleParam:
    """One learnable scalar shared by both images."""

    def __init__(self, value=0.5):
        self.beta = ag.parameter(np.array(float(value)))

    def parameters(self):
        return [self.beta]


def effective_temperature(mode, fa, fb, params=None):
    """Partial temperatures ``(beta_a, beta_b)`` for a pair of feature maps.

    ``params`` is a :class:`TempModuleParams` for ``learned_mlp`` and a
    :class:`SingleParam` for ``single_param``; it is ignored otherwise.
    """
    if mode.kind == "unit":
        return 1.0, 1.0
    if mode.kind == "manual":
        root = float(np.sqrt(mode.value))
        return root, root
    if mode.kind == "single_param":
        if params is None:
            raise ConfigError("single_param mode needs a SingleParam")
        if params.beta.item() <= 0:
            raise DomainError("single temperature parameter became non-positive")
        return params.beta, params.beta
    if params is None:
        raise ConfigError("learned_mlp mode needs TempModuleParams")
    return predict_partial_temperature(fa, params), predict_partial_temperature(fb, params)


def training_temperature(beta_a, beta_b):
    """beta_trn = beta_a * beta_b as plain floats/arrays."""
    a = beta_a.data if isinstance(beta_a, ag.Tensor) else beta_a
    b = beta_b.data if isinstance(beta_b, ag.Tensor) else beta_b
    return np.asarray(a) * np.asarray(b)
