"""Helpers for checking gradients of the full training loss."""

import numpy as np

from tempmatch import autograd as ag
from tempmatch.training import Model

from conftest import tiny_config


class FrozenTemperature(Model):
    """Learned-mode model whose partial temperatures are pinned to given values."""

    def __init__(self, config, backbone, betas):
        super().__init__(config, backbone=backbone)
        self.betas = betas

    def partial_temperatures(self, fa, fb):
        return self.betas


def bind(model, arrays):
    names = list(model.backbone.tensors) + [f"t.{k}" for k in model.temperature.tensors]
    for name, a in zip(names, arrays):
        if name.startswith("t."):
            model.temperature.tensors[name[2:]] = a
        else:
            model.backbone.tensors[name] = a


def learned_model(seed=0, **kw):
    """Tiny learned-MLP model with a non-zero output layer so every temperature
    parameter receives gradient; a high threshold keeps the penalty active."""
    model = Model(tiny_config(gamma=0.2, beta_thres=0.45, seed=seed, **kw))
    rng = np.random.default_rng(seed)
    model.temperature.tensors["w2"] = ag.parameter(rng.normal(size=(12, 1)) * 0.5)
    return model


def temperature_path_error(model, batch, **kw):
    import gradcheck

    start = [p.data.copy() for p in model.backbone.parameters() + model.temperature_parameters()]
    n_bb = len(model.backbone.tensors)

    def loss_of(*arrays):
        bind(model, arrays)
        return model.batch_loss(batch)[0]

    return gradcheck.check(loss_of, start, wrt=range(n_bb, len(start)), **kw)


def backbone_path_error(model, batch, **kw):
    """FD check of the backbone gradient with the partial temperatures held at
    their current values, after confirming the learned model's backbone
    gradient equals the pinned-temperature one exactly (and is not all zero)."""
    import gradcheck

    for p in model.backbone.parameters():
        p.zero_grad()
    loss, _, _, ba, bb = model.batch_loss(batch)
    loss.backward()
    learned = [p.grad.copy() for p in model.backbone.parameters()]
    if not any(np.any(g) for g in learned):
        return float("inf")
    frozen = FrozenTemperature(model.config, model.backbone, (ag.Tensor(ba), ag.Tensor(bb)))
    for p in frozen.backbone.parameters():
        p.zero_grad()
    frozen.batch_loss(batch)[0].backward()
    for g, p in zip(learned, frozen.backbone.parameters()):
        if not np.array_equal(g, p.grad):
            return float("inf")
    start = [p.data.copy() for p in frozen.backbone.parameters()]

    def loss_of(*arrays):
        for name, a in zip(list(frozen.backbone.tensors), arrays):
            frozen.backbone.tensors[name] = a
        return frozen.batch_loss(batch)[0]

    return gradcheck.check(loss_of, start, **kw)
