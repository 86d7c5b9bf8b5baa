"""Adam with per-group learning rates, and global-norm gradient clipping."""

import numpy as np


class Adam:
    """Adam (beta1=0.9, beta2=0.999, eps=1e-8) over groups of tensors.

    ``groups`` is a list of ``(tensors, lr)`` pairs. Tensors without a
    gradient are skipped for that step.
    """

    def __init__(self, groups, betas=(0.9, 0.999), eps=1e-8):
        self.groups = [(list(params), float(lr)) for params, lr in groups]
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = {}
        self._v = {}

    def parameters(self):
        return [p for params, _ in self.groups for p in params]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for params, lr in self.groups:
            if lr == 0.0:
                continue
            for p in params:
                if p.grad is None:
                    continue
                key = p.node_id
                m = self._m.get(key, 0.0) * self.beta1 + (1 - self.beta1) * p.grad
                v = self._v.get(key, 0.0) * self.beta2 + (1 - self.beta2) * p.grad ** 2
                self._m[key], self._v[key] = m, v
                new = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
                new.flags.writeable = False
                p.data = new


def global_grad_norm(params):
    total = sum(float((p.grad ** 2).sum()) for p in params if p.grad is not None)
    return float(np.sqrt(total))


def clip_grad_norm(params, max_norm):
    """Rescale gradients in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    norm = global_grad_norm(params)
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm
