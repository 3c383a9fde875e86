"""First-order optimization: Adam with global-norm gradient clipping.

Clipping happens before the moment update, so the moments only ever see
the clipped gradients.  Moments live per parameter and always match its
shape; the step counter increases by exactly one per ``step`` call.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class Adam:
    """Adam over a named parameter dict.

    Gradients are read from ``param.grad`` (set by ``backward``) unless an
    explicit ``grads`` mapping is passed.  Missing gradients count as zero.
    """

    def __init__(self, params: dict[str, Tensor], lr=1e-3, betas=(0.9, 0.999),
                 eps=1e-8, clip_norm: float | None = 2.0):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.step_count = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def _gather_grads(self, grads=None) -> dict[str, np.ndarray]:
        out = {}
        for k, p in self.params.items():
            g = grads.get(k) if grads is not None else p.grad
            if g is None:
                g = np.zeros_like(p.data)
            g = np.asarray(g, dtype=p.data.dtype)
            if g.shape != p.data.shape:
                raise ValueError(
                    f"gradient shape {g.shape} does not match parameter "
                    f"{k!r} shape {p.data.shape}")
            out[k] = g
        return out

    def step(self, grads=None) -> None:
        gs = self._gather_grads(grads)
        if self.clip_norm is not None:
            total = np.sqrt(sum(float((g * g).sum()) for g in gs.values()))
            if total > self.clip_norm:
                scale = self.clip_norm / total
                gs = {k: g * scale for k, g in gs.items()}
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for k, p in self.params.items():
            g = gs[k]
            m = self._m[k] = b1 * self._m[k] + (1 - b1) * g
            v = self._v[k] = b2 * self._v[k] + (1 - b2) * g * g
            m_hat = m / (1 - b1 ** t)
            v_hat = v / (1 - b2 ** t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
