"""Adam optimizer with a stepped learning-rate decay schedule."""

from __future__ import annotations

import numpy as np

__all__ = ["Adam"]


class Adam:
    """Adam over a list of parameters.

    The effective learning rate is ``lr * decay_factor ** (epoch //
    decay_every)``; call :meth:`set_epoch` as training advances. Moments
    are zero-initialized and the step counter is monotone.
    """

    def __init__(self, params, lr: float = 1e-5, betas=(0.9, 0.999),
                 eps: float = 1e-8, decay_factor: float = 0.8,
                 decay_every: int = 100):
        self.params = list(params)
        self.base_lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.decay_factor = float(decay_factor)
        self.decay_every = int(decay_every)
        self.epoch = 0
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    @property
    def lr(self) -> float:
        return self.base_lr * self.decay_factor ** (self.epoch // self.decay_every)

    def set_epoch(self, epoch: int) -> None:
        if epoch < 0:
            raise ValueError("epoch must be nonnegative")
        self.epoch = int(epoch)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.step_count += 1
        lr = self.lr
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.step_count
        bias2 = 1.0 - b2 ** self.step_count
        for p, m, v in zip(self.params, self._m, self._v):
            grad = p.grad
            if grad is None:
                raise RuntimeError(
                    f"parameter {p.name or '?'} has no gradient; "
                    "run backward() before step()"
                )
            m *= b1
            m += (1.0 - b1) * grad
            v *= b2
            v += (1.0 - b2) * grad * grad
            m_hat = m / bias1
            v_hat = v / bias2
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    # -- checkpointing ------------------------------------------------------
    def state_arrays(self) -> dict:
        out = {"_optim.step": np.array(float(self.step_count)),
               "_optim.epoch": np.array(float(self.epoch))}
        for p, m, v in zip(self.params, self._m, self._v):
            out[f"_optim.m.{p.name}"] = m.copy()
            out[f"_optim.v.{p.name}"] = v.copy()
        return out

    def load_state_arrays(self, arrays: dict) -> None:
        self.step_count = int(np.asarray(arrays["_optim.step"]).ravel()[0])
        self.epoch = int(np.asarray(arrays["_optim.epoch"]).ravel()[0])
        for i, p in enumerate(self.params):
            self._m[i] = arrays[f"_optim.m.{p.name}"].copy()
            self._v[i] = arrays[f"_optim.v.{p.name}"].copy()
