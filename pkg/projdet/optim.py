"""AdamW with decoupled weight decay and global-norm gradient clipping."""

from typing import List, Optional, Sequence, Tuple

import numpy as np

from .tensor import Tensor


class AdamW:
    """
    Decoupled-weight-decay Adam.

    Args:
        params: Trainable tensors, in a fixed order
        lr: Step size
        betas: Exponential decay rates of the first and second moments
        eps: Denominator floor
        weight_decay: Decoupled decay coefficient
        max_grad_norm: Clip the global gradient norm to this value (optional)
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 2e-4, betas: Tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01, max_grad_norm: Optional[float] = None):
        self.params: List[Tensor] = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.max_grad_norm = max_grad_norm
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def grad_norm(self) -> float:
        total = 0.0
        for p in self.params:
            if p.grad is not None:
                total += float(np.sum(p.grad * p.grad))
        return float(np.sqrt(total))

    def step(self) -> float:
        """
        Apply one update using the gradients currently stored on the parameters.

        Returns:
            Global gradient norm before clipping
        """
        self.step_count += 1
        norm = self.grad_norm()
        scale = 1.0
        if self.max_grad_norm is not None and norm > self.max_grad_norm:
            scale = self.max_grad_norm / (norm + 1e-12)

        beta1, beta2 = self.betas
        correction1 = 1.0 - beta1 ** self.step_count
        correction2 = 1.0 - beta2 ** self.step_count
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad * scale
            p.data *= 1.0 - self.lr * self.weight_decay
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            p.data -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
        return norm
