"""Adam optimizer over groups of trainable tensors.

Each optimizer owns its parameter group and keeps per-parameter first
and second moment buffers plus one shared step counter.  Gradients are
consumed on step: after the update each parameter's grad is reset to
exact zeros, so stale gradients can never leak into a later update.
"""

import numpy as np

from .errors import GraphError, NonFiniteError


class Adam:
    """Bias-corrected Adam (descent direction).

    Parameters
    ----------
    params : sequence of Tensor
        Trainable leaves, stepped together.
    lr : float
        Step size.
    beta1, beta2, eps : float
        Moment decay rates and the denominator fudge term.
    """

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        params = list(params)
        if not params:
            raise ValueError("Adam needs at least one parameter")
        for p in params:
            if not (p.is_leaf and p.requires_grad):
                raise GraphError("Adam parameters must be trainable leaves")
        if lr <= 0.0:
            raise ValueError(f"lr must be positive, got {lr}")
        self.params = params
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.values) for p in params]
        self.v = [np.zeros_like(p.values) for p in params]

    def step(self):
        """Apply one update from the currently stored gradients."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                raise GraphError("parameter has no gradient; run backward first")
            g = p.grad
            if not np.isfinite(g).all():
                raise NonFiniteError("non-finite gradient in Adam step")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.values = p.values - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if not np.isfinite(p.values).all():
                raise NonFiniteError("non-finite parameter values after Adam step")
            p.grad = np.zeros_like(p.values)

    def state_snapshot(self):
        """Copies of moments and the step counter, for divergence reports."""
        return {
            "t": self.t,
            "m": [m.copy() for m in self.m],
            "v": [v.copy() for v in self.v],
        }
