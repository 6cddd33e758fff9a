"""Adadelta, the single update rule used for every trainable network."""

from __future__ import annotations

import numpy as np

from .errors import ContractError, NumericError
from .nn import ParamRegistry
from .tensor import all_finite

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is an optional accelerator
    njit = None


def _adadelta_update(param, grad, sq_grad, sq_delta, rho, eps, lr):
    """One fused update over flat views; elementwise, so the jitted loop
    below is bit-identical to this numpy form."""
    sq_grad *= rho
    sq_grad += (1.0 - rho) * (grad * grad)
    delta = np.sqrt((sq_delta + eps) / (sq_grad + eps)) * grad
    sq_delta *= rho
    sq_delta += (1.0 - rho) * (delta * delta)
    param -= lr * delta


if njit is not None:
    @njit(cache=True)
    def _adadelta_update(param, grad, sq_grad, sq_delta, rho, eps, lr):  # noqa: F811
        for i in range(param.shape[0]):
            g = grad[i]
            sg = rho * sq_grad[i] + (1.0 - rho) * (g * g)
            d = np.sqrt((sq_delta[i] + eps) / (sg + eps)) * g
            sq_grad[i] = sg
            sq_delta[i] = rho * sq_delta[i] + (1.0 - rho) * (d * d)
            param[i] -= lr * d


class Adadelta:
    """Per-parameter adaptive steps from running averages of squared
    gradients and squared updates.

    For each parameter with gradient g:

        sq_grad  <- rho * sq_grad + (1 - rho) * g^2
        delta    = sqrt(sq_delta + eps) / sqrt(sq_grad + eps) * g
        sq_delta <- rho * sq_delta + (1 - rho) * delta^2
        param    <- param - lr * delta

    ``lr=1.0`` reproduces the canonical rule; gradients are cleared
    after a step.
    """

    def __init__(
        self,
        params: ParamRegistry,
        rho: float = 0.95,
        eps: float = 1e-6,
        lr: float = 1.0,
    ):
        if not 0.0 <= rho < 1.0:
            raise ContractError(f"rho must be in [0, 1), got {rho}")
        if eps <= 0.0:
            raise ContractError(f"eps must be positive, got {eps}")
        self.params = params
        self.rho = rho
        self.eps = eps
        self.lr = lr
        self.sq_grad = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.sq_delta = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        rho, eps, lr = self.rho, self.eps, self.lr
        for name, param in self.params.items():
            grad = param.grad
            if grad is None:
                raise ContractError(f"parameter '{name}' has no gradient")
            if not all_finite(grad):
                raise NumericError(f"non-finite gradient for parameter '{name}'")
            _adadelta_update(
                param.data.reshape(-1),
                np.ascontiguousarray(grad).reshape(-1),
                self.sq_grad[name].reshape(-1),
                self.sq_delta[name].reshape(-1),
                rho,
                eps,
                lr,
            )
            param.grad = None

    # -- checkpoint support ---------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Accumulators keyed for serialization, in registry order."""
        out: dict[str, np.ndarray] = {}
        for name, _ in self.params.items():
            out[f"sq_grad/{name}"] = self.sq_grad[name]
            out[f"sq_delta/{name}"] = self.sq_delta[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, _ in self.params.items():
            self.sq_grad[name] = np.asarray(arrays[f"sq_grad/{name}"], dtype=np.float64)
            self.sq_delta[name] = np.asarray(arrays[f"sq_delta/{name}"], dtype=np.float64)
