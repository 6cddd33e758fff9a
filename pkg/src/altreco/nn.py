"""Dense layers, Glorot initialisation and the named parameter registry."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .tensor import Tensor

ACTIVATIONS = ("relu", "sigmoid", "tanh", "linear")

_ACTIVATION_FNS = {
    "relu": T.relu,
    "sigmoid": T.sigmoid,
    "tanh": T.tanh,
    "linear": lambda x: x,
}


@dataclass
class DenseLayer:
    weight: Tensor  # in_width x out_width
    bias: Tensor  # out_width
    activation: str

    @property
    def in_width(self) -> int:
        return self.weight.shape[0]

    @property
    def out_width(self) -> int:
        return self.weight.shape[1]


def init_dense(
    in_width: int,
    out_width: int,
    activation: str,
    rng: Optional[np.random.Generator],
) -> DenseLayer:
    """Build a dense layer with Glorot-uniform weights and zero bias.

    Passing ``rng=None`` yields all-zero weights, which is handy for
    degenerate-case tests and for allocating a model whose parameters
    will be overwritten from a checkpoint.
    """
    if in_width < 1 or out_width < 1:
        raise ContractError(f"layer widths must be >= 1, got {in_width}x{out_width}")
    if activation not in ACTIVATIONS:
        raise ContractError(f"unknown activation '{activation}'")
    if rng is None:
        weights = np.zeros((in_width, out_width))
    else:
        bound = np.sqrt(6.0 / (in_width + out_width))
        weights = rng.uniform(-bound, bound, size=(in_width, out_width))
    return DenseLayer(
        weight=Tensor(weights, requires_grad=True),
        bias=Tensor(np.zeros(out_width), requires_grad=True),
        activation=activation,
    )


def forward_dense(layer: DenseLayer, x: Tensor) -> Tensor:
    """activation(x @ W + b) for a batch-leading 2-d input."""
    if x.data.ndim != 2 or x.shape[1] != layer.in_width:
        raise DimensionError(
            f"dense layer expects batch x {layer.in_width}, got {x.shape}"
        )
    return _ACTIVATION_FNS[layer.activation](T.matmul(x, layer.weight) + layer.bias)


class ParamRegistry:
    """Ordered mapping from dotted names to parameter tensors.

    Names are unique, iteration follows insertion order, and prefixes
    partition the registry by sub-network (``subset("ue.")``).
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, param: Tensor) -> Tensor:
        if not name:
            raise ContractError("parameter name must be non-empty")
        if name in self._params:
            raise ContractError(f"duplicate parameter name '{name}'")
        self._params[name] = param
        return param

    def add_layer(self, prefix: str, layer: DenseLayer) -> DenseLayer:
        self.add(f"{prefix}.weight", layer.weight)
        self.add(f"{prefix}.bias", layer.bias)
        return layer

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def get(self, name: str) -> Tensor:
        return self._params[name]

    def subset(self, prefix: str) -> "ParamRegistry":
        out = ParamRegistry()
        for name, param in self._params.items():
            if name.startswith(prefix):
                out.add(name, param)
        return out

    def merged_with(self, other: "ParamRegistry") -> "ParamRegistry":
        out = ParamRegistry()
        for name, param in self._params.items():
            out.add(name, param)
        for name, param in other._params.items():
            out.add(name, param)
        return out

    def clear_grads(self) -> None:
        for param in self._params.values():
            param.grad = None

    def __len__(self) -> int:
        return len(self._params)

    def __contains__(self, name: str) -> bool:
        return name in self._params
