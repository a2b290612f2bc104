"""Linear layers and MLP stacks on top of the autodiff tensors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, matmul, add, relu


@dataclass
class Linear:
    W: Tensor
    b: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_out: int) -> "Linear":
        # Glorot uniform, zero bias
        a = np.sqrt(6.0 / (d_in + d_out))
        return cls(Tensor(rng.uniform(-a, a, size=(d_in, d_out)), requires_grad=True),
                   Tensor(np.zeros(d_out), requires_grad=True))

    @classmethod
    def zeros(cls, d_in: int, d_out: int) -> "Linear":
        return cls(Tensor(np.zeros((d_in, d_out)), requires_grad=True),
                   Tensor(np.zeros(d_out), requires_grad=True))

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.W), self.b)

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.W": self.W, f"{prefix}.b": self.b}


def mlp(x: Tensor, layers: list[Linear], final_relu: bool = False) -> Tensor:
    """Linear layers with ReLU in between (and after the last one if asked)."""
    for i, lin in enumerate(layers):
        x = lin(x)
        if i < len(layers) - 1 or final_relu:
            x = relu(x)
    return x


def init_mlp(rng: np.random.Generator, widths: list[int]) -> list[Linear]:
    return [Linear.init(rng, a, b) for a, b in zip(widths[:-1], widths[1:])]


def named_mlp(layers: list[Linear], prefix: str) -> dict[str, Tensor]:
    out = {}
    for i, lin in enumerate(layers):
        out.update(lin.named(f"{prefix}.{i}"))
    return out
