"""Minimal parameter containers in the style of ``torch.nn``."""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import ops
from .tensor import Tensor


class Module:
    """Holds parameters (``Tensor`` attributes with ``requires_grad``) and sub-modules."""

    training: bool = True

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        seen = set()
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad and id(value) not in seen:
                seen.add(id(value))
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        """Non-trainable tensors that still belong in a checkpoint."""
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and not value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_buffers(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{full}.{i}.")

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {n: p.data.copy() for n, p in self.named_parameters()}
        state.update({n: b.data.copy() for n, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        own.update(dict(self.named_buffers()))
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, t in own.items():
            arr = np.asarray(state[name], dtype=t.data.dtype)
            if arr.shape != t.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {t.shape}")
            t.data = arr.copy()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def uniform_param(rng: np.random.Generator, shape, fan_in: int, dtype=np.float64) -> Tensor:
    bound = np.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


class Linear(Module):
    """``x @ W + b`` with weights uniform in +-sqrt(1/fan_in)."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 dtype=np.float64):
        self.d_in, self.d_out = d_in, d_out
        self.weight = uniform_param(rng, (d_in, d_out), d_in, dtype)
        self.bias = uniform_param(rng, (d_out,), d_in, dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = ops.matmul(x, self.weight, exact_rows=True)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float64):
        self.gain = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gain, self.bias, self.eps)


class MLP(Module):
    """Stack of ``num_layers`` linear maps with LayerNorm -> ReLU -> dropout between them.

    ``num_layers == 0`` is the identity (and then ``d_in`` must equal ``d_out``).
    """

    def __init__(self, num_layers: int, d_in: int, d_hidden: int, d_out: int,
                 rng: np.random.Generator, dropout: float = 0.0, layer_norm: bool = True,
                 bias: bool = True, dtype=np.float64):
        if num_layers < 0:
            raise ValueError("num_layers must be >= 0")
        if num_layers == 0 and d_in != d_out:
            raise ValueError(f"identity MLP needs d_in == d_out, got {d_in} != {d_out}")
        dims = [d_in] + [d_hidden] * (num_layers - 1) + [d_out] if num_layers else []
        self.layers = [Linear(a, b, rng, bias=bias, dtype=dtype) for a, b in zip(dims[:-1], dims[1:])]
        self.norms = [LayerNorm(b, dtype=dtype) for b in dims[1:-1]] if layer_norm else []
        self.dropout = dropout
        self.rng: Optional[np.random.Generator] = None
        self.d_in, self.d_out = d_in, d_out

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def forward(self, x: Tensor) -> Tensor:
        for i, lin in enumerate(self.layers):
            x = lin(x)
            if i < len(self.layers) - 1:
                if self.norms:
                    x = self.norms[i](x)
                x = ops.relu(x)
                x = ops.dropout(x, self.dropout, self.rng, self.training)
        return x
