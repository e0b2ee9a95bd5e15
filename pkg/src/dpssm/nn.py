"""Parameter containers and the few layers the networks need."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import autograd as ag
from .autograd import Var


class Module:
    """Holds named ``Var`` parameters and child modules, in definition order."""

    def __init__(self):
        self._params: OrderedDict[str, Var] = OrderedDict()
        self._children: OrderedDict[str, Module] = OrderedDict()

    def param(self, name: str, value) -> Var:
        v = Var(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = v
        return v

    def child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> OrderedDict[str, Var]:
        out: OrderedDict[str, Var] = OrderedDict()
        for k, v in self._params.items():
            out[prefix + k] = v
        for k, m in self._children.items():
            out.update(m.named_parameters(prefix + k + "."))
        return out

    def parameters(self) -> list[Var]:
        return list(self.named_parameters().values())

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> OrderedDict[str, np.ndarray]:
        return OrderedDict((k, v.data.copy()) for k, v in self.named_parameters().items())

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = self.named_parameters()
        if strict:
            missing = set(params) - set(state)
            extra = set(state) - set(params)
            if missing or extra:
                raise KeyError(f"state mismatch: missing={sorted(missing)[:5]} unexpected={sorted(extra)[:5]}")
        for k, v in params.items():
            if k in state:
                arr = np.asarray(state[k], dtype=np.float64)
                if arr.shape != v.data.shape:
                    raise ValueError(f"{k}: shape {arr.shape} != {v.data.shape}")
                v.data = arr.copy()


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 1,
                 groups: int = 1, bias: bool = True, zero: bool = False):
        super().__init__()
        self.stride, self.groups, self.k = stride, groups, k
        shape = (c_out, c_in // groups, k, k)
        w = np.zeros(shape) if zero else _uniform(rng, (c_in // groups) * k * k, shape)
        self.weight = self.param("weight", w)
        self.bias = None
        if bias:
            self.bias = self.param("bias", np.zeros(c_out) if zero else _uniform(rng, (c_in // groups) * k * k, c_out))

    def __call__(self, x):
        return ag.conv2d(x, self.weight, self.bias, self.stride, "same", self.groups)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator | None, bias: bool = True,
                 zero: bool = False):
        super().__init__()
        w = np.zeros((d_out, d_in)) if zero else _uniform(rng, d_in, (d_out, d_in))
        self.weight = self.param("weight", w)
        self.bias = self.param("bias", np.zeros(d_out)) if bias else None

    def __call__(self, x):
        y = ag.matmul(x, ag.transpose(self.weight, (1, 0)))
        return y if self.bias is None else y + self.bias


class LayerNorm2d(Module):
    """Normalizes each pixel over channels, (C, H, W) layout."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.weight = self.param("weight", np.ones((channels, 1, 1)))
        self.bias = self.param("bias", np.zeros((channels, 1, 1)))

    def __call__(self, x):
        mu = ag.mean(x, axis=0, keepdims=True)
        xc = x - mu
        var = ag.mean(ag.square(xc), axis=0, keepdims=True)
        return xc / ag.sqrt(var + self.eps) * self.weight + self.bias
