"""Parameter-owning module tree with dotted-path naming."""

from __future__ import annotations

import numpy as np

from .tensor import Parameter

__all__ = ["Module", "ModuleList", "trunc_normal", "init_rng"]


def init_rng(seed):
    return np.random.default_rng(seed)


def trunc_normal(rng, shape, std=0.02):
    """Normal draws clipped to two standard deviations, float32."""
    x = rng.standard_normal(size=shape) * std
    return np.clip(x, -2.0 * std, 2.0 * std).astype(np.float32)


class Module:
    """Base class: attribute assignment registers parameters and children.

    Iteration order follows attribute insertion order, so parameter name
    paths are stable for a fixed construction sequence.
    """

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, key, value):
        if isinstance(value, Parameter):
            self._params[key] = value
        elif isinstance(value, Module):
            self._children[key] = value
        object.__setattr__(self, key, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix=""):
        for key, p in self._params.items():
            yield (f"{prefix}{key}", p)
        for key, child in self._children.items():
            yield from child.named_parameters(prefix=f"{prefix}{key}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def assign_names(self, prefix=""):
        """Stamp dotted-path names onto every parameter; checks uniqueness."""
        seen = set()
        for name, p in self.named_parameters(prefix=prefix):
            if name in seen:
                raise ValueError(f"duplicate parameter name {name}")
            seen.add(name)
            p.name = name
        return sorted(seen)

    def zero_grad(self):
        for _, p in self.named_parameters():
            p.grad = None

    def count_params(self):
        return sum(p.data.size for _, p in self.named_parameters())


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._list = []
        for m in modules:
            self.append(m)

    def append(self, module):
        idx = len(self._list)
        self._list.append(module)
        self._children[str(idx)] = module
        object.__setattr__(self, str(idx), module)

    def __iter__(self):
        return iter(self._list)

    def __len__(self):
        return len(self._list)

    def __getitem__(self, idx):
        return self._list[idx]
