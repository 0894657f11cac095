"""Named parameter collections."""

from __future__ import annotations

from collections.abc import MutableMapping

import numpy as np

from .tensor import Tensor


class ParamStore(MutableMapping):
    """Mapping of hierarchical names ("enc.mic.0.conv.w") to Tensors.

    Iteration is always in sorted name order so that anything derived from
    the store (serialization, optimizer state, RNG draws) is deterministic.
    """

    def __init__(self, items=None):
        self._d: dict[str, Tensor] = {}
        if items:
            for k, v in dict(items).items():
                self[k] = v

    def __getitem__(self, name: str) -> Tensor:
        return self._d[name]

    def __setitem__(self, name: str, value) -> None:
        if not isinstance(value, Tensor):
            value = Tensor(value)
        value.name = name
        self._d[name] = value

    def __delitem__(self, name: str) -> None:
        del self._d[name]

    def __iter__(self):
        return iter(sorted(self._d))

    def __len__(self):
        return len(self._d)

    def __repr__(self):
        return f"ParamStore({len(self)} tensors, {self.count()} values)"

    def count(self) -> int:
        return int(sum(t.data.size for t in self._d.values()))

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: self._d[k].data for k in self}

    def require_grad(self, flag: bool = True) -> "ParamStore":
        for t in self._d.values():
            t.requires_grad = flag
        return self

    def copy(self) -> "ParamStore":
        return ParamStore({k: Tensor(self._d[k].data.copy()) for k in self})

    def astype(self, dtype) -> "ParamStore":
        return ParamStore({k: Tensor(self._d[k].data.astype(dtype)) for k in self})


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    a = np.sqrt(1.0 / fan_in)
    return rng.uniform(-a, a, size=shape).astype(dtype)
