"""Tensor values and the tape that records them for reverse-mode AD."""

from __future__ import annotations

import contextvars
from typing import Callable, Sequence

import numpy as np

from ..errors import InvalidInputError

_active_tape: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar("pvqe_tape", default=None)


class Tensor:
    """A dense array plus gradient bookkeeping.

    ``data`` is never mutated by library ops; every op returns a new Tensor.
    """

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __getitem__(self, idx):
        from . import ops
        return ops.index(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of executed ops.

    Use as a context manager; ops run inside it are recorded whenever one of
    their inputs requires a gradient.
    """

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._token = None

    def __enter__(self):
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc):
        _active_tape.reset(self._token)
        self._token = None
        return False

    def __len__(self):
        return len(self.nodes)


class no_tape:
    """Suspend recording, e.g. for a stop-gradient forward pass."""

    def __enter__(self):
        self._token = _active_tape.set(None)
        return self

    def __exit__(self, *exc):
        _active_tape.reset(self._token)
        return False


def record(out_data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Wrap ``out_data`` in a Tensor and register ``vjp`` for backward.

    ``vjp(grad_out)`` must return one gradient (or None) per input.
    """
    out = Tensor(out_data)
    tape = _active_tape.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append((out, tuple(inputs), vjp))
    return out


def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    """Propagate d(loss)/d(.) back through ``tape``.

    Sets ``.grad`` on every leaf that requires a gradient and returns the
    gradients of named leaves, keyed by name (sorted).
    """
    if loss.data.size != 1:
        raise InvalidInputError(f"loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise InvalidInputError("loss does not depend on any tensor requiring a gradient")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = {id(node[0]) for node in tape.nodes}
    leaves: dict[int, Tensor] = {}
    for out, inputs, vjp in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        in_grads = vjp(g)
        for inp, gi in zip(inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key not in produced:
                leaves[key] = inp
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    named = {}
    for key, leaf in leaves.items():
        leaf.grad = grads[key].astype(leaf.dtype, copy=False)
        if leaf.name is not None:
            named[leaf.name] = leaf.grad
    return dict(sorted(named.items()))
