"""Dense tensors and the recording tape behind reverse-mode differentiation.

Operations executed while a :class:`Tape` is active (and at least one input
requires a gradient) are appended to that tape in execution order, which is
therefore a valid topological order. Backward rules are themselves written in
terms of tensor operations, so a gradient computed with ``create_graph=True``
can be differentiated again (needed for gradient penalties).
"""
from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

_state = threading.local()


def _stack() -> list:
    if not hasattr(_state, "tapes"):
        _state.tapes = []
        _state.dtype = np.float32
    return _state.tapes


def default_dtype() -> type:
    _stack()
    return _state.dtype


@contextlib.contextmanager
def shadow64():
    """Create new tensors in float64 for the duration of the block."""
    _stack()
    prev = _state.dtype
    _state.dtype = np.float64
    try:
        yield
    finally:
        _state.dtype = prev


class TapeError(RuntimeError):
    pass


class FrozenParameterError(RuntimeError):
    pass


class Tensor:
    """An n-dimensional float array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "frozen", "name", "_grad", "_node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(default_dtype())
        self.data = arr
        self.requires_grad = requires_grad
        self.frozen = False
        self.name = name
        self._grad = None
        self._node = None

    @property
    def grad(self):
        return self._grad

    @grad.setter
    def grad(self, value):
        if value is not None and self.frozen:
            raise FrozenParameterError(f"gradient write to frozen parameter {self.name!r}")
        self._grad = value

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self._grad = None

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"


@dataclass
class Node:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[Tensor], Sequence["Tensor | None"]]


@dataclass
class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; ops record onto the innermost active tape
    only, and tensors produced outside it are constants to it. ``backward``
    may run once per recording; call :meth:`reset` to reuse the tape.
    """

    nodes: list = field(default_factory=list)
    consumed: bool = False

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        tapes = _stack()
        assert tapes and tapes[-1] is self
        tapes.pop()

    def reset(self) -> None:
        self.nodes.clear()
        self.consumed = False

    def gradient(self, target: Tensor, sources: Iterable[Tensor], create_graph: bool = False) -> list:
        """Return d(target)/d(source) for each source (zeros if unreachable)."""
        sources = list(sources)
        grads = self._propagate(target, {id(s) for s in sources}, create_graph)
        out = []
        for s in sources:
            g = grads.get(id(s))
            out.append(g if g is not None else Tensor(np.zeros_like(s.data)))
        return out

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
        if self.consumed:
            raise TapeError("backward already ran on this tape; call reset() first")
        leaves: dict[int, Tensor] = {}
        for node in self.nodes:
            for t in node.inputs:
                if t is not None and t.requires_grad and t._node is None:
                    leaves[id(t)] = t
        grads = self._propagate(loss, set(leaves), create_graph=False)
        self.consumed = True
        for key, leaf in leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            leaf.grad = g.data.copy() if leaf.grad is None else leaf.grad + g.data

    def _propagate(self, target: Tensor, keep: set, create_graph: bool) -> dict:
        if target.data.size != 1:
            raise TapeError(f"gradient target must be scalar, got shape {target.shape}")
        grads: dict[int, Tensor] = {id(target): Tensor(np.ones_like(target.data))}
        snapshot = list(self.nodes)
        ctx = contextlib.nullcontext() if create_graph else no_grad()
        if create_graph and (not _stack() or _stack()[-1] is not self):
            ctx = self
        with ctx:
            for node in reversed(snapshot):
                key = id(node.output)
                g = grads.get(key) if key in keep else grads.pop(key, None)
                if g is None:
                    continue
                for inp, ig in zip(node.inputs, node.backward(g)):
                    if inp is None or ig is None or not inp.requires_grad:
                        continue
                    prev = grads.get(id(inp))
                    grads[id(inp)] = ig if prev is None else _add(prev, ig)
        return grads


class _NoGrad:
    def __enter__(self):
        _stack().append(None)

    def __exit__(self, *exc):
        _stack().pop()


def no_grad() -> _NoGrad:
    """Suspend recording (ops inside produce constants)."""
    return _NoGrad()


def active_tape() -> Tape | None:
    tapes = _stack()
    return tapes[-1] if tapes else None


def grad(target: Tensor, sources: Iterable[Tensor], create_graph: bool = False) -> list:
    """Gradients of ``target`` on the active tape (which stays usable)."""
    tape = active_tape()
    if tape is None:
        raise TapeError("grad() needs an active Tape")
    return tape.gradient(target, sources, create_graph=create_graph)


def make(data: np.ndarray, inputs: tuple, backward, op: str) -> Tensor:
    """Wrap an op result, recording a node when any input is tracked."""
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t is not None and t.requires_grad for t in inputs):
        out.requires_grad = True
        node = Node(op, inputs, out, backward)
        out._node = node
        tape.nodes.append(node)
    return out


def _add(a: Tensor, b: Tensor) -> Tensor:
    from .ops import add

    return add(a, b)
