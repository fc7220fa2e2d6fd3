"""
Minimal reverse-mode automatic differentiation over dense float64 arrays.

A Graph records every operation in creation order; backward walks the record
in reverse and accumulates gradients into the parameter leaves.
"""

import logging

import numpy as np

logger = logging.getLogger(__name__)


class AutodiffError(ValueError):
    """Raised for shape mismatches and misuse of a graph."""


class Node:
    __slots__ = ("graph", "index", "op", "value", "grad", "parents", "backward_fn", "name")

    def __init__(self, graph, op, value, parents=(), backward_fn=None, name=None):
        self.graph = graph
        self.index = len(graph.nodes)
        self.op = op
        self.value = value
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Node {self.index} {self.op}{label} shape={self.shape}>"


class Graph:
    """Tape of operations for one forward pass."""

    def __init__(self):
        self.nodes = []
        self._seeds = {}

    def _record(self, op, value, parents=(), backward_fn=None, name=None):
        for p in parents:
            if p.graph is not self:
                raise AutodiffError(f"{op}: input {p!r} belongs to another graph")
        node = Node(self, op, np.asarray(value, dtype=np.float64), parents, backward_fn, name)
        self.nodes.append(node)
        return node

    # leaves

    def parameter(self, name, value):
        return self._record("parameter", np.array(value, dtype=np.float64), name=name)

    def constant(self, value):
        return self._record("constant", np.array(value, dtype=np.float64))

    # ops

    def matmul(self, a, b):
        if a.value.ndim not in (1, 2) or b.value.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
            raise AutodiffError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        a2 = a.value if a.value.ndim == 2 else a.value[None, :]
        b2 = b.value if b.value.ndim == 2 else b.value[:, None]
        out2 = a2 @ b2
        out_shape = a.shape[:-1] + b.shape[1:]

        def backward(g):
            g2 = g.reshape(out2.shape)
            return (g2 @ b2.T).reshape(a.shape), (a2.T @ g2).reshape(b.shape)

        return self._record("matmul", out2.reshape(out_shape), (a, b), backward)

    def add(self, a, b):
        if a.shape == b.shape:
            return self._record("add", a.value + b.value, (a, b), lambda g: (g, g))
        if b.value.ndim == 1 and a.value.ndim >= 1 and a.shape[-1] == b.shape[0]:
            lead = tuple(range(a.value.ndim - 1))
            return self._record("add", a.value + b.value, (a, b), lambda g: (g, g.sum(axis=lead)))
        raise AutodiffError(f"add: incompatible shapes {a.shape} and {b.shape} (only bias broadcast supported)")

    def concat(self, nodes, axis=0):
        nodes = list(nodes)
        if not nodes:
            raise AutodiffError("concat: no inputs")
        try:
            out = np.concatenate([n.value for n in nodes], axis=axis)
        except ValueError as e:
            raise AutodiffError(f"concat: incompatible shapes {[n.shape for n in nodes]} on axis {axis}") from e
        bounds = np.cumsum([n.shape[axis] for n in nodes])[:-1]

        def backward(g):
            return tuple(np.split(g, bounds, axis=axis))

        return self._record("concat", out, nodes, backward)

    def relu(self, x):
        active = x.value > 0
        return self._record("relu", np.where(active, x.value, 0.0), (x,), lambda g: (g * active,))

    def tanh(self, x):
        out = np.tanh(x.value)
        return self._record("tanh", out, (x,), lambda g: (g * (1.0 - out ** 2),))

    def sigmoid(self, x):
        out = 0.5 * (1.0 + np.tanh(0.5 * x.value))
        return self._record("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))

    def reshape(self, x, shape):
        shape = tuple(shape)
        if int(np.prod(shape)) != x.value.size:
            raise AutodiffError(f"reshape: cannot reshape {x.shape} to {shape}")
        return self._record("reshape", x.value.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))

    def slice(self, x, start, stop, axis=0):
        if not 0 <= start < stop <= x.shape[axis]:
            raise AutodiffError(f"slice: [{start}:{stop}] out of range for axis {axis} of {x.shape}")
        index = [slice(None)] * x.value.ndim
        index[axis] = slice(start, stop)
        index = tuple(index)

        def backward(g):
            full = np.zeros_like(x.value)
            full[index] = g
            return (full,)

        return self._record("slice", x.value[index], (x,), backward)

    def scale(self, x, factor):
        factor = float(factor)
        return self._record("scale", x.value * factor, (x,), lambda g: (g * factor,))

    # reverse pass

    def inject_external_gradient(self, node, gradient):
        """Add an upstream gradient for `node`; consumed by the next backward()."""
        if node.graph is not self:
            raise AutodiffError(f"{node!r} belongs to another graph")
        gradient = np.asarray(gradient, dtype=np.float64)
        if gradient.shape != node.shape:
            raise AutodiffError(f"injected gradient shape {gradient.shape} does not match {node!r}")
        if node.index in self._seeds:
            self._seeds[node.index] = self._seeds[node.index] + gradient
        else:
            self._seeds[node.index] = gradient.copy()

    def backward(self, seed=None, node=None):
        """
        Reverse accumulation over the recorded operations

        Args:
            seed (array): Gradient of the objective w.r.t. `node`; when omitted
                only injected gradients drive the pass
            node (Node): Node the seed applies to, defaults to the last one

        Returns:
            dict: Parameter name -> gradient array
        """
        if not any(n.backward_fn for n in self.nodes):
            raise AutodiffError("backward called before any forward operation was recorded")
        if seed is not None:
            self.inject_external_gradient(self.nodes[-1] if node is None else node, seed)
        if not self._seeds:
            raise AutodiffError("backward needs a seed or an injected gradient")

        for n in self.nodes:
            n.grad = np.zeros_like(n.value)
        for index, g in self._seeds.items():
            self.nodes[index].grad += g
        self._seeds = {}

        for n in reversed(self.nodes):
            if n.backward_fn is None or not n.grad.any():
                continue
            for parent, g in zip(n.parents, n.backward_fn(n.grad)):
                parent.grad += g

        return {n.name: n.grad for n in self.nodes if n.op == "parameter"}

    def parameters(self):
        return {n.name: n for n in self.nodes if n.op == "parameter"}


def backward(graph, seed_gradient=None, node=None):
    return graph.backward(seed_gradient, node)


def inject_external_gradient(graph, node, gradient):
    graph.inject_external_gradient(node, gradient)
