"""Reverse-mode automatic differentiation over a flat tape of array ops.

All values are float64 numpy arrays (batches are 2-D, row per sample).
A tape is wired once and then bound and evaluated many times; the value
and adjoint buffers live on the tape, so a tape can be handed to another
thread but must not be shared mutably between threads.

The primitive set is deliberately closed: affine, concat, relu, tanh,
sigmoid, elementwise add/mul, mean, abs, max-with-constant and log are
everything the losses in this package need.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractError, NumericError

# Floor for log inputs; keeps adversarial losses finite when a
# discriminator saturates toward 0 or 1.
LOG_FLOOR = 1e-12


def dense_matrix(rows, cols, data):
    """Validate row-major data and return it as a (rows, cols) float64 array."""
    a = np.asarray(data, dtype=np.float64).reshape(-1)
    if a.size != rows * cols:
        raise ContractError(f"dense matrix needs {rows * cols} entries, got {a.size}")
    if not np.all(np.isfinite(a)):
        raise NumericError("dense matrix entries must be finite")
    return a.reshape(rows, cols)


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tape:
    """An ordered list of primitive ops; inputs reference earlier nodes only."""

    def __init__(self):
        self._kind = []      # op name per node
        self._args = []      # tuple of input node ids
        self._extra = []     # per-op payload (leaf name, const value, scalar, ...)
        self._needs = []     # True if a trainable leaf is reachable below
        self._inputs = {}    # leaf name -> node id
        self._trainable = {} # leaf name -> bool
        self.values = []     # forward results per node
        self._adjoints = []  # gradient accumulators per node

    # ---- construction -------------------------------------------------

    def _push(self, kind, args, extra=None):
        for a in args:
            if not isinstance(a, (int, np.integer)) or not 0 <= a < len(self._kind):
                raise ContractError(f"op input {a!r} does not reference an earlier node")
        self._kind.append(kind)
        self._args.append(args)
        self._extra.append(extra)
        self._needs.append(any(self._needs[a] for a in args))
        self.values.append(None)
        self._adjoints.append(None)
        return len(self._kind) - 1

    def input(self, name, trainable=False):
        """Declare a named leaf, bound at forward time."""
        if name in self._inputs:
            raise ConfigError(f"duplicate input name {name!r}")
        node = self._push("input", ())
        self._needs[node] = bool(trainable)
        self._inputs[name] = node
        self._trainable[name] = bool(trainable)
        return node

    def constant(self, value):
        """Bake a fixed array (or scalar) into the graph."""
        node = self._push("const", (), np.asarray(value, dtype=np.float64))
        return node

    def affine(self, x, w, b):
        """x @ w.T + b with x:(B,n), w:(m,n), b:(m,)."""
        return self._push("affine", (x, w, b))

    def concat(self, a, b):
        """Concatenate along the last axis."""
        return self._push("concat", (a, b))

    def relu(self, x):
        return self.maxc(x, 0.0)

    def tanh(self, x):
        return self._push("tanh", (x,))

    def sigmoid(self, x):
        return self._push("sigmoid", (x,))

    def add(self, a, b):
        return self._push("add", (a, b))

    def mul(self, a, b):
        """Elementwise product of two nodes (use `scale` for constants)."""
        return self._push("mul", (a, b))

    def scale(self, x, c):
        """Multiply a node by a fixed python scalar."""
        if not isinstance(c, (int, float)):
            raise ContractError("scale takes a python scalar, not a node")
        return self._push("scale", (x,), float(c))

    def mean(self, x):
        """Mean over all elements; the only reduction on the tape."""
        return self._push("mean", (x,))

    def abs(self, x):
        return self._push("abs", (x,))

    def maxc(self, x, c):
        """Elementwise max(x, c) for a scalar constant c."""
        return self._push("maxc", (x,), float(c))

    def log(self, x):
        """log(max(x, LOG_FLOOR)); gradient is zero below the floor."""
        return self._push("log", (x,))

    # composite conveniences (still within the primitive set)

    def sub(self, a, b):
        return self.add(a, self.scale(b, -1.0))

    def one_minus(self, x):
        return self.add(self.constant(1.0), self.scale(x, -1.0))

    # ---- evaluation ---------------------------------------------------

    def value(self, node):
        return self.values[node]

    def forward(self, bindings, validate=True):
        """Bind the named leaves and evaluate every node in order.

        `bindings` maps leaf names to arrays. With validate=True, every
        intermediate is checked for finiteness (slower; trainers check
        only the final loss instead). Returns the values list.
        """
        vals = self.values
        for name, node in self._inputs.items():
            if name not in bindings:
                raise ConfigError(f"input {name!r} is not bound")
            vals[node] = np.asarray(bindings[name], dtype=np.float64)
        for i, kind in enumerate(self._kind):
            args = self._args[i]
            if kind == "input":
                pass
            elif kind == "const":
                vals[i] = self._extra[i]
            elif kind == "affine":
                x, w, b = (vals[a] for a in args)
                vals[i] = x @ w.T + b
            elif kind == "concat":
                vals[i] = np.concatenate((vals[args[0]], vals[args[1]]), axis=-1)
            elif kind == "tanh":
                vals[i] = np.tanh(vals[args[0]])
            elif kind == "sigmoid":
                x = vals[args[0]]
                vals[i] = 1.0 / (1.0 + np.exp(-x))
            elif kind == "add":
                vals[i] = vals[args[0]] + vals[args[1]]
            elif kind == "mul":
                vals[i] = vals[args[0]] * vals[args[1]]
            elif kind == "scale":
                vals[i] = vals[args[0]] * self._extra[i]
            elif kind == "mean":
                vals[i] = np.mean(vals[args[0]])
            elif kind == "abs":
                vals[i] = np.abs(vals[args[0]])
            elif kind == "maxc":
                vals[i] = np.maximum(vals[args[0]], self._extra[i])
            elif kind == "log":
                vals[i] = np.log(np.maximum(vals[args[0]], LOG_FLOOR))
            else:  # pragma: no cover - closed op set
                raise ContractError(f"unknown op kind {kind!r}")
            if validate and not np.all(np.isfinite(vals[i])):
                raise NumericError(f"non-finite value at node {i} ({kind})")
        return vals

    def backward(self, node):
        """Gradient of the scalar at `node` w.r.t. every trainable leaf.

        Adjoints accumulate additively across fan-out. Returns a dict
        mapping leaf name to a gradient array of the leaf's shape.
        """
        out = self.values[node]
        if out is None:
            raise ConfigError("forward must run before backward")
        if np.ndim(out) != 0 and np.size(out) != 1:
            raise ContractError("backward requires a scalar output node")
        adj = self._adjoints
        for i in range(len(adj)):
            adj[i] = None
        adj[node] = np.asarray(1.0)
        vals = self.values

        def accumulate(i, g):
            if adj[i] is None:
                adj[i] = np.array(g, dtype=np.float64, copy=True)
            else:
                adj[i] += g

        for i in range(node, -1, -1):
            g = adj[i]
            if g is None or not self._needs[i]:
                continue
            kind = self._kind[i]
            args = self._args[i]
            if kind in ("input", "const"):
                continue
            if kind == "affine":
                x, w, b = args
                gv = g if g.ndim == 2 else g.reshape(1, -1)
                xv = vals[x] if vals[x].ndim == 2 else vals[x].reshape(1, -1)
                if self._needs[x]:
                    dx = gv @ vals[w]
                    accumulate(x, dx if vals[x].ndim == 2 else dx[0])
                if self._needs[w]:
                    accumulate(w, gv.T @ xv)
                if self._needs[b]:
                    accumulate(b, gv.sum(axis=0))
            elif kind == "concat":
                a, b = args
                na = vals[a].shape[-1]
                if self._needs[a]:
                    accumulate(a, g[..., :na])
                if self._needs[b]:
                    accumulate(b, g[..., na:])
            elif kind == "tanh":
                t = vals[i]
                accumulate(args[0], g * (1.0 - t * t))
            elif kind == "sigmoid":
                s = vals[i]
                accumulate(args[0], g * s * (1.0 - s))
            elif kind == "add":
                for a in args:
                    if self._needs[a]:
                        accumulate(a, _unbroadcast(np.asarray(g, dtype=np.float64),
                                                   np.shape(vals[a])))
            elif kind == "mul":
                a, b = args
                if self._needs[a]:
                    accumulate(a, _unbroadcast(g * vals[b], np.shape(vals[a])))
                if self._needs[b]:
                    accumulate(b, _unbroadcast(g * vals[a], np.shape(vals[b])))
            elif kind == "scale":
                accumulate(args[0], g * self._extra[i])
            elif kind == "mean":
                x = args[0]
                size = np.size(vals[x])
                accumulate(x, np.full(np.shape(vals[x]), float(g) / size))
            elif kind == "abs":
                accumulate(args[0], g * np.sign(vals[args[0]]))
            elif kind == "maxc":
                accumulate(args[0], g * (vals[args[0]] > self._extra[i]))
            elif kind == "log":
                x = vals[args[0]]
                mask = x > LOG_FLOOR
                accumulate(args[0], g * mask / np.maximum(x, LOG_FLOOR))

        grads = {}
        for name, leaf in self._inputs.items():
            if not self._trainable[name]:
                continue
            if adj[leaf] is None:
                grads[name] = np.zeros_like(vals[leaf])
            else:
                grads[name] = adj[leaf]
        return grads


def finite_diff_grad(f, params, h=1e-5):
    """Central-difference gradient of scalar f at `params`, one coordinate at a time."""
    if h <= 0:
        raise ConfigError("finite difference step must be positive")
    x = np.asarray(params, dtype=np.float64)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite loss evaluation at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
