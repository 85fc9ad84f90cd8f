"""Fully-connected networks on the autodiff tape, plus Adam and checkpoints.

Every network here is a plain MLP: ReLU hidden layers and a tanh,
sigmoid or identity output layer. Weights live as float64 numpy arrays;
checkpoints store them as little-endian float32 blobs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import blobfile
from .autodiff import Tape
from .errors import ConfigError, ContractError, NumericError

OUTPUT_ACTIVATIONS = ("tanh", "sigmoid", "none")


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths (input first, output last) and the output activation."""

    layer_dims: tuple
    output_activation: str = "none"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2:
            raise ConfigError("an MLP needs at least input and output dims")
        if any(d < 1 for d in dims):
            raise ConfigError(f"all layer widths must be >= 1, got {dims}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ConfigError(f"unknown output activation {self.output_activation!r}")

    @property
    def in_dim(self):
        return self.layer_dims[0]

    @property
    def out_dim(self):
        return self.layer_dims[-1]

    @property
    def n_layers(self):
        return len(self.layer_dims) - 1


@dataclass
class MlpWeights:
    """Per-layer weight matrices (out, in) and bias vectors (out,)."""

    weights: list
    biases: list

    def copy(self):
        return MlpWeights([w.copy() for w in self.weights],
                          [b.copy() for b in self.biases])

    def arrays(self):
        """All parameter arrays, weights then bias per layer."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def init_weights(spec, seed):
    """Glorot-uniform weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(spec.layer_dims[:-1], spec.layer_dims[1:]):
        limit = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-limit, limit, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return MlpWeights(weights, biases)


def param_names(name, spec):
    """Leaf names used on tapes for this network's parameters."""
    out = []
    for i in range(spec.n_layers):
        out.extend((f"{name}.W{i}", f"{name}.b{i}"))
    return out


def declare_mlp(tape, spec, name, trainable=True):
    """Declare the network's weight leaves on a tape (once per tape).

    Leaves are named `{name}.W{i}` / `{name}.b{i}`; bind them with
    `mlp_bindings`. Returns the per-layer (weight, bias) node pairs.
    """
    return [(tape.input(f"{name}.W{i}", trainable=trainable),
             tape.input(f"{name}.b{i}", trainable=trainable))
            for i in range(spec.n_layers)]


def apply_mlp(tape, spec, layer_nodes, x_node):
    """Wire one application of a declared network; returns the output node."""
    h = x_node
    for i, (w, b) in enumerate(layer_nodes):
        h = tape.affine(h, w, b)
        if i < spec.n_layers - 1:
            h = tape.relu(h)
        elif spec.output_activation == "tanh":
            h = tape.tanh(h)
        elif spec.output_activation == "sigmoid":
            h = tape.sigmoid(h)
    return h


def mlp_tape_forward(tape, spec, x_node, name, trainable=True):
    """Declare and apply a network in one go (single-use convenience)."""
    return apply_mlp(tape, spec, declare_mlp(tape, spec, name, trainable), x_node)


def mlp_bindings(name, weights):
    """Leaf bindings for a network wired with `mlp_tape_forward`."""
    out = {}
    for i, (w, b) in enumerate(zip(weights.weights, weights.biases)):
        out[f"{name}.W{i}"] = w
        out[f"{name}.b{i}"] = b
    return out


def mlp_apply(spec, weights, x):
    """Evaluate the network on a vector (in_dim,) or batch (B, in_dim)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x.reshape(1, -1) if single else x
    if xb.shape[-1] != spec.in_dim:
        raise ContractError(f"input length {xb.shape[-1]} != spec input {spec.in_dim}")
    tape = Tape()
    x_node = tape.input("x")
    out = mlp_tape_forward(tape, spec, x_node, "net", trainable=False)
    tape.forward({"x": xb, **mlp_bindings("net", weights)})
    y = tape.value(out)
    return y[0] if single else y


@dataclass
class AdamState:
    """First/second moment accumulators plus the step counter."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def init_adam(params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Fresh Adam state shaped like the given parameter arrays."""
    return AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, t=0,
                     m=[np.zeros_like(p) for p in params],
                     v=[np.zeros_like(p) for p in params])


def adam_step(state, params, grads):
    """One bias-corrected Adam update, applied to `params` in place."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ContractError("parameter/gradient count does not match Adam state")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape:
            raise ContractError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient in Adam step")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def flatten_arrays(arrays):
    """Concatenate arrays into one flat vector; returns (vector, shapes)."""
    return (np.concatenate([np.asarray(a, dtype=np.float64).reshape(-1) for a in arrays]),
            [np.shape(a) for a in arrays])


def unflatten_arrays(vec, shapes):
    """Inverse of `flatten_arrays`."""
    out, at = [], 0
    for shape in shapes:
        n = int(np.prod(shape)) if shape else 1
        out.append(np.asarray(vec[at:at + n], dtype=np.float64).reshape(shape))
        at += n
    return out


def save_checkpoint(path, meta, parts):
    """Write a checkpoint: `parts` maps network name -> (MlpSpec, MlpWeights).

    Matrices are stored as float32 blobs; the manifest carries the specs,
    so a round trip is value-exact at 32-bit precision.
    """
    nets = {}
    blobs = []
    for name, (spec, weights) in sorted(parts.items()):
        nets[name] = {"dims": list(spec.layer_dims),
                      "output_activation": spec.output_activation}
        for i, (w, b) in enumerate(zip(weights.weights, weights.biases)):
            blobs.append((f"{name}.W{i}", w))
            blobs.append((f"{name}.b{i}", b))
    blobfile.write_blobfile(path, {"networks": nets, **meta}, blobs)


def load_checkpoint(path):
    """Read a checkpoint; returns (meta, dict of name -> (MlpSpec, MlpWeights))."""
    meta, arrays = blobfile.read_blobfile(path)
    parts = {}
    for name, desc in meta["networks"].items():
        spec = MlpSpec(tuple(desc["dims"]), desc["output_activation"])
        weights, biases = [], []
        for i in range(spec.n_layers):
            weights.append(arrays[f"{name}.W{i}"].astype(np.float64))
            biases.append(arrays[f"{name}.b{i}"].astype(np.float64))
        parts[name] = (spec, MlpWeights(weights, biases))
    return meta, parts
