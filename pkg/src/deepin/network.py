"""RePU-activated feed-forward networks with exact gradients.

Parameters live in a single flat vector ``theta``; each layer's weight matrix
and bias are numpy views into it.  The canonical order is layer by layer,
``W`` (row-major, shape ``(d_out, d_in)``) followed by ``a``.  Updating
``theta`` in place therefore updates every layer, and flattening is free.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from deepin.errors import ContractViolation

__all__ = ["RepuNetwork", "Structure", "Tape", "repu", "repu_deriv", "PRE_CLAMP"]

#: Pre-activations are clipped to this magnitude before the power is taken.
PRE_CLAMP = 30.0


def repu(x, p=2):
    """Rectified power unit ``max(x, 0) ** p``."""
    return np.maximum(x, 0.0) ** p


def repu_deriv(x, p=2):
    """Derivative ``p * max(x, 0) ** (p - 1)`` of :func:`repu`."""
    return p * np.maximum(x, 0.0) ** (p - 1)


class Structure(NamedTuple):
    depth: int
    width: int
    size: int
    neurons: int
    nnz: int


@dataclass
class Tape:
    """Values cached by :meth:`RepuNetwork.forward` for the backward pass."""

    activations: list
    pre: list
    single: bool
    owner: int
    version: int


@dataclass(eq=False)
class RepuNetwork:
    """Fully connected network ``z -> W_D s(... s(W_0 z + a_0) ...) + a_D``.

    Args:
        dims: layer widths ``(d_0, d_1, ..., d_{D+1})``; ``d_0`` is the input
            dimension and ``d_{D+1}`` the output dimension.
        power: RePU power ``p`` (at least 2 so the network is C^1).
        theta: optional flat parameter vector; zeros when omitted.
    """

    dims: tuple
    power: int = 2
    theta: np.ndarray = None
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) < 2 or min(self.dims) < 1:
            raise ContractViolation(f"invalid layer dims {self.dims}")
        if int(self.power) != self.power or self.power < 2:
            raise ContractViolation(f"RePU power must be an integer >= 2, got {self.power}")
        self.power = int(self.power)
        size = self.param_count(self.dims)
        if self.theta is None:
            self.theta = np.zeros(size)
        else:
            theta = np.array(self.theta, dtype=float).reshape(-1)
            if theta.size != size:
                raise ContractViolation(f"theta has length {theta.size}, expected {size}")
            self.theta = theta
        self._bind()

    def _bind(self):
        self.layers = []
        self.slices = []
        pos = 0
        for d_in, d_out in zip(self.dims[:-1], self.dims[1:]):
            w_end = pos + d_in * d_out
            a_end = w_end + d_out
            W = self.theta[pos:w_end].reshape(d_out, d_in)
            a = self.theta[w_end:a_end]
            self.layers.append((W, a))
            self.slices.append((slice(pos, w_end), slice(w_end, a_end)))
            pos = a_end

    @staticmethod
    def param_count(dims):
        return sum(d_out * (d_in + 1) for d_in, d_out in zip(dims[:-1], dims[1:]))

    @classmethod
    def initialize(cls, dims, rng, power=2, identity_square=True):
        """Half-scale Glorot uniform weights and zero biases.

        Square hidden-to-hidden layers (the ones the depth penalty acts on)
        start at the identity when ``identity_square`` is set.
        """
        net = cls(dims, power)
        n_layers = len(net.layers)
        for l, (W, a) in enumerate(net.layers):
            d_out, d_in = W.shape
            if identity_square and 0 < l < n_layers - 1 and d_in == d_out:
                W[:] = np.eye(d_in)
            else:
                bound = 0.5 * np.sqrt(6.0 / (d_in + d_out))
                W[:] = rng.uniform(-bound, bound, size=W.shape)
            a[:] = 0.0
        return net

    @property
    def input_dim(self):
        return self.dims[0]

    @property
    def output_dim(self):
        return self.dims[-1]

    @property
    def depth(self):
        return len(self.dims) - 2

    def copy(self):
        return RepuNetwork(self.dims, self.power, self.theta.copy())

    def flatten(self):
        return self.theta.copy()

    @classmethod
    def unflatten(cls, dims, theta, power=2):
        return cls(dims, power, np.array(theta, dtype=float))

    def set_theta(self, theta):
        self.theta[:] = theta
        self.touch()

    def touch(self):
        """Mark parameters as changed; invalidates outstanding tapes."""
        self.version += 1

    def hidden_square_layers(self):
        """Indices of hidden-to-hidden layers whose weight matrix is square."""
        n_layers = len(self.layers)
        return [
            l for l, (W, _) in enumerate(self.layers)
            if 0 < l < n_layers - 1 and W.shape[0] == W.shape[1]
        ]

    def structure(self):
        hidden = self.dims[1:-1]
        return Structure(
            depth=len(hidden),
            width=max(hidden) if hidden else 0,
            size=self.theta.size,
            neurons=sum(hidden),
            nnz=int(np.count_nonzero(self.theta)),
        )

    def forward(self, z):
        """Evaluate the network on a vector or on the rows of a matrix.

        Returns ``(output, tape)``.  For a 1-D input the output is a vector of
        length ``output_dim``; for an ``(n, d)`` input it is ``(n, output_dim)``.
        """
        z = np.asarray(z, dtype=float)
        single = z.ndim == 1
        h = z[None, :] if single else z
        if h.ndim != 2 or h.shape[1] != self.input_dim:
            raise ContractViolation(
                f"input has shape {z.shape}, network expects dimension {self.input_dim}"
            )
        p = self.power
        acts = [h]
        pres = []
        last = len(self.layers) - 1
        for l, (W, a) in enumerate(self.layers):
            pre = h @ W.T + a
            if l == last:
                h = pre
            else:
                pre = np.clip(pre, -PRE_CLAMP, PRE_CLAMP)
                pres.append(pre)
                h = np.maximum(pre, 0.0) ** p
                acts.append(h)
        out = h[0] if single else h
        return out, Tape(acts, pres, single, id(self), self.version)

    def __call__(self, z):
        return self.forward(z)[0]

    def backward(self, tape, upstream):
        """Pull ``upstream`` (d loss / d output) back through the network.

        Returns ``(grad_theta, grad_input)``.  For batched tapes the parameter
        gradient is summed over rows while ``grad_input`` stays per row.
        """
        if tape.owner != id(self) or tape.version != self.version:
            raise ContractViolation("tape is stale: parameters changed since forward")
        acts, pres = tape.activations, tape.pre
        n = acts[0].shape[0]
        delta = np.asarray(upstream, dtype=float)
        delta = np.broadcast_to(delta.reshape(n, -1) if delta.ndim else delta, (n, self.output_dim))
        grad = np.zeros_like(self.theta)
        p = self.power
        for l in range(len(self.layers) - 1, -1, -1):
            W, _ = self.layers[l]
            w_sl, a_sl = self.slices[l]
            grad[w_sl] = (delta.T @ acts[l]).reshape(-1)
            grad[a_sl] = delta.sum(axis=0)
            delta = delta @ W
            if l > 0:
                pre = pres[l - 1]
                inside = np.abs(pre) < PRE_CLAMP
                delta = delta * (p * np.maximum(pre, 0.0) ** (p - 1)) * inside
        grad_input = delta[0] if tape.single else delta
        return grad, grad_input
