"""Dense feed-forward networks with exact input-gradient (tangent) propagation.

Everything works on row batches: an input of shape ``(N, in)`` produces an
output of shape ``(N, out)``.  A 1-D input is treated as a single row and the
leading axis is dropped again on return.

Besides the ordinary forward/backward passes, the engine propagates the pair
``(a, B)`` layer by layer, where ``B = d a / d input[grad_slice]``.  For a
layer ``a' = f(W a + b)`` this is

    B' = f'(z)[:, None] * (W @ B)

so the Jacobian network uses exactly the same weights.  Reverse mode through
this augmented computation needs ``f''``, which is why SELU carries a second
derivative below.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputShapeError, SchemaError, SchemaVersionError, TrainingDivergenceError

SELU_LAMBDA = 1.0507009873554804934193349852946
SELU_ALPHA = 1.6732632423543772848170429916717

MODEL_FORMAT_VERSION = 1
ACTIVATIONS = ("selu", "linear")


def selu(z):
    return np.where(z > 0, SELU_LAMBDA * z, SELU_LAMBDA * SELU_ALPHA * np.expm1(np.minimum(z, 0.0)))


def selu_prime(z):
    return np.where(z > 0, SELU_LAMBDA, SELU_LAMBDA * SELU_ALPHA * np.exp(np.minimum(z, 0.0)))


def selu_second(z):
    # at z == 0 this is the left limit lambda * alpha
    return np.where(z > 0, 0.0, SELU_LAMBDA * SELU_ALPHA * np.exp(np.minimum(z, 0.0)))


def _act(kind, z):
    return selu(z) if kind == "selu" else z


def _act_prime(kind, z):
    return selu_prime(z) if kind == "selu" else np.ones_like(z)


def _act_second(kind, z):
    return selu_second(z) if kind == "selu" else np.zeros_like(z)


@dataclass
class DenseNet:
    layer_dims: list
    weights: list
    biases: list
    bias_enabled: list
    activations: list

    def __post_init__(self):
        self.layer_dims = [int(n) for n in self.layer_dims]
        n_layers = len(self.layer_dims) - 1
        if n_layers < 1 or any(n <= 0 for n in self.layer_dims):
            raise InputShapeError(f"bad layer_dims {self.layer_dims}")
        if not (len(self.weights) == len(self.biases) == len(self.bias_enabled)
                == len(self.activations) == n_layers):
            raise InputShapeError("per-layer lists must all have one entry per layer")
        self.weights = [np.array(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.array(b, dtype=np.float64) for b in self.biases]
        self.bias_enabled = [bool(f) for f in self.bias_enabled]
        self.activations = [str(a).lower() for a in self.activations]
        for k in range(n_layers):
            shape = (self.layer_dims[k + 1], self.layer_dims[k])
            if self.weights[k].shape != shape:
                raise InputShapeError(f"weights[{k}] has shape {self.weights[k].shape}, expected {shape}")
            if self.biases[k].shape != (shape[0],):
                raise InputShapeError(f"biases[{k}] has shape {self.biases[k].shape}")
            if self.activations[k] not in ACTIVATIONS:
                raise InputShapeError(f"unknown activation {self.activations[k]!r}")
            if not self.bias_enabled[k]:
                self.biases[k][:] = 0.0

    @classmethod
    def initialize(cls, layer_dims, rng, activations=None, output_bias=True):
        """LeCun-normal weights, zero biases; SELU hidden layers, linear output."""
        n_layers = len(layer_dims) - 1
        if activations is None:
            activations = ["selu"] * (n_layers - 1) + ["linear"]
        weights, biases = [], []
        for k in range(n_layers):
            fan_in, fan_out = layer_dims[k], layer_dims[k + 1]
            weights.append(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        bias_enabled = [True] * (n_layers - 1) + [bool(output_bias)]
        return cls(list(layer_dims), weights, biases, bias_enabled, list(activations))

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def input_dim(self):
        return self.layer_dims[0]

    @property
    def output_dim(self):
        return self.layer_dims[-1]

    def n_params(self):
        total = 0
        for w, b, on in zip(self.weights, self.biases, self.bias_enabled):
            total += w.size + (b.size if on else 0)
        return total

    def copy(self):
        return DenseNet(self.layer_dims, [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases], list(self.bias_enabled),
                        list(self.activations))

    def parameters(self):
        """Trainable arrays in a fixed order (weights then enabled bias, per layer)."""
        out = []
        for w, b, on in zip(self.weights, self.biases, self.bias_enabled):
            out.append(w)
            if on:
                out.append(b)
        return out

    def all_finite(self):
        return all(np.all(np.isfinite(p)) for p in self.weights + self.biases)


@dataclass
class Gradients:
    """Per-layer weight and bias gradients, shaped like the network parameters.

    With ``per_example=True`` passes, every array gains a leading batch axis.
    """

    weights: list
    biases: list

    def arrays(self, net):
        out = []
        for gw, gb, on in zip(self.weights, self.biases, net.bias_enabled):
            out.append(gw)
            if on:
                out.append(gb)
        return out

    def __add__(self, other):
        return Gradients([a + b for a, b in zip(self.weights, other.weights)],
                         [a + b for a, b in zip(self.biases, other.biases)])

    def scaled(self, c):
        return Gradients([c * a for a in self.weights], [c * a for a in self.biases])


def _as_batch(net, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise InputShapeError(f"input has shape {x.shape}, network expects {net.input_dim} features")
    return x, single


def _check_slice(net, grad_slice):
    if isinstance(grad_slice, tuple):
        grad_slice = slice(*grad_slice)
    if grad_slice.step not in (None, 1):
        raise InputShapeError("grad_slice must be contiguous")
    lo = 0 if grad_slice.start is None else grad_slice.start
    hi = net.input_dim if grad_slice.stop is None else grad_slice.stop
    if not (0 <= lo < hi <= net.input_dim):
        raise InputShapeError(f"grad_slice {lo}:{hi} outside input of width {net.input_dim}")
    return lo, hi


def _forward_trace(net, x):
    acts = [x]
    pres = []
    a = x
    for w, b, kind in zip(net.weights, net.biases, net.activations):
        z = a @ w.T + b
        a = _act(kind, z)
        pres.append(z)
        acts.append(a)
    return pres, acts


def forward(net, x):
    x, single = _as_batch(net, x)
    a = x
    for w, b, kind in zip(net.weights, net.biases, net.activations):
        a = _act(kind, a @ w.T + b)
    return a[0] if single else a


def _tangent_trace(net, x, lo, hi):
    # B0 is the selector matrix (in x k); shared by every row so no batch axis
    k = hi - lo
    b0 = np.zeros((net.input_dim, k))
    b0[lo:hi, :] = np.eye(k)
    pres, acts, bzs, bs = [], [x], [], [b0]
    a, bmat = x, b0
    for w, b, kind in zip(net.weights, net.biases, net.activations):
        z = a @ w.T + b
        if bmat.ndim == 2:
            bz = np.broadcast_to(w @ bmat, (x.shape[0],) + (w.shape[0], k))
        else:
            bz = np.einsum("oi,nik->nok", w, bmat)
        a = _act(kind, z)
        bmat = _act_prime(kind, z)[:, :, None] * bz
        pres.append(z)
        acts.append(a)
        bzs.append(bz)
        bs.append(bmat)
    return pres, acts, bzs, bs


def forward_with_input_gradient(net, x, grad_slice):
    """Return ``(value, jacobian)`` with ``jacobian[n, o, k] = d out_o / d x[lo + k]``."""
    lo, hi = _check_slice(net, grad_slice)
    x, single = _as_batch(net, x)
    _, acts, _, bs = _tangent_trace(net, x, lo, hi)
    value, jac = acts[-1], bs[-1]
    if jac.ndim == 2:
        jac = np.broadcast_to(jac, (x.shape[0],) + jac.shape)
    jac = np.array(jac)
    return (value[0], jac[0]) if single else (value, jac)


def _reduce(arr, per_example):
    return arr if per_example else arr.sum(axis=0)


def backward(net, x, upstream, per_example=False):
    """Gradients of ``sum_n upstream[n] . forward(x[n])`` with respect to every parameter."""
    x, single = _as_batch(net, x)
    g = np.asarray(upstream, dtype=np.float64)
    if single:
        g = g[None, :]
    if g.shape != (x.shape[0], net.output_dim):
        raise InputShapeError(f"upstream gradient has shape {g.shape}")
    pres, acts = _forward_trace(net, x)
    gw = [None] * net.n_layers
    gb = [None] * net.n_layers
    ga = g
    for k in reversed(range(net.n_layers)):
        gz = ga * _act_prime(net.activations[k], pres[k])
        if per_example:
            gw[k] = gz[:, :, None] * acts[k][:, None, :]
        else:
            gw[k] = gz.T @ acts[k]
        gb[k] = _reduce(gz, per_example) if net.bias_enabled[k] else \
            np.zeros((x.shape[0],) * per_example + net.biases[k].shape)
        if k:
            ga = gz @ net.weights[k]
    return Gradients(gw, gb)


def backward_through_input_gradient(net, x, grad_slice, upstream_on_jacobian,
                                    upstream_on_value=None, per_example=False):
    """Weight gradients of a loss that depends on the input-Jacobian (and optionally the value).

    ``upstream_on_jacobian`` has the shape of the Jacobian returned by
    :func:`forward_with_input_gradient`.
    """
    lo, hi = _check_slice(net, grad_slice)
    x, single = _as_batch(net, x)
    gbm = np.asarray(upstream_on_jacobian, dtype=np.float64)
    if single:
        gbm = gbm[None]
    k_dim = hi - lo
    if gbm.shape != (x.shape[0], net.output_dim, k_dim):
        raise InputShapeError(f"upstream Jacobian gradient has shape {gbm.shape}")
    if upstream_on_value is None:
        ga = np.zeros((x.shape[0], net.output_dim))
    else:
        ga = np.asarray(upstream_on_value, dtype=np.float64).reshape(x.shape[0], net.output_dim)
    pres, acts, bzs, bs = _tangent_trace(net, x, lo, hi)
    gw = [None] * net.n_layers
    gb = [None] * net.n_layers
    for k in reversed(range(net.n_layers)):
        kind = net.activations[k]
        fp = _act_prime(kind, pres[k])
        gz = ga * fp
        if kind != "linear":
            gz = gz + np.einsum("nok,nok->no", gbm, bzs[k]) * _act_second(kind, pres[k])
        gbz = gbm * fp[:, :, None]
        b_in = bs[k]
        if per_example:
            gwk = gz[:, :, None] * acts[k][:, None, :]
            if b_in.ndim == 2:
                gwk = gwk + gbz @ b_in.T
            else:
                gwk = gwk + np.einsum("nok,nik->noi", gbz, b_in)
        else:
            gwk = gz.T @ acts[k]
            if b_in.ndim == 2:
                gwk = gwk + gbz.sum(axis=0) @ b_in.T
            else:
                gwk = gwk + np.einsum("nok,nik->oi", gbz, b_in)
        gw[k] = gwk
        gb[k] = _reduce(gz, per_example) if net.bias_enabled[k] else \
            np.zeros((x.shape[0],) * per_example + net.biases[k].shape)
        if k:
            w = net.weights[k]
            ga = gz @ w
            gbm = np.einsum("oi,nok->nik", w, gbz)
    return Gradients(gw, gb)


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_net(cls, net, **hyper):
        state = cls(**hyper)
        state.m = [np.zeros_like(p) for p in net.parameters()]
        state.v = [np.zeros_like(p) for p in net.parameters()]
        return state


def adam_step(net, grads, state):
    """One bias-corrected Adam update, applied in place.  Returns ``(net, state)``."""
    garrs = grads.arrays(net)
    params = net.parameters()
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(garrs) != len(params) or any(g.shape != p.shape for g, p in zip(garrs, params)):
        raise InputShapeError("gradient shapes do not match network parameters")
    for g in garrs:
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError("non-finite gradient passed to adam_step")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, garrs, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return net, state


def net_to_dict(net, architecture_tag="dense", extra=None):
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "architecture_tag": architecture_tag,
        "layer_dims": list(net.layer_dims),
        "activations": list(net.activations),
        "bias_enabled": list(net.bias_enabled),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }
    if extra:
        payload["extra"] = extra
    return payload


def net_from_dict(payload):
    version = payload.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise SchemaVersionError(f"model format_version {version!r}, expected {MODEL_FORMAT_VERSION}")
    try:
        return DenseNet(payload["layer_dims"], payload["weights"], payload["biases"],
                        payload["bias_enabled"], payload["activations"])
    except KeyError as exc:
        raise SchemaError(f"model file missing key {exc}") from None


def save_net(net, path, architecture_tag="dense", extra=None):
    # json writes floats with repr(), which round-trips float64 exactly
    with open(path, "w") as fh:
        json.dump(net_to_dict(net, architecture_tag, extra), fh)
        fh.write("\n")


def load_net(path):
    with open(path) as fh:
        payload = json.load(fh)
    return net_from_dict(payload), payload.get("architecture_tag"), payload.get("extra", {})
