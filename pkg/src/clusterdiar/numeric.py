"""Dense MLP math: forward/backward passes, input-gradient calculus and Adam.

Tensors are plain numpy arrays. Batches are row-major ``(m, features)``;
weights are stored ``(out, in)`` so a layer computes ``a @ W.T + b``.
Training runs in float32; float64 models exist for gradient checking.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "linear")


class DimensionError(ValueError):
    """Array shapes are not chain-compatible."""


class StateError(RuntimeError):
    """An operation was called without the state it depends on."""


class DivergenceError(FloatingPointError):
    """A non-finite value appeared during optimisation."""


def is_finite(*arrays: np.ndarray) -> bool:
    return all(bool(np.all(np.isfinite(a))) for a in arrays)


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(
                f"weight {self.weight.shape} and bias {self.bias.shape} disagree"
            )


@dataclass
class MlpModel:
    """Affine + ReLU stack.

    ``softmax_from`` marks a split output head: outputs ``[:softmax_from]``
    are used as-is and ``[softmax_from:]`` are logits of a softmax block.
    The forward pass always returns the raw linear outputs; consumers apply
    the softmax (see :func:`split_head`).
    """

    layers: list[Layer]
    softmax_from: int | None = None

    def __post_init__(self):
        if not self.layers:
            raise DimensionError("an MLP needs at least one layer")
        for prev, nxt in zip(self.layers[:-1], self.layers[1:]):
            if prev.weight.shape[0] != nxt.weight.shape[1]:
                raise DimensionError(
                    f"layer output {prev.weight.shape[0]} does not feed input "
                    f"{nxt.weight.shape[1]}"
                )
        if self.layers[-1].activation != "linear":
            raise ValueError("final layer must be linear")
        if self.softmax_from is not None and not 0 <= self.softmax_from < self.out_dim:
            raise DimensionError(f"softmax split {self.softmax_from} outside output")

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def dtype(self):
        return self.layers[0].weight.dtype

    @property
    def sizes(self) -> list[int]:
        return [self.in_dim] + [layer.weight.shape[0] for layer in self.layers]

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in canonical order ``[W0, b0, W1, b1, ...]``."""
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def param_names(self) -> list[str]:
        names = []
        for i in range(len(self.layers)):
            names.extend((f"{i}.weight", f"{i}.bias"))
        return names

    def copy(self) -> "MlpModel":
        return MlpModel(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers],
            self.softmax_from,
        )

    def astype(self, dtype) -> "MlpModel":
        return MlpModel(
            [
                Layer(l.weight.astype(dtype), l.bias.astype(dtype), l.activation)
                for l in self.layers
            ],
            self.softmax_from,
        )


def init_mlp(
    sizes: list[int],
    rng: np.random.Generator,
    dtype=np.float32,
    softmax_from: int | None = None,
) -> MlpModel:
    """ReLU hidden layers and a linear output, He-uniform weights, zero biases."""
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise DimensionError(f"bad layer sizes {sizes}")
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = np.sqrt(6.0 / n_in)
        w = rng.uniform(-bound, bound, size=(n_out, n_in)).astype(dtype)
        act = "linear" if i == len(sizes) - 2 else "relu"
        layers.append(Layer(w, np.zeros(n_out, dtype=dtype), act))
    return MlpModel(layers, softmax_from)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each layer
    pre: list[np.ndarray]  # pre-activation of each layer


def forward(model: MlpModel, batch: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    batch = np.asarray(batch, dtype=model.dtype)
    if batch.ndim != 2 or batch.shape[1] != model.in_dim:
        raise DimensionError(
            f"batch shape {batch.shape} does not match input width {model.in_dim}"
        )
    inputs, pre = [], []
    a = batch
    for layer in model.layers:
        inputs.append(a)
        h = a @ layer.weight.T + layer.bias
        pre.append(h)
        a = np.maximum(h, 0) if layer.activation == "relu" else h
    return a, ForwardCache(inputs, pre)


def _relu_mask(h: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is 0
    return (h > 0).astype(h.dtype)


def backward(
    model: MlpModel, cache: ForwardCache | None, grad_out: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray]:
    """Reverse pass. Returns (gradients in ``params()`` order, input gradient)."""
    if cache is None or len(cache.inputs) != len(model.layers):
        raise StateError("backward needs the cache from a forward pass of this model")
    grad = np.asarray(grad_out, dtype=model.dtype)
    if grad.shape != cache.pre[-1].shape:
        raise DimensionError(
            f"output gradient {grad.shape} does not match output {cache.pre[-1].shape}"
        )
    grads: list[np.ndarray] = [None] * (2 * len(model.layers))
    for i in reversed(range(len(model.layers))):
        layer = model.layers[i]
        if layer.activation == "relu":
            grad = grad * _relu_mask(cache.pre[i])
        grads[2 * i] = grad.T @ cache.inputs[i]
        grads[2 * i + 1] = grad.sum(axis=0)
        grad = grad @ layer.weight
    return grads, grad


# Input-gradient calculus, needed by the gradient penalty.
#
# For a scalar-output net, the per-row input gradient is a product of weights
# and constant ReLU masks, so it is piecewise multilinear in the weights. The
# helpers below compute it and pull a cotangent on it back to the weights.


@dataclass
class InputGradTape:
    deltas: list[np.ndarray]  # gradient wrt pre-activation of each layer


def input_gradient(
    model: MlpModel, cache: ForwardCache, seed: np.ndarray | None = None
) -> tuple[np.ndarray, InputGradTape]:
    """Per-row gradient of ``seed . output`` wrt the input rows."""
    if cache is None or len(cache.inputs) != len(model.layers):
        raise StateError("input_gradient needs a forward cache")
    if seed is None:
        seed = np.ones_like(cache.pre[-1])
    deltas: list[np.ndarray] = [None] * len(model.layers)
    u = np.asarray(seed, dtype=model.dtype)
    for i in reversed(range(len(model.layers))):
        if model.layers[i].activation == "relu":
            u = u * _relu_mask(cache.pre[i])
        deltas[i] = u
        u = u @ model.layers[i].weight
    return u, InputGradTape(deltas)


def input_gradient_vjp(
    model: MlpModel, cache: ForwardCache, tape: InputGradTape, grad_bar: np.ndarray
) -> list[np.ndarray]:
    """Gradient wrt parameters of ``sum(grad_bar * input_gradient)``.

    Biases only enter through the ReLU masks, so their gradient is zero.
    """
    grads: list[np.ndarray] = [None] * (2 * len(model.layers))
    v_bar = np.asarray(grad_bar, dtype=model.dtype)
    for i in range(len(model.layers)):
        layer = model.layers[i]
        grads[2 * i] = tape.deltas[i].T @ v_bar
        grads[2 * i + 1] = np.zeros_like(layer.bias)
        if i + 1 < len(model.layers):
            v_bar = v_bar @ layer.weight.T
            if layer.activation == "relu":
                v_bar = v_bar * _relu_mask(cache.pre[i])
    return grads


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def split_head(model: MlpModel, out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split raw outputs into (continuous part, softmax probabilities)."""
    if model.softmax_from is None:
        raise StateError("model has no softmax head")
    k = model.softmax_from
    return out[:, :k], softmax(out[:, k:])


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    alpha: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: list[np.ndarray], **hyper) -> "AdamState":
        return cls(
            [np.zeros_like(p) for p in params],
            [np.zeros_like(p) for p in params],
            **hyper,
        )


def adam_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: AdamState
) -> tuple[list[np.ndarray], AdamState]:
    """Bias-corrected Adam update, applied in place."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise DimensionError("params, grads and moments differ in length")
    for p, g, m in zip(params, grads, state.first_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionError(f"shape mismatch {p.shape} / {g.shape} / {m.shape}")
    if not is_finite(*grads):
        raise DivergenceError("non-finite gradient passed to Adam")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / p.dtype.type(bc1)
        v_hat = v / p.dtype.type(bc2)
        p -= p.dtype.type(state.alpha) * m_hat / (np.sqrt(v_hat) + p.dtype.type(state.epsilon))
    return params, state


# Checkpoints: a zip of .npy members (readable with np.load) whose entries
# carry a fixed timestamp so identical content gives identical bytes.

_EPOCH = (1980, 1, 1, 0, 0, 0)


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


@dataclass
class Checkpoint:
    models: dict[str, MlpModel]
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, models: dict[str, MlpModel], meta: dict | None = None) -> None:
    topology = {
        name: {
            "sizes": m.sizes,
            "activations": [l.activation for l in m.layers],
            "softmax_from": m.softmax_from,
            "dtype": str(m.dtype),
        }
        for name, m in models.items()
    }
    header = {"topology": topology, "meta": meta or {}}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("header.json", date_time=_EPOCH)
        zf.writestr(info, json.dumps(header, sort_keys=True, indent=1))
        for name, m in models.items():
            for pname, arr in zip(m.param_names(), m.params()):
                info = zipfile.ZipInfo(f"{name}.{pname}.npy", date_time=_EPOCH)
                zf.writestr(info, _npy_bytes(arr))


def load_checkpoint(path) -> Checkpoint:
    with zipfile.ZipFile(path) as zf:
        header = json.loads(zf.read("header.json"))
        models = {}
        for name, topo in header["topology"].items():
            layers = []
            for i, act in enumerate(topo["activations"]):
                w = np.lib.format.read_array(io.BytesIO(zf.read(f"{name}.{i}.weight.npy")))
                b = np.lib.format.read_array(io.BytesIO(zf.read(f"{name}.{i}.bias.npy")))
                layers.append(Layer(w, b, act))
            models[name] = MlpModel(layers, topo["softmax_from"])
    return Checkpoint(models, header["meta"])
