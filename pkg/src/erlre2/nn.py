"""
Dense feed-forward networks with exact reverse-mode gradients and Adam.

All arrays are float64. Inputs are batches of row vectors, shape (batch, in).
Every learnable object in the package exposes its parameters as an ordered list
of arrays (`arrays()` / `with_arrays()`), which is all Adam, soft updates and the
checkpoint writer need to know about it.
"""
import dataclasses
import enum
from typing import List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from erlre2.errors import NonFiniteError, ShapeMismatch, StaleCache
from erlre2.records import recordable
from erlre2.types import all_finite, as_batch

LEAKY_SLOPE = 0.01

P = TypeVar("P", bound="Parametric")


@recordable
class Activation(enum.Enum):
    TANH = "tanh"
    LEAKY_RELU = "leaky_relu"
    IDENTITY = "identity"

    def apply(self, pre: np.ndarray) -> np.ndarray:
        if self is Activation.TANH:
            return np.tanh(pre)
        if self is Activation.LEAKY_RELU:
            return np.where(pre > 0.0, pre, LEAKY_SLOPE * pre)
        return pre

    def derivative(self, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
        if self is Activation.TANH:
            return 1.0 - post * post
        if self is Activation.LEAKY_RELU:
            return np.where(pre > 0.0, 1.0, LEAKY_SLOPE)
        return np.ones_like(pre)


class Parametric:
    """
    Anything whose learnable state is an ordered list of float64 arrays.
    """

    def arrays(self) -> List[np.ndarray]:
        raise NotImplementedError

    def with_arrays(self: P, arrays: Sequence[np.ndarray]) -> P:
        raise NotImplementedError

    def zeros_like(self: P) -> P:
        return self.with_arrays([np.zeros_like(a) for a in self.arrays()])

    def copy(self: P) -> P:
        return self.with_arrays([a.copy() for a in self.arrays()])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def from_flat(self: P, vector: np.ndarray) -> P:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.size,):
            raise ShapeMismatch("flat parameter vector", (self.size,), vector.shape)
        out, offset = [], 0
        for a in self.arrays():
            out.append(vector[offset : offset + a.size].reshape(a.shape).copy())
            offset += a.size
        return self.with_arrays(out)

    @property
    def size(self) -> int:
        return int(sum(a.size for a in self.arrays()))

    def shapes(self) -> List[Tuple[int, ...]]:
        return [a.shape for a in self.arrays()]

    def checksum(self) -> bytes:
        return b"".join(a.tobytes() for a in self.arrays())


@dataclasses.dataclass(eq=False)
class Layer:
    weight: np.ndarray
    """(out, in)"""

    bias: np.ndarray
    """(out,)"""

    activation: Activation = Activation.IDENTITY

    @property
    def in_width(self) -> int:
        return self.weight.shape[1]

    @property
    def out_width(self) -> int:
        return self.weight.shape[0]


@dataclasses.dataclass(eq=False)
class MlpParams(Parametric):
    layers: List[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ShapeMismatch("mlp layers", (1,), (0,))
        for k, layer in enumerate(self.layers):
            if layer.bias.shape != (layer.out_width,):
                raise ShapeMismatch(f"layer {k} bias", (layer.out_width,), layer.bias.shape)
            if k > 0 and layer.in_width != self.layers[k - 1].out_width:
                raise ShapeMismatch(
                    f"layer {k} weight",
                    (layer.out_width, self.layers[k - 1].out_width),
                    layer.weight.shape,
                )

    @property
    def in_width(self) -> int:
        return self.layers[0].in_width

    @property
    def out_width(self) -> int:
        return self.layers[-1].out_width

    @property
    def activations(self) -> List[Activation]:
        return [layer.activation for layer in self.layers]

    def arrays(self) -> List[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        if len(arrays) != 2 * len(self.layers):
            raise ShapeMismatch("mlp arrays", (2 * len(self.layers),), (len(arrays),))
        layers = []
        for k, layer in enumerate(self.layers):
            weight, bias = arrays[2 * k], arrays[2 * k + 1]
            if weight.shape != layer.weight.shape:
                raise ShapeMismatch(f"layer {k} weight", layer.weight.shape, weight.shape)
            if bias.shape != layer.bias.shape:
                raise ShapeMismatch(f"layer {k} bias", layer.bias.shape, bias.shape)
            layers.append(Layer(weight, bias, layer.activation))
        return MlpParams(layers)


@dataclasses.dataclass(eq=False)
class MlpCache:
    params: MlpParams
    inputs: List[np.ndarray]
    pre: List[np.ndarray]
    post: List[np.ndarray]


def init_mlp(
    widths: Sequence[int],
    activations: Sequence[Activation],
    rng: np.random.Generator,
) -> MlpParams:
    """
    Create an MLP with weights and biases uniform in ±1/sqrt(fan_in).

    :param widths: Layer widths including input and output, e.g. (4, 64, 32).
    :param activations: One activation per layer (len(widths) - 1 of them).
    :param rng: Source of randomness.
    """
    if len(activations) != len(widths) - 1:
        raise ShapeMismatch("activations", (len(widths) - 1,), (len(activations),))
    layers = []
    for fan_in, fan_out, act in zip(widths[:-1], widths[1:], activations):
        bound = 1.0 / np.sqrt(fan_in)
        layers.append(
            Layer(
                weight=rng.uniform(-bound, bound, size=(fan_out, fan_in)),
                bias=rng.uniform(-bound, bound, size=(fan_out,)),
                activation=Activation(act),
            )
        )
    return MlpParams(layers)


def dense(x: np.ndarray, weight: np.ndarray, bias: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Compute x @ weight.T (+ bias) one output element at a time.

    The unoptimized einsum reduces each output element on its own without BLAS,
    so a row of the result never depends on the other rows of `x` and a column
    never depends on the other rows of `weight`.
    """
    out = np.einsum("bi,oi->bo", x, weight, optimize=False)
    if bias is not None:
        out = out + bias
    return out


def mlp_forward(params: MlpParams, x) -> Tuple[np.ndarray, MlpCache]:
    """
    Evaluate the network on a batch.

    :return: the output batch and the cache needed by :py:func:`mlp_backward`.
    :raises ShapeMismatch: if the input width is not the first layer's.
    """
    h = as_batch(x, params.in_width, "mlp input")
    inputs, pre, post = [], [], []
    for layer in params.layers:
        inputs.append(h)
        u = dense(h, layer.weight, layer.bias)
        h = layer.activation.apply(u)
        pre.append(u)
        post.append(h)
    return h, MlpCache(params, inputs, pre, post)


def mlp_backward(
    params: MlpParams, cache: MlpCache, grad_output: np.ndarray
) -> Tuple[MlpParams, np.ndarray]:
    """
    Gradients of <grad_output, output> w.r.t. every parameter and the input.

    :raises StaleCache: if `cache` came from a forward pass of other params.
    """
    if cache.params is not params:
        raise StaleCache("mlp cache")
    g = np.asarray(grad_output, dtype=np.float64)
    if g.shape != cache.post[-1].shape:
        raise ShapeMismatch("mlp grad_output", cache.post[-1].shape, g.shape)

    grads: List[np.ndarray] = []
    for k in reversed(range(len(params.layers))):
        layer = params.layers[k]
        g = g * layer.activation.derivative(cache.pre[k], cache.post[k])
        grads.append(g.sum(axis=0))
        grads.append(g.T @ cache.inputs[k])
        g = g @ layer.weight
    grads.reverse()
    return params.with_arrays(grads), g


@dataclasses.dataclass(eq=False)
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def for_params(params: Parametric, lr: float = 1e-3) -> "AdamState":
        return AdamState(
            m=[np.zeros_like(a) for a in params.arrays()],
            v=[np.zeros_like(a) for a in params.arrays()],
            lr=lr,
        )


def adam_step(state: AdamState, params: P, grads: Parametric) -> Tuple[P, AdamState]:
    """
    One bias-corrected Adam update. Returns new params and a new state.

    :raises NonFiniteError: if any gradient entry is not finite.
    """
    p_arrays, g_arrays = params.arrays(), grads.arrays()
    if [a.shape for a in p_arrays] != [g.shape for g in g_arrays]:
        raise ShapeMismatch(
            "adam grads", [a.size for a in p_arrays], [g.size for g in g_arrays]
        )
    if [a.shape for a in p_arrays] != [m.shape for m in state.m]:
        raise ShapeMismatch(
            "adam moments", [a.size for a in p_arrays], [m.size for m in state.m]
        )
    if not all_finite(*g_arrays):
        raise NonFiniteError("gradient", state.step + 1)

    step = state.step + 1
    m = [state.beta1 * m + (1.0 - state.beta1) * g for m, g in zip(state.m, g_arrays)]
    v = [state.beta2 * v + (1.0 - state.beta2) * g * g for v, g in zip(state.v, g_arrays)]
    c1 = 1.0 - state.beta1**step
    c2 = 1.0 - state.beta2**step
    new_arrays = [
        p - state.lr * (mk / c1) / (np.sqrt(vk / c2) + state.eps)
        for p, mk, vk in zip(p_arrays, m, v)
    ]
    new_state = dataclasses.replace(state, m=m, v=v, step=step)
    return params.with_arrays(new_arrays), new_state
