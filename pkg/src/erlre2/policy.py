"""
Two-scale policies: one shared nonlinear state encoder, one linear matrix per agent.

An agent's action on dimension ``i`` depends on column ``i`` of its matrix only,
which is what makes the behavior-level genetic operators local.
"""
import dataclasses
from typing import List, Sequence, Tuple, TypeVar

import numpy as np

from erlre2.errors import ShapeMismatch
from erlre2.nn import Activation, MlpCache, MlpParams, Parametric, dense, init_mlp, mlp_forward
from erlre2.types import ActionBatch, FeatureBatch, as_batch

P = TypeVar("P", bound=Parametric)


@dataclasses.dataclass(eq=False)
class ActionSpec:
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        self.low = np.atleast_1d(np.asarray(self.low, dtype=np.float64))
        self.high = np.atleast_1d(np.asarray(self.high, dtype=np.float64))
        if self.low.shape != self.high.shape:
            raise ShapeMismatch("action bounds", self.low.shape, self.high.shape)
        if not np.all(self.low < self.high):
            raise ValueError(f"action bounds need low < high, got {self.low}, {self.high}")

    @property
    def dim(self) -> int:
        return self.low.shape[0]

    @property
    def half_range(self) -> np.ndarray:
        return (self.high - self.low) / 2.0

    def clip(self, a: np.ndarray) -> np.ndarray:
        return np.clip(a, self.low, self.high)


@dataclasses.dataclass(eq=False)
class SharedRepresentation(Parametric):
    encoder: MlpParams

    def __post_init__(self):
        if self.encoder.activations[-1] is not Activation.TANH:
            raise ValueError("the shared representation must end with tanh")

    @property
    def d(self) -> int:
        return self.encoder.out_width

    @property
    def state_width(self) -> int:
        return self.encoder.in_width

    def arrays(self) -> List[np.ndarray]:
        return self.encoder.arrays()

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "SharedRepresentation":
        return SharedRepresentation(self.encoder.with_arrays(arrays))


@dataclasses.dataclass(eq=False)
class PolicyRepresentation(Parametric):
    matrix: np.ndarray
    """(d + 1, |A|): rows 0..d-1 weight the features, row d is the bias."""

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] < 2:
            raise ShapeMismatch("policy matrix", ("d+1", "|A|"), self.matrix.shape)

    @property
    def d(self) -> int:
        return self.matrix.shape[0] - 1

    @property
    def action_dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return self.matrix[: self.d]

    @property
    def bias(self) -> np.ndarray:
        return self.matrix[self.d]

    def column(self, i: int) -> np.ndarray:
        return self.matrix[:, i]

    def arrays(self) -> List[np.ndarray]:
        return [self.matrix]

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "PolicyRepresentation":
        (matrix,) = arrays
        if matrix.shape != self.matrix.shape:
            raise ShapeMismatch("policy matrix", self.matrix.shape, matrix.shape)
        return PolicyRepresentation(matrix)

    def check(self, d: int, action_dim: int):
        if self.matrix.shape != (d + 1, action_dim):
            raise ShapeMismatch("policy matrix", (d + 1, action_dim), self.matrix.shape)


def make_shared_representation(
    state_width: int, hidden: Sequence[int], rng: np.random.Generator
) -> SharedRepresentation:
    widths = (state_width, *hidden)
    encoder = init_mlp(widths, [Activation.TANH] * len(hidden), rng)
    return SharedRepresentation(encoder)


def policy_init_bound(d: int) -> float:
    return 1.0 / np.sqrt(d)


def init_policy(d: int, action_dim: int, rng: np.random.Generator) -> PolicyRepresentation:
    bound = policy_init_bound(d)
    return PolicyRepresentation(rng.uniform(-bound, bound, size=(d + 1, action_dim)))


def _like(reference: np.ndarray, out: np.ndarray) -> np.ndarray:
    return out[0] if np.ndim(reference) == 1 else out


def encode_state_with_cache(
    shared: SharedRepresentation, s
) -> Tuple[FeatureBatch, MlpCache]:
    z, cache = mlp_forward(shared.encoder, as_batch(s, shared.state_width, "state"))
    return FeatureBatch(z), cache


def encode_state(shared: SharedRepresentation, s) -> FeatureBatch:
    """
    Features z = Z(s) in [-1, 1]^d, for one state or a batch.
    """
    z, _ = encode_state_with_cache(shared, s)
    return FeatureBatch(_like(s, z))


def pre_squash(z: np.ndarray, w: PolicyRepresentation) -> np.ndarray:
    zb = as_batch(z, w.d, "features")
    return dense(zb, w.weights.T, w.bias)


def act(z, w: PolicyRepresentation, spec: ActionSpec) -> ActionBatch:
    """
    a_i = low_i + (tanh(z . W[:d, i] + W[d, i]) + 1) / 2 * (high_i - low_i).
    """
    if w.action_dim != spec.dim:
        raise ShapeMismatch("policy action columns", (spec.dim,), (w.action_dim,))
    u = pre_squash(z, w)
    a = spec.low + (np.tanh(u) + 1.0) * spec.half_range
    return ActionBatch(_like(z, a))


def act_backward(
    z: np.ndarray, w: PolicyRepresentation, spec: ActionSpec, grad_action: np.ndarray
) -> Tuple[np.ndarray, PolicyRepresentation]:
    """
    Gradients of <grad_action, act(z, w)> w.r.t. the features and the matrix.
    """
    zb = as_batch(z, w.d, "features")
    g = as_batch(grad_action, w.action_dim, "action gradient")
    t = np.tanh(dense(zb, w.weights.T, w.bias))
    grad_u = g * (1.0 - t * t) * spec.half_range
    grad_matrix = np.vstack([zb.T @ grad_u, grad_u.sum(axis=0, keepdims=True)])
    grad_z = grad_u @ w.weights.T
    return grad_z, PolicyRepresentation(grad_matrix)


def policy_forward(
    shared: SharedRepresentation, w: PolicyRepresentation, spec: ActionSpec, s
) -> ActionBatch:
    return act(encode_state(shared, s), w, spec)


def soft_update(target: P, online: P, tau: float) -> P:
    """
    target <- tau * online + (1 - tau) * target, elementwise.
    """
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    if target.shapes() != online.shapes():
        raise ShapeMismatch("soft update", target.shapes(), online.shapes())
    if tau == 1.0:
        return online.copy()
    return target.with_arrays(
        [tau * o + (1.0 - tau) * t for t, o in zip(target.arrays(), online.arrays())]
    )

