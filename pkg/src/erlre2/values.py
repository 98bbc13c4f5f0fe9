"""
Value functions over raw states: the RL critic Q(s, a) and the
policy-extended value function Q(s, a, W).

Both take raw environment states. Nothing here accepts shared-representation
features.
"""
import dataclasses
import enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from erlre2.errors import ShapeMismatch
from erlre2.nn import (
    Activation,
    MlpCache,
    MlpParams,
    Parametric,
    init_mlp,
    mlp_backward,
    mlp_forward,
)
from erlre2.policy import PolicyRepresentation
from erlre2.records import recordable
from erlre2.types import StateBatch, as_batch


@recordable
class ValueMode(enum.Enum):
    MIN = "min"
    Q1 = "q1"
    Q2 = "q2"


def _value_head(widths: Sequence[int], rng: np.random.Generator) -> MlpParams:
    hidden = [Activation.LEAKY_RELU] * (len(widths) - 2)
    return init_mlp(widths, hidden + [Activation.IDENTITY], rng)


def _select(values: List[np.ndarray], mode: ValueMode) -> np.ndarray:
    if len(values) == 1:
        return values[0]
    if mode is ValueMode.MIN:
        return np.minimum(values[0], values[1])
    return values[0] if mode is ValueMode.Q1 else values[1]


def _heads_backward(
    heads: List[MlpParams], caches: List[MlpCache], grad_values: Sequence[Optional[np.ndarray]]
) -> Tuple[List[MlpParams], np.ndarray]:
    grads, grad_input = [], None
    for head, cache, g in zip(heads, caches, grad_values):
        if g is None:
            grads.append(head.zeros_like())
            continue
        grad_head, grad_in = mlp_backward(head, cache, np.asarray(g, dtype=np.float64)[:, None])
        grads.append(grad_head)
        grad_input = grad_in if grad_input is None else grad_input + grad_in
    return grads, grad_input


@dataclasses.dataclass(eq=False)
class CriticParams(Parametric):
    q1: MlpParams
    q2: Optional[MlpParams] = None
    """Absent in single-head (ddpg) mode."""

    action_dim: int = 0

    @property
    def heads(self) -> List[MlpParams]:
        return [self.q1] if self.q2 is None else [self.q1, self.q2]

    @property
    def state_width(self) -> int:
        return self.q1.in_width - self.action_dim

    def arrays(self) -> List[np.ndarray]:
        return [a for head in self.heads for a in head.arrays()]

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "CriticParams":
        n = len(self.q1.arrays())
        q1 = self.q1.with_arrays(arrays[:n])
        q2 = None if self.q2 is None else self.q2.with_arrays(arrays[n:])
        return CriticParams(q1, q2, self.action_dim)

    def action_gradient(self, s, a) -> Tuple[np.ndarray, np.ndarray]:
        return critic_action_gradient(self, s, a)


def make_critic(
    state_width: int,
    action_dim: int,
    hidden: Sequence[int],
    twin: bool,
    rng: np.random.Generator,
) -> CriticParams:
    widths = (state_width + action_dim, *hidden, 1)
    q1 = _value_head(widths, rng)
    q2 = _value_head(widths, rng) if twin else None
    return CriticParams(q1, q2, action_dim)


def _critic_input(psi: CriticParams, s, a) -> np.ndarray:
    sb = as_batch(s, psi.state_width, "critic state")
    ab = as_batch(a, psi.action_dim, "critic action")
    if sb.shape[0] != ab.shape[0]:
        raise ShapeMismatch("critic batch", (sb.shape[0],), (ab.shape[0],))
    return np.hstack([sb, ab])


def critic_forward(psi: CriticParams, s, a) -> Tuple[List[np.ndarray], List[MlpCache]]:
    x = _critic_input(psi, s, a)
    values, caches = [], []
    for head in psi.heads:
        out, cache = mlp_forward(head, x)
        values.append(out[:, 0])
        caches.append(cache)
    return values, caches


def critic_eval(psi: CriticParams, s, a, mode: ValueMode = ValueMode.MIN):
    """
    Q(s, a) per row; `min` takes the smaller twin, a single head answers every mode.
    """
    values, _ = critic_forward(psi, s, a)
    out = _select(values, ValueMode(mode))
    return out[0] if np.ndim(s) == 1 else out


def critic_backward(
    psi: CriticParams, caches: List[MlpCache], grad_values: Sequence[Optional[np.ndarray]]
) -> Tuple[CriticParams, np.ndarray]:
    grads, grad_input = _heads_backward(psi.heads, caches, grad_values)
    grad_psi = CriticParams(grads[0], grads[1] if len(grads) > 1 else None, psi.action_dim)
    return grad_psi, grad_input


def critic_action_gradient(psi: CriticParams, s, a) -> Tuple[np.ndarray, np.ndarray]:
    """
    First-head values and d(sum of values)/d(actions).
    """
    values, caches = critic_forward(psi, s, a)
    ones = np.ones_like(values[0])
    _, grad_input = _heads_backward([psi.q1], caches[:1], [ones])
    return values[0], grad_input[:, psi.state_width :]


@dataclasses.dataclass(eq=False)
class PeVFAParams(Parametric):
    encoder: MlpParams
    """Maps one (d+1)-long column of a policy matrix to an embedding."""

    v1: MlpParams
    v2: Optional[MlpParams] = None
    action_dim: int = 0

    @property
    def heads(self) -> List[MlpParams]:
        return [self.v1] if self.v2 is None else [self.v1, self.v2]

    @property
    def embedding_width(self) -> int:
        return self.encoder.out_width

    @property
    def column_width(self) -> int:
        return self.encoder.in_width

    @property
    def state_width(self) -> int:
        return self.v1.in_width - self.action_dim - self.embedding_width

    def arrays(self) -> List[np.ndarray]:
        return self.encoder.arrays() + [a for head in self.heads for a in head.arrays()]

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "PeVFAParams":
        ne, nh = len(self.encoder.arrays()), len(self.v1.arrays())
        encoder = self.encoder.with_arrays(arrays[:ne])
        v1 = self.v1.with_arrays(arrays[ne : ne + nh])
        v2 = None if self.v2 is None else self.v2.with_arrays(arrays[ne + nh :])
        return PeVFAParams(encoder, v1, v2, self.action_dim)

    def value(self, s, a, w: PolicyRepresentation, mode: ValueMode = ValueMode.MIN):
        return pevfa_eval(self, s, a, w, mode)

    def action_gradient(self, s, a, w: PolicyRepresentation) -> Tuple[np.ndarray, np.ndarray]:
        return pevfa_action_gradient(self, s, a, w)


def make_pevfa(
    state_width: int,
    action_dim: int,
    d: int,
    hidden: Sequence[int],
    twin: bool,
    rng: np.random.Generator,
    embedding_width: int = 64,
) -> PeVFAParams:
    e = embedding_width
    encoder = init_mlp(
        (d + 1, e, e, e),
        [Activation.LEAKY_RELU, Activation.LEAKY_RELU, Activation.IDENTITY],
        rng,
    )
    widths = (state_width + action_dim + e, *hidden, 1)
    v1 = _value_head(widths, rng)
    v2 = _value_head(widths, rng) if twin else None
    return PeVFAParams(encoder, v1, v2, action_dim)


def pevfa_encode_with_cache(
    theta: PeVFAParams, w: PolicyRepresentation
) -> Tuple[np.ndarray, MlpCache]:
    w.check(theta.column_width - 1, theta.action_dim)
    embeddings, cache = mlp_forward(theta.encoder, w.matrix.T)
    # sorted per coordinate so the mean does not depend on column order
    return np.sort(embeddings, axis=0).mean(axis=0), cache


def pevfa_encode(theta: PeVFAParams, w: PolicyRepresentation) -> np.ndarray:
    """
    Mean of the per-action-dimension column embeddings of `w`.
    """
    e, _ = pevfa_encode_with_cache(theta, w)
    return e


@dataclasses.dataclass(eq=False)
class PeVFAForward:
    values: List[np.ndarray]
    encoder_cache: MlpCache
    head_caches: List[MlpCache]


def pevfa_forward(theta: PeVFAParams, s: StateBatch, a, w: PolicyRepresentation) -> PeVFAForward:
    sb = as_batch(s, theta.state_width, "pevfa state")
    ab = as_batch(a, theta.action_dim, "pevfa action")
    if sb.shape[0] != ab.shape[0]:
        raise ShapeMismatch("pevfa batch", (sb.shape[0],), (ab.shape[0],))
    e, encoder_cache = pevfa_encode_with_cache(theta, w)
    x = np.hstack([sb, ab, np.broadcast_to(e, (sb.shape[0], e.shape[0]))])
    values, caches = [], []
    for head in theta.heads:
        out, cache = mlp_forward(head, x)
        values.append(out[:, 0])
        caches.append(cache)
    return PeVFAForward(values, encoder_cache, caches)


def pevfa_eval(theta: PeVFAParams, s, a, w: PolicyRepresentation, mode: ValueMode = ValueMode.MIN):
    """
    Q(s, a, W) for raw states `s`.
    """
    fwd = pevfa_forward(theta, s, a, w)
    out = _select(fwd.values, ValueMode(mode))
    return out[0] if np.ndim(s) == 1 else out


def pevfa_backward(
    theta: PeVFAParams, fwd: PeVFAForward, grad_values: Sequence[Optional[np.ndarray]]
) -> Tuple[PeVFAParams, np.ndarray]:
    """
    Gradients w.r.t. every parameter (heads and column encoder) and the action.
    """
    grads, grad_input = _heads_backward(theta.heads, fwd.head_caches, grad_values)
    sw, na = theta.state_width, theta.action_dim
    grad_e = grad_input[:, sw + na :].sum(axis=0)
    columns = fwd.encoder_cache.post[-1].shape[0]
    grad_columns = np.tile(grad_e / columns, (columns, 1))
    grad_encoder, _ = mlp_backward(theta.encoder, fwd.encoder_cache, grad_columns)
    grad_theta = PeVFAParams(
        grad_encoder, grads[0], grads[1] if len(grads) > 1 else None, theta.action_dim
    )
    return grad_theta, grad_input[:, sw : sw + na]


def pevfa_action_gradient(
    theta: PeVFAParams, s, a, w: PolicyRepresentation
) -> Tuple[np.ndarray, np.ndarray]:
    """
    First-head values and d(sum of values)/d(actions).
    """
    fwd = pevfa_forward(theta, s, a, w)
    grad_values = [np.ones_like(fwd.values[0])] + [None] * (len(fwd.values) - 1)
    _, grad_input = _heads_backward(theta.heads, fwd.head_caches, grad_values)
    sw = theta.state_width
    return fwd.values[0], grad_input[:, sw : sw + theta.action_dim]
