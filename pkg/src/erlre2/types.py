from typing import Any, NewType, Sequence, TypeVar, Union

import numpy as np

from erlre2.errors import ShapeMismatch

T = TypeVar("T")

StateBatch = NewType("StateBatch", np.ndarray)
"""
Raw environment states, shape (batch, state_width).
Value functions only ever accept this kind.
"""

FeatureBatch = NewType("FeatureBatch", np.ndarray)
"""
Shared-representation features, shape (batch, d), entries in [-1, 1].
"""

ActionBatch = NewType("ActionBatch", np.ndarray)


def as_batch(x: Union[Sequence[float], np.ndarray], width: int, what: str) -> np.ndarray:
    """
    View a vector or a batch of vectors as a float64 batch of the given width.

    :param x: A single vector of length `width` or an array (batch, width).
    :param width: The expected trailing width.
    :param what: Name used in the shape diagnostic.
    :return: A 2-d float64 array.
    :raises ShapeMismatch: if the trailing width is wrong or ndim > 2.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != width:
        raise ShapeMismatch(what, ("batch", width), arr.shape)
    return arr


def all_finite(*arrays: np.ndarray) -> bool:
    return all(bool(np.all(np.isfinite(a))) for a in arrays)


def is_builtin(cls: type):
    return hasattr(cls, "__module__") and cls.__module__ in (
        object.__module__,
        "collections",
        "typing",
    )


def is_generic(cls: Any):
    return hasattr(cls, "__origin__")


def is_generic_union(cls: Any):
    return is_generic(cls) and cls.__origin__ is Union


def inspect_generic_templ_args(cls: Any, defaults=()):
    if hasattr(cls, "_special") and cls._special:
        return defaults

    return getattr(cls, "__args__", None) or defaults


def inspect_generic_origin(cls: Any):
    return getattr(cls, "__origin__", None)
