"""
Conversion between run data objects and JSON-ready builtin values.

Config echoes, generation logs, run summaries and checkpoint metadata all pass
through here. Dataclasses, enums, numpy arrays and typed containers of them are
supported; a class marked with :py:func:`recordable` also gets its name embedded
under ``"@"`` so a record can be restored without naming the class.
"""
import dataclasses
import enum
import inspect
from typing import Any, Callable, Mapping, Optional, Type, Union, get_type_hints

import numpy as np
from registry import Registry

from erlre2.errors import UnableFromRecord, UnableToRecord
from erlre2.types import (
    T,
    inspect_generic_origin,
    inspect_generic_templ_args,
    is_builtin,
    is_generic,
    is_generic_union,
)


@dataclasses.dataclass
class RecordOptions:
    with_cls: bool = True
    """
    A boolean value indicating if embedding the registered class name into
    the record or not.
    """

    strict: bool = True
    """
    A boolean value indicating if raise exceptions or not
    when a non-builtin object cannot be recorded.
    """


@dataclasses.dataclass
class Meta:
    name: str


def recordable(cls: T = None, name=None) -> Union[T, Callable[[T], T]]:
    """
    Mark a dataclass or enum as recordable under a name.

    :param cls: The class to register.
    :param name: The name embedded into records. Defaults to the class name.
    :return: the original type.
    """

    def inner(_cls):
        RecordRegistry.register(name=name or _cls.__name__)(_cls)
        return _cls

    return inner(cls) if cls else inner


class RecordRegistry(Registry[Meta]):
    CLS_ANNO_KEY = "@"

    @staticmethod
    def to_record(ins: Any, options: Optional[RecordOptions] = None):
        """
        Transform `ins` into builtin values recursively.

        :param ins: The object going to be transformed.
        :param options: Options that control the transform behaviors.
        :return: a structure of dicts, lists and scalars.
        :raises UnableToRecord: if a nested object is not supported in strict mode.
        """
        options = options or RecordOptions()
        cls = type(ins)

        if isinstance(ins, np.ndarray):
            return ins.tolist()
        if isinstance(ins, np.generic):
            return ins.item()
        if dataclasses.is_dataclass(cls):
            obj = {
                f.name: RecordRegistry.to_record(getattr(ins, f.name), options)
                for f in dataclasses.fields(ins)
            }
            return _embed_class(cls, obj, options)
        if isinstance(ins, enum.Enum):
            obj = dict(value=ins.value, name=ins.name)
            return _embed_class(cls, obj, options)
        if isinstance(ins, Mapping):
            return {k: RecordRegistry.to_record(v, options) for k, v in ins.items()}
        if isinstance(ins, (list, tuple)):
            return [RecordRegistry.to_record(v, options) for v in ins]
        if ins is None or is_builtin(cls) or not options.strict:
            return ins

        raise UnableToRecord(cls)

    @staticmethod
    def from_record(obj: Any, cls: Any = None, options: Optional[RecordOptions] = None):
        """
        Instantiate an object from a record.

        :param obj: The record.
        :param cls: The expected type; `None` to infer it from the embedded name.
        :param options: Options that control the transform behaviors.
        :return: the instantiated object.
        :raises UnableFromRecord: if the type cannot be restored in strict mode.
        """
        options = options or RecordOptions()
        cls = _strip_class(obj, cls, options)

        if cls is None or cls is Any:
            return obj
        if cls is np.ndarray:
            return np.asarray(obj, dtype=np.float64)
        if is_generic(cls):
            return _from_generic(obj, cls, options)
        if inspect.isclass(cls) and dataclasses.is_dataclass(cls):
            return _dataclass_from_record(cls, obj, options)
        if inspect.isclass(cls) and issubclass(cls, enum.Enum):
            return _enum_from_record(cls, obj)
        if cls is float and isinstance(obj, int):
            return float(obj)
        if cls is tuple and isinstance(obj, list):
            return tuple(obj)
        if is_builtin(cls) or not options.strict:
            return obj

        raise UnableFromRecord(cls)


def _embed_class(cls: type, obj: dict, options: RecordOptions) -> dict:
    if options.with_cls and RecordRegistry.registered(cls):
        obj[RecordRegistry.CLS_ANNO_KEY] = RecordRegistry.meta_of(cls).name
    return obj


def _strip_class(obj: Any, cand_cls: Any, options: RecordOptions):
    """
    Strip the embedded class name and return the class registered under it.
    """
    if not isinstance(obj, dict) or RecordRegistry.CLS_ANNO_KEY not in obj:
        return cand_cls

    cls_name = obj.pop(RecordRegistry.CLS_ANNO_KEY)
    cls = RecordRegistry.query(name=cls_name)
    if cls is None and cand_cls is None and options.strict:
        raise UnableFromRecord(cls_name)

    return cls or cand_cls


def _dataclass_from_record(cls: Type[T], obj: dict, options: RecordOptions) -> T:
    if not isinstance(obj, dict):
        raise UnableFromRecord(cls)

    annotations = get_type_hints(cls)
    init_values = {}
    post_init_values = {}
    for field in dataclasses.fields(cls):
        if field.name not in obj:
            continue

        value = RecordRegistry.from_record(
            obj[field.name], annotations.get(field.name), options
        )
        if field.init:
            init_values[field.name] = value
        else:
            post_init_values[field.name] = value

    instance = cls(**init_values)
    instance.__dict__.update(post_init_values)
    return instance


def _enum_from_record(cls: Type[T], obj: Any) -> T:
    if isinstance(obj, dict):
        ins = cls(obj["value"])
        assert ins.name == obj["name"], (
            f"Inconsistent enum {cls} value {obj['value']}: \n"
            f"  expect name {ins.name}, but get name {obj['name']}."
        )
        return ins
    return cls(obj)


def _from_generic(obj: Any, cls: Any, options: RecordOptions):
    origin = inspect_generic_origin(cls)

    if is_generic_union(cls):
        if obj is None:
            return None
        for cand_cls in inspect_generic_templ_args(cls, defaults=(Any,)):
            if cand_cls is type(None):
                continue
            # noinspection PyBroadException
            try:
                return RecordRegistry.from_record(obj, cand_cls, options)
            except Exception:
                continue
        raise UnableFromRecord(cls)

    if inspect.isclass(origin) and issubclass(origin, Mapping):
        key_cls, val_cls = inspect_generic_templ_args(cls, defaults=(Any, Any))
        return {
            RecordRegistry.from_record(k, key_cls, options): RecordRegistry.from_record(
                v, val_cls, options
            )
            for k, v in obj.items()
        }

    if origin is tuple:
        item_classes = inspect_generic_templ_args(cls, defaults=(Any, ...))
        if len(item_classes) == 2 and item_classes[-1] is ...:
            item_classes = (item_classes[0],) * len(obj)
        return tuple(
            RecordRegistry.from_record(item, item_cls, options)
            for item, item_cls in zip(obj, item_classes)
        )

    if origin in (list, set, frozenset):
        (item_cls,) = inspect_generic_templ_args(cls, defaults=(Any,))
        return origin(RecordRegistry.from_record(item, item_cls, options) for item in obj)

    return obj


to_record = RecordRegistry.to_record

from_record = RecordRegistry.from_record
