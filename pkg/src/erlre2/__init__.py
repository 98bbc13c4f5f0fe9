try:
    import importlib.metadata as _importlib_metadata
except ModuleNotFoundError:
    # noinspection PyUnresolvedReferences
    import importlib_metadata as _importlib_metadata

from .config import RunConfig, load_config
from .envs import EnvRegistry, make_env
from .errors import ErlError
from .harness import ablate, evaluate, train
from .records import from_record, recordable, to_record

__all__ = [
    "RunConfig",
    "load_config",
    "train",
    "evaluate",
    "ablate",
    "EnvRegistry",
    "make_env",
    "ErlError",
    "recordable",
    "to_record",
    "from_record",
]

try:
    __version__ = _importlib_metadata.version("erlre2")
except _importlib_metadata.PackageNotFoundError:
    __version__ = "unknown version"
