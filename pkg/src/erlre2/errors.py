from typing import Optional, Sequence


class ErlError(Exception):
    def __init__(self, msg):
        self.msg = msg

    def __str__(self):
        return self.msg


class ShapeMismatch(ErlError):
    def __init__(self, what: str, expected: Sequence[int], actual: Sequence[int]):
        super().__init__(
            f"{what}: expected shape {tuple(expected)}, got {tuple(actual)}."
        )
        self.expected = tuple(expected)
        self.actual = tuple(actual)


class StaleCache(ErlError):
    def __init__(self, what: str = "cache"):
        super().__init__(f"{what} was not produced by a forward pass of these params.")


class NonFiniteError(ErlError):
    def __init__(self, what: str, step: Optional[int] = None):
        where = "" if step is None else f" at step {step}"
        super().__init__(f"non-finite {what}{where}, aborting.")
        self.what = what
        self.step = step


class ConfigError(ErlError):
    pass


class ContractViolation(ErlError):
    pass


class CheckpointError(ErlError):
    pass


class UnknownAxis(ErlError):
    def __init__(self, axis: str, known: Sequence[str]):
        super().__init__(f"unknown ablation axis {axis!r}, choose from {sorted(known)}.")


class UnableToRecord(ErlError):
    def __init__(self, cls: Optional[type]):
        super().__init__(f"{cls}, please mark it as recordable.")


class UnableFromRecord(ErlError):
    def __init__(self, cls):
        super().__init__(f"{cls}, unable to restore it from a record.")
