"""Error types raised across the condenser.

Every error carries a human-readable message; a few also carry location or
progress context so the CLI can report where a run stopped.
"""
from typing import Optional


class CondenserError(Exception):
    """Base class for all condenser errors."""


class ConfigError(CondenserError, ValueError):
    pass


# graph-core

class InvalidGraph(CondenserError):
    pass


class ZeroDegree(InvalidGraph):
    def __init__(self, node: int):
        super().__init__(f"node {node} has zero degree; cannot normalize")
        self.node = node


class AsymmetricInput(InvalidGraph):
    pass


class EmptyMask(CondenserError):
    pass


class TooLargeToDensify(CondenserError):
    pass


# diff-engine

class ShapeError(CondenserError):
    pass


class NumericError(CondenserError):
    def __init__(self, message: str, epoch: Optional[int] = None, step: Optional[int] = None):
        where = []
        if epoch is not None:
            where.append(f"epoch {epoch}")
        if step is not None:
            where.append(f"step {step}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.epoch = epoch
        self.step = step


class NotScalar(CondenserError):
    pass


class GradNotComputed(CondenserError):
    pass


class TapeError(CondenserError):
    pass


# condensation / baselines

class TooFewSyntheticNodes(CondenserError):
    pass


class EmptySourceClass(CondenserError):
    pass


class EmptyClassInMMD(CondenserError):
    pass


# data-io

class DataFormatError(CondenserError):
    pass


class ChecksumMismatch(DataFormatError):
    def __init__(self, path: str, expected: str, actual: str):
        super().__init__(f"checksum mismatch for {path}: expected {expected}, got {actual}")
        self.path = path


class MalformedFile(DataFormatError):
    def __init__(self, path: str, line: int, reason: str):
        super().__init__(f"{path}:{line}: {reason}")
        self.path = path
        self.line = line


class CountMismatch(DataFormatError):
    pass


class DatasetIOError(DataFormatError):
    pass
