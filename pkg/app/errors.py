"""
Exception hierarchy shared by services, routers and the CLI
"""

from typing import Optional


class LyacertError(Exception):
    """Base class for every error raised by the toolkit"""

    exit_code = 2


class ModelError(LyacertError):
    """Dimension, schema or precondition violation in a model"""

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class ParseError(LyacertError):
    """Syntax error in a mini-language program"""

    def __init__(self, message: str, line: int, column: int):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}")


class UnsupportedConstruct(LyacertError):
    """Construct outside the mini-language or the current pipeline"""


class AbstractionError(LyacertError):
    """Abstraction requested outside its sound range"""


class ReductionError(LyacertError):
    """Graph reduction precondition violated"""


class AssemblyError(LyacertError):
    """Convex program could not be assembled from the model"""


class SolverError(LyacertError):
    """Numerical failure inside a solver"""

    exit_code = 3


class CertificateError(LyacertError):
    """Certificate does not fit the model it is checked against"""
