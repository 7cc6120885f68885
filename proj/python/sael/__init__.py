"""Python access to the sael detection pipeline."""

from ._core import *  # noqa: F401,F403
from ._core import Error, DataError, NumericError, TransportError

__all__ = [name for name in dir() if not name.startswith("_")]
