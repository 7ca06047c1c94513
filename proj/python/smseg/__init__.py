"""Split-matching zero-shot segmentation toolkit (C++ core)."""

from ._core import *  # noqa: F401,F403
from ._core import SmsegError

__all__ = [name for name in dir() if not name.startswith("_")]
