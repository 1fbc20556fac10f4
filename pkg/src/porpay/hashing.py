"""Truncated SHA-256, the collision-resistant hash used throughout.

The default output length is 16 bytes (128 bits), the session security
parameter. A module-level call counter backs the dispute-cost ratio checks
in the test suite; it is plain instrumentation, not thread-safe, and has no
effect on results.
"""

from __future__ import annotations

import hashlib
from contextlib import contextmanager
from typing import Callable, Iterator

HASH_LEN = 16

_calls = 0


def digest(data: bytes, out_len: int = HASH_LEN) -> bytes:
    """Hash ``data`` and truncate the result to ``out_len`` bytes."""
    global _calls
    _calls += 1
    return hashlib.sha256(data).digest()[:out_len]


@contextmanager
def count_hash_calls() -> Iterator[Callable[[], int]]:
    """Yield a callable reporting how many digest() calls happened since entry."""
    start = _calls
    yield lambda: _calls - start
