"""Deterministic seed derivation.

Every RNG in the package is seeded through :func:`derive_seed` so that
independent components (subjects, folds, networks, batch streams) get
decorrelated streams that are reproducible across processes and platforms.
Python's builtin ``hash`` is salted per process and must not be used here.
"""

from __future__ import annotations

import hashlib


def derive_seed(*parts: int | str) -> int:
    """Hash a sequence of ints/strings into a 64-bit unsigned seed."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, bool) or not isinstance(part, (int, str)):
            raise TypeError(f"seed parts must be int or str, got {type(part).__name__}")
        token = f"i:{part}" if isinstance(part, int) else f"s:{part}"
        h.update(token.encode("utf-8"))
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")
