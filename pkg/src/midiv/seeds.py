"""Deterministic seed derivation by labeled hashing.

All randomness in the experiment harness flows from one root seed; module
and per-task seeds are derived by hashing stable labels, so adding a task
(a method, a grid cell) never shifts the random streams of the others.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive_seed"]


def derive_seed(*parts) -> np.random.SeedSequence:
    """SeedSequence derived from hashing the labels in ``parts``."""
    text = "\x1f".join(_canonical(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return np.random.SeedSequence(int.from_bytes(digest, "little"))


def _canonical(part) -> str:
    if isinstance(part, np.random.SeedSequence):
        return f"ss:{part.entropy}:{part.spawn_key}"
    if isinstance(part, (bool, int, np.integer)):
        return f"i:{int(part)}"
    if isinstance(part, (float, np.floating)):
        return f"f:{float(part)!r}"
    if isinstance(part, str):
        return f"s:{part}"
    raise TypeError(f"cannot derive a seed from {type(part).__name__}")
