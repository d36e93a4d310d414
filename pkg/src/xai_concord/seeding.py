"""Derived seeds: one u64 per (master seed, stage, index), independent of execution order."""

import hashlib

MASK64 = (1 << 64) - 1


def derive_seed(master: int, stage: str, index: int = 0) -> int:
    digest = hashlib.sha256(f"{int(master) & MASK64}:{stage}:{int(index)}".encode()).digest()
    return int.from_bytes(digest[:8], "little")
