"""Named, counter-based random streams.

Every random draw in the library comes from ``stream(master_seed, label, index)``.
The key is a SHA-256 digest of the three parts, fed to numpy's Philox
generator, so any piece of a run can be regenerated independently.
"""
import hashlib

import numpy as np


def stream_key(master_seed: int, label: str, index: int = 0) -> int:
    payload = f"{int(master_seed)}\x1f{label}\x1f{int(index)}".encode()
    return int.from_bytes(hashlib.sha256(payload).digest()[:16], "little")


def stream(master_seed: int, label: str, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=stream_key(master_seed, label, index)))


def derive_seed(master_seed: int, label: str, index: int = 0) -> int:
    """64-bit child seed for APIs that take a plain integer."""
    return stream_key(master_seed, label, index) & (2**63 - 1)
