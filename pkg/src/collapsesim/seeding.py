"""Per-trajectory random streams derived from one master seed.

Trajectory ``k`` of master seed ``s`` uses a PCG64 generator seeded with
the first 8 bytes (big-endian, unsigned) of
``SHA-256(f"collapsesim:{s}:{k}".encode("ascii"))``.  The mapping depends on
nothing else, so trajectories can be scheduled on any number of workers.
"""
import hashlib

import numpy as np

SEED_DERIVATION = ("PCG64(int.from_bytes(sha256(b'collapsesim:<master_seed>:<index>')"
                   ".digest()[:8], 'big'))")


def trajectory_seed(master_seed: int, index: int) -> int:
    digest = hashlib.sha256(f"collapsesim:{int(master_seed)}:{int(index)}".encode("ascii"))
    return int.from_bytes(digest.digest()[:8], "big")


def trajectory_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(trajectory_seed(master_seed, index)))


def trajectory_rngs(master_seed: int, n: int, start: int = 0) -> list[np.random.Generator]:
    return [trajectory_rng(master_seed, k) for k in range(start, start + n)]
