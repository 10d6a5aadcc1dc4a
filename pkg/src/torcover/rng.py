"""Named, reproducible random streams.

A replica's stream depends only on ``(master_seed, experiment_id,
replica_index)``: the experiment id is hashed to 64 bits with BLAKE2b and
the three words are fed to numpy's ``SeedSequence``, whose output seeds a
PCG64 generator.  Execution order and worker count never enter.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

MASK64 = (1 << 64) - 1


def id_hash(experiment_id: str) -> int:
    """64-bit BLAKE2b digest of an experiment id."""
    digest = hashlib.blake2b(experiment_id.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    experiment_id: str
    replica_index: int

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(
            [self.master_seed & MASK64, id_hash(self.experiment_id), self.replica_index]
        )

    def derived_seed(self) -> int:
        """The 64-bit integer these seed components mix down to."""
        return int(self.seed_sequence().generate_state(1, np.uint64)[0])

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed_sequence()))


def replica_rng(master_seed: int, experiment_id: str, replica_index: int) -> np.random.Generator:
    return SeedSpec(master_seed, experiment_id, replica_index).generator()
