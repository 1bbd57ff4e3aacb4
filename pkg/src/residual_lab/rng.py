"""Named deterministic random streams.

Every stochastic choice in the package draws from a Philox counter-based
generator keyed by ``blake2b-128("purpose:seed")``.  Philox streams are
reproducible bit-for-bit across platforms, and distinct purposes (parameter
init, batch sampling, dataset ICs, bootstrap resampling) never share draws.
"""

import hashlib

import numpy as np


def stream(seed: int, purpose: str) -> np.random.Generator:
    """Return an independent generator for (seed, purpose)."""
    digest = hashlib.blake2b(f"{purpose}:{seed}".encode(), digest_size=16).digest()
    key = int.from_bytes(digest, "little")
    return np.random.Generator(np.random.Philox(key=key))
