import hashlib

import numpy as np


def derive_seed(seed: int, *labels) -> int:
    """Stable 63-bit sub-seed for ``(seed, labels...)``."""
    text = "/".join([str(int(seed))] + [str(x) for x in labels])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little") >> 1


def rng_for(seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *labels))
