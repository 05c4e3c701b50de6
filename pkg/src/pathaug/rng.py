"""Seedable random streams with a documented cross-platform derivation.

All randomness in the package flows through numpy ``Generator`` objects
backed by PCG64. Streams are derived from integer keys so that independent
consumers (CLI workers, dataloader workers, batch items) reproduce exactly:

    stream(seed, *key) = Generator(PCG64(SeedSequence([seed & MASK64, k+1 ...])))

Key parts are stored offset by one because ``SeedSequence`` zero-pads its
entropy, which would make a trailing 0 part a no-op: without the offset,
(seed,), (seed, 0), and (seed, 0, 0) would all name the same stream.

The CLI processes image index ``i`` with ``derive_rng(seed, 0, i)`` (worker 0);
bindings use ``derive_rng(seed, worker_id, item_index)``. Matching keys give
byte-identical draws on every platform numpy supports.
"""

from __future__ import annotations

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Return the PCG64 stream for (seed, *key).

    ``seed`` may be any Python int (masked to 64 bits); the key parts must be
    non-negative integers. Distinct keys, including keys that differ only by
    trailing zero parts, give independent streams.
    """
    entropy = [int(seed) & _MASK64]
    for k in key:
        k = int(k)
        if k < 0:
            raise ValueError("rng key parts must be non-negative")
        entropy.append(k + 1)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
