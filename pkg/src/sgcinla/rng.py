"""Counter-based random number streams.

Every sampling routine in the package draws from a Philox generator keyed by
``(seed, salt)``.  Philox is counter-based, so two streams with different keys
are independent by construction and a given key always reproduces the same
draws regardless of platform or call order.  The salt separates subsystems
(GMRF draws, categorical mixture indices, MCMC chains, ...) so that passing
the same user-facing seed to different entry points never aliases streams.
"""

from __future__ import annotations

import numpy as np

# Fixed salts, one per subsystem.  Offsets above each base value index
# substreams (e.g. one per mixture configuration or per MCMC chain).
SALT_GMRF = 0x01
SALT_CATEGORICAL = 0x02
SALT_MIXTURE_BASE = 0x100
SALT_MCMC_BASE = 0x10000
SALT_BENCH = 0x03

_MASK64 = (1 << 64) - 1


def stream(seed: int, salt: int = 0) -> np.random.Generator:
    """Return an independent Philox stream for the pair (seed, salt).

    Parameters
    ----------
    seed : int
        User-facing seed.  Any Python integer; reduced modulo 2**64.
    salt : int
        Subsystem tag.  Streams with different salts never overlap.
    """
    key = [np.uint64(int(seed) & _MASK64), np.uint64(int(salt) & _MASK64)]
    return np.random.Generator(np.random.Philox(key=key))
