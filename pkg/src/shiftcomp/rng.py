"""Seeded random streams.

All randomness in the package flows through named substreams of a single
64-bit seed.  Substreams are independent PCG64 generators derived via
``numpy.random.SeedSequence`` spawn keys, so adding or removing draws on
one stream never perturbs another.  Identical seed + identical call
sequence gives identical outputs on every platform.
"""

import numpy as np

# Fixed spawn keys for the streams a training run may need.  Keeping the
# assignment stable is what makes e.g. a vanilla run and an SCN run with
# the discriminator disabled produce bitwise-identical trajectories.
STREAM_G_INIT = 1
STREAM_D_INIT = 2
STREAM_C_INIT = 3
STREAM_SHUFFLE = 4
STREAM_Q_SAMPLE = 5
STREAM_G_DROPOUT = 6
STREAM_D_DROPOUT = 7
STREAM_C_DROPOUT = 8
STREAM_DATA = 9


def make_rng(seed, *key):
    """Return a Generator for substream `key` of `seed`.

    ``make_rng(seed)`` is the root stream; ``make_rng(seed, k, ...)``
    are mutually independent substreams.
    """
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(seq))
