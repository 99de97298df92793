"""Counter-based random streams.

Every stream is a Philox4x64-10 generator keyed by two 64-bit words,
``key = (seed, stream_id)``. The stream id packs a purpose tag and up to two
indices::

    stream_id = tag << 56 | (i & 0xFFFFFFF) << 28 | (j & 0xFFFFFFF)

so that, for example, instance ``j`` at grid point ``i`` of an impurity run
always draws the same numbers regardless of how work is scheduled across
threads. Philox is a published counter-based algorithm, so the streams are
reproducible by any implementation that follows the same keying.
"""

import numpy as np

TAG_NUCLEAR_BATH = 1
TAG_ELECTRON_BATH = 2
TAG_IMPURITY = 3
TAG_HISTOGRAM = 4
TAG_GENERIC = 15

_MASK64 = (1 << 64) - 1
_MASK28 = (1 << 28) - 1


def stream_id(tag, i=0, j=0):
    if not 0 <= tag < 256:
        raise ValueError("tag must fit in 8 bits")
    return (tag << 56) | ((int(i) & _MASK28) << 28) | (int(j) & _MASK28)


def stream(seed, tag=TAG_GENERIC, i=0, j=0):
    """Independent generator for ``(seed, tag, i, j)``.

    Parameters
    ----------
    seed : int
        Master seed, reduced modulo 2**64.
    tag : int
        Purpose tag in [0, 256).
    i, j : int
        Sub-stream indices (28 bits each).

    Returns
    -------
    numpy.random.Generator
    """
    key = np.array([int(seed) & _MASK64, stream_id(tag, i, j)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
