"""Counter-based random streams.

Every random draw in the package is a pure function of
``(seed, stream, index, counter)``, hashed with SplitMix64.  Work can
therefore be chunked or parallelised in any way without changing the
numbers drawn for a given sequence index.

Stream tags separate independent consumers of one user seed::

    WALK    training random walks, index = sequence number
    TEST    test sequences, index = test node number
    SPLIT   train/test split
    INIT    weight initialisation
    SHUFFLE mini-batch shuffling
    SYNTH   synthetic city generation
    CV      LASSO cross-validation folds

For the consumers that want a classic ``numpy.random.Generator``
(split, init, shuffle, synth, CV), :func:`generator` derives one from a
``SeedSequence`` whose entropy is ``(seed, stream)``.
"""

import numpy as np

WALK = 1
TEST = 2
SPLIT = 3
INIT = 4
SHUFFLE = 5
SYNTH = 6
CV = 7

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z):
    z = z.copy()
    with np.errstate(over="ignore"):
        z ^= z >> np.uint64(30)
        z *= _M1
        z ^= z >> np.uint64(27)
        z *= _M2
        z ^= z >> np.uint64(31)
    return z


def _key(seed, stream):
    s = int(seed) & _MASK64
    return _mix(np.array([s ^ (int(stream) * 0x100000001B3 & _MASK64)], dtype=np.uint64))[0]


def uniforms(seed, stream, index, counter):
    """Uniform floats in [0, 1), one per broadcast element of index/counter.

    ``index`` and ``counter`` are integer arrays (broadcast together).  The
    result depends only on the four arguments, never on call order.
    """
    index = np.asarray(index, dtype=np.uint64)
    counter = np.asarray(counter, dtype=np.uint64)
    key = _key(seed, stream)
    with np.errstate(over="ignore"):
        z = key + _GOLDEN * (index + np.uint64(1))
        z = _mix(np.atleast_1d(z))
        z = z + _GOLDEN * (counter + np.uint64(1))
        z = _mix(np.atleast_1d(z))
    # top 53 bits -> double in [0, 1)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def generator(seed, stream, *extra):
    """A ``numpy.random.Generator`` for a named stream of ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & _MASK64, int(stream), *map(int, extra)]))
