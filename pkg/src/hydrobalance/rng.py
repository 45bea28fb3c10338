"""Counter-based random streams (Philox4x32-10).

Every random number in the package comes from the Philox4x32-10 block
cipher of Salmon et al. (Random123).  A draw is addressed by a 64-bit key
and a 128-bit counter, so results are reproducible bit-for-bit on any
platform with IEEE doubles and never depend on call order across streams.

Layout used throughout:

* key = ``derive_key(seed, purpose)`` (SplitMix64 mixing of the user seed
  and a small purpose tag, so DES, initial-condition and particle-noise
  draws never share blocks);
* counter words ``(c0, c1)`` hold the 64-bit block index, ``(c2, c3)`` the
  64-bit stream id (a replication index, or a particle index).

Each block yields four 32-bit words, i.e. two 53-bit uniforms on [0, 1).
Sequential streams buffer the second uniform of a block.
"""

import math

import numpy as np
from numba import njit

M0 = np.uint64(0xD2511F53)
M1 = np.uint64(0xCD9E8D57)
W0 = np.uint64(0x9E3779B9)
W1 = np.uint64(0xBB67AE85)
MASK32 = np.uint64(0xFFFFFFFF)
SHIFT32 = np.uint64(32)

# purpose tags for derive_key
PURPOSE_DES = 1
PURPOSE_INIT = 2
PURPOSE_NOISE = 3
PURPOSE_ROUTING = 4
PURPOSE_SERVICE = 5

_INV_2_53 = 1.0 / 9007199254740992.0
_TWO_PI = 2.0 * math.pi

# sequential stream state slots (uint64 array of length 6)
_KEY, _STREAM, _BLOCK, _BUF, _HAS_BUF = 0, 1, 2, 3, 4
STATE_SIZE = 6


@njit(cache=True, inline="always")
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten rounds of Philox4x32 on uint64-held 32-bit words."""
    for _ in range(10):
        p0 = M0 * c0
        p1 = M1 * c2
        hi0 = p0 >> SHIFT32
        lo0 = p0 & MASK32
        hi1 = p1 >> SHIFT32
        lo1 = p1 & MASK32
        c0, c1, c2, c3 = (hi1 ^ c1 ^ k0) & MASK32, lo1, (hi0 ^ c3 ^ k1) & MASK32, lo0
        k0 = (k0 + W0) & MASK32
        k1 = (k1 + W1) & MASK32
    return c0, c1, c2, c3


@njit(cache=True)
def splitmix64(x):
    z = np.uint64(x) + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def derive_key(seed, purpose):
    """64-bit Philox key for ``(seed, purpose)``."""
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return int(splitmix64(np.uint64(int(splitmix64(np.uint64(seed))) ^ int(purpose))))


@njit(cache=True, inline="always")
def _words_to_unit(a, b):
    return float(((a >> np.uint64(5)) << np.uint64(26)) | (b >> np.uint64(6))) * _INV_2_53


@njit(cache=True, inline="always")
def block_uniforms(key, c_lo, c_hi):
    """Two uniforms on [0, 1) from block ``(c_lo, c_hi)`` under ``key``.

    ``c_lo`` fills counter words 0-1 and ``c_hi`` words 2-3.
    """
    key = np.uint64(key)
    c_lo = np.uint64(c_lo)
    c_hi = np.uint64(c_hi)
    o0, o1, o2, o3 = philox4x32(
        c_lo & MASK32, c_lo >> SHIFT32, c_hi & MASK32, c_hi >> SHIFT32,
        key & MASK32, key >> SHIFT32,
    )
    return _words_to_unit(o0, o1), _words_to_unit(o2, o3)


@njit(cache=True, inline="always")
def block_normal(key, c_lo, c_hi):
    """One standard normal from a single block (Box-Muller, cosine branch)."""
    u1, u2 = block_uniforms(key, c_lo, c_hi)
    return math.sqrt(-2.0 * math.log1p(-u1)) * math.cos(_TWO_PI * u2)


@njit(cache=True)
def new_state(key, stream):
    s = np.zeros(STATE_SIZE, dtype=np.uint64)
    s[_KEY] = np.uint64(key)
    s[_STREAM] = np.uint64(stream)
    return s


@njit(cache=True)
def next_uniform(s):
    """Next uniform on [0, 1) of a sequential stream."""
    if s[_HAS_BUF] != 0:
        s[_HAS_BUF] = 0
        return float(s[_BUF]) * _INV_2_53
    u, w = block_uniforms(s[_KEY], s[_BLOCK], s[_STREAM])
    s[_BLOCK] += np.uint64(1)
    s[_BUF] = np.uint64(w * 9007199254740992.0)
    s[_HAS_BUF] = 1
    return u


@njit(cache=True)
def next_exponential(s, rate):
    return -math.log1p(-next_uniform(s)) / rate


@njit(cache=True)
def next_normal(s):
    u1 = next_uniform(s)
    u2 = next_uniform(s)
    return math.sqrt(-2.0 * math.log1p(-u1)) * math.cos(_TWO_PI * u2)


@njit(cache=True)
def next_below(s, m):
    """Integer uniform on {0, ..., m-1}; bias below 2**-40 for m < 2**13."""
    k = int(next_uniform(s) * m)
    return k if k < m else m - 1


@njit(cache=True)
def fill_uniform(s, out):
    for i in range(out.shape[0]):
        out[i] = next_uniform(s)


class RngState:
    """Sequential Philox stream owned by a single consumer.

    >>> r = RngState(seed=7)
    >>> 0.0 <= r.uniform() < 1.0
    True
    """

    def __init__(self, seed=0, purpose=PURPOSE_ROUTING, stream=0):
        self.seed = int(seed)
        self.purpose = int(purpose)
        self.stream = int(stream)
        self.state = new_state(np.uint64(derive_key(seed, purpose)), np.uint64(stream))

    def uniform(self):
        return next_uniform(self.state)

    def uniforms(self, size):
        out = np.empty(int(size))
        fill_uniform(self.state, out)
        return out

    def exponential(self, rate=1.0):
        return next_exponential(self.state, float(rate))

    def normal(self):
        return next_normal(self.state)

    def below(self, m):
        return next_below(self.state, int(m))

    def __repr__(self):
        return (f"RngState(seed={self.seed}, purpose={self.purpose}, "
                f"stream={self.stream}, block={int(self.state[_BLOCK])})")


@njit(cache=True)
def counter_uniforms(key, n, stream):
    """Uniforms addressed by (index, stream): out[i] uses counter (i, stream)."""
    out = np.empty(n)
    for i in range(n):
        out[i] = block_uniforms(key, i, stream)[0]
    return out


@njit(cache=True)
def id_uniforms(key, ids, stream):
    """out[k] uses counter (ids[k], stream); permuting ids permutes the output."""
    out = np.empty(ids.shape[0])
    for k in range(ids.shape[0]):
        out[k] = block_uniforms(key, ids[k], stream)[0]
    return out
