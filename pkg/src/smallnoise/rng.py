"""Counter-based Gaussian streams built on Threefry-2x32 (20 rounds).

Every random number is a pure function of ``(seed, member, index)``:

* member key  = threefry(key=(seed_lo, seed_hi), counter=(member_lo, member_hi))
* uniform u_c = 53-bit float from threefry(key=member key, counter=(pair, c)), c in {0, 1}
* normals     = Box-Muller on (u_0, u_1): z_{2 pair} = r cos(2 pi u_1), z_{2 pair + 1} = r sin(2 pi u_1)

so ensemble members can be generated in any order, in any batch size, on any number
of workers, and always reproduce the same numbers.
"""
from __future__ import annotations

import numba
import numpy as np

RNG_ALGORITHM = "threefry2x32-20/box-muller/v1"

_M32 = 0xFFFFFFFF


@numba.njit(inline="always", cache=True)
def _rotl(x, r):
    return ((x << np.uint64(r)) | (x >> np.uint64(32 - r))) & np.uint64(0xFFFFFFFF)


@numba.njit(inline="always", cache=True)
def _four(x0, x1, a, b, c, d):
    m = np.uint64(0xFFFFFFFF)
    x0 = (x0 + x1) & m
    x1 = _rotl(x1, a) ^ x0
    x0 = (x0 + x1) & m
    x1 = _rotl(x1, b) ^ x0
    x0 = (x0 + x1) & m
    x1 = _rotl(x1, c) ^ x0
    x0 = (x0 + x1) & m
    x1 = _rotl(x1, d) ^ x0
    return x0, x1


@numba.njit(cache=True)
def _threefry(k0, k1, c0, c1):
    m = np.uint64(0xFFFFFFFF)
    k0 = np.uint64(k0)
    k1 = np.uint64(k1)
    k2 = np.uint64(0x1BD11BDA) ^ k0 ^ k1
    x0 = (np.uint64(c0) + k0) & m
    x1 = (np.uint64(c1) + k1) & m
    x0, x1 = _four(x0, x1, 13, 15, 26, 6)
    x0 = (x0 + k1) & m
    x1 = (x1 + k2 + np.uint64(1)) & m
    x0, x1 = _four(x0, x1, 17, 29, 16, 24)
    x0 = (x0 + k2) & m
    x1 = (x1 + k0 + np.uint64(2)) & m
    x0, x1 = _four(x0, x1, 13, 15, 26, 6)
    x0 = (x0 + k0) & m
    x1 = (x1 + k1 + np.uint64(3)) & m
    x0, x1 = _four(x0, x1, 17, 29, 16, 24)
    x0 = (x0 + k1) & m
    x1 = (x1 + k2 + np.uint64(4)) & m
    x0, x1 = _four(x0, x1, 13, 15, 26, 6)
    x0 = (x0 + k2) & m
    x1 = (x1 + k0 + np.uint64(5)) & m
    return x0, x1


def threefry2x32(key: tuple[int, int], counter: tuple[int, int]) -> tuple[int, int]:
    """One block of Threefry-2x32-20; all words are unsigned 32-bit integers."""
    x0, x1 = _threefry(key[0] & _M32, key[1] & _M32, counter[0] & _M32, counter[1] & _M32)
    return int(x0), int(x1)


@numba.njit(inline="always", cache=True)
def _uniform(k0, k1, pair, c):
    a, b = _threefry(k0, k1, pair, c)
    # (a >> 5, b >> 6) -> 53-bit mantissa; the +0.5 keeps u strictly inside (0, 1)
    return ((a >> np.uint64(5)) * 67108864.0 + (b >> np.uint64(6)) + 0.5) / 9007199254740992.0


@numba.njit(cache=True)
def _member_keys(seed_lo, seed_hi, members, out):
    m = np.uint64(0xFFFFFFFF)
    for i in range(members.shape[0]):
        mi = np.uint64(members[i])
        a, b = _threefry(seed_lo, seed_hi, mi & m, mi >> np.uint64(32))
        out[i, 0] = a
        out[i, 1] = b


@numba.njit(cache=True)
def _normals(keys, start, count, out):
    two_pi = 2.0 * np.pi
    for i in range(keys.shape[0]):
        k0 = keys[i, 0]
        k1 = keys[i, 1]
        j = start
        end = start + count
        while j < end:
            pair = j >> 1
            u0 = _uniform(k0, k1, pair, 0)
            u1 = _uniform(k0, k1, pair, 1)
            r = np.sqrt(-2.0 * np.log(u0))
            if (j & 1) == 0:
                out[i, j - start] = r * np.cos(two_pi * u1)
                if j + 1 < end:
                    out[i, j + 1 - start] = r * np.sin(two_pi * u1)
                j += 2
            else:
                out[i, j - start] = r * np.sin(two_pi * u1)
                j += 1


def member_keys(seed: int, members) -> np.ndarray:
    """Per-member Threefry keys, shape ``(len(members), 2)`` uint64 holding 32-bit words."""
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    members = np.ascontiguousarray(members, dtype=np.uint64)
    out = np.empty((members.shape[0], 2), dtype=np.uint64)
    _member_keys(np.uint64(seed & _M32), np.uint64(seed >> 32), members, out)
    return out


def member_seed(seed: int, member: int) -> int:
    """64-bit integer identifying a member's stream (the two key words packed)."""
    k = member_keys(seed, [member])[0]
    return int(k[0]) | (int(k[1]) << 32)


def normals(keys: np.ndarray, start: int, count: int) -> np.ndarray:
    """Standard normals ``z[member, start:start+count]`` of each member's stream."""
    if start < 0 or count < 0:
        raise ValueError("start and count must be non-negative")
    if (start + count) // 2 >= 2**32:
        raise ValueError("stream index exceeds 2^33 normals per member")
    out = np.empty((keys.shape[0], count))
    _normals(np.ascontiguousarray(keys, dtype=np.uint64), start, count, out)
    return out


class CounterStream:
    """Convenience wrapper: sequential normals for a batch of members."""

    def __init__(self, seed: int, members):
        self.seed = int(seed)
        self.members = np.asarray(members, dtype=np.uint64)
        self.keys = member_keys(seed, self.members)
        self.position = 0

    def next(self, count: int) -> np.ndarray:
        z = normals(self.keys, self.position, count)
        self.position += count
        return z
