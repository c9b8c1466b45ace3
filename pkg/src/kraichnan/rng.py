"""Counter-based random numbers (Threefry-2x32, 20 rounds) in numpy.

Every draw is a pure function of (key, counter), so a path's noise does not
depend on how paths are scheduled across workers.  The key is the 64-bit
master seed; the counter is (path index, draw index).
"""
import hashlib

import numpy as np

_ROT = (13, 15, 26, 6, 17, 29, 16, 24)
_PARITY = np.uint32(0x1BD11BDA)
_TWO_PI = 2.0 * np.pi


def _rotl(x, r):
    return (x << np.uint32(r)) | (x >> np.uint32(32 - r))


def threefry2x32(key, c0, c1, rounds=20):
    """Threefry-2x32 block function; key is a pair of uint32, c0/c1 arrays."""
    k0 = np.uint32(key[0])
    k1 = np.uint32(key[1])
    ks = (k0, k1, np.uint32(_PARITY ^ k0 ^ k1))
    with np.errstate(over="ignore"):
        x0 = np.asarray(c0, dtype=np.uint32) + ks[0]
        x1 = np.asarray(c1, dtype=np.uint32) + ks[1]
        for r in range(rounds):
            x0 = x0 + x1
            x1 = _rotl(x1, _ROT[r % 8])
            x1 = x1 ^ x0
            if r % 4 == 3:
                s = (r + 1) // 4
                x0 = x0 + ks[s % 3]
                x1 = x1 + ks[(s + 1) % 3] + np.uint32(s)
    return x0, x1


def seed_key(seed):
    seed = int(seed)
    if not 0 <= seed < 2 ** 64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return (seed & 0xFFFFFFFF, seed >> 32)


def derive_seed(seed, *labels):
    """Deterministic child seed for a named sub-stream of ``seed``."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode())
    for lab in labels:
        h.update(b"/")
        h.update(str(lab).encode())
    return int.from_bytes(h.digest(), "little")


def uniforms(seed, stream, counter):
    """Two arrays of uniforms in (0, 1) for counters (stream, counter)."""
    a, b = threefry2x32(seed_key(seed), stream, counter)
    scale = 2.0 ** -32
    return (a.astype(float) + 0.5) * scale, (b.astype(float) + 0.5) * scale


def normals(seed, stream, step, dim):
    """Standard normals of shape (len(stream), dim) for draw number ``step``.

    Uses ceil(dim / 2) Threefry calls per row with counters
    (stream, step * ncall + j) and the Box-Muller transform.
    """
    stream = np.asarray(stream, dtype=np.uint32)
    step = np.asarray(step, dtype=np.uint64)
    ncall = (dim + 1) // 2
    out = np.empty((stream.shape[0], 2 * ncall))
    base = step * np.uint64(ncall)
    for j in range(ncall):
        ctr = (base + np.uint64(j)).astype(np.uint32)
        u1, u2 = uniforms(seed, stream, ctr)
        rad = np.sqrt(-2.0 * np.log(u1))
        ang = _TWO_PI * u2
        out[:, 2 * j] = rad * np.cos(ang)
        out[:, 2 * j + 1] = rad * np.sin(ang)
    return out[:, :dim]


def resample_indices(seed, n, reps):
    """Bootstrap index table (reps, n) from a numpy generator seeded by ``seed``."""
    rng = np.random.Generator(np.random.Philox(key=int(seed) % (2 ** 64)))
    return rng.integers(0, n, size=(reps, n))
