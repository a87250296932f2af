"""Counter-based hashing used for every random quantity in the package.

All randomness is a pure function of ``(seed, stream, site, counter)``.  The
mixing function is the SplitMix64 finalizer; the j-th draw of a site is the
j-th output of a SplitMix64 sequence whose state is the site key.  The
pure-Python helpers here and the numba versions in :mod:`arwssm.kernels`
produce bit-identical results.
"""

import math

MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MUL1 = 0xBF58476D1CE4E5B9
MUL2 = 0x94D049BB133111EB
INV53 = 1.0 / (1 << 53)

# independent streams derived from one master seed
INSTRUCTIONS = 1
POISSON = 2
THINNING = 3
CLOCKS = 4
TAIL = 5
SCHEDULE = 6


def mix64(z: int) -> int:
    z &= MASK
    z = ((z ^ (z >> 30)) * MUL1) & MASK
    z = ((z ^ (z >> 27)) * MUL2) & MASK
    return z ^ (z >> 31)


def stream_base(seed: int, stream: int) -> int:
    return mix64(seed + stream * GOLDEN)


def site_key(base: int, site) -> int:
    """Fold the coordinates of ``site`` into the stream base."""
    k = base
    for c in site:
        k = mix64(k ^ (c & MASK))
    return k


def draw(key: int, j: int) -> int:
    """j-th 64-bit output attached to ``key`` (j >= 1)."""
    return mix64(key + j * GOLDEN)


def to_unit(h: int) -> float:
    """Uniform in [0, 1) from the top 53 bits."""
    return (h >> 11) * INV53


def uniform(key: int, j: int) -> float:
    return to_unit(draw(key, j))


def exponential(key: int, j: int) -> float:
    return -math.log1p(-uniform(key, j))


def derive_seed(seed: int, *labels: int) -> int:
    """Child seed of ``seed`` for integer labels, e.g. a replica index."""
    k = mix64(seed ^ 0x5851F42D4C957F2D)
    for lab in labels:
        k = mix64(k + (lab & MASK) * GOLDEN)
    return k


def poisson_inverse(u: float, mu: float) -> int:
    """Poisson(mu) quantile of ``u`` by sequential inversion."""
    if mu <= 0.0:
        return 0
    p = math.exp(-mu)
    cdf = p
    k = 0
    while u >= cdf and p > 0.0:
        k += 1
        p *= mu / k
        cdf += p
    return k
