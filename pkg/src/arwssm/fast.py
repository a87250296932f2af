"""Array front end for the compiled one-dimensional kernels."""

from __future__ import annotations

import numpy as np

from . import kernels
from .engine import DEFAULT_CAP, Odometer, StabilizationResult
from .lattice import Box, Configuration, InstructionField, Model


def field_arrays(fld: InstructionField):
    """``(cuts, offsets)`` arrays matching the field's instruction decoding."""
    if fld.dim != 1:
        raise ValueError("compiled kernels are one-dimensional")
    if fld.overlay or fld.neutralize:
        raise ValueError("compiled kernels need a plain field without overlay")
    cuts = np.array(fld.cuts, dtype=np.float64)
    offs = np.array([z[0] for z in fld.kernel.offsets], dtype=np.int64)
    return cuts, offs


def supports(fld: InstructionField) -> bool:
    return fld.dim == 1 and not fld.overlay and not fld.neutralize


class Strip:
    """Array image of the interval ``[a - r, b + r]`` around ``V = [a, b]``."""

    def __init__(self, fld: InstructionField, a: int, b: int):
        self.reach = fld.kernel.reach
        self.first = a - self.reach
        self.size = b - a + 1 + 2 * self.reach
        self.lo = self.reach
        self.hi = self.reach + b - a + 1
        self.keys = kernels.site_keys(np.uint64(fld.master_seed), 1, self.first, self.size)
        self.cuts, self.offs = field_arrays(fld)

    def index(self, x: int) -> int:
        return x - self.first


def stabilize_fast(model: Model, eta: Configuration, V: Box, fld: InstructionField,
                   cap: int = DEFAULT_CAP) -> StabilizationResult:
    """Same result as :func:`arwssm.engine.stabilize` for 1-d plain fields."""
    (a,), (b,) = V.lo, V.hi
    strip = Strip(fld, a, b)
    codes = np.zeros(strip.size, np.int64)
    far = {}
    for (x,), c in eta.codes().items():
        i = strip.index(x)
        if 0 <= i < strip.size:
            codes[i] = c
        else:
            far[(x,)] = 1 if model.instant_sleep and c == 2 else c
    if model.instant_sleep:
        codes[codes == 2] = 1
    half = np.zeros(strip.size, np.int64)
    stack = np.empty(strip.size + 2, np.int64)
    cand = [i for i in range(strip.lo, strip.hi) if _unstable(codes[i], model)]
    sp = len(cand)
    stack[:sp] = cand[::-1]
    if kernels.is_binary(strip.cuts, strip.offs):
        policy = "fifo"
        status, total = kernels.relax_binary(codes, half, strip.keys, strip.lo, strip.hi, model.is_ssm,
                                             stack, 0, sp, 0, cap, 0, -1)
    else:
        policy = "lifo"
        status, total, _ = kernels.relax(codes, half, strip.keys, strip.lo, strip.hi, strip.offs, strip.cuts,
                                         model.is_ssm, model.instant_sleep, stack, sp, 0, cap, 0, -1)
    final = dict(far)
    odo = {}
    for i in np.flatnonzero(codes):
        final[(int(i) + strip.first,)] = int(codes[i])
    for i in np.flatnonzero(half):
        odo[(int(i) + strip.first,)] = int(half[i])
    return StabilizationResult(Odometer(odo, 1), Configuration(final, 1), status == kernels.CAPPED,
                               None, policy, cap, fld.master_seed, int(total))


def _unstable(c: int, model: Model) -> bool:
    if model.is_ssm:
        return c >= 4
    return c >= 2 and not c & 1


def particles(seed: int, a: int, b: int, ceiling: float):
    """Sites and thinning uniforms of the Poisson(ceiling) field on ``[a, b]``, sorted by uniform."""
    sites, us = kernels.poisson_particles(np.uint64(seed), a, b - a + 1, float(ceiling))
    order = np.lexsort((sites, us))
    return sites[order], us[order]
