"""Sites, particle states, configurations, jump kernels and instruction fields.

Particle states live in the ordered set ``0 < rho < 1 < 2 < ...``.  Internally
a state is stored as an integer *code* ``2 * count - sleeping`` so that
``0 -> 0``, ``rho -> 1`` and ``n -> 2n``; integer order on codes is the order
on states.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import total_ordering
from itertools import product
from typing import Iterable, Iterator, Mapping

import numpy as np

from . import rng

Site = tuple


class IllegalSleep(ValueError):
    pass


class IllegalMove(ValueError):
    pass


# ---------------------------------------------------------------- states

def count_of(code: int) -> int:
    return (code + 1) // 2


def code_add(a: int, b: int) -> int:
    if a + b == 1:
        return 1
    return 2 * (count_of(a) + count_of(b))


def code_sleep(code: int) -> int:
    if code <= 1:
        raise IllegalSleep("sleep needs an active particle at the site")
    return 1 if code == 2 else code


@total_ordering
@dataclass(frozen=True)
class ParticleState:
    count: int = 0
    sleeping: bool = False

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("negative particle count")
        if self.sleeping and self.count != 1:
            raise ValueError("only a single particle can be sleeping")

    @classmethod
    def from_code(cls, code: int) -> ParticleState:
        return cls(count_of(code), code == 1)

    @property
    def code(self) -> int:
        return 2 * self.count - self.sleeping

    def __abs__(self) -> int:
        return self.count

    def __lt__(self, other):
        if not isinstance(other, ParticleState):
            return NotImplemented
        return self.code < other.code

    def __str__(self):
        return "rho" if self.sleeping else str(self.count)


ZERO = ParticleState(0)
RHO = ParticleState(1, True)


def state(value) -> ParticleState:
    """Coerce ``0, 1, 2, ...`` or ``"rho"`` to a state."""
    if isinstance(value, ParticleState):
        return value
    if value in ("rho", "ρ"):
        return RHO
    return ParticleState(int(value))


def state_add(a: ParticleState, b: ParticleState) -> ParticleState:
    return ParticleState.from_code(code_add(a.code, b.code))


def state_sleep(a: ParticleState) -> ParticleState:
    return ParticleState.from_code(code_sleep(a.code))


# ---------------------------------------------------------------- sites

def as_site(x, dim: int | None = None) -> Site:
    s = (int(x),) if hasattr(x, "__index__") else tuple(int(c) for c in x)
    if dim is not None and len(s) != dim:
        raise ValueError(f"site {s} is not {dim}-dimensional")
    return s


def add_sites(x: Site, z: Site) -> Site:
    return tuple(a + b for a, b in zip(x, z))


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``lo <= x <= hi`` (inclusive, componentwise)."""

    lo: Site
    hi: Site

    def __post_init__(self):
        object.__setattr__(self, "lo", as_site(self.lo))
        object.__setattr__(self, "hi", as_site(self.hi, len(self.lo)))

    @classmethod
    def interval(cls, a: int, b: int) -> Box:
        return cls((a,), (b,))

    @classmethod
    def centered(cls, radius: int, dim: int = 1) -> Box:
        return cls((-radius,) * dim, (radius,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lo)

    def __contains__(self, x) -> bool:
        return all(a <= c <= b for a, c, b in zip(self.lo, x, self.hi))

    def __iter__(self) -> Iterator[Site]:
        return iter(product(*(range(a, b + 1) for a, b in zip(self.lo, self.hi))))

    def __len__(self) -> int:
        return math.prod(max(0, b - a + 1) for a, b in zip(self.lo, self.hi))

    def contains_box(self, other: Box) -> bool:
        return len(other) == 0 or (other.lo in self and other.hi in self)


# ---------------------------------------------------------------- configurations

class Configuration:
    """Finitely supported map site -> state; absent sites hold state 0.

    Instances are treated as immutable: every modifier returns a copy.
    """

    __slots__ = ("dim", "_codes")

    def __init__(self, codes: Mapping[Site, int] | None = None, dim: int = 1):
        self.dim = dim
        self._codes = {x: c for x, c in (codes or {}).items() if c}

    @classmethod
    def from_states(cls, states: Mapping, dim: int | None = None) -> Configuration:
        items = {as_site(x): state(v) for x, v in states.items()}
        if dim is None:
            dim = len(next(iter(items))) if items else 1
        return cls({as_site(x, dim): s.code for x, s in items.items()}, dim)

    @classmethod
    def from_counts(cls, counts: Iterable[int], start: int = 0) -> Configuration:
        """One-dimensional configuration of active particles from a count list."""
        return cls({(start + i,): 2 * int(n) for i, n in enumerate(counts)}, 1)

    def code(self, x) -> int:
        return self._codes.get(x, 0)

    def codes(self) -> dict:
        return dict(self._codes)

    def __getitem__(self, x) -> ParticleState:
        return ParticleState.from_code(self._codes.get(as_site(x, self.dim), 0))

    def __iter__(self):
        return iter(sorted(self._codes))

    def __len__(self) -> int:
        return len(self._codes)

    def count(self, x) -> int:
        return count_of(self._codes.get(as_site(x, self.dim), 0))

    def total(self) -> int:
        return sum(count_of(c) for c in self._codes.values())

    def with_state(self, x, s) -> Configuration:
        codes = dict(self._codes)
        codes[as_site(x, self.dim)] = state(s).code
        return Configuration(codes, self.dim)

    def restrict(self, region) -> Configuration:
        return Configuration({x: c for x, c in self._codes.items() if x in region}, self.dim)

    def particles(self) -> list:
        """Sites listed with multiplicity, in lexicographic order."""
        return [x for x in sorted(self._codes) for _ in range(count_of(self._codes[x]))]

    def __eq__(self, other):
        if isinstance(other, Configuration):
            return self.dim == other.dim and self._codes == other._codes
        return NotImplemented

    def __hash__(self):
        return hash((self.dim, frozenset(self._codes.items())))

    def __le__(self, other: Configuration) -> bool:
        """Pointwise order on states."""
        return all(c <= other.code(x) for x, c in self._codes.items())

    def __repr__(self):
        body = ", ".join(f"{_fmt_site(x)}:{ParticleState.from_code(c)}" for x, c in sorted(self._codes.items()))
        return f"Configuration({{{body}}})"

    def to_text(self) -> str:
        lines = [f"{_fmt_site(x)} {count_of(c)} {int(c == 1)}" for x, c in sorted(self._codes.items())]
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_text(cls, text: str, dim: int | None = None) -> Configuration:
        codes = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            coords, n, sleeping = line.rsplit(maxsplit=2)
            x = tuple(int(c) for c in coords.split(","))
            codes[x] = ParticleState(int(n), bool(int(sleeping))).code
        if dim is None:
            dim = len(next(iter(codes))) if codes else 1
        return cls(codes, dim)


def _fmt_site(x: Site) -> str:
    return ",".join(str(c) for c in x)


# ---------------------------------------------------------------- kernels and models

@dataclass(frozen=True)
class JumpKernel:
    offsets: tuple
    probs: tuple
    degenerate: bool = False

    def __post_init__(self):
        pairs = sorted(zip((as_site(z) for z in self.offsets), (float(p) for p in self.probs)))
        if not pairs:
            raise ValueError("empty jump kernel")
        dims = {len(z) for z, _ in pairs}
        if len(dims) != 1:
            raise ValueError("offsets of mixed dimension")
        if any(all(c == 0 for c in z) for z, _ in pairs):
            raise ValueError("p(0) must be zero")
        if any(p < 0 for _, p in pairs) or not math.isclose(sum(p for _, p in pairs), 1.0, abs_tol=1e-12):
            raise ValueError("jump probabilities must be nonnegative and sum to one")
        if dims == {1} and not self.degenerate:
            signs = {z[0] > 0 for z, p in pairs if p > 0}
            if signs != {True, False}:
                raise ValueError("one-dimensional kernel needs jumps of both signs")
        object.__setattr__(self, "offsets", tuple(z for z, _ in pairs))
        object.__setattr__(self, "probs", tuple(p for _, p in pairs))

    @classmethod
    def nearest_neighbor(cls, dim: int = 1) -> JumpKernel:
        offs = []
        for i in range(dim):
            for s in (-1, 1):
                z = [0] * dim
                z[i] = s
                offs.append(tuple(z))
        return cls(tuple(offs), (1.0 / len(offs),) * len(offs))

    @classmethod
    def biased_1d(cls, p_right: float) -> JumpKernel:
        return cls(((-1,), (1,)), (1.0 - p_right, p_right), degenerate=p_right in (0.0, 1.0))

    @property
    def dim(self) -> int:
        return len(self.offsets[0])

    @property
    def symmetric_nn_1d(self) -> bool:
        return self.offsets == ((-1,), (1,)) and self.probs[0] == self.probs[1]

    @property
    def reach(self) -> int:
        return max(max(abs(c) for c in z) for z in self.offsets)


def parse_lambda(value) -> Fraction | float:
    """Sleep rate as an exact rational, or ``math.inf``."""
    if isinstance(value, str) and value.strip().lower() in ("inf", "+inf", "infinity"):
        return math.inf
    if isinstance(value, float) and math.isinf(value):
        return math.inf
    lam = Fraction(value) if not isinstance(value, str) else Fraction(value.strip())
    if lam < 0:
        raise ValueError("sleep rate must be nonnegative")
    return lam


@dataclass(frozen=True)
class Model:
    """``kind`` is ``"arw"`` or ``"ssm"``; ``lam`` is the ARW sleep rate."""

    kind: str
    lam: Fraction | float = Fraction(0)

    def __post_init__(self):
        if self.kind not in ("arw", "ssm"):
            raise ValueError(f"unknown model {self.kind!r}")
        object.__setattr__(self, "lam", parse_lambda(self.lam) if self.kind == "arw" else Fraction(0))

    @classmethod
    def arw(cls, lam=1) -> Model:
        return cls("arw", lam)

    @classmethod
    def ssm(cls) -> Model:
        return cls("ssm")

    @property
    def is_ssm(self) -> bool:
        return self.kind == "ssm"

    @property
    def instant_sleep(self) -> bool:
        """ARW with infinite sleep rate: lone particles fall asleep at once."""
        return self.kind == "arw" and math.isinf(self.lam)

    @property
    def sleep_probability(self) -> float:
        if self.kind == "ssm" or self.instant_sleep:
            return 0.0
        return float(self.lam / (1 + self.lam))

    @property
    def rate_factor(self) -> float:
        """Per-particle event rate of an active ARW particle (1 + lambda)."""
        if self.kind == "ssm" or self.instant_sleep:
            return 1.0
        return float(1 + self.lam)

    def __str__(self):
        if self.kind == "ssm":
            return "ssm"
        return f"arw(lambda={'inf' if self.instant_sleep else self.lam})"


# ---------------------------------------------------------------- instructions

SLEEP = -1
NEUTRAL = -2


@dataclass(frozen=True)
class Instruction:
    kind: str
    offset: Site | None = None

    def __str__(self):
        return f"jump{_fmt_site(self.offset)}" if self.kind == "jump" else self.kind


SLEEP_INSTRUCTION = Instruction("sleep")
NEUTRAL_INSTRUCTION = Instruction("neutral")


def jump(z) -> Instruction:
    return Instruction("jump", as_site(z))


@dataclass(frozen=True, eq=False)
class InstructionField:
    """Pure map ``(site, index) -> instruction``.

    ``overlay`` replaces individual entries; ``neutralize`` turns every Sleep
    not listed in ``keep`` into a Neutral instruction.
    """

    master_seed: int
    model: Model
    kernel: JumpKernel = field(default_factory=JumpKernel.nearest_neighbor)
    overlay: Mapping = field(default_factory=dict)
    neutralize: bool = False
    keep: frozenset = frozenset()

    def __post_init__(self):
        s = self.model.sleep_probability
        cum = [s + (1.0 - s) * c for c in _cumsum(self.kernel.probs)[:-1]] + [math.inf]
        object.__setattr__(self, "_sleep_cut", s)
        object.__setattr__(self, "_cuts", tuple(cum))
        object.__setattr__(self, "_base", rng.stream_base(self.master_seed, rng.INSTRUCTIONS))
        object.__setattr__(self, "_keys", {})
        object.__setattr__(self, "_stacks", {})
        object.__setattr__(self, "_memo", [0])
        object.__setattr__(self, "_cut_array", None)
        ov = {}
        for (x, j), ins in dict(self.overlay).items():
            ov[(as_site(x), int(j))] = ins if isinstance(ins, int) else self._encode(ins)
        object.__setattr__(self, "overlay", ov)
        object.__setattr__(self, "keep", frozenset((as_site(x), int(j)) for x, j in self.keep))

    @property
    def dim(self) -> int:
        return self.kernel.dim

    @property
    def cuts(self) -> tuple:
        """Thresholds on the unit draw: below the first is Sleep, then each jump."""
        return (self._sleep_cut,) + self._cuts

    def _encode(self, ins: Instruction) -> int:
        if ins.kind == "sleep":
            return SLEEP
        if ins.kind == "neutral":
            return NEUTRAL
        return self.kernel.offsets.index(ins.offset)

    def decode(self, code: int) -> Instruction:
        if code == SLEEP:
            return SLEEP_INSTRUCTION
        if code == NEUTRAL:
            return NEUTRAL_INSTRUCTION
        return Instruction("jump", self.kernel.offsets[code])

    def key(self, x: Site) -> int:
        k = self._keys.get(x)
        if k is None:
            k = rng.site_key(self._base, x)
            if len(self._keys) < 1 << 20:
                self._keys[x] = k
        return k

    def _draw_code(self, key: int, j: int) -> int:
        u = rng.uniform(key, j)
        if u < self._sleep_cut:
            return SLEEP
        return bisect.bisect_right(self._cuts, u)

    def base_block(self, x: Site, first: int, count: int) -> list:
        """Unmodified codes of indices ``first .. first+count-1`` at ``x`` (compiled decoder)."""
        from . import kernels

        if self._cut_array is None:
            object.__setattr__(self, "_cut_array", np.array(self.cuts, dtype=np.float64))
        return kernels.decode_block(np.uint64(self.key(x)), first, count, self._cut_array).tolist()

    def block(self, x: Site, first: int, count: int) -> list:
        """Codes of indices ``first .. first+count-1`` at ``x``, overlay and neutralization applied."""
        codes = self.base_block(x, first, count)
        if self.overlay or self.neutralize:
            codes = [self.code_at(x, first + i) for i in range(count)]
        return codes

    def base_code(self, x: Site, j: int) -> int:
        # stacks are decoded in blocks and memoized, since runs read them in order
        st = self._stacks.get(x)
        if st is None:
            st = self._stacks[x] = []
        n = len(st)
        if j <= n:
            return st[j - 1]
        if j > n + 64 or self._memo[0] > 1 << 24:
            return self._draw_code(self.key(x), j)
        grow = max(j - n, 32)
        self._memo[0] += grow
        st.extend(self.base_block(x, n + 1, grow))
        return st[j - 1]

    def reader(self):
        """Fast ``(site, index) -> code`` function equivalent to :meth:`code_at`."""
        if self.overlay or self.neutralize:
            return self.code_at
        stacks, base_code = self._stacks, self.base_code

        def read(x, j):
            st = stacks.get(x)
            if st is not None and j <= len(st):
                return st[j - 1]
            return base_code(x, j)
        return read

    def code_at(self, x: Site, j: int) -> int:
        c = self.overlay.get((x, j)) if self.overlay else None
        if c is None:
            c = self.base_code(x, j)
        if c == SLEEP and self.neutralize and (x, j) not in self.keep:
            return NEUTRAL
        return c

    def with_overlay(self, entries: Mapping) -> InstructionField:
        ov = dict(self.overlay)
        for (x, j), ins in entries.items():
            ov[(as_site(x), int(j))] = ins if isinstance(ins, int) else self._encode(ins)
        return InstructionField(self.master_seed, self.model, self.kernel, ov, self.neutralize, self.keep)


def _cumsum(xs):
    out, acc = [], 0.0
    for v in xs:
        acc += v
        out.append(acc)
    return out


def instruction_at(fld: InstructionField, x, j: int) -> Instruction:
    if j < 1:
        raise ValueError("instruction indices start at 1")
    return fld.decode(fld.code_at(as_site(x, fld.dim), j))


def apply_instruction(eta: Configuration, x, ins: Instruction) -> Configuration:
    x = as_site(x, eta.dim)
    codes = eta.codes()
    c = codes.get(x, 0)
    if ins.kind == "neutral":
        return eta
    if ins.kind == "sleep":
        if c <= 1:
            raise IllegalMove(f"sleep at {x} needs an active particle")
        codes[x] = code_sleep(c)
        return Configuration(codes, eta.dim)
    if c < 2 or c % 2:
        raise IllegalMove(f"jump at {x} needs an active particle")
    y = add_sites(x, ins.offset)
    codes[x] = c - 2
    codes[y] = code_add(codes.get(y, 0), 2)
    return Configuration(codes, eta.dim)


# ---------------------------------------------------------------- initial laws

def poisson_counts(seed: int, box: Box, mu: float, ceiling: float | None = None) -> dict:
    """Particle counts on ``box`` as a thinned Poisson(ceiling) field.

    Each site draws Poisson(ceiling) particles; particle ``m`` at ``x`` is kept
    iff its thinning uniform is below ``mu / ceiling``.  Runs with the same
    seed and ceiling are therefore nested in ``mu`` and across boxes.
    """
    ceiling = mu if ceiling is None else ceiling
    if mu < 0 or mu > ceiling:
        raise ValueError("need 0 <= mu <= ceiling")
    counts = {}
    if mu == 0:
        return counts
    pbase = rng.stream_base(seed, rng.POISSON)
    tbase = rng.stream_base(seed, rng.THINNING)
    ratio = mu / ceiling
    for x in box:
        n = rng.poisson_inverse(rng.uniform(rng.site_key(pbase, x), 1), ceiling)
        if n and ratio < 1.0:
            tk = rng.site_key(tbase, x)
            n = sum(rng.uniform(tk, m) < ratio for m in range(1, n + 1))
        if n:
            counts[x] = n
    return counts


def sample_poisson_config(seed: int, mu, box: Box, ceiling=None) -> Configuration:
    mu = float(mu)
    counts = poisson_counts(seed, box, mu, None if ceiling is None else float(ceiling))
    return Configuration({x: 2 * n for x, n in counts.items()}, box.dim)
