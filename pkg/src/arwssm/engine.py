"""Topplings, half-topplings and finite-volume stabilization on Z^d.

Odometers are kept in half-units: an ARW toppling or an SSM full toppling
adds 2, an SSM half-toppling adds 1.
"""

from __future__ import annotations

import heapq
import random
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from .lattice import (
    SLEEP,
    Box,
    Configuration,
    InstructionField,
    Model,
    add_sites,
    as_site,
    code_sleep,
    _fmt_site,
)

DEFAULT_CAP = 10**9


class IllegalToppling(ValueError):
    pass


class IllegalHalfToppling(ValueError):
    pass


class MonotonicityViolation(AssertionError):
    pass


class LeastActionViolation(AssertionError):
    pass


class SiteStatus(Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    SEMI_UNSTABLE = "semi-unstable"
    SEMI_STABLE = "semi-stable"


class Odometer:
    """Per-site toppling counts in half-units."""

    __slots__ = ("dim", "half_counts")

    def __init__(self, half_counts=None, dim: int = 1):
        self.dim = dim
        self.half_counts = {x: h for x, h in (half_counts or {}).items() if h}

    def __getitem__(self, x) -> int:
        return self.half_counts.get(as_site(x, self.dim), 0)

    def topplings(self, x) -> float:
        """Number of (full) topplings at ``x``; halves show up as .5."""
        return self[x] / 2

    def total(self) -> int:
        return sum(self.half_counts.values())

    def support(self) -> list:
        return sorted(self.half_counts)

    def __eq__(self, other):
        if isinstance(other, Odometer):
            return self.dim == other.dim and self.half_counts == other.half_counts
        return NotImplemented

    def __le__(self, other: Odometer) -> bool:
        return all(h <= other.half_counts.get(x, 0) for x, h in self.half_counts.items())

    def __repr__(self):
        body = ", ".join(f"{_fmt_site(x)}:{h}" for x, h in sorted(self.half_counts.items()))
        return f"Odometer({{{body}}})"


@dataclass(frozen=True)
class Policy:
    """Scheduling policy: ``fifo``, ``lifo``, ``lex`` or ``random`` (seeded)."""

    name: str = "fifo"
    seed: int = 0

    def __post_init__(self):
        if self.name not in ("fifo", "lifo", "lex", "random"):
            raise ValueError(f"unknown policy {self.name!r}")

    @classmethod
    def parse(cls, text) -> Policy:
        if isinstance(text, Policy):
            return text
        name, _, seed = str(text).lower().partition(":")
        name = {"lexicographic": "lex", "seededrandom": "random"}.get(name, name)
        return cls(name, int(seed) if seed else 0)

    def __str__(self):
        return f"random:{self.seed}" if self.name == "random" else self.name


FIFO = Policy("fifo")
LIFO = Policy("lifo")
LEX = Policy("lex")


@dataclass
class StabilizationResult:
    odometer: Odometer
    final: Configuration
    truncated: bool
    trace: list | None = None
    policy: str = "fifo"
    cap: int = DEFAULT_CAP
    seed: int = 0
    half_topplings: int = 0

    def to_text(self) -> str:
        head = (
            f"# seed={self.seed} policy={self.policy} cap={self.cap} "
            f"truncated={str(self.truncated).lower()} half_topplings={self.half_topplings}\n"
            "site half_count final\n"
        )
        sites = sorted(set(self.odometer.half_counts) | set(self.final.codes()))
        rows = [f"{_fmt_site(x)} {self.odometer.half_counts.get(x, 0)} {self.final[x]}\n" for x in sites]
        return head + "".join(rows)


class WorkingState:
    """Mutable configuration plus odometer, driven by one instruction field."""

    def __init__(self, model: Model, eta: Configuration, fld: InstructionField, odo: Odometer | None = None):
        self.model = model
        self.field = fld
        self.dim = eta.dim
        self.codes = eta.codes()
        self.half = dict(odo.half_counts) if odo is not None else {}
        self.offsets = fld.kernel.offsets
        self.ssm = model.is_ssm
        self.instant = model.instant_sleep
        if self.instant:
            for x, c in self.codes.items():
                if c == 2:
                    self.codes[x] = 1

    def configuration(self) -> Configuration:
        return Configuration(self.codes, self.dim)

    def odometer(self) -> Odometer:
        return Odometer(self.half, self.dim)

    def unstable(self, x) -> bool:
        c = self.codes.get(x, 0)
        if self.ssm:
            return c >= 4
        return c >= 2 and not c & 1

    def status(self, x) -> SiteStatus:
        c = self.codes.get(x, 0)
        if self.unstable(x):
            return SiteStatus.UNSTABLE
        if self.ssm and self.half.get(x, 0) % 2:
            return SiteStatus.SEMI_UNSTABLE if c >= 2 else SiteStatus.SEMI_STABLE
        return SiteStatus.STABLE

    def next_index(self, x) -> int:
        h = self.half.get(x, 0)
        return h + 1 if self.ssm else h // 2 + 1

    def step(self, x):
        """Consume the next instruction at ``x``; return the landing site or None."""
        half = self.half
        h = half.get(x, 0)
        if self.ssm:
            half[x] = h + 1
            ins = self.field.code_at(x, h + 1)
        else:
            half[x] = h + 2
            ins = self.field.code_at(x, (h >> 1) + 1)
        if ins < 0:
            if ins == SLEEP:
                codes = self.codes
                codes[x] = code_sleep(codes.get(x, 0))
            return None
        codes = self.codes
        y = add_sites(x, self.offsets[ins])
        c = codes[x] - 2
        d = codes.get(y, 0)
        d = d + 2 + (d & 1)
        if self.instant:
            c = 1 if c == 2 else c
            d = 1 if d == 2 else d
        codes[x] = c
        codes[y] = d
        return y

    def topple(self, x) -> list:
        if self.ssm:
            return [self.step(x), self.step(x)]
        return [self.step(x)]


def is_unstable(model: Model, eta: Configuration, x, odo: Odometer | None = None) -> SiteStatus:
    x = as_site(x, eta.dim)
    c = eta.code(x)
    if model.is_ssm:
        if c >= 4:
            return SiteStatus.UNSTABLE
        if odo is not None and odo[x] % 2:
            return SiteStatus.SEMI_UNSTABLE if c >= 2 else SiteStatus.SEMI_STABLE
        return SiteStatus.STABLE
    if model.instant_sleep:
        return SiteStatus.UNSTABLE if c >= 4 else SiteStatus.STABLE
    return SiteStatus.UNSTABLE if c >= 2 and not c & 1 else SiteStatus.STABLE


def topple(model: Model, eta: Configuration, odo: Odometer, x, fld: InstructionField,
           semi_legal: bool = False):
    """One toppling of ``x``; returns the new ``(configuration, odometer)``.

    With ``semi_legal`` an SSM toppling is performed as two half-topplings,
    each of which only needs a grain at ``x``.
    """
    x = as_site(x, eta.dim)
    ws = WorkingState(model, eta, fld, odo)
    if semi_legal and model.is_ssm:
        for _ in range(2):
            if ws.codes.get(x, 0) < 2:
                raise IllegalToppling(f"no grain left at {x}")
            ws.step(x)
        return ws.configuration(), ws.odometer()
    if not ws.unstable(x):
        raise IllegalToppling(f"site {x} is not unstable")
    ws.topple(x)
    return ws.configuration(), ws.odometer()


def half_topple(eta: Configuration, odo: Odometer, x, fld: InstructionField, legal: bool = False):
    """SSM half-toppling: send one grain following the next instruction."""
    if not fld.model.is_ssm:
        raise ValueError("half-topplings exist only for the stochastic sandpile")
    x = as_site(x, eta.dim)
    ws = WorkingState(fld.model, eta, fld, odo)
    if ws.codes.get(x, 0) < 2:
        raise IllegalHalfToppling(f"no grain at {x}")
    if legal and ws.status(x) not in (SiteStatus.UNSTABLE, SiteStatus.SEMI_UNSTABLE):
        raise IllegalHalfToppling(f"half-toppling at {x} is only semi-legal")
    ws.step(x)
    return ws.configuration(), ws.odometer()


class _Scheduler:
    def __init__(self, policy: Policy, sites):
        self.policy = policy
        self.members = set()
        if policy.name == "lex":
            self.heap = []
        elif policy.name == "random":
            self.rnd = random.Random(policy.seed)
            self.items = []
            self.pos = {}
        else:
            self.queue = deque()
        for x in sorted(sites):
            self.add(x)

    def __bool__(self):
        return bool(self.members)

    def add(self, x):
        if x in self.members:
            return
        self.members.add(x)
        name = self.policy.name
        if name == "lex":
            heapq.heappush(self.heap, x)
        elif name == "random":
            self.pos[x] = len(self.items)
            self.items.append(x)
        else:
            self.queue.append(x)

    def pop(self):
        name = self.policy.name
        if name == "fifo":
            x = self.queue.popleft()
        elif name == "lifo":
            x = self.queue.pop()
        elif name == "lex":
            x = heapq.heappop(self.heap)
        else:
            i = self.rnd.randrange(len(self.items))
            x = self.items[i]
            last = self.items.pop()
            if last != x:
                self.items[i] = last
                self.pos[last] = i
            del self.pos[x]
        self.members.discard(x)
        return x


def stabilize(model: Model, eta: Configuration, V, fld: InstructionField, policy="fifo",
              cap: int = DEFAULT_CAP, trace: bool = False) -> StabilizationResult:
    """Legally topple sites of ``V`` until all of them are stable.

    Sites outside ``V`` are never toppled and simply accumulate particles.
    Reaching ``cap`` half-topplings stops the run with ``truncated=True``.
    """
    policy = Policy.parse(policy)
    if eta.dim == 1 and fld.dim == 1:
        return _stabilize_line(model, eta, V, fld, policy, cap, trace)
    ws = WorkingState(model, eta, fld)
    codes, half = ws.codes, ws.half
    read = fld.reader()
    ssm, instant = ws.ssm, ws.instant
    rounds, inc = (2, 1) if ssm else (1, 2)
    least = 4 if ssm else 2
    offsets = ws.offsets
    flat = [z[0] for z in offsets] if ws.dim == 1 else None
    inside = V.__contains__
    sched = _Scheduler(policy, [x for x in codes if inside(x) and ws.unstable(x)])
    pop, add = sched.pop, sched.add
    steps = [] if trace else None
    total = 0
    truncated = False
    while sched:
        if total + 2 > cap:
            truncated = True
            break
        x = pop()
        c = codes[x]
        h = half.get(x, 0)
        landed = []
        for _ in range(rounds):
            ins = read(x, h + 1 if ssm else (h >> 1) + 1)
            h += inc
            if ins < 0:
                if ins == SLEEP:
                    c = code_sleep(c)
                continue
            y = (x[0] + flat[ins],) if flat else add_sites(x, offsets[ins])
            c -= 2
            d = codes.get(y, 0)
            d += 2 + (d & 1)
            if instant and d == 2:
                d = 1
            codes[y] = d
            landed.append(y)
        if instant and c == 2:
            c = 1
        codes[x] = c
        half[x] = h
        total += 2
        if steps is not None:
            steps.append((x, "full"))
        new = [y for y in landed if inside(y) and codes[y] >= least and (ssm or not codes[y] & 1)]
        if c >= least and (ssm or not c & 1):
            new.append(x)
        if len(new) > 1:
            new = sorted(set(new))
        for y in new:
            add(y)
    return StabilizationResult(ws.odometer(), ws.configuration(), truncated, steps,
                               str(policy), cap, fld.master_seed, total)


def _line_reader(fld: InstructionField):
    # int-keyed stack memo; plain fields keep it across runs
    if fld.overlay or fld.neutralize:
        stacks = {}
    else:
        stacks = fld.__dict__.setdefault("_line_stacks", {})
        if len(stacks) > 1 << 16:
            stacks.clear()
    block = fld.block

    def fetch(x, j):
        """Stack of ``x`` holding at least ``j`` instructions."""
        st = stacks.get(x)
        if st is None:
            st = stacks[x] = []
        n = len(st)
        if j > n:
            st.extend(block((x,), n + 1, max(32, j - n)))
        return st

    def read(x, j):
        st = stacks.get(x)
        if st is None or j > len(st):
            st = fetch(x, j)
        return st[j - 1]
    read.fetch = fetch
    read.stacks = stacks
    return read


def _stabilize_line(model, eta, V, fld, policy, cap, trace):
    """``stabilize`` on Z with int-keyed state, which is several times faster."""
    codes = {x: c for (x,), c in eta.codes().items()}
    half = {}
    ssm, instant = model.is_ssm, model.instant_sleep
    if instant:
        for x, c in codes.items():
            if c == 2:
                codes[x] = 1
    rounds, inc = (2, 1) if ssm else (1, 2)
    least = 4 if ssm else 2
    flat = [z[0] for z in fld.kernel.offsets]
    reader = _line_reader(fld)
    stacks, fetch = reader.stacks, reader.fetch
    if isinstance(V, Box):
        (lo,), (hi,) = V.lo, V.hi
        inside = lambda y: lo <= y <= hi
    else:
        inside = lambda y: (y,) in V

    def unstable(c):
        return c >= least and (ssm or not c & 1)

    name = policy.name
    if name == "random":
        items = []
        rnd = random.Random(policy.seed)
        push = items.append

        def pop():
            i = rnd.randrange(len(items))
            x = items[i]
            last = items.pop()
            if last != x:
                items[i] = last
            return x
    elif name == "lex":
        items = []
        push = lambda y: heapq.heappush(items, y)
        pop = lambda: heapq.heappop(items)
    else:
        items = deque()
        push = items.append
        pop = items.popleft if name == "fifo" else items.pop
    # every unstable site inside V is queued exactly once
    for x in sorted(codes):
        if inside(x) and unstable(codes[x]):
            push(x)

    steps = [] if trace else None
    total = 0
    truncated = False
    while items:
        if total + 2 > cap:
            truncated = True
            break
        x = pop()
        c = codes[x]
        h = half.get(x, 0)
        j = h + 1 if ssm else (h >> 1) + 1
        st = stacks.get(x)
        if st is None or j + rounds - 1 > len(st):
            st = fetch(x, j + rounds - 1)
        new = []
        for r in range(rounds):
            ins = st[j - 1 + r]
            h += inc
            if ins < 0:
                if ins == SLEEP:
                    c = code_sleep(c)
                continue
            y = x + flat[ins]
            c -= 2
            d0 = codes.get(y, 0)
            d = d0 + 2 + (d0 & 1)
            if instant and d == 2:
                d = 1
            codes[y] = d
            if d >= least and (ssm or not d & 1) and not (d0 >= least and (ssm or not d0 & 1)) and inside(y):
                new.append(y)
        if instant and c == 2:
            c = 1
        codes[x] = c
        half[x] = h
        total += 2
        if steps is not None:
            steps.append(((x,), "full"))
        if c >= least and (ssm or not c & 1):
            new.append(x)
        if len(new) > 1:
            new.sort()
        for y in new:
            push(y)
    final = Configuration({(x,): c for x, c in codes.items()}, 1)
    odo = Odometer({(x,): h for x, h in half.items()}, 1)
    return StabilizationResult(odo, final, truncated, steps, str(policy), cap, fld.master_seed, total)


def _subset(V, W) -> bool:
    if hasattr(W, "contains_box") and hasattr(V, "lo"):
        return W.contains_box(V)
    return all(x in W for x in V)


def stabilize_monotone_pair(model: Model, eta: Configuration, eta2: Configuration, V, V2,
                            fld: InstructionField, policy="fifo", cap: int = DEFAULT_CAP):
    """Stabilize ``(eta, V)`` and ``(eta2, V2)`` on one field and check the ordering."""
    if not eta <= eta2:
        raise ValueError("need eta <= eta2 pointwise")
    if not _subset(V, V2):
        raise ValueError("need V contained in V2")
    r1 = stabilize(model, eta, V, fld, policy, cap)
    r2 = stabilize(model, eta2, V2, fld, policy, cap)
    if not (r1.truncated or r2.truncated) and not r1.odometer <= r2.odometer:
        bad = [x for x, h in r1.odometer.half_counts.items() if h > r2.odometer[x]]
        raise MonotonicityViolation(f"odometer ordering fails at {bad[:5]}")
    return r1, r2


def enforce_activation(fld: InstructionField, keep) -> InstructionField:
    """Field in which every Sleep outside ``keep`` becomes Neutral."""
    if fld.model.is_ssm:
        raise ValueError("enforced activation applies to ARW fields")
    keep = frozenset((as_site(x, fld.dim), int(j)) for x, j in keep)
    return InstructionField(fld.master_seed, fld.model, fld.kernel, fld.overlay, True, keep)


def random_legal_sequence(model: Model, eta: Configuration, V, fld: InstructionField,
                          rnd: random.Random, max_moves: int, half: bool = True):
    """Run a random legal (half-)toppling sequence inside ``V``.

    Returns the working state and the list of moves ``(site, "full"|"half")``.
    SSM sequences mix full topplings with legal half-topplings when ``half``.
    """
    ws = WorkingState(model, eta, fld)
    moves = []
    # active sites as a list with positions, so a uniform pick is O(1)
    items = sorted(x for x in ws.codes if x in V and _legal_any(ws, x, half))
    pos = {x: i for i, x in enumerate(items)}
    while len(moves) < max_moves and items:
        x = items[rnd.randrange(len(items))]
        if model.is_ssm and half and (not _full_is_legal(ws, x) or rnd.random() < 0.5):
            landed = [ws.step(x)]
            moves.append((x, "half"))
        else:
            landed = ws.topple(x)
            moves.append((x, "full"))
        for y in sorted({x, *landed} - {None}):
            if y in V and _legal_any(ws, y, half):
                if y not in pos:
                    pos[y] = len(items)
                    items.append(y)
            elif y in pos:
                i = pos.pop(y)
                last = items.pop()
                if last != y:
                    items[i] = last
                    pos[last] = i
    return ws, moves


def _random_sequence_line(model: Model, eta: Configuration, lo: int, hi: int, fld: InstructionField,
                          rnd: random.Random, max_moves: int, half: bool):
    """``random_legal_sequence`` on Z with ``V = [lo, hi]``, int-keyed; same moves for the same ``rnd``."""
    codes = {x: c for (x,), c in eta.codes().items()}
    ssm, instant = model.is_ssm, model.instant_sleep
    if instant:
        for x, c in codes.items():
            if c == 2:
                codes[x] = 1
    counts = {}
    read = _line_reader(fld)
    flat = [z[0] for z in fld.kernel.offsets]

    def legal(y):
        c = codes.get(y, 0)
        if ssm:
            return c >= 4 or (half and c >= 2 and counts.get(y, 0) & 1)
        return c >= 2 and not c & 1

    def step(x):
        h = counts.get(x, 0)
        if ssm:
            counts[x] = h + 1
            ins = read(x, h + 1)
        else:
            counts[x] = h + 2
            ins = read(x, (h >> 1) + 1)
        if ins < 0:
            if ins == SLEEP:
                codes[x] = code_sleep(codes.get(x, 0))
            return None
        y = x + flat[ins]
        c = codes[x] - 2
        d = codes.get(y, 0)
        d += 2 + (d & 1)
        if instant:
            c = 1 if c == 2 else c
            d = 1 if d == 2 else d
        codes[x] = c
        codes[y] = d
        return y

    moves = []
    items = sorted(x for x in codes if lo <= x <= hi and legal(x))
    pos = {x: i for i, x in enumerate(items)}
    while len(moves) < max_moves and items:
        x = items[rnd.randrange(len(items))]
        c = codes[x]
        full_ok = c >= 6 or (c == 4 and not counts.get(x, 0) & 1)
        if ssm and half and (not full_ok or rnd.random() < 0.5):
            landed = (step(x),)
            moves.append((x, "half"))
        else:
            landed = (step(x), step(x)) if ssm else (step(x),)
            moves.append((x, "full"))
        for y in sorted({x, *landed} - {None}):
            if lo <= y <= hi and legal(y):
                if y not in pos:
                    pos[y] = len(items)
                    items.append(y)
            elif y in pos:
                i = pos.pop(y)
                last = items.pop()
                if last != y:
                    items[i] = last
                    pos[last] = i
    active = any(lo <= y <= hi and legal(y) for y in codes)
    return codes, counts, moves, active


def _full_is_legal(ws: WorkingState, x) -> bool:
    # both halves of the toppling must be legal half-topplings
    c = ws.codes.get(x, 0)
    return c >= 6 or (c == 4 and ws.half.get(x, 0) % 2 == 0)


def _legal_any(ws: WorkingState, x, half: bool) -> bool:
    if ws.unstable(x):
        return True
    return half and ws.ssm and ws.status(x) is SiteStatus.SEMI_UNSTABLE


@dataclass
class LeastActionReport:
    probes: int = 0
    violations: int = 0
    complete: int = 0
    equality_failures: int = 0
    min_slack: int | None = None
    skipped: bool = False
    details: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.violations == 0 and self.equality_failures == 0


def least_action_check(model: Model, eta: Configuration, V, fld: InstructionField,
                       probes: int = 100, seed: int = 0, half: bool = True,
                       cap: int = DEFAULT_CAP, strict: bool = False) -> LeastActionReport:
    """Compare random legal sequences inside ``V`` with the stabilization odometer.

    Every probe must stay below ``m_V`` sitewise; a probe that runs until no
    legal move is left must match ``m_V`` exactly.
    """
    ref = stabilize(model, eta, V, fld, cap=cap)
    report = LeastActionReport()
    if ref.truncated:
        report.skipped = True
        return report
    target = ref.odometer.half_counts
    budget = sum(target.values())
    rnd = random.Random(seed)
    line = eta.dim == 1 and isinstance(V, Box)
    for _ in range(probes):
        length = rnd.randint(0, budget + 2) if rnd.random() < 0.8 else budget * 2 + 2
        if line:
            (lo,), (hi,) = V.lo, V.hi
            _, counts, moves, active = _random_sequence_line(model, eta, lo, hi, fld, rnd, length, half)
            counts = {(x,): h for x, h in counts.items()}
            moves = [((x,), kind) for x, kind in moves]
        else:
            ws, moves = random_legal_sequence(model, eta, V, fld, rnd, length, half)
            counts = ws.half
            active = any(x in V and _legal_any(ws, x, half) for x in ws.codes)
        report.probes += 1
        slack = min((target.get(x, 0) - h for x, h in counts.items()), default=0)
        report.min_slack = slack if report.min_slack is None else min(report.min_slack, slack)
        if slack < 0:
            report.violations += 1
            report.details.append(moves)
            continue
        if not active:
            report.complete += 1
            if {x: h for x, h in counts.items() if h} != target:
                report.equality_failures += 1
                report.details.append(moves)
    if strict and not report.ok:
        raise LeastActionViolation(f"{report.violations} violations, {report.equality_failures} mismatches")
    return report
