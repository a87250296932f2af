"""Barrier-construction fixation certificates on Z for ARW and SSM.

Particles to the right of the origin are explored one at a time by virtual
walks that read the instruction stacks while skipping instructions already
read by earlier walks.  Each walk places a barrier where the particle can be
parked; if all walks succeed, the particles can be settled without ever
toppling the origin.  ``verify_certificate`` replays that settlement through
the generic engine and cross-checks with an ordinary stabilization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fast, kernels, rng
from .engine import DEFAULT_CAP, WorkingState, enforce_activation, stabilize
from .lattice import SLEEP, Box, Configuration, InstructionField, Model, count_of

WALK_CAP = 10**8
TRACE_LIMIT = 10**7
LEFT, RIGHT = 0, 1  # jump codes of the nearest-neighbour kernel


class Failure(Exception):
    """The construction declares failure at a given step."""

    def __init__(self, step: int, reason: str):
        super().__init__(f"step {step}: {reason}")
        self.step = step
        self.reason = reason


class ExplorationDiverged(RuntimeError):
    pass


class VerificationFailed(AssertionError):
    pass


def trace_hash(fp: int, y: int, j: int) -> int:
    """Python twin of :func:`arwssm.kernels.trace_hash`."""
    return rng.mix64(fp ^ ((y * rng.MUL1 + j) & rng.MASK))


@dataclass
class ExplorationTrace:
    """One exploration walk.

    ``sites``/``indices``/``codes`` hold the consumed instructions in order
    when recorded (walks longer than ``TRACE_LIMIT`` keep only ``length`` and
    ``fingerprint``).  ``last_index`` maps every site strictly between the
    stop barrier and the start to the index of its last consumed instruction.
    """

    start: int
    stop_barrier: int
    length: int
    fingerprint: int
    last_index: dict
    sites: np.ndarray | None = None
    indices: np.ndarray | None = None
    codes: np.ndarray | None = None
    fresh_from: dict = field(default_factory=dict)

    @property
    def visited(self) -> list:
        if self.sites is None:
            raise ValueError("trace was not recorded")
        return [(int(y), int(j)) for y, j in zip(self.sites, self.indices)]

    def __len__(self) -> int:
        return self.length


class Ledger:
    """Per-site count of explored instructions, plus walk bookkeeping for the last two reads."""

    def __init__(self, first: int = -64, size: int = 128):
        self.first = first
        self.used = np.zeros(size, np.int64)
        self.fp_last = np.zeros(size, np.uint64)
        self.fp_prev = np.zeros(size, np.uint64)
        self.at_last = np.zeros(size, np.int64)
        self.at_prev = np.zeros(size, np.int64)

    def arrays(self) -> tuple:
        return self.used, self.fp_last, self.fp_prev, self.at_last, self.at_prev

    def __getitem__(self, y: int) -> int:
        i = y - self.first
        return int(self.used[i]) if 0 <= i < len(self.used) else 0

    def cover(self, a: int, b: int):
        """Grow the window to include ``[a, b]``."""
        last = self.first + len(self.used) - 1
        if a >= self.first and b <= last:
            return
        lo, hi = min(a, self.first), max(b, last)
        pad = max((hi - lo + 1) // 2, 64)
        new_first = lo - pad if lo < self.first else self.first
        size = hi + (pad if hi > last else 0) - new_first + 1
        off = self.first - new_first
        grown = []
        for arr in self.arrays():
            new = np.zeros(size, arr.dtype)
            new[off:off + len(arr)] = arr
            grown.append(new)
        self.used, self.fp_last, self.fp_prev, self.at_last, self.at_prev = grown
        self.first = new_first

    def before_read(self, y: int, last: bool = True) -> tuple:
        """``(steps, fingerprint)`` of the current walk just before its last (or second-to-last) read at ``y``."""
        i = y - self.first
        if last:
            return int(self.at_last[i]), int(self.fp_last[i])
        return int(self.at_prev[i]), int(self.fp_prev[i])


def _check_field(fld: InstructionField):
    if not fld.kernel.symmetric_nn_1d:
        raise ValueError("certificates need the symmetric nearest-neighbour kernel on Z")
    if not fld.model.is_ssm and (fld.model.instant_sleep or fld.model.lam == 0):
        raise ValueError("ARW certificates need a finite positive sleep rate")


def _walk(fld: InstructionField, ledger: Ledger, start: int, stop: int, cap: int, record: bool):
    """Run one exploration walk; returns ``(trace, last outward jump site or None)``."""
    side = 1 if start > stop else -1
    outward = RIGHT if side > 0 else LEFT
    lo, hi = sorted((start, stop))
    ledger.cover(lo - 16, hi + 16)
    before = {y: ledger[y] for y in range(stop + side, start, side)}
    chunks = []
    pos, steps, fp, last_out = start, 0, 0, None
    if fast.supports(fld):
        cuts, _ = fast.field_arrays(fld)
        base = np.uint64(rng.stream_base(fld.master_seed, rng.INSTRUCTIONS))
        buf = 4096 if record else 0
        sentinel = np.iinfo(np.int64).min
        out = last = sentinel
        while True:
            bufs = (np.empty(buf, np.int64), np.empty(buf, np.int64), np.empty(buf, np.int64))
            pos, steps, fpv, out, n, status = kernels.walk(*ledger.arrays(), ledger.first, base, pos, stop, steps,
                                                          np.uint64(fp), cap, cuts, outward, last, record, *bufs)
            fp, last = int(fpv), out
            if record:
                chunks.append(tuple(a[:n] for a in bufs))
                if steps > TRACE_LIMIT:
                    record, chunks, buf = False, None, 0
            if status == 0:
                break
            if status == 3:
                raise ExplorationDiverged(f"walk from {start} exceeded {cap} steps")
            if status == 2:
                reach = 2 * abs(pos - stop) + 64
                ledger.cover(min(pos, stop) - reach, max(pos, stop) + reach)
            if record:
                buf = min(buf * 2, 1 << 22)
        last_out = None if last == sentinel else int(last)
    else:
        sites, idx, codes = [], [], []
        while pos != stop:
            if steps >= cap:
                raise ExplorationDiverged(f"walk from {start} exceeded {cap} steps")
            ledger.cover(pos - 1, pos + 1)
            i = pos - ledger.first
            j = int(ledger.used[i]) + 1
            ledger.used[i] = j
            ledger.fp_prev[i], ledger.at_prev[i] = ledger.fp_last[i], ledger.at_last[i]
            ledger.fp_last[i], ledger.at_last[i] = np.uint64(fp), steps
            k = fld.code_at((pos,), j)
            fp = trace_hash(fp, pos, j)
            if record:
                sites.append(pos)
                idx.append(j)
                codes.append(k)
            steps += 1
            if k == outward:
                last_out = pos
            pos += -1 if k == LEFT else (1 if k == RIGHT else 0)
        if record:
            chunks.append((np.array(sites, np.int64), np.array(idx, np.int64), np.array(codes, np.int64)))
    trace = ExplorationTrace(start, stop, steps, fp, {y: ledger[y] for y in before}, fresh_from=before)
    if record and chunks:
        trace.sites, trace.indices, trace.codes = (np.concatenate(parts) for parts in zip(*chunks))
    return trace, last_out


def side_particles(eta: Configuration, side: int) -> list:
    """Particle positions on one side of the origin, nearest first, with multiplicity."""
    ps = [x[0] for x in eta.particles() if x[0] * side > 0]
    return sorted(ps, key=abs)


def _particle(eta: Configuration, k: int) -> int:
    side = 1 if k > 0 else -1
    ps = side_particles(eta, side)
    if abs(k) > len(ps):
        raise Failure(k, "no such particle")
    return ps[abs(k) - 1]


@dataclass
class Step:
    """Outcome of one exploration step.

    ``stop_index`` is the index at the barrier before which the settling
    replay stops; ``prefix`` is ``(steps, fingerprint)`` of the walk up to
    that point.
    """

    trace: ExplorationTrace
    barrier: int
    stop_index: int
    prefix: tuple
    kept: tuple | None = None
    parity: int | None = None


def explore_arw_step(eta: Configuration, fld: InstructionField, ledger: Ledger, k: int, prev_barrier: int,
                     cap: int = WALK_CAP, start: int | None = None, record: bool = True) -> Step:
    """Explore from the k-th particle (k < 0: left side) and place an ARW barrier.

    The barrier is the site nearest ``prev_barrier`` whose instruction just
    before its last jump is a Sleep read by this same walk; that Sleep is the
    one kept when settling.
    """
    _check_field(fld)
    side = 1 if k > 0 else -1
    x = _particle(eta, k) if start is None else start
    trace, _ = _walk(fld, ledger, x, prev_barrier, cap, record)
    for y in range(prev_barrier + side, x, side):
        j = trace.last_index[y]
        if j - 1 > trace.fresh_from[y] and fld.code_at((y,), j - 1) == SLEEP:
            return Step(trace, y, j, ledger.before_read(y, last=True), kept=(y, j - 1))
    raise Failure(k, "no sleep before a last jump")


def explore_ssm_step(eta: Configuration, fld: InstructionField, ledger: Ledger, k: int, prev_barrier: int,
                     cap: int = WALK_CAP, start: int | None = None, record: bool = True) -> Step:
    """Explore from the k-th grain and place the SSM barrier just past its last outward jump.

    Settling stops before the second-to-last half-toppling at the barrier if
    the site is stable there (even half-count), else before the last one.
    """
    _check_field(fld)
    side = 1 if k > 0 else -1
    x = _particle(eta, k) if start is None else start
    trace, last_out = _walk(fld, ledger, x, prev_barrier, cap, record)
    if last_out is None:
        raise Failure(k, "walk never jumped outward")
    a = last_out + side
    if (x - a) * side < 0:
        raise Failure(k, "barrier beyond the particle")
    last = ledger[a]
    prev = last - 1
    if (prev - 1) % 2 == 0:
        return Step(trace, a, prev, ledger.before_read(a, last=False), parity=0)
    return Step(trace, a, last, ledger.before_read(a, last=True), parity=1)


@dataclass
class Certificate:
    model: Model
    n: int
    seed: int
    barriers: dict = field(default_factory=dict)
    starts: dict = field(default_factory=dict)
    kept: dict = field(default_factory=dict)
    stop_index: dict = field(default_factory=dict)
    prefix: dict = field(default_factory=dict)
    parities: dict = field(default_factory=dict)
    success: bool = False
    failure_step: int | None = None
    failure_reason: str = ""
    traces: dict = field(default_factory=dict)
    walk_steps: int = 0

    def order(self) -> list:
        return list(range(1, self.n + 1)) + list(range(-1, -self.n - 1, -1))

    def volume(self, eta: Configuration) -> Box:
        """``[x_{-n}, x_n]``, shrunk at an end whose site holds further particles."""
        if self.n == 0:
            return Box.interval(0, -1)
        ends = []
        for side in (-1, 1):
            ps = side_particles(eta, side)
            x = ps[self.n - 1]
            if len(ps) > self.n and ps[self.n] == x:
                x -= side
            ends.append(x)
        return Box.interval(ends[0], ends[1])

    def to_text(self) -> str:
        lam = "" if self.model.is_ssm else ("inf" if self.model.instant_sleep else str(self.model.lam))
        lines = [
            "# barrier certificate",
            f"model {self.model.kind}",
            f"lambda {lam or '-'}",
            f"seed {self.seed}",
            f"n {self.n}",
            f"success {str(self.success).lower()}",
            f"failure_step {self.failure_step if self.failure_step is not None else '-'}",
            f"failure_reason {self.failure_reason.replace(' ', '_') or '-'}",
            f"walk_steps {self.walk_steps}",
            "step start barrier kept_index stop_index parity prefix_steps prefix_hash",
        ]
        for k in self.order():
            if k not in self.barriers:
                continue
            kept = self.kept[k][1] if k in self.kept else "-"
            steps, fp = self.prefix[k]
            lines.append(f"{k} {self.starts[k]} {self.barriers[k]} {kept} {self.stop_index[k]} "
                         f"{self.parities.get(k, '-')} {steps} {fp:016x}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> Certificate:
        head, rows = {}, []
        for line in text.splitlines():
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "step":
                continue
            if parts[0].lstrip("-").isdigit():
                rows.append(parts)
            else:
                head[parts[0]] = parts[1]
        model = Model.ssm() if head["model"] == "ssm" else Model.arw(head["lambda"])
        cert = cls(model, int(head["n"]), int(head["seed"]), success=head["success"] == "true",
                   walk_steps=int(head["walk_steps"]))
        if head["failure_step"] != "-":
            cert.failure_step = int(head["failure_step"])
            cert.failure_reason = head["failure_reason"].replace("_", " ")
        for k, x, a, kept, stop, parity, steps, fp in rows:
            k, a = int(k), int(a)
            cert.starts[k], cert.barriers[k], cert.stop_index[k] = int(x), a, int(stop)
            cert.prefix[k] = (int(steps), int(fp, 16))
            if kept != "-":
                cert.kept[k] = (a, int(kept))
            if parity != "-":
                cert.parities[k] = int(parity)
        return cert


def build_certificate(model: Model, eta: Configuration, fld: InstructionField, n: int,
                      cap: int = WALK_CAP, keep_traces: bool = True) -> Certificate:
    """Run the 2n exploration steps, right side first."""
    _check_field(fld)
    cert = Certificate(model, n, fld.master_seed)
    if n == 0:
        cert.success = True
        return cert
    if eta.count(0):
        cert.failure_step, cert.failure_reason = 0, "particle at the origin"
        return cert
    ledger = Ledger()
    barrier = {1: 0, -1: 0}
    sides = {1: side_particles(eta, 1), -1: side_particles(eta, -1)}
    explore = explore_ssm_step if model.is_ssm else explore_arw_step
    for k in cert.order():
        side = 1 if k > 0 else -1
        if abs(k) > len(sides[side]):
            cert.failure_step, cert.failure_reason = k, "no such particle"
            return cert
        try:
            step = explore(eta, fld, ledger, k, barrier[side], cap, sides[side][abs(k) - 1], keep_traces)
        except Failure as err:
            cert.failure_step, cert.failure_reason = k, err.reason
            return cert
        except ExplorationDiverged:
            cert.failure_step, cert.failure_reason = k, "walk diverged"
            return cert
        cert.walk_steps += step.trace.length
        cert.starts[k] = step.trace.start
        cert.barriers[k] = step.barrier
        cert.stop_index[k] = step.stop_index
        cert.prefix[k] = step.prefix
        if step.kept is not None:
            cert.kept[k] = step.kept
        if step.parity is not None:
            cert.parities[k] = step.parity
        if keep_traces:
            cert.traces[k] = step.trace
        barrier[side] = step.barrier
    cert.success = True
    return cert


def ledger_consistent(cert: Certificate) -> bool:
    """No instruction appears in two recorded exploration traces (or twice in one)."""
    seen = set()
    total = 0
    for tr in cert.traces.values():
        if tr.sites is None:
            continue
        pairs = set(zip(tr.sites.tolist(), tr.indices.tolist()))
        total += len(tr.sites)
        seen |= pairs
    return len(seen) == total


@dataclass
class VerificationReport:
    ok: bool
    reason: str = ""
    origin_half: int = 0
    generic_origin_half: int | None = None
    relaxed_origin_half: int | None = None
    volume: tuple = ()
    replayed_steps: int = 0


def verify_certificate(cert: Certificate, eta: Configuration, fld: InstructionField,
                       cap: int = DEFAULT_CAP, strict: bool = False) -> VerificationReport:
    """Replay the settlement of all 2n particles and cross-check the origin odometer."""
    report = _replay(cert, eta, fld, cap)
    if strict and not report.ok:
        raise VerificationFailed(report.reason)
    return report


def _replay(cert: Certificate, eta: Configuration, fld: InstructionField, cap: int) -> VerificationReport:
    if not cert.success:
        return VerificationReport(False, "certificate is not successful")
    model = cert.model
    V = cert.volume(eta)
    vol = (V.lo[0], V.hi[0])
    if cert.n == 0:
        return VerificationReport(True, volume=vol)

    def fail(msg):
        return VerificationReport(False, msg, volume=vol)

    if not ledger_consistent(cert):
        return fail("an instruction was explored twice")
    replay_field = fld
    if not model.is_ssm:
        replay_field = enforce_activation(fld, [((a,), j) for a, j in cert.kept.values()])
    ws = WorkingState(model, eta, replay_field)
    replayed = 0
    for k in cert.order():
        side = 1 if k > 0 else -1
        a, x = cert.barriers[k], cert.starts[k]
        if (x - a) * side < 0 or a * side <= 0:
            return fail(f"barrier {a} out of order")
        if not model.is_ssm and a == x:
            return fail(f"barrier {a} sits on the particle")
        earlier = {cert.barriers[i] for i in cert.order() if (i > 0) == (k > 0) and abs(i) < abs(k)}
        trace = cert.traces.get(k)
        sites = None if trace is None or trace.sites is None else trace.sites
        limit, expected_fp = cert.prefix[k]
        walker, steps, fp = x, 0, 0
        while not (walker == a and ws.next_index((a,)) == cert.stop_index[k]):
            y = walker
            if steps >= limit:
                return fail(f"particle {k} did not park at {a} within {limit} steps")
            if y == 0:
                return fail(f"particle {k} reached the origin")
            if y in earlier:
                return fail(f"particle {k} revisited barrier {y}")
            j = ws.next_index((y,))
            if sites is not None and (sites[steps] != y or trace.indices[steps] != j):
                return fail(f"particle {k} left its exploration path at step {steps}")
            c = ws.codes.get((y,), 0)
            if c < 2 or (not model.is_ssm and c & 1):
                return fail(f"no movable particle at {y}")
            landed = ws.step((y,))
            fp = trace_hash(fp, y, j)
            steps += 1
            if landed is not None:
                walker = landed[0]
        replayed += steps
        if steps != limit or fp != expected_fp:
            return fail(f"particle {k} replay differs from its exploration")
    for x in V:
        c = ws.codes.get(x, 0)
        if model.is_ssm:
            stable = c == 0 or (c == 2 and ws.half.get(x, 0) % 2 == 0)
        else:
            stable = c <= 1
        if not stable:
            return fail(f"site {x[0]} not stable after settlement")
    origin = ws.half.get((0,), 0)
    generic = stabilize(model, eta, V, fld, cap=cap)
    relaxed = None
    if not model.is_ssm:
        relaxed = stabilize(model, eta, V, replay_field, cap=cap).odometer[(0,)]
    ok = origin == 0 and not generic.truncated and generic.odometer[(0,)] == 0 and not relaxed
    reason = "" if ok else "origin odometer is not zero"
    return VerificationReport(ok, reason, origin, generic.odometer[(0,)], relaxed, vol, replayed)


# ---------------------------------------------------------------- increment laws

@dataclass
class IncrementSample:
    values: np.ndarray
    tails: int
    diverged: int
    start: int
    mode: str

    @property
    def mean(self) -> float:
        return float(self.values.mean())


def default_start(model: Model, tail: float = 1e-3) -> int:
    """Start distance beyond which a missing barrier has probability below ``tail``."""
    if model.is_ssm:
        k = 2
        while (k + 1) / 2.0**k > tail:
            k += 1
        return k
    q = 1.0 / model.rate_factor
    return 1 + max(1, math.ceil(math.log(tail) / math.log(q)))


def barrier_increment_samples(model: Model, count: int, seed: int, start: int | None = None,
                              cap: int | None = None, mode: str = "fresh", window: int = 1 << 15) -> IncrementSample:
    """Samples of the barrier increment ``Y`` from exploration walks.

    ``mode="fresh"`` uses an independent field per sample with the particle
    ``start`` sites from the barrier; ``mode="chain"`` records the successive
    increments ``a_k - a_{k-1}`` of one construction, placing each particle
    ``start`` sites beyond the previous barrier.  Walks longer than ``cap``
    steps are discarded and counted in ``diverged``.  For ARW the sleep marks
    that fix the barrier are independent of the jump path, so discarding is
    harmless and a smaller default cap is used.
    """
    fld = InstructionField(0, model)
    _check_field(fld)
    if mode not in ("fresh", "chain"):
        raise ValueError("mode is 'fresh' or 'chain'")
    start = default_start(model) if start is None else start
    if cap is None:
        cap = 10**6 if model.is_ssm else 2 * 10**5
    cuts, _ = fast.field_arrays(fld)
    q = 0.0 if model.is_ssm else 1.0 / model.rate_factor
    values, tails, diverged = kernels.increments(np.uint64(seed), count, start, cap, max(window, 4 * start),
                                                 cuts, model.is_ssm, mode == "chain", q)
    return IncrementSample(values, int(tails), int(diverged), start, mode)


def increment_field_seed(seed: int, n: int) -> int:
    """Field seed of the n-th field used by :func:`barrier_increment_samples`."""
    return rng.mix64(seed + n * rng.GOLDEN)


def ssm_increment_tail(k: int) -> float:
    """``P(Y > k)`` for the SSM increment law."""
    return (k + 1) / 2.0**k if k >= 1 else 1.0


def conditioned_walk_increments(count: int, seed: int) -> np.ndarray:
    """Independent SSM increments from a walk conditioned to stay positive.

    The walk starts at 0, steps to 1, and from height ``h`` moves up with
    probability ``(h + 1) / (2h)``; ``Y`` is the time of its first down step.
    """
    gen = np.random.default_rng(seed)
    out = np.empty(count, np.int64)
    for i in range(count):
        h, n = 1, 1
        while gen.random() < (h + 1) / (2 * h):
            h += 1
            n += 1
        out[i] = n
    return out


def count_particles(eta: Configuration) -> int:
    return sum(count_of(c) for c in eta.codes().values())
