"""Continuous-time dynamics driven by the instruction field.

Each site ``x`` carries a clock ``L(x)`` that grows at the current toppling
rate of ``x`` and a sequence of thresholds ``T_1(x) < T_2(x) < ...`` whose
increments are standard exponentials from a dedicated seed stream.  The
n-th toppling of ``x`` happens when ``L(x)`` reaches ``T_n(x)`` and uses the
next instruction(s) of ``x``.  Two runs sharing field and clock seed are
therefore coupled path by path.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .engine import DEFAULT_CAP, Odometer, WorkingState
from .lattice import Box, Configuration, InstructionField, Model, as_site, sample_poisson_config


class CouplingViolation(AssertionError):
    pass


@dataclass
class Trajectory:
    final: Configuration
    odometer: Odometer
    quiescent: bool
    t_final: float
    truncated: bool = False
    samples: list = field(default_factory=list)
    events: list | None = None
    event_times: dict | None = None

    def topplings(self, x) -> int:
        return self.odometer[x] // 2

    def records(self):
        """Line records: optional events, then per-site final topplings."""
        out = []
        for t, x, kind in self.events or ():
            out.append({"t": t, "site": list(x), "event": kind})
        out.append({"quiescent": self.quiescent, "t_final": self.t_final, "truncated": self.truncated})
        for x in self.odometer.support():
            out.append({"site": list(x), "h": self.odometer[x] // 2})
        return out


def site_rate(model: Model, code: int) -> float:
    """Toppling rate of a site holding state ``code``."""
    if model.is_ssm:
        return 1.0 if code >= 4 else 0.0
    if code < 2 or code & 1:
        return 0.0
    n = code // 2
    if model.instant_sleep:
        return float(n) if n >= 2 else 0.0
    return model.rate_factor * n


class Dynamics:
    """Event-driven simulation; see the module docstring for the coupling."""

    def __init__(self, model: Model, eta0: Configuration, fld: InstructionField, clock_seed: int,
                 keep_events: bool = False):
        self.model = model
        self.ws = WorkingState(model, eta0, fld)
        self.clock_base = rng.stream_base(clock_seed, rng.CLOCKS)
        self.time = 0.0
        self.progress = {}
        self.stamp = {}
        self.rate = {}
        self.threshold = {}
        self.count = {}
        self.next_time = {}
        self.heap = []
        self.events = [] if keep_events else None
        self.event_times = {} if keep_events else None
        for x in sorted(self.ws.codes):
            self._refresh(x, 0.0)

    def _threshold(self, x, n):
        return rng.exponential(rng.site_key(self.clock_base, x), n)

    def _refresh(self, x, t):
        r_old = self.rate.get(x, 0.0)
        if r_old:
            self.progress[x] = self.progress.get(x, 0.0) + r_old * (t - self.stamp[x])
        self.stamp[x] = t
        r = site_rate(self.model, self.ws.codes.get(x, 0))
        self.rate[x] = r
        if not r:
            self.next_time.pop(x, None)
            return
        if x not in self.threshold:
            self.threshold[x] = self._threshold(x, 1)
        gap = self.threshold[x] - self.progress.get(x, 0.0)
        tn = t + max(gap, 0.0) / r
        self.next_time[x] = tn
        heapq.heappush(self.heap, (tn, x))

    def peek(self) -> float:
        heap = self.heap
        while heap and self.next_time.get(heap[0][1]) != heap[0][0]:
            heapq.heappop(heap)
        return heap[0][0] if heap else math.inf

    def fire(self):
        t, x = heapq.heappop(self.heap)
        del self.next_time[x]
        self.time = t
        n = self.count.get(x, 0) + 1
        self.count[x] = n
        self.progress[x] = self.threshold[x]
        self.stamp[x] = t
        self.rate[x] = 0.0
        self.threshold[x] += self._threshold(x, n + 1)
        landed = self.ws.topple(x)
        if self.events is not None:
            self.events.append((t, x, "topple"))
            self.event_times.setdefault(x, []).append(t)
        self._refresh(x, t)
        for y in {y for y in landed if y is not None and y != x}:
            self._refresh(y, t)
        return t, x

    def snapshot(self, sites=None) -> dict:
        if sites is None:
            return {x: n for x, n in self.count.items()}
        return {x: self.count.get(x, 0) for x in sites}


def run_dynamics(model: Model, eta0: Configuration, fld: InstructionField, t_max: float = math.inf,
                 seed: int = 0, record_times=(), watch=None, cap: int = DEFAULT_CAP,
                 keep_events: bool = False) -> Trajectory:
    """Evolve ``eta0`` up to ``t_max`` (or quiescence).

    ``record_times`` lists times at which the toppling counts ``h_t`` of
    ``watch`` (default: every site) are sampled.  ``cap`` bounds the total
    number of half-topplings.
    """
    dyn = Dynamics(model, eta0, fld, seed, keep_events)
    watch = None if watch is None else [as_site(x, eta0.dim) for x in watch]
    marks = sorted(record_times)
    samples = []
    k = 0
    spent = 0
    truncated = False
    while True:
        tn = dyn.peek()
        while k < len(marks) and marks[k] < tn and marks[k] <= t_max:
            samples.append((marks[k], dyn.snapshot(watch)))
            k += 1
        if tn > t_max or math.isinf(tn):
            break
        if spent + 2 > cap:
            truncated = True
            break
        dyn.fire()
        spent += 2
    quiescent = math.isinf(dyn.peek())
    t_final = dyn.time if quiescent else t_max
    return Trajectory(dyn.ws.configuration(), dyn.ws.odometer(), quiescent, t_final, truncated,
                      samples, dyn.events, dyn.event_times)


@dataclass
class BoundReport:
    estimate: float
    stderr: float
    bound: float
    replicas: int

    @property
    def ok(self) -> bool:
        return self.estimate <= self.bound + 3 * self.stderr


def expected_topplings_bound_check(mu, lam, t: float, M: int, replicas: int, seed: int) -> BoundReport:
    """Monte Carlo of ``E[h_t(0)]`` for ARW started from Poisson(mu) on ``[-M, M]``."""
    model = Model.arw(lam)
    bound = t * float(mu) * model.rate_factor
    if float(mu) == 0:
        return BoundReport(0.0, 0.0, bound, replicas)
    box = Box.centered(M)
    values = np.empty(replicas)
    for r in range(replicas):
        eta = sample_poisson_config(rng.derive_seed(seed, r, 0), mu, box)
        fld = InstructionField(rng.derive_seed(seed, r, 1), model)
        dyn = Dynamics(model, eta, fld, rng.derive_seed(seed, r, 2))
        while dyn.peek() <= t:
            dyn.fire()
        values[r] = dyn.count.get((0,), 0)
    se = values.std(ddof=1) / math.sqrt(replicas) if replicas > 1 else math.inf
    return BoundReport(float(values.mean()), float(se), bound, replicas)


@dataclass
class CouplingReport:
    sites_checked: int
    violations: int
    worst_gap: float
    equal: bool

    @property
    def ok(self) -> bool:
        return self.violations == 0


def truncation_monotonicity_check(model: Model, eta: Configuration, fld: InstructionField, clock_seed: int,
                                  M: int, M2: int, t: float, tol: float = 1e-9) -> CouplingReport:
    """Check ``h_s^M(x) <= h_s^{M2}(x)`` for all ``s <= t`` and all ``x``.

    Equivalent check on event times: the n-th toppling of ``x`` in the
    larger truncation happens no later than in the smaller one.  ``tol``
    absorbs floating-point rounding of the clock arithmetic.
    """
    if M > M2:
        raise ValueError("need M <= M2")
    small = run_dynamics(model, eta.restrict(Box.centered(M, eta.dim)), fld, t, clock_seed, keep_events=True)
    large = run_dynamics(model, eta.restrict(Box.centered(M2, eta.dim)), fld, t, clock_seed, keep_events=True)
    violations = 0
    worst = 0.0
    for x, times in small.event_times.items():
        other = large.event_times.get(x, [])
        for n, s in enumerate(times):
            if n >= len(other):
                violations += 1
                worst = math.inf
                break
            gap = other[n] - s
            if gap > tol * (1.0 + abs(s)):
                violations += 1
            worst = max(worst, gap)
    equal = small.odometer == large.odometer and small.final == large.final
    return CouplingReport(len(small.event_times), violations, worst, equal)
