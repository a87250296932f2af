"""Exact invariant suites over random instances.

Each suite draws its instances from a seeded generator and returns a
:class:`SuiteReport`; ``run_all`` is what ``arwssm selftest`` executes.
"""

from __future__ import annotations

import random
import time
from dataclasses import dataclass, field

from . import rng
from .certifier import build_certificate, ledger_consistent, verify_certificate
from .dynamics import run_dynamics
from .engine import (
    MonotonicityViolation,
    Odometer,
    WorkingState,
    enforce_activation,
    half_topple,
    least_action_check,
    stabilize,
    stabilize_monotone_pair,
    topple,
)
from .lattice import Box, Configuration, InstructionField, Model, code_add, sample_poisson_config

ARW_RATES = ("1/2", "1", "2", "inf")


@dataclass
class SuiteReport:
    name: str
    checked: int = 0
    failures: int = 0
    seconds: float = 0.0
    details: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.failures == 0 and self.checked > 0

    def fail(self, msg):
        self.failures += 1
        if len(self.details) < 10:
            self.details.append(msg)

    def line(self) -> str:
        verdict = "PASS" if self.ok else "FAIL"
        return f"{verdict} {self.name}: {self.checked} checked, {self.failures} failures, {self.seconds:.1f}s"


def pick_model(kind: str, rnd: random.Random) -> Model:
    if kind == "ssm":
        return Model.ssm()
    return Model.arw(rnd.choice(ARW_RATES))


def random_instance(kind: str, rnd: random.Random, max_size: int = 64, max_mu: float = 2.0):
    """Random ``(model, eta, V, field)`` on Z with ``|V| <= max_size`` and density ``<= max_mu``."""
    model = pick_model(kind, rnd)
    size = rnd.randint(1, max_size)
    a = rnd.randint(-size, 0)
    V = Box.interval(a, a + size - 1)
    mu = rnd.uniform(0, max_mu)
    eta = sample_poisson_config(rnd.getrandbits(62), mu, Box.interval(a - 2, a + size + 1))
    return model, eta, V, InstructionField(rnd.getrandbits(62), model)


def _timed(fn):
    def run(*args, **kw):
        t = time.perf_counter()
        rep = fn(*args, **kw)
        rep.seconds = time.perf_counter() - t
        return rep
    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


@_timed
def abelian_suite(kind: str, count: int, seed: int, policies=("fifo", "lifo", "random"),
                  max_size: int = 64, max_mu: float = 2.0) -> SuiteReport:
    """Odometer and final configuration agree across scheduling policies."""
    rep = SuiteReport(f"abelian[{kind}]")
    rnd = random.Random(seed)
    for i in range(count):
        model, eta, V, fld = random_instance(kind, rnd, max_size, max_mu)
        runs = [stabilize(model, eta, V, fld, f"random:{i}" if p == "random" else p) for p in policies]
        rep.checked += 1
        ref = runs[0]
        if any(r.odometer != ref.odometer or r.final != ref.final for r in runs[1:]):
            rep.fail(f"instance {i}: policies disagree")
    return rep


@_timed
def half_composition_suite(count: int, seed: int) -> SuiteReport:
    """Two half-topplings at an unstable SSM site equal one toppling there."""
    rep = SuiteReport("half-composition[ssm]")
    rnd = random.Random(seed)
    model = Model.ssm()
    for i in range(count):
        x = (rnd.randint(-5, 5),)
        counts = {(y,): rnd.randint(0, 3) for y in range(-6, 7)}
        counts[x] = max(counts[x], 2)
        eta = Configuration({y: 2 * n for y, n in counts.items()}, 1)
        odo = Odometer({(y,): rnd.randint(0, 6) for y in range(-6, 7)}, 1)
        fld = InstructionField(rnd.getrandbits(62), model)
        full = topple(model, eta, odo, x, fld)
        once = half_topple(eta, odo, x, fld)
        twice = half_topple(*once, x, fld)
        rep.checked += 1
        if full[0] != twice[0] or full[1] != twice[1]:
            rep.fail(f"instance {i}: composition differs at {x}")
    return rep


@_timed
def least_action_suite(kind: str, count: int, probes: int, seed: int, max_size: int = 32,
                       max_mu: float = 2.0) -> SuiteReport:
    """Random legal sequences inside V never exceed the stabilization odometer."""
    rep = SuiteReport(f"least-action[{kind}]")
    rnd = random.Random(seed)
    for i in range(count):
        model, eta, V, fld = random_instance(kind, rnd, max_size, max_mu)
        res = least_action_check(model, eta, V, fld, probes=probes, seed=rnd.getrandbits(32))
        rep.checked += res.probes
        for _ in range(res.violations + res.equality_failures):
            rep.fail(f"instance {i}: min slack {res.min_slack}")
    return rep


@_timed
def monotonicity_suite(kind: str, count: int, seed: int, max_size: int = 48, max_mu: float = 2.0) -> SuiteReport:
    """Odometers grow with the configuration and the volume, and under enforced activation."""
    rep = SuiteReport(f"monotonicity[{kind}]")
    rnd = random.Random(seed)
    for i in range(count):
        model, eta, V, fld = random_instance(kind, rnd, max_size, max_mu)
        (a,), (b,) = V.lo, V.hi
        V2 = Box.interval(a - rnd.randint(0, 8), b + rnd.randint(0, 8))
        extra = sample_poisson_config(rnd.getrandbits(62), rnd.uniform(0, 0.5), V2)
        sites = set(eta.codes()) | set(extra.codes())
        bigger = Configuration({x: code_add(eta.code(x), extra.code(x)) for x in sites}, 1)
        rep.checked += 1
        try:
            stabilize_monotone_pair(model, eta, bigger, V, V2, fld)
        except MonotonicityViolation as err:
            rep.fail(f"instance {i}: {err}")
        if not model.is_ssm and not model.instant_sleep:
            keep = [((x,), j) for x in range(a, b + 1) for j in range(1, 4) if rnd.random() < 0.3]
            base = stabilize(model, eta, V, fld, cap=10**7)
            forced = stabilize(model, eta, V, enforce_activation(fld, keep), cap=10**7)
            rep.checked += 1
            if not (base.truncated or forced.truncated) and not base.odometer <= forced.odometer:
                rep.fail(f"instance {i}: enforced activation lowered the odometer")
    return rep


@_timed
def permutation_suite(kind: str, count: int, seed: int, max_size: int = 24, max_mu: float = 1.5) -> SuiteReport:
    """Legal sequences with equal toppling counts reach equal configurations."""
    rep = SuiteReport(f"permutation[{kind}]")
    rnd = random.Random(seed)
    for i in range(count):
        model, eta, V, fld = random_instance(kind, rnd, max_size, max_mu)
        res = stabilize(model, eta, V, fld, "random:%d" % i, cap=2 * 10**4, trace=True)
        sites = [x for x, _ in res.trace]
        permuted = _legal_permutation(model, eta, fld, sites, rnd)
        rep.checked += 1
        if permuted is None:
            rep.fail(f"instance {i}: no legal reordering found")
            continue
        ws = WorkingState(model, eta, fld)
        for x in permuted:
            ws.topple(x)
        if ws.configuration() != res.final or ws.odometer() != res.odometer:
            rep.fail(f"instance {i}: permuted sequence ends elsewhere")
    return rep


def _legal_permutation(model, eta, fld, sites, rnd):
    """Greedy random reordering of ``sites`` that keeps every toppling legal."""
    remaining = {}
    for x in sites:
        remaining[x] = remaining.get(x, 0) + 1
    ws = WorkingState(model, eta, fld)
    order = []
    while remaining:
        legal = sorted(x for x in remaining if ws.unstable(x))
        if not legal:
            return None
        x = rnd.choice(legal)
        ws.topple(x)
        order.append(x)
        remaining[x] -= 1
        if not remaining[x]:
            del remaining[x]
    return order


@_timed
def ctmc_agreement_suite(kind: str, count: int, seed: int, max_size: int = 40, max_mu: float = 1.2) -> SuiteReport:
    """Running the dynamics to quiescence reproduces the discrete stabilization."""
    rep = SuiteReport(f"ctmc-agreement[{kind}]")
    rnd = random.Random(seed)
    for i in range(count):
        model = pick_model(kind, rnd)
        M = rnd.randint(1, max_size // 2)
        box = Box.centered(M)
        eta = sample_poisson_config(rnd.getrandbits(62), rnd.uniform(0, max_mu), box)
        fld = InstructionField(rnd.getrandbits(62), model)
        traj = run_dynamics(model, eta, fld, seed=rnd.getrandbits(62), cap=10**7)
        res = stabilize(model, eta, _everywhere(), fld, cap=10**7)
        rep.checked += 1
        if traj.truncated or res.truncated:
            rep.fail(f"instance {i}: truncated")
        elif traj.final != res.final or traj.odometer != res.odometer:
            rep.fail(f"instance {i}: dynamics and stabilization disagree")
    return rep


class _Everywhere:
    def __contains__(self, x):
        return True


def _everywhere():
    return _Everywhere()


@_timed
def certificate_suite(kind: str, successes: int, seed: int, n: int = 3, mu: float | None = None,
                      lam="1", walk_cap: int = 10**5, max_tries: int | None = None) -> SuiteReport:
    """Every successful certificate replays to a zero origin odometer, confirmed by plain stabilization."""
    model = Model.ssm() if kind == "ssm" else Model.arw(lam)
    mu = (0.1 if model.is_ssm else 0.2) if mu is None else mu
    rep = SuiteReport(f"certificates[{kind}]")
    L = int(3 * n / mu) + 100
    box = Box.centered(L)
    r = 0
    max_tries = max_tries or 50 * successes
    while rep.checked < successes and r < max_tries:
        eta = sample_poisson_config(rng.derive_seed(seed, r, 0), mu, box)
        fld = InstructionField(rng.derive_seed(seed, r, 1), model)
        r += 1
        cert = build_certificate(model, eta, fld, n, cap=walk_cap)
        if not cert.success:
            continue
        rep.checked += 1
        if not ledger_consistent(cert):
            rep.fail(f"replica {r - 1}: ledger reuse")
            continue
        v = verify_certificate(cert, eta, fld)
        if not v.ok or v.origin_half != 0 or v.generic_origin_half != 0:
            rep.fail(f"replica {r - 1}: {v.reason}")
    return rep


def run_all(seed: int = 0, scale: float = 1.0) -> list:
    """The exact-invariant suites at a size suitable for a quick self-test."""
    k = max(1, int(round(20 * scale)))
    reports = []
    for kind in ("ssm", "arw"):
        reports.append(abelian_suite(kind, 2 * k, seed, max_size=32, max_mu=1.5))
        reports.append(least_action_suite(kind, max(1, k // 4), 20, seed + 1))
        reports.append(monotonicity_suite(kind, k, seed + 2, max_size=32, max_mu=1.5))
        reports.append(permutation_suite(kind, k, seed + 3))
        reports.append(ctmc_agreement_suite(kind, k, seed + 4))
        reports.append(certificate_suite(kind, k, seed + 5))
    reports.append(half_composition_suite(10 * k, seed + 6))
    return reports
