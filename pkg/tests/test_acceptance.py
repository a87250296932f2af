"""Acceptance checks at full size; each test prints one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; together these take
roughly 35 minutes on one core.
"""

import time

import numpy as np
import pytest

from arwssm.certifier import barrier_increment_samples
from arwssm.cli import main
from arwssm.dynamics import expected_topplings_bound_check
from arwssm.experiments import ScanSpec, estimate_mu_c, scan
from arwssm.invariants import (
    abelian_suite,
    certificate_suite,
    ctmc_agreement_suite,
    half_composition_suite,
    least_action_suite,
    monotonicity_suite,
)
from arwssm.lattice import Model

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail, seconds, budget):
        in_time = seconds < budget
        verdict = "PASS" if ok and in_time else "FAIL"
        with capsys.disabled():
            print(f"\n[criterion {number:>2}] {verdict}: {detail} ({seconds:.1f}s of {budget}s)")
        assert ok, detail
        assert in_time, f"took {seconds:.1f}s, budget {budget}s"
    return emit


def timed(fn, *args, **kw):
    t = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t


def test_01_abelian(report):
    reps, secs = timed(lambda: [abelian_suite(k, 1000, 101, max_size=64, max_mu=2.0) for k in ("ssm", "arw")])
    detail = "; ".join(f"{r.name} {r.checked} instances x 3 policies, {r.failures} mismatches" for r in reps)
    report(1, all(r.ok for r in reps), detail, secs, 60)


def test_02_half_composition(report):
    rep, secs = timed(half_composition_suite, 1000, 102)
    report(2, rep.ok and rep.checked == 1000, f"{rep.checked} instances, {rep.failures} mismatches", secs, 1)


def test_03_least_action(report):
    reps, secs = timed(lambda: [least_action_suite(k, 100, 100, 103) for k in ("ssm", "arw")])
    detail = "; ".join(f"{r.name} {r.checked} probes, {r.failures} violations" for r in reps)
    ok = all(r.ok and r.checked == 100 * 100 for r in reps)
    report(3, ok, detail, secs, 60)


def test_04_monotonicity(report):
    reps, secs = timed(lambda: [monotonicity_suite(k, 500, 104) for k in ("ssm", "arw")])
    detail = "; ".join(f"{r.name} {r.checked} coupled pairs, {r.failures} violations" for r in reps)
    report(4, all(r.ok for r in reps), detail, secs, 60)


def test_05_ctmc_agreement(report):
    reps, secs = timed(lambda: [ctmc_agreement_suite(k, 200, 105) for k in ("ssm", "arw")])
    detail = "; ".join(f"{r.name} {r.checked} seeds, {r.failures} disagreements" for r in reps)
    report(5, all(r.ok for r in reps), detail, secs, 120)


def test_06_expected_topplings_bound(report):
    rep, secs = timed(expected_topplings_bound_check, 0.5, 1, 1.0, 100, 10**4, 106)
    detail = f"E[h_1(0)] ~ {rep.estimate:.4f} +- {rep.stderr:.4f}, bound {rep.bound}"
    report(6, rep.ok, detail, secs, 120)


def test_07_arw_increments(report):
    s, secs = timed(barrier_increment_samples, Model.arw(1), 10**5, 107)
    ks, counts = np.unique(s.values, return_counts=True)
    emp = np.cumsum(counts) / len(s.values)
    dist = float(np.abs(emp - (1 - 0.5**ks)).max())
    ok = abs(s.mean - 2.0) <= 0.02 and dist <= 0.01
    report(7, ok, f"mean {s.mean:.4f}, CDF sup-distance {dist:.4f}", secs, 60)


def test_08_ssm_increments(report):
    s, secs = timed(barrier_increment_samples, Model.ssm(), 10**5, 108)
    report(8, abs(s.mean - 4.0) <= 0.05, f"mean {s.mean:.4f} ({s.diverged} walks over the cap)", secs, 120)


def test_09_certificate_soundness(report):
    reps, secs = timed(lambda: [certificate_suite(k, 1000, 109) for k in ("ssm", "arw")])
    detail = "; ".join(f"{r.name} {r.checked} verified, {r.failures} discrepancies" for r in reps)
    ok = all(r.ok and r.checked == 1000 for r in reps)
    report(9, ok, detail, secs, 300)


def test_10_fixation_below_threshold(report):
    def run():
        out = {}
        for model, lam, mu in (("arw", "1", 0.3), ("ssm", "1", 0.2)):
            res = scan(ScanSpec(model=model, lam=lam, mus=(mu,), Ls=(1000, 10000), replicas=500, seed=110))
            out[model] = (res.fixation_fraction(1000, mu), res.fixation_fraction(10000, mu))
        return out

    out, secs = timed(run)
    ok = all(small - large <= 0.05 for small, large in out.values())
    detail = "; ".join(f"{m}: {a:.3f} -> {b:.3f}" for m, (a, b) in out.items())
    report(10, ok, detail, secs, 600)


def test_11_activity_above_one(report):
    def run():
        out = {}
        for model in ("ssm", "arw"):
            res = scan(ScanSpec(model=model, lam="1", mus=(1.5,), Ls=(50, 200), replicas=200, seed=111))
            out[model] = (res.median_odometer(50, 1.5), res.median_odometer(200, 1.5))
        return out

    out, secs = timed(run)
    ok = all(large > 5 * small for small, large in out.values())
    detail = "; ".join(f"{m}: median m(0) {a:.1f} -> {b:.1f}" for m, (a, b) in out.items())
    report(11, ok, detail, secs, 600)


def test_12_critical_density(report):
    def run():
        ssm = estimate_mu_c(Model.ssm(), (1000, 3000, 10000), 200, 112)
        arw = estimate_mu_c(Model.arw("inf"), (300, 1000, 3000), 200, 112)
        return ssm, arw

    (ssm, arw), secs = timed(run)
    ok = 0.90 <= ssm.value <= 1.00 and 0.98 <= arw.value <= 1.02
    detail = (f"ssm mu_c ~ {ssm.value:.4f} (95% {ssm.interval[0]:.3f}..{ssm.interval[1]:.3f}); "
              f"arw(inf) mu_c ~ {arw.value:.4f} (95% {arw.interval[0]:.3f}..{arw.interval[1]:.3f})")
    report(12, ok, detail, secs, 1800)


DETERMINISM_RUNS = [
    ["stabilize", "--model", "arw", "--lambda", "1/2", "--mu", "0.9", "--L", "200", "--seed", "3"],
    ["dynamics", "--model", "ssm", "--mu", "0.8", "--L", "30", "--seed", "3", "--format", "records"],
    ["certify", "--model", "arw", "--lambda", "1", "--mu", "0.2", "--n", "5", "--seed", "3"],
    ["sample-increments", "--model", "ssm", "--count", "20000", "--seed", "3"],
    ["scan", "--model", "arw", "--lambda", "1", "--mu", "0.3,0.6,0.9", "--L", "50,200", "--replicas", "20",
     "--seed", "3"],
    ["estimate-mu-c", "--model", "arw", "--lambda", "inf", "--L", "50,100", "--replicas", "40", "--seed", "3",
     "--bootstrap", "100", "--format", "records"],
    ["selftest", "--scale", "0.1", "--seed", "3"],
]


def test_13_determinism(report, tmp_path):
    def run():
        bad = []
        for i, argv in enumerate(DETERMINISM_RUNS):
            outs = []
            for workers in ("1", "2"):
                d = tmp_path / f"{i}-{workers}"
                main([*argv, "--workers", workers, "--out", str(d)])
                outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "manifest.json"})
            if outs[0] != outs[1] or not outs[0]:
                bad.append(argv[0])
        return bad

    bad, secs = timed(run)
    detail = f"{len(DETERMINISM_RUNS)} subcommands re-run with 1 and 2 workers, differing: {bad or 'none'}"
    report(13, not bad, detail, secs, 60)
