import numpy as np
import pytest

from arwssm import rng
from arwssm.certifier import (
    Certificate,
    Ledger,
    barrier_increment_samples,
    build_certificate,
    conditioned_walk_increments,
    default_start,
    explore_arw_step,
    ledger_consistent,
    ssm_increment_tail,
    trace_hash,
    verify_certificate,
)
from arwssm import kernels
from arwssm.lattice import SLEEP, Box, Configuration, InstructionField, JumpKernel, Model, sample_poisson_config

LEFT, RIGHT = 0, 1


def scripted(model, entries, seed=0):
    return InstructionField(seed, model).with_overlay({((x,), j): c for (x, j), c in entries.items()})


def arw_example():
    # right walk 4 -> 0 naps once at 4 and once at 3; left walk -3 -> 0 naps at -2
    entries = {
        (4, 1): SLEEP, (4, 2): LEFT, (3, 1): SLEEP, (3, 2): LEFT, (2, 1): LEFT, (1, 1): LEFT,
        (-3, 1): RIGHT, (-2, 1): SLEEP, (-2, 2): RIGHT, (-1, 1): RIGHT,
    }
    eta = Configuration.from_states({4: 1, -3: 1})
    return Model.arw(1), eta, scripted(Model.arw(1), entries, seed=11)


def test_scripted_arw_barriers():
    model, eta, fld = arw_example()
    cert = build_certificate(model, eta, fld, 1)
    assert cert.success
    assert cert.barriers == {1: 3, -1: -2}
    assert cert.kept == {1: (3, 1), -1: (-2, 1)}
    assert cert.stop_index == {1: 2, -1: 2}
    assert [len(cert.traces[k]) for k in (1, -1)] == [6, 4]
    assert cert.traces[1].visited == [(4, 1), (4, 2), (3, 1), (3, 2), (2, 1), (1, 1)]


def test_scripted_arw_certificate_verifies():
    model, eta, fld = arw_example()
    cert = build_certificate(model, eta, fld, 1)
    rep = verify_certificate(cert, eta, fld, strict=True)
    assert rep.ok and rep.origin_half == 0 and rep.generic_origin_half == 0
    assert rep.volume == (-3, 4)


def test_particle_next_to_origin_fails():
    model = Model.arw(1)
    eta = Configuration.from_states({1: 1, -3: 1})
    cert = build_certificate(model, eta, scripted(model, {(1, 1): LEFT}), 1)
    assert not cert.success
    assert cert.failure_step == 1


def test_ssm_straight_left_walk_fails():
    model = Model.ssm()
    eta = Configuration.from_states({3: 1, -3: 1})
    fld = scripted(model, {(3, 1): LEFT, (2, 1): LEFT, (1, 1): LEFT})
    cert = build_certificate(model, eta, fld, 1)
    assert not cert.success and cert.failure_step == 1
    assert "outward" in cert.failure_reason


def test_scripted_ssm_barrier():
    model = Model.ssm()
    entries = {
        (3, 1): LEFT, (2, 1): RIGHT, (3, 2): LEFT, (2, 2): LEFT, (1, 1): LEFT,
        (-3, 1): RIGHT, (-2, 1): LEFT, (-3, 2): RIGHT, (-2, 2): RIGHT, (-1, 1): RIGHT,
    }
    eta = Configuration.from_states({3: 1, -3: 1})
    fld = scripted(model, entries, seed=5)
    cert = build_certificate(model, eta, fld, 1)
    assert cert.success
    assert cert.barriers == {1: 3, -1: -3}
    assert cert.parities == {1: 0, -1: 0}
    assert cert.stop_index == {1: 1, -1: 1}
    assert verify_certificate(cert, eta, fld).ok


def test_zero_steps_is_vacuous():
    model = Model.arw(1)
    cert = build_certificate(model, Configuration.from_counts([3]), InstructionField(0, model), 0)
    assert cert.success


def test_origin_particle_fails_at_step_zero():
    model = Model.ssm()
    cert = build_certificate(model, Configuration.from_counts([1]), InstructionField(0, model), 2)
    assert not cert.success and cert.failure_step == 0


def test_missing_particle():
    model = Model.arw(1)
    eta = Configuration.from_states({4: 1})
    cert = build_certificate(model, eta, InstructionField(0, model), 1)
    assert cert.failure_reason == "no such particle"


def test_rejects_unsupported_fields():
    with pytest.raises(ValueError):
        build_certificate(Model.arw("inf"), Configuration(), InstructionField(0, Model.arw("inf")), 1)
    with pytest.raises(ValueError):
        fld = InstructionField(0, Model.ssm(), JumpKernel.biased_1d(0.7))
        build_certificate(Model.ssm(), Configuration(), fld, 1)


def test_trace_hash_twins():
    for fp, y, j in [(0, 0, 1), (123, -5, 7), (2**63, 10**6, 3)]:
        assert trace_hash(fp, y, j) == int(kernels.trace_hash(np.uint64(fp), y, j))


def _random_certificates(model, mu, count, seed, n=3):
    out = []
    r = 0
    while len(out) < count:
        eta = sample_poisson_config(rng.derive_seed(seed, r, 0), mu, Box.centered(200))
        fld = InstructionField(rng.derive_seed(seed, r, 1), model)
        r += 1
        cert = build_certificate(model, eta, fld, n, cap=10**5)
        if cert.success:
            out.append((cert, eta, fld))
    return out


@pytest.mark.parametrize("model, mu", [(Model.arw(1), 0.2), (Model.ssm(), 0.1), (Model.arw("1/2"), 0.2)])
def test_random_certificates_are_sound(model, mu):
    for cert, eta, fld in _random_certificates(model, mu, 15, 3):
        assert ledger_consistent(cert)
        rep = verify_certificate(cert, eta, fld)
        assert rep.ok and rep.origin_half == 0 and rep.generic_origin_half == 0, rep.reason


@pytest.mark.parametrize("model, mu", [(Model.arw(1), 0.2), (Model.ssm(), 0.1)])
def test_text_roundtrip_replays_from_fingerprints(model, mu):
    for cert, eta, fld in _random_certificates(model, mu, 5, 8):
        again = Certificate.from_text(cert.to_text())
        assert again.to_text() == cert.to_text()
        assert verify_certificate(again, eta, fld).ok


def test_tampered_certificate_is_rejected():
    cert, eta, fld = _random_certificates(Model.arw(1), 0.2, 1, 4)[0]
    k = 1
    steps, fp = cert.prefix[k]
    cert.prefix[k] = (steps, fp ^ 1)
    assert not verify_certificate(cert, eta, fld).ok


def test_ledger_growth_keeps_counts():
    led = Ledger(first=0, size=4)
    led.used[2] = 5
    led.cover(-100, 300)
    assert led[2] == 5 and led[-100] == 0 and led[300] == 0


def test_default_starts():
    assert default_start(Model.arw(1)) == 11
    assert default_start(Model.ssm()) == 14


def test_ssm_tail_law_mean_is_four():
    # E[Y] = sum over k >= 0 of P(Y > k)
    assert sum(ssm_increment_tail(k) for k in range(200)) == pytest.approx(4.0, abs=1e-12)
    assert ssm_increment_tail(1) == 1.0
    assert ssm_increment_tail(2) == 0.75


def test_conditioned_walk_oracle():
    v = conditioned_walk_increments(40000, 3)
    assert v.min() >= 2
    assert abs(v.mean() - 4.0) < 5 * v.std() / np.sqrt(len(v))


def test_arw_increments_are_geometric():
    s = barrier_increment_samples(Model.arw(1), 20000, 5)
    ks = np.arange(1, 12)
    emp = np.array([(s.values > k).mean() for k in ks])
    assert np.abs(emp - 0.5**ks).max() < 0.02
    assert abs(s.mean - 2.0) < 0.05


def test_ssm_increments_match_tail_law():
    s = barrier_increment_samples(Model.ssm(), 20000, 6)
    ks = np.arange(1, 15)
    emp = np.array([(s.values > k).mean() for k in ks])
    exact = np.array([ssm_increment_tail(k) for k in ks])
    assert np.abs(emp - exact).max() < 0.02


def test_chain_increments_are_uncorrelated():
    s = barrier_increment_samples(Model.arw(1), 20000, 7, mode="chain")
    v = s.values.astype(float)
    assert abs(np.corrcoef(v[:-1], v[1:])[0, 1]) < 0.05
    assert abs(v.mean() - 2.0) < 0.06


def test_explore_step_uses_fresh_instructions_only():
    model, eta, fld = arw_example()
    led = Ledger()
    first = explore_arw_step(eta, fld, led, 1, 0)
    assert first.barrier == 3
    # a second walk from the same start reads only unused instructions
    second = explore_arw_step(eta, fld, led, 1, 0, cap=10**6, start=4)
    assert not set(first.trace.visited) & set(second.trace.visited)
