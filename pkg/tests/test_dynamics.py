import math

import pytest
from hypothesis import given, strategies as st

from arwssm.dynamics import (
    Dynamics,
    expected_topplings_bound_check,
    run_dynamics,
    site_rate,
    truncation_monotonicity_check,
)
from arwssm.engine import stabilize
from arwssm.invariants import _everywhere
from arwssm.lattice import Box, Configuration, InstructionField, Model, sample_poisson_config

MODELS = [Model.ssm(), Model.arw("1/2"), Model.arw(1), Model.arw("inf")]


@pytest.mark.parametrize("model, code, rate", [
    (Model.ssm(), 2, 0.0), (Model.ssm(), 4, 1.0), (Model.ssm(), 8, 1.0),
    (Model.arw(1), 1, 0.0), (Model.arw(1), 2, 2.0), (Model.arw(1), 6, 6.0),
    (Model.arw("1/2"), 4, 3.0), (Model.arw("inf"), 2, 0.0), (Model.arw("inf"), 4, 2.0),
])
def test_site_rate(model, code, rate):
    assert site_rate(model, code) == rate


@given(st.sampled_from(MODELS), st.integers(0, 2**62), st.floats(0.1, 1.2), st.integers(1, 15))
def test_quiescent_state_matches_stabilization(model, seed, mu, M):
    eta = sample_poisson_config(seed, mu, Box.centered(M))
    fld = InstructionField(seed ^ 1, model)
    traj = run_dynamics(model, eta, fld, seed=seed ^ 2, cap=10**7)
    res = stabilize(model, eta, _everywhere(), fld, cap=10**7)
    assert traj.quiescent and not traj.truncated
    assert traj.final == res.final
    assert traj.odometer == res.odometer


def test_samples_are_nondecreasing():
    model = Model.arw(1)
    eta = sample_poisson_config(3, 0.9, Box.centered(20))
    traj = run_dynamics(model, eta, InstructionField(4, model), t_max=5.0, seed=5,
                        record_times=[0.5, 1, 2, 4], watch=[0, 1])
    assert [t for t, _ in traj.samples] == [0.5, 1, 2, 4]
    for (_, a), (_, b) in zip(traj.samples, traj.samples[1:]):
        assert all(a[x] <= b[x] for x in a)


def test_time_limit_is_respected():
    model = Model.arw(1)
    eta = sample_poisson_config(3, 0.9, Box.centered(20))
    dyn = Dynamics(model, eta, InstructionField(4, model), 9)
    while dyn.peek() <= 0.3:
        dyn.fire()
    assert dyn.time <= 0.3 < dyn.peek()


def test_same_seeds_same_path():
    model = Model.ssm()
    eta = sample_poisson_config(1, 0.8, Box.centered(15))
    a = run_dynamics(model, eta, InstructionField(2, model), seed=3, keep_events=True)
    b = run_dynamics(model, eta, InstructionField(2, model), seed=3, keep_events=True)
    assert a.events == b.events


@pytest.mark.parametrize("model", MODELS)
def test_truncation_monotonicity(model):
    for seed in range(5):
        eta = sample_poisson_config(seed, 0.9, Box.centered(30))
        rep = truncation_monotonicity_check(model, eta, InstructionField(seed + 100, model), seed + 200,
                                            M=8, M2=20, t=3.0)
        assert rep.ok, rep


def test_truncation_check_needs_ordered_boxes():
    model = Model.ssm()
    with pytest.raises(ValueError):
        truncation_monotonicity_check(model, Configuration(), InstructionField(0, model), 0, 5, 3, 1.0)


def test_expected_topplings_bound_small():
    rep = expected_topplings_bound_check(0.5, 1, 1.0, 30, 400, 1)
    assert rep.bound == 1.0
    assert rep.ok
    assert expected_topplings_bound_check(0, 1, 1.0, 30, 10, 1).estimate == 0.0


def test_records_end_with_site_counts():
    model = Model.arw(1)
    traj = run_dynamics(model, Configuration.from_counts([2]), InstructionField(0, model), seed=1)
    recs = traj.records()
    assert recs[0]["quiescent"] is True
    assert sum(r["h"] for r in recs[1:]) == traj.odometer.total() // 2
    assert math.isfinite(traj.t_final)
