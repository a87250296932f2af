import random

import pytest

from arwssm.invariants import (
    SuiteReport,
    abelian_suite,
    certificate_suite,
    ctmc_agreement_suite,
    half_composition_suite,
    least_action_suite,
    monotonicity_suite,
    permutation_suite,
    random_instance,
)


def test_report_line():
    rep = SuiteReport("demo", checked=3)
    assert rep.ok and rep.line().startswith("PASS demo: 3 checked")
    rep.fail("boom")
    assert not rep.ok and rep.details == ["boom"]
    assert not SuiteReport("empty").ok


def test_random_instance_respects_limits():
    rnd = random.Random(0)
    for _ in range(50):
        model, eta, V, fld = random_instance("arw", rnd, 16, 1.0)
        assert 1 <= len(V) <= 16
        assert not model.is_ssm


@pytest.mark.parametrize("kind", ["ssm", "arw"])
def test_suites_pass_small(kind):
    reports = [
        abelian_suite(kind, 30, 1),
        least_action_suite(kind, 3, 10, 2),
        monotonicity_suite(kind, 20, 3),
        permutation_suite(kind, 10, 4),
        ctmc_agreement_suite(kind, 10, 5),
        certificate_suite(kind, 5, 6),
    ]
    for rep in reports:
        assert rep.ok, (rep.name, rep.details)


def test_half_composition_suite():
    assert half_composition_suite(200, 0).ok
