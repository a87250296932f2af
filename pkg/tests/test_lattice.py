import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from arwssm import kernels, rng
from arwssm.lattice import (
    RHO,
    SLEEP,
    SLEEP_INSTRUCTION,
    Box,
    Configuration,
    IllegalMove,
    IllegalSleep,
    InstructionField,
    JumpKernel,
    Model,
    ParticleState,
    apply_instruction,
    code_add,
    code_sleep,
    instruction_at,
    jump,
    parse_lambda,
    poisson_counts,
    sample_poisson_config,
    state_add,
)

u64 = st.integers(0, 2**64 - 1)


def test_mix64_reference_value():
    # first output of the reference SplitMix64 generator seeded with 0
    assert rng.mix64(rng.GOLDEN) == 0xE220A8397B1DCDAF
    assert rng.draw(0, 1) == 0xE220A8397B1DCDAF


@given(u64, st.integers(1, 10**6))
def test_python_and_compiled_hashes_agree(key, j):
    assert int(kernels.draw(np.uint64(key), j)) == rng.draw(key, j)
    assert float(kernels.unit(np.uint64(rng.draw(key, j)))) == rng.uniform(key, j)


@given(u64, st.integers(-10**6, 10**6))
def test_site_keys_agree(seed, x):
    base = rng.stream_base(seed, rng.INSTRUCTIONS)
    keys = kernels.site_keys(np.uint64(seed), rng.INSTRUCTIONS, x, 1)
    assert int(keys[0]) == rng.site_key(base, (x,))


def test_uniform_range_and_mean():
    us = [rng.uniform(rng.site_key(7, (0,)), j) for j in range(1, 20001)]
    assert min(us) >= 0.0 and max(us) < 1.0
    assert abs(np.mean(us) - 0.5) < 5 * math.sqrt(1 / 12 / len(us))


def test_derive_seed_labels_are_distinct():
    seeds = {rng.derive_seed(1, r, k) for r in range(100) for k in range(3)}
    assert len(seeds) == 300


def test_state_codes():
    assert ParticleState(0).code == 0
    assert RHO.code == 1
    assert ParticleState(3).code == 6
    assert ParticleState.from_code(1) == RHO
    with pytest.raises(ValueError):
        ParticleState(2, True)


@pytest.mark.parametrize("a, b, out", [(0, 0, 0), (1, 0, 1), (0, 1, 1), (1, 2, 4), (1, 1, 4), (2, 2, 4), (6, 1, 8)])
def test_code_add(a, b, out):
    assert code_add(a, b) == out


def test_state_add_wakes_sleeper():
    assert state_add(RHO, ParticleState(1)) == ParticleState(2)


def test_code_sleep():
    assert code_sleep(2) == 1
    assert code_sleep(4) == 4
    for c in (0, 1):
        with pytest.raises(IllegalSleep):
            code_sleep(c)


def test_parse_lambda():
    assert parse_lambda("1/2") == Fraction(1, 2)
    assert parse_lambda("inf") == math.inf
    assert parse_lambda(2) == 2
    with pytest.raises(ValueError):
        parse_lambda("-1")


def test_model_rates():
    assert Model.arw(1).sleep_probability == 0.5
    assert Model.arw(1).rate_factor == 2.0
    assert Model.arw("inf").instant_sleep
    assert Model.ssm().sleep_probability == 0.0


def test_box():
    V = Box.interval(-2, 3)
    assert len(V) == 6
    assert (3,) in V and (4,) not in V
    assert list(Box.centered(1, 2))[0] == (-1, -1)
    assert Box.centered(5).contains_box(V)


def test_configuration_roundtrip():
    eta = Configuration.from_states({0: "rho", 2: 3, -1: 0})
    assert eta.code((0,)) == 1
    assert eta.total() == 4
    assert Configuration.from_text(eta.to_text()) == eta
    assert eta.particles() == [(0,), (2,), (2,), (2,)]


def test_nearest_neighbor_offsets_are_sorted():
    assert JumpKernel.nearest_neighbor(1).offsets == ((-1,), (1,))


def test_field_is_pure_function():
    # read order must not matter
    pairs = [(x, j) for x in range(-5, 5) for j in range(1, 50)]
    f = InstructionField(99, Model.arw(1))
    g = InstructionField(99, Model.arw(1))
    a = [f.code_at((x,), j) for x, j in pairs]
    b = [g.code_at((x,), j) for x, j in reversed(pairs)]
    assert a == b[::-1]


@pytest.mark.parametrize("model", [Model.ssm(), Model.arw("1/2"), Model.arw(1), Model.arw("inf")])
def test_block_decoder_matches_reference(model):
    f = InstructionField(1234, model)
    for x in range(-3, 4):
        key = f.key((x,))
        assert f.base_block((x,), 5, 40) == [f._draw_code(key, j) for j in range(5, 45)]


def test_instruction_frequencies():
    f = InstructionField(5, Model.arw(1))
    codes = np.array(f.base_block((0,), 1, 40000))
    n = len(codes)
    assert abs((codes == SLEEP).mean() - 0.5) < 5 * math.sqrt(0.25 / n)
    assert abs((codes == 1).mean() - 0.25) < 5 * math.sqrt(0.1875 / n)


def test_ssm_field_has_no_sleep():
    codes = InstructionField(5, Model.ssm()).base_block((0,), 1, 5000)
    assert set(codes) == {0, 1}


def test_overlay_and_instruction_at():
    f = InstructionField(0, Model.arw(1)).with_overlay({(0, 1): jump(1), (0, 2): SLEEP_INSTRUCTION})
    assert instruction_at(f, 0, 1) == jump(1)
    assert instruction_at(f, 0, 2).kind == "sleep"
    with pytest.raises(ValueError):
        instruction_at(f, 0, 0)


def test_apply_instruction():
    eta = Configuration.from_counts([2])
    out = apply_instruction(eta, 0, jump(-1))
    assert out.codes() == {(0,): 2, (-1,): 2}
    with pytest.raises(IllegalMove):
        apply_instruction(Configuration.from_states({0: "rho"}), 0, jump(1))


def test_poisson_mean():
    counts = poisson_counts(3, Box.centered(20000), 0.7)
    n = 40001
    assert abs(sum(counts.values()) / n - 0.7) < 5 * math.sqrt(0.7 / n)


@given(st.integers(0, 2**62), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_poisson_nested_in_density(seed, a, b):
    lo, hi = sorted((a, b))
    box = Box.centered(30)
    small = sample_poisson_config(seed, lo, box, ceiling=1.0)
    large = sample_poisson_config(seed, hi, box, ceiling=1.0)
    assert small <= large


@given(st.integers(0, 2**62))
def test_poisson_consistent_across_boxes(seed):
    big = sample_poisson_config(seed, 0.8, Box.centered(40))
    small = sample_poisson_config(seed, 0.8, Box.centered(10))
    assert big.restrict(Box.centered(10)) == small


def test_compiled_poisson_matches_python():
    seed, a, b, ceiling = 77, -50, 50, 1.2
    sites, us = kernels.poisson_particles(np.uint64(seed), a, b - a + 1, ceiling)
    for mu in (0.3, 0.9, 1.2):
        counts = poisson_counts(seed, Box.interval(a, b), mu, ceiling)
        got = {}
        for x, u in zip(sites.tolist(), us.tolist()):
            if u < mu / ceiling:
                got[(x,)] = got.get((x,), 0) + 1
        assert got == counts
