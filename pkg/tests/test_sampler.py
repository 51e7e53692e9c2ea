import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from attnrec import sampler


def test_distribution_examples():
    d = sampler.build_distribution([1, 1, 1, 1], 0.75)
    assert np.allclose(d.probs, 0.25, atol=1e-15)
    assert sampler.build_distribution([9, 1], 1.0).probs.tolist() == [0.9, 0.1]
    assert sampler.build_distribution([9, 1], 0.0).probs.tolist() == [0.5, 0.5]


def test_fractional_power_oracle():
    # 8 ** 0.75 = 2 ** 2.25 written out independently
    a = 2.0 ** 2.25
    expect = [a / (a + 1), 1 / (a + 1)]
    got = sampler.build_distribution([8, 1], 0.75).probs
    assert np.allclose(got, expect, rtol=0, atol=1e-15)
    assert round(got[0], 4) == 0.8263 and round(got[1], 4) == 0.1737


def test_zero_counts():
    d = sampler.build_distribution([0, 3, 1], 0.0)
    assert d.probs.tolist() == [1 / 3, 1 / 3, 1 / 3]
    d = sampler.build_distribution([0, 3, 1], 0.5)
    assert d.probs[0] == 0.0 and d.support.tolist() == [1, 2]
    with pytest.raises(ValueError):
        sampler.build_distribution([0, 0], 0.5)
    with pytest.raises(ValueError):
        sampler.build_distribution([1, 2], 1.5)
    with pytest.raises(ValueError):
        sampler.build_distribution([-1, 2], 0.5)
    with pytest.raises(ValueError):
        sampler.build_distribution([], 0.5)


def test_distribution_is_read_only():
    d = sampler.build_distribution([1, 2], 1.0)
    with pytest.raises(ValueError):
        d.probs[0] = 0.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 10_000), min_size=1, max_size=60).filter(lambda c: any(c)),
       st.floats(0.0, 1.0))
def test_distribution_properties(counts, gamma):
    d = sampler.build_distribution(counts, gamma)
    assert abs(d.probs.sum() - 1.0) < 1e-12
    assert np.all(d.probs >= 0)
    if gamma > 0:
        assert np.array_equal(d.probs > 0, np.asarray(counts) > 0)
    else:
        assert np.all(d.probs == d.probs[0])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.0, 100.0), min_size=1, max_size=80).filter(lambda w: sum(w) > 0))
def test_alias_reconstruction_property(weights):
    p = np.asarray(weights) / np.sum(weights)
    table = sampler.build_alias(p)
    assert np.all((table.prob >= 0) & (table.prob <= 1))
    assert np.allclose(table.reconstruct(), p, rtol=0, atol=1e-9)


def test_alias_small_cases():
    t = sampler.build_alias(np.array([1.0]))
    assert t.prob.tolist() == [1.0] and t.alias.tolist() == [0]
    t = sampler.build_alias(np.array([0.5, 0.5]))
    assert np.array_equal(t.reconstruct(), [0.5, 0.5])
    rng = np.random.default_rng(0)
    single = sampler.build_alias(np.array([1.0]))
    assert {sampler.sample(single, rng) for _ in range(100)} == {0}


def test_alias_monte_carlo_three_items():
    target = np.array([0.2, 0.3, 0.5])
    t = sampler.build_alias(target)
    draws = sampler.sample_many(t, 10**6, np.random.default_rng(1))
    freq = np.bincount(draws, minlength=3) / 10**6
    assert np.all(np.abs(freq - target) < 0.005)


def test_single_draw_uses_one_index_and_one_coin():
    t = sampler.build_alias(np.array([0.2, 0.3, 0.5]))
    a, b = np.random.default_rng(5), np.random.default_rng(5)
    stream = [sampler.sample(t, a) for _ in range(200)]
    again = [sampler.sample(t, b) for _ in range(200)]
    assert stream == again
    # after one draw the generator has advanced by exactly one integer and one float
    r1, r2 = np.random.default_rng(9), np.random.default_rng(9)
    sampler.sample(t, r1)
    r2.integers(3)
    r2.random()
    assert r1.random() == r2.random()


def test_negatives_forced_and_full_support():
    t = sampler.build_alias(sampler.build_distribution([1, 1, 1], 1.0))
    rng = np.random.default_rng(0)
    assert set(sampler.sample_negatives(t, 2, {0}, rng)) == {1, 2}
    assert set(sampler.sample_negatives(t, 3, set(), rng)) == {0, 1, 2}
    assert sampler.sample_negatives(t, 0, set(), rng) == []
    with pytest.raises(sampler.InfeasibleSample):
        sampler.sample_negatives(t, 3, {1}, rng)


def test_negatives_zero_probability_items_are_not_eligible():
    t = sampler.build_alias(sampler.build_distribution([0, 1, 1], 1.0))
    assert sampler.eligible_count(t, {1}) == 1
    with pytest.raises(sampler.InfeasibleSample):
        sampler.sample_negatives(t, 2, {1}, np.random.default_rng(0))


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 40), st.data())
def test_negatives_distinct_and_exclusion_respecting(n, data):
    counts = data.draw(st.lists(st.integers(1, 50), min_size=n, max_size=n))
    exclude = set(data.draw(st.lists(st.integers(0, n - 1), max_size=n - 1)))
    k = data.draw(st.integers(0, n - len(exclude)))
    t = sampler.build_alias(sampler.build_distribution(counts, 0.75))
    neg = sampler.sample_negatives(t, k, exclude, np.random.default_rng(data.draw(st.integers(0, 2**16))))
    assert len(neg) == k == len(set(neg))
    assert not set(neg) & exclude


def test_negative_conditional_frequencies():
    counts = np.arange(1, 11)
    dist = sampler.build_distribution(counts, 0.75)
    t = sampler.build_alias(dist)
    exclude = {0, 4, 9}
    target = dist.probs.copy()
    target[list(exclude)] = 0
    target /= target.sum()
    rng = np.random.default_rng(2)
    draws = [sampler.sample_negatives(t, 1, exclude, rng)[0] for _ in range(10**6)]
    freq = np.bincount(draws, minlength=10) / len(draws)
    assert np.abs(freq - target).sum() < 0.01


def test_rejection_budget():
    # one eligible item with tiny mass: an attempt cap of 1 must fail almost surely
    t = sampler.build_alias(np.array([1 - 1e-9, 1e-9]))
    with pytest.raises(sampler.InfeasibleSample):
        sampler.sample_negatives(t, 1, {0}, np.random.default_rng(0), max_attempts=1)
