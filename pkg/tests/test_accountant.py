import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsim.accountant import (
    ADVANCED_FILTER_H_CONSTANT,
    Decision,
    FilterHaltedError,
    FilterState,
    PrivacySpend,
    advanced_composition,
    advanced_filter_h,
    advanced_filter_k,
    basic_composition,
    comp,
    filter_step,
    privacy_loss_laplace,
    subsample_amplify,
)
from fedsim.dp import DpCost

mpmath.mp.dps = 50


def mp_advanced(eps, delta, k, delta_prime):
    e = mpmath.mpf(eps)
    ep = e * mpmath.sqrt(2 * k * mpmath.log(1 / mpmath.mpf(delta_prime))) + k * e * mpmath.expm1(e)
    return float(ep), float(k * mpmath.mpf(delta) + mpmath.mpf(delta_prime))


def mp_subsample(eps, delta, m, n):
    q = mpmath.mpf(m) / n
    return float(mpmath.log(1 + q * (mpmath.exp(mpmath.mpf(eps)) - 1))), float(q * mpmath.mpf(delta))


def mp_k(epsilons, eps_g, delta_g):
    eg, dg = mpmath.mpf(eps_g), mpmath.mpf(delta_g)
    h = eg**2 / (mpmath.mpf("28.04") * mpmath.log(1 / dg))
    sq = sum(mpmath.mpf(e) ** 2 for e in epsilons)
    root = mpmath.sqrt((sq + h) * (2 + mpmath.log(sq / h + 1)) * mpmath.log(2 / dg))
    return root + sum(mpmath.mpf(e) * (mpmath.exp(mpmath.mpf(e)) - 1) / 2 for e in epsilons)


class TestPrivacyLoss:
    def test_equal_means(self):
        assert privacy_loss_laplace(3.7, 1.0, 1.0, 0.5) == 0.0

    def test_maximal_at_fx(self):
        assert privacy_loss_laplace(1.0, 1.0, 3.0, 0.5) == pytest.approx(4.0)

    def test_bounded(self):
        out = np.random.default_rng(0).normal(scale=5, size=10_000)
        bound = abs(1.0 - 2.5) / 0.7
        assert all(abs(privacy_loss_laplace(o, 1.0, 2.5, 0.7)) <= bound + 1e-12 for o in out)

    def test_scale_must_be_positive(self):
        with pytest.raises(ValueError):
            privacy_loss_laplace(0.0, 0.0, 1.0, 0.0)


class TestComposition:
    def test_basic(self):
        assert basic_composition([]) == DpCost(0.0, 0.0)
        assert basic_composition([DpCost(1, 0), DpCost(0.5, 1e-5)]) == DpCost(1.5, 1e-5)
        total = basic_composition([DpCost(0.1, 1e-6)] * 10)
        assert total.epsilon == pytest.approx(1.0) and total.delta == pytest.approx(1e-5)

    def test_advanced_examples(self):
        assert advanced_composition(0.0, 0.0, 1, 1e-5) == DpCost(0.0, 1e-5)
        eps, delta = mp_advanced(0.1, 0.0, 100, 1e-5)
        got = advanced_composition(0.1, 0.0, 100, 1e-5)
        assert got.epsilon == pytest.approx(eps, rel=1e-12) and got.delta == delta
        assert got.epsilon == pytest.approx(5.85, abs=0.01)

    def test_advanced_beats_basic_for_many_small_steps(self):
        adv = advanced_composition(0.01, 0.0, 10_000, 1e-6)
        assert adv.epsilon < basic_composition([DpCost(0.01)] * 10_000).epsilon

    @pytest.mark.parametrize("args", [(0.1, 0.0, 0, 1e-5), (0.1, 0.0, 3, 0.0), (-0.1, 0.0, 3, 1e-5)])
    def test_advanced_invalid(self, args):
        with pytest.raises(ValueError):
            advanced_composition(*args)

    @settings(max_examples=50, deadline=None)
    @given(eps=st.floats(0.0, 2.0), k=st.integers(1, 500), dp=st.floats(1e-9, 0.5))
    def test_advanced_monotone(self, eps, k, dp):
        a = advanced_composition(eps, 0.0, k, dp).epsilon
        assert advanced_composition(eps, 0.0, k + 1, dp).epsilon >= a
        assert advanced_composition(eps + 0.01, 0.0, k, dp).epsilon >= a


class TestSubsampling:
    def test_examples(self):
        c = DpCost(0.7, 1e-5)
        assert subsample_amplify(c, 40, 40) == c
        assert subsample_amplify(c, 0, 40) == DpCost(0.0, 0.0)
        got = subsample_amplify(DpCost(1.0, 1e-5), 100, 1000)
        assert got.epsilon == pytest.approx(math.log(1 + 0.1 * (math.e - 1)), rel=1e-12)
        assert got.epsilon == pytest.approx(0.1586, abs=5e-5)
        assert got.delta == pytest.approx(1e-6, rel=1e-12)

    def test_invalid(self):
        with pytest.raises(ValueError):
            subsample_amplify(DpCost(1.0), 5, 4)
        with pytest.raises(ValueError):
            subsample_amplify(DpCost(1.0), 0, 0)

    @settings(max_examples=100, deadline=None)
    @given(
        eps=st.floats(0.001, 5.0),
        delta=st.floats(0.0, 0.5),
        n=st.integers(1, 10_000),
        frac=st.floats(0.0, 1.0),
    )
    def test_never_worse_and_monotone(self, eps, delta, n, frac):
        m = int(frac * n)
        c = subsample_amplify(DpCost(eps, delta), m, n)
        assert c.epsilon <= eps * (1 + 1e-12) and c.delta <= delta
        if m < n:
            assert subsample_amplify(DpCost(eps, delta), m + 1, n).epsilon > c.epsilon


class TestFilters:
    def test_basic_counts(self):
        for eps, runs in ((0.5, 8), (0.8, 5), (0.2, 20)):
            state = FilterState.basic(4.0)
            steps = 0
            while filter_step(state, DpCost(eps)) is Decision.CONT:
                steps += 1
            assert steps == runs

    def test_boundary_is_cont(self):
        assert comp("basic", 1.0, 0.0, [DpCost(0.5), DpCost(0.5)]) is Decision.CONT
        assert comp("basic", 1.0, 0.0, [DpCost(0.5), DpCost(0.5), DpCost(1e-9)]) is Decision.HALT

    def test_basic_delta_budget(self):
        state = FilterState.basic(10.0, 2e-5)
        assert filter_step(state, DpCost(0.1, 1e-5)) is Decision.CONT
        assert filter_step(state, DpCost(0.1, 1e-5)) is Decision.CONT
        assert filter_step(state, DpCost(0.1, 1e-5)) is Decision.HALT

    def test_sticky_and_unspent_trigger(self):
        state = FilterState.basic(1.0)
        filter_step(state, DpCost(0.6), "laplace", round=0)
        assert filter_step(state, DpCost(0.6), "laplace", round=1) is Decision.HALT
        assert state.halted
        with pytest.raises(FilterHaltedError):
            filter_step(state, DpCost(0.1))
        entries = state.spend.entries
        assert [e.spent for e in entries] == [True, False]
        assert entries[1].round == 1
        assert state.spend.total() == DpCost(0.6, 0.0)

    def test_advanced_example(self):
        h = advanced_filter_h(4.0, 1e-3)
        assert h == pytest.approx(16 / (28.04 * math.log(1000)), rel=1e-15)
        assert h == pytest.approx(0.0826, abs=1e-4)
        assert advanced_filter_k([0.5], 4.0, 1e-3) == pytest.approx(3.09, abs=0.01)
        assert advanced_filter_k([0.5, 0.5], 4.0, 1e-3) == pytest.approx(4.51, abs=0.01)
        state = FilterState.advanced(4.0, 1e-3)
        assert filter_step(state, DpCost(0.5)) is Decision.CONT
        assert filter_step(state, DpCost(0.5)) is Decision.HALT
        assert ADVANCED_FILTER_H_CONSTANT == 28.04

    @settings(max_examples=50, deadline=None)
    @given(eps=st.lists(st.floats(0.001, 1.5), min_size=1, max_size=20))
    def test_advanced_k_matches_high_precision(self, eps):
        assert advanced_filter_k(eps, 3.0, 1e-4) == pytest.approx(float(mp_k(eps, 3.0, 1e-4)), rel=1e-12)

    def test_advanced_delta_half_budget(self):
        state = FilterState.advanced(100.0, 1e-3)
        assert filter_step(state, DpCost(0.01, 5e-4)) is Decision.CONT
        assert filter_step(state, DpCost(0.01, 1e-6)) is Decision.HALT

    @pytest.mark.parametrize("delta_g", [0.0, 1 / math.e, 0.5])
    def test_advanced_requires_small_delta(self, delta_g):
        with pytest.raises(ValueError):
            FilterState.advanced(1.0, delta_g)

    @settings(max_examples=60, deadline=None)
    @given(eps=st.floats(0.01, 2.0), eps_g=st.floats(0.05, 20.0))
    def test_basic_permitted_steps(self, eps, eps_g):
        state = FilterState.basic(eps_g)
        steps = 0
        while filter_step(state, DpCost(eps)) is Decision.CONT:
            steps += 1
        ratio = eps_g / eps
        near = round(ratio)
        if abs(ratio - near) <= 1e-9 * max(1.0, ratio):
            assert steps in (near, math.floor(ratio))
        else:
            assert steps == math.floor(ratio)


def test_ledger_is_append_only():
    ledger = PrivacySpend()
    e = ledger.record(DpCost(0.1), "laplace", round=0)
    with pytest.raises(Exception):
        e.spent = False
    entries = ledger.entries
    ledger.record(DpCost(0.2))
    assert len(entries) == 1 and len(ledger) == 2
    assert ledger.to_dict()["total"] == {"epsilon": pytest.approx(0.3), "delta": 0.0}
