import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ensemble
from freqwes.likelihood import IDEAL, LikelihoodModel
from freqwes.smc import ConfigError, init_prior, variance
from freqwes.strategies import (
    PGH_MAX_REDRAWS,
    DegenerateDistributionError,
    StrategyConfig,
    StrategyKind,
    WindowState,
    advance_window,
    calibrate_multiplier,
    expected_ess_utility,
    expected_variance_utility,
    make_chooser,
    pgh_choose,
    rts_schedule,
    rts_schedule_for_budget,
    select_candidate,
    sh_choose,
    variance_utilities,
    wes_choose,
)

WES = StrategyConfig(kind=StrategyKind.WES)
AWES = StrategyConfig(kind=StrategyKind.AWES)


def by_time(times):
    """Utility increasing with time: the largest candidate always wins."""
    return np.asarray(times)


def ranked(rank):
    """Utility that makes the candidate of the given descending-time rank win."""

    def fn(times):
        order = np.argsort(-times)
        u = np.zeros(len(times))
        u[order[rank - 1]] = 1.0
        return u

    return fn


class TestVarianceUtility:
    def test_point_mass_is_zero(self):
        e = ensemble(np.full(5, 0.8))
        for t in (0.0, 1.0, 37.5, 1e4):
            assert expected_variance_utility(e, IDEAL, t) == pytest.approx(0.0, abs=1e-30)

    def test_two_particle_example(self):
        u = expected_variance_utility(ensemble([math.pi / 2, math.pi]), IDEAL, 1.0)
        # 0.75 * (2/9) * (pi/2)^2
        assert u == pytest.approx(-0.75 * (2 / 9) * (math.pi / 2) ** 2, rel=1e-12)
        assert u == pytest.approx(-0.4112, abs=1e-4)

    def test_zero_time_is_minus_variance(self, rng):
        e = ensemble(rng.uniform(0, 1.5, 300), rng.dirichlet(np.ones(300)))
        assert expected_variance_utility(e, IDEAL, 0.0) == pytest.approx(-variance(e), rel=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0.0, 200.0), st.sampled_from([None, 50.0]))
    def test_matches_explicit_branches(self, seed, t, tc):
        rng = np.random.default_rng(seed)
        x = rng.uniform(0, 1.5, 40)
        w = rng.dirichlet(np.ones(40))
        model = LikelihoodModel(tc)
        p1 = np.sin(x * t / 2) ** 2 if tc is None else 0.5 * (1 - math.exp(-t / tc) * np.cos(x * t))
        total = 0.0
        for lik in (1 - p1, p1):
            px = np.dot(w, lik)
            if px > 0:
                cw = w * lik / px
                m = np.dot(cw, x)
                total += px * np.dot(cw, (x - m) ** 2)
        assert expected_variance_utility(ensemble(x, w), model, t) == pytest.approx(-total, abs=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31))
    def test_never_above_zero_or_below_minus_prior_variance(self, seed):
        rng = np.random.default_rng(seed)
        e = ensemble(rng.uniform(0, 1.5, 100), rng.dirichlet(np.ones(100)))
        u = variance_utilities(e, IDEAL, rng.uniform(0, 100, 20))
        assert np.all(u <= 0)
        assert np.all(u >= -variance(e) * (1 + 1e-9))


class TestEssUtility:
    def test_uniform_zero_time(self):
        e = ensemble(np.linspace(0.1, 1.5, 40))
        assert expected_ess_utility(e, IDEAL, 0.0, 0.5) == pytest.approx(-abs(40 - 20), rel=1e-12)

    def test_single_survivor_branches(self):
        # t=1: P(1|pi)=1, P(1|2pi)~0, so either outcome leaves one particle
        e = ensemble([math.pi, 2 * math.pi])
        assert expected_ess_utility(e, IDEAL, 1.0, 0.25) == pytest.approx(-abs(1 - 0.25 * 2), abs=1e-12)

    def test_indistinguishable_pair(self):
        # omega and omega+2pi share a likelihood at t=1
        e = ensemble([0.5, 0.5 + 2 * math.pi])
        assert expected_ess_utility(e, IDEAL, 1.0, 0.5) == pytest.approx(-1.0, abs=1e-12)


class TestWindowStateMachine:
    def test_third_hit_expands(self, rng):
        e = init_prior(100, rng)
        w = WindowState(0.0, 100.0, 2)
        _, new, _ = wes_choose(e, IDEAL, w, WES, rng, utility_fn=ranked(2))
        assert new == WindowState(100.0, 200.0, 0)

    def test_no_hit_keeps_window(self, rng):
        e = init_prior(100, rng)
        w = WindowState(0.0, 100.0, 1)
        _, new, _ = wes_choose(e, IDEAL, w, WES, rng, utility_fn=ranked(10))
        assert new == w

    def test_expansion_exactly_on_third_call(self, rng):
        e = init_prior(100, rng)
        w = WindowState(0.0, 100.0, 0)
        seen = []
        for _ in range(9):
            _, w, _ = wes_choose(e, IDEAL, w, WES, rng, utility_fn=by_time)
            seen.append((w.lower, w.upper, w.hits))
        assert seen == [
            (0.0, 100.0, 1), (0.0, 100.0, 2), (100.0, 200.0, 0),
            (100.0, 200.0, 1), (100.0, 200.0, 2), (200.0, 400.0, 0),
            (200.0, 400.0, 1), (200.0, 400.0, 2), (400.0, 800.0, 0),
        ]

    def test_rank_boundary(self, rng):
        e = init_prior(100, rng)
        for rank, hit in ((3, True), (4, False)):
            _, new, _ = wes_choose(e, IDEAL, WindowState(0.0, 100.0, 0), WES, rng, utility_fn=ranked(rank))
            assert new.hits == int(hit)

    def test_chosen_time_inside_entry_window(self, rng):
        e = init_prior(100, rng)
        w = WindowState(50.0, 100.0, 2)
        t, _, evals = wes_choose(e, IDEAL, w, WES, rng, utility_fn=by_time)
        assert 50.0 < t <= 100.0
        assert all(50.0 < ev.time <= 100.0 for ev in evals)

    def test_cap(self):
        w = advance_window(WindowState(4e11, 8e11, 2), True, WES)
        assert w.upper == 8e11 and w.hits == 0

    def test_invalid_window(self):
        with pytest.raises(ConfigError):
            WindowState(10.0, 5.0)


class TestWesChoose:
    def test_candidate_count_constant(self, rng):
        e = init_prior(200, rng)
        chooser = make_chooser(WES, IDEAL, 1e4)
        for _ in range(200):
            chooser.choose(e, None, 0.0, rng)
        assert chooser.n_candidates == [50] * 200

    def test_evaluations_ranked(self, rng):
        e = init_prior(200, rng)
        _, _, evals = wes_choose(e, IDEAL, WindowState(0.0, 100.0), WES, rng)
        ranks = sorted(ev.time_rank_desc for ev in evals)
        assert ranks == list(range(1, 51))
        largest = max(evals, key=lambda ev: ev.time)
        assert largest.time_rank_desc == 1

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0.1, 10.0), st.floats(-5.0, 5.0))
    def test_argmax_invariant_to_monotone_transform(self, seed, scale, shift):
        e = init_prior(100, np.random.default_rng(seed))
        base = lambda times: variance_utilities(e, IDEAL, times)  # noqa: E731
        moved = lambda times: scale * base(times) + shift  # noqa: E731
        t1, w1, _ = wes_choose(e, IDEAL, WindowState(0, 100), WES, np.random.default_rng(seed), base)
        t2, w2, _ = wes_choose(e, IDEAL, WindowState(0, 100), WES, np.random.default_rng(seed), moved)
        assert t1 == t2 and w1 == w2

    def test_ties_go_to_smallest_time(self):
        times = np.array([5.0, 2.0, 9.0, 2.5])
        assert select_candidate(times, np.array([1.0, 1.0, 0.0, 1.0])) == 1

    def test_awes_uses_ess_utility(self, rng):
        e = init_prior(100, rng)
        t_a, _, ev_a = wes_choose(e, IDEAL, WindowState(0, 100), AWES, np.random.default_rng(1))
        times = np.array([ev.time for ev in ev_a])
        expected = [expected_ess_utility(e, IDEAL, t, 0.5) for t in times]
        np.testing.assert_allclose([ev.utility for ev in ev_a], expected, rtol=1e-12)

    def test_warmup_and_shots(self):
        chooser = make_chooser(WES, IDEAL, 1e4)
        assert list(chooser.warmup) == [(1.0, 1)] * 10
        assert WES.shots == 10 and AWES.shots == 10
        assert StrategyConfig(kind=StrategyKind.SH).shots == 1


class FakeRng:
    """Scripted stand-in for ``Generator.choice``."""

    def __init__(self, pairs):
        self.pairs = list(pairs)

    def choice(self, K, size, p):
        return np.array(self.pairs.pop(0))


class TestHeuristics:
    @pytest.mark.parametrize("sigma,c,expected", [(0.25, 1.0, 4.0), (0.1, 0.5, 5.0)])
    def test_sigma_heuristic(self, sigma, c, expected):
        e = ensemble([1.0 - sigma, 1.0 + sigma])
        cfg = StrategyConfig(kind=StrategyKind.SH, heuristic_multiplier=c)
        assert sh_choose(e, cfg) == pytest.approx(expected, rel=1e-12)

    def test_sigma_zero(self):
        with pytest.raises(DegenerateDistributionError):
            sh_choose(ensemble([0.7, 0.7]), StrategyConfig(kind=StrategyKind.SH))

    def test_pgh_example(self):
        e = ensemble([0.3, 0.8])
        cfg = StrategyConfig(kind=StrategyKind.PGH)
        assert pgh_choose(e, cfg, FakeRng([(0, 1)])) == pytest.approx(2.0)

    def test_pgh_multiplier(self):
        e = ensemble([0.1, 0.6])
        cfg = StrategyConfig(kind=StrategyKind.PGH, heuristic_multiplier=2.0)
        assert pgh_choose(e, cfg, FakeRng([(1, 0)])) == pytest.approx(4.0)

    def test_pgh_redraws_coincident_pair(self):
        e = ensemble([0.3, 0.8])
        cfg = StrategyConfig(kind=StrategyKind.PGH)
        assert pgh_choose(e, cfg, FakeRng([(1, 1), (0, 0), (1, 0)])) == pytest.approx(2.0)

    def test_pgh_gives_up(self):
        e = ensemble([0.3, 0.8])
        cfg = StrategyConfig(kind=StrategyKind.PGH)
        with pytest.raises(DegenerateDistributionError):
            pgh_choose(e, cfg, FakeRng([(0, 0)] * (PGH_MAX_REDRAWS + 1)))

    def test_pgh_real_rng_positive(self, rng):
        e = init_prior(100, rng)
        for _ in range(50):
            assert pgh_choose(e, StrategyConfig(kind=StrategyKind.PGH), rng) > 0


class TestRandomTimes:
    def test_sorted(self, rng):
        for _ in range(20):
            s = rts_schedule(3, 100.0, rng)
            assert np.all(np.diff(s) >= 0)

    def test_single_value_in_range(self, rng):
        (t,) = rts_schedule(1, 500.0, rng)
        assert 0.0 < t <= 500.0

    def test_cap_follows_coherence_time(self):
        cfg = StrategyConfig(kind=StrategyKind.RTS)
        assert cfg.cap_for(LikelihoodModel(500.0)) == 500.0
        assert cfg.cap_for(IDEAL) == 100.0
        assert replace(cfg, rts_cap=7.0).cap_for(LikelihoodModel(500.0)) == 7.0

    def test_budget_schedule(self, rng):
        s = rts_schedule_for_budget(1e4, 100.0, 1, rng)
        assert np.all(np.diff(s) >= 0)
        assert s.sum() >= 1e4
        assert s.sum() - s.max() < 1e4

    def test_invalid(self, rng):
        with pytest.raises(ConfigError):
            rts_schedule(0, 100.0, rng)


class TestConfig:
    def test_parse_kind(self):
        assert StrategyKind.parse(" WES ") is StrategyKind.WES
        with pytest.raises(ConfigError):
            StrategyKind.parse("nope")


class TestCalibration:
    def test_single_element_grid(self, rng):
        assert calibrate_multiplier("sh", IDEAL, 3, [0.7], rng) == 0.7

    def test_empty_grid(self, rng):
        with pytest.raises(ConfigError):
            calibrate_multiplier("sh", IDEAL, 3, [], rng)

    def test_rejects_non_heuristic(self, rng):
        with pytest.raises(ConfigError):
            calibrate_multiplier("wes", IDEAL, 3, [1.0, 2.0], rng)

    def test_noiseless_sh_selection(self, rng):
        grid = [0.25, 0.5, 1.0, 2.0]
        c = calibrate_multiplier("sh", IDEAL, 4, grid, rng, cet_budget=300.0, n_particles=300)
        assert c in grid and math.isfinite(c) and c > 0

    def test_paired_and_reproducible(self):
        grid = [0.5, 1.0, 2.0]
        a = calibrate_multiplier("pgh", IDEAL, 4, grid, np.random.default_rng(3), cet_budget=300.0, n_particles=300)
        b = calibrate_multiplier("pgh", IDEAL, 4, grid, np.random.default_rng(3), cet_budget=300.0, n_particles=300)
        assert a == b

    @pytest.mark.slow
    @pytest.mark.parametrize("kind", ["sh", "pgh"])
    def test_noisy_constant_not_above_noiseless(self, kind):
        # medians over five calibration seeds
        grid = [0.125, 0.25, 0.5, 1.0, 2.0]
        clean, noisy = [], []
        for seed in range(5):
            kw = dict(cet_budget=3e3, n_particles=1000)
            clean.append(calibrate_multiplier(kind, IDEAL, 10, grid, np.random.default_rng(seed), **kw))
            noisy.append(calibrate_multiplier(kind, LikelihoodModel(500.0), 10, grid, np.random.default_rng(seed), **kw))
        assert np.median(noisy) <= np.median(clean)
