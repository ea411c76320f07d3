import math
from dataclasses import asdict, replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rewardfusion import oracles
from rewardfusion import reward_fusion as rf
from rewardfusion.reward_fusion import (
    ALL_MODES,
    BasicInputs,
    EpisodeRewardState,
    FusionConfig,
    FusionMode,
    RewardTerms,
)

unit = st.floats(min_value=1e-6, max_value=1.0, allow_nan=False)

# Frozen from rewardfusion.oracles (direct scalar evaluation / finite differences).
PHASE_MU_PLUS_L = 0.9933071490757153
PHASE_ZERO_ARMSPAN = 0.0066928509242848554
R_DW_FAR = 0.02732372244729256
SLOPE_RATIO_D0_M4 = 5.0


def random_terms(rng, shape=()):
    u = lambda lo=0.0, hi=1.0: rng.uniform(lo, hi, shape)
    r_ep, r_eo = u(1e-6, 1.0), u(1e-6, 1.0)
    return RewardTerms(
        r_ep=r_ep,
        r_eo=r_eo,
        r_ep_enh=r_ep + r_ep**4,
        r_eo_enh=r_eo + r_eo**4,
        r_cb=u(0.0, 20.0),
        r_pb=u(-1.0, 1.0),
        r_ac=rng.integers(0, 2, shape).astype(float),
        r_reg_mani=u(1e-6, 1.0),
        r_reg_loco=u(1e-6, 1.0),
        r_dw=u(1e-6, 1.0),
        r_sa=u(0.0, 3.0),
        r_basic=u(-10.0, 2.0),
        d_phase=u(1e-6, 1 - 1e-6),
        epsilon=u(0.0, 3.0),
        epsilon_ref=u(0.0, 3.0),
    )


class TestTrackingTerms:
    cfg = FusionConfig()

    def test_zero_error(self):
        r_ep, r_eo = rf.tracking_terms(0.0, 0.0, self.cfg)
        assert r_ep == 1.0 and r_eo == 1.0

    def test_sigma_quarter_meter(self):
        r_ep, _ = rf.tracking_terms(0.25, 0.0, FusionConfig(sigma=0.25))
        assert r_ep == pytest.approx(math.exp(-1), abs=1e-12)
        assert r_ep == pytest.approx(0.367879, abs=1e-6)

    def test_half_value(self):
        _, r_eo = rf.tracking_terms(0.0, self.cfg.sigma_s * math.log(2), self.cfg)
        assert r_eo == pytest.approx(0.5, abs=1e-12)

    def test_strictly_decreasing(self):
        d = np.linspace(0, 2, 50)
        r_ep, r_eo = rf.tracking_terms(d, d, self.cfg)
        assert np.all(np.diff(r_ep) < 0) and np.all(np.diff(r_eo) < 0)


class TestPrioritize:
    @pytest.mark.parametrize("hi, lo, expected", [(1, 1, 2), (0.5, 0.8, 0.9)])
    def test_examples(self, hi, lo, expected):
        assert rf.prioritize(hi, lo) == pytest.approx(expected, abs=1e-12)

    def test_gated_by_high_priority(self):
        assert rf.prioritize(1e-12, 1.0) <= 2e-12

    def test_partials_finite_differences(self):
        rng = np.random.default_rng(11)
        h = 1e-6
        for r_ep, r_eo in rng.uniform(0.01, 0.99, (200, 2)):
            d_ep = (rf.prioritize(r_ep + h, r_eo) - rf.prioritize(r_ep - h, r_eo)) / (2 * h)
            d_eo = (rf.prioritize(r_ep, r_eo + h) - rf.prioritize(r_ep, r_eo - h)) / (2 * h)
            assert d_ep == pytest.approx(1 + r_eo, abs=1e-6)
            assert d_eo == pytest.approx(r_ep, abs=1e-6)

    @given(unit, unit)
    def test_low_contribution_bounded_by_high(self, hi, lo):
        assert rf.prioritize(hi, lo) - hi <= hi

    def test_strictly_increasing_in_high(self):
        hi = np.linspace(0.01, 1, 100)
        assert np.all(np.diff(rf.prioritize(hi, 0.3)) > 0)

    def test_maximum_at_one_one(self):
        g = np.round(np.arange(0, 101) * 0.01, 2)
        hi, lo = np.meshgrid(g, g, indexing="ij")
        vals = rf.prioritize(hi, lo)
        i, j = np.unravel_index(np.argmax(vals), vals.shape)
        assert (g[i], g[j]) == (1.0, 1.0)
        assert vals.max() == 2.0
        assert np.sum(vals == 2.0) == 1


class TestMicroEnhance:
    def test_saturated(self):
        assert rf.micro_enhance(1.0, 7.0) == 2.0

    def test_half(self):
        assert rf.micro_enhance(0.5, 4.0) == 0.5625

    @given(unit, st.floats(1.01, 10))
    def test_dominates(self, r, m):
        assert rf.micro_enhance(r, m) >= r

    def test_oracle_slope_ratio_at_zero(self):
        assert oracles.enhancement_slope_ratio(0.0, 0.25, 4.0) == pytest.approx(SLOPE_RATIO_D0_M4, abs=1e-4)

    @pytest.mark.parametrize("d_over_sigma", [0.0, 1.0, 5.0])
    def test_slope_ratio(self, d_over_sigma):
        cfg = FusionConfig()
        d = d_over_sigma * cfg.sigma
        h = 1e-6

        def slope(f, x):
            if x == 0.0:
                return (-3 * f(0.0) + 4 * f(h) - f(2 * h)) / (2 * h)
            return (f(x + h) - f(x - h)) / (2 * h)

        plain = lambda x: float(rf.tracking_terms(x, 0.0, cfg)[0])
        enhanced = lambda x: float(rf.micro_enhance(rf.tracking_terms(x, 0.0, cfg)[0], cfg.m_enh))
        r = math.exp(-d / cfg.sigma)
        expected = 1 + cfg.m_enh * r ** (cfg.m_enh - 1)
        assert slope(enhanced, d) / slope(plain, d) == pytest.approx(expected, abs=1e-4)


class TestSchedule:
    cfg = FusionConfig(v_ref=0.5)

    def test_linear_descent(self):
        s = EpisodeRewardState(epsilon0=4.0, step=100, dt=0.02)
        assert rf.reference_schedule(s, self.cfg) == pytest.approx(3.0, abs=1e-12)

    def test_floor(self):
        s = EpisodeRewardState(epsilon0=4.0, step=500, dt=0.02)
        assert rf.reference_schedule(s, self.cfg) == 0.0

    def test_initial(self):
        assert rf.reference_schedule(EpisodeRewardState(epsilon0=1.7), self.cfg) == 1.7

    def test_nonincreasing(self):
        s = EpisodeRewardState.start(np.full(1, 2.5), 0.02)
        vals = []
        for _ in range(400):
            vals.append(float(rf.reference_schedule(s, self.cfg)[0]))
            s = s.advance()
        assert np.all(np.diff(vals) <= 0)
        assert vals[-1] == 0.0

    def test_relatch(self):
        s = EpisodeRewardState(epsilon0=2.0, step=50, dt=0.02).relatch(0.7)
        assert s.epsilon0 == 0.7 and s.step == 0


class TestPhase:
    def test_midpoint(self):
        assert rf.phase(1.5, FusionConfig()) == 0.5

    def test_mu_plus_l(self):
        cfg = FusionConfig(mu=1.0, l_slope=1.0)
        assert rf.phase(2.0, cfg) == pytest.approx(PHASE_MU_PLUS_L, abs=1e-12)

    def test_armspan_rule_at_zero(self):
        arm_span = 0.75
        cfg = FusionConfig(mu=2 * arm_span, l_slope=2 * arm_span)
        assert rf.phase(0.0, cfg) == pytest.approx(PHASE_ZERO_ARMSPAN, abs=1e-12)

    def test_strictly_increasing(self):
        x = np.linspace(0, 6, 200)
        assert np.all(np.diff(rf.phase(x, FusionConfig())) > 0)

    def test_lipschitz(self):
        cfg = FusionConfig()
        x = np.linspace(0, 6, 20001)
        slope = np.max(np.abs(np.diff(rf.phase(x, cfg)) / np.diff(x)))
        assert slope <= 5 / (4 * cfg.l_slope) + 1e-9


class TestCumulative:
    def test_single_accumulation(self):
        cfg = FusionConfig(kappa=1.0)
        state, r_cb = rf.cumulative_update(EpisodeRewardState(), 2.0, 0.3, cfg)
        assert r_cb == 2.0 and state.e_cb == 2.0

    @pytest.mark.parametrize("clip_mode", ["accumulator", "read"])
    def test_clip_at_twenty(self, clip_mode):
        cfg = FusionConfig(kappa=1.0, cb_clip_mode=clip_mode)
        state, r_cb = rf.cumulative_update(EpisodeRewardState(e_cb=30.0), 7.0, 0.5, cfg)
        assert r_cb == 20.0
        assert state.e_cb == (20.0 if clip_mode == "accumulator" else 37.0)

    def test_perfect_tracking(self):
        cfg = FusionConfig()
        state = EpisodeRewardState()
        for _ in range(100):
            state, r_cb = rf.cumulative_update(state, 0.0, 0.2, cfg)
            assert r_cb == 0.0

    def test_phase_coupled_kappa(self):
        state, r_cb = rf.cumulative_update(EpisodeRewardState(), 1.0, 0.25, FusionConfig())
        assert r_cb == 0.75

    def test_monotone_and_bounded(self):
        rng = np.random.default_rng(8)
        cfg = FusionConfig()
        state = EpisodeRewardState()
        seq = []
        for _ in range(300):
            state, r_cb = rf.cumulative_update(state, rng.uniform(0.01, 1), rng.uniform(0.01, 0.99), cfg)
            seq.append(r_cb)
        assert np.all(np.diff(seq) >= 0) and max(seq) <= cfg.cb_clip


class TestDisplacement:
    def test_inside_band(self):
        assert rf.displacement_reward(2.0, 2.1, FusionConfig(gamma_release=0.2)) == 1.0

    def test_far(self):
        cfg = FusionConfig(gamma_release=0.2, sigma_s=0.5)
        assert rf.displacement_reward(1.0, 3.0, cfg) == pytest.approx(R_DW_FAR, abs=1e-12)

    def test_on_reference(self):
        assert rf.displacement_reward(0.8, 0.8, FusionConfig()) == 1.0


class TestFusion:
    def test_full_rfm_saturated(self):
        t = RewardTerms(r_reg_mani=1, r_ep_enh=2, r_ep=1, r_eo_enh=2, r_pb=0, r_cb=0, r_ac=1)
        assert rf.fuse_manipulation(t, FusionConfig()) == 6.0

    def test_no_rfm_unit_terms(self):
        t = RewardTerms(r_reg_mani=1, r_ep=1, r_eo=1, r_pb=1, r_ac=1)
        assert rf.fuse_manipulation(t, FusionConfig(mode="NoRFM")) == 10.0

    def test_locomotion_saturated(self):
        assert rf.fuse_locomotion(RewardTerms(r_reg_loco=1, r_dw=1, r_sa=0), FusionConfig()) == 2.0

    def test_static_arm_weight(self):
        base = RewardTerms(r_reg_loco=1e-9, r_dw=1e-9, r_sa=0.0)
        with_sa = replace(base, r_sa=1.0)
        cfg = FusionConfig()
        assert rf.fuse_locomotion(base, cfg) - rf.fuse_locomotion(with_sa, cfg) == pytest.approx(0.15, abs=1e-12)

    def test_total_pure_phases(self):
        cfg = FusionConfig()
        assert rf.fuse_total(3.0, 5.0, 0.5, 0.0, cfg) == 3.5
        assert rf.fuse_total(3.0, 5.0, 0.5, 1.0, cfg) == 5.5

    def test_no_loco_mani_fusion_weights(self):
        cfg = FusionConfig(mode="NoLocoManiFusion")
        assert cfg.mode_weights == (1.2, 0.4, 1.0)
        assert rf.fuse_total(1.0, 1.0, 1.0, 0.3, cfg) == pytest.approx(2.6, abs=1e-12)

    def test_paper_weights(self):
        assert FusionConfig(mode="NoRewardPrioritization").mode_weights == (2.0, 3.0, 3.0, -0.6, 3.0, 1.5)
        assert FusionConfig(mode="NoRFM").mode_weights == (1.0, 2.0, 3.0, 3.0, 1.0, 1.2, 0.5, 1.0)

    @pytest.mark.parametrize("mode", ALL_MODES)
    def test_matches_naive_recomputation(self, mode):
        rng = np.random.default_rng(17)
        cfg = FusionConfig(mode=mode)
        for _ in range(300):
            t = random_terms(rng)
            mani, loco, total = oracles.naive_fuse(asdict(t), mode.value)
            assert abs(rf.fuse_manipulation(t, cfg) - mani) < 1e-12
            assert abs(rf.fuse_locomotion(t, cfg) - loco) < 1e-12
            assert abs(rf.fuse(t, cfg) - total) < 1e-12

    def test_batched_equals_scalar(self):
        rng = np.random.default_rng(5)
        t = random_terms(rng, (64,))
        cfg = FusionConfig()
        batched = rf.fuse(t, cfg)
        for i in range(64):
            ti = RewardTerms(**{k: v[i] for k, v in asdict(t).items()})
            assert batched[i] == rf.fuse(ti, cfg)


class TestBasicRewards:
    def inputs(self, **kw):
        z = np.zeros(7)
        base = dict(action=z, prev_action=z, prev2_action=z, torque=z, prev_torque=z, qd=z)
        base.update(kw)
        return BasicInputs(**base)

    def test_alive_idle(self):
        assert rf.basic_rewards(self.inputs(), FusionConfig()) == 2.0

    def test_collision(self):
        cfg = FusionConfig()
        delta = rf.basic_rewards(self.inputs(collision=True), cfg) - rf.basic_rewards(self.inputs(), cfg)
        assert delta == -5.0

    def test_action_rate_and_smoothness(self):
        a = np.zeros(7)
        a[2] = 1.0
        cfg = FusionConfig(basic_weights=rf.BasicWeights(alive=0.0))
        smooth_only = replace(cfg, basic_weights=rf.BasicWeights(alive=0.0, action_rate=0.0))
        rate_only = replace(cfg, basic_weights=rf.BasicWeights(alive=0.0, action_smoothness=0.0))
        assert rf.basic_rewards(self.inputs(action=a), rate_only) == pytest.approx(-0.003, abs=1e-15)
        assert rf.basic_rewards(self.inputs(action=a), smooth_only) == pytest.approx(-0.001, abs=1e-15)

    def test_power_and_torque_terms(self):
        tau = np.array([1.0, -2.0, 0, 0, 0, 0, 0])
        qd = np.array([3.0, 1.0, 0, 0, 0, 0, 0])
        cfg = FusionConfig()
        r = rf.basic_rewards(self.inputs(torque=tau, qd=qd, alive=False), cfg)
        expected = -3.3e-4 * (3 + 2) - 4e-5 * (1 + 4) - 0.1 * 3 / cfg.tau_limit
        assert r == pytest.approx(expected, abs=1e-15)


class TestConfig:
    def test_arity_mismatch_rejected(self):
        with pytest.raises(ValueError):
            FusionConfig(mode="NoRFM", mode_weights=(1.0, 2.0))
        with pytest.raises(ValueError):
            FusionConfig(mode="FullRFM", mode_weights=(1.0,))

    @pytest.mark.parametrize(
        "kw",
        [
            {"sigma": 0.0},
            {"sigma_s": -1.0},
            {"m_enh": 1.0},
            {"v_ref": 0.05},
            {"l_slope": 0.0},
            {"cb_clip": 0.0},
            {"gamma_release": -0.1},
            {"cb_clip_mode": "sometimes"},
        ],
    )
    def test_invalid_values(self, kw):
        with pytest.raises(ValueError):
            FusionConfig(**kw)

    def test_mode_parse(self):
        assert FusionConfig(mode="norfm").mode is FusionMode.NO_RFM
        with pytest.raises(ValueError):
            FusionMode.parse("Bogus")

    def test_with_mode_resets_weights(self):
        cfg = FusionConfig(mode="NoRFM").with_mode("FullRFM")
        assert cfg.mode_weights == ()


class TestCurves:
    def test_shapes(self):
        cfg = FusionConfig()
        curves = rf.sample_curves(cfg)
        d, plain = curves["r_ep"]
        _, enh = curves["r_ep_enhanced"]
        x, D = curves["phase"]
        assert d[0] == 0.0 and enh[0] == 2.0
        assert d[-1] == pytest.approx(4 * cfg.sigma)
        assert np.all(enh >= plain)
        mid = np.flatnonzero(x == cfg.mu)
        assert mid.size == 1 and D[mid[0]] == 0.5
