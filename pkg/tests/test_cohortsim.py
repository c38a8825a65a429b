import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trustdsem.cohortsim import (
    HIGH_AIP,
    LOW_AIP,
    AgentParams,
    AgentState,
    CohortConfig,
    agent_step,
    augment_panel,
    driving_config,
    drone_config,
    gen_cohort,
    gen_driving_cohort,
    gen_drone_cohort,
    label_array,
    label_over_under,
    participant_rng,
    simulate_participant,
)
from trustdsem.pathmodel import AIP, CUE, HP, OVER_UNDER, RELIANCE, TRUST


@pytest.fixture(scope="module")
def drone():
    return gen_drone_cohort()


class TestShapes:
    def test_drone_defaults(self, drone):
        assert drone.n_participants == 194
        assert set(drone.lengths) == {30}
        aip = drone.array(AIP)
        assert np.all(aip[:, :15] == HIGH_AIP) and np.all(aip[:, 15:] == LOW_AIP)

    def test_driving_defaults(self):
        p = gen_driving_cohort()
        assert p.n_participants == 49 and set(p.lengths) == {88}
        assert np.all(p.array(CUE) == 0)
        aip = p.array(AIP)[0]
        assert np.all(aip[:28] == HIGH_AIP) and np.all(aip[28:64] == LOW_AIP) and np.all(aip[64:] == HIGH_AIP)

    def test_cue_group_size(self, drone):
        cued = drone.array(CUE).any(axis=1)
        assert not cued[97:].any()
        assert cued[:97].sum() > 0


class TestConsistency:
    def test_labels_follow_trust(self, drone):
        labels = label_array(drone.array(TRUST), drone.array(AIP), AgentParams().label_margin)
        np.testing.assert_array_equal(drone.array(OVER_UNDER), labels)

    def test_ranges(self, drone):
        trust = drone.array(TRUST)
        assert np.all((trust >= 0) & (trust <= 1))
        assert set(np.unique(drone.array(RELIANCE))) <= {0.0, 1.0}
        assert set(np.unique(drone.array(OVER_UNDER))) <= {-1.0, 0.0, 1.0}
        hp = drone.array(HP)
        assert np.all(hp == hp[:, :1]) and np.all((hp >= 0.5) & (hp <= 0.7))

    def test_cues_follow_previous_overtrust(self, drone):
        cue, ou = drone.array(CUE)[:97], drone.array(OVER_UNDER)[:97]
        assert np.all(cue[:, 0] == 0)
        np.testing.assert_array_equal(cue[:, 1:], (ou[:, :-1] == 1).astype(float))

    def test_no_cue_policy(self):
        p = gen_drone_cohort(drone_config(n_participants=6, cue_policy="none"))
        assert np.all(p.array(CUE) == 0)


class TestDeterminism:
    def test_same_seed_same_cohort(self):
        cfg = drone_config(n_participants=5, seed=3)
        a, b = gen_drone_cohort(cfg), gen_drone_cohort(cfg)
        for x, y in zip(a.participants, b.participants):
            for n in a.names:
                np.testing.assert_array_equal(x[n], y[n])

    def test_participant_independent_of_cohort_size(self):
        small = gen_cohort(drone_config(n_participants=4, cue_policy="none", seed=9))
        big = gen_cohort(drone_config(n_participants=12, cue_policy="none", seed=9))
        for i in range(4):
            np.testing.assert_array_equal(small.participants[i][TRUST], big.participants[i][TRUST])

    def test_order_independent(self):
        cfg = drone_config(n_participants=6, seed=4)
        later = simulate_participant(cfg, AgentParams(), 5, False)
        again = simulate_participant(cfg, AgentParams(), 5, False)
        np.testing.assert_array_equal(later[TRUST], again[TRUST])
        assert later.pid == "p0005"

    def test_seeds_differ(self):
        a = participant_rng(0, 1).random(4)
        b = participant_rng(1, 1).random(4)
        c = participant_rng(0, 2).random(4)
        assert not np.allclose(a, b) and not np.allclose(a, c)


class TestAgent:
    def test_reliance_uses_incoming_trust(self):
        params = AgentParams(decision_noise=0.0)
        rng = np.random.default_rng(0)
        _, rel, _ = agent_step(AgentState(0.7), 0.9, 0.6, 0, params, rng, outcome=0)
        assert rel == 1
        _, rel, _ = agent_step(AgentState(0.5), 0.9, 0.6, 0, params, rng, outcome=1)
        assert rel == 0

    def test_outcome_then_cue_update(self):
        params = AgentParams(learning_rate=0.3, cue_rate=0.7)
        s, _, _ = agent_step(AgentState(0.8), 0.3, 0.6, 1, params, np.random.default_rng(0), outcome=1)
        mid = 0.8 + 0.3 * (1 - 0.8)
        assert s.trust == pytest.approx(mid + 0.7 * (0.3 - mid))

    def test_full_learning_rate_copies_outcome(self):
        params = AgentParams(learning_rate=1.0)
        s, _, _ = agent_step(AgentState(0.4), 0.9, 0.6, 0, params, np.random.default_rng(0), outcome=0)
        assert s.trust == 0.0

    @given(st.floats(0, 1), st.floats(0, 1), st.lists(st.integers(0, 1), min_size=1, max_size=30))
    def test_moving_average_closed_form(self, lam, tau0, outcomes):
        params = AgentParams(learning_rate=lam)
        rng = np.random.default_rng(0)
        s = AgentState(tau0)
        for o in outcomes:
            s, _, _ = agent_step(s, 0.5, 0.5, 0, params, rng, outcome=o)
        T = len(outcomes)
        expected = (1 - lam) ** T * tau0 + sum(lam * (1 - lam) ** (T - 1 - k) * o for k, o in enumerate(outcomes))
        assert s.trust == pytest.approx(expected, abs=1e-12)

    def test_state_is_clamped(self):
        assert AgentState(1.3).trust == 1.0 and AgentState(-0.2).trust == 0.0

    @pytest.mark.parametrize("trust,aip,label", [(0.95, 0.8, 1), (0.88, 0.8, 0), (0.72, 0.8, 0), (0.65, 0.8, -1)])
    def test_labels(self, trust, aip, label):
        assert label_over_under(trust, aip, 0.1) == label


class TestConfig:
    @pytest.mark.parametrize("kw", [{"n_participants": 0}, {"phases": ()}, {"phases": ((0, 0.5),)},
                                    {"phases": ((3, 1.5),)}, {"hp": 0.95}, {"cue_policy": "always"},
                                    {"fraction_with_cues": 2.0}, {"initial_trust": -0.1}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            CohortConfig(**kw)

    @pytest.mark.parametrize("kw", [{"learning_rate": 1.5}, {"cue_rate": -0.1}, {"decision_noise": 0.5},
                                    {"label_margin": 0.0}])
    def test_agent_rejects(self, kw):
        with pytest.raises(ValueError):
            AgentParams(**kw)

    def test_driving_overrides(self):
        assert driving_config(n_participants=3).n_participants == 3
        assert driving_config().n_steps == 88


class TestAugment:
    def test_counts_and_labels(self):
        base = gen_drone_cohort(drone_config(n_participants=5))
        out = augment_panel(base, 3, np.random.default_rng(0))
        assert out.n_participants == 15
        assert len({p.pid for p in out.participants}) == 15
        np.testing.assert_array_equal(out.array(OVER_UNDER),
                                      label_array(out.array(TRUST), out.array(AIP), AgentParams().label_margin))
        for p in out.participants:
            assert np.all((p[AIP] >= 0) & (p[AIP] <= 1))

    def test_factor_one_is_identity(self):
        base = gen_drone_cohort(drone_config(n_participants=3))
        assert augment_panel(base, 1, np.random.default_rng(0)).participants == base.participants

    def test_bad_factor(self):
        with pytest.raises(ValueError):
            augment_panel(gen_drone_cohort(drone_config(n_participants=2)), 0, np.random.default_rng(0))


class TestWorkedExamples:
    def test_full_overwrite(self):
        s, _, _ = agent_step(AgentState(0.2), 0.9, 0.6, 0, AgentParams(learning_rate=1.0),
                             np.random.default_rng(0), outcome=1)
        assert s.trust == 1.0

    @pytest.mark.parametrize("prior", [0.0, 0.55, 1.0])
    def test_full_cue_correction(self, prior):
        s, _, _ = agent_step(AgentState(prior), 0.3, 0.6, 1, AgentParams(cue_rate=1.0),
                             np.random.default_rng(0), outcome=1)
        assert s.trust == pytest.approx(0.3)

    def test_deterministic_reliance(self):
        _, rel, _ = agent_step(AgentState(0.8), 0.9, 0.5, 0, AgentParams(decision_noise=0.0),
                               np.random.default_rng(0))
        assert rel == 1

    @pytest.mark.parametrize("args,label", [((0.9, 0.3, 0.1), 1), ((0.3, 0.9, 0.1), -1), ((0.5, 0.5, 0.1), 0)])
    def test_label_examples(self, args, label):
        assert label_over_under(*args) == label

    def test_pinned_trust_never_overtrusts(self):
        cfg = drone_config(n_participants=8, initial_trust=HIGH_AIP)
        p = gen_cohort(cfg, AgentParams(learning_rate=0.0, decision_noise=0.0))
        assert not np.any(p.array(OVER_UNDER)[:, :15] == 1)

    def test_augment_ten_to_thirty(self):
        base = gen_drone_cohort(drone_config(n_participants=10))
        assert augment_panel(base, 3, np.random.default_rng(1)).n_participants == 30
