import numpy as np
import pytest

from icrl.datagen import DatagenConfig, build_dataset
from icrl.envs import (
    Darkroom,
    DarkroomParams,
    GaussianBandit,
    GaussianBanditParams,
    Policy,
    manhattan,
)
from icrl.errors import UnknownEnvTag
from icrl.oracles import (
    OracleReport,
    assumption_check,
    grid_optimal_actions,
    label_accuracy,
    optimal_arm,
    value_iteration_actions,
)
from icrl.rng import RngStream

UP, DOWN, LEFT, RIGHT, STAY = range(5)


class TestOptimalArm:
    def test_plain_argmax(self):
        assert optimal_arm((0.1, 0.9, 0.3, 0.2, 0.5)) == 1

    def test_tie_breaks_low(self):
        assert optimal_arm((0.7, 0.7, 0.7)) == 0

    def test_matches_brute_force_scan_on_random_instances(self):
        gen = RngStream(55).generator
        for _ in range(10_000):
            means = gen.uniform(0, 1, 5)
            best = 0
            for a in range(5):
                if means[a] > means[best]:
                    best = a
            assert optimal_arm(means) == best


class TestGridOptimalActions:
    def test_corner_toward_center_goal(self):
        params = DarkroomParams(7, 7, (3, 3), 49)
        assert grid_optimal_actions(params, (0.0, 0.0)) == {DOWN, RIGHT}

    def test_goal_cell_interior_is_stay_only(self):
        params = DarkroomParams(7, 7, (3, 3), 49)
        assert grid_optimal_actions(params, (3.0, 3.0)) == {STAY}

    def test_goal_cell_on_boundary_includes_clamped_moves(self):
        # moves that clamp back onto a boundary goal tie with stay exactly
        params = DarkroomParams(7, 7, (0, 0), 49)
        assert grid_optimal_actions(params, (0.0, 0.0)) == {UP, LEFT, STAY}

    def test_aligned_state_has_unique_direction(self):
        params = DarkroomParams(7, 7, (5, 2), 49)
        assert grid_optimal_actions(params, (5.0, 6.0)) == {UP}

    @pytest.mark.parametrize("size,horizon", [(7, 49), (10, 100)])
    def test_exhaustive_agreement_with_value_iteration(self, size, horizon):
        for gx in range(size):
            for gy in range(size):
                env = Darkroom(DarkroomParams(size, size, (gx, gy), horizon))
                vi = value_iteration_actions(env, gamma=0.99)
                for x in range(size):
                    for y in range(size):
                        assert vi[(x, y)] == grid_optimal_actions(env.params, (x, y)), (
                            f"goal=({gx},{gy}) state=({x},{y})"
                        )


class TestLabelAccuracy:
    def _oracle_labeled_dataset(self):
        cfg = DatagenConfig(method="sad", trust_horizon=49, context_len=49, dataset_size=40)
        ds = build_dataset("darkroom", "train", cfg, master_seed=31)
        from icrl.envs import env_from_tag

        for s in ds.samples:
            env = env_from_tag(s.env_tag)
            s.action_label = min(grid_optimal_actions(env.params, s.query_state))
        return ds

    def test_oracle_labels_score_one(self):
        report = label_accuracy(self._oracle_labeled_dataset(), "darkroom")
        assert report.agreement_rate == 1.0
        assert report.sample_count == 40
        assert all(rate == 1.0 for rate in report.per_distance.values())

    def test_uniform_random_labels_match_optimal_set_density(self):
        cfg = DatagenConfig(method="dpt_random", trust_horizon=2, context_len=49, dataset_size=4000)
        from icrl.datagen import build_baseline_dataset
        from icrl.envs import env_from_tag

        ds = build_baseline_dataset("dpt_random", "darkroom", "train", cfg, master_seed=17)
        report = label_accuracy(ds, "darkroom")
        # analytic expectation: per sample, P(hit) = |optimal set| / 5
        density = np.mean(
            [
                len(grid_optimal_actions(env_from_tag(s.env_tag).params, s.query_state)) / 5
                for s in ds.samples
            ]
        )
        sigma = np.sqrt(density * (1 - density) / len(ds.samples))
        assert abs(report.agreement_rate - density) <= 3 * sigma

    def test_bandit_accuracy(self):
        cfg = DatagenConfig(method="sad", trust_horizon=1000, context_len=10, dataset_size=30)
        ds = build_dataset("gaussian_bandit", "train", cfg, master_seed=3)
        report = label_accuracy(ds, "gaussian_bandit")
        assert 0.8 <= report.agreement_rate <= 1.0
        assert report.per_distance == {}

    def test_unknown_tag(self):
        ds = self._oracle_labeled_dataset()
        ds.samples[0].env_tag = "bogus|x=1"
        with pytest.raises(UnknownEnvTag):
            label_accuracy(ds, "darkroom")


class TestAssumptionCheck:
    def test_bandit_high_trust_horizon_rate(self):
        report = assumption_check("gaussian_bandit", None, trust_horizon=10_000, trials=200, master_seed=71)
        assert report.agreement_rate >= 0.97
        assert report.sample_count == 200

    def test_bandit_rate_lower_at_n1_than_n1000(self):
        low = assumption_check("gaussian_bandit", None, 1, 200, master_seed=72)
        high = assumption_check("gaussian_bandit", None, 1000, 200, master_seed=72)
        assert low.agreement_rate < high.agreement_rate

    def test_grid_n2_queries_cover_goal_ring_at_rate_one(self):
        report = assumption_check("darkroom", None, trust_horizon=2, trials=150, master_seed=73)
        assert set(report.per_distance) <= {0, 1}
        assert report.agreement_rate == 1.0

    def test_dense_grid_supported(self):
        report = assumption_check("dense_grid", None, trust_horizon=3, trials=50, master_seed=74)
        assert 0.0 <= report.agreement_rate <= 1.0
        assert report.per_distance


class TestTrustHorizonTradeOff:
    def test_coverage_grows_and_near_goal_share_falls(self):
        # the empirical content of the trust-horizon trade-off on grids
        policy = Policy.uniform(5)
        coverage, near_share = {}, {}
        for trust in (2, 49):
            states = []
            env = Darkroom(DarkroomParams(7, 7, (3, 3), 49))
            from icrl.datagen import distill_sparse

            for i in range(400):
                s_q, _ = distill_sparse(env, policy, trust, 49, RngStream(640 + trust, i))
                states.append((int(s_q[0]), int(s_q[1])))
            coverage[trust] = len(set(states))
            near_share[trust] = np.mean([manhattan(s, (3, 3)) <= 1 for s in states])
        assert coverage[2] < coverage[49]
        assert near_share[2] > near_share[49]
