import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clsurrogate.datasets import Dataset
from clsurrogate.errors import ConfigError, NumericError, ShapeError
from clsurrogate.nn import NetworkSpec, OptimizerState, RegressionNet, backward_batch, forward_batch, init_network, optimizer_step
from clsurrogate.scenarios import Experience
from clsurrogate.strategies import (
    EWCState,
    GEMMemory,
    ReplayBuffer,
    ReplayParams,
    effective_train_set_joint,
    effective_train_set_naive,
    effective_train_set_replay,
    ewc_consolidate,
    ewc_penalty,
    ewc_penalty_grad,
    gem_memory_update,
    gem_project,
    gem_reference_gradients,
    make_params,
    replay_update_buffer,
    solve_nonneg_qp,
    train_stream,
)
from gem_oracle import project_brute_force


def toy_experience(task_id, n, start_id, dim=2):
    ids = np.arange(start_id, start_id + n)
    x = np.random.default_rng(task_id).normal(size=(n, dim))
    train = Dataset(ids, x, np.full(n, 1.0 + task_id))
    test = Dataset([10_000 + start_id], x[:1], [1.0 + task_id])
    return Experience(task_id, train, test)


class TestEffectiveSets:
    def test_naive(self, small_stream):
        exp = small_stream[1]
        assert effective_train_set_naive(exp) is exp.train

    def test_joint(self, small_stream):
        assert np.array_equal(effective_train_set_joint(small_stream, 0).ids, small_stream[0].train.ids)
        last = effective_train_set_joint(small_stream, len(small_stream) - 1)
        assert sorted(last.ids.tolist()) == sorted(small_stream.all_train().ids.tolist())
        for k in range(len(small_stream)):
            assert len(effective_train_set_joint(small_stream, k)) == \
                sum(len(e.train) for e in small_stream.experiences[: k + 1])

    def test_replay(self, small_stream):
        exp0, exp1 = small_stream[0], small_stream[1]
        empty = ReplayBuffer(20)
        assert effective_train_set_replay(exp1, empty) is exp1.train
        buf = replay_update_buffer(empty, exp0, 1, seed=0)
        mixed = effective_train_set_replay(exp1, buf)
        assert len(mixed) == len(exp1.train) + 20
        assert set(mixed.ids.tolist()) == set(exp1.train.ids.tolist()) | set(buf.groups[0].ids.tolist())
        assert np.unique(mixed.ids).size == len(mixed)


class TestReplayBuffer:
    def test_first_experience_fills_budget(self):
        exp = toy_experience(0, 150, 0)
        buf = replay_update_buffer(ReplayBuffer(100), exp, 1, seed=3)
        assert len(buf) == 100 and set(buf.groups[0].ids) <= set(exp.train.ids)

    def test_equal_split_after_four(self):
        buf = ReplayBuffer(100)
        for t in range(4):
            buf = replay_update_buffer(buf, toy_experience(t, 80, 1000 * t), t + 1, seed=3)
        assert [len(buf.groups[t]) for t in range(4)] == [25, 25, 25, 25]

    def test_small_experiences(self):
        # budget 10 over experiences of 3 samples; slots by stage: [10], [5,5], [4,3,3], [3,3,2,2]
        buf = ReplayBuffer(10)
        expected = [[3], [3, 3], [3, 3, 3], [3, 3, 2, 2]]
        for t in range(4):
            buf = replay_update_buffer(buf, toy_experience(t, 3, 100 * t), t + 1, seed=1)
            assert [len(buf.groups[i]) for i in sorted(buf.groups)] == expected[t]
            assert len(buf) <= 10

    def test_remainder_goes_to_earliest_and_groups_shrink_only(self):
        buf = ReplayBuffer(10)
        sizes = []
        for t in range(3):
            buf = replay_update_buffer(buf, toy_experience(t, 50, 100 * t), t + 1, seed=2)
            sizes.append({i: len(g) for i, g in buf.groups.items()})
        assert sizes == [{0: 10}, {0: 5, 1: 5}, {0: 4, 1: 3, 2: 3}]

    def test_downsampling_keeps_a_subset(self):
        buf = replay_update_buffer(ReplayBuffer(12), toy_experience(0, 40, 0), 1, seed=0)
        before = set(buf.groups[0].ids.tolist())
        buf = replay_update_buffer(buf, toy_experience(1, 40, 100), 2, seed=0)
        assert set(buf.groups[0].ids.tolist()) <= before

    def test_deterministic(self):
        a = replay_update_buffer(ReplayBuffer(7), toy_experience(0, 40, 0), 1, seed=9)
        b = replay_update_buffer(ReplayBuffer(7), toy_experience(0, 40, 0), 1, seed=9)
        assert np.array_equal(a.groups[0].ids, b.groups[0].ids)

    def test_budget_resolution(self):
        assert ReplayParams().resolve(1600) == 320
        assert ReplayParams(budget=0).resolve(10) == 0
        with pytest.raises(ConfigError):
            ReplayParams(budget=321).resolve(1600)
        with pytest.raises(ConfigError):
            ReplayParams(budget_fraction=0.3)


class TestEWC:
    def test_anchor_gives_zero(self):
        theta = np.array([0.3, -1.0])
        state = EWCState(5.0, ((theta.copy(), np.array([1.0, 2.0])),))
        assert ewc_penalty(theta, state) == 0.0

    def test_penalty_by_hand(self):
        state = EWCState(4.0, ((np.array([0.0]), np.array([2.0])),))
        assert ewc_penalty(np.array([0.5]), state) == pytest.approx(1.0)

    def test_lambda_zero(self):
        state = EWCState(0.0, ((np.zeros(3), np.ones(3)),))
        assert ewc_penalty(np.ones(3), state) == 0.0

    def test_penalty_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        state = EWCState(3.0, tuple((rng.normal(size=6), rng.uniform(0, 2, size=6)) for _ in range(3)))
        theta = rng.normal(size=6)
        eps = 1e-5
        fd = np.array([(ewc_penalty(theta + eps * e, state) - ewc_penalty(theta - eps * e, state)) / (2 * eps)
                       for e in np.eye(6)])
        np.testing.assert_allclose(ewc_penalty_grad(theta, state), fd, rtol=1e-5)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ewc_penalty(np.zeros(2), EWCState(1.0, ((np.zeros(3), np.zeros(3)),)))

    def test_consolidate(self, small_stream, small_net_spec):
        net = init_network(small_net_spec, 0)
        s1 = ewc_consolidate(net, small_stream[0].train, EWCState(1.0))
        assert len(s1.anchors) == 1
        s2 = ewc_consolidate(net, small_stream[0].train, s1)
        assert np.array_equal(s2.anchors[0][0], s2.anchors[1][0])
        assert np.array_equal(s2.anchors[0][1], s2.anchors[1][1])
        assert s1.anchors[0][0] is not net.params

    def test_perfect_fit_has_zero_fisher(self):
        net = RegressionNet(NetworkSpec(2, ()), [0.4, -0.2, 1.0])
        x = np.random.default_rng(1).normal(size=(20, 2))
        exact = Dataset(np.arange(20), x, forward_batch(net, x))
        state = ewc_consolidate(net, exact, EWCState(100.0))
        assert not state.anchors[0][1].any()
        assert ewc_penalty(net.params + 5.0, state) == 0.0


class TestGEMProjection:
    def test_no_memory(self):
        g = np.array([1.0, -2.0])
        assert gem_project(g, []) is g

    def test_feasible_identity(self):
        g = np.array([1.0, 0.0])
        out = gem_project(g, [np.array([1.0, 0.0])])
        assert out is g

    def test_single_violation(self):
        np.testing.assert_allclose(gem_project(np.array([-1.0, 0.0]), [np.array([1.0, 0.0])]), [0.0, 0.0],
                                   atol=1e-15)

    def test_single_constraint_closed_form(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            g1 = rng.normal(size=5)
            g = rng.normal(size=5)
            if g @ g1 >= 0:
                g = g - 2 * (g @ g1) / (g1 @ g1) * g1
            expected = g - (g @ g1) / (g1 @ g1) * g1
            np.testing.assert_allclose(gem_project(g, [g1]), expected, rtol=0, atol=1e-8)

    @settings(max_examples=150, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 8), n=st.integers(1, 12))
    def test_feasible_and_optimal(self, seed, m, n):
        rng = np.random.default_rng(seed)
        G = rng.normal(size=(m, n))
        g = rng.normal(size=n)
        out = gem_project(g, list(G))
        assert (G @ out).min() >= -1e-9
        ref = project_brute_force(g, G)
        assert np.sum((out - g) ** 2) <= np.sum((ref - g) ** 2) + 1e-9

    def test_margin_widens_acceptance(self):
        g = np.array([-0.1, 1.0])
        g1 = np.array([1.0, 0.0])
        assert gem_project(g, [g1], margin=0.5) is g
        assert gem_project(g, [g1], margin=0.0) is not g

    def test_non_finite(self):
        with pytest.raises(NumericError):
            gem_project(np.array([np.nan, 1.0]), [np.array([1.0, 0.0])])

    def test_qp_solver_on_tiny_problem(self):
        # minimise 0.5 v^2 - v with v >= 0 -> v = 1; and 0.5 v^2 + v -> v = 0
        assert solve_nonneg_qp(np.array([[1.0]]), np.array([-1.0]))[0] == pytest.approx(1.0)
        assert solve_nonneg_qp(np.array([[1.0]]), np.array([1.0]))[0] == 0.0

    def test_more_constraints_than_dimensions(self):
        # the dual Hessian is singular here; the solver must still land on a feasible point
        rng = np.random.default_rng(533)
        for _ in range(200):
            G = rng.normal(size=(8, 3)) * 10
            out = gem_project(rng.normal(size=3), list(G))
            assert (G @ out).min() >= -1e-9

    def test_degenerate_duplicate_constraints(self):
        g1 = np.array([1.0, 1.0, 0.0])
        out = gem_project(np.array([-1.0, 0.0, 2.0]), [g1, g1, 2 * g1])
        assert (np.vstack([g1, g1]) @ out).min() >= -1e-9
        np.testing.assert_allclose(out, [-0.5, 0.5, 2.0], atol=1e-9)


class TestGEMMemory:
    def test_stores_ppe(self):
        mem = gem_memory_update(GEMMemory(10), toy_experience(0, 100, 0), seed=0)
        assert len(mem.groups[0]) == 10

    def test_availability_cap(self):
        mem = gem_memory_update(GEMMemory(10), toy_experience(0, 4, 0), seed=0)
        assert len(mem.groups[0]) == 4

    def test_groups_accumulate_untouched(self):
        mem = GEMMemory(5)
        mem = gem_memory_update(mem, toy_experience(0, 30, 0), seed=1)
        first = mem.groups[0]
        for t in (1, 2):
            mem = gem_memory_update(mem, toy_experience(t, 30, 100 * t), seed=1)
        assert sorted(mem.groups) == [0, 1, 2] and mem.groups[0] is first
        assert set(mem.groups[2].ids) <= set(range(200, 230))

    def test_reference_gradients(self, small_net_spec):
        exp = toy_experience(0, 30, 0, dim=4)
        mem = gem_memory_update(GEMMemory(8), exp, seed=0)
        net = init_network(small_net_spec, 2)
        refs = gem_reference_gradients(net, mem)
        assert len(refs) == 1
        g = mem.groups[0]
        np.testing.assert_array_equal(refs[0], backward_batch(net, g.features, g.targets)[0])
        new, _ = optimizer_step(OptimizerState("sgd", 0.1), net.params, refs[0])
        net.set_params(new)
        assert not np.array_equal(gem_reference_gradients(net, mem)[0], refs[0])

    def test_reference_gradient_zero_on_exact_fit(self):
        net = RegressionNet(NetworkSpec(2, ()), [1.0, 1.0, 0.0])
        x = np.random.default_rng(0).normal(size=(10, 2))
        exp = Experience(0, Dataset(np.arange(10), x, forward_batch(net, x)), Dataset([99], x[:1], [0.0]))
        mem = gem_memory_update(GEMMemory(5), exp, seed=0)
        ref = gem_reference_gradients(net, mem)[0]
        assert not ref.any()
        g = np.array([0.3, -0.2, 0.1])
        assert gem_project(g, [ref]) is g


class TestTrainStream:
    def test_strategies_agree_on_first_experience(self, small_stream, fast_config, small_net_spec):
        runs = {s: train_stream(small_stream, s, None, fast_config, small_net_spec)
                for s in ("naive", "joint", "replay", "ewc", "gem")}
        first = runs["naive"].eval_matrix[0, 0]
        assert all(r.eval_matrix[0, 0] == first for r in runs.values())

    def test_eval_matrix_is_lower_triangular(self, small_stream, fast_config, small_net_spec):
        r = train_stream(small_stream, "replay", None, fast_config, small_net_spec)
        M = r.eval_matrix.values
        for k in range(len(small_stream)):
            assert np.isfinite(M[k, : k + 1]).all() and np.isnan(M[k, k + 1:]).all()

    def test_deterministic(self, small_stream, fast_config, small_net_spec):
        a = train_stream(small_stream, "gem", None, fast_config, small_net_spec)
        b = train_stream(small_stream, "gem", None, fast_config, small_net_spec)
        assert a.eval_matrix == b.eval_matrix and a.final_test_mpe == b.final_test_mpe

    @pytest.mark.parametrize("strategy,params", [
        ("replay", {"budget": 0}),
        ("ewc", {"lam": 0.0}),
        ("gem", {"ppe": 0}),
    ])
    def test_reduction_to_naive(self, small_stream, fast_config, small_net_spec, strategy, params):
        naive = train_stream(small_stream, "naive", None, fast_config, small_net_spec)
        other = train_stream(small_stream, strategy, params, fast_config, small_net_spec)
        assert other.eval_matrix == naive.eval_matrix
        assert other.final_test_mae == naive.final_test_mae

    def test_param_mismatch(self, small_stream):
        with pytest.raises(ConfigError):
            train_stream(small_stream, "ewc", {"ppe": 3})
        with pytest.raises(ConfigError):
            train_stream(small_stream, "ewc", make_params("gem"))
        with pytest.raises(ConfigError):
            train_stream(small_stream, "lwf")

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_is_recorded(self, small_stream, small_net_spec):
        from clsurrogate.strategies import TrainConfig
        cfg = TrainConfig(epochs_per_experience=20, batch_size=8, optimizer="sgd", learning_rate=1e6)
        r = train_stream(small_stream, "naive", None, cfg, small_net_spec)
        assert not r.ok and "numeric" in r.error
        assert math.isnan(r.final_test_mae)

    def test_gem_memory_ceiling(self, small_stream, fast_config, small_net_spec):
        r = train_stream(small_stream, "gem", {"ppe": 7}, fast_config, small_net_spec)
        assert r.memory_sizes[-1] <= 7 * len(small_stream)
        assert max(r.memory_sizes[:-1]) <= 7 * (len(small_stream) - 1)

    def test_gem_projection_runs_each_step(self, small_stream, fast_config, small_net_spec, monkeypatch):
        import clsurrogate.strategies as strat
        calls = []
        real = strat.gem_reference_gradients
        monkeypatch.setattr(strat, "gem_reference_gradients", lambda net, mem: calls.append(1) or real(net, mem))
        train_stream(small_stream, "gem", None, fast_config, small_net_spec)
        steps_after_first = sum(math.ceil(len(e.train) / 16) * 3 for e in small_stream.experiences[1:])
        assert len(calls) == steps_after_first


@pytest.fixture(scope="module")
def default_runs():
    """Naive and joint on the default synthetic benchmark, one seed."""
    from clsurrogate.datasets import SyntheticSpec, generate_synthetic
    from clsurrogate.scenarios import build_bin_incremental, normalize_stream
    from clsurrogate.strategies import TrainConfig
    ds = generate_synthetic(SyntheticSpec())
    stream, _ = normalize_stream(build_bin_incremental(ds, 4, seed=0))
    cfg = TrainConfig(seed=0)
    return {s: train_stream(stream, s, None, cfg) for s in ("naive", "joint")}


class TestQualitative:
    def test_naive_final_row_increases_towards_old_bins(self, default_runs):
        row = default_runs["naive"].eval_matrix[3]
        assert row[0] > row[1] > row[2] > row[3]

    def test_joint_errors_stay_in_a_band(self, default_runs):
        def spread(r):
            row = r.eval_matrix[3]
            return row.max() / row.min()
        assert spread(default_runs["joint"]) < spread(default_runs["naive"])
        assert spread(default_runs["joint"]) < 3.0
