import math

import numpy as np
import pytest

from topkq import scoremodel as sm
from topkq import smoothing as smo
from topkq import solvers as so
from topkq import topology as tp


def conv_at_hmax(scores, k, delta=None):
    N = len(scores)
    gt = sm.ground_truth(scores, k)
    p = sm.select_p(N, k)
    K = smo.uniform_kernel()
    return gt, smo.ConvolutionSmoother(p, smo.conv_hmax(N, p, gt.g_m, delta or gt.delta, K), K)


@pytest.fixture
def small_instance():
    rng = np.random.default_rng(0)
    s = sm.quantize(rng.normal(0, 1, 12), 0.1)
    g = tp.gen_erdos_renyi(12, 24, seed=3)
    return s, tp.mixing_matrix(g), sm.one_per_agent(s)


class TestStepSizes:
    def test_examples(self):
        a, b = so.extra_default_steps(8.0, 4, 0.0)
        assert (a, b) == pytest.approx((4 / 32, 2.0))
        assert so.extra_default_steps(5.0, 5, 0.36)[1] == pytest.approx(1 / math.sqrt(0.64))
        assert so.extra_default_steps(3.0, 2, 0.75)[1] == pytest.approx(3.0)

    def test_rejects_disconnected_rate(self):
        with pytest.raises(ValueError):
            so.extra_default_steps(1.0, 3, 1.0)

    def test_manual_preset_for_unit_box(self):
        sm_ = smo.ConvolutionSmoother(0.7, 0.05, smo.uniform_kernel())
        cfg = so.ExtraConfig.manual(sm_, sm.one_per_agent([1.0, 2.0, 3.0]))
        assert (cfg.alpha, cfg.beta) == pytest.approx((0.05, 20.0))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            so.ExtraConfig(0.0, 1.0)
        with pytest.raises(ValueError):
            so.ExtraConfig(1.0, 1.0, max_iters=0)


class TestExtraStep:
    def test_single_agent_is_gradient_descent(self):
        topo = tp.MixingTopology(tp.Graph(1, ()), np.ones((1, 1)), 1.0, 0.0, np.zeros(1))
        sm_ = smo.ConvolutionSmoother(0.3, 0.5, smo.uniform_kernel())
        ds = [sm.LocalDataset(0, [2.0])]
        st = so.SolverState.initial([1.8])
        nxt = so.extra_step(st, topo, sm_, ds, 0.1, 1.0)
        grad = smo.conv_agent_grad(sm_, 2.0, 1.8)
        assert nxt.w[0] == pytest.approx(1.8 - 0.1 * grad)
        assert nxt.v[0] == 0.0

    def test_complete_graph_symmetric_start(self):
        topo = tp.mixing_matrix(tp.gen_complete(4))
        sm_ = smo.NesterovSmoother(0.6, 0.2)
        ds = sm.one_per_agent([1.0, 2.0, 3.0, 4.0])
        st = so.SolverState.initial(np.full(4, 2.5))
        nxt = so.extra_step(st, topo, sm_, ds, 0.05, 2.0)
        grads = np.array([smo.agent_gradient(sm_, [s], 2.5) for s in (1.0, 2.0, 3.0, 4.0)])
        assert np.allclose(nxt.w, 2.5 - 0.05 * grads)

    def test_two_agents_by_hand(self):
        topo = tp.mixing_matrix(tp.Graph(2, ((0, 1),)))
        sm_ = smo.ConvolutionSmoother(0.75, 1.0, smo.uniform_kernel())
        ds = sm.one_per_agent([0.0, 4.0])
        st = so.SolverState(np.array([1.0, 2.0]), np.array([0.5, -0.5]), np.zeros(2), 0)
        nxt = so.extra_step(st, topo, sm_, ds, 1.0, 1.0)
        # W = [[.5,.5],[.5,.5]]; Ww = [1.5, 1.5]
        # agent 0: grad = cdf(1) - .75 = .25; w = 1 - (.25 + .5 + .5*(1 - 1.5)) = .5
        # agent 1: grad = cdf(-2) - .75 = -.75; w = 2 - (-.75 - .5 + .5*(2 - 1.5)) = 3
        assert nxt.w == pytest.approx([0.5, 3.0])
        # new Ww = [1.75, 1.75]; v = v + .5*(w - Ww)
        assert nxt.v == pytest.approx([0.5 + 0.5 * (0.5 - 1.75), -0.5 + 0.5 * (3.0 - 1.75)])
        assert nxt.t == 1 and nxt.w_sum == pytest.approx([0.5, 3.0])

    def test_run_matches_repeated_steps(self, small_instance):
        s, topo, ds = small_instance
        gt, sm_ = conv_at_hmax(s, 3)
        cfg = so.ExtraConfig(0.01, 5.0, max_iters=50, stop_rule=so.StopRule.FIXED_BUDGET)
        traj = so.extra_run(topo, sm_, ds, cfg, gt)
        st = so.SolverState.initial(s)
        for _ in range(50):
            st = so.extra_step(st, topo, sm_, ds, 0.01, 5.0)
        assert np.array_equal(st.w, traj.final_w)
        assert np.array_equal(st.w_bar, traj.final_w_bar)

    def test_dual_sum_is_conserved(self, small_instance):
        s, topo, ds = small_instance
        _, sm_ = conv_at_hmax(s, 5)
        st = so.SolverState.initial(s)
        for _ in range(200):
            st = so.extra_step(st, topo, sm_, ds, 0.02, 3.0)
            assert abs(st.v.sum()) < 1e-8

    def test_running_average(self, small_instance):
        s, topo, ds = small_instance
        _, sm_ = conv_at_hmax(s, 5)
        st = so.SolverState.initial(s)
        ws = []
        for _ in range(30):
            st = so.extra_step(st, topo, sm_, ds, 0.02, 3.0)
            ws.append(st.w)
        assert np.allclose(st.w_bar, np.mean(ws, axis=0), rtol=0, atol=1e-13)

    def test_divergence_guard(self, small_instance):
        s, topo, ds = small_instance
        _, sm_ = conv_at_hmax(s, 5)
        cfg = so.ExtraConfig(1e4, 1e4, max_iters=500, stop_rule=so.StopRule.FIXED_BUDGET)
        with pytest.raises(so.DivergenceError):
            so.extra_run(topo, sm_, ds, cfg, w0=np.full(12, 1e9))


class TestExtraRun:
    def test_tie_example_on_complete_graph(self):
        s = [2.0, 2.0, 5.0, 1.0, 2.0]
        gt, sm_ = conv_at_hmax(s, 3)
        topo = tp.mixing_matrix(tp.gen_complete(5))
        ds = sm.one_per_agent(s)
        cfg = so.ExtraConfig.certified(topo, sm_, ds, max_iters=10**6)
        traj = so.extra_run(topo, sm_, ds, cfg, gt)
        assert traj.converged and traj.stopped_by == "interval"
        lo, hi = gt.solution_interval
        assert np.all((traj.final_w_bar > lo) & (traj.final_w_bar < hi))
        flags = [sm.declare_topk(d, sm.threshold_from_estimate(traj.final_w_bar[d.agent_id], gt.delta))[0] for d in ds]
        assert np.flatnonzero(flags).tolist() == gt.holders(s).tolist()

    def test_ring_within_certified_budget(self):
        rng = np.random.default_rng(50)
        s = sm.quantize(rng.normal(0, math.sqrt(10), 50), 0.1)
        topo = tp.mixing_matrix(tp.gen_ring(50))
        ds = sm.one_per_agent(s)
        gt = sm.ground_truth(s, 10)
        sm_ = smo.ConvolutionSmoother(sm.select_p(50, 10), 0.05, smo.uniform_kernel())
        cfg = so.ExtraConfig.manual(sm_, ds, max_iters=10**6, use_running_average=False)
        traj = so.extra_run(topo, sm_, ds, cfg, gt, delta=0.1)
        budget = so.certified_budget(so.BudgetInputs.build(topo, sm_, ds, gt, delta=0.1))
        assert traj.converged and traj.iterations_to_interval <= budget

    def test_deterministic(self, small_instance):
        s, topo, ds = small_instance
        gt, sm_ = conv_at_hmax(s, 4)
        cfg = so.ExtraConfig.certified(topo, sm_, ds, max_iters=300, stop_rule=so.StopRule.FIXED_BUDGET)
        a = so.extra_run(topo, sm_, ds, cfg, gt)
        b = so.extra_run(topo, sm_, ds, cfg, gt)
        assert a.sup_err == b.sup_err and a.fn_err == b.fn_err and a.consensus == b.consensus

    def test_certified_budget_rule_runs_exactly(self):
        s = [2.0, 2.0, 5.0, 1.0, 2.0]
        gt, sm_ = conv_at_hmax(s, 3)
        topo = tp.mixing_matrix(tp.gen_complete(5))
        ds = sm.one_per_agent(s)
        b = so.BudgetInputs.build(topo, sm_, ds, gt)
        b = so.BudgetInputs(**{**b.__dict__, "R_1": 1e-6, "g_m": 1e6})
        cfg = so.ExtraConfig.certified(topo, sm_, ds, stop_rule=so.StopRule.CERTIFIED_BUDGET)
        traj = so.extra_run(topo, sm_, ds, cfg, gt, budget_inputs=b)
        assert traj.iterations == so.certified_budget(b)

    def test_oracle_rule_needs_truth(self, small_instance):
        s, topo, ds = small_instance
        _, sm_ = conv_at_hmax(s, 4)
        with pytest.raises(ValueError):
            so.extra_run(topo, sm_, ds, so.ExtraConfig(0.1, 1.0))

    def test_function_error_certifies_interval(self):
        rng = np.random.default_rng(7)
        checked = 0
        for _ in range(5):
            s = sm.quantize(rng.normal(0, 1, 6), 0.2)
            if np.unique(s).size < 2:
                continue
            k = int(rng.integers(1, 7))
            gt, sm_ = conv_at_hmax(s, k)
            topo = tp.mixing_matrix(tp.gen_complete(6))
            ds = sm.one_per_agent(s)
            th = so.smoothed_minimizer(sm_, s)
            f_star = smo.agent_objective(sm_, s, th)
            a, b = so.extra_default_steps(sm_.constants(6).M_h, 6, topo.sigma2)
            st = so.SolverState.initial(s)
            for _ in range(3000):
                st = so.extra_step(st, topo, sm_, ds, a, b)
                gaps = smo.agent_objective(sm_, s, st.w_bar) - f_star
                if np.all(gaps < gt.g_m * gt.delta / 4):
                    checked += 1
                    assert np.all(np.abs(st.w_bar - gt.theta_k) <= gt.delta / 2)
        assert checked > 0

    def test_trajectory_csv(self, small_instance, tmp_path):
        s, topo, ds = small_instance
        gt, sm_ = conv_at_hmax(s, 4)
        cfg = so.ExtraConfig(0.01, 5.0, max_iters=7, stop_rule=so.StopRule.FIXED_BUDGET)
        traj = so.extra_run(topo, sm_, ds, cfg, gt)
        traj.write_csv(tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "iter,sup_err,fn_err,consensus,tx_scalars"
        assert len(lines) == 8
        assert lines[-1].startswith("7,") and lines[-1].endswith(f",{2 * topo.graph.num_edges}")


class TestSmoothedMinimizer:
    @pytest.mark.parametrize("p, h", [(0.6, 0.5), (0.3, 2.0)])
    def test_single_score_nesterov(self, p, h):
        # oracle: dense grid argmin of the smoothed loss is the score itself
        assert so.smoothed_minimizer(smo.NesterovSmoother(p, h), [5.0]) == pytest.approx(5.0, abs=1e-10)

    def test_symmetric_pair(self):
        assert so.smoothed_minimizer(smo.make_smoother("conv", 0.5, 2.0), [-1.0, 1.0]) == pytest.approx(0, abs=1e-10)

    def test_nesterov_pair_has_flat_minimum(self):
        # gradient vanishes on (-1 + h/2, 1 - h/2), so any point there is a minimizer
        sm_ = smo.make_smoother("nesterov", 0.5, 0.7)
        x = so.smoothed_minimizer(sm_, [-1.0, 1.0])
        assert -0.65 - 1e-9 <= x <= 0.65 + 1e-9
        assert smo.agent_gradient(sm_, [-1.0, 1.0], x) == pytest.approx(0, abs=1e-9)

    def test_matches_grid_argmin(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            s = rng.normal(size=9)
            sm_ = smo.ConvolutionSmoother(sm.select_p(9, 3), rng.uniform(0.1, 1), smo.uniform_kernel())
            xs = np.linspace(s.min() - 1, s.max() + 1, 200_001)
            ref = xs[np.argmin(smo.agent_objective(sm_, s, xs))]
            assert so.smoothed_minimizer(sm_, s) == pytest.approx(ref, abs=1e-4)

    def test_accepts_datasets(self):
        ds = sm.one_per_agent([1.0, 3.0, 4.0])
        sm_ = smo.NesterovSmoother(0.5, 0.3)
        assert so.smoothed_minimizer(sm_, ds) == so.smoothed_minimizer(sm_, [1.0, 3.0, 4.0])


class TestBudget:
    def base(self, **kw):
        d = dict(g_m=2.0, delta=4.0, sigma2=0.0, M_h=1.0, L_h=1.0, n=1, R_1=1.0, R_2=1.0)
        d.update(kw)
        return so.BudgetInputs(**d)

    def test_example(self):
        assert so.certified_budget(self.base()) == 68

    def test_diverges_as_sigma2_grows(self):
        vals = [so.certified_budget(self.base(sigma2=s)) for s in (0.0, 0.9, 0.99, 0.9999)]
        assert vals == sorted(vals) and vals[-1] > 50 * vals[0]

    def test_monotone_in_gap(self):
        vals = [so.certified_budget(self.base(delta=d)) for d in (0.5, 1.0, 2.0, 4.0)]
        assert vals == sorted(vals, reverse=True)

    def test_floor(self):
        assert so.certified_budget(self.base(g_m=1e9, sigma2=0.99)) == 10

    def test_rhs(self):
        b = self.base()
        fn, cons = so.error_bounds(34, self.base(R_1=0.5, R_2=0.5))
        assert fn == pytest.approx(1.0)
        f1, c1 = so.error_bounds(10, b)
        f2, c2 = so.error_bounds(20, b)
        assert f2 == pytest.approx(f1 / 2) and c2 == pytest.approx(c1 / 4)
        with pytest.raises(ValueError):
            so.error_bounds(3, self.base(sigma2=0.99))

    def test_surrogate_radius_dominates_exact(self, small_instance):
        s, topo, ds = small_instance
        gt, sm_ = conv_at_hmax(s, 4)
        exact = so.BudgetInputs.build(topo, sm_, ds, gt)
        loose = so.BudgetInputs.build(topo, sm_, ds, gt, oracle=False)
        assert loose.R_1 >= exact.R_1
        assert exact.R_2 == max(sm_.p**2, (1 - sm_.p) ** 2)


class TestDGD:
    def test_single_agent_approaches_score(self):
        topo = tp.MixingTopology(tp.Graph(1, ()), np.ones((1, 1)), 1.0, 0.0, np.zeros(1))
        ds = [sm.LocalDataset(0, [5.0])]
        traj = so.dgd_run(topo, ds, 0.7, 0.01, max_iters=2000, stop_rule=so.StopRule.FIXED_BUDGET,
                          w0=[3.0])
        assert abs(traj.final_w[0] - 5.0) <= 0.01

    def test_kink_subgradient(self):
        topo = tp.mixing_matrix(tp.Graph(2, ((0, 1),)))
        ds = sm.one_per_agent([1.0, 1.0])
        traj = so.dgd_run(topo, ds, 0.8, 0.1, max_iters=1, stop_rule=so.StopRule.FIXED_BUDGET)
        assert traj.final_w == pytest.approx([1.0 - 0.1 * (0.5 - 0.8)] * 2)

    def test_best_error_non_increasing(self, small_instance):
        s, topo, ds = small_instance
        gt = sm.ground_truth(s, 4)
        traj = so.dgd_run(topo, ds, sm.select_p(12, 4), 0.02, gt, max_iters=400,
                          stop_rule=so.StopRule.FIXED_BUDGET)
        best = traj.best_sup_err()
        assert np.all(np.diff(best) <= 0)
        assert so.comm_cost(traj) == 400 * topo.scalars_per_round

    def test_rejects_certified_budget(self, small_instance):
        s, topo, ds = small_instance
        with pytest.raises(ValueError):
            so.dgd_run(topo, ds, 0.5, 0.1, stop_rule=so.StopRule.CERTIFIED_BUDGET)


class TestStopk:
    def test_complete_graph_one_round(self):
        s = np.array([4.0, 1.0, 3.0, 9.0, 2.0])
        topo = tp.mixing_matrix(tp.gen_complete(5))
        res = so.stopk_run(topo, sm.one_per_agent(s), 2, max_rounds=1)
        assert all(l.tolist() == [3, 0] for l in res.lists)

    def test_ring_diameter_rounds(self):
        s = np.array([3.0, 1.0, 4.0, 1.5, 9.0, 2.6])
        topo = tp.mixing_matrix(tp.gen_ring(6))
        res = so.stopk_run(topo, sm.one_per_agent(s), 2, max_rounds=3)
        assert all(l.tolist() == [4, 2] for l in res.lists)
        full = so.stopk_run(topo, sm.one_per_agent(s), 2)
        assert full.rounds <= topo.graph.diameter() + 1

    def test_round_cost(self):
        topo = tp.mixing_matrix(tp.gen_ring(8))
        res = so.stopk_run(topo, sm.one_per_agent(np.arange(8.0)), 3)
        assert res.per_round[0] == 2 * 8
        for c in res.per_round:
            assert c <= 3 * int(topo.graph.degrees.sum())
        assert so.comm_cost(res) == sum(res.per_round)

    def test_bottom_mode(self):
        rng = np.random.default_rng(4)
        s = sm.quantize(rng.normal(size=20), 0.5)
        topo = tp.mixing_matrix(tp.gen_erdos_renyi(20, 40, seed=2))
        res = so.stopk_run(topo, sm.one_per_agent(s), 15)
        assert res.bottom
        ref = so.exact_lists(s, 15)
        assert ref.size == 5
        assert all(np.array_equal(l, ref) for l in res.lists)
        assert set(np.sort(s)[:5]) == set(s[ref])

    def test_multi_score_agents(self):
        rng = np.random.default_rng(6)
        s = rng.normal(size=40)
        ds = sm.round_robin_partition(s, 8, rng)
        topo = tp.mixing_matrix(tp.gen_erdos_renyi(8, 12, seed=1))
        res = so.stopk_run(topo, ds, 6)
        ref = so.exact_lists(s, 6)
        assert all(np.array_equal(l, ref) for l in res.lists)

    def test_comm_cost_arithmetic(self):
        traj = so.Trajectory("extra", 60)
        traj.consensus = [0.0] * 10
        assert so.comm_cost(traj) == 600
