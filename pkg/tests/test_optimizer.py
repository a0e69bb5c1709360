import io
from fractions import Fraction

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats

from sfreinforce import (BoxConstraint, ConfigurationError, MdpModel, NumericAbort, ParamPolicy,
                         StepSchedule, baseline_reinforce, exact_gradient, kw_descent,
                         objective, optimal_value, projected_grad_norm, sf_monte_carlo,
                         sf_reinforce, simulate_batch, validate_schedule)
from sfreinforce.optimizer import RECORD_COLUMNS

import gridruns
from conftest import TWO_STATE_THETA, one_step_model, single_action_model, two_state_model


def equivalent_actions_model():
    """Two states whose two actions are identical, so F does not depend on theta."""
    r0, r1 = [0.3, 0.2, 0.5], [0.4, 0.0, 0.6]
    return MdpModel.from_lists([[r0, r0], [r1, r1]], [[1.0, 1.0], [2.0, 2.0]], [0.5, 0.5])


class TestSchedule:
    def test_values(self):
        s = StepSchedule(a0=0.5, alpha=1.0, delta0=2.0, gamma=0.5)
        assert s.step_size(0) == 0.5 and s.step_size(3) == 0.125
        assert s.delta(0) == 2.0 and s.delta(3) == 1.0

    @pytest.mark.parametrize("alpha,gamma,ok", [
        (1.0, 0.3, True),
        (1.0, 0.6, False),
        (1.2, 0.1, False),
        (0.9, 0.3, True),
        (1.0, 0.0, False),
        (0.0, -1.0, False),
    ])
    def test_examples(self, alpha, gamma, ok):
        assert bool(validate_schedule(StepSchedule(0.05, alpha, 1.0, gamma))) is ok

    def test_failure_messages(self):
        diag = validate_schedule(StepSchedule(0.05, 1.0, 1.0, 0.6))
        assert len(diag.failures) == 1 and "diverge" in diag.failures[0]
        diag = validate_schedule(StepSchedule(0.05, 1.2, 1.0, 0.1))
        assert len(diag.failures) == 1 and "finite" in diag.failures[0]

    def test_exact_region(self):
        # dyadic grid, so the boundary cases are exact in binary floating point
        for k in range(1, 11):
            for j in range(-1, 9):
                a, g = Fraction(k, 8), Fraction(j, 16)
                inside = 0 < a <= 1 and g > 0 and 2 * (a - g) > 1
                sched = StepSchedule(0.05, float(a), 1.0, float(g))
                assert bool(validate_schedule(sched)) is inside, (a, g)

    def test_without_perturbation(self):
        assert validate_schedule(StepSchedule(0.05, 1.0, 1.0, 0.9), perturbation=False)


class TestObjective:
    def test_one_step(self):
        m = one_step_model()
        assert objective(m, ParamPolicy(m)) == 1.0

    def test_lower_bound(self, random_ssp):
        v_star = random_ssp.initial_dist @ optimal_value(random_ssp)[0]
        rng = np.random.default_rng(0)
        for _ in range(50):
            pol = ParamPolicy(random_ssp, rng.normal(scale=3, size=30))
            assert objective(random_ssp, pol) >= v_star - 1e-10

    def test_monte_carlo(self, two_state, two_state_policy):
        res = simulate_batch(two_state, two_state_policy.dists(), 500_000, 3)
        se = res.returns.std(ddof=1) / np.sqrt(res.returns.size)
        assert abs(res.returns.mean() - objective(two_state, two_state_policy)) < 4 * se


class TestProjectedGradNorm:
    def test_zero_gradient(self):
        m = single_action_model()
        assert projected_grad_norm(m, ParamPolicy(m)) == 0.0

    def test_outward_gradient_on_boundary(self):
        # action 0 is cheaper, so descent wants logit 0 up and logit 1 down
        m = MdpModel.from_lists([[[0.0, 1.0], [0.0, 1.0]]], [[1.0, 2.0]], [1.0])
        pol = ParamPolicy(m, [10.0, -10.0])
        g = exact_gradient(m, pol).grad
        assert g[0] < 0 < g[1]
        assert projected_grad_norm(m, pol) == 0.0

    def test_partial_boundary(self):
        m = MdpModel.from_lists([[[0.0, 1.0], [0.0, 1.0]]], [[1.0, 2.0]], [1.0])
        pol = ParamPolicy(m, [10.0, 0.0])
        g = exact_gradient(m, pol).grad
        assert_allclose(projected_grad_norm(m, pol), abs(g[1]), rtol=1e-6)

    def test_interior(self, random_ssp):
        pol = ParamPolicy(random_ssp, np.random.default_rng(3).normal(size=30))
        g = exact_gradient(random_ssp, pol).grad
        assert abs(projected_grad_norm(random_ssp, pol) - np.linalg.norm(g)) < 1e-8


class TestRunRecord:
    def run(self, seed=0, iters=250, diag_every=100):
        m = two_state_model()
        return sf_reinforce(m, ParamPolicy(m, TWO_STATE_THETA), StepSchedule(), iters, seed,
                            diag_every)

    def test_accounting(self):
        _, rec = self.run()
        assert rec.iterations == 250 and rec.episodes == 250
        assert_array_equal(rec.column("n"), np.arange(250))
        assert_array_equal(rec.column("episodes"), np.arange(1, 251))

    def test_diagnostic_cadence(self):
        _, rec = self.run()
        has = ~np.isnan(rec.column("objective"))
        assert_array_equal(np.flatnonzero(has), [99, 199, 249])
        n, f, g = rec.diagnostics()
        assert_array_equal(n, [-1, 99, 199, 249])
        assert f[0] == rec.initial["objective"]

    def test_schedule_columns(self):
        _, rec = self.run()
        s = StepSchedule()
        assert_array_equal(rec.column("a_n"), [s.step_size(n) for n in range(250)])
        assert_array_equal(rec.column("delta_n"), [s.delta(n) for n in range(250)])

    def test_feasible_iterates(self):
        m = two_state_model()
        box = BoxConstraint.uniform(4, -0.5, 0.5)
        pol, rec = sf_reinforce(m, ParamPolicy(m, box=box), StepSchedule(5.0, 1.0, 0.5, 0.3),
                                2000, 1, diag_every=50)
        touched = False
        for _, theta in rec.snapshots:
            assert box.contains(theta)
            touched |= bool(box.active(theta).any())
        assert touched

    def test_update_rule(self):
        m = two_state_model()
        pol0 = ParamPolicy(m, TWO_STATE_THETA)
        sched = StepSchedule(0.3, 1.0, 0.7, 0.3)
        pol, rec = sf_reinforce(m, pol0, sched, 1, 9)
        rng = np.random.default_rng(9)
        vec = rng.standard_normal(4)
        G = rec.column("G_n")[0]
        expect = np.clip(TWO_STATE_THETA - 0.3 * vec * G / 0.7, -10, 10)
        assert_allclose(pol.theta, expect, rtol=1e-15)

    def test_byte_identical(self):
        outs = []
        for _ in range(2):
            _, rec = self.run(seed=4)
            buf = io.StringIO()
            rec.write_csv(buf)
            outs.append(buf.getvalue())
        assert outs[0] == outs[1]
        header = outs[0].splitlines()[0]
        assert header == ",".join(RECORD_COLUMNS)

    def test_lr_byte_identical(self):
        m = two_state_model()
        outs = []
        for _ in range(2):
            _, rec = baseline_reinforce(m, ParamPolicy(m), StepSchedule(), 300, 2, 100)
            buf = io.StringIO()
            rec.write_csv(buf)
            outs.append(buf.getvalue())
        assert outs[0] == outs[1]

    def test_sidecar(self):
        _, rec = self.run()
        side = rec.sidecar()
        assert side["seed"] == 0 and side["iterations"] == 250
        assert side["config"]["schedule"] == {"a0": 0.05, "alpha": 1.0, "delta0": 1.0,
                                              "gamma": 0.3}
        assert side["config"]["project_perturbation"] is False

    def test_rejects_bad_schedule(self):
        m = two_state_model()
        with pytest.raises(ConfigurationError):
            sf_reinforce(m, ParamPolicy(m), StepSchedule(0.05, 1.0, 1.0, 0.6), 10, 0)
        _, rec = sf_reinforce(m, ParamPolicy(m), StepSchedule(0.05, 1.0, 1.0, 0.6), 10, 0,
                              allow_bad_schedule=True)
        assert rec.config["schedule_ok"] is False

    def test_numeric_abort(self):
        # the exact value (about 1e308) is finite, but long episodes overflow G
        m = MdpModel.from_lists([[[0.9, 0.1]]], [[1e307]], [1.0])
        with pytest.raises(NumericAbort) as info:
            sf_reinforce(m, ParamPolicy(m), StepSchedule(), 100, 0)
        assert info.value.iteration is not None
        assert info.value.record.failed
        assert info.value.record.iterations == info.value.iteration

    def test_kw_accounting(self):
        m = two_state_model()
        _, rec = kw_descent(m, ParamPolicy(m), StepSchedule(), 7, 0, diag_every=3,
                            episodes_per_side=2)
        assert rec.iterations == 7 and rec.episodes == 7 * 2 * 4 * 2


class TestStationarity:
    def test_zero_step_never_moves(self):
        m = equivalent_actions_model()
        pol0 = ParamPolicy(m, [0.4, -0.2, 1.0, 0.3])
        assert projected_grad_norm(m, pol0) < 1e-8
        sched = StepSchedule(0.0, 1.0, 1.0, 0.3)
        pol, rec = sf_reinforce(m, pol0, sched, 500, 0, 100, allow_bad_schedule=True)
        assert_array_equal(pol.theta, pol0.theta)
        assert len(set(rec.column("theta_hash"))) == 1

    def test_small_steps_displacement_bound(self):
        m = equivalent_actions_model()
        pol0 = ParamPolicy(m)
        sched = StepSchedule(1e-3, 1.0, 1.0, 0.3)
        N = 1000
        # estimator moments at delta = 1; the gradient is zero so the bias is the MC mean
        summ = sf_monte_carlo(m, pol0, 1.0, 200_000, seed=0)
        bias = np.linalg.norm(summ.mean)
        noise = np.sqrt(summ.var.sum())
        bound = sum(sched.step_size(n) * (bias + noise / sched.delta(n)) for n in range(N))
        disp = [np.linalg.norm(sf_reinforce(m, pol0, sched, N, s, N)[0].theta)
                for s in range(20)]
        assert np.mean(disp) <= bound


def driftless_walk(G_samples, schedule, box, d, rng):
    """theta <- clip(theta - a_n Delta G / delta_n) with G drawn independently of Delta."""
    theta = np.zeros(d)
    for n, G in enumerate(G_samples):
        theta = np.clip(theta - schedule.step_size(n) * rng.standard_normal(d) * G
                        / schedule.delta(n), box.lower, box.upper)
    return theta


class TestZeroDrift:
    N = 400

    def test_sf_matches_driftless_walk(self):
        m = single_action_model(p=3, seed=2)
        box = BoxConstraint.uniform(3, -1.0, 1.0)
        sched = StepSchedule(0.5, 1.0, 1.0, 0.3)
        disp = np.array([np.linalg.norm(sf_reinforce(m, ParamPolicy(m, box=box), sched,
                                                     self.N, s, self.N)[0].theta)
                         for s in range(100)])
        rng = np.random.default_rng(12345)
        returns = simulate_batch(m, np.ones((3, 1)), 300 * self.N, rng).returns
        oracle = np.array([np.linalg.norm(driftless_walk(
            returns[k * self.N:(k + 1) * self.N], sched, box, 3, rng)) for k in range(300)])
        assert stats.ks_2samp(disp, oracle).pvalue > 0.01
        assert stats.ttest_ind(disp, oracle, equal_var=False).pvalue > 0.01

    def test_lr_zero_gradient_walk(self):
        # LR on equivalent actions: states and costs do not depend on the actions taken,
        # so the oracle draws trajectories first and actions independently
        m = equivalent_actions_model()
        sched = StepSchedule(0.5, 1.0, 1.0, 0.3)
        disp = np.array([np.linalg.norm(baseline_reinforce(m, ParamPolicy(m), sched, 200, s,
                                                           200)[0].theta)
                         for s in range(100)])
        rng = np.random.default_rng(7)
        base = MdpModel(m.transition[:, :1], m.cost[:, :1], m.initial_dist, [1, 1])
        from sfreinforce import simulate_episode
        oracle = []
        for _ in range(300):
            pol = ParamPolicy(m)
            for n in range(200):
                ep = simulate_episode(base, np.ones((2, 1)), rng)
                tail = ep.tail_returns()
                probs = pol.dists()
                grad = np.zeros(4)
                for k, (s, _, _, _) in enumerate(ep.steps):
                    a = rng.choice(2, p=probs[s])
                    grad += pol.score(s, a) * tail[k]
                pol.theta = pol.theta - sched.step_size(n) * grad
            oracle.append(np.linalg.norm(pol.theta))
        assert stats.ks_2samp(disp, oracle).pvalue > 0.01


@pytest.mark.slow
class TestGridworld:
    @pytest.mark.xfail(strict=True, reason=(
        "with a0=0.05, delta0=1 several seeds stall near a pgn ratio of 0.1 to 0.26; "
        "fewer than 8 of 10 reach 0.1 at 2e5 iterations"))
    def test_default_schedule_convergence(self):
        runs = gridruns.runs("SF1", StepSchedule())
        ok = [r["objective"][-1] < r["objective"][0] and gridruns.converged(r) for r in runs]
        assert sum(ok) >= 8, [float(r["pgn"][-1] / r["pgn"][0]) for r in runs]

    def test_lr_convergence(self):
        runs = gridruns.runs("LR", gridruns.BENCH_LR)
        ok = [r["objective"][-1] < r["objective"][0] and gridruns.converged(r) for r in runs]
        assert sum(ok) >= 8

    def test_episode_accounting(self):
        for r in gridruns.runs("SF1", StepSchedule()):
            assert r["record"].episodes == gridruns.ITERS


def test_schedule_ablation():
    m = two_state_model()
    good = StepSchedule(0.05, 1.0, 1.0, 0.3)
    bad = StepSchedule(0.05, 1.0, 1.0, 0.6)

    def final_pgn(sched):
        return np.array([sf_reinforce(m, ParamPolicy(m), sched, 2000, s, 2000,
                                      allow_bad_schedule=True)[1].final["proj_grad_norm"]
                         for s in range(20)])

    assert final_pgn(bad).var() > final_pgn(good).var()
