import numpy as np
import pytest

from hydrobalance import des
from hydrobalance.initial import InitialCondition
from hydrobalance.measure import ks_distance, exponential_tail
from hydrobalance.params import ModelParams, ServiceDist, derive, reference_params
from hydrobalance.routing import rank_law

UNIF = InitialCondition("uniform", lo=0, hi=10)


def test_initial_state_is_rounded_draw():
    p = reference_params(400)
    sim = des.init(p, UNIF, seed=3)
    draws = UNIF.draw(400, 3)
    np.testing.assert_array_equal(sim.x, np.floor(20 * draws + 0.5))
    assert sim.t == 0.0
    # busy servers have a pending departure, idle ones none
    assert np.all(np.isfinite(sim.dep) == (sim.x > 0))


def test_run_is_deterministic_and_ledger_holds():
    p = reference_params(100)
    plan = des.SnapshotPlan(times=(0.5, 1.0))
    a = des.run(p, UNIF, plan, seed=1)
    b = des.run(p, UNIF, plan, seed=1)
    for sa, sb in zip(a.snapshots, b.snapshots):
        np.testing.assert_array_equal(sa.measure.samples, sb.measure.samples)
    assert a.events == b.events
    c = des.run(p, UNIF, plan, seed=2)
    assert not np.array_equal(a.snapshots[1].measure.samples, c.snapshots[1].measure.samples)


def test_step_replay_invariants():
    """Instrumented replay: heap order, ledger, idle time accrues only while empty."""
    p = reference_params(8)
    sim = des.init(p, InitialCondition("uniform", lo=0, hi=0.5), seed=11)
    last_t = 0.0
    for _ in range(5000):
        idle_before = sim.idle_time.copy()
        x_before = sim.x.copy()
        t0 = sim.t
        t, code = sim.step()
        assert t >= last_t
        last_t = t
        assert sim.ledger_ok()
        assert np.all(sim.x >= 0)
        grew = sim.idle_time - idle_before
        dt = t - t0
        np.testing.assert_allclose(grew, np.where(x_before == 0, dt, 0.0), atol=1e-12)
        # at most one queue changes per event
        assert np.sum(sim.x != x_before) <= 1


def test_lbs_rank_histogram_matches_rank_law():
    for mode in ("without", "with"):
        p = reference_params(12, replacement=mode, b=3.0, mu_hat=3.5)
        sim = des.init(p, UNIF, seed=5)
        target = 100_000
        while sim.lbs.sum() < target:
            sim.advance(sim.t + 20.0, record_ranks=True)
        hist = sim.rank_hist[1:]
        total = hist.sum()
        law = rank_law(12, 4, mode).probs
        se = np.sqrt(law * (1 - law) / total) + 1e-12
        assert np.all(np.abs(hist / total - law) < 4 * se + 1e-12), (mode, hist / total - law)


def test_b_zero_has_no_lbs_and_is_mm1_like():
    p = ModelParams(n=2000, b=0.0, mu_hat=0.5, seed=0)
    # start in the limiting law and check that it persists
    x = np.linspace(0, 80, 8001)
    sim = des.init(p, InitialCondition("from_tail", tail=(x, np.exp(-0.5 * x))), seed=2)
    assert all(code != 2 * p.n for _, code in sim.pending())
    sim.advance(3.0)
    assert sim.lbs.sum() == 0
    # single-queue heavy-traffic law: exponential with rate lam|rho|/a = 0.5
    m = des.EmpiricalMeasure(sim.rescaled())
    assert ks_distance(m, exponential_tail(0.5, 200)) < 0.05


def test_event_rate_near_nominal():
    p = reference_params(500)
    d = derive(p)
    sim = des.init(p, UNIF, seed=1)
    sim.advance(0.2)
    busy = np.mean(sim.x > 0)
    nominal = p.n * d.lambda_n + busy * p.n * d.mu_n + d.lambda0_n
    rate = sim.events / 0.2
    assert abs(rate / nominal - 1) < 0.02


def test_replications_one_equals_run_and_order_fixed():
    p = reference_params(64)
    plan = des.SnapshotPlan(times=(0.5,))
    one = des.run_replications(p, UNIF, plan, [7])
    r = des.run(p, UNIF, plan, seed=7)
    assert one.mean[0] == r.snapshots[0].stats.mean
    assert one.variance[0] == r.snapshots[0].stats.variance
    ab = des.run_replications(p, UNIF, plan, [1, 2])
    ba = des.run_replications(p, UNIF, plan, [2, 1])
    assert ab.mean[0] == pytest.approx(ba.mean[0], rel=1e-15)
    same = des.run_replications(p, UNIF, plan, [3, 3])
    assert same.outputs[0].snapshots[0].stats == same.outputs[1].snapshots[0].stats


def test_parallel_replications_match_serial():
    p = reference_params(64)
    plan = des.SnapshotPlan(times=(0.5,))
    s = des.run_replications(p, UNIF, plan, [1, 2, 3], jobs=1)
    q = des.run_replications(p, UNIF, plan, [1, 2, 3], jobs=2)
    np.testing.assert_array_equal(s.mean, q.mean)
    np.testing.assert_array_equal(s.variance_se, q.variance_se)


def test_standard_error_scales_like_inverse_root_r():
    p = reference_params(50)
    plan = des.SnapshotPlan(times=(0.2,))
    se = [des.run_replications(p, UNIF, plan, list(range(100 * R, 100 * R + R))).mean_se[0] for R in (4, 16, 64)]
    # each fourfold increase should halve the SE; allow generous sampling slack
    assert 0.25 < se[1] / se[0] < 1.0
    assert 0.25 < se[2] / se[1] < 1.0
    assert 0.1 < se[2] / se[0] < 0.5


def test_tracked_queue_and_idle():
    p = reference_params(50)
    plan = des.SnapshotPlan(times=(0.5, 1.0), tracked=(0, 3))
    out = des.run(p, InitialCondition("dirac", x0=0.0), plan, seed=2)
    xs, idle = out.tracked[3]
    assert xs.shape == (2,) and np.all(idle >= 0) and idle[1] >= idle[0]


def test_deterministic_service_runs():
    p = reference_params(100, service=ServiceDist("deterministic"))
    out = des.run(p, UNIF, des.SnapshotPlan(times=(0.5,)), seed=1)
    assert out.snapshots[0].stats.mean > 0


def test_snapshot_plan_validation():
    with pytest.raises(ValueError):
        des.SnapshotPlan(times=(2.0, 1.0))
    with pytest.raises(ValueError):
        des.SnapshotPlan(times=(-1.0,))
