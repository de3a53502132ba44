import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ldpquantile.coordinator import Trajectory, run_federated
from ldpquantile.inference import (
    ConfidenceInterval,
    PivotEntry,
    PivotSpec,
    PivotTable,
    SelfNormAccumulators,
    alt_normalizers,
    confidence_interval,
    critical_values,
    fclt_path,
    h_index,
    offline_normalizer,
    online_normalizer,
    pivot_quantile,
    simulate_pivot,
    update_accumulators,
)
from ldpquantile.schedule import CommSchedule, build_schedule

from helpers import small_config


def _traj(qbar, E):
    qbar = np.asarray(qbar, dtype=float)
    sched = CommSchedule("Custom", E)
    return Trajectory(qbar, np.cumsum(qbar) / np.arange(1, qbar.size + 1), sched)


def test_first_update():
    acc = update_accumulators(SelfNormAccumulators(), 1, 0.7, 3)
    assert acc.Va == pytest.approx(0.49 / 3) and acc.Vb == pytest.approx(0.7 / 3)
    assert acc.Vs == pytest.approx(1 / 3) and acc.Vp == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        update_accumulators(acc, 3, 0.1, 1)


def test_two_round_normalizer():
    a, b = 0.3, -1.1
    vhat, _ = online_normalizer(_traj([a, b], [1, 1]))
    assert vhat == pytest.approx((a - b) ** 2 / 32, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.integers(1, 9)), min_size=1, max_size=80))
def test_online_equals_offline(rows):
    qbar, E = zip(*rows)
    traj = _traj(qbar, E)
    online, _ = online_normalizer(traj)
    offline = offline_normalizer(traj) / traj.schedule.samples
    assert online == pytest.approx(offline, rel=1e-10, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=40), st.floats(-10, 10), st.floats(0.1, 10))
def test_location_scale(qbar, c, s):
    E = [1 + i % 3 for i in range(len(qbar))]
    v0, _ = online_normalizer(_traj(qbar, E))
    v1, _ = online_normalizer(_traj([c + s * q for q in qbar], E))
    assert v1 == pytest.approx(s * s * v0, rel=1e-7, abs=1e-10)


def test_fclt_path_endpoint():
    traj = run_federated(small_config("Log", total_samples=300))
    grid, vals = fclt_path(traj, 0.2)
    sched = traj.schedule
    assert grid[-1] == 1.0
    assert vals[-1] == pytest.approx(math.sqrt(sched.samples) * (traj.final - 0.2), rel=1e-10)


def test_h_index():
    E = [1] * 10
    assert h_index(0.35, E) == 3
    assert h_index(1.0, E) == 10
    assert h_index(0.1, E) == 1
    with pytest.raises(ValueError):
        h_index(0.0, E)


def test_alt_normalizers_two_rounds():
    a, b = 1.0, 0.0
    sup, l1 = alt_normalizers(_traj([a, b], [1, 1]))
    assert sup == pytest.approx(math.sqrt(2) / 2 * abs(a - b) / 2)
    assert l1 == pytest.approx(0.5 * math.sqrt(2) / 2 * abs(a - b) / 2)


def test_confidence_interval_example():
    ci = confidence_interval(1.0, 0.04, 5.0)
    assert ci.lo == pytest.approx(0.0, abs=1e-15) and ci.hi == pytest.approx(2.0)
    assert ci.contains(1.5) and not ci.contains(2.5)
    assert ci.map(np.exp).hi == pytest.approx(math.exp(2.0))
    with pytest.raises(ValueError):
        ConfidenceInterval(1.0, 0.0)


def test_pivot_symmetric():
    U = simulate_pivot(PivotSpec.uniform(100), 40_000, seed=3)
    assert abs(np.median(U)) < 0.1
    assert np.quantile(U, 0.975) == pytest.approx(-np.quantile(U, 0.025), rel=0.05)


def test_pivot_monotone_in_alpha():
    U = simulate_pivot(PivotSpec.uniform(200), 20_000, seed=1)
    qs = [np.quantile(U, 1 - a / 2) for a in (0.2, 0.1, 0.05, 0.01)]
    assert all(x < y for x, y in zip(qs, qs[1:]))


def test_pivot_short_horizon_refined():
    # a 3-round grid still needs a fine Brownian discretization
    spec = PivotSpec.from_schedule(CommSchedule("Custom", [1, 1, 1]))
    assert np.isfinite(simulate_pivot(spec, 10_000, seed=0)).all()


def test_pivot_quantile_requires_enough_paths():
    with pytest.raises(ValueError):
        pivot_quantile(PivotSpec.uniform(10), paths=100)


def test_pivot_deterministic_across_chunks():
    spec = PivotSpec.uniform(64)
    a = simulate_pivot(spec, 5000, seed=9)
    b = simulate_pivot(spec, 5000, seed=9)
    np.testing.assert_array_equal(a, b)


def test_pivot_table_roundtrip(tmp_path):
    path = tmp_path / "p.json"
    t = PivotTable.open(path)
    t.put(PivotEntry("abc", 0.05, 10_000, 1, 6.5))
    t.save()
    back = PivotTable.load(path)
    assert back.get("abc", 0.05, 10_000, 1).v == 6.5
    assert back.get("abc", 0.10) is None


def test_critical_values_cached(tmp_path):
    sched = build_schedule("C1", rounds=20)
    t = PivotTable.open(tmp_path / "p.json")
    v1 = critical_values(sched, [0.05, 0.1], t, paths=10_000, seed=2)
    again = critical_values(sched, [0.05, 0.1], PivotTable.open(tmp_path / "p.json"), paths=10_000, seed=2,
                            build=False)
    assert v1 == again
    assert v1[0.1] < v1[0.05]


def test_pivot_table_keeps_seeds_apart(tmp_path):
    t = PivotTable.open(tmp_path / "p.json")
    t.put(PivotEntry("abc", 0.05, 10_000, 1, 6.5))
    t.put(PivotEntry("abc", 0.05, 10_000, 2, 6.6))
    t.put(PivotEntry("abc", 0.05, 200_000, 1, 6.7))
    t.save()
    back = PivotTable.load(tmp_path / "p.json")
    assert back.get("abc", 0.05, 10_000, 1).v == 6.5
    assert back.get("abc", 0.05, 10_000, 2).v == 6.6
    assert back.get("abc", 0.05).v == 6.7
