import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles

from sgdlab.chain import DivergenceError, Ensemble, read_trajectory_csv
from sgdlab.extrapolate import RR2_WEIGHTS, RR3_WEIGHTS, RRScheme, rr2_combine, rr3_combine, run_rr

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_rr2_equal_inputs():
    v = np.array([0.3, -1.2, 4.0])
    np.testing.assert_allclose(rr2_combine(v, v), v, rtol=0, atol=1e-15)


def test_rr2_line_gives_intercept():
    ts, delta, g = np.array([1.0, -2.0]), np.array([0.7, 3.0]), 0.05
    np.testing.assert_allclose(rr2_combine(ts + g * delta, ts + 2 * g * delta), ts, atol=1e-14)


def test_rr2_scalar():
    assert rr2_combine(0.3, 0.5) == pytest.approx(0.1, abs=1e-15)


def test_rr3_equal_inputs():
    v = np.array([2.0, -5.0])
    np.testing.assert_allclose(rr3_combine(v, v, v), v, atol=1e-14)


def test_rr3_parabola_matches_vandermonde():
    ts, d1, d2, g = 0.4, -1.3, 2.2, 0.03
    vals = [ts + m * g * d1 + (m * g) ** 2 * d2 for m in (1, 2, 4)]
    expected = oracles.vandermonde_intercept([g, 2 * g, 4 * g], vals)
    assert rr3_combine(*vals) == pytest.approx(expected, abs=1e-12)
    assert rr3_combine(*vals) == pytest.approx(ts, abs=1e-12)


def test_rr3_scalar():
    assert rr3_combine(1.0, 1.0, 4.0) == pytest.approx(2.0, abs=1e-15)


def test_weights_sum_to_one():
    assert sum(RR2_WEIGHTS) == pytest.approx(1.0, abs=1e-15)
    assert sum(RR3_WEIGHTS) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        RRScheme((1.0, 2.0), (2.0, -0.5))


def test_combine_rejects_mismatched_inputs():
    with pytest.raises(ValueError):
        rr2_combine(np.zeros(2), np.zeros(3))
    with pytest.raises(ValueError):
        RRScheme.rr3().combine(np.zeros(2), np.zeros(2))


@settings(max_examples=200, deadline=None)
@given(st.lists(finite, min_size=3, max_size=3), finite)
def test_affine_invariance(vals, c):
    a, b, e = (np.array([v]) for v in vals)
    np.testing.assert_allclose(rr2_combine(a + c, b + c), rr2_combine(a, b) + c, atol=1e-9)
    np.testing.assert_allclose(rr3_combine(a + c, b + c, e + c), rr3_combine(a, b, e) + c, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(finite, finite, st.floats(1e-4, 1.0))
def test_first_order_cancellation(intercept, slope, g):
    assert rr2_combine(intercept + slope * g, intercept + slope * 2 * g) == pytest.approx(
        intercept, abs=1e-12 * max(1.0, abs(intercept), abs(slope)))


@settings(max_examples=200, deadline=None)
@given(finite, finite, finite, st.floats(1e-4, 1.0))
def test_second_order_cancellation(intercept, d1, d2, g):
    vals = [intercept + d1 * m * g + d2 * (m * g) ** 2 for m in (1, 2, 4)]
    oracle = oracles.vandermonde_intercept([g, 2 * g, 4 * g], vals)
    scale = max(1.0, abs(intercept), abs(d1), abs(d2))
    assert rr3_combine(*vals) == pytest.approx(intercept, abs=1e-10 * scale)
    assert rr3_combine(*vals) == pytest.approx(oracle, abs=1e-10 * scale)


def test_run_rr_quadratic_has_no_bias(Q1):
    """On a quadratic every averaged chain is unbiased, so the combination is too."""
    reps, n = 200, 1000
    ends = np.array([run_rr(Q1, 0.2, [0.0], n, seed=5, replica=r).avg[-1, 0] for r in range(reps)])
    se = ends.std(ddof=1) / math.sqrt(reps)
    assert abs(ends.mean()) <= 3 * se


def test_run_rr_lockstep_members(L1):
    traj, members = run_rr(L1, 0.1, [0.0], 500, seed=3, return_members=True)
    for m in members:
        np.testing.assert_array_equal(m.k, traj.k)
    combined = RRScheme.rr2().combine(members[0].avg, members[1].avg)
    np.testing.assert_allclose(traj.avg, combined, atol=1e-14)


def test_run_rr_coupled_members_share_draws(Q1):
    # from 0 the first iterate is gamma * y, so shared labels give a factor of two
    _, members = run_rr(Q1, 0.1, [0.0], 1, seed=9, record_schedule=[1], return_members=True)
    t1, t2 = members[0].theta[-1, 0], members[1].theta[-1, 0]
    assert t2 == pytest.approx(2 * t1, abs=1e-15)


def test_run_rr_rejects_large_step(L1):
    with pytest.raises(ValueError):
        run_rr(L1, 1.5 / L1.L, [0.0], 10)


def test_lockstep_members_divergence():
    from sgdlab.models import DataAtom, ObjectiveModel
    # guard triggers when a member escapes; force it with a tiny guard radius
    m = ObjectiveModel("least_squares", [DataAtom((1.0,), 1.0, 0.5), DataAtom((1.0,), -1.0, 0.5)])
    ens = Ensemble(m, [0.5, 1.0], [0.0], guard_radius=1e-3)
    with pytest.raises(DivergenceError):
        ens.advance(100, lambda k, th: None)


def test_run_rr_csv_metadata(tmp_path, L1):
    traj = run_rr(L1, 0.1, [0.0], 200, seed=1, scheme=RRScheme.rr3())
    path = tmp_path / "rr.csv"
    traj.to_csv(path)
    meta, header, data = read_trajectory_csv(path)
    assert meta["kind"] == "rr3"
    assert meta["multipliers"] == "1 2 4"
    assert [float(w) for w in meta["weights"].split()] == list(RR3_WEIGHTS)
    assert meta["coupled"] == "True"
    assert header[0] == "k"
    np.testing.assert_allclose(data[:, 0], traj.k)


@pytest.mark.slow
def test_coupled_and_independent_agree_in_mean_and_coupling_reduces_variance(Q1):
    n, reps, gamma = 10_000, 200, 0.1
    scheme = RRScheme.rr2()
    out = {}
    for coupled in (True, False):
        ens = Ensemble(Q1, scheme.step_sizes(gamma), [1.0], replicas=reps, seed=21, coupled=coupled)
        avg = ens.theta.copy()
        ens.advance(n, lambda k, th: avg.__iadd__((th - avg) / (k + 1)))
        out[coupled] = scheme.combine_axis(avg[:, :, 0], axis=0)
    c, i = out[True], out[False]
    se_diff = math.sqrt(c.var(ddof=1) / reps + i.var(ddof=1) / reps)
    assert abs(c.mean() - i.mean()) <= 3 * se_diff
    # variance ratio of two independent samples of size 200: F-test at the 3-sigma level
    ratio = c.var(ddof=1) / i.var(ddof=1)
    assert ratio <= 1 + 3 * math.sqrt(4 / (reps - 1))
