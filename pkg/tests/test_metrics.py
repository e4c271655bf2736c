import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vistransfer.metrics import (ROW_NAMES, MetricsError, ShortLogWarning, TransferMetrics,
                                 episodes_to_threshold, evaluate, format_csv, format_report,
                                 jumpstart, metrics_table, total_rewards, transfer_ratio)
from vistransfer.rewardlog import RewardLog

rewards = st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=60)


def brute_threshold(r, threshold, window):
    for e in range(window, len(r) + 1):
        if np.mean(r[e - window:e]) >= threshold:
            return e
    return None


def brute_total(r, budget):
    r = list(r)[:budget]
    return sum(np.mean(r[:i + 1]) for i in range(len(r)))


@pytest.mark.parametrize("t,b,expected", [
    (74932, 47960, 1.562), (65376, 47960, 1.363), (18400, 47960, 0.384), (17403, 47960, 0.363)])
def test_published_ratios(t, b, expected):
    assert transfer_ratio(t, b) == pytest.approx(expected, abs=1e-3)


def test_ratio_absent_for_zero_baseline():
    assert transfer_ratio(5.0, 0.0) is None


@given(x=st.floats(-1e6, 1e6).filter(lambda v: abs(v) > 1e-9))
def test_self_ratio_is_one(x):
    assert transfer_ratio(x, x) == 1.0


def test_jumpstart_examples():
    assert jumpstart([5] * 50, [5] * 50, 50) == 0.0
    assert jumpstart([2, 2], [1, 1], 2) == 1.0
    with pytest.raises(MetricsError):
        jumpstart([1], [1, 2], 2)
    with pytest.raises(MetricsError):
        jumpstart([1], [1], 0)


@settings(max_examples=50)
@given(a=rewards, b=rewards)
def test_jumpstart_is_antisymmetric(a, b):
    k = min(len(a), len(b))
    assert jumpstart(a, b, k) == pytest.approx(-jumpstart(b, a, k), abs=1e-9)


def test_threshold_examples():
    assert episodes_to_threshold([500] * 30, 400, 10) == 10
    assert episodes_to_threshold([100] * 30, 400, 10) is None
    assert episodes_to_threshold([0, 0, 800, 800], 400, 2) == 3
    assert episodes_to_threshold([1, 2], 0, 5) is None


@settings(max_examples=100)
@given(r=rewards, threshold=st.floats(-50, 50), window=st.integers(1, 12))
def test_threshold_matches_brute_force(r, threshold, window):
    got = episodes_to_threshold(r, threshold, window)
    want = brute_threshold(r, threshold, window)
    if got != want:  # tolerate cumulative-sum rounding right at the boundary
        e = got or want
        assert abs(np.mean(r[e - window:e]) - threshold) < 1e-9


@settings(max_examples=50)
@given(r=rewards, t1=st.floats(-50, 50), t2=st.floats(-50, 50))
def test_threshold_is_monotone(r, t1, t2):
    lo, hi = sorted((t1, t2))
    e_lo, e_hi = episodes_to_threshold(r, lo, 3), episodes_to_threshold(r, hi, 3)
    if e_hi is not None:
        assert e_lo is not None and e_lo <= e_hi


def test_total_rewards_examples():
    assert total_rewards([3.0] * 10, 10) == pytest.approx(30.0)
    assert total_rewards([0, 2], 2) == 1.0
    assert total_rewards([7, 1, 2], 1) == 7.0
    with pytest.raises(MetricsError):
        total_rewards([], 5)


def test_short_log_warns():
    with pytest.warns(ShortLogWarning):
        assert total_rewards([1.0, 1.0], 5) == 2.0


@settings(max_examples=100)
@given(r=rewards, budget=st.integers(1, 80), c=st.floats(-10, 10))
def test_total_rewards_brute_force_and_linearity(r, budget, c):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ShortLogWarning)
        got = total_rewards(r, budget)
        assert got == pytest.approx(brute_total(r, budget), rel=1e-9, abs=1e-7)
        scaled = total_rewards([c * v for v in r], budget)
    assert scaled == pytest.approx(c * got, rel=1e-9, abs=1e-6)


def test_evaluate_constant_logs():
    m = evaluate(RewardLog.from_rewards([2.0] * 100), RewardLog.from_rewards([1.0] * 100),
                 auc_budget=100, threshold=1.5)
    assert m.transfer_ratio == pytest.approx(2.0)
    assert m.jumpstart == pytest.approx(1.0)
    assert m.episodes_to_threshold == 10
    solo = evaluate([1.0] * 20, auc_budget=20)
    assert solo.jumpstart is None and solo.transfer_ratio is None


def test_report_layout_and_none_rendering():
    cols = {
        "Baseline": TransferMetrics(None, 120, 47960.0, None),
        "3:1": TransferMetrics(4.5, 80, 74932.0, 74932 / 47960),
        "1:3": TransferMetrics(-2.0, None, 17403.0, 17403 / 47960),
    }
    table = metrics_table(cols, "Baseline")
    assert [row[0] for row in table[1:]] == list(ROW_NAMES)
    assert table[1] == ["Jumpstart", "-", "4.500", "None"]
    assert table[2] == ["Epoch to threshold", "120", "80", "None"]
    assert table[4] == ["Transfer Ratio", "-", "1.562", "0.363"]
    report = format_report(table)
    lines = report.splitlines()
    assert lines[0].startswith("Worker Configurations") and set(lines[1]) <= {"-", " "}
    assert len({len(line) for line in lines[2:]}) >= 1
    csv_text = format_csv(table)
    assert csv_text.splitlines()[0] == "Worker Configurations,Baseline,3:1,1:3"
    assert csv_text.splitlines()[4] == "Transfer Ratio,-,1.562,0.363"


def test_metrics_accept_logs_arrays_and_record_lists():
    rewards = [0.0, 5.0, 13.0, 14.0, 1.0]
    log = RewardLog.from_rewards(rewards)
    for form in (log, rewards, np.array(rewards), log.records, log.records[:4]):
        assert episodes_to_threshold(form, 13.0, window=2) == 4
