import itertools
import math

import numpy as np
import pytest

from amdyn.ews import (
    ConversationRecord,
    bh_correction,
    cohens_d,
    csd_report,
    kendall_tau_trend,
    lead_time_scan,
    length_stratify,
    parse_bins,
    permutation_test,
    rolling_autocorr_lag1,
    rolling_variance,
    trend_tau,
    window_sensitivity,
)

NAN = float("nan")


# ---------------------------------------------------------------------------
# Rolling statistics
# ---------------------------------------------------------------------------


def test_rolling_variance_values():
    out = rolling_variance([1, 2, 3, 4, 5], 5)
    assert np.isnan(out[:4]).all()
    assert out[4] == pytest.approx(2.5, abs=1e-12)


def test_rolling_variance_constant_series():
    out = rolling_variance([2.0] * 8, 4)
    assert np.all(out[3:] == 0.0)
    assert np.isnan(out[:3]).all()


def test_rolling_variance_absent_propagates():
    out = rolling_variance([1, 2, NAN, 4, 5, 6, 7], 3)
    assert np.isnan(out[2])  # window contains the NaN
    assert np.isnan(out[3])
    assert np.isnan(out[4])
    assert out[5] == pytest.approx(1.0)


def test_rolling_autocorr_values():
    out = rolling_autocorr_lag1([1, 2, 3, 4, 5], 5)
    assert out[4] == pytest.approx(1.0, abs=1e-12)
    alternating = rolling_autocorr_lag1([1, -1, 1, -1, 1], 5)
    assert alternating[4] == pytest.approx(-1.0, abs=1e-12)


def test_rolling_autocorr_constant_window_absent():
    out = rolling_autocorr_lag1([3.0] * 6, 4)
    assert np.isnan(out).all()


def test_rolling_stats_shift_scale_behavior():
    rng = np.random.default_rng(2)
    base = rng.normal(size=40)
    scaled = 3.0 * base + 7.0
    var_base = rolling_variance(base, 5)
    var_scaled = rolling_variance(scaled, 5)
    mask = ~np.isnan(var_base)
    np.testing.assert_allclose(var_scaled[mask], 9.0 * var_base[mask], rtol=1e-10)
    ac_base = rolling_autocorr_lag1(base, 5)
    ac_scaled = rolling_autocorr_lag1(scaled, 5)
    mask = ~np.isnan(ac_base)
    np.testing.assert_allclose(ac_scaled[mask], ac_base[mask], rtol=1e-10)


# ---------------------------------------------------------------------------
# Kendall trend
# ---------------------------------------------------------------------------


def tau_b_oracle(xs, ys):
    """O(n^2) pair enumeration with tie correction."""
    n = len(xs)
    concordant = discordant = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = xs[j] - xs[i]
            dy = ys[j] - ys[i]
            prod = dx * dy
            if prod > 0:
                concordant += 1
            elif prod < 0:
                discordant += 1
    n0 = n * (n - 1) / 2

    def tie_sum(values):
        _, counts = np.unique(values, return_counts=True)
        return sum(c * (c - 1) / 2 for c in counts)

    n1 = tie_sum(xs)
    n2 = tie_sum(ys)
    denom = math.sqrt((n0 - n1) * (n0 - n2))
    if denom == 0:
        return None
    return (concordant - discordant) / denom


def test_kendall_examples():
    assert kendall_tau_trend([1, 2, 3, 4, 5], 4) == pytest.approx(1.0)
    assert kendall_tau_trend([5, 4, 3, 2, 1], 4) == pytest.approx(-1.0)
    assert kendall_tau_trend([1, 3, 2], 2, window_points=3) == pytest.approx(1 / 3)


def test_kendall_exclusions():
    assert kendall_tau_trend([NAN, NAN, NAN, 1.0, 2.0], 4) is None  # two valid points
    assert kendall_tau_trend([1.0, 1.0, 1.0, 1.0, 1.0], 4) is None  # constant
    assert kendall_tau_trend([1.0, 2.0, 3.0], -1) is None


def test_kendall_uses_window_positions():
    series = [9.0, 9.0, 9.0, 1.0, 2.0, 3.0, 4.0, 5.0]
    # window of 5 ending at index 7 covers indices 3..7, strictly increasing
    assert kendall_tau_trend(series, 7) == pytest.approx(1.0)


def test_kendall_matches_oracle_on_small_series():
    for n in (3, 4, 5):
        for values in itertools.product((-1, 0, 1), repeat=n):
            ours = kendall_tau_trend(list(values), n - 1, window_points=n)
            oracle = tau_b_oracle(list(range(n)), list(values))
            if oracle is None:
                assert ours is None
            else:
                assert ours == pytest.approx(oracle, abs=1e-12)


# ---------------------------------------------------------------------------
# Permutation test, effect size, BH
# ---------------------------------------------------------------------------


def test_permutation_identical_groups():
    taus = [0.1, 0.2, 0.3, 0.4]
    assert permutation_test(taus, list(taus), seed=1) == pytest.approx(1.0)


def test_permutation_separated_groups_matches_enumeration():
    a = [10.0, 11.0, 12.0, 13.0, 14.0]
    b = [0.0, 1.0, 2.0, 3.0, 4.0]
    pool = a + b
    observed = abs(np.mean(a) - np.mean(b))
    count = 0
    total = 0
    for chosen in itertools.combinations(range(10), 5):
        group_a = [pool[i] for i in chosen]
        group_b = [pool[i] for i in range(10) if i not in chosen]
        total += 1
        if abs(np.mean(group_a) - np.mean(group_b)) >= observed - 1e-12:
            count += 1
    exact = count / total
    approx = permutation_test(a, b, n_perm=10_000, seed=5)
    se = math.sqrt(exact * (1 - exact) / 10_000)
    assert abs(approx - exact) <= 3 * se + 2 / 10_001


def test_permutation_symmetric_in_groups():
    a = [0.5, 0.1, 0.9]
    b = [0.2, 0.4, 0.3, 0.8]
    assert permutation_test(a, b, seed=3) == permutation_test(b, a, seed=3)


def test_permutation_deterministic():
    rng = np.random.default_rng(0)
    a = rng.normal(size=20).tolist()
    b = rng.normal(0.5, size=20).tolist()
    assert permutation_test(a, b, seed=11) == permutation_test(a, b, seed=11)


def test_cohens_d_properties():
    assert cohens_d([1, 2, 3], [1, 2, 3]) == 0.0
    a = [0.0, 1.0, 2.0]
    shifted = [x + np.std(a, ddof=1) for x in a]
    assert cohens_d(shifted, a) == pytest.approx(1.0)
    assert cohens_d(a, shifted) == pytest.approx(-1.0)
    assert math.isnan(cohens_d([1.0], [1.0, 2.0]))


def test_bh_correction_hand_examples():
    np.testing.assert_allclose(bh_correction([0.01, 0.02, 0.03, 0.04]), [0.04] * 4)
    np.testing.assert_allclose(bh_correction([0.005, 0.1]), [0.01, 0.1])
    np.testing.assert_allclose(bh_correction([0.3]), [0.3])


def test_bh_correction_permutation_invariant_and_monotone():
    rng = np.random.default_rng(4)
    p = rng.uniform(size=12)
    q = bh_correction(p)
    order = np.argsort(p)
    assert np.all(np.diff(q[order]) >= -1e-15)
    shuffle = rng.permutation(12)
    np.testing.assert_allclose(bh_correction(p[shuffle]), q[shuffle])
    assert np.all(q <= 1.0)


# ---------------------------------------------------------------------------
# Report pipeline on constructed records
# ---------------------------------------------------------------------------


def make_record(conv_id, label, values, breakdown=None):
    values = np.asarray(values, dtype=float)
    return ConversationRecord(
        conv_id=conv_id,
        label=label,
        breakdown_index=breakdown,
        n_turns=len(values),
        channels={"sig": values},
    )


def ramp_record(conv_id, label, rng, n=20, ramp=False):
    noise = rng.normal(0, 0.05, size=n)
    scale = np.ones(n)
    if ramp:
        length = min(8, n)
        scale[-length:] = np.linspace(1, 6, length)
    values = noise * scale
    breakdown = n - 1 if label == "derail" else None
    return make_record(conv_id, label, values, breakdown)


def test_csd_report_detects_planted_ramp():
    rng = np.random.default_rng(17)
    records = [ramp_record(f"d{i}", "derail", rng, ramp=True) for i in range(60)]
    records += [ramp_record(f"c{i}", "civil", rng, ramp=False) for i in range(60)]
    report = csd_report(records, n_perm=2000, seed=1)
    by_name = {row.indicator: row for row in report.rows}
    row = by_name["sig_var"]
    assert row.p < 0.01
    assert row.tau_derail > row.tau_civil
    assert row.q <= 4 * row.p  # BH across at most 4 rows in this family


def test_csd_report_null_when_groups_identical():
    rng = np.random.default_rng(23)
    base = [rng.normal(0, 1, size=20) for _ in range(40)]
    records = [make_record(f"d{i}", "derail", v, breakdown=19) for i, v in enumerate(base)]
    records += [make_record(f"c{i}", "civil", v) for i, v in enumerate(base)]
    report = csd_report(records, n_perm=2000, seed=2)
    row = {r.indicator: r for r in report.rows}["sig_var"]
    assert row.p > 0.2


def test_csd_report_min_turn_filter():
    rng = np.random.default_rng(29)
    keep = [ramp_record(f"k{i}", "derail" if i % 2 else "civil", rng, n=12, ramp=i % 2 == 1) for i in range(8)]
    drop = [ramp_record(f"s{i}", "civil", rng, n=6) for i in range(4)]
    report = csd_report(keep + drop, n_perm=100, seed=0)
    assert all(row.n <= 8 for row in report.rows)


def test_lead_time_k0_matches_base_report():
    rng = np.random.default_rng(31)
    records = [ramp_record(f"d{i}", "derail", rng, ramp=True) for i in range(20)]
    records += [ramp_record(f"c{i}", "civil", rng) for i in range(20)]
    base = csd_report(records, n_perm=500, seed=7, apply_bh=False)
    scan = lead_time_scan(records, k_values=(0, 1), n_perm=500, seed=7)
    base_rows = {row.indicator: row for row in base.rows}
    for lt_row in scan:
        if lt_row.k == 0:
            assert lt_row.p == base_rows[lt_row.indicator].p
            assert lt_row.n == base_rows[lt_row.indicator].n


def test_window_sensitivity_exclusions():
    rng = np.random.default_rng(37)
    records = [ramp_record(f"d{i}", "derail", rng, n=11, ramp=True) for i in range(10)]
    records += [ramp_record(f"c{i}", "civil", rng, n=11) for i in range(10)]
    rows = window_sensitivity(records, windows=(5, 6, 7), n_perm=100, seed=0)
    by_window = {}
    for row in rows:
        if row.indicator == "sig_var":
            by_window[row.window] = row
    assert by_window[5].n == 20  # 11-turn conversations clear W + 5 = 10
    assert by_window[6].n == 20  # W + 5 = 11, still eligible with 5 valid points
    assert by_window[7].n == 0  # needs >= 12 turns, all excluded
    assert by_window[7].n_excluded == 20


def test_parse_bins():
    assert parse_bins("5-6,7,8-9,13+") == [(5, 6), (7, 7), (8, 9), (13, None)]
    with pytest.raises(ValueError):
        parse_bins("")


def test_length_stratify_partition():
    rng = np.random.default_rng(41)
    records = []
    for n in (6, 7, 11, 14):
        for i in range(6):
            label = "derail" if i % 2 else "civil"
            records.append(ramp_record(f"r{n}_{i}", label, rng, n=n, ramp=label == "derail"))
    rows = length_stratify(records, parse_bins("5-6,7,8-12,13+"), n_perm=100, seed=0)
    var_rows = {row.stratum: row for row in rows if row.indicator == "sig_var"}
    # 6-turn conversations cannot produce 3 valid variance points at W=5, and
    # 7-turn derailing ones cannot either (their window ends a turn earlier)
    assert not var_rows["5-6"].analyzed
    assert not var_rows["7"].analyzed
    assert var_rows["7"].n_civil > 0  # the civil side does reach 3 points
    assert var_rows["8-12"].analyzed
    assert var_rows["13+"].analyzed
    # union of strata reproduces the unstratified tau sets
    full = csd_report(records, min_turns=0, n_perm=100, seed=0, apply_bh=False)
    total_n = sum(row.n_derail + row.n_civil for row in rows if row.indicator == "sig_var")
    assert total_n == {r.indicator: r for r in full.rows}["sig_var"].n
