"""Early-warning-signal statistics over per-turn indicator series.

Rolling variance and lag-1 autocorrelation, pre-breakdown Kendall tau trends,
permutation inference on the derail/civil group difference, Cohen's d,
Benjamini-Hochberg correction, and the derived analyses: lead-time scans,
window-size sensitivity with exclusion accounting, and length stratification.

Series use NaN for absent values.  A rolling window containing any absent
entry is itself absent (the window semantics stay exact rather than
shrinking).  All results are deterministic given the seed; permutation
streams are derived per report row, so re-running a sub-analysis reproduces
the full run's numbers bit for bit.
"""

from __future__ import annotations

import zlib
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats as sps

VARIANCE = "var"
AUTOCORR = "ac1"
STATISTICS = (VARIANCE, AUTOCORR)

#: Minimum non-absent rolling-stat values inside the trend window.
MIN_TREND_POINTS = 3


@dataclass(frozen=True)
class IndicatorSeries:
    """A named per-turn indicator for one conversation (NaN where absent)."""

    name: str
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class ConversationRecord:
    """Everything the statistics pipeline needs to know about one conversation."""

    conv_id: str
    label: str  # "derail" | "civil"
    breakdown_index: int | None
    n_turns: int
    channels: Mapping[str, np.ndarray]

    def __post_init__(self) -> None:
        if self.label == "derail" and self.breakdown_index is None:
            raise ValueError(f"{self.conv_id}: derail record without breakdown index")
        for name, values in self.channels.items():
            if len(values) != self.n_turns:
                raise ValueError(
                    f"{self.conv_id}: channel {name!r} has length {len(values)}, "
                    f"expected {self.n_turns}"
                )


# ---------------------------------------------------------------------------
# Rolling statistics
# ---------------------------------------------------------------------------


def rolling_variance(values: Sequence[float], window: int) -> np.ndarray:
    """Sample variance (ddof 1) over the trailing window; NaN unless all present."""
    if window < 2:
        raise ValueError("window must span at least 2 points")
    series = np.asarray(values, dtype=float)
    out = np.full(series.shape, np.nan)
    if len(series) < window:
        return out
    sw = np.lib.stride_tricks.sliding_window_view(series, window)
    with np.errstate(invalid="ignore"):
        variances = sw.var(axis=1, ddof=1)
    complete = ~np.isnan(sw).any(axis=1)
    out[window - 1 :] = np.where(complete, variances, np.nan)
    return out


def rolling_autocorr_lag1(values: Sequence[float], window: int) -> np.ndarray:
    """Lag-1 Pearson autocorrelation inside the trailing window.

    Correlates the window's first and last (window - 1) entries; absent when
    any entry is absent or either sub-window is constant.
    """
    if window < 3:
        raise ValueError("lag-1 autocorrelation needs a window of at least 3")
    series = np.asarray(values, dtype=float)
    out = np.full(series.shape, np.nan)
    if len(series) < window:
        return out
    sw = np.lib.stride_tricks.sliding_window_view(series, window)
    lead = sw[:, :-1]
    lag = sw[:, 1:]
    lead_c = lead - lead.mean(axis=1, keepdims=True)
    lag_c = lag - lag.mean(axis=1, keepdims=True)
    cov = (lead_c * lag_c).sum(axis=1)
    denom = np.sqrt((lead_c**2).sum(axis=1) * (lag_c**2).sum(axis=1))
    complete = ~np.isnan(sw).any(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.where(denom > 0, cov / denom, np.nan)
    out[window - 1 :] = np.where(complete, corr, np.nan)
    return out


_STAT_FUNCS = {VARIANCE: rolling_variance, AUTOCORR: rolling_autocorr_lag1}


# ---------------------------------------------------------------------------
# Trend detection
# ---------------------------------------------------------------------------


def kendall_tau_trend(
    stat_series: Sequence[float], end_index: int, window_points: int = 5
) -> float | None:
    """Tie-corrected Kendall tau of the trend window against time.

    The window is the ``window_points`` positions ending at ``end_index``
    (clipped at the series start).  Absent entries are dropped; fewer than
    three remaining points, or a constant window, excludes the conversation
    (returns None) rather than contributing a zero.
    """
    series = np.asarray(stat_series, dtype=float)
    if window_points < 2:
        raise ValueError("window_points must be at least 2")
    if end_index < 0 or end_index >= len(series):
        return None
    start = max(0, end_index - window_points + 1)
    window = series[start : end_index + 1]
    positions = np.arange(start, end_index + 1)
    present = ~np.isnan(window)
    if present.sum() < MIN_TREND_POINTS:
        return None
    tau = sps.kendalltau(positions[present], window[present]).statistic
    if np.isnan(tau):
        return None
    return float(tau)


def trend_tau(
    values: Sequence[float],
    *,
    label: str,
    breakdown_index: int | None,
    window: int,
    statistic: str,
    window_points: int = 5,
    k_shift: int = 0,
) -> float | None:
    """Pre-breakdown trend of a rolling statistic for one conversation.

    The trend window ends at the turn immediately before the breakdown for
    derailing conversations and at the final turn for civil ones, shifted
    ``k_shift`` turns earlier for lead-time analysis.
    """
    series = np.asarray(values, dtype=float)
    stat = _STAT_FUNCS[statistic](series, window)
    if label == "derail":
        if breakdown_index is None:
            return None
        end = breakdown_index - 1
    else:
        end = len(series) - 1
    end -= k_shift
    return kendall_tau_trend(stat, end, window_points)


# ---------------------------------------------------------------------------
# Group inference
# ---------------------------------------------------------------------------

_PERM_CHUNK = 2000


def permutation_test(
    taus_a: Sequence[float], taus_b: Sequence[float], n_perm: int = 10_000, seed: int | None = None
) -> float:
    """Two-sided permutation p-value for the difference of group means.

    Labels are shuffled ``n_perm`` times; p = (1 + #{|perm diff| >= |observed|})
    / (n_perm + 1), so p is never exactly zero.  Deterministic given the seed.
    """
    a = np.asarray(taus_a, dtype=float)
    b = np.asarray(taus_b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("both groups must be non-empty")
    observed = abs(a.mean() - b.mean())
    # Canonical pool order and split size make the sampled p invariant to
    # swapping the two groups and to reordering within a group.
    pool = np.sort(np.concatenate([a, b]))
    n_small = min(a.size, b.size)
    rng = np.random.default_rng(seed)
    exceed = 0
    remaining = n_perm
    while remaining > 0:
        chunk = min(_PERM_CHUNK, remaining)
        order = rng.random((chunk, pool.size)).argsort(axis=1)
        permuted = pool[order]
        diffs = permuted[:, :n_small].mean(axis=1) - permuted[:, n_small:].mean(axis=1)
        exceed += int(np.count_nonzero(np.abs(diffs) >= observed - 1e-12))
        remaining -= chunk
    return (1 + exceed) / (n_perm + 1)


def cohens_d(a: Sequence[float], b: Sequence[float]) -> float:
    """(mean_a - mean_b) / pooled SD with (n - 1)-weighted variances."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        return float("nan")
    pooled_var = ((a.size - 1) * a.var(ddof=1) + (b.size - 1) * b.var(ddof=1)) / (
        a.size + b.size - 2
    )
    if pooled_var <= 0:
        return float("nan") if a.mean() == b.mean() else float("inf")
    return float((a.mean() - b.mean()) / np.sqrt(pooled_var))


def bh_correction(pvals: Sequence[float]) -> np.ndarray:
    """Benjamini-Hochberg adjusted q-values, in the input order."""
    p = np.asarray(pvals, dtype=float)
    m = p.size
    if m == 0:
        return p.copy()
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / (np.arange(m) + 1)
    q_sorted = np.minimum.accumulate(scaled[::-1])[::-1]
    q = np.empty(m)
    q[order] = np.clip(q_sorted, 0.0, 1.0)
    return q


# ---------------------------------------------------------------------------
# Report assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReportRow:
    indicator: str
    channel: str
    statistic: str
    tau_derail: float
    tau_civil: float
    n_derail: int
    n_civil: int
    p: float
    d: float
    q: float

    @property
    def n(self) -> int:
        return self.n_derail + self.n_civil


@dataclass(frozen=True)
class EwsReport:
    rows: tuple[ReportRow, ...]
    taus: Mapping[str, Mapping[str, float]]  # indicator -> conv_id -> tau
    labels: Mapping[str, str]  # conv_id -> label


def _row_seed(seed: int, channel: str, statistic: str) -> np.random.SeedSequence:
    digest = zlib.crc32(f"{channel}:{statistic}".encode("utf-8"))
    return np.random.SeedSequence([seed, digest])


def _channel_names(records: Iterable[ConversationRecord]) -> tuple[str, ...]:
    names: set[str] = set()
    for record in records:
        names.update(record.channels)
    return tuple(sorted(names))


def csd_report(
    records: Sequence[ConversationRecord],
    *,
    window: int = 5,
    window_points: int = 5,
    n_perm: int = 10_000,
    seed: int = 0,
    min_turns: int = 10,
    k_shift: int = 0,
    statistics: tuple[str, ...] = STATISTICS,
    channels: tuple[str, ...] | None = None,
    apply_bh: bool = True,
) -> EwsReport:
    """Group comparison of pre-breakdown trends, one row per channel x statistic.

    Conversations shorter than ``min_turns`` are excluded up front; per row, a
    conversation is excluded when its trend window has fewer than three valid
    points.  BH correction runs across every row of the report (the analysis
    family is the full run).
    """
    eligible = [r for r in records if r.n_turns >= min_turns]
    if channels is None:
        channels = _channel_names(eligible)
    rows: list[ReportRow] = []
    taus_out: dict[str, dict[str, float]] = {}
    labels = {r.conv_id: r.label for r in eligible}
    for channel in channels:
        for statistic in statistics:
            indicator = f"{channel}_{statistic}"
            per_conv: dict[str, float] = {}
            groups: dict[str, list[float]] = {"derail": [], "civil": []}
            for record in eligible:
                if channel not in record.channels:
                    continue
                tau = trend_tau(
                    record.channels[channel],
                    label=record.label,
                    breakdown_index=record.breakdown_index,
                    window=window,
                    statistic=statistic,
                    window_points=window_points,
                    k_shift=k_shift,
                )
                if tau is None:
                    continue
                per_conv[record.conv_id] = tau
                groups[record.label].append(tau)
            taus_out[indicator] = per_conv
            derail, civil = groups["derail"], groups["civil"]
            if derail and civil:
                p = permutation_test(
                    derail, civil, n_perm=n_perm, seed=_row_seed(seed, channel, statistic)
                )
                d = cohens_d(derail, civil)
            else:
                p, d = float("nan"), float("nan")
            rows.append(
                ReportRow(
                    indicator=indicator,
                    channel=channel,
                    statistic=statistic,
                    tau_derail=float(np.mean(derail)) if derail else float("nan"),
                    tau_civil=float(np.mean(civil)) if civil else float("nan"),
                    n_derail=len(derail),
                    n_civil=len(civil),
                    p=p,
                    d=d,
                    q=float("nan"),
                )
            )
    if apply_bh:
        rows = _attach_bh(rows)
    return EwsReport(rows=tuple(rows), taus=taus_out, labels=labels)


def _attach_bh(rows: list[ReportRow]) -> list[ReportRow]:
    testable = [i for i, row in enumerate(rows) if not np.isnan(row.p)]
    if not testable:
        return rows
    qvals = bh_correction([rows[i].p for i in testable])
    out = list(rows)
    for q, i in zip(qvals, testable):
        out[i] = replace(out[i], q=float(q))
    return out


# ---------------------------------------------------------------------------
# Derived analyses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LeadTimeRow:
    indicator: str
    k: int
    tau_derail: float
    tau_civil: float
    n: int
    p: float


def lead_time_scan(
    records: Sequence[ConversationRecord],
    k_values: Sequence[int] = (0, 1, 2, 3),
    **report_kwargs,
) -> list[LeadTimeRow]:
    """Re-run the trend comparison with the window ending k turns earlier.

    k = 0 reproduces the base report exactly (the permutation stream does not
    depend on k).  Conversations that run out of valid points after the shift
    fall under the usual three-point exclusion.
    """
    rows: list[LeadTimeRow] = []
    for k in k_values:
        if k < 0:
            raise ValueError("lead-time shifts must be non-negative")
        report = csd_report(records, k_shift=k, apply_bh=False, **report_kwargs)
        for row in report.rows:
            rows.append(
                LeadTimeRow(
                    indicator=row.indicator,
                    k=k,
                    tau_derail=row.tau_derail,
                    tau_civil=row.tau_civil,
                    n=row.n,
                    p=row.p,
                )
            )
    return rows


@dataclass(frozen=True)
class SensitivityRow:
    indicator: str
    window: int
    p: float
    d: float
    n: int
    n_excluded: int


def window_sensitivity(
    records: Sequence[ConversationRecord],
    windows: Sequence[int] = (3, 4, 5, 6, 7),
    *,
    min_turns: int = 10,
    **report_kwargs,
) -> list[SensitivityRow]:
    """Re-run the pipeline per window size with the length exclusion rule.

    For window W, conversations need at least W + 5 turns (and, as always, at
    least three valid trend points); the per-row exclusion count is reported
    against the number of conversations meeting the baseline length filter.
    """
    base = [r for r in records if r.n_turns >= min_turns]
    if report_kwargs.get("channels") is None:
        report_kwargs["channels"] = _channel_names(base)
    rows: list[SensitivityRow] = []
    for window in windows:
        eligible = [r for r in base if r.n_turns >= window + 5]
        report = csd_report(eligible, window=window, min_turns=0, apply_bh=False, **report_kwargs)
        for row in report.rows:
            rows.append(
                SensitivityRow(
                    indicator=row.indicator,
                    window=window,
                    p=row.p,
                    d=row.d,
                    n=row.n,
                    n_excluded=len(base) - row.n,
                )
            )
    return rows


@dataclass(frozen=True)
class StratumRow:
    stratum: str
    indicator: str
    n_derail: int
    n_civil: int
    tau_derail: float
    tau_civil: float
    delta_tau: float
    p: float
    analyzed: bool


def parse_bins(spec: str) -> list[tuple[int, int | None]]:
    """Parse strata like ``5-6,7,8-9,10-12,13+`` into (lo, hi) pairs."""
    bins: list[tuple[int, int | None]] = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if part.endswith("+"):
            bins.append((int(part[:-1]), None))
        elif "-" in part:
            lo, hi = part.split("-", 1)
            bins.append((int(lo), int(hi)))
        else:
            value = int(part)
            bins.append((value, value))
    if not bins:
        raise ValueError(f"no strata in {spec!r}")
    return bins


def _bin_label(lo: int, hi: int | None) -> str:
    if hi is None:
        return f"{lo}+"
    if hi == lo:
        return str(lo)
    return f"{lo}-{hi}"


def length_stratify(
    records: Sequence[ConversationRecord],
    bins: Sequence[tuple[int, int | None]],
    **report_kwargs,
) -> list[StratumRow]:
    """Group comparison within turn-count strata (no baseline length filter).

    Strata whose conversations cannot yield any valid trend for a group are
    reported as not analyzed rather than zero-filled.
    """
    if report_kwargs.get("channels") is None:
        report_kwargs["channels"] = _channel_names(records)
    rows: list[StratumRow] = []
    for lo, hi in bins:
        members = [
            r for r in records if r.n_turns >= lo and (hi is None or r.n_turns <= hi)
        ]
        label = _bin_label(lo, hi)
        report = csd_report(members, min_turns=0, apply_bh=False, **report_kwargs)
        for row in report.rows:
            analyzed = row.n_derail > 0 and row.n_civil > 0
            rows.append(
                StratumRow(
                    stratum=label,
                    indicator=row.indicator,
                    n_derail=row.n_derail,
                    n_civil=row.n_civil,
                    tau_derail=row.tau_derail,
                    tau_civil=row.tau_civil,
                    delta_tau=row.tau_derail - row.tau_civil if analyzed else float("nan"),
                    p=row.p,
                    analyzed=analyzed,
                )
            )
    return rows
