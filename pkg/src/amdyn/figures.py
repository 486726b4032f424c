"""Figure rendering for the report commands.

Each report command saves one PNG next to its delimited output.  Rendering is
headless (Agg) and side-effect free apart from the written file.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 150


def _finish(fig, path: Path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def bifurcation_figure(rows: list[dict], path: Path) -> None:
    """Closed-form threshold interval per gain, with sweep-detected jumps."""
    fig, ax = plt.subplots(figsize=(6, 4))
    gains = [row["gain"] for row in rows]
    for row in rows:
        gain = row["gain"]
        if row["kappa_minus"] is None:
            ax.plot([gain], [row.get("unique_marker", 1.0)], "kx", ms=8)
            continue
        ax.plot([gain, gain], [row["kappa_minus"], row["kappa_plus"]], "b-", lw=2)
        ax.plot([gain], [row["kappa_minus"]], "bv", ms=6)
        ax.plot([gain], [row["kappa_plus"]], "b^", ms=6)
        if row.get("sweep_up") is not None:
            ax.plot([gain], [row["sweep_up"]], "r+", ms=12, mew=2)
        if row.get("sweep_down") is not None:
            ax.plot([gain], [row["sweep_down"]], "r+", ms=12, mew=2)
    ax.set_xlabel(r"gain $\beta\alpha$")
    ax.set_ylabel(r"load $\kappa$")
    ax.set_title("Bistable interval vs gain (x: unique regime, +: sweep jumps)")
    ax.set_xticks(gains)
    _finish(fig, path)


def hysteresis_figure(result, path: Path) -> None:
    """The classic loop: settled repair level vs load, both sweep directions."""
    fig, ax = plt.subplots(figsize=(6, 4))
    styles = {"ascending": ("tab:red", "load increasing"), "descending": ("tab:blue", "load decreasing")}
    for direction, points in result.branches.items():
        color, label = styles.get(direction, ("k", direction))
        kappas = [p.kappa for p in points]
        finals = [p.q_final for p in points]
        ax.plot(kappas, finals, ".", ms=2, color=color, label=label)
    for direction, jumps in result.jumps.items():
        color, _ = styles.get(direction, ("k", direction))
        for kappa in jumps:
            ax.axvline(kappa, color=color, ls=":", lw=1)
    ax.set_xlabel(r"load $\kappa$")
    ax.set_ylabel("settled repair probability")
    ax.set_title(rf"Hysteresis sweep ($\alpha$={result.alpha:g}, $\beta$={result.beta:g})")
    ax.legend(loc="best", fontsize=8)
    _finish(fig, path)


def csd_figure(report, path: Path) -> None:
    """Per-indicator trend-statistic distributions, derail vs civil."""
    indicators = [row.indicator for row in report.rows]
    fig, ax = plt.subplots(figsize=(max(6, 1.6 * len(indicators)), 4))
    data = []
    positions = []
    colors = []
    for i, indicator in enumerate(indicators):
        taus = report.taus.get(indicator, {})
        derail = [t for cid, t in taus.items() if report.labels.get(cid) == "derail"]
        civil = [t for cid, t in taus.items() if report.labels.get(cid) == "civil"]
        data += [derail or [np.nan], civil or [np.nan]]
        positions += [3 * i, 3 * i + 1]
        colors += ["tab:red", "tab:blue"]
    boxes = ax.boxplot(data, positions=positions, widths=0.8, patch_artist=True, showfliers=False)
    for patch, color in zip(boxes["boxes"], colors):
        patch.set_facecolor(color)
        patch.set_alpha(0.5)
    ax.set_xticks([3 * i + 0.5 for i in range(len(indicators))])
    ax.set_xticklabels(indicators, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel(r"pre-breakdown Kendall $\tau$")
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_title("Trend distributions (red: derail, blue: civil)")
    _finish(fig, path)


def leadtime_figure(rows, path: Path) -> None:
    """p-value vs window shift per indicator."""
    fig, ax = plt.subplots(figsize=(6, 4))
    by_indicator: dict[str, list] = {}
    for row in rows:
        by_indicator.setdefault(row.indicator, []).append(row)
    for indicator, group in sorted(by_indicator.items()):
        group = sorted(group, key=lambda r: r.k)
        ax.plot([r.k for r in group], [r.p for r in group], "o-", label=indicator)
    ax.axhline(0.05, color="k", ls="--", lw=0.8)
    ax.set_yscale("log")
    ax.set_xlabel("window shift k (turns before breakdown)")
    ax.set_ylabel("permutation p")
    ax.set_title("Lead-time scan")
    ax.legend(fontsize=8)
    _finish(fig, path)


def sensitivity_figure(rows, path: Path) -> None:
    """p-value vs rolling-window size per indicator."""
    fig, ax = plt.subplots(figsize=(6, 4))
    by_indicator: dict[str, list] = {}
    for row in rows:
        by_indicator.setdefault(row.indicator, []).append(row)
    for indicator, group in sorted(by_indicator.items()):
        group = sorted(group, key=lambda r: r.window)
        ws = [r.window for r in group if not np.isnan(r.p)]
        ps = [r.p for r in group if not np.isnan(r.p)]
        if ws:
            ax.plot(ws, ps, "o-", label=indicator)
    ax.axhline(0.05, color="k", ls="--", lw=0.8)
    ax.set_yscale("log")
    ax.set_xlabel("rolling window W")
    ax.set_ylabel("permutation p")
    ax.set_title("Window-size sensitivity")
    ax.legend(fontsize=8)
    _finish(fig, path)


def stratify_figure(rows, path: Path) -> None:
    """Group trend difference per length stratum."""
    by_indicator: dict[str, list] = {}
    for row in rows:
        by_indicator.setdefault(row.indicator, []).append(row)
    fig, ax = plt.subplots(figsize=(6, 4))
    n_ind = max(1, len(by_indicator))
    width = 0.8 / n_ind
    strata = []
    for offset, (indicator, group) in enumerate(sorted(by_indicator.items())):
        strata = [r.stratum for r in group]
        xs = np.arange(len(group)) + offset * width
        heights = [0.0 if np.isnan(r.delta_tau) else r.delta_tau for r in group]
        ax.bar(xs, heights, width=width, label=indicator)
    ax.set_xticks(np.arange(len(strata)) + 0.4 - width / 2)
    ax.set_xticklabels(strata)
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_xlabel("turn-count stratum")
    ax.set_ylabel(r"$\tau_{derail} - \tau_{civil}$")
    ax.set_title("Length-stratified trend difference")
    ax.legend(fontsize=8)
    _finish(fig, path)
