"""Command-line front end.

Subcommands cover the synthetic validation experiments (bifurcation table,
hysteresis sweep, confound and estimator demos), the corpus statistics
pipeline (csd, leadtime, sensitivity, stratify), and corpus generation.
Tables are written as CSV under --out-dir with fixed filenames, nested
per-conversation detail as JSON, and each report also renders a PNG figure
alongside its table (disable with --no-figures).  Every command is
deterministic given its flags and seed; reruns produce byte-identical
delimited output.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from amdyn import figures
from amdyn.affect import (
    AffectDistribution,
    MeaningTable,
    ReferenceDistribution,
    conditional_amd,
    context_divergence,
    decomposition_check,
    marginal_amd,
    required_samples,
)
from amdyn.corpus import (
    RAMP_CORPUS_PARAMS,
    RAMP_FACTOR,
    CorpusFormatError,
    RunConfig,
    conversation_seed,
    generate_synthetic_corpus,
    load_config,
    override_config,
    read_corpus,
    write_corpus,
)
from amdyn.dynamics import bifurcation_thresholds, hysteresis_sweep
from amdyn.estimation import (
    ESTIMATOR_CONDITIONS,
    analyze_conversation,
    lexical_divergence,
    load_stopwords,
    sample_synthetic_speakers,
)
from amdyn.ews import (
    ConversationRecord,
    csd_report,
    lead_time_scan,
    length_stratify,
    parse_bins,
    window_sensitivity,
)

_DEFAULT_PAIRS = ((2.0, 2.0), (2.0, 3.0), (2.0, 4.0), (2.0, 5.0))


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(value)
    return str(value)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(value) for value in row])


def _jsonify(value):
    if isinstance(value, float):
        return None if math.isnan(value) else value
    if isinstance(value, np.floating):
        return _jsonify(float(value))
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.ndarray):
        return [_jsonify(v) for v in value.tolist()]
    if isinstance(value, dict):
        return {str(k): _jsonify(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonify(v) for v in value]
    return value


def _write_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(_jsonify(payload), handle, indent=2, sort_keys=True)
        handle.write("\n")


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Dynamics commands
# ---------------------------------------------------------------------------


def _parse_pairs(spec: str) -> tuple[tuple[float, float], ...]:
    pairs = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        alpha, _, beta = part.partition(":")
        pairs.append((float(alpha), float(beta)))
    if not pairs:
        raise ValueError(f"no (alpha, beta) pairs in {spec!r}")
    return tuple(pairs)


def cmd_bifurcation_table(args) -> int:
    out = _out_dir(args)
    pairs = _parse_pairs(args.pairs) if args.pairs else _DEFAULT_PAIRS
    rows = []
    figure_rows = []
    for alpha, beta in pairs:
        thresholds = bifurcation_thresholds(alpha, beta)
        sweep_up = sweep_down = None
        if not args.no_sweep:
            sweep = hysteresis_sweep(
                alpha, beta, args.kappa_min, args.kappa_max, args.step, args.iterations
            )
            sweep_up = sweep.jumps["ascending"][0] if sweep.jumps["ascending"] else None
            sweep_down = sweep.jumps["descending"][0] if sweep.jumps["descending"] else None
        if thresholds is None:
            rows.append([alpha, beta, alpha * beta, "unique", "unique", sweep_down, sweep_up])
            figure_rows.append(
                {"gain": alpha * beta, "kappa_minus": None, "kappa_plus": None}
            )
        else:
            rows.append(
                [
                    alpha,
                    beta,
                    alpha * beta,
                    thresholds.kappa_minus,
                    thresholds.kappa_plus,
                    sweep_down,
                    sweep_up,
                ]
            )
            figure_rows.append(
                {
                    "gain": alpha * beta,
                    "kappa_minus": thresholds.kappa_minus,
                    "kappa_plus": thresholds.kappa_plus,
                    "sweep_up": sweep_up,
                    "sweep_down": sweep_down,
                }
            )
    path = out / "bifurcation.csv"
    _write_csv(
        path,
        ["alpha", "beta", "gain", "kappa_minus", "kappa_plus", "sweep_jump_down", "sweep_jump_up"],
        rows,
    )
    print(f"wrote {path}")
    if not args.no_figures:
        figures.bifurcation_figure(figure_rows, out / "bifurcation.png")
        print(f"wrote {out / 'bifurcation.png'}")
    return 0


def cmd_hysteresis(args) -> int:
    out = _out_dir(args)
    result = hysteresis_sweep(
        args.alpha, args.beta, args.kappa_min, args.kappa_max, args.step, args.iterations
    )
    rows = []
    for direction in ("ascending", "descending"):
        for point in result.branches[direction]:
            rows.append([point.kappa, direction, point.q_final, int(point.jump)])
    path = out / "hysteresis.csv"
    _write_csv(path, ["kappa", "direction", "q_final", "jump_flag"], rows)
    print(f"wrote {path}")
    for direction, jumps in result.jumps.items():
        label = ", ".join(f"{j:.3f}" for j in jumps) if jumps else "none"
        print(f"{direction} jumps: {label}")
    if not args.no_figures:
        figures.hysteresis_figure(result, out / "hysteresis.png")
        print(f"wrote {out / 'hysteresis.png'}")
    return 0


# ---------------------------------------------------------------------------
# Demo commands
# ---------------------------------------------------------------------------


def _confound_table() -> MeaningTable:
    shared = {
        "A": AffectDistribution(np.array([0.9, 0.1])),
        "B": AffectDistribution(np.array([0.1, 0.9])),
    }
    return MeaningTable(
        conditionals={1: {"x": dict(shared)}, 2: {"x": dict(shared)}},
        usage={1: {"x": {"A": 0.9, "B": 0.1}}, 2: {"x": {"A": 0.1, "B": 0.9}}},
    )


def cmd_confound_demo(args) -> int:
    table = _confound_table()
    reference = ReferenceDistribution({"x": {"A": 0.5, "B": 0.5}})
    check = decomposition_check(table, "x")
    marginal = marginal_amd(table, "x")
    conditional = conditional_amd(table, "x", reference)
    report = {
        "marginal_divergence": marginal,
        "conditional_divergence": conditional,
        "context_divergence": context_divergence(table, "x"),
        "decomposition": {
            "lhs": check.lhs,
            "ctx_term": check.ctx_term,
            "cond_term": check.cond_term,
            "slack": check.slack,
        },
        "confound_detected": bool(marginal - conditional > 0.1),
    }
    print(json.dumps(_jsonify(report), indent=2, sort_keys=True))
    if args.out_dir:
        out = _out_dir(args)
        _write_json(out / "confound_demo.json", report)
    return 0


def cmd_estimator_demo(args) -> int:
    population = ESTIMATOR_CONDITIONS[args.condition]
    conv = sample_synthetic_speakers(args.condition, args.n, args.seed)
    analysis = analyze_conversation(
        conv, load_stopwords(), compute_series=False, seed=args.seed
    )
    anchor = analysis.anchors.anchors[0]
    estimated_marginal = marginal_amd(analysis.table, anchor)
    estimated_conditional = analysis.aggregate
    needed = required_samples(2, 0.1, 0.05)
    report = {
        "condition": args.condition,
        "n_per_speaker": args.n,
        "seed": args.seed,
        "anchor": anchor,
        "estimated": {
            "marginal_divergence": estimated_marginal,
            "conditional_divergence": estimated_conditional,
        },
        "population": {
            "marginal_divergence": population.marginal_divergence,
            "conditional_divergence": population.conditional_divergence,
        },
        "small_sample_warning": args.n < needed,
        "recommended_samples": needed,
    }
    print(json.dumps(_jsonify(report), indent=2, sort_keys=True))
    if report["small_sample_warning"]:
        print(
            f"warning: {args.n} samples per speaker is below the {needed} needed "
            "for a 0.1-accurate estimate at 95% confidence",
            file=sys.stderr,
        )
    if args.out_dir:
        out = _out_dir(args)
        _write_json(out / "estimator_demo.json", report)
    return 0


# ---------------------------------------------------------------------------
# Corpus statistics commands
# ---------------------------------------------------------------------------


def _resolve_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    return override_config(
        config,
        window=getattr(args, "window", None),
        permutations=getattr(args, "permutations", None),
        seed=getattr(args, "seed", None),
    )


def _build_records(conversations, config: RunConfig):
    stopwords = load_stopwords(config.stopwords)
    records = []
    details = []
    for conv in sorted(conversations, key=lambda c: c.id):
        analysis = analyze_conversation(
            conv,
            stopwords,
            min_anchor_count=config.min_anchor_count,
            require_both_speakers=config.anchor_mode == "both",
            k_topics=config.k_topics,
            seed=conversation_seed(config.seed, conv.id),
        )
        channels: dict[str, np.ndarray] = {
            "amd": analysis.amd_series,
            "lexdiv": lexical_divergence(conv),
        }
        user_names = sorted({name for turn in conv.turns for name in (turn.channels or {})})
        for name in user_names:
            channels[name] = np.array(
                [
                    (turn.channels or {}).get(name, np.nan)
                    for turn in conv.turns
                ],
                dtype=float,
            )
        records.append(
            ConversationRecord(
                conv_id=conv.id,
                label=conv.label,
                breakdown_index=conv.breakdown_index,
                n_turns=conv.n_turns,
                channels=channels,
            )
        )
        details.append(
            {
                "id": conv.id,
                "label": conv.label,
                "breakdown_index": conv.breakdown_index,
                "n_turns": conv.n_turns,
                "anchors": list(analysis.anchors.anchors),
                "has_valid_anchor": analysis.has_valid_anchor,
                "aggregate_amd": analysis.aggregate,
                "amd_series": analysis.amd_series,
                "channels": sorted(channels),
            }
        )
    return records, details


def _report_kwargs(config: RunConfig) -> dict:
    return {
        "window": config.window,
        "window_points": config.trend_points,
        "n_perm": config.permutations,
        "seed": config.seed,
        "channels": config.channels,
    }


def cmd_csd(args) -> int:
    config = _resolve_config(args)
    out = _out_dir(args)
    conversations = read_corpus(args.corpus)
    records, details = _build_records(conversations, config)
    report = csd_report(records, min_turns=config.min_turns, **_report_kwargs(config))
    rows = [
        [
            row.indicator,
            row.tau_derail,
            row.tau_civil,
            row.p,
            row.q,
            row.d,
            row.n,
        ]
        for row in report.rows
    ]
    path = out / "csd_report.csv"
    _write_csv(path, ["indicator", "tau_derail", "tau_civil", "p", "q_bh", "d", "N"], rows)
    print(f"wrote {path}")
    for detail in details:
        detail["taus"] = {
            indicator: report.taus.get(indicator, {}).get(detail["id"])
            for indicator in report.taus
        }
    per_conv_path = out / "per_conversation.json"
    _write_json(per_conv_path, details)
    print(f"wrote {per_conv_path}")
    if not args.no_figures:
        figures.csd_figure(report, out / "csd_report.png")
        print(f"wrote {out / 'csd_report.png'}")
    return 0


def cmd_leadtime(args) -> int:
    config = _resolve_config(args)
    out = _out_dir(args)
    conversations = read_corpus(args.corpus)
    records, _ = _build_records(conversations, config)
    ks = tuple(range(args.k_shift + 1))
    rows = lead_time_scan(records, ks, min_turns=config.min_turns, **_report_kwargs(config))
    path = out / "leadtime.csv"
    _write_csv(
        path,
        ["indicator", "k", "tau_derail", "tau_civil", "p", "N"],
        [[r.indicator, r.k, r.tau_derail, r.tau_civil, r.p, r.n] for r in rows],
    )
    print(f"wrote {path}")
    if not args.no_figures:
        figures.leadtime_figure(rows, out / "leadtime.png")
        print(f"wrote {out / 'leadtime.png'}")
    return 0


def cmd_sensitivity(args) -> int:
    config = _resolve_config(args)
    out = _out_dir(args)
    conversations = read_corpus(args.corpus)
    records, _ = _build_records(conversations, config)
    windows = tuple(int(w) for w in args.windows.split(","))
    kwargs = _report_kwargs(config)
    kwargs.pop("window")
    rows = window_sensitivity(records, windows, min_turns=config.min_turns, **kwargs)
    path = out / "sensitivity.csv"
    _write_csv(
        path,
        ["indicator", "window", "p", "d", "N", "n_excluded"],
        [[r.indicator, r.window, r.p, r.d, r.n, r.n_excluded] for r in rows],
    )
    print(f"wrote {path}")
    if not args.no_figures:
        figures.sensitivity_figure(rows, out / "sensitivity.png")
        print(f"wrote {out / 'sensitivity.png'}")
    return 0


def cmd_stratify(args) -> int:
    config = _resolve_config(args)
    out = _out_dir(args)
    conversations = read_corpus(args.corpus)
    records, _ = _build_records(conversations, config)
    bins = parse_bins(args.bins)
    rows = length_stratify(records, bins, **_report_kwargs(config))
    path = out / "stratify.csv"
    _write_csv(
        path,
        [
            "stratum",
            "indicator",
            "n_derail",
            "n_civil",
            "tau_derail",
            "tau_civil",
            "delta_tau",
            "p",
            "analyzed",
        ],
        [
            [
                r.stratum,
                r.indicator,
                r.n_derail,
                r.n_civil,
                r.tau_derail,
                r.tau_civil,
                r.delta_tau,
                r.p,
                "yes" if r.analyzed else "not analyzed",
            ]
            for r in rows
        ],
    )
    print(f"wrote {path}")
    if not args.no_figures:
        figures.stratify_figure(rows, out / "stratify.png")
        print(f"wrote {out / 'stratify.png'}")
    return 0


def cmd_generate_corpus(args) -> int:
    conversations = generate_synthetic_corpus(
        args.n_derail, args.n_civil, args.turns, args.seed, ramp_factor=args.ramp_factor
    )
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_corpus(conversations, out_path)
    print(f"wrote {out_path} ({len(conversations)} conversations)")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="amdyn",
        description="Affective-meaning divergence, repair tipping dynamics, and "
        "early-warning statistics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, corpus=False):
        p.add_argument("--out-dir", default="out", help="output directory (default: out)")
        p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
        if corpus:
            p.add_argument("--corpus", required=True, help="corpus file (JSON lines)")
            p.add_argument("--config", default=None, help="flat key=value config file")
            p.add_argument("--seed", type=int, default=None, help="override config seed")
            p.add_argument("--window", type=int, default=None, help="rolling window size")
            p.add_argument(
                "--permutations", type=int, default=None, help="permutation count"
            )

    p = sub.add_parser("bifurcation-table", help="closed-form thresholds with sweep check")
    p.add_argument("--pairs", default=None, help="alpha:beta pairs, e.g. '2:2,2:3,2:4,2:5'")
    p.add_argument("--kappa-min", type=float, default=0.0)
    p.add_argument("--kappa-max", type=float, default=2.0)
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--iterations", type=int, default=5000, help="map steps per load value")
    p.add_argument("--no-sweep", action="store_true", help="closed-form columns only")
    add_common(p)
    p.set_defaults(func=cmd_bifurcation_table)

    p = sub.add_parser("hysteresis", help="two-branch quasistatic load sweep")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--kappa-min", type=float, default=0.0)
    p.add_argument("--kappa-max", type=float, default=2.0)
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--iterations", type=int, default=5000)
    add_common(p)
    p.set_defaults(func=cmd_hysteresis)

    p = sub.add_parser("confound-demo", help="usage confound: marginal vs conditional divergence")
    p.add_argument("--out-dir", default=None, help="also write confound_demo.json here")
    p.set_defaults(func=cmd_confound_demo)

    p = sub.add_parser("estimator-demo", help="synthetic two-speaker estimator check")
    p.add_argument("--condition", choices=sorted(ESTIMATOR_CONDITIONS), default="C1")
    p.add_argument("--n", type=int, default=1000, help="utterances per speaker")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=None, help="also write estimator_demo.json here")
    p.set_defaults(func=cmd_estimator_demo)

    p = sub.add_parser("csd", help="early-warning report over a corpus")
    add_common(p, corpus=True)
    p.set_defaults(func=cmd_csd)

    p = sub.add_parser("leadtime", help="shifted-window lead-time scan")
    add_common(p, corpus=True)
    p.add_argument("--k-shift", type=int, default=3, help="largest window shift")
    p.set_defaults(func=cmd_leadtime)

    p = sub.add_parser("sensitivity", help="window-size sensitivity analysis")
    add_common(p, corpus=True)
    p.add_argument("--windows", default="3,4,5,6,7", help="comma-separated window sizes")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("stratify", help="length-stratified group comparison")
    add_common(p, corpus=True)
    p.add_argument("--bins", default="5-6,7,8-9,10-12,13+", help="turn-count strata")
    p.set_defaults(func=cmd_stratify)

    p = sub.add_parser("generate-corpus", help="write a synthetic validation corpus")
    p.add_argument("--out", required=True, help="corpus file to write")
    p.add_argument("--n-derail", type=int, default=RAMP_CORPUS_PARAMS["n_derail"])
    p.add_argument("--n-civil", type=int, default=RAMP_CORPUS_PARAMS["n_civil"])
    p.add_argument("--turns", type=int, default=RAMP_CORPUS_PARAMS["turns"])
    p.add_argument("--seed", type=int, default=RAMP_CORPUS_PARAMS["seed"])
    p.add_argument("--ramp-factor", type=float, default=RAMP_FACTOR)
    p.set_defaults(func=cmd_generate_corpus)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CorpusFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
