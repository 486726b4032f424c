"""Corpus file format, run configuration, and synthetic corpus generation.

A corpus is line-delimited JSON, one conversation per line:

    {"id": str, "label": "derail"|"civil", "breakdown_index": int|null,
     "turns": [{"speaker": str, "text": str, "dialog_act": str|null,
                "emotion_dist": [k floats], "channels": {name: float}|null}]}

The emotion-distribution length must be constant across the file, and
derailing conversations must carry a breakdown index.  Parsing failures are
reported with their line number; valid files round-trip losslessly.

The synthetic generator builds a validation corpus in which derailing
conversations linearly ramp their per-turn emotion-noise scale over the final
turns, while civil conversations stay stationary.  Conversation streams are
derived from (seed, pair index), and the derail/civil conversation at the
same index share their draws, so setting the ramp factor to 1 makes the two
groups identical turn for turn.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from amdyn.affect import AffectDistribution
from amdyn.estimation import Conversation, Turn

LABELS = ("derail", "civil")


class CorpusFormatError(ValueError):
    """A corpus line violates the record schema."""


def conversation_to_record(conv: Conversation) -> dict:
    return {
        "id": conv.id,
        "label": conv.label,
        "breakdown_index": conv.breakdown_index,
        "turns": [
            {
                "speaker": turn.speaker,
                "text": turn.text,
                "dialog_act": turn.dialog_act,
                "emotion_dist": turn.emotion_dist.probs.tolist(),
                "channels": dict(turn.channels) if turn.channels is not None else None,
            }
            for turn in conv.turns
        ],
    }


def _fail(line: int | None, message: str) -> CorpusFormatError:
    prefix = f"line {line}: " if line is not None else ""
    return CorpusFormatError(prefix + message)


def conversation_from_record(record: dict, line: int | None = None) -> Conversation:
    if not isinstance(record, dict):
        raise _fail(line, "record must be a JSON object")
    for key in ("id", "label", "turns"):
        if key not in record:
            raise _fail(line, f"missing field {key!r}")
    if record["label"] not in LABELS:
        raise _fail(line, f"label must be one of {LABELS}, got {record['label']!r}")
    raw_turns = record["turns"]
    if not isinstance(raw_turns, list) or not raw_turns:
        raise _fail(line, "turns must be a non-empty list")
    turns = []
    for pos, raw in enumerate(raw_turns):
        if not isinstance(raw, dict):
            raise _fail(line, f"turn {pos} must be an object")
        for key in ("speaker", "text", "emotion_dist"):
            if key not in raw:
                raise _fail(line, f"turn {pos} missing field {key!r}")
        channels = raw.get("channels")
        if channels is not None and not isinstance(channels, dict):
            raise _fail(line, f"turn {pos}: channels must be an object or null")
        try:
            dist = AffectDistribution(np.asarray(raw["emotion_dist"], dtype=float))
        except ValueError as exc:
            raise _fail(line, f"turn {pos}: bad emotion distribution ({exc})") from exc
        turns.append(
            Turn(
                speaker=str(raw["speaker"]),
                index=pos,
                text=str(raw["text"]),
                emotion_dist=dist,
                dialog_act=raw.get("dialog_act"),
                channels={str(k): float(v) for k, v in channels.items()} if channels else None,
            )
        )
    breakdown = record.get("breakdown_index")
    try:
        return Conversation(
            id=str(record["id"]),
            turns=tuple(turns),
            label=record["label"],
            breakdown_index=int(breakdown) if breakdown is not None else None,
        )
    except ValueError as exc:
        raise _fail(line, str(exc)) from exc


def read_corpus(path: str | Path) -> list[Conversation]:
    """Parse a corpus file, enforcing file-wide invariants."""
    conversations: list[Conversation] = []
    n_states: int | None = None
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise _fail(line_no, f"invalid JSON ({exc.msg})") from exc
            conv = conversation_from_record(record, line=line_no)
            k = conv.turns[0].emotion_dist.k
            if n_states is None:
                n_states = k
            elif k != n_states:
                raise _fail(
                    line_no, f"emotion distribution length {k} differs from earlier {n_states}"
                )
            if len(set(turn.speaker for turn in conv.turns)) < 2:
                raise _fail(line_no, f"conversation {conv.id!r} has fewer than two speakers")
            conversations.append(conv)
    return conversations


def write_corpus(conversations: list[Conversation], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for conv in conversations:
            handle.write(json.dumps(conversation_to_record(conv), sort_keys=True))
            handle.write("\n")


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------


def _parse_channels(value: str):
    value = value.strip()
    if value in ("", "auto"):
        return None
    return tuple(name.strip() for name in value.split(",") if name.strip())


@dataclass
class RunConfig:
    """Analysis settings shared by the corpus commands."""

    window: int = 5
    trend_points: int = 5
    k_topics: int = 5
    min_anchor_count: int = 3
    anchor_mode: str = "both"  # "both" | "total"
    permutations: int = 10_000
    seed: int = 0
    min_turns: int = 10
    stopwords: str | None = None
    channels: tuple[str, ...] | None = None  # None: analyze every channel found

    def __post_init__(self) -> None:
        if self.anchor_mode not in ("both", "total"):
            raise ValueError(f"anchor_mode must be 'both' or 'total', got {self.anchor_mode!r}")
        for name in ("window", "trend_points", "k_topics", "min_anchor_count", "permutations"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.min_turns < 0:
            raise ValueError("min_turns must be non-negative")


_CONFIG_PARSERS = {
    "window": int,
    "trend_points": int,
    "k_topics": int,
    "min_anchor_count": int,
    "anchor_mode": str,
    "permutations": int,
    "seed": int,
    "min_turns": int,
    "stopwords": str,
    "channels": _parse_channels,
}


def load_config(path: str | Path) -> RunConfig:
    """Read a flat key-value config file (``key = value``, ``#`` comments)."""
    values: dict = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            stripped = raw.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ValueError(f"{path}:{line_no}: expected 'key = value', got {stripped!r}")
            key, _, value = stripped.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in _CONFIG_PARSERS:
                raise ValueError(f"{path}:{line_no}: unknown configuration key {key!r}")
            try:
                values[key] = _CONFIG_PARSERS[key](value)
            except ValueError as exc:
                raise ValueError(f"{path}:{line_no}: bad value for {key!r}: {exc}") from exc
    return RunConfig(**values)


def override_config(config: RunConfig, **overrides) -> RunConfig:
    supplied = {k: v for k, v in overrides.items() if v is not None}
    return replace(config, **supplied)


def conversation_seed(global_seed: int, conv_id: str) -> int:
    """Per-conversation stream seed derived from (global seed, conversation id)."""
    digest = zlib.crc32(conv_id.encode("utf-8"))
    return int(np.random.SeedSequence([global_seed, digest]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Synthetic validation corpus
# ---------------------------------------------------------------------------

#: Frozen parameters of the acceptance fixture: a corpus this size, generated
#: with this seed, drives every end-to-end check.
RAMP_CORPUS_PARAMS = {
    "n_derail": 200,
    "n_civil": 200,
    "turns": 20,
    "seed": 20260809,
}

#: Number of trailing turns over which derailing conversations ramp.
RAMP_TURNS = 8

#: Default multiplier the per-turn noise scale reaches at the final turn.
RAMP_FACTOR = 3.0

_N_STATES = 28
_BASE_WEIGHTS = 1.0 + np.arange(_N_STATES, dtype=float)[::-1]
_NOISE_SCALE = 0.35
_SPEAKERS = ("alice", "bob")
#: Dialog acts pair up consecutive turns into shared context cells over this
#: many trailing turns; earlier turns get one-off acts, so their divergence
#: values are absent (as they typically are early in real conversations).
_PAIRED_TAIL = 12
#: Pair-level filler words are stopwords on purpose: they vary the topic
#: clustering and the lexical-divergence channel without becoming anchors.
_FILLERS = ("before", "after", "above", "below", "between")
_TEXT_STEM = "the project status"


def _noise_scales(n_turns: int, label: str, ramp_factor: float) -> np.ndarray:
    scales = np.ones(n_turns)
    if label == "derail" and ramp_factor != 1.0:
        length = min(RAMP_TURNS, n_turns)
        if length == 1:
            scales[-1] = ramp_factor
        else:
            scales[-length:] = 1.0 + (ramp_factor - 1.0) * np.arange(length) / (length - 1)
    return scales


def _synthetic_conversation(
    conv_id: str,
    label: str,
    n_turns: int,
    stream: np.random.SeedSequence,
    ramp_factor: float,
) -> Conversation:
    rng = np.random.default_rng(stream)
    jitter = rng.standard_normal((n_turns, _N_STATES))
    fillers = rng.integers(0, len(_FILLERS), size=n_turns // 2 + 1)
    scales = _noise_scales(n_turns, label, ramp_factor)
    log_base = np.log(_BASE_WEIGHTS / _BASE_WEIGHTS.sum())
    logits = log_base[None, :] + _NOISE_SCALE * scales[:, None] * jitter
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    paired_from = max(0, n_turns - _PAIRED_TAIL)
    turns = []
    for t in range(n_turns):
        # within the paired tail, consecutive turn pairs (2j+1, 2j+2) share a
        # filler, a preceding dialog act, and therefore a context cell with
        # one turn per speaker; earlier acts are unique per turn
        filler = _FILLERS[int(fillers[(t + 1) // 2])]
        act = f"seg{t // 2}" if t >= paired_from else f"pre{t}"
        turns.append(
            Turn(
                speaker=_SPEAKERS[t % 2],
                index=t,
                text=f"{_TEXT_STEM} {filler}",
                dialog_act=act,
                emotion_dist=AffectDistribution(probs[t]),
            )
        )
    return Conversation(
        id=conv_id,
        turns=tuple(turns),
        label=label,
        breakdown_index=n_turns - 1 if label == "derail" else None,
    )


def generate_synthetic_corpus(
    n_derail: int,
    n_civil: int,
    turns: int,
    seed: int,
    ramp_factor: float = RAMP_FACTOR,
) -> list[Conversation]:
    """Paired derail/civil corpus with a noise-scale ramp before breakdown.

    The derail and civil conversation at the same index share one random
    stream, so with ``ramp_factor=1`` the groups are identical apart from
    their labels (the null fixture); with the default factor the derailing
    group's final turns carry up to three times the emotion-noise scale,
    which the divergence series picks up as rising variance.
    """
    if turns < 2:
        raise ValueError("conversations need at least 2 turns")
    if n_derail < 0 or n_civil < 0:
        raise ValueError("conversation counts must be non-negative")
    conversations: list[Conversation] = []
    for index in range(n_derail):
        stream = np.random.SeedSequence([seed, index])
        conversations.append(
            _synthetic_conversation(f"derail_{index:04d}", "derail", turns, stream, ramp_factor)
        )
    for index in range(n_civil):
        stream = np.random.SeedSequence([seed, index])
        conversations.append(
            _synthetic_conversation(f"civil_{index:04d}", "civil", turns, stream, ramp_factor)
        )
    return conversations
