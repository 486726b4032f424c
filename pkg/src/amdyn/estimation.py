"""Meaning-table estimation from conversation data.

Turns a conversation (turns with per-utterance emotion distributions) into a
two-agent meaning table: anchor extraction over shared non-stopword tokens,
context cells built from the preceding dialog act crossed with a TF-IDF
topic cluster, speaker-conditioned meaning estimates (cell means of the
per-utterance distributions, pooling the whole conversation including future
turns), a pooled reference weighting over contexts, and the per-turn
inter-speaker divergence series consumed by the early-warning pipeline.

Per-conversation processing is independent and deterministic given its seed.
"""

from __future__ import annotations

import re
from collections import Counter
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from amdyn.affect import (
    AffectDistribution,
    Context,
    MeaningTable,
    ReferenceDistribution,
    conditional_amd,
    tv_distance,
)

#: Word-boundary runs of two or more ASCII letters, applied to lowercased text.
TOKEN_PATTERN = re.compile(r"\b[a-z]{2,}\b")

#: Context category recorded for the first turn and for missing dialog acts.
NO_ACT = "NONE"

LABELS = ("derail", "civil")


def tokenize(text: str) -> list[str]:
    """Lowercase the text and return every maximal two-plus-letter word."""
    return TOKEN_PATTERN.findall(text.lower())


def load_stopwords(path: str | Path | None = None) -> frozenset[str]:
    """Stopword set from a file (one word per line); default is the vendored list."""
    if path is None:
        text = resources.files("amdyn.data").joinpath("stopwords.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return frozenset(word for word in text.split() if word)


# ---------------------------------------------------------------------------
# Conversation data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Turn:
    speaker: str
    index: int
    text: str
    emotion_dist: AffectDistribution
    dialog_act: str | None = None
    channels: Mapping[str, float] | None = None
    tokens: tuple[str, ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not isinstance(self.emotion_dist, AffectDistribution):
            object.__setattr__(self, "emotion_dist", AffectDistribution(np.asarray(self.emotion_dist)))
        object.__setattr__(self, "tokens", tuple(tokenize(self.text)))

    @property
    def token_set(self) -> frozenset[str]:
        return frozenset(self.tokens)


@dataclass(frozen=True)
class Conversation:
    id: str
    turns: tuple[Turn, ...]
    label: str = "civil"
    breakdown_index: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "turns", tuple(self.turns))
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")
        if self.label == "derail":
            if self.breakdown_index is None:
                raise ValueError("derailing conversations need a breakdown index")
            if not 0 <= self.breakdown_index < len(self.turns):
                raise ValueError(
                    f"breakdown index {self.breakdown_index} outside 0..{len(self.turns) - 1}"
                )
        indices = [turn.index for turn in self.turns]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ValueError("turn indices must be strictly increasing")
        ks = {turn.emotion_dist.k for turn in self.turns}
        if len(ks) > 1:
            raise ValueError(f"turns disagree on emotion state count: {sorted(ks)}")

    @property
    def n_turns(self) -> int:
        return len(self.turns)

    def speakers(self) -> tuple[str, ...]:
        return tuple(sorted({turn.speaker for turn in self.turns}))


def principal_speakers(conv: Conversation) -> tuple[str, str]:
    """The two most frequent speakers; ties break lexicographically.

    The theory is dyadic, so turns by any additional participants are ignored
    by anchor and meaning estimation.
    """
    counts = Counter(turn.speaker for turn in conv.turns)
    if len(counts) < 2:
        raise ValueError(f"conversation {conv.id!r} has fewer than two speakers")
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    return ranked[0][0], ranked[1][0]


# ---------------------------------------------------------------------------
# Anchor extraction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AnchorInventory:
    """Retained anchors with per-principal-speaker counts."""

    counts: Mapping[str, Mapping[str, int]]
    speakers: tuple[str, str]

    @property
    def anchors(self) -> tuple[str, ...]:
        return tuple(sorted(self.counts))

    def __contains__(self, token: str) -> bool:
        return token in self.counts

    def __len__(self) -> int:
        return len(self.counts)


def extract_anchors(
    conv: Conversation,
    stopwords: frozenset[str],
    min_count: int = 3,
    require_both_speakers: bool = True,
) -> AnchorInventory:
    """Shared high-frequency lexical anchors for the two principal speakers.

    A token survives if it is not a stopword and occurs at least ``min_count``
    times in total across the two principal speakers.  By default it must
    additionally be used at least once by each of them, since a
    between-speaker divergence is undefined otherwise; set
    ``require_both_speakers=False`` for the pure-total rule.
    """
    speakers = principal_speakers(conv)
    per_speaker: dict[str, Counter] = {s: Counter() for s in speakers}
    for turn in conv.turns:
        if turn.speaker in per_speaker:
            per_speaker[turn.speaker].update(turn.tokens)
    counts: dict[str, dict[str, int]] = {}
    tokens = set(per_speaker[speakers[0]]) | set(per_speaker[speakers[1]])
    for token in tokens:
        if token in stopwords:
            continue
        c1 = per_speaker[speakers[0]][token]
        c2 = per_speaker[speakers[1]][token]
        if c1 + c2 < min_count:
            continue
        if require_both_speakers and (c1 == 0 or c2 == 0):
            continue
        counts[token] = {speakers[0]: c1, speakers[1]: c2}
    return AnchorInventory(counts=counts, speakers=speakers)


# ---------------------------------------------------------------------------
# Context assignment: preceding dialog act x TF-IDF topic cluster
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContextAssignment:
    cells: tuple[tuple[str, int], ...]
    n_clusters: int

    def cell(self, turn_index: int) -> tuple[str, int]:
        return self.cells[turn_index]


def _tfidf_matrix(docs: list[tuple[str, ...]]) -> np.ndarray:
    vocab = sorted({token for doc in docs for token in doc})
    n_docs = len(docs)
    if not vocab:
        return np.zeros((n_docs, 0))
    index = {term: i for i, term in enumerate(vocab)}
    tf = np.zeros((n_docs, len(vocab)))
    df = np.zeros(len(vocab))
    for row, doc in enumerate(docs):
        counted = Counter(doc)
        for term, count in counted.items():
            tf[row, index[term]] = count
        for term in counted:
            df[index[term]] += 1
    idf = np.log(n_docs / (1.0 + df))
    weighted = tf * idf
    norms = np.linalg.norm(weighted, axis=1)
    nonzero = norms > 0
    weighted[nonzero] /= norms[nonzero, None]
    return weighted


def _maximin_centers(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    first = int(rng.integers(len(points)))
    centers = [points[first]]
    dist_sq = np.sum((points - centers[0]) ** 2, axis=1)
    while len(centers) < k:
        nxt = int(np.argmax(dist_sq))
        centers.append(points[nxt])
        dist_sq = np.minimum(dist_sq, np.sum((points - centers[-1]) ** 2, axis=1))
    return np.stack(centers)


def _lloyd(points: np.ndarray, weights: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = _maximin_centers(points, k, rng)
    labels = np.zeros(len(points), dtype=int)
    for _ in range(100):
        dists = np.linalg.norm(points[:, None, :] - centers[None, :, :], axis=2)
        labels = np.argmin(dists, axis=1)
        for empty in range(k):
            if not np.any(labels == empty):
                # re-seed the empty cluster at the point farthest from its center
                assigned = dists[np.arange(len(points)), labels]
                labels[int(np.argmax(assigned))] = empty
        new_centers = np.stack(
            [
                np.average(points[labels == c], axis=0, weights=weights[labels == c])
                for c in range(k)
            ]
        )
        movement = float(np.linalg.norm(new_centers - centers, axis=1).max())
        centers = new_centers
        if movement < 1e-6:
            break
    dists = np.linalg.norm(points[:, None, :] - centers[None, :, :], axis=2)
    return np.argmin(dists, axis=1)


def assign_contexts(conv: Conversation, k_topics: int = 5, seed: int = 0) -> ContextAssignment:
    """Context cell per turn: (preceding turn's dialog act, topic cluster id).

    Topic clusters come from Lloyd's k-means on per-turn TF-IDF vectors
    (term frequency times ln(n_turns / (1 + document frequency)),
    L2-normalized) with k = min(k_topics, number of distinct vectors),
    maximin (farthest-point) initialization seeded over the canonically
    sorted distinct vectors, and at most 100 iterations or centroid movement
    below 1e-6.  Working over sorted distinct vectors makes the partition
    invariant to turn order.  The first turn's preceding act, and any missing
    dialog act, map to the sentinel category.
    """
    if not conv.turns:
        raise ValueError("cannot assign contexts in an empty conversation")
    if k_topics < 1:
        raise ValueError("k_topics must be at least 1")
    docs = [turn.tokens for turn in conv.turns]
    matrix = _tfidf_matrix(docs)
    if matrix.shape[1] == 0:
        clusters = np.zeros(len(docs), dtype=int)
    else:
        unique, inverse = np.unique(matrix, axis=0, return_inverse=True)
        k = min(k_topics, len(unique))
        if k == len(unique):
            unique_labels = np.arange(len(unique))
        else:
            weights = np.bincount(inverse, minlength=len(unique)).astype(float)
            rng = np.random.default_rng(seed)
            unique_labels = _lloyd(unique, weights, k, rng)
        clusters = unique_labels[inverse]
    cells = []
    for turn_pos, turn in enumerate(conv.turns):
        if turn_pos == 0:
            act = NO_ACT
        else:
            act = conv.turns[turn_pos - 1].dialog_act or NO_ACT
        cells.append((act, int(clusters[turn_pos])))
    return ContextAssignment(cells=tuple(cells), n_clusters=int(clusters.max()) + 1)


# ---------------------------------------------------------------------------
# Speaker-conditioned meanings
# ---------------------------------------------------------------------------


def estimate_meaning(
    conv: Conversation,
    assignment: ContextAssignment,
    anchor: str,
    context: Context,
    speaker: str,
) -> AffectDistribution | None:
    """Mean emotion distribution over the speaker's uses of the anchor in context.

    Pools every matching turn in the conversation, including turns after any
    measurement point.  An empty cell yields None (absent), never a uniform
    fallback.
    """
    rows = [
        turn.emotion_dist.probs
        for pos, turn in enumerate(conv.turns)
        if turn.speaker == speaker and anchor in turn.token_set and assignment.cells[pos] == context
    ]
    if not rows:
        return None
    return AffectDistribution(np.mean(rows, axis=0))


def reference_distribution(
    conv: Conversation,
    assignment: ContextAssignment,
    anchor: str,
    speakers: tuple[str, str] | None = None,
) -> dict[Context, float]:
    """Pooled context weighting for an anchor: counts of both speakers' uses, normalized."""
    if speakers is None:
        speakers = principal_speakers(conv)
    counts: Counter = Counter()
    for pos, turn in enumerate(conv.turns):
        if turn.speaker in speakers and anchor in turn.token_set:
            counts[assignment.cells[pos]] += 1
    total = sum(counts.values())
    if total == 0:
        raise ValueError(f"anchor {anchor!r} is never used by the principal speakers")
    return {cell: count / total for cell, count in counts.items()}


def build_meaning_table(
    conv: Conversation,
    anchors: AnchorInventory,
    assignment: ContextAssignment,
) -> MeaningTable:
    """Conditional meanings and context-usage rows for both principal speakers.

    Every (speaker, anchor, context) cell with at least one matching turn gets
    a conditional meaning; usage rows are the per-speaker cell counts
    normalized over exactly those cells.  Emptiness is represented by the
    cell's absence, never erred on.
    """
    speakers = anchors.speakers
    emotion = np.stack([turn.emotion_dist.probs for turn in conv.turns])
    conditionals: dict[int, dict[str, dict[Context, AffectDistribution]]] = {1: {}, 2: {}}
    usage: dict[int, dict[str, dict[Context, float]]] = {1: {}, 2: {}}
    turn_cells = assignment.cells
    positions_by_speaker: dict[str, list[int]] = {s: [] for s in speakers}
    for pos, turn in enumerate(conv.turns):
        if turn.speaker in positions_by_speaker:
            positions_by_speaker[turn.speaker].append(pos)
    for agent, speaker in enumerate(speakers, start=1):
        positions = positions_by_speaker[speaker]
        for anchor in anchors.anchors:
            grouped: dict[Context, list[int]] = {}
            for pos in positions:
                if anchor in conv.turns[pos].token_set:
                    grouped.setdefault(turn_cells[pos], []).append(pos)
            if not grouped:
                continue
            total = sum(len(ids) for ids in grouped.values())
            conditionals[agent][anchor] = {
                cell: AffectDistribution(emotion[ids].mean(axis=0)) for cell, ids in grouped.items()
            }
            usage[agent][anchor] = {cell: len(ids) / total for cell, ids in grouped.items()}
    return MeaningTable(conditionals=conditionals, usage=usage)


def shared_reference(
    table: MeaningTable, pooled: Mapping[Context, float], anchor: str
) -> ReferenceDistribution | None:
    """Pooled reference restricted to contexts both agents define, renormalized.

    None when the anchor has no shared context (such anchors are dropped from
    conditional-divergence aggregation).
    """
    shared = set(table.shared_contexts(anchor))
    if not shared:
        return None
    mass = {cell: weight for cell, weight in pooled.items() if cell in shared}
    total = sum(mass.values())
    if total <= 0:
        return None
    return ReferenceDistribution({anchor: {cell: w / total for cell, w in mass.items()}})


# ---------------------------------------------------------------------------
# Per-turn divergence series and aggregation
# ---------------------------------------------------------------------------


def conversation_amd_series(
    conv: Conversation,
    table: MeaningTable,
    references: Mapping[str, Mapping[Context, float]],
    assignment: ContextAssignment,
) -> np.ndarray:
    """Per-turn inter-speaker divergence, NaN where no anchor is measurable.

    At turn t with context cell c_t, each anchor present in the turn that has
    a conditional meaning for both speakers at c_t contributes the TV distance
    between those meanings, weighted by the pooled reference mass Q(c_t | x);
    the turn's value is the weighted mean over contributing anchors.  This
    per-turn definition is one of several readings the construct admits and is
    fixed here for reproducibility.
    """
    out = np.full(conv.n_turns, np.nan)
    anchor_names = set(references)
    for pos, turn in enumerate(conv.turns):
        cell = assignment.cells[pos]
        weights = []
        values = []
        for anchor in turn.token_set & anchor_names:
            m1 = table.meaning_or_none(1, anchor, cell)
            m2 = table.meaning_or_none(2, anchor, cell)
            if m1 is None or m2 is None:
                continue
            weight = references[anchor].get(cell, 0.0)
            if weight <= 0.0:
                continue
            weights.append(weight)
            values.append(tv_distance(m1, m2))
        if weights:
            out[pos] = float(np.average(values, weights=weights))
    return out


def aggregate_amd(
    table: MeaningTable, references: Mapping[str, Mapping[Context, float]]
) -> float | None:
    """Mean conditional divergence over anchors with shared contexts; None if none."""
    values = []
    for anchor in sorted(references):
        restricted = shared_reference(table, references[anchor], anchor)
        if restricted is None:
            continue
        values.append(conditional_amd(table, anchor, restricted))
    if not values:
        return None
    return float(np.mean(values))


def lexical_divergence(conv: Conversation) -> np.ndarray:
    """1 - Jaccard similarity of consecutive turns' token sets; NaN at turn 0."""
    out = np.full(conv.n_turns, np.nan)
    for pos in range(1, conv.n_turns):
        prev = conv.turns[pos - 1].token_set
        cur = conv.turns[pos].token_set
        union = prev | cur
        if union:
            out[pos] = 1.0 - len(prev & cur) / len(union)
    return out


# ---------------------------------------------------------------------------
# One-call pipeline for a single conversation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConversationAnalysis:
    anchors: AnchorInventory
    assignment: ContextAssignment
    table: MeaningTable | None
    references: Mapping[str, Mapping[Context, float]]
    amd_series: np.ndarray
    aggregate: float | None

    @property
    def has_valid_anchor(self) -> bool:
        return self.table is not None and len(self.references) > 0


def analyze_conversation(
    conv: Conversation,
    stopwords: frozenset[str],
    *,
    min_anchor_count: int = 3,
    require_both_speakers: bool = True,
    k_topics: int = 5,
    seed: int = 0,
    compute_series: bool = True,
) -> ConversationAnalysis:
    """Anchors, contexts, meaning table, references, and the divergence series."""
    anchors = extract_anchors(
        conv, stopwords, min_count=min_anchor_count, require_both_speakers=require_both_speakers
    )
    assignment = assign_contexts(conv, k_topics=k_topics, seed=seed)
    if len(anchors) == 0:
        return ConversationAnalysis(
            anchors=anchors,
            assignment=assignment,
            table=None,
            references={},
            amd_series=np.full(conv.n_turns, np.nan),
            aggregate=None,
        )
    table = build_meaning_table(conv, anchors, assignment)
    references = {
        anchor: reference_distribution(conv, assignment, anchor, anchors.speakers)
        for anchor in anchors.anchors
    }
    if compute_series:
        series = conversation_amd_series(conv, table, references, assignment)
    else:
        series = np.full(conv.n_turns, np.nan)
    return ConversationAnalysis(
        anchors=anchors,
        assignment=assignment,
        table=table,
        references=references,
        amd_series=series,
        aggregate=aggregate_amd(table, references),
    )


# ---------------------------------------------------------------------------
# Synthetic two-speaker sampler (estimator validation)
# ---------------------------------------------------------------------------

#: Context marker words are stopwords on purpose: they steer the topic
#: clustering without ever qualifying as anchors.
_CONTEXT_MARKERS = {"A": "because", "B": "during"}

_ANCHOR_WORD = "fine"


@dataclass(frozen=True)
class SpeakerPopulation:
    """Ground truth for one synthetic estimator condition (binary states)."""

    conditional_1: Mapping[str, float]  # context -> P(state 1 | anchor, context)
    conditional_2: Mapping[str, float]
    usage_1: Mapping[str, float]
    usage_2: Mapping[str, float]
    marginal_divergence: float
    conditional_divergence: float


ESTIMATOR_CONDITIONS: dict[str, SpeakerPopulation] = {
    # pure usage confound: shared conditionals, divergent context habits
    "C1": SpeakerPopulation(
        conditional_1={"A": 0.9, "B": 0.1},
        conditional_2={"A": 0.9, "B": 0.1},
        usage_1={"A": 0.725, "B": 0.275},
        usage_2={"A": 0.275, "B": 0.725},
        marginal_divergence=0.36,
        conditional_divergence=0.0,
    ),
    # genuine conditional divergence hidden by symmetric marginals
    "C2": SpeakerPopulation(
        conditional_1={"A": 0.8, "B": 0.2},
        conditional_2={"A": 0.2, "B": 0.8},
        usage_1={"A": 0.5, "B": 0.5},
        usage_2={"A": 0.5, "B": 0.5},
        marginal_divergence=0.0,
        conditional_divergence=0.6,
    ),
}


def sample_synthetic_speakers(condition: str, n: int, seed: int) -> Conversation:
    """Two simulated speakers, n utterances each, around one shared anchor.

    Every utterance carries the anchor plus a stopword context marker, so the
    topic clustering recovers the two contexts exactly; the emotion
    distribution is the one-hot of the sampled binary state, ordered
    (state 1, state 0).
    """
    if n < 1:
        raise ValueError("need at least one utterance per speaker")
    if condition not in ESTIMATOR_CONDITIONS:
        raise ValueError(f"unknown condition {condition!r}; choose from {sorted(ESTIMATOR_CONDITIONS)}")
    pop = ESTIMATOR_CONDITIONS[condition]
    condition_id = sorted(ESTIMATOR_CONDITIONS).index(condition)
    rng = np.random.default_rng(np.random.SeedSequence([seed, condition_id]))
    specs = (
        ("s1", pop.usage_1, pop.conditional_1),
        ("s2", pop.usage_2, pop.conditional_2),
    )
    one_hot = {True: np.array([1.0, 0.0]), False: np.array([0.0, 1.0])}
    texts = {ctx: f"{_ANCHOR_WORD} {marker}" for ctx, marker in _CONTEXT_MARKERS.items()}
    drawn: list[tuple[str, list[str], np.ndarray]] = []
    for speaker, usage, conditional in specs:
        in_a = rng.random(n) < usage["A"]
        p_one = np.where(in_a, conditional["A"], conditional["B"])
        states = rng.random(n) < p_one
        contexts = ["A" if flag else "B" for flag in in_a]
        drawn.append((speaker, contexts, states))
    turns: list[Turn] = []
    for draw in range(n):
        for speaker, contexts, states in drawn:
            ctx = contexts[draw]
            turns.append(
                Turn(
                    speaker=speaker,
                    index=len(turns),
                    text=texts[ctx],
                    emotion_dist=AffectDistribution(one_hot[bool(states[draw])]),
                )
            )
    return Conversation(id=f"synthetic-{condition}-n{n}-seed{seed}", turns=tuple(turns))
