import json

import numpy as np
import pytest

from amdyn.corpus import (
    CorpusFormatError,
    RunConfig,
    conversation_from_record,
    conversation_seed,
    conversation_to_record,
    generate_synthetic_corpus,
    load_config,
    override_config,
    read_corpus,
    write_corpus,
)
from amdyn.estimation import analyze_conversation, load_stopwords


def sample_record():
    return {
        "id": "c1",
        "label": "derail",
        "breakdown_index": 1,
        "turns": [
            {
                "speaker": "a",
                "text": "hello there",
                "dialog_act": "greet",
                "emotion_dist": [0.25, 0.75],
                "channels": {"toxicity": 0.1},
            },
            {
                "speaker": "b",
                "text": "hello back",
                "dialog_act": None,
                "emotion_dist": [0.5, 0.5],
                "channels": None,
            },
        ],
    }


def test_record_round_trip(tmp_path):
    conv = conversation_from_record(sample_record())
    assert conv.turns[0].channels == {"toxicity": 0.1}
    path = tmp_path / "corpus.jsonl"
    write_corpus([conv], path)
    reread = read_corpus(path)
    assert len(reread) == 1
    assert conversation_to_record(reread[0]) == conversation_to_record(conv)
    # rewrite is byte-identical
    path2 = tmp_path / "again.jsonl"
    write_corpus(reread, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_parser_reports_line_numbers(tmp_path):
    path = tmp_path / "bad.jsonl"
    good = json.dumps(conversation_to_record(conversation_from_record(sample_record())))
    path.write_text(good + "\n{not json}\n")
    with pytest.raises(CorpusFormatError, match="line 2"):
        read_corpus(path)


def test_parser_rejects_schema_violations(tmp_path):
    base = sample_record()
    bad_label = dict(base, label="spicy")
    with pytest.raises(CorpusFormatError, match="label"):
        conversation_from_record(bad_label, line=3)
    missing_breakdown = dict(base, breakdown_index=None)
    with pytest.raises(CorpusFormatError, match="breakdown"):
        conversation_from_record(missing_breakdown, line=4)
    bad_dist = json.loads(json.dumps(base))
    bad_dist["turns"][0]["emotion_dist"] = [0.9, 0.9]
    with pytest.raises(CorpusFormatError, match="emotion"):
        conversation_from_record(bad_dist, line=5)


def test_parser_rejects_inconsistent_state_count(tmp_path):
    first = sample_record()
    second = json.loads(json.dumps(first))
    second["id"] = "c2"
    for turn in second["turns"]:
        turn["emotion_dist"] = [0.2, 0.3, 0.5]
    path = tmp_path / "mixed.jsonl"
    path.write_text(json.dumps(first) + "\n" + json.dumps(second) + "\n")
    with pytest.raises(CorpusFormatError, match="line 2"):
        read_corpus(path)


def test_parser_rejects_single_speaker(tmp_path):
    record = sample_record()
    for turn in record["turns"]:
        turn["speaker"] = "solo"
    path = tmp_path / "solo.jsonl"
    path.write_text(json.dumps(record) + "\n")
    with pytest.raises(CorpusFormatError, match="two speakers"):
        read_corpus(path)


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------


def test_config_file_parsing(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        """
        # analysis settings
        window = 6
        permutations = 500
        channels = amd, toxicity
        stopwords = /tmp/words.txt
        """
    )
    config = load_config(path)
    assert config.window == 6
    assert config.permutations == 500
    assert config.channels == ("amd", "toxicity")
    assert config.stopwords == "/tmp/words.txt"
    assert config.k_topics == 5  # default preserved


def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("wibble = 3\n")
    with pytest.raises(ValueError, match="unknown configuration key"):
        load_config(path)


def test_config_rejects_bad_values(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("window = soon\n")
    with pytest.raises(ValueError, match="bad value"):
        load_config(path)
    with pytest.raises(ValueError):
        RunConfig(window=0)
    with pytest.raises(ValueError):
        RunConfig(anchor_mode="sometimes")


def test_config_overrides():
    config = RunConfig()
    updated = override_config(config, window=7, seed=None)
    assert updated.window == 7
    assert updated.seed == config.seed


def test_conversation_seed_stable():
    assert conversation_seed(1, "abc") == conversation_seed(1, "abc")
    assert conversation_seed(1, "abc") != conversation_seed(2, "abc")
    assert conversation_seed(1, "abc") != conversation_seed(1, "abd")


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------


def test_generator_shapes_and_labels():
    corpus = generate_synthetic_corpus(3, 4, 20, seed=11)
    assert len(corpus) == 7
    derail = [c for c in corpus if c.label == "derail"]
    civil = [c for c in corpus if c.label == "civil"]
    assert len(derail) == 3 and len(civil) == 4
    for conv in derail:
        assert conv.breakdown_index == 19
    for conv in civil:
        assert conv.breakdown_index is None
    for conv in corpus:
        assert conv.n_turns == 20
        assert set(t.speaker for t in conv.turns) == {"alice", "bob"}


def test_generator_is_deterministic_and_paired():
    a = generate_synthetic_corpus(2, 2, 20, seed=5)
    b = generate_synthetic_corpus(2, 2, 20, seed=5)
    assert [conversation_to_record(c) for c in a] == [conversation_to_record(c) for c in b]
    # with ramp factor 1 the derail/civil twins are identical apart from labels
    flat = generate_synthetic_corpus(2, 2, 20, seed=5, ramp_factor=1.0)
    derail = [c for c in flat if c.label == "derail"]
    civil = [c for c in flat if c.label == "civil"]
    for d, c in zip(derail, civil):
        for td, tc in zip(d.turns, c.turns):
            np.testing.assert_array_equal(td.emotion_dist.probs, tc.emotion_dist.probs)
            assert td.text == tc.text


def test_generator_ramp_raises_tail_noise():
    corpus = generate_synthetic_corpus(40, 40, 20, seed=3)
    derail = [c for c in corpus if c.label == "derail"]
    civil = [c for c in corpus if c.label == "civil"]

    def tail_spread(convs):
        gaps = []
        for conv in convs:
            probs = np.stack([t.emotion_dist.probs for t in conv.turns])
            gaps.append(np.abs(probs[-2] - probs[-1]).sum() / 2)
        return float(np.mean(gaps))

    assert tail_spread(derail) > 1.5 * tail_spread(civil)


def test_generator_round_trips_through_corpus_file(tmp_path):
    corpus = generate_synthetic_corpus(2, 2, 20, seed=9)
    path = tmp_path / "synthetic.jsonl"
    write_corpus(corpus, path)
    reread = read_corpus(path)
    assert [conversation_to_record(c) for c in reread] == [
        conversation_to_record(c) for c in corpus
    ]


def test_generator_yields_valid_anchors():
    corpus = generate_synthetic_corpus(1, 1, 20, seed=2)
    stopwords = load_stopwords()
    for conv in corpus:
        analysis = analyze_conversation(conv, stopwords, seed=0)
        assert analysis.has_valid_anchor
        assert "project" in analysis.anchors.anchors
        valid = ~np.isnan(analysis.amd_series)
        assert valid.sum() >= 8
