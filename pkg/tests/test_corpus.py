"""Corpus sequencing, mixing, and statistics."""

from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agroforge.corpus import (
    PLACEHOLDER,
    MixSpec,
    SequenceTurn,
    TrainingExample,
    assemble_corpus,
    corpus_stats,
    render_stats,
    to_training_example,
    tokenize,
    validate_example,
)
from agroforge.errors import InsufficientPool
from agroforge.jsonl import read_jsonl, write_jsonl
from agroforge.synthesis import Conversation, Turn


def conv_of(turn_count=3, image_id="pv/Tomato___Early_blight/a.jpg", kind="complex"):
    turns = tuple(Turn(question=f"question {i}?", answer=f"answer {i}.") for i in range(turn_count))
    return Conversation(image_id=image_id, kind=kind, turns=turns, generator_model="m")


def example_pool(kind: str, count: int) -> list[TrainingExample]:
    turn_count = {"description": 1, "complex": 3, "simple": 1}[kind]
    return [
        to_training_example(
            conv_of(turn_count, image_id=f"ds/cls/{kind}_{index:05d}.jpg", kind=kind),
            system_message="sys",
            domain="disease",
        )
        for index in range(count)
    ]


class TestSequencing:
    def test_turn_mapping_and_placeholder(self):
        example = to_training_example(conv_of(3), system_message="sys", domain="disease")
        assert example.example_id == "complex:pv/Tomato___Early_blight/a.jpg"
        assert example.image == "pv/Tomato___Early_blight/a.jpg"
        assert example.dataset_id == "pv"
        assert len(example.sequence) == 6
        assert [t.speaker for t in example.sequence] == ["human", "assistant"] * 3
        assert example.sequence[0].text == f"{PLACEHOLDER}\nquestion 0?"
        assert example.sequence[1].text == "answer 0."
        assert example.sequence[2].text == "question 1?"

    def test_llava_dict_shape(self):
        example = to_training_example(conv_of(3), system_message="sys", domain="disease")
        data = example.to_dict()
        assert set(data) == {"id", "image", "system", "conversations", "kind", "domain"}
        assert data["conversations"][0]["from"] == "human"
        assert data["conversations"][1]["from"] == "gpt"
        assert data["conversations"][0]["value"].startswith(PLACEHOLDER)

    def test_round_trip(self):
        example = to_training_example(conv_of(4), system_message="sys", domain="disease")
        assert TrainingExample.from_dict(example.to_dict()) == example

    def test_jsonl_round_trip(self, tmp_path):
        examples = example_pool("complex", 5)
        path = tmp_path / "corpus.jsonl"
        count = write_jsonl(path, (e.to_dict() for e in examples))
        assert count == 5
        loaded = [TrainingExample.from_dict(row) for row in read_jsonl(path)]
        assert loaded == examples

    def test_validate_rejects_misordered_speakers(self):
        example = TrainingExample(
            example_id="x",
            image="ds/c/a.jpg",
            system_message="s",
            sequence=(
                SequenceTurn(speaker="assistant", text=f"{PLACEHOLDER} hi"),
                SequenceTurn(speaker="human", text="q"),
            ),
        )
        with pytest.raises(ValueError):
            validate_example(example)

    @pytest.mark.parametrize("texts", [("no placeholder", "a"), (f"{PLACEHOLDER} {PLACEHOLDER}", "a")])
    def test_validate_rejects_wrong_placeholder_count(self, texts):
        example = TrainingExample(
            example_id="x",
            image="ds/c/a.jpg",
            system_message="s",
            sequence=(SequenceTurn("human", texts[0]), SequenceTurn("assistant", texts[1])),
        )
        with pytest.raises(ValueError):
            validate_example(example)

    def test_validate_rejects_placeholder_in_later_turn(self):
        example = TrainingExample(
            example_id="x",
            image="ds/c/a.jpg",
            system_message="s",
            sequence=(
                SequenceTurn("human", "q"),
                SequenceTurn("assistant", "a"),
                SequenceTurn("human", f"{PLACEHOLDER} later"),
                SequenceTurn("assistant", "a"),
            ),
        )
        with pytest.raises(ValueError):
            validate_example(example)


class TestMixSpec:
    def test_parse(self):
        mix = MixSpec.parse("10000, 35000,35000", seed=3)
        assert mix == MixSpec(description=10000, complex=35000, simple=35000, seed=3)
        assert mix.total == 80000

    def test_parse_rejects_wrong_arity(self):
        with pytest.raises(ValueError):
            MixSpec.parse("1,2")

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            MixSpec(description=-1, complex=0, simple=0)


class TestAssemble:
    def pools(self, description=20, complex_=70, simple=70):
        return {
            "description": example_pool("description", description),
            "complex": example_pool("complex", complex_),
            "simple": example_pool("simple", simple),
        }

    def test_exact_mix(self):
        corpus = assemble_corpus(self.pools(), MixSpec(10, 35, 35, seed=4))
        assert len(corpus) == 80
        by_kind = {}
        for example in corpus:
            by_kind[example.kind] = by_kind.get(example.kind, 0) + 1
        assert by_kind == {"description": 10, "complex": 35, "simple": 35}

    def test_no_duplicates_without_replacement(self):
        corpus = assemble_corpus(self.pools(), MixSpec(20, 70, 70, seed=4))
        ids = [example.example_id for example in corpus]
        assert len(ids) == len(set(ids))

    def test_deterministic_and_seed_sensitive(self):
        pools = self.pools()
        first = assemble_corpus(pools, MixSpec(10, 35, 35, seed=4))
        second = assemble_corpus(pools, MixSpec(10, 35, 35, seed=4))
        third = assemble_corpus(pools, MixSpec(10, 35, 35, seed=5))
        assert [e.example_id for e in first] == [e.example_id for e in second]
        assert [e.example_id for e in first] != [e.example_id for e in third]

    def test_kinds_interleaved_by_shuffle(self):
        corpus = assemble_corpus(self.pools(), MixSpec(10, 35, 35, seed=4))
        kinds = [example.kind for example in corpus]
        blocked = ["description"] * 10 + ["complex"] * 35 + ["simple"] * 35
        assert kinds != blocked

    def test_shortfall_reported(self):
        with pytest.raises(InsufficientPool) as info:
            assemble_corpus(self.pools(description=5), MixSpec(10, 35, 35))
        assert "short 5" in str(info.value)

    def test_zero_target_allows_missing_pool(self):
        pools = {"complex": example_pool("complex", 3)}
        corpus = assemble_corpus(pools, MixSpec(0, 3, 0))
        assert len(corpus) == 3

    @settings(max_examples=25, deadline=None)
    @given(
        st.integers(min_value=0, max_value=2**32 - 1),
        st.integers(min_value=0, max_value=12),
        st.integers(min_value=0, max_value=12),
        st.integers(min_value=0, max_value=12),
    )
    def test_mix_property(self, seed, description, complex_, simple):
        pools = self.pools(description=12, complex_=12, simple=12)
        mix = MixSpec(description, complex_, simple, seed=seed)
        corpus = assemble_corpus(pools, mix)
        counts = {"description": 0, "complex": 0, "simple": 0}
        for example in corpus:
            counts[example.kind] += 1
        assert counts == mix.targets()
        assert len({e.example_id for e in corpus}) == len(corpus)


class TestStats:
    def corpus(self):
        rng = random.Random(0)
        examples = []
        for kind, count in (("description", 4), ("complex", 6), ("simple", 5)):
            turn_count = {"description": 1, "complex": rng.randint(3, 5), "simple": 1}[kind]
            for index in range(count):
                examples.append(
                    to_training_example(
                        conv_of(turn_count, image_id=f"ds{index % 2}/cls/{kind}{index}.jpg", kind=kind),
                        system_message="sys",
                        domain="disease" if index % 2 else "insect",
                    )
                )
        return examples

    def test_partitions_sum_to_total(self):
        stats = corpus_stats(self.corpus())
        assert stats.total == 15
        for partition in (stats.by_kind, stats.by_domain, stats.by_dataset, stats.turn_histogram):
            assert sum(partition.values()) == stats.total

    def test_word_split_by_speaker(self):
        example = to_training_example(
            Conversation(
                image_id="ds/c/a.jpg",
                kind="simple",
                turns=(Turn(question="What plant?", answer="A tomato"),),
            ),
            system_message="sys",
        )
        stats = corpus_stats([example])
        assert stats.question_words == {"what": 1, "plant": 1}
        assert stats.answer_words == {"a": 1, "tomato": 1}

    def test_placeholder_never_counted(self):
        stats = corpus_stats(self.corpus())
        assert "image" not in stats.question_words

    def test_render_contains_sections(self):
        text = render_stats(corpus_stats(self.corpus()))
        for heading in ("corpus size: 15", "by kind:", "by domain:", "by dataset:", "turns per example:", "top question words:"):
            assert heading in text

    def test_stats_json_serializable(self):
        stats = corpus_stats(self.corpus())
        encoded = json.dumps(stats.to_dict())
        assert json.loads(encoded)["total"] == 15


def test_tokenize():
    assert tokenize("It's a Tomato, 100%!") == ["it's", "a", "tomato", "100"]
    assert tokenize(f"{PLACEHOLDER}\nWhat plant?") == ["what", "plant"]
