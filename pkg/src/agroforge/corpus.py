"""Training-corpus assembly: sequencing, mixing, and statistics.

Conversations of all three kinds become alternating human/assistant sequences
with an image placeholder in the first human turn, are sampled per kind to hit
the configured mix exactly, shuffled, and emitted as LLaVA-style JSONL.
"""

from __future__ import annotations

import random
import re
from collections import Counter
from dataclasses import dataclass, field

from .errors import EmptyConversation, InsufficientPool
from .synthesis import Conversation

PLACEHOLDER = "<image>"
SPEAKERS = ("human", "assistant")


@dataclass(frozen=True)
class SequenceTurn:
    speaker: str
    text: str


@dataclass(frozen=True)
class TrainingExample:
    example_id: str
    image: str
    system_message: str
    sequence: tuple[SequenceTurn, ...]
    kind: str = ""
    domain: str = ""

    @property
    def dataset_id(self) -> str:
        return self.image.split("/", 1)[0]

    def to_dict(self) -> dict:
        return {
            "id": self.example_id,
            "image": self.image,
            "system": self.system_message,
            "conversations": [
                {"from": "human" if turn.speaker == "human" else "gpt", "value": turn.text}
                for turn in self.sequence
            ],
            "kind": self.kind,
            "domain": self.domain,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingExample":
        sequence = tuple(
            SequenceTurn(speaker="human" if entry["from"] == "human" else "assistant", text=entry["value"])
            for entry in data["conversations"]
        )
        return cls(
            example_id=data["id"],
            image=data.get("image", ""),
            system_message=data.get("system", ""),
            sequence=sequence,
            kind=data.get("kind", ""),
            domain=data.get("domain", ""),
        )


def validate_example(example: TrainingExample) -> None:
    """Enforce the sequencing invariants: strict human/assistant alternation
    starting with human, and exactly one placeholder, in the first human turn."""
    if not example.sequence:
        raise EmptyConversation(f"example {example.example_id} has no turns")
    for index, turn in enumerate(example.sequence):
        expected = SPEAKERS[index % 2]
        if turn.speaker != expected:
            raise ValueError(f"example {example.example_id}: turn {index} should be {expected}, got {turn.speaker}")
    total = sum(turn.text.count(PLACEHOLDER) for turn in example.sequence)
    if total != 1 or PLACEHOLDER not in example.sequence[0].text:
        raise ValueError(
            f"example {example.example_id}: placeholder must appear exactly once, in the first human turn"
        )


def to_training_example(
    conv: Conversation,
    system_message: str,
    placeholder: str = PLACEHOLDER,
    example_id: str = "",
    domain: str = "",
) -> TrainingExample:
    """Map turn i to human(Qi)/assistant(Ai), prepending the placeholder to
    the first question."""
    if not conv.turns:
        raise EmptyConversation(f"conversation {conv.image_id} has no turns")
    sequence = []
    for index, turn in enumerate(conv.turns):
        question = f"{placeholder}\n{turn.question}" if index == 0 else turn.question
        sequence.append(SequenceTurn(speaker="human", text=question))
        sequence.append(SequenceTurn(speaker="assistant", text=turn.answer))
    return TrainingExample(
        example_id=example_id or f"{conv.kind}:{conv.image_id}",
        image=conv.image_id,
        system_message=system_message,
        sequence=tuple(sequence),
        kind=conv.kind,
        domain=domain,
    )


@dataclass(frozen=True)
class MixSpec:
    description: int
    complex: int
    simple: int
    seed: int | str = 0

    def __post_init__(self):
        for kind in ("description", "complex", "simple"):
            if getattr(self, kind) < 0:
                raise ValueError(f"mix count for {kind} must be >= 0")

    @property
    def total(self) -> int:
        return self.description + self.complex + self.simple

    def targets(self) -> dict[str, int]:
        return {"description": self.description, "complex": self.complex, "simple": self.simple}

    @classmethod
    def parse(cls, text: str, seed: int | str = 0) -> "MixSpec":
        """Parse "10000,35000,35000" as description,complex,simple counts."""
        parts = [part.strip() for part in text.split(",")]
        if len(parts) != 3:
            raise ValueError(f"mix must be three comma-separated counts, got {text!r}")
        return cls(description=int(parts[0]), complex=int(parts[1]), simple=int(parts[2]), seed=seed)


def assemble_corpus(pools: dict[str, list[TrainingExample]], mix: MixSpec) -> list[TrainingExample]:
    """Sample each kind's target count without replacement, then shuffle the
    union. Pure function of (pools, mix): input order, seed, and targets fully
    determine the output."""
    picked = []
    for kind, target in mix.targets().items():
        pool = pools.get(kind, [])
        if len(pool) < target:
            raise InsufficientPool(f"kind {kind!r}: need {target}, pool has {len(pool)} (short {target - len(pool)})")
        rng = random.Random(f"{mix.seed}|{kind}")
        picked.extend(pool[i] for i in sorted(rng.sample(range(len(pool)), target)))
    random.Random(f"{mix.seed}|shuffle").shuffle(picked)
    for example in picked:
        validate_example(example)
    return picked


_TOKEN = re.compile(r"[a-z0-9']+")


def tokenize(text: str) -> list[str]:
    """Lowercased tokens with punctuation stripped; the image placeholder is
    dropped so it never pollutes word frequencies."""
    return _TOKEN.findall(text.replace(PLACEHOLDER, " ").lower())


@dataclass
class CorpusStats:
    total: int = 0
    by_kind: dict = field(default_factory=dict)
    by_domain: dict = field(default_factory=dict)
    by_dataset: dict = field(default_factory=dict)
    turn_histogram: dict = field(default_factory=dict)
    question_words: dict = field(default_factory=dict)
    answer_words: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "by_kind": dict(sorted(self.by_kind.items())),
            "by_domain": dict(sorted(self.by_domain.items())),
            "by_dataset": dict(sorted(self.by_dataset.items())),
            "turn_histogram": {str(k): v for k, v in sorted(self.turn_histogram.items())},
            "question_words": dict(sorted(self.question_words.items(), key=lambda kv: (-kv[1], kv[0]))),
            "answer_words": dict(sorted(self.answer_words.items(), key=lambda kv: (-kv[1], kv[0]))),
        }


def corpus_stats(corpus: list[TrainingExample]) -> CorpusStats:
    by_kind = Counter()
    by_domain = Counter()
    by_dataset = Counter()
    turns = Counter()
    question_words = Counter()
    answer_words = Counter()
    for example in corpus:
        by_kind[example.kind or "unknown"] += 1
        by_domain[example.domain or "unknown"] += 1
        by_dataset[example.dataset_id] += 1
        turns[len(example.sequence) // 2] += 1
        for turn in example.sequence:
            target = question_words if turn.speaker == "human" else answer_words
            target.update(tokenize(turn.text))
    return CorpusStats(
        total=len(corpus),
        by_kind=dict(by_kind),
        by_domain=dict(by_domain),
        by_dataset=dict(by_dataset),
        turn_histogram=dict(turns),
        question_words=dict(question_words),
        answer_words=dict(answer_words),
    )


def render_stats(stats: CorpusStats, top_words: int = 25) -> str:
    """Aligned-text report of the corpus composition."""
    lines = [f"corpus size: {stats.total}", ""]

    def section(title: str, counts: dict) -> None:
        lines.append(title)
        for key, value in sorted(counts.items()):
            lines.append(f"  {key:<24} {value:>8}")
        lines.append("")

    section("by kind:", stats.by_kind)
    section("by domain:", stats.by_domain)
    section("by dataset:", stats.by_dataset)
    section("turns per example:", stats.turn_histogram)
    for title, words in (("top question words:", stats.question_words), ("top answer words:", stats.answer_words)):
        lines.append(title)
        ranked = sorted(words.items(), key=lambda kv: (-kv[1], kv[0]))[:top_words]
        for word, count in ranked:
            lines.append(f"  {word:<24} {count:>8}")
        lines.append("")
    return "\n".join(lines)
