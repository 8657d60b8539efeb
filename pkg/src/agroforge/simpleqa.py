"""Rule-based single-attribute question-answer pairs.

Fully offline: each applicable template turns one record attribute into a
short question with a brevity directive and a one-concept gold answer, with
the phrasing varied deterministically per record.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .ingest import ATTRIBUTE_KEYS, ImageRecord
from .synthesis import Conversation, Turn

_SENTENCE_PUNCTUATION = ".?!;"


@dataclass(frozen=True)
class QATemplate:
    template_id: str
    domain: str
    attribute_key: str
    phrasings: tuple[str, ...]
    # maps attribute values to fixed short answers (e.g. health_status
    # diseased -> yes); empty means the attribute value is the answer
    answer_map: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.attribute_key not in ATTRIBUTE_KEYS:
            raise ValueError(f"unknown attribute_key {self.attribute_key!r}")
        if not self.phrasings:
            raise ValueError(f"template {self.template_id} has no phrasings")

    @classmethod
    def from_dict(cls, data: dict) -> "QATemplate":
        return cls(
            template_id=data["template_id"],
            domain=data["domain"],
            attribute_key=data["attribute_key"],
            phrasings=tuple(data["phrasings"]),
            answer_map=dict(data.get("answer_map", {})),
        )


@dataclass(frozen=True)
class SimpleQA:
    image_id: str
    question: str
    gold_answer: str
    attribute_key: str

    def __post_init__(self):
        if any(ch in self.gold_answer for ch in _SENTENCE_PUNCTUATION):
            raise ValueError(f"gold answer must be a single concept: {self.gold_answer!r}")

    def to_conversation(self) -> Conversation:
        return Conversation(
            image_id=self.image_id,
            kind="simple",
            turns=(Turn(question=self.question, answer=self.gold_answer),),
            generator_model="rule-based",
        )


def default_templates(domain: str, bank: list[QATemplate]) -> list[QATemplate]:
    """Templates applicable to a domain, in bank order. Unknown domains get
    an empty list."""
    return [template for template in bank if template.domain == domain]


def render(record: ImageRecord, templates: list[QATemplate], seed: int | str) -> list[SimpleQA]:
    """One QA per template whose attribute the record carries. The phrasing
    pick is a pure function of (seed, record id, template id)."""
    output = []
    for template in templates:
        value = record.attributes.get(template.attribute_key)
        if value is None:
            continue
        rng = random.Random(f"{seed}|{record.id}|{template.template_id}")
        question = rng.choice(template.phrasings)
        gold = template.answer_map.get(value, value) if template.answer_map else value
        output.append(
            SimpleQA(
                image_id=record.id,
                question=question,
                gold_answer=gold.strip().lower(),
                attribute_key=template.attribute_key,
            )
        )
    return output
