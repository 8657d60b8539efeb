"""Context-grounded description and multi-turn conversation generation.

Descriptions come from a vision-capable backend prompted with the image and
its attributes. Conversations come from a language backend prompted with four
context elements: the image attributes, the description, an excerpt of
external background knowledge, and in-context example conversations, under a
domain system prompt. Model output travels in a line-anchored
"Question:"/"Answer:" wire format that parses back losslessly.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field, replace
from typing import Iterable

from .errors import (
    GenerationRejected,
    InvalidQuestionIndex,
    MissingDomainAssets,
    ParseError,
)
from .gateway import ChatMessage, ChatRequest, Gateway
from .ingest import IDENTIFYING_KEYS, ImageRecord, normalize_value
from .knowledge import KnowledgeBase

QUESTION_COUNT = 10
MIN_TURNS = 3
MAX_TURNS = 5
KINDS = ("description", "complex", "simple")


@dataclass(frozen=True)
class DescriptionQuestionSet:
    questions: tuple[str, ...]

    def __post_init__(self):
        if len(self.questions) != QUESTION_COUNT:
            raise ValueError(f"expected exactly {QUESTION_COUNT} questions, got {len(self.questions)}")
        if any(not q.strip() for q in self.questions):
            raise ValueError("description questions must be non-empty")

    def __getitem__(self, index: int) -> str:
        return self.questions[index]


@dataclass(frozen=True)
class Description:
    image_id: str
    question_index: int
    text: str
    generator_model: str = ""

    def __post_init__(self):
        if not 0 <= self.question_index < QUESTION_COUNT:
            raise ValueError(f"question_index out of range: {self.question_index}")
        if not self.text.strip():
            raise ValueError("description text must be non-empty")

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "kind": "description",
            "question_index": self.question_index,
            "text": self.text,
            "generator_model": self.generator_model,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Description":
        return cls(
            image_id=data["image_id"],
            question_index=int(data["question_index"]),
            text=data["text"],
            generator_model=data.get("generator_model", ""),
        )


@dataclass(frozen=True)
class Turn:
    question: str
    answer: str


@dataclass(frozen=True)
class Conversation:
    image_id: str
    kind: str
    turns: tuple[Turn, ...]
    generator_model: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not self.turns:
            raise ValueError("conversation must have at least one turn")
        if self.kind == "complex" and not MIN_TURNS <= len(self.turns) <= MAX_TURNS:
            raise ValueError(f"complex conversations need {MIN_TURNS}-{MAX_TURNS} turns, got {len(self.turns)}")
        for turn in self.turns:
            if not turn.question.strip() or not turn.answer.strip():
                raise ValueError("turns must have non-empty question and answer")

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "kind": self.kind,
            "turns": [{"question": t.question, "answer": t.answer} for t in self.turns],
            "generator_model": self.generator_model,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Conversation":
        return cls(
            image_id=data["image_id"],
            kind=data["kind"],
            turns=tuple(Turn(t["question"], t["answer"]) for t in data["turns"]),
            generator_model=data.get("generator_model", ""),
        )


@dataclass(frozen=True)
class GenerationContext:
    record: ImageRecord
    description: str
    knowledge_excerpt: str
    in_context_examples: tuple[Conversation, ...]
    system_prompt: str
    domain: str

    def __post_init__(self):
        for name in ("description", "knowledge_excerpt", "system_prompt"):
            if not getattr(self, name).strip():
                raise ValueError(f"context element {name} must be non-empty")
        if not self.in_context_examples:
            raise ValueError("context needs at least one in-context example")


@dataclass
class GenerationFailure:
    image_id: str
    stage: str
    error: str
    detail: str


def attribute_block(record: ImageRecord) -> str:
    """Render the record's attributes as '- key: value' lines, sorted by key."""
    return "\n".join(f"- {key}: {value}" for key, value in sorted(record.attributes.items()))


def build_description_prompt(
    record: ImageRecord,
    question_index: int,
    qset: DescriptionQuestionSet,
    backend_id: str = "",
    model_name: str = "",
    temperature: float = 0.2,
) -> ChatRequest:
    """Prompt a vision backend to describe the image, grounded on every
    attribute the record carries."""
    if not 0 <= question_index < QUESTION_COUNT:
        raise InvalidQuestionIndex(f"question_index must be 0-{QUESTION_COUNT - 1}, got {question_index}")
    prompt = (
        "You are looking at an agricultural image with these known attributes:\n"
        f"{attribute_block(record)}\n\n"
        f"{qset[question_index]}\n"
        "Ground your description in the listed attributes and what is visible. "
        "Do not speculate beyond them."
    )
    # the record id doubles as a corpus-relative image path; callers that know
    # the dataset root swap in an absolute path
    return ChatRequest(
        backend_id=backend_id,
        model_name=model_name,
        messages=(ChatMessage(role="user", text=prompt, image=record.id),),
        temperature=temperature,
    )


def sample_question_index(seed: int | str, record_id: str) -> int:
    return random.Random(f"{seed}:{record_id}").randrange(QUESTION_COUNT)


def generate_descriptions(
    records: Iterable[ImageRecord],
    qset: DescriptionQuestionSet,
    gateway: Gateway,
    backend_id: str,
    sampling_seed: int | str,
    image_root=None,
    max_content_attempts: int = 3,
) -> tuple[list[Description], list[GenerationFailure]]:
    """One description per record, question sampled deterministically from the
    seed. Empty model replies are retried with a fresh cache salt; records
    that keep failing land in the failure list instead of aborting the run."""
    descriptions = []
    failures = []
    config = gateway.configs.get(backend_id)
    model_name = config.model_name if config else ""
    for record in records:
        index = sample_question_index(sampling_seed, record.id)
        request = build_description_prompt(record, index, qset, backend_id=backend_id, model_name=model_name)
        if image_root is not None:
            image_path = str(image_root / record.relative_path)
            request = replace(request, messages=(replace(request.messages[0], image=image_path),))
        try:
            text = _complete_nonempty(gateway, request, max_content_attempts)
        except Exception as exc:
            failures.append(GenerationFailure(record.id, "description", type(exc).__name__, str(exc)))
            continue
        descriptions.append(Description(record.id, index, text, generator_model=model_name))
    return descriptions, failures


def _complete_nonempty(gateway: Gateway, request: ChatRequest, attempts: int) -> str:
    """Retry at the content level: a new cache salt forces a fresh completion
    instead of replaying the cached empty reply."""
    for attempt in range(max(1, attempts)):
        salted = request if attempt == 0 else replace(request, cache_salt=f"retry-{attempt}")
        response = gateway.chat(salted)
        if response.text.strip():
            return response.text
    raise GenerationRejected(f"backend returned only empty replies after {attempts} attempt(s)")


def excerpt_at_sentence_boundary(body: str, limit: int = 2000) -> str:
    """Prefix of the body, at most limit characters, cut at the end of a
    sentence. Falls back to a whitespace cut when no sentence ends in range."""
    body = body.strip()
    if len(body) <= limit:
        return body
    window = body[:limit]
    end = -1
    for match in re.finditer(r"[.!?](?=\s)", window):
        end = match.end()
    if end > 0:
        return window[:end]
    space = window.rfind(" ")
    return window[:space] if space > 0 else window


def assemble_context(
    record: ImageRecord,
    description: Description,
    kb: KnowledgeBase,
    example_bank: dict[str, list[Conversation]],
    prompt_bank: dict[str, str],
    domain: str,
    excerpt_limit: int = 2000,
) -> GenerationContext:
    """Gather the four context elements for one record. The knowledge entry is
    keyed by the record's class label, so knowledge curation follows the
    dataset folder structure one to one."""
    knowledge = kb.lookup(domain, record.class_label)
    system_prompt = prompt_bank.get(domain)
    if not system_prompt:
        raise MissingDomainAssets(f"no system prompt for domain {domain!r}")
    examples = example_bank.get(domain)
    if not examples:
        raise MissingDomainAssets(f"no in-context examples for domain {domain!r}")
    return GenerationContext(
        record=record,
        description=description.text,
        knowledge_excerpt=excerpt_at_sentence_boundary(knowledge.body, excerpt_limit),
        in_context_examples=tuple(examples),
        system_prompt=system_prompt,
        domain=domain,
    )


_MARKER = re.compile(r"^\s*(question|answer)(?:\s+\d+)?\s*:\s*(.*)$", re.IGNORECASE)


def parse_llm_conversation(raw: str) -> list[Turn]:
    """Parse line-anchored "Question:"/"Answer:" markers into turns.

    Markers are case-insensitive and may carry a number ("Question 1:").
    Lines between markers belong to the preceding payload. Text before the
    first marker is ignored; missing markers, broken Q/A alternation, or an
    empty payload raise ParseError.
    """
    entries = []  # (kind, [payload lines])
    for line in raw.splitlines():
        match = _MARKER.match(line)
        if match:
            entries.append((match.group(1).lower(), [match.group(2)]))
        elif entries:
            entries[-1][1].append(line)
    if not entries:
        raise ParseError("no Question:/Answer: markers found")
    turns = []
    for index, (kind, lines) in enumerate(entries):
        expected = "question" if index % 2 == 0 else "answer"
        if kind != expected:
            raise ParseError(f"marker {index + 1} should be {expected!r}, found {kind!r}")
        payload = "\n".join(lines).strip()
        if not payload:
            raise ParseError(f"empty {kind} payload at marker {index + 1}")
        if index % 2 == 0:
            turns.append([payload, None])
        else:
            turns[-1][1] = payload
    if turns and turns[-1][1] is None:
        raise ParseError("final question has no answer")
    return [Turn(question=q, answer=a) for q, a in turns]


def serialize_conversation(turns: Iterable[Turn]) -> str:
    """Inverse of parse_llm_conversation. Payload lines that would themselves
    parse as markers are rejected to keep the round trip lossless."""
    lines = []
    for turn in turns:
        for payload in (turn.question, turn.answer):
            for line in payload.splitlines():
                if _MARKER.match(line):
                    raise ValueError(f"payload line would parse as a marker: {line!r}")
        lines.append(f"Question: {turn.question}")
        lines.append(f"Answer: {turn.answer}")
    return "\n".join(lines)


def render_example(conv: Conversation) -> str:
    return serialize_conversation(conv.turns)


def build_conversation_prompt(
    context: GenerationContext,
    backend_id: str = "",
    model_name: str = "",
    temperature: float = 0.7,
    max_tokens: int = 1024,
) -> ChatRequest:
    """Assemble the four context elements into a single generation request."""
    examples = "\n\n".join(render_example(example) for example in context.in_context_examples)
    prompt = (
        "Context about one agricultural image follows.\n\n"
        "Image attributes:\n"
        f"{attribute_block(context.record)}\n\n"
        "Image description:\n"
        f"{context.description}\n\n"
        "Background information:\n"
        f"{context.knowledge_excerpt}\n\n"
        "Example conversations:\n"
        f"{examples}\n\n"
        f"Write a conversation of {MIN_TURNS} to {MAX_TURNS} question-answer pairs between a "
        "farmer asking about this image and an agronomist answering. Stay grounded in the "
        "attributes, description, and background information above. Format every pair "
        "exactly as two lines starting with \"Question:\" and \"Answer:\"."
    )
    return ChatRequest(
        backend_id=backend_id,
        model_name=model_name,
        messages=(
            ChatMessage(role="system", text=context.system_prompt),
            ChatMessage(role="user", text=prompt),
        ),
        temperature=temperature,
        max_tokens=max_tokens,
    )


@dataclass
class ValidationReport:
    valid: bool
    problems: list[str] = field(default_factory=list)


def validate_conversation(
    conv: Conversation,
    context: GenerationContext,
    refusal_blocklist: Iterable[str] = (),
) -> ValidationReport:
    """Structural and grounding checks on a generated conversation: turn count
    in range, at least one identifying attribute value mentioned in the
    answers, and no refusal phrases."""
    problems = []
    if not MIN_TURNS <= len(conv.turns) <= MAX_TURNS:
        problems.append(f"turn-count: {len(conv.turns)} outside [{MIN_TURNS}, {MAX_TURNS}]")
    answers = " ".join(normalize_value(turn.answer) for turn in conv.turns)
    identifying = [
        normalize_value(value)
        for key, value in context.record.attributes.items()
        if key in IDENTIFYING_KEYS
    ]
    if not any(value in answers for value in identifying):
        problems.append("grounding: no identifying attribute value appears in the answers")
    for phrase in refusal_blocklist:
        if phrase.lower() in answers:
            problems.append(f"refusal: answer contains blocked phrase {phrase!r}")
    return ValidationReport(valid=not problems, problems=problems)


def generate_conversation(
    context: GenerationContext,
    gateway: Gateway,
    backend_id: str,
    refusal_blocklist: Iterable[str] = (),
    max_content_attempts: int = 3,
    temperature: float = 0.7,
) -> Conversation:
    """Call the language backend and parse its reply into a validated
    conversation, retrying with fresh cache salts on malformed output."""
    config = gateway.configs.get(backend_id)
    model_name = config.model_name if config else ""
    request = build_conversation_prompt(context, backend_id=backend_id, model_name=model_name, temperature=temperature)
    last_problem = ""
    for attempt in range(max(1, max_content_attempts)):
        salted = request if attempt == 0 else replace(request, cache_salt=f"retry-{attempt}")
        response = gateway.chat(salted)
        try:
            turns = parse_llm_conversation(response.text)
        except ParseError as exc:
            last_problem = str(exc)
            continue
        if not MIN_TURNS <= len(turns) <= MAX_TURNS:
            last_problem = f"turn-count: got {len(turns)}"
            continue
        conv = Conversation(image_id=context.record.id, kind="complex", turns=tuple(turns), generator_model=model_name)
        report = validate_conversation(conv, context, refusal_blocklist)
        if not report.valid:
            last_problem = "; ".join(report.problems)
            continue
        return conv
    raise GenerationRejected(
        f"no valid conversation for {context.record.id} after {max_content_attempts} attempt(s): {last_problem}"
    )


def generate_conversations(
    records: Iterable[ImageRecord],
    descriptions: dict[str, Description],
    kb: KnowledgeBase,
    example_bank: dict[str, list[Conversation]],
    prompt_bank: dict[str, str],
    domain_by_record: dict[str, str],
    gateway: Gateway,
    backend_id: str,
    refusal_blocklist: Iterable[str] = (),
    max_content_attempts: int = 3,
) -> tuple[list[Conversation], list[GenerationFailure]]:
    """Per-record conversation generation; failures are collected, not fatal.
    Output order follows the input record order."""
    conversations = []
    failures = []
    for record in records:
        description = descriptions.get(record.id)
        if description is None:
            failures.append(GenerationFailure(record.id, "conversation", "MissingDescription", "no description for record"))
            continue
        try:
            context = assemble_context(
                record, description, kb, example_bank, prompt_bank, domain_by_record[record.id]
            )
            conversations.append(
                generate_conversation(
                    context,
                    gateway,
                    backend_id,
                    refusal_blocklist=refusal_blocklist,
                    max_content_attempts=max_content_attempts,
                )
            )
        except Exception as exc:
            failures.append(GenerationFailure(record.id, "conversation", type(exc).__name__, str(exc)))
    return conversations, failures
