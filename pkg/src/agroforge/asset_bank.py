"""Loaders for the packaged JSON assets (question banks, prompts, templates).

Every loader accepts an optional path override so a deployment can swap in
its own bank without touching the package.
"""

from __future__ import annotations

import json
from importlib.resources import files
from pathlib import Path

from .evals import EvalTask
from .simpleqa import QATemplate
from .synthesis import Conversation, DescriptionQuestionSet, Turn


def _load(name: str, override: str | Path | None = None):
    if override is not None:
        return json.loads(Path(override).read_text(encoding="utf-8"))
    return json.loads(files("agroforge.assets").joinpath(name).read_text(encoding="utf-8"))


def description_questions(path: str | Path | None = None) -> DescriptionQuestionSet:
    return DescriptionQuestionSet(questions=tuple(_load("description_questions.json", path)))


def system_prompts(path: str | Path | None = None) -> dict[str, str]:
    return dict(_load("system_prompts.json", path))


def incontext_examples(path: str | Path | None = None) -> dict[str, list[Conversation]]:
    banks = {}
    for domain, examples in _load("incontext_examples.json", path).items():
        banks[domain] = [
            Conversation(
                image_id=f"example/{domain}/{index}",
                kind="complex",
                turns=tuple(Turn(t["question"], t["answer"]) for t in example["turns"]),
            )
            for index, example in enumerate(examples)
        ]
    return banks


def simpleqa_templates(path: str | Path | None = None) -> list[QATemplate]:
    return [QATemplate.from_dict(entry) for entry in _load("simpleqa_templates.json", path)]


def corpus_system_messages(path: str | Path | None = None) -> dict[str, str]:
    return dict(_load("corpus_system_messages.json", path))


def refusal_blocklist(path: str | Path | None = None) -> list[str]:
    return list(_load("refusal_blocklist.json", path))


def eval_tasks(path: str | Path | None = None) -> list[EvalTask]:
    return [EvalTask.from_dict(entry) for entry in _load("eval_tasks.json", path)]


def expert_eval_questions(path: str | Path | None = None) -> dict[str, str]:
    return dict(_load("expert_eval_questions.json", path))
