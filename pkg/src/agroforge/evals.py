"""Six-task VQA evaluation: set construction from holdout splits, model
runs through the gateway, deterministic grading, and grouped accuracy tables.

Grading never consults a model: both sides are normalized (lowercase, strip
punctuation, collapse whitespace, drop leading articles), yes/no predictions
are resolved from the first clause via a small lexicon, and open answers are
matched by normalized equality (strict) or a whole-word containment run.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal

from .errors import MismatchedTasks, UnbuildableTask
from .gateway import ChatMessage, ChatRequest, Gateway
from .ingest import DatasetCatalog

GROUPS = {
    "disease_presence": 1,
    "insect_presence": 1,
    "plant_name": 2,
    "fruit_name": 2,
    "disease_id": 3,
    "insect_id": 3,
}
TASK_IDS = tuple(GROUPS)
YES_WORDS = frozenset({"yes", "yeah", "yep", "yup", "indeed", "affirmative", "certainly", "definitely"})
NO_WORDS = frozenset({"no", "nope", "not", "negative"})
ARTICLES = ("a", "an", "the")


@dataclass(frozen=True)
class EvalTask:
    task_id: str
    answer_mode: str  # yes_no | open_short
    prompt_template: str

    def __post_init__(self):
        if self.task_id not in GROUPS:
            raise ValueError(f"unknown task_id {self.task_id!r}")
        if self.answer_mode not in ("yes_no", "open_short"):
            raise ValueError(f"unknown answer_mode {self.answer_mode!r}")

    @property
    def group(self) -> int:
        return GROUPS[self.task_id]

    @classmethod
    def from_dict(cls, data: dict) -> "EvalTask":
        return cls(task_id=data["task_id"], answer_mode=data["answer_mode"], prompt_template=data["prompt_template"])


@dataclass(frozen=True)
class EvalItem:
    item_id: str
    image: str
    task_id: str
    question: str
    gold: str

    def __post_init__(self):
        if self.task_id in ("disease_presence", "insect_presence") and self.gold not in ("yes", "no"):
            raise ValueError(f"yes/no item {self.item_id} has gold {self.gold!r}")

    @property
    def group(self) -> int:
        return GROUPS[self.task_id]

    def to_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "image": self.image,
            "task": self.task_id,
            "group": self.group,
            "question": self.question,
            "gold": self.gold,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalItem":
        return cls(
            item_id=data["item_id"],
            image=data["image"],
            task_id=data["task"],
            question=data["question"],
            gold=data["gold"],
        )


def normalize_text(text: str) -> str:
    """Shared normal form for golds and predictions: lowercase, punctuation
    stripped, whitespace collapsed, leading articles dropped."""
    tokens = re.findall(r"[a-z0-9]+", text.lower())
    while tokens and tokens[0] in ARTICLES:
        tokens = tokens[1:]
    return " ".join(tokens)


def _gold_attribute(task_id: str) -> str:
    return {
        "plant_name": "plant_name",
        "fruit_name": "fruit_name",
        "disease_id": "disease_name",
        "insect_id": "insect_name",
    }[task_id]


def _records_with(catalogs: list[DatasetCatalog], predicate) -> list[tuple[str, dict]]:
    """(record id, attributes) pairs across catalogs, in catalog order."""
    found = []
    for catalog in catalogs:
        for record in catalog.records:
            if predicate(catalog, record):
                found.append((record.id, record.attributes))
    return found


def build_eval_set(
    catalogs: list[DatasetCatalog],
    tasks: list[EvalTask],
    per_task_cap: int,
    seed: int | str,
) -> list[EvalItem]:
    """Sample items per task from holdout catalogs, deterministically.

    Presence tasks are balanced: equal yes/no counts (odd caps give the extra
    item to yes). Open tasks read their gold from the record attribute and
    only use records that carry it.
    """
    if per_task_cap < 1:
        raise ValueError(f"per_task_cap must be >= 1, got {per_task_cap}")
    items = []
    for task in tasks:
        rng = random.Random(f"{seed}|{task.task_id}")
        if task.answer_mode == "yes_no":
            items.extend(_build_presence_items(catalogs, task, per_task_cap, rng))
        else:
            items.extend(_build_open_items(catalogs, task, per_task_cap, rng))
    return items


def _build_presence_items(catalogs, task: EvalTask, cap: int, rng: random.Random) -> list[EvalItem]:
    if task.task_id == "disease_presence":
        yes_pool = _records_with(catalogs, lambda c, r: r.attributes.get("health_status") == "diseased")
        no_pool = _records_with(catalogs, lambda c, r: r.attributes.get("health_status") == "healthy")
    else:
        yes_pool = _records_with(catalogs, lambda c, r: c.domain == "insect")
        # negatives come from images of the non-insect domains
        no_pool = _records_with(catalogs, lambda c, r: c.domain != "insect")
    per_side = min(cap // 2, len(yes_pool), len(no_pool))
    if per_side == 0:
        raise UnbuildableTask(f"{task.task_id}: need at least one yes and one no record")
    yes_picks = [yes_pool[i] for i in sorted(rng.sample(range(len(yes_pool)), per_side))]
    no_picks = [no_pool[i] for i in sorted(rng.sample(range(len(no_pool)), per_side))]
    if cap % 2 == 1 and per_side == cap // 2 and len(yes_pool) > per_side:
        remaining = [i for i in range(len(yes_pool)) if yes_pool[i] not in yes_picks]
        yes_picks.append(yes_pool[rng.choice(remaining)])
    items = []
    for gold, picks in (("yes", yes_picks), ("no", no_picks)):
        for record_id, _ in picks:
            items.append(
                EvalItem(
                    item_id=f"{task.task_id}/{record_id}",
                    image=record_id,
                    task_id=task.task_id,
                    question=task.prompt_template,
                    gold=gold,
                )
            )
    return items


def _build_open_items(catalogs, task: EvalTask, cap: int, rng: random.Random) -> list[EvalItem]:
    attribute = _gold_attribute(task.task_id)
    pool = _records_with(catalogs, lambda c, r: attribute in r.attributes)
    if not pool:
        raise UnbuildableTask(f"{task.task_id}: no record carries {attribute!r}")
    count = min(cap, len(pool))
    picks = [pool[i] for i in sorted(rng.sample(range(len(pool)), count))]
    return [
        EvalItem(
            item_id=f"{task.task_id}/{record_id}",
            image=record_id,
            task_id=task.task_id,
            question=task.prompt_template,
            gold=normalize_text(attributes[attribute]),
        )
        for record_id, attributes in picks
    ]


@dataclass(frozen=True)
class Prediction:
    item_id: str
    raw_prediction: str
    failed: bool = False

    def to_dict(self) -> dict:
        return {"item_id": self.item_id, "raw_prediction": self.raw_prediction, "failed": self.failed}

    @classmethod
    def from_dict(cls, data: dict) -> "Prediction":
        return cls(item_id=data["item_id"], raw_prediction=data.get("raw_prediction", ""), failed=bool(data.get("failed", False)))


def run_eval(
    items: list[EvalItem],
    gateway: Gateway,
    backend_id: str,
    image_root=None,
    temperature: float = 0.0,
) -> list[Prediction]:
    """One prediction per item, raw text preserved verbatim. Failed calls
    yield empty predictions flagged failed so grading keeps the denominator."""
    if not items:
        return []
    config = gateway.configs[backend_id]
    requests_list = []
    for item in items:
        image = str(image_root / item.image) if image_root is not None else item.image
        requests_list.append(
            ChatRequest(
                backend_id=backend_id,
                model_name=config.model_name,
                messages=(ChatMessage(role="user", text=item.question, image=image),),
                temperature=temperature,
            )
        )
    results = gateway.chat_batch(requests_list, max_in_flight=config.max_in_flight)
    predictions = []
    for item, slot in zip(items, results):
        if slot.ok:
            predictions.append(Prediction(item_id=item.item_id, raw_prediction=slot.response.text))
        else:
            predictions.append(Prediction(item_id=item.item_id, raw_prediction="", failed=True))
    return predictions


def resolve_yes_no(raw_prediction: str) -> str | None:
    """Map free text onto yes/no by scanning the first clause left to right
    for a lexicon word. Unresolvable text returns None."""
    first_clause = re.split(r"[.,;:!?\n]", raw_prediction, maxsplit=1)[0]
    for token in re.findall(r"[a-z0-9]+", first_clause.lower()):
        if token in YES_WORDS:
            return "yes"
        if token in NO_WORDS:
            return "no"
    return None


def grade(raw_prediction: str, item: EvalItem, mode: str = "containment") -> bool:
    """Deterministic correctness check; see the module docstring for rules."""
    if mode not in ("strict", "containment"):
        raise ValueError(f"unknown grading mode {mode!r}")
    if item.task_id in ("disease_presence", "insect_presence"):
        return resolve_yes_no(raw_prediction) == item.gold
    prediction = normalize_text(raw_prediction)
    gold = normalize_text(item.gold)
    if mode == "strict":
        return prediction == gold
    gold_tokens = gold.split()
    prediction_tokens = prediction.split()
    if not gold_tokens:
        return False
    span = len(gold_tokens)
    return any(prediction_tokens[i : i + span] == gold_tokens for i in range(len(prediction_tokens) - span + 1))


@dataclass(frozen=True)
class TaskScore:
    correct: int
    total: int

    @property
    def accuracy(self) -> str:
        """Percent to two decimals, half-up, as the canonical rendering."""
        if self.total == 0:
            return "0.00"
        value = Decimal(100 * self.correct) / Decimal(self.total)
        return str(value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass
class GroupAccuracyTable:
    per_task: dict[str, TaskScore] = field(default_factory=dict)

    @property
    def per_group(self) -> dict[int, TaskScore]:
        groups: dict[int, TaskScore] = {}
        for task_id, score in self.per_task.items():
            group = GROUPS[task_id]
            prior = groups.get(group, TaskScore(0, 0))
            groups[group] = TaskScore(prior.correct + score.correct, prior.total + score.total)
        return dict(sorted(groups.items()))

    @classmethod
    def from_counts(cls, counts: dict[str, tuple[int, int]]) -> "GroupAccuracyTable":
        return cls(per_task={task: TaskScore(c, t) for task, (c, t) in counts.items()})

    def to_dict(self) -> dict:
        return {
            "per_task": {
                task: {"correct": s.correct, "total": s.total, "accuracy": s.accuracy}
                for task, s in sorted(self.per_task.items())
            },
            "per_group": {
                str(group): {"correct": s.correct, "total": s.total, "accuracy": s.accuracy}
                for group, s in self.per_group.items()
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GroupAccuracyTable":
        return cls(
            per_task={
                task: TaskScore(entry["correct"], entry["total"]) for task, entry in data["per_task"].items()
            }
        )


def aggregate(items: list[EvalItem], predictions: list[Prediction], mode: str = "containment") -> GroupAccuracyTable:
    """Score every item; failed or missing predictions count as incorrect so
    denominators stay comparable across models."""
    by_id = {prediction.item_id: prediction for prediction in predictions}
    correct = {}
    total = {}
    for item in items:
        total[item.task_id] = total.get(item.task_id, 0) + 1
        prediction = by_id.get(item.item_id)
        if prediction is None or prediction.failed:
            continue
        if grade(prediction.raw_prediction, item, mode):
            correct[item.task_id] = correct.get(item.task_id, 0) + 1
    return GroupAccuracyTable(
        per_task={task: TaskScore(correct.get(task, 0), count) for task, count in total.items()}
    )


def compare(tables: list[tuple[str, GroupAccuracyTable]]) -> str:
    """Aligned side-by-side report. All tables must score the same task set;
    columns after the first carry deltas against the first (baseline) table."""
    if not tables:
        raise MismatchedTasks("nothing to compare")
    baseline_name, baseline = tables[0]
    task_ids = [task for task in TASK_IDS if task in baseline.per_task]
    baseline_set = set(baseline.per_task)
    for name, table in tables[1:]:
        if set(table.per_task) != baseline_set:
            raise MismatchedTasks(f"table {name!r} scores different tasks than {baseline_name!r}")

    name_width = max(len("task"), max(len(task) for task in task_ids)) if task_ids else len("task")
    column_width = max(12, max(len(name) for name, _ in tables) + 2)
    header = f"{'task':<{name_width}}  {'group':>5}"
    for name, _ in tables:
        header += f"  {name:>{column_width}}"
    for name, _ in tables[1:]:
        header += f"  {'Δ ' + name:>{column_width}}"
    lines = [header, "-" * len(header)]
    for task_id in task_ids:
        row = f"{task_id:<{name_width}}  {GROUPS[task_id]:>5}"
        base_score = baseline.per_task[task_id]
        for _, table in tables:
            row += f"  {table.per_task[task_id].accuracy:>{column_width}}"
        for _, table in tables[1:]:
            delta = Decimal(table.per_task[task_id].accuracy) - Decimal(base_score.accuracy)
            row += f"  {f'{delta:+.2f}':>{column_width}}"
        lines.append(row)
    lines.append("-" * len(header))
    for group, score in baseline.per_group.items():
        row = f"{'group ' + str(group):<{name_width}}  {group:>5}"
        for _, table in tables:
            row += f"  {table.per_group[group].accuracy:>{column_width}}"
        for _, table in tables[1:]:
            delta = Decimal(table.per_group[group].accuracy) - Decimal(baseline.per_group[group].accuracy)
            row += f"  {f'{delta:+.2f}':>{column_width}}"
        lines.append(row)
    return "\n".join(lines)
