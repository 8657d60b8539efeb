"""Anonymized side-by-side preference study over answers from two models.

The store keeps every session and vote in append-only JSONL files (fsynced
before a vote is acknowledged) and rebuilds its state from them on startup,
so a process restart loses nothing. Clients only ever see slot labels A and B;
the slot-to-model mapping lives server-side and is a deterministic per-item
coin flip from the study's anonymize seed.
"""

import json
import os
import random
import threading
import time
import uuid
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

from .errors import AlreadyVoted, InvalidConfig, UnknownItem, UnknownSession

CHOICES = ("A", "B")


@dataclass(frozen=True)
class PoolItem:
    item_id: str
    image: str
    true_class: str
    question_id: str
    answers: dict[str, str]


@dataclass(frozen=True)
class StudyConfig:
    questions: dict[str, str]  # question_id -> text
    items: tuple[PoolItem, ...]
    model_pair: tuple[str, str]
    anonymize_seed: int | str

    def validate(self) -> None:
        if len(self.model_pair) != 2 or len(set(self.model_pair)) != 2:
            raise InvalidConfig("model_pair must name exactly two distinct models")
        if not self.questions:
            raise InvalidConfig("question bank must be non-empty")
        if not self.items:
            raise InvalidConfig("item pool must be non-empty")
        seen = set()
        for item in self.items:
            if item.item_id in seen:
                raise InvalidConfig(f"duplicate item_id {item.item_id!r}")
            seen.add(item.item_id)
            if item.question_id not in self.questions:
                raise InvalidConfig(f"item {item.item_id!r} references unknown question {item.question_id!r}")
            missing = [model for model in self.model_pair if not item.answers.get(model, "").strip()]
            if missing:
                raise InvalidConfig(f"item {item.item_id!r} is missing answers from: {', '.join(missing)}")

    @classmethod
    def from_dict(cls, data: dict) -> "StudyConfig":
        try:
            config = cls(
                questions=dict(data["questions"]),
                items=tuple(
                    PoolItem(
                        item_id=entry["item_id"],
                        image=entry.get("image", ""),
                        true_class=entry.get("true_class", ""),
                        question_id=entry["question_id"],
                        answers=dict(entry["answers"]),
                    )
                    for entry in data["items"]
                ),
                model_pair=tuple(data["model_pair"]),
                anonymize_seed=data.get("anonymize_seed", 0),
            )
        except (KeyError, TypeError) as exc:
            raise InvalidConfig(f"malformed study config: {exc}") from exc
        config.validate()
        return config

    def to_dict(self) -> dict:
        return {
            "questions": dict(self.questions),
            "items": [
                {
                    "item_id": item.item_id,
                    "image": item.image,
                    "true_class": item.true_class,
                    "question_id": item.question_id,
                    "answers": dict(item.answers),
                }
                for item in self.items
            ],
            "model_pair": list(self.model_pair),
            "anonymize_seed": self.anonymize_seed,
        }

    @classmethod
    def from_file(cls, path: str | Path) -> "StudyConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def slot_model(self, item_id: str, slot: str) -> str:
        """Deterministic per-item coin flip: which model sits in which slot."""
        flipped = random.Random(f"{self.anonymize_seed}|{item_id}").random() < 0.5
        first, second = self.model_pair
        slot_a = second if flipped else first
        slot_b = first if flipped else second
        return slot_a if slot == "A" else slot_b

    def item_order(self) -> list[str]:
        """Presentation order, identical for every session built from the same
        config and seed."""
        order = [item.item_id for item in self.items]
        random.Random(f"{self.anonymize_seed}|order").shuffle(order)
        return order


@dataclass
class Session:
    session_id: str
    config: StudyConfig
    order: list[str]
    votes: dict[str, str] = field(default_factory=dict)  # item_id -> choice

    @property
    def items_by_id(self) -> dict[str, PoolItem]:
        return {item.item_id: item for item in self.config.items}


class ExpertEvalStore:
    """Durable session and vote state under one data directory.

    Writes go to sessions.jsonl / votes.jsonl before any acknowledgement;
    construction replays both files so restarts resume mid-study.
    """

    def __init__(self, data_dir: str | Path, default_config: StudyConfig | None = None):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.sessions_path = self.data_dir / "sessions.jsonl"
        self.votes_path = self.data_dir / "votes.jsonl"
        self.default_config = default_config
        self.sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        self._replay()

    def _replay(self) -> None:
        if self.sessions_path.is_file():
            with self.sessions_path.open("r", encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if not line:
                        continue
                    record = json.loads(line)
                    config = StudyConfig.from_dict(record["config"])
                    self.sessions[record["session_id"]] = Session(
                        session_id=record["session_id"], config=config, order=config.item_order()
                    )
        if self.votes_path.is_file():
            with self.votes_path.open("r", encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if not line:
                        continue
                    record = json.loads(line)
                    session = self.sessions.get(record["session_id"])
                    if session is not None:
                        session.votes[record["item_id"]] = record["choice"]

    def _append(self, path: Path, record: dict) -> None:
        with path.open("a", encoding="utf-8") as handle:
            handle.write(json.dumps(record, ensure_ascii=False, sort_keys=True))
            handle.write("\n")
            handle.flush()
            os.fsync(handle.fileno())

    def create_session(self, config: StudyConfig | None = None) -> str:
        config = config or self.default_config
        if config is None:
            raise InvalidConfig("no study config provided and no default configured")
        config.validate()
        session_id = uuid.uuid4().hex[:12]
        with self._lock:
            # each session record snapshots its full config so the log alone
            # reconstructs every session after a restart
            self._append(
                self.sessions_path,
                {"session_id": session_id, "created_at": time.time(), "config": config.to_dict()},
            )
            self.sessions[session_id] = Session(session_id=session_id, config=config, order=config.item_order())
        return session_id

    def _session(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise UnknownSession(f"no session {session_id!r}")
        return session

    def progress(self, session_id: str) -> dict:
        session = self._session(session_id)
        return {"voted": len(session.votes), "total": len(session.order)}

    def next_item(self, session_id: str) -> dict:
        """The first unvoted item in session order, as a client-safe payload,
        or a done marker. Model identities never enter the payload."""
        session = self._session(session_id)
        progress = {"voted": len(session.votes), "total": len(session.order)}
        for item_id in session.order:
            if item_id in session.votes:
                continue
            item = session.items_by_id[item_id]
            return {
                "done": False,
                "item_id": item.item_id,
                "image": item.image,
                "true_class": item.true_class,
                "question": session.config.questions[item.question_id],
                "slot_a": item.answers[session.config.slot_model(item_id, "A")],
                "slot_b": item.answers[session.config.slot_model(item_id, "B")],
                "progress": progress,
            }
        return {"done": True, "progress": progress}

    def record_vote(self, session_id: str, item_id: str, choice: str) -> dict:
        """Persist one preference. Same-choice re-votes are idempotent;
        conflicting re-votes raise AlreadyVoted."""
        if choice not in CHOICES:
            raise InvalidConfig(f"choice must be one of {CHOICES}, got {choice!r}")
        with self._lock:
            session = self._session(session_id)
            if item_id not in session.items_by_id:
                raise UnknownItem(f"session {session_id!r} has no item {item_id!r}")
            existing = session.votes.get(item_id)
            if existing is not None:
                if existing == choice:
                    return {"progress": {"voted": len(session.votes), "total": len(session.order)}}
                raise AlreadyVoted(f"item {item_id!r} already voted {existing!r}")
            item = session.items_by_id[item_id]
            self._append(
                self.votes_path,
                {
                    "session_id": session_id,
                    "item_id": item_id,
                    "choice": choice,
                    "model_id": session.config.slot_model(item_id, choice),
                    "question_id": item.question_id,
                    "timestamp": time.time(),
                },
            )
            session.votes[item_id] = choice
            return {"progress": {"voted": len(session.votes), "total": len(session.order)}}

    def tally(self, session_ids: list[str] | None = None) -> dict:
        """Per-question preference percentages (integers, half-up) with raw
        counts, deanonymized through the stored slot mappings."""
        wanted = set(session_ids) if session_ids else None
        counts: dict[str, dict[str, int]] = {}
        for session in self.sessions.values():
            if wanted is not None and session.session_id not in wanted:
                continue
            for item_id, choice in session.votes.items():
                item = session.items_by_id[item_id]
                model = session.config.slot_model(item_id, choice)
                per_question = counts.setdefault(item.question_id, {})
                per_question[model] = per_question.get(model, 0) + 1
                for other in session.config.model_pair:
                    per_question.setdefault(other, 0)
        table = {}
        for question_id, per_model in sorted(counts.items()):
            total = sum(per_model.values())
            table[question_id] = {
                "total_votes": total,
                "models": {
                    model: {
                        "votes": votes,
                        "percent": int(
                            (Decimal(100 * votes) / Decimal(total)).quantize(Decimal("1"), rounding=ROUND_HALF_UP)
                        ),
                    }
                    for model, votes in sorted(per_model.items())
                },
            }
        return table


def create_app(store: ExpertEvalStore, static_dir: str | Path | None = None, images_root: str | Path | None = None):
    """FastAPI app over the store. Kept in a factory so tests can build one
    per temporary data directory."""
    from fastapi import FastAPI, Request
    from fastapi.responses import FileResponse, JSONResponse
    from fastapi.staticfiles import StaticFiles

    app = FastAPI(title="answer preference study")

    def error_response(exc: Exception, status: int) -> JSONResponse:
        name = getattr(exc, "name", type(exc).__name__)
        return JSONResponse(status_code=status, content={"error": name, "detail": str(exc)})

    @app.exception_handler(UnknownSession)
    async def _unknown_session(request: Request, exc: UnknownSession):
        return error_response(exc, 404)

    @app.exception_handler(UnknownItem)
    async def _unknown_item(request: Request, exc: UnknownItem):
        return error_response(exc, 404)

    @app.exception_handler(AlreadyVoted)
    async def _already_voted(request: Request, exc: AlreadyVoted):
        return error_response(exc, 409)

    @app.exception_handler(InvalidConfig)
    async def _invalid_config(request: Request, exc: InvalidConfig):
        return error_response(exc, 400)

    @app.post("/sessions")
    async def create_session(request: Request):
        body = await request.body()
        config = None
        if body:
            data = json.loads(body)
            if data:
                config = StudyConfig.from_dict(data)
        session_id = store.create_session(config)
        return {"session_id": session_id, "progress": store.progress(session_id)}

    @app.get("/sessions/{session_id}/next")
    def next_item(session_id: str):
        return store.next_item(session_id)

    @app.post("/sessions/{session_id}/votes")
    async def record_vote(session_id: str, request: Request):
        data = json.loads(await request.body())
        if "item_id" not in data or "choice" not in data:
            return error_response(InvalidConfig("vote needs item_id and choice"), 400)
        return store.record_vote(session_id, data["item_id"], data["choice"])

    @app.get("/tally")
    def tally(sessions: str = ""):
        ids = [part for part in sessions.split(",") if part] or None
        return store.tally(ids)

    if images_root is not None:
        images_root = Path(images_root).resolve()

        @app.get("/images/{image_path:path}")
        def image(image_path: str):
            full = (images_root / image_path).resolve()
            if not str(full).startswith(str(images_root) + os.sep) or not full.is_file():
                return JSONResponse(status_code=404, content={"error": "NotFound", "detail": image_path})
            return FileResponse(full)

    if static_dir is not None:
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
