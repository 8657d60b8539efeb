"""Load vision-only classification datasets and derive per-image attributes.

A dataset on disk is one directory per class, image files inside. A manifest
names the dataset and its domain; an attribute schema maps class-folder names
to attribute maps. Images are never decoded here, only their paths are
carried.
"""

from __future__ import annotations

import json
import math
import random
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ClassTooSmall, DuplicateId, EmptyDataset, UnparseableLabel

DOMAINS = ("disease", "weed", "insect", "fruit")

ATTRIBUTE_KEYS = (
    "plant_name",
    "disease_name",
    "health_status",
    "insect_name",
    "fruit_name",
    "weed_name",
    "subject_kind",
)

# attributes that identify what the image shows (health_status and
# subject_kind alone do not)
IDENTIFYING_KEYS = ("plant_name", "disease_name", "insect_name", "fruit_name", "weed_name")

IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png", ".bmp", ".gif", ".webp", ".tif", ".tiff"}


def normalize_value(raw: str) -> str:
    """Normalize an attribute value: underscores to spaces, lowercase, single-spaced."""
    return " ".join(raw.replace("_", " ").lower().split())


def validate_attributes(attributes: dict[str, str]) -> None:
    """Raise ValueError if the attribute map violates record invariants."""
    for key in attributes:
        if key not in ATTRIBUTE_KEYS:
            raise ValueError(f"unknown attribute key: {key!r}")
    status = attributes.get("health_status")
    if status is not None and status not in ("healthy", "diseased"):
        raise ValueError(f"health_status must be healthy or diseased, got {status!r}")
    if "disease_name" in attributes and status != "diseased":
        raise ValueError("disease_name present requires health_status=diseased")
    if not any(key in attributes for key in IDENTIFYING_KEYS):
        raise ValueError("no identifying attribute present")
    for key, value in attributes.items():
        if not value:
            raise ValueError(f"empty value for attribute {key!r}")


@dataclass(frozen=True)
class ImageRecord:
    """One image with its dataset-derived attributes. The id is
    dataset_id/class/filename: stable across machines, no pixel hashing."""

    id: str
    relative_path: str
    class_label: str
    attributes: dict[str, str]


@dataclass(frozen=True)
class DatasetCatalog:
    dataset_id: str
    domain: str
    classes: list[str]
    records: list[ImageRecord]
    source_citation: str = ""

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f"domain must be one of {DOMAINS}, got {self.domain!r}")
        class_set = set(self.classes)
        for record in self.records:
            if record.class_label not in class_set:
                raise ValueError(f"record {record.id} has class {record.class_label!r} not in catalog classes")

    def records_by_class(self) -> dict[str, list[ImageRecord]]:
        grouped: dict[str, list[ImageRecord]] = {name: [] for name in self.classes}
        for record in self.records:
            grouped[record.class_label].append(record)
        return grouped

    def to_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "domain": self.domain,
            "source_citation": self.source_citation,
            "classes": list(self.classes),
            "records": [
                {
                    "id": r.id,
                    "relative_path": r.relative_path,
                    "class_label": r.class_label,
                    "attributes": dict(r.attributes),
                }
                for r in self.records
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetCatalog":
        records = [
            ImageRecord(
                id=r["id"],
                relative_path=r["relative_path"],
                class_label=r["class_label"],
                attributes=dict(r["attributes"]),
            )
            for r in data["records"]
        ]
        return cls(
            dataset_id=data["dataset_id"],
            domain=data["domain"],
            classes=list(data["classes"]),
            records=records,
            source_citation=data.get("source_citation", ""),
        )


def save_catalog(catalog: DatasetCatalog, path: str | Path) -> None:
    Path(path).write_text(json.dumps(catalog.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def load_catalog(path: str | Path) -> DatasetCatalog:
    return DatasetCatalog.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class SchemaRule:
    """One parsing rule: a regex over the raw class-folder name and attribute
    assignments whose values may reference named groups as {group}."""

    pattern: str
    attributes: dict[str, str]


@dataclass(frozen=True)
class AttributeSchema:
    domain: str
    rules: list[SchemaRule] = field(default_factory=list)
    overrides: dict[str, dict[str, str]] = field(default_factory=dict)
    synonyms: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "AttributeSchema":
        rules = [SchemaRule(pattern=r["pattern"], attributes=dict(r["attributes"])) for r in data.get("rules", [])]
        return cls(
            domain=data["domain"],
            rules=rules,
            overrides={k: dict(v) for k, v in data.get("overrides", {}).items()},
            synonyms=dict(data.get("synonyms", {})),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "AttributeSchema":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class DatasetManifest:
    """Dataset descriptor: {dataset_id, domain, root, schema_path, citation}."""

    dataset_id: str
    domain: str
    root: str
    schema_path: str
    citation: str = ""

    @classmethod
    def from_file(cls, path: str | Path) -> "DatasetManifest":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            dataset_id=data["dataset_id"],
            domain=data["domain"],
            root=data["root"],
            schema_path=data["schema_path"],
            citation=data.get("citation", ""),
        )


def extract_attributes(class_label: str, schema: AttributeSchema) -> dict[str, str]:
    """Map a class-folder name to an attribute map via the schema.

    Overrides win over rules; the first matching rule wins otherwise. Values
    are normalized (lowercased, underscores to spaces, single-spaced) and run
    through the synonym table. Raises UnparseableLabel when nothing covers
    the label or the result violates record invariants.
    """
    raw: dict[str, str] | None = None
    if class_label in schema.overrides:
        raw = schema.overrides[class_label]
    else:
        for rule in schema.rules:
            match = re.fullmatch(rule.pattern, class_label)
            if match is None:
                continue
            groups = match.groupdict()
            raw = {}
            for key, template in rule.attributes.items():
                try:
                    raw[key] = template.format(**groups)
                except (KeyError, IndexError) as exc:
                    raise UnparseableLabel(
                        f"rule {rule.pattern!r} references missing group in {template!r}: {exc}"
                    ) from exc
            break
    if raw is None:
        raise UnparseableLabel(f"label {class_label!r} matches no rule and has no override in domain {schema.domain!r}")

    attributes = {}
    for key, value in raw.items():
        normalized = normalize_value(value)
        attributes[key] = schema.synonyms.get(normalized, normalized)
    try:
        validate_attributes(attributes)
    except ValueError as exc:
        raise UnparseableLabel(f"label {class_label!r} parsed to invalid attributes: {exc}") from exc
    return attributes


def load_dataset(root_path: str | Path, manifest: DatasetManifest, schema: AttributeSchema) -> DatasetCatalog:
    """Walk one-directory-per-class layout under root_path into a catalog.

    Class list is the sorted subdirectory list; records are sorted by path
    within each class. Raises EmptyDataset when there are no class folders or
    no image files at all.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise EmptyDataset(f"dataset root is not a directory: {root}")
    class_dirs = sorted((d for d in root.iterdir() if d.is_dir()), key=lambda d: d.name)
    if not class_dirs:
        raise EmptyDataset(f"no class folders under {root}")

    records: list[ImageRecord] = []
    seen_ids: set[str] = set()
    for class_dir in class_dirs:
        attributes = extract_attributes(class_dir.name, schema)
        for image in sorted(class_dir.iterdir(), key=lambda p: p.name):
            if image.suffix.lower() not in IMAGE_EXTENSIONS or not image.is_file():
                continue
            record_id = f"{manifest.dataset_id}/{class_dir.name}/{image.name}"
            if record_id in seen_ids:
                raise DuplicateId(f"duplicate record id: {record_id}")
            seen_ids.add(record_id)
            records.append(
                ImageRecord(
                    id=record_id,
                    relative_path=f"{class_dir.name}/{image.name}",
                    class_label=class_dir.name,
                    attributes=attributes,
                )
            )
    if not records:
        raise EmptyDataset(f"no image files under {root}")
    return DatasetCatalog(
        dataset_id=manifest.dataset_id,
        domain=manifest.domain,
        classes=[d.name for d in class_dirs],
        records=records,
        source_citation=manifest.citation,
    )


def _holdout_count(class_size: int, fraction: float) -> int:
    # round-half-up; at least one record per class goes to the holdout
    return max(1, math.floor(fraction * class_size + 0.5))


def split_holdout(
    catalog: DatasetCatalog, holdout_fraction: float, seed: int
) -> tuple[DatasetCatalog, DatasetCatalog]:
    """Deterministic stratified split: per-class holdout count is
    round(fraction * class size), minimum 1. Pure function of
    (catalog, fraction, seed)."""
    if not 0 < holdout_fraction < 1:
        raise ValueError(f"holdout_fraction must be in (0, 1), got {holdout_fraction}")
    grouped = catalog.records_by_class()
    for name, group in grouped.items():
        if len(group) < 2:
            raise ClassTooSmall(f"class {name!r} has {len(group)} record(s), need at least 2 to split")

    train: list[ImageRecord] = []
    holdout: list[ImageRecord] = []
    for name in sorted(grouped):
        group = grouped[name]
        count = _holdout_count(len(group), holdout_fraction)
        rng = random.Random(f"{seed}|{catalog.dataset_id}|{name}")
        chosen = set(rng.sample(range(len(group)), count))
        for index, record in enumerate(group):
            (holdout if index in chosen else train).append(record)

    by_id = {record.id: position for position, record in enumerate(catalog.records)}
    train.sort(key=lambda r: by_id[r.id])
    holdout.sort(key=lambda r: by_id[r.id])
    make = lambda records: DatasetCatalog(
        dataset_id=catalog.dataset_id,
        domain=catalog.domain,
        classes=list(catalog.classes),
        records=records,
        source_citation=catalog.source_citation,
    )
    return make(train), make(holdout)
