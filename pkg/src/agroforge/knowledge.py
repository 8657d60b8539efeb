"""Curated class-specific background text, keyed by (domain, class name).

Knowledge files are plain text with a two-line header::

    class: fall armyworm
    sources: https://example.edu/a, https://example.edu/b

    body text ...

laid out as <root>/<domain>/<anything>.txt. Curation is manual; nothing is
scraped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import DuplicateEntry, KnowledgeMissing, MalformedEntry
from .ingest import DatasetCatalog


def normalize_class_name(name: str) -> str:
    """Lowercase, trim, strip underscores, collapse internal whitespace."""
    return " ".join(name.replace("_", " ").lower().split())


@dataclass(frozen=True)
class ClassKnowledge:
    domain: str
    class_name: str
    body: str
    source_urls: list[str] = field(default_factory=list)


class KnowledgeBase:
    def __init__(self, entries: dict[tuple[str, str], ClassKnowledge] | None = None):
        self._entries = dict(entries or {})

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: tuple[str, str]) -> bool:
        domain, class_name = key
        return (domain, normalize_class_name(class_name)) in self._entries

    def add(self, entry: ClassKnowledge) -> None:
        key = (entry.domain, entry.class_name)
        if key in self._entries:
            raise DuplicateEntry(f"duplicate knowledge entry for {key}")
        self._entries[key] = entry

    def lookup(self, domain: str, class_name: str) -> ClassKnowledge:
        key = (domain, normalize_class_name(class_name))
        try:
            return self._entries[key]
        except KeyError:
            raise KnowledgeMissing(f"no knowledge entry for domain={domain!r} class={class_name!r}") from None

    def classes_for_domain(self, domain: str) -> set[str]:
        return {cls for dom, cls in self._entries if dom == domain}


def _parse_knowledge_file(path: Path, domain: str) -> ClassKnowledge:
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    class_name = None
    sources: list[str] = []
    body_start = 0
    for index, line in enumerate(lines):
        stripped = line.strip()
        if not stripped:
            body_start = index + 1
            break
        lowered = stripped.lower()
        if lowered.startswith("class:"):
            class_name = stripped[len("class:"):].strip()
        elif lowered.startswith("sources:"):
            raw = stripped[len("sources:"):].strip()
            sources = [u.strip() for u in raw.split(",") if u.strip()]
        else:
            raise MalformedEntry(f"{path}: unexpected header line {stripped!r}")
        body_start = index + 1
    if not class_name:
        raise MalformedEntry(f"{path}: missing 'class:' header")
    body = "\n".join(lines[body_start:]).strip()
    if not body:
        raise MalformedEntry(f"{path}: empty body")
    return ClassKnowledge(
        domain=domain,
        class_name=normalize_class_name(class_name),
        body=body,
        source_urls=sources,
    )


def load_knowledge(root_path: str | Path) -> KnowledgeBase:
    """Load every <domain>/<file>.txt under root_path.

    Malformed files are reported together in one MalformedEntry rather than
    silently skipped; duplicate (domain, class) pairs raise DuplicateEntry.
    """
    root = Path(root_path)
    kb = KnowledgeBase()
    malformed: list[str] = []
    for domain_dir in sorted((d for d in root.iterdir() if d.is_dir()), key=lambda d: d.name):
        for path in sorted(domain_dir.glob("*.txt"), key=lambda p: p.name):
            try:
                kb.add(_parse_knowledge_file(path, domain_dir.name))
            except MalformedEntry as exc:
                malformed.append(str(exc))
    if malformed:
        raise MalformedEntry("; ".join(malformed))
    return kb


@dataclass(frozen=True)
class DomainCoverage:
    domain: str
    covered: list[str]
    missing: list[str]

    @property
    def percent(self) -> float:
        total = len(self.covered) + len(self.missing)
        return 100.0 * len(self.covered) / total if total else 100.0


def coverage_report(kb: KnowledgeBase, catalogs: list[DatasetCatalog]) -> list[DomainCoverage]:
    """Per domain, which catalog classes have a knowledge entry and which do
    not. covered + missing always partitions the catalog class set."""
    classes_by_domain: dict[str, set[str]] = {}
    for catalog in catalogs:
        normalized = {normalize_class_name(name) for name in catalog.classes}
        classes_by_domain.setdefault(catalog.domain, set()).update(normalized)
    report = []
    for domain in sorted(classes_by_domain):
        known = kb.classes_for_domain(domain)
        wanted = classes_by_domain[domain]
        report.append(
            DomainCoverage(
                domain=domain,
                covered=sorted(wanted & known),
                missing=sorted(wanted - known),
            )
        )
    return report
